"""Heavy-tailed multi-armed bandits: HTINF, OptTINF, AdaTINF and Ada2TINF."""

from .core import (AuditFailure, HeavyTailParams, InvalidInputError, NumericFailureError,
                   ProtocolError, RegretSeries, RoundRecord, SimplexPoint,
                   best_arm_in_hindsight, cumulative_regret, pseudo_regret)
from .envs import (EnvironmentSpec, LossDistribution, analytic_moment, make_bernoulli_heavy,
                   make_constrained_schedule, make_stochastic, sample_loss, shipped_instances,
                   truncated_mean, verify_heavy_tail, verify_truncated_nonnegative)
from .policies import HTINF, Ada2TINF, AdaTINF, OptTINF, TsallisINF
from .runner import (BoundReport, EpisodeTrace, ExperimentConfig, PolicySpec, audit_epochs,
                     bound_report, decompose_regret, run_episode, run_experiment)
from .tsallis import (FtrlProblem, bregman_divergence, conjugate_step, ftrl_argmin,
                      theta_alpha, tsallis_potential)

__version__ = "0.1.0"
