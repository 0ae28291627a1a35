"""Distributional preference reward modelling at desk scale."""

from .errors import (
    ClientFailure,
    DimensionMismatch,
    DPRMError,
    EmptyBatch,
    EmptyDataset,
    EmptyGroup,
    EmptyResponse,
    InfeasibleInput,
    NegativeKL,
    NoConvergence,
    NotDegenerate,
    SupportMismatch,
    ValidationError,
)
from .preference import (
    CategorySchema,
    GroupPreference,
    PreferenceDistribution,
    UserPreference,
    aggregate,
    posterior_update,
    smooth_targeted,
    smooth_uniform,
)
from .transport import (
    CostMatrix,
    DualPotentials,
    TransportPlan,
    build_cost_matrix,
    ot_grad_source,
    solve_exact,
    solve_sinkhorn,
    w1_line_oracle,
    wasserstein_p,
)
from .reward import RewardSignal, expected_reward, ideal_distance, kl_divergence, total_reward
from .dprm import (
    DistHead,
    FeaturizerConfig,
    PreferenceRecord,
    TrainConfig,
    evaluate,
    featurize,
    loss_ce,
    loss_ot,
    loss_w,
    predict,
    train,
)
from .annotate import DatasetSpec, LatentQuality, Persona, SyntheticEnv, generate_dataset, make_env
from .align import Policy, PPOConfig, ppo_step, rollout, win_rate

__version__ = "0.1.0"
