"""Generator Matching at desk scale.

Conditional probability paths, closed-form conditional generators that solve
the Kolmogorov forward equation, exact marginal generators over finite
datasets, generator combinators, a universal Euler sampler, Bregman training of
a small numpy network, and numerical oracles that check all of the above.
"""
from .errors import (
    ConfigError,
    ContractError,
    CoverageError,
    DivergenceError,
    DomainError,
    EmptyPosteriorError,
    GMError,
    InstabilityError,
    ShapeError,
    SingularityError,
    StepSizeError,
    UnsupportedError,
)
from .generators import (
    CondOTFlow,
    CondOTJump,
    CTMCMixture,
    DensityJump,
    GenOut,
    JumpAtoms,
    JumpBins,
    MixtureDiffusion,
    MixtureFlow,
    MixtureJump,
    ProductGenerator,
    Superposed,
    make_generator,
)
from .loss import Bregman, bregman_grad_pred, bregman_value, cgm_loss, product_sum
from .marginal import (
    ConditionalModel,
    MarginalModel,
    add_langevin,
    backward_flow,
    marginal_score,
    predictor_corrector,
    product_compose,
    superpose,
)
from .paths import Dataset, GeometricAverage, MixtureDiscrete, MixtureUniform, ProductPath, posterior_weights
from .schedule import LINEAR, Schedule
from .sim import SimConfig, SimResult, ctmc_step, euler_step, jump_survival, simulate
from .train import FieldNet, NetModel, TrainConfig, load_checkpoint, save_checkpoint, train_model
from .verify import (
    apply_generator,
    ctmc_oracle,
    energy_distance,
    gradient_equality_check,
    kfe_residual,
    kfe_suite,
    tv_hist,
)

__version__ = "0.1.0"
