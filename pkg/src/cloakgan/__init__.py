"""Inverse design of a 2D dielectric optical cloak with a surrogate-steered GAN."""

__version__ = "0.1.0"

from .config import ForwardTrainConfig, LoopConfig, RunConfig, load_config, parse_config
from .dataset import DatasetRecord, read_dataset, write_dataset
from .errors import ConfigurationError, ContractError, NumericalError, SolverError
from .gan import (
    Discriminator,
    DiscriminatorConfig,
    GanConfig,
    Generator,
    GeneratorConfig,
    train_gan,
)
from .geometry import DomainSpec, PermittivityMap, annulus_mask, mirror_expand, random_shell, rasterize
from .loop import GenerationRecord, build_initial_dataset, run_loop
from .solver import (
    FieldSolution,
    ScatteringResult,
    SourceSpec,
    analytic_pec_reference,
    baseline_psi,
    compute_psi,
    solve_scattered,
)
from .surrogate import ForwardNet, predict_psi, train_forward

__all__ = [
    "DomainSpec",
    "PermittivityMap",
    "SourceSpec",
    "FieldSolution",
    "ScatteringResult",
    "annulus_mask",
    "mirror_expand",
    "random_shell",
    "rasterize",
    "solve_scattered",
    "compute_psi",
    "analytic_pec_reference",
    "baseline_psi",
    "DatasetRecord",
    "read_dataset",
    "write_dataset",
    "RunConfig",
    "ForwardTrainConfig",
    "LoopConfig",
    "load_config",
    "parse_config",
    "ForwardNet",
    "train_forward",
    "predict_psi",
    "Generator",
    "GeneratorConfig",
    "Discriminator",
    "DiscriminatorConfig",
    "GanConfig",
    "train_gan",
    "GenerationRecord",
    "build_initial_dataset",
    "run_loop",
    "ConfigurationError",
    "ContractError",
    "SolverError",
    "NumericalError",
    "__version__",
]
