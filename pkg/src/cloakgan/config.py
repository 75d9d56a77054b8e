"""Run configuration: one TOML document covering every tunable.

Parsing is strict. Unknown tables or keys fail loudly instead of being
ignored, because a silently dropped setting in a multi-hour run is far more
expensive than an upfront error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import ConfigurationError
from .gan import DiscriminatorConfig, GanConfig, GeneratorConfig
from .geometry import DomainSpec


@dataclass(frozen=True)
class ForwardTrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-4
    val_fraction: float = 0.1


@dataclass(frozen=True)
class LoopConfig:
    max_generations: int = 4
    epochs_per_generation: int = 60
    top_k: int = 50
    initial_dataset_size: int = 1000
    stagnation_patience: int = 2
    workers: int = 1
    surrogate_warm_start: bool = True
    reinit_gan: bool = True


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSpec = field(default_factory=DomainSpec)
    grid_resolution: float = 10.0
    integration_radius: float = 10.0
    forward: ForwardTrainConfig = field(default_factory=ForwardTrainConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    seed: int = 0


_SECTIONS = ("domain", "solver", "forward", "gan", "loop")
_SOLVER_KEYS = ("grid_resolution", "integration_radius")
_GAN_EXTRA = ("noise_dim", "generator_channels", "discriminator_channels")


def _take(table: dict, section: str, cls, extra=(), drop=frozenset()):
    allowed = {f.name for f in dataclasses.fields(cls)} - set(drop) if cls else set()
    allowed |= set(extra)
    unknown = set(table) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return table


def parse_config(doc: dict) -> RunConfig:
    """Build a validated RunConfig from a parsed TOML document."""
    unknown = set(doc) - {"seed"} - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections or keys: {sorted(unknown)}")

    domain_tbl = _take(doc.get("domain", {}), "domain", DomainSpec)
    solver_tbl = _take(doc.get("solver", {}), "solver", None, extra=_SOLVER_KEYS)
    forward_tbl = _take(doc.get("forward", {}), "forward", ForwardTrainConfig)
    # epochs is owned by loop.epochs_per_generation, so it is not accepted here
    gan_tbl = dict(_take(doc.get("gan", {}), "gan", GanConfig,
                         extra=_GAN_EXTRA, drop={"epochs"}))
    loop_tbl = _take(doc.get("loop", {}), "loop", LoopConfig)

    gen_kwargs = {}
    if "noise_dim" in gan_tbl:
        gen_kwargs["noise_dim"] = gan_tbl.pop("noise_dim")
    if "generator_channels" in gan_tbl:
        gen_kwargs["channels"] = tuple(gan_tbl.pop("generator_channels"))
    disc_kwargs = {}
    if "discriminator_channels" in gan_tbl:
        disc_kwargs["channels"] = tuple(gan_tbl.pop("discriminator_channels"))

    cfg = RunConfig(
        domain=DomainSpec(**domain_tbl),
        grid_resolution=float(solver_tbl.get("grid_resolution", 10.0)),
        integration_radius=float(solver_tbl.get("integration_radius", 10.0)),
        forward=ForwardTrainConfig(**forward_tbl),
        gan=GanConfig(**gan_tbl),
        generator=GeneratorConfig(**gen_kwargs),
        discriminator=DiscriminatorConfig(**disc_kwargs),
        loop=LoopConfig(**loop_tbl),
        seed=int(doc.get("seed", 0)),
    )
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid TOML: {exc}") from exc
    return parse_config(doc)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigurationError(message)


def _validate(cfg: RunConfig) -> None:
    d = cfg.domain   # radius ordering and permittivity bounds are checked by DomainSpec itself
    _require(d.wavelength > 0, "domain.wavelength must be positive")
    _require(d.image_size == 64, "image_size is fixed at 64 by the dataset record format")

    _require(cfg.grid_resolution > 0, "solver.grid_resolution must be positive")
    _require(d.r_shell < cfg.integration_radius <= d.r_domain,
             "solver.integration_radius must lie inside (r_shell, r_domain]")

    f = cfg.forward
    _require(f.epochs > 0 and f.batch_size > 0, "forward epochs and batch_size must be positive")
    _require(f.lr > 0, "forward.lr must be positive")
    _require(0 <= f.val_fraction < 1, "forward.val_fraction must be in [0, 1)")

    g = cfg.gan
    _require(g.alpha_g >= 0 and g.alpha_d >= 0, "gan alpha_g and alpha_d must be nonnegative")
    if g.alpha_f is not None:
        _require(g.alpha_f > 0, "gan.alpha_f must be positive when given (omit it for adaptive)")
    _require(g.forward_loss_space in ("transformed", "raw"),
             "gan.forward_loss_space must be 'transformed' or 'raw'")
    _require(g.batch_size > 0 and g.candidates_per_epoch > 0,
             "gan batch_size and candidates_per_epoch must be positive")
    _require(g.lr > 0, "gan.lr must be positive")
    _require(0 <= g.beta1 < 1 and 0 <= g.beta2 < 1, "gan Adam betas must be in [0, 1)")

    lp = cfg.loop
    for name in ("max_generations", "epochs_per_generation", "top_k",
                 "initial_dataset_size", "stagnation_patience", "workers"):
        _require(getattr(lp, name) > 0, f"loop.{name} must be positive")
    _require(lp.top_k <= lp.epochs_per_generation * g.candidates_per_epoch,
             "loop.top_k cannot exceed the per-generation harvest size")

    _require(cfg.generator.noise_dim > 0, "gan.noise_dim must be positive")
    size = cfg.generator.base_size * 2 ** len(cfg.generator.channels)
    _require(size == d.image_size,
             f"generator channels produce {size}x{size} images, domain expects {d.image_size}")
