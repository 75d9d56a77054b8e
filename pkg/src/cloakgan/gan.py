"""Adversarial generator/discriminator pair steered by the forward network.

The generator maps a 200-dim noise vector to a continuous image in (0, 1),
multiplies in the annulus mask so every candidate is geometrically valid,
and rounds to a binary quadrant with a straight-through gradient. Its loss
mixes the usual adversarial term with the frozen forward network's predicted
scattering, so training pushes samples toward both realism and low power.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (
    Adam,
    Tensor,
    bce_loss,
    conv2d,
    conv_transpose2d,
    dense,
    exp,
    he_uniform,
    leaky_relu,
    sigmoid,
    st_round,
    trunc_normal,
)
from .errors import ConfigurationError, ContractError, NumericalError
from .geometry import DomainSpec, annulus_mask
from .surrogate import ForwardNet, LabeledSample, predict_psi

LN10 = math.log(10.0)


@dataclass(frozen=True)
class GeneratorConfig:
    noise_dim: int = 200
    base_size: int = 4
    base_channels: int = 256
    channels: tuple = (256, 128, 64, 1)


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple = (32, 64, 128)


@dataclass(frozen=True)
class GanConfig:
    """Training weights and schedule for one adversarial run.

    ``alpha_f = None`` means adaptive: resolved once per call to
    :func:`train_gan` as 5 / mean(psi_r) over the current dataset.
    ``forward_loss_space`` selects what the mean in L_f averages:
    "transformed" uses the forward net's normalized log output directly,
    "raw" inverts the transform first so L_f carries watt-scale units.
    """

    alpha_g: float = 1.0
    alpha_d: float = 1.0
    alpha_f: float | None = None
    forward_loss_space: str = "transformed"
    batch_size: int = 64
    epochs: int = 60
    candidates_per_epoch: int = 256
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999


def set_trainable(params: dict, flag: bool) -> None:
    for t in params.values():
        t.requires_grad = flag


def _all_frozen(params: dict) -> bool:
    return not any(t.requires_grad for t in params.values())


class Generator:
    """Dense projection to a 4x4 base, then stride-2 transposed convolutions."""

    def __init__(self, seed: int = 0, cfg: GeneratorConfig = GeneratorConfig(),
                 mask: np.ndarray | None = None):
        self.cfg = cfg
        if mask is None:
            mask = annulus_mask(DomainSpec())
        self.image_size = cfg.base_size * 2 ** len(cfg.channels)
        if mask.shape != (self.image_size, self.image_size):
            raise ConfigurationError(
                f"mask shape {mask.shape} does not match generator output "
                f"{self.image_size}x{self.image_size}"
            )
        self.mask = Tensor(mask.astype(np.float32)[None, None])

        rng = np.random.default_rng(seed)
        flat = cfg.base_channels * cfg.base_size ** 2
        params: dict[str, Tensor] = {
            "project_w": Tensor(he_uniform(cfg.noise_dim, (cfg.noise_dim, flat), rng), requires_grad=True),
            "project_b": Tensor(np.zeros(flat, np.float32), requires_grad=True),
        }
        cin = cfg.base_channels
        for li, cout in enumerate(cfg.channels, start=1):
            # conv_transpose2d keeps the paired conv2d layout [out, in, kh, kw],
            # so the tconv input channel count sits in the first slot
            params[f"tconv{li}"] = Tensor(
                trunc_normal((cin, cout, 4, 4), 0.02, rng), requires_grad=True
            )
            cin = cout
        self.params = params

    def forward_graph(self, z: Tensor) -> tuple[Tensor, Tensor]:
        """Binary and pre-round [N, 1, S, S] tensors with gradients attached."""
        if z.data.ndim != 2 or z.shape[1] != self.cfg.noise_dim:
            raise ContractError(f"expected noise of shape [N, {self.cfg.noise_dim}]")
        n = z.shape[0]
        h = leaky_relu(dense(z, self.params["project_w"], self.params["project_b"]), 0.2)
        h = h.reshape((n, self.cfg.base_channels, self.cfg.base_size, self.cfg.base_size))
        last = len(self.cfg.channels)
        for li in range(1, last + 1):
            h = conv_transpose2d(h, self.params[f"tconv{li}"], stride=2, padding=1)
            h = sigmoid(h) if li == last else leaky_relu(h, 0.2)
        cont = h * self.mask
        return st_round(cont), cont

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if t.requires_grad}


class Discriminator:
    """Three stride-2 conv layers and a dense head, sigmoid probability out."""

    def __init__(self, seed: int = 0, cfg: DiscriminatorConfig = DiscriminatorConfig(),
                 image_size: int = 64):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.image_size = image_size
        params: dict[str, Tensor] = {}
        cin = 1
        for li, cout in enumerate(cfg.channels, start=1):
            params[f"conv{li}"] = Tensor(
                trunc_normal((cout, cin, 4, 4), 0.02, rng), requires_grad=True
            )
            cin = cout
        flat = cfg.channels[-1] * (image_size // 2 ** len(cfg.channels)) ** 2
        params["dense_w"] = Tensor(he_uniform(flat, (flat, 1), rng), requires_grad=True)
        params["dense_b"] = Tensor(np.zeros(1, np.float32), requires_grad=True)
        self.params = params
        self._flat = flat

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[2] != self.image_size:
            raise ContractError(f"expected [N, 1, {self.image_size}, {self.image_size}] input")
        h = x
        for li in range(1, len(self.cfg.channels) + 1):
            h = leaky_relu(conv2d(h, self.params[f"conv{li}"], stride=2, padding=1), 0.2)
        h = h.reshape((h.shape[0], self._flat))
        return sigmoid(dense(h, self.params["dense_w"], self.params["dense_b"]))

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if t.requires_grad}


def generate(gen: Generator, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample binary quadrants and their pre-round images from given noise.

    Pure with respect to the generator: parameters are temporarily frozen so
    no gradient graph is built. Returns ([N, S, S] binary, [N, S, S] continuous).
    """
    noise = np.asarray(noise, np.float32)
    was = {k: t.requires_grad for k, t in gen.params.items()}
    set_trainable(gen.params, False)
    try:
        binary, cont = gen.forward_graph(Tensor(noise))
    finally:
        for k, t in gen.params.items():
            t.requires_grad = was[k]
    return binary.data[:, 0].copy(), cont.data[:, 0].copy()


def discriminator_step(disc: Discriminator, real_batch: np.ndarray,
                       fake_batch: np.ndarray, opt: Adam,
                       alpha_d: float = 1.0) -> float:
    """One Adam update of the discriminator on a labeled real/fake pair.

    Returns L_d = bce(real, 1) + bce(fake, 0). ``alpha_d`` scales the update
    but not the reported value.
    """
    real = np.asarray(real_batch, np.float32)
    fake = np.asarray(fake_batch, np.float32)
    if real.shape != fake.shape:
        raise ContractError(f"real/fake batch shapes differ: {real.shape} vs {fake.shape}")
    loss = bce_loss(disc.forward(Tensor(real[:, None])), 1.0) \
        + bce_loss(disc.forward(Tensor(fake[:, None])), 0.0)
    scaled = loss * alpha_d if alpha_d != 1.0 else loss
    opt.zero_grad()
    scaled.backward()
    opt.step()
    return loss.item()


def generator_step(gen: Generator, disc: Discriminator, surrogate: ForwardNet,
                   noise: np.ndarray, config: GanConfig, opt: Adam):
    """One Adam update of the generator against frozen critic and forward net.

    Returns (L_t, L_g, L_f). The rounding node passes gradients through its
    sigmoid-bump surrogate derivative, so the forward-loss term can shape
    pixels even though the networks downstream only ever see {0, 1}.
    """
    if not _all_frozen(disc.params):
        raise ContractError("discriminator must be frozen during a generator step")
    if not _all_frozen(surrogate.params):
        raise ContractError("forward network must be frozen during a generator step")
    if config.alpha_f is None:
        raise ContractError("alpha_f is unresolved; train_gan resolves it per run")
    if config.forward_loss_space not in ("transformed", "raw"):
        raise ConfigurationError(
            f"forward_loss_space must be 'transformed' or 'raw', got {config.forward_loss_space!r}"
        )

    binary, _ = gen.forward_graph(Tensor(np.asarray(noise, np.float32)))
    l_g = bce_loss(disc.forward(binary), 1.0)
    y = surrogate.forward(binary)
    if config.forward_loss_space == "transformed":
        l_f = y.mean()
    else:
        mu, sig = surrogate.target_stats
        l_f = exp(y * (sig * LN10) + mu * LN10).mean()
    l_t = l_g * config.alpha_g + l_f * config.alpha_f
    opt.zero_grad()
    l_t.backward()
    opt.step()
    return l_t.item(), l_g.item(), l_f.item()


def _saturation_probe(disc: Discriminator, real: np.ndarray, fake: np.ndarray) -> bool:
    """True when every probe output sits at the bce clamp boundary."""
    pr = disc.forward(Tensor(np.asarray(real, np.float32)[:, None])).data
    pf = disc.forward(Tensor(np.asarray(fake, np.float32)[:, None])).data
    return bool(pr.min() > 1.0 - 1e-7 and pf.max() < 1e-7)


def train_gan(gen: Generator, disc: Discriminator, surrogate: ForwardNet,
              dataset: list[LabeledSample], config: GanConfig,
              seed: int = 0, history_path=None):
    """Alternating 1:1 adversarial training with a per-epoch candidate harvest.

    Every epoch ends with ``candidates_per_epoch`` fresh samples scored by
    the frozen forward network; the harvest therefore spans the whole
    training trajectory, not just the final generator. Returns
    (history rows (epoch, L_d, L_g, L_f, L_t), harvest [(image, psi_p)]).
    Raises on non-finite losses rather than training through them.
    """
    if not dataset:
        raise ConfigurationError("gan training dataset is empty")
    if config.alpha_f is None:
        psi_mean = float(np.mean([s.psi_r for s in dataset]))
        if not np.isfinite(psi_mean) or psi_mean <= 0:
            raise ContractError("dataset psi_r mean must be positive to resolve alpha_f")
        config = replace(config, alpha_f=5.0 / psi_mean)

    images = np.stack([np.asarray(s.image, np.float32) for s in dataset])
    rng = np.random.default_rng(seed)
    opt_g = Adam(gen.trainable(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_d = Adam(disc.trainable(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    noise_dim = gen.cfg.noise_dim

    surro_was = {k: t.requires_grad for k, t in surrogate.params.items()}
    set_trainable(surrogate.params, False)
    history = []
    harvest = []
    saturated_run = 0
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(images))
            sums = np.zeros(4)
            count = 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                real = images[idx]
                fake, _ = generate(gen, rng.standard_normal((len(idx), noise_dim)))
                l_d = discriminator_step(disc, real, fake, opt_d, config.alpha_d)

                set_trainable(disc.params, False)
                try:
                    l_t, l_g, l_f = generator_step(
                        gen, disc, surrogate,
                        rng.standard_normal((len(idx), noise_dim)), config, opt_g,
                    )
                finally:
                    set_trainable(disc.params, True)

                if not all(map(math.isfinite, (l_d, l_t, l_g, l_f))):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch} batch {start // config.batch_size}: "
                        f"L_d={l_d} L_g={l_g} L_f={l_f} L_t={l_t}"
                    )
                sums += np.array([l_d, l_g, l_f, l_t]) * len(idx)
                count += len(idx)

            cand_noise = rng.standard_normal((config.candidates_per_epoch, noise_dim))
            cand, _ = generate(gen, cand_noise)
            psi_p = predict_psi(surrogate, cand)
            harvest.extend((cand[i], float(psi_p[i])) for i in range(len(cand)))

            if _saturation_probe(disc, real, fake):
                saturated_run += 1
                if saturated_run == 10:
                    warnings.warn(
                        "discriminator has been saturated for 10 consecutive epochs; "
                        "the adversarial signal has collapsed",
                        RuntimeWarning,
                    )
            else:
                saturated_run = 0

            l_d, l_g, l_f, l_t = sums / count
            history.append((epoch, l_d, l_g, l_f, l_t))
    finally:
        for k, t in surrogate.params.items():
            t.requires_grad = surro_was[k]

    if history_path is not None:
        with open(history_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "l_d", "l_g", "l_f", "l_t"])
            writer.writerows(history)
    return history, harvest
