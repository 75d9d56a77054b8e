"""Forward predictive network: quadrant image to scattering coefficient.

The network regresses a transformed target rather than raw power. Scattering
coefficients span orders of magnitude, so training fits log10(psi) normalized
to zero mean and unit variance over the dataset; prediction inverts the
transform. The normalization constants ride along with the weights so a saved
checkpoint stays self-contained.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Adam,
    Tensor,
    conv2d,
    dense,
    he_uniform,
    leaky_relu,
    mse_loss,
    trunc_normal,
)
from .errors import ConfigurationError, ContractError, NumericalError

CONV_CHANNELS = (16, 32, 64, 128)
HIDDEN_WIDTH = 128
PREDICT_CHUNK = 256


@dataclass(frozen=True)
class LabeledSample:
    """One training record: a binary quadrant and its simulated power.

    ``psi_log`` is the normalized log10 target. It is derived from ``psi_r``
    inside :func:`train_forward` (the normalization constants depend on the
    whole dataset), so records built upstream may leave it as NaN.
    """

    image: np.ndarray
    psi_r: float
    psi_log: float = float("nan")


class ForwardNet:
    """Four stride-2 conv layers and two dense layers, scalar output."""

    def __init__(self, seed: int = 0, image_size: int = 64):
        if image_size % 16 != 0:
            raise ConfigurationError(
                f"image_size {image_size} not divisible by the conv stack's total stride 16"
            )
        rng = np.random.default_rng(seed)
        self.image_size = image_size
        flat = CONV_CHANNELS[-1] * (image_size // 16) ** 2
        params: dict[str, Tensor] = {}
        cin = 1
        for li, cout in enumerate(CONV_CHANNELS, start=1):
            params[f"conv{li}"] = Tensor(
                trunc_normal((cout, cin, 4, 4), 0.02, rng), requires_grad=True
            )
            cin = cout
        params["dense1_w"] = Tensor(he_uniform(flat, (flat, HIDDEN_WIDTH), rng), requires_grad=True)
        params["dense1_b"] = Tensor(np.zeros(HIDDEN_WIDTH, np.float32), requires_grad=True)
        params["dense2_w"] = Tensor(he_uniform(HIDDEN_WIDTH, (HIDDEN_WIDTH, 1), rng), requires_grad=True)
        params["dense2_b"] = Tensor(np.zeros(1, np.float32), requires_grad=True)
        # carried in the checkpoint but never updated by the optimizer
        params["target_mu"] = Tensor(np.zeros(1, np.float32))
        params["target_sigma"] = Tensor(np.ones(1, np.float32))
        self.params = params

    def forward(self, x: Tensor) -> Tensor:
        """Transformed-space prediction for a [N, 1, S, S] batch."""
        if x.data.ndim != 4 or x.shape[2] != self.image_size:
            raise ContractError(f"expected [N, 1, {self.image_size}, {self.image_size}] input")
        h = x
        for li in range(1, len(CONV_CHANNELS) + 1):
            h = leaky_relu(conv2d(h, self.params[f"conv{li}"], stride=2, padding=1), 0.2)
        n = h.shape[0]
        h = h.reshape((n, h.shape[1] * h.shape[2] * h.shape[3]))
        h = leaky_relu(dense(h, self.params["dense1_w"], self.params["dense1_b"]), 0.2)
        return dense(h, self.params["dense2_w"], self.params["dense2_b"])

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if t.requires_grad}

    @property
    def target_stats(self) -> tuple[float, float]:
        return float(self.params["target_mu"].data[0]), float(self.params["target_sigma"].data[0])


def transform_psi(psi_r: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return (np.log10(psi_r) - mu) / sigma


def inverse_transform(y: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return 10.0 ** (np.asarray(y, np.float64) * sigma + mu)


def predict_psi(net: ForwardNet, image: np.ndarray):
    """Predicted scattering power for one quadrant or a stack of them.

    Accepts a single (S, S) image or an (N, S, S) batch and returns a float
    or an array to match. Output is always finite and positive because the
    network emits a log-space value that is exponentiated.
    """
    arr = np.asarray(image, dtype=np.float32)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    s = net.image_size
    if arr.ndim != 3 or arr.shape[1:] != (s, s):
        raise ContractError(f"expected quadrants of shape ({s}, {s}), got {arr.shape}")
    mu, sigma = net.target_stats
    preds = np.empty(arr.shape[0], np.float64)
    for start in range(0, arr.shape[0], PREDICT_CHUNK):
        chunk = arr[start : start + PREDICT_CHUNK, None]
        y = net.forward(Tensor(chunk)).data[:, 0]
        preds[start : start + PREDICT_CHUNK] = inverse_transform(y, mu, sigma)
    if not np.isfinite(preds).all():
        raise NumericalError("forward network produced a non-finite prediction")
    return float(preds[0]) if single else preds


def _epoch_mse(net: ForwardNet, images: np.ndarray, targets: np.ndarray,
               batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(images), batch_size):
        xb = Tensor(images[start : start + batch_size])
        yb = Tensor(targets[start : start + batch_size])
        loss = mse_loss(net.forward(xb), yb)
        total += loss.item() * (min(start + batch_size, len(images)) - start)
    return total / len(images)


def train_forward(net: ForwardNet, dataset: list[LabeledSample], epochs: int,
                  batch_size: int = 64, lr: float = 1e-4, seed: int = 0,
                  val_fraction: float = 0.1, history_path=None):
    """Fit the network with Adam on mean squared error in transformed space.

    A fixed fraction of the dataset is split off for validation before the
    first epoch; the split and every per-epoch shuffle derive from ``seed``,
    so two runs with the same arguments produce identical weights. Returns a
    list of (epoch, train_mse, val_mse) rows, optionally also written as CSV.
    """
    if not dataset:
        raise ConfigurationError("training dataset is empty")
    psi = np.array([s.psi_r for s in dataset], np.float64)
    if not np.isfinite(psi).all() or (psi <= 0).any():
        raise ContractError("every training sample needs a finite positive psi_r")

    logs = np.log10(psi)
    mu = float(logs.mean())
    sigma = float(logs.std())
    if sigma < 1e-12:
        sigma = 1.0
    net.params["target_mu"].data[:] = mu
    net.params["target_sigma"].data[:] = sigma

    images = np.stack([np.asarray(s.image, np.float32) for s in dataset])[:, None]
    targets = ((logs - mu) / sigma).astype(np.float32)[:, None]

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_val = min(int(round(val_fraction * len(dataset))), len(dataset) - 1)
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]

    opt = Adam(net.trainable(), lr=lr)
    history = []
    for epoch in range(epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss = mse_loss(net.forward(Tensor(images[idx])), Tensor(targets[idx]))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        train_mse = total / len(order)
        if n_val:
            val_mse = _epoch_mse(net, images[val_idx], targets[val_idx], batch_size)
        else:
            val_mse = float("nan")
        history.append((epoch, train_mse, val_mse))

    if history_path is not None:
        write_history_csv(history_path, history)
    return history


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "val_mse"])
        writer.writerows(history)
