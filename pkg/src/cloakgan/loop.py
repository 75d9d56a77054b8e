"""Generation loop: train GAN, harvest candidates, simulate the best, retrain.

Everything a generation produces lands in ``run_dir/gen_<k>/`` before the
GenerationRecord is written, and the record file doubles as the completeness
marker. Seeds are derived from (master seed, generation index), never from
live RNG state, so a killed run resumed at any generation boundary replays
the identical trajectory.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataset import DatasetRecord, read_dataset, write_dataset
from .errors import ConfigurationError, NumericalError, SolverError
from .gan import Discriminator, Generator, train_gan
from .geometry import annulus_mask, mirror_expand, random_shell, rasterize
from .solver import SourceSpec, compute_psi, solve_scattered
from .surrogate import ForwardNet, LabeledSample, train_forward

log = logging.getLogger(__name__)

CURVE_SCALE = 1.5            # ellipse semi-axis scale (um) for random shells
CURVE_COUNT_RANGE = (3, 10)  # inclusive bounds on blobs per random shell
STAGNATION_RTOL = 0.01       # relative improvement that still counts as progress
_PERSIST_EVERY = 25          # initial-build records between file rewrites

_NS_INIT = 0                 # seed namespaces, so streams never collide
_NS_GENERATION = 1


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    min_psi_r: float
    mean_psi_r: float        # both over the top_k candidates that got a solver value
    dataset_size: int
    alpha_f_psi_mean: float  # dataset mean scattering that set the adaptive weight
    new_records: int
    looked_up: int
    failed: int
    wall_time_s: float
    checkpoints: dict = field(default_factory=dict)

    def signature(self) -> dict:
        """Deterministic content, for comparing runs (wall time excluded)."""
        doc = dataclasses.asdict(self)
        doc.pop("wall_time_s")
        return doc


@dataclass
class LoopState:
    config: RunConfig
    run_dir: Path
    dataset: list[DatasetRecord]
    net: ForwardNet
    known: dict[bytes, float] = field(default_factory=dict)
    generator: Generator | None = None
    discriminator: Discriminator | None = None

    def __post_init__(self):
        if not self.known:
            self.known = {r.key(): r.psi_r for r in self.dataset}

    def append(self, records) -> None:
        self.dataset.extend(records)
        for r in records:
            self.known[r.key()] = r.psi_r


def _seeds(master: int, namespace: int, index: int, count: int) -> list[int]:
    state = np.random.SeedSequence((master, namespace, index)).generate_state(count)
    return [int(s) for s in state]


def _write_json(path, doc) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


def _solve_one(image, spec, grid_resolution, integration_radius) -> float:
    pmap = rasterize(mirror_expand(np.asarray(image, np.uint8)), spec, grid_resolution)
    sol = solve_scattered(pmap, SourceSpec())
    return compute_psi(sol, integration_radius).psi


def _collect(future, index, skip_failures):
    try:
        return float(future.result())
    except (SolverError, NumericalError) as exc:
        if not skip_failures:
            raise
        log.warning("candidate %d dropped, solver said: %s", index, exc)
        return None


def _simulate(images, cfg: RunConfig, skip_failures: bool) -> list[float | None]:
    """Solver value per image, in order; failures become None when skipping."""
    worker = partial(
        _solve_one,
        spec=cfg.domain,
        grid_resolution=cfg.grid_resolution,
        integration_radius=cfg.integration_radius,
    )
    if cfg.loop.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.loop.workers) as pool:
            pending = [pool.submit(worker, img) for img in images]
            return [_collect(p, i, skip_failures) for i, p in enumerate(pending)]
    out = []
    for i, img in enumerate(images):
        try:
            out.append(float(worker(img)))
        except (SolverError, NumericalError) as exc:
            if not skip_failures:
                raise
            log.warning("candidate %d dropped, solver said: %s", i, exc)
            out.append(None)
    return out


def _initial_image(cfg: RunConfig, k: int) -> np.ndarray:
    """Record k of the initial dataset. Record 0 is the bare-object anchor."""
    size = cfg.domain.image_size
    if k == 0:
        return np.zeros((size, size), dtype=np.uint8)
    rng = np.random.default_rng((cfg.seed, k))
    lo, hi = CURVE_COUNT_RANGE
    curve_count = int(rng.integers(lo, hi + 1))
    shell_seed = int(rng.integers(2**31))
    return random_shell(cfg.domain, shell_seed, curve_count, CURVE_SCALE)


def build_initial_dataset(cfg: RunConfig, path) -> list[DatasetRecord]:
    """Generate and simulate the starting dataset, resuming a partial file.

    The file is rewritten every few records, so a killed build loses at most
    that much work. An existing file is verified against the configured seed
    before being extended.
    """
    n = cfg.loop.initial_dataset_size
    records = read_dataset(path) if os.path.exists(path) else []
    if len(records) > n:
        raise ConfigurationError(
            f"{path} already holds {len(records)} records, config wants {n}"
        )
    for k, rec in enumerate(records):
        if rec.key() != _initial_image(cfg, k).tobytes():
            raise ConfigurationError(
                f"{path} record {k} does not match seed {cfg.seed}; "
                "it was built with different settings"
            )
    if len(records) == n:
        return records

    log.info("initial dataset: %d of %d records present", len(records), n)
    while len(records) < n:
        stop = min(len(records) + _PERSIST_EVERY, n)
        images = [_initial_image(cfg, k) for k in range(len(records), stop)]
        psis = _simulate(images, cfg, skip_failures=False)
        records.extend(
            DatasetRecord(image=img, psi_r=psi) for img, psi in zip(images, psis)
        )
        write_dataset(path, records)
        log.info("initial dataset: %d of %d simulated", len(records), n)
    return records


def _restore_params(params: dict, path) -> None:
    loaded, _ = load_checkpoint(path)
    if set(loaded) != set(params):
        raise ConfigurationError(f"{path} does not match the configured network")
    for name, tensor in params.items():
        if loaded[name].data.shape != tensor.data.shape:
            raise ConfigurationError(f"{path}: {name} has shape {loaded[name].data.shape}")
        tensor.data = loaded[name].data.astype(tensor.data.dtype)


def _dedup_harvest(harvest) -> list[tuple[np.ndarray, float]]:
    """Collapse bit-identical images, keeping first occurrence order."""
    seen = set()
    unique = []
    for image, psi_p in harvest:
        img = np.asarray(image, np.uint8)
        if img.tobytes() not in seen:
            seen.add(img.tobytes())
            unique.append((img, float(psi_p)))
    return unique


def _write_selection_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["psi_p", "psi_r", "status"])
        for psi_p, psi_r, status in rows:
            writer.writerow([repr(psi_p), repr(psi_r), status])


def run_generation(state: LoopState, generation: int) -> GenerationRecord:
    """One full cycle; mutates ``state`` and persists under ``gen_<k>/``.

    Candidates already in the dataset are looked up instead of re-simulated,
    and they do not re-enter the dataset. Individual solver failures drop the
    candidate with a warning; losing more than half of the fresh candidates
    aborts the generation.
    """
    cfg = state.config
    t0 = time.perf_counter()
    gen_dir = state.run_dir / f"gen_{generation:03d}"
    gen_dir.mkdir(parents=True, exist_ok=True)
    g_seed, d_seed, gan_seed, net_seed, retrain_seed = _seeds(
        cfg.seed, _NS_GENERATION, generation, 5
    )

    samples = [LabeledSample(image=r.image, psi_r=r.psi_r) for r in state.dataset]
    alpha_mean = float(np.mean([s.psi_r for s in samples]))

    if cfg.loop.reinit_gan or state.generator is None:
        state.generator = Generator(
            seed=g_seed, cfg=cfg.generator, mask=annulus_mask(cfg.domain)
        )
        state.discriminator = Discriminator(
            seed=d_seed, cfg=cfg.discriminator, image_size=cfg.domain.image_size
        )
    gan_cfg = dataclasses.replace(cfg.gan, epochs=cfg.loop.epochs_per_generation)
    log.info("generation %d: training GAN on %d records", generation, len(samples))
    _, harvest = train_gan(
        state.generator, state.discriminator, state.net, samples, gan_cfg,
        seed=gan_seed, history_path=gen_dir / "gan_losses.csv",
    )

    unique = _dedup_harvest(harvest)
    unique.sort(key=lambda item: item[1])
    selected = unique[: cfg.loop.top_k]
    new_entries = [(img, psi_p) for img, psi_p in selected
                   if img.tobytes() not in state.known]
    log.info(
        "generation %d: %d unique of %d harvested, %d new to simulate, %d known",
        generation, len(unique), len(harvest), len(new_entries),
        len(selected) - len(new_entries),
    )

    psis = _simulate([img for img, _ in new_entries], cfg, skip_failures=True)
    failed = sum(1 for p in psis if p is None)
    if 2 * failed > len(new_entries):
        raise SolverError(
            f"generation {generation}: {failed} of {len(new_entries)} "
            "candidate solves failed"
        )
    new_psi = {img.tobytes(): psi for (img, _), psi in zip(new_entries, psis)}

    fresh_records = []
    audit_rows = []
    kept_psi = []
    for img, psi_p in selected:
        key = img.tobytes()
        if key in state.known:
            psi_r = state.known[key]
            audit_rows.append((psi_p, psi_r, "known"))
        elif new_psi[key] is None:
            audit_rows.append((psi_p, float("nan"), "failed"))
            continue
        else:
            psi_r = new_psi[key]
            fresh_records.append(DatasetRecord(image=img, psi_r=psi_r, psi_p=psi_p))
            audit_rows.append((psi_p, psi_r, "new"))
        kept_psi.append(psi_r)

    state.append(fresh_records)
    write_dataset(gen_dir / "delta.clk", fresh_records)
    _write_selection_csv(gen_dir / "selected.csv", audit_rows)
    save_checkpoint(gen_dir / "generator.ckpt", state.generator.params)
    save_checkpoint(gen_dir / "discriminator.ckpt", state.discriminator.params)

    if cfg.loop.surrogate_warm_start:
        epochs = max(1, cfg.forward.epochs // 2)
    else:
        state.net = ForwardNet(seed=net_seed, image_size=cfg.domain.image_size)
        epochs = cfg.forward.epochs
    log.info("generation %d: retraining surrogate on %d records for %d epochs",
             generation, len(state.dataset), epochs)
    retrain = [LabeledSample(image=r.image, psi_r=r.psi_r) for r in state.dataset]
    train_forward(
        state.net, retrain, epochs=epochs, batch_size=cfg.forward.batch_size,
        lr=cfg.forward.lr, seed=retrain_seed, val_fraction=cfg.forward.val_fraction,
        history_path=gen_dir / "forward_losses.csv",
    )
    save_checkpoint(gen_dir / "surrogate.ckpt", state.net.params)

    from .plots import save_montage

    save_montage([img for img, _ in selected[:25]], gen_dir / "montage.png")

    prefix = f"gen_{generation:03d}"
    record = GenerationRecord(
        generation=generation,
        min_psi_r=float(min(kept_psi)),
        mean_psi_r=float(np.mean(kept_psi)),
        dataset_size=len(state.dataset),
        alpha_f_psi_mean=alpha_mean,
        new_records=len(fresh_records),
        looked_up=len(selected) - len(new_entries),
        failed=failed,
        wall_time_s=time.perf_counter() - t0,
        checkpoints={
            "generator": f"{prefix}/generator.ckpt",
            "discriminator": f"{prefix}/discriminator.ckpt",
            "surrogate": f"{prefix}/surrogate.ckpt",
            "delta": f"{prefix}/delta.clk",
        },
    )
    _write_json(gen_dir / "record.json", dataclasses.asdict(record))
    log.info(
        "generation %d: min %.4e, mean %.4e, dataset %d (+%d), %.1f s",
        generation, record.min_psi_r, record.mean_psi_r,
        record.dataset_size, record.new_records, record.wall_time_s,
    )
    return record


def _last_improvement(mins) -> int:
    """Index of the latest better-than-1%-relative drop in best-so-far."""
    best = math.inf
    last = -1
    for i, value in enumerate(mins):
        if value < best * (1 - STAGNATION_RTOL):
            last = i
        best = min(best, value)
    return last


def _load_completed(run_dir: Path):
    records = []
    while True:
        path = run_dir / f"gen_{len(records):03d}" / "record.json"
        if not path.exists():
            return records
        with open(path) as fh:
            records.append(GenerationRecord(**json.load(fh)))


def run_loop(config: RunConfig, run_dir) -> tuple[list[GenerationRecord], DatasetRecord]:
    """Full feedback loop; returns the generation history and the best design.

    ``run_dir`` that already holds a run continues it: completed generations
    are loaded from disk and the loop picks up at the first missing one. The
    stored configuration must match, which keeps a resumed trajectory
    identical to an uninterrupted one.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_doc = json.loads(json.dumps(dataclasses.asdict(config)))
    cfg_path = run_dir / "config.json"
    if cfg_path.exists():
        with open(cfg_path) as fh:
            if json.load(fh) != cfg_doc:
                raise ConfigurationError(
                    f"{cfg_path} holds a different configuration; "
                    "resume with the original one"
                )
    else:
        _write_json(cfg_path, cfg_doc)

    dataset = build_initial_dataset(config, run_dir / "initial.clk")
    init_net_seed, init_train_seed = _seeds(config.seed, _NS_INIT, 0, 2)
    net = ForwardNet(seed=init_net_seed, image_size=config.domain.image_size)
    init_ckpt = run_dir / "surrogate_init.ckpt"
    if init_ckpt.exists():
        _restore_params(net.params, init_ckpt)
    else:
        log.info("training initial surrogate on %d records for %d epochs",
                 len(dataset), config.forward.epochs)
        train_forward(
            net, [LabeledSample(image=r.image, psi_r=r.psi_r) for r in dataset],
            epochs=config.forward.epochs, batch_size=config.forward.batch_size,
            lr=config.forward.lr, seed=init_train_seed,
            val_fraction=config.forward.val_fraction,
            history_path=run_dir / "forward_init.csv",
        )
        save_checkpoint(init_ckpt, net.params)

    state = LoopState(config=config, run_dir=run_dir, dataset=dataset, net=net)
    records = _load_completed(run_dir)
    if records:
        log.info("resuming after %d completed generations", len(records))
        for rec in records:
            state.append(read_dataset(run_dir / rec.checkpoints["delta"]))
        _restore_params(state.net.params, run_dir / records[-1].checkpoints["surrogate"])
        if not config.loop.reinit_gan:
            last = records[-1]
            state.generator = Generator(
                seed=0, cfg=config.generator, mask=annulus_mask(config.domain)
            )
            state.discriminator = Discriminator(
                seed=0, cfg=config.discriminator,
                image_size=config.domain.image_size,
            )
            _restore_params(state.generator.params,
                            run_dir / last.checkpoints["generator"])
            _restore_params(state.discriminator.params,
                            run_dir / last.checkpoints["discriminator"])

    patience = config.loop.stagnation_patience
    while len(records) < config.loop.max_generations:
        mins = [r.min_psi_r for r in records]
        if records and len(records) - 1 - _last_improvement(mins) >= patience:
            log.info("stopping: no improvement over the last %d generations", patience)
            break
        records.append(run_generation(state, len(records)))
        best = min(state.dataset, key=lambda r: r.psi_r)
        write_dataset(run_dir / "best.clk", [best])

    best = min(state.dataset, key=lambda r: r.psi_r)
    write_dataset(run_dir / "best.clk", [best])
    return records, best
