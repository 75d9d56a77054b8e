"""Command-line front end.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
runtime failures. Errors go to stderr as a single JSON object so wrapper
scripts can parse them.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, load_config
from .dataset import read_dataset
from .errors import ConfigurationError, ContractError, NumericalError, SolverError
from .geometry import DomainSpec, mirror_expand, rasterize
from .loop import _solve_one, build_initial_dataset, run_loop
from .solver import SourceSpec, analytic_pec_reference, baseline_psi, solve_scattered
from .surrogate import ForwardNet, LabeledSample, train_forward


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message)
        raise SystemExit(1)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _print_psi(label: str, value: float) -> None:
    print(f"{label} = {value:.6e} W/m")


def cmd_gen_dataset(args) -> int:
    cfg = _load_run_config(args)
    records = build_initial_dataset(cfg, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _load_run_config(args)
    src = SourceSpec()
    solver_value = baseline_psi(cfg.domain, src, cfg.grid_resolution,
                                cfg.integration_radius).psi
    analytic = analytic_pec_reference(cfg.domain, src)
    _print_psi("solver bare-object psi", solver_value)
    _print_psi("analytic reference", analytic)
    deviation = (solver_value - analytic) / analytic
    print(f"relative deviation = {deviation:+.4%} "
          f"at {cfg.grid_resolution:g} cells per wavelength")
    return 0


def _resolve_image(args) -> np.ndarray:
    """--image accepts a dataset record index or a dataset file path."""
    try:
        index = int(args.image)
    except ValueError:
        records = read_dataset(args.image)
        if not records:
            raise ConfigurationError(f"{args.image} holds no records")
        return records[0].image
    if not args.dataset:
        raise ConfigurationError("--image with an index needs --dataset")
    records = read_dataset(args.dataset)
    if not 0 <= index < len(records):
        raise ConfigurationError(
            f"index {index} out of range for {len(records)} records"
        )
    return records[index].image


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    image = _resolve_image(args)
    psi = _solve_one(image, cfg.domain, cfg.grid_resolution, cfg.integration_radius)
    bare = baseline_psi(cfg.domain, SourceSpec(), cfg.grid_resolution,
                        cfg.integration_radius).psi
    _print_psi("psi_r", psi)
    _print_psi("bare object", bare)
    print(f"cloaking ratio = {psi / bare:.6f}")
    return 0


def cmd_train_forward(args) -> int:
    cfg = _load_run_config(args)
    records = [r for r in read_dataset(args.dataset) if np.isfinite(r.psi_r)]
    if not records:
        raise ConfigurationError(f"{args.dataset} holds no labeled records")
    samples = [LabeledSample(image=r.image, psi_r=r.psi_r) for r in records]
    net = ForwardNet(seed=cfg.seed, image_size=cfg.domain.image_size)
    out = Path(args.out)
    history = train_forward(
        net, samples, epochs=cfg.forward.epochs, batch_size=cfg.forward.batch_size,
        lr=cfg.forward.lr, seed=cfg.seed, val_fraction=cfg.forward.val_fraction,
        history_path=out.with_name(out.stem + "_losses.csv"),
    )
    save_checkpoint(out, net.params)
    final = history[-1]
    print(f"trained on {len(samples)} records for {cfg.forward.epochs} epochs")
    print(f"final train mse = {final[1]:.6e}, val mse = {final[2]:.6e}")
    print(f"wrote {out}")
    return 0


def cmd_loop(args) -> int:
    cfg = _load_run_config(args)
    if args.resume:
        run_dir = Path(args.resume)
        if not run_dir.is_dir():
            raise ConfigurationError(f"{run_dir} is not a run directory")
    else:
        run_dir = Path(args.run_dir) if args.run_dir else \
            Path("run") / time.strftime("%Y%m%d-%H%M%S")
    records, best = run_loop(cfg, run_dir)
    bare = baseline_psi(cfg.domain, SourceSpec(), cfg.grid_resolution,
                        cfg.integration_radius).psi
    for rec in records:
        print(f"generation {rec.generation}: min psi_r {rec.min_psi_r:.4e}, "
              f"mean {rec.mean_psi_r:.4e}, dataset {rec.dataset_size}")
    _print_psi("best psi_r", best.psi_r)
    print(f"best cloaking ratio = {best.psi_r / bare:.6f}")
    print(f"run directory: {run_dir}")
    return 0


def _generation_dirs(run_dir: Path) -> list[Path]:
    dirs = []
    while True:
        candidate = run_dir / f"gen_{len(dirs):03d}"
        if not (candidate / "record.json").exists():
            return dirs
        dirs.append(candidate)


def _run_dataset(run_dir: Path):
    records = read_dataset(run_dir / "initial.clk")
    for gen_dir in _generation_dirs(run_dir):
        records += read_dataset(gen_dir / "delta.clk")
    return records


def cmd_plot(args) -> int:
    from . import plots

    run_dir = Path(args.run)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ConfigurationError(f"{run_dir} holds no config.json")
    with open(config_path) as fh:
        doc = json.load(fh)
    domain = DomainSpec(**doc["domain"])

    if args.kind == "fields":
        best = read_dataset(run_dir / "best.clk")[0]
        pmap = rasterize(mirror_expand(best.image), domain, doc["grid_resolution"])
        plots.save_fields(solve_scattered(pmap, SourceSpec()), args.out)
    elif args.kind == "losses":
        histories = []
        for gen_dir in _generation_dirs(run_dir):
            with open(gen_dir / "gan_losses.csv") as fh:
                rows = list(csv.reader(fh))
            histories.append([tuple(float(v) for v in row) for row in rows[1:]])
        plots.save_losses(histories, args.out)
    elif args.kind == "progress":
        records = []
        for gen_dir in _generation_dirs(run_dir):
            with open(gen_dir / "record.json") as fh:
                records.append(json.load(fh))
        bare = baseline_psi(domain, SourceSpec(), doc["grid_resolution"],
                            doc["integration_radius"]).psi
        plots.save_progress(records, args.out, baseline=bare)
    else:
        best = sorted(_run_dataset(run_dir), key=lambda r: r.psi_r)[:25]
        plots.save_montage([r.image for r in best], args.out)
    print(f"wrote {args.out}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="cloakgan",
                     description="Inverse design of a dielectric cloaking shell")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="TOML run configuration")
        if seed:
            p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("gen-dataset", help="build and simulate the initial dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("baseline", help="bare-object scattering vs the analytic value")
    common(p, seed=False)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("simulate", help="solve one design and print its ratio")
    common(p, seed=False)
    p.add_argument("--image", required=True,
                   help="dataset file (first record) or record index")
    p.add_argument("--dataset", help="dataset file the index points into")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-forward", help="train the scattering surrogate")
    common(p)
    p.add_argument("--dataset", required=True, help="labeled dataset file")
    p.add_argument("--out", default="forward.ckpt", help="checkpoint to write")
    p.set_defaults(func=cmd_train_forward)

    p = sub.add_parser("loop", help="run the full feedback loop")
    common(p)
    p.add_argument("--run-dir", help="directory for a fresh run")
    p.add_argument("--resume", help="existing run directory to continue")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("plot", help="render figures from a run directory")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--kind", required=True,
                   choices=("fields", "losses", "progress", "montage"))
    p.add_argument("--out", required=True, help="image file to write")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ContractError, FileNotFoundError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except (SolverError, NumericalError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 2
    except Exception as exc:   # anything unplanned still reports cleanly
        _emit_error(type(exc).__name__, str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
