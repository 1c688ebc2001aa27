"""Command-line entry point.

    latentleak <prepare|attack|evaluate|experiment|demo> [--config=FILE] [--key=value ...]

Every artifact lands in ``out_dir``: checkpoints (``autoencoder.llae``,
``model.llgm``), JSON reports, PGM/PPM montages and ``artifacts.npz`` with the
raw arrays ``evaluate`` needs.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, report
from .attack import (AttackPlan, Prepared, ReconstructionReport, attack_batch, match_and_rate,
                     prepare, psnr_matrix, run_experiment, sample_batch)
from .autoencoder import TrainConfig, decode, encode
from .config import RunConfig, dump_config, load_config
from .data import Dataset, filter_classes, load_csv, load_idx, synth_shapes
from .fedsim import DpConfig
from .imageio import montage, write_image
from .models import ArchSpec, build_global_model
from .rng import STREAM_CLIENT, SeededRng

SUBCOMMANDS = ("prepare", "attack", "evaluate", "experiment", "demo")

AE_FILE = "autoencoder.llae"
MODEL_FILE = "model.llgm"
ARTIFACTS = "artifacts.npz"


class CliError(Exception):
    pass


def _need(path: str, what: str) -> Path:
    if not path:
        raise CliError(f"{what} is not set")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _load(cfg: RunConfig, role: str) -> Dataset:
    if cfg.data == "synth":
        n, seed = (cfg.aux_size, cfg.aux_seed) if role == "aux" else (cfg.pool_size, cfg.pool_seed)
        ds = synth_shapes(n, cfg.synth_size, cfg.classes, seed)
    elif cfg.data == "idx":
        ds = load_idx(_need(getattr(cfg, f"{role}_images"), f"{role}_images"),
                      _need(getattr(cfg, f"{role}_labels"), f"{role}_labels"), cfg.classes)
    else:
        ds = load_csv(_need(getattr(cfg, f"{role}_csv"), f"{role}_csv"),
                      cfg.height, cfg.width, cfg.channels, cfg.classes)
    if role == "aux" and (cfg.aux_keep or cfg.aux_max_per_class):
        keep = cfg.aux_keep or range(cfg.classes)
        ds = filter_classes(ds, keep, cfg.aux_max_per_class or None)
    return ds


def _validate_inputs(cfg: RunConfig, roles) -> None:
    """Check every input path up front, before any work starts."""
    if cfg.data == "synth":
        return
    for role in roles:
        if cfg.data == "idx":
            _need(getattr(cfg, f"{role}_images"), f"{role}_images")
            _need(getattr(cfg, f"{role}_labels"), f"{role}_labels")
        else:
            _need(getattr(cfg, f"{role}_csv"), f"{role}_csv")


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    if out.exists() and not out.is_dir():
        raise CliError(f"out_dir is not a directory: {out}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _arch(cfg: RunConfig, input_dim: int) -> ArchSpec:
    return ArchSpec(input_dim, cfg.hidden, cfg.d, cfg.k, cfg.o, cfg.classes)


def _plan(cfg: RunConfig, arch: ArchSpec, aux: Dataset | None) -> AttackPlan:
    train = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed, cfg.ae_mode, cfg.beta,
                        cfg.warmup, cfg.optimizer)
    dp = DpConfig(cfg.clip_norm, cfg.noise_multiplier, cfg.dp)
    return AttackPlan(arch, aux, train, cfg.w2_row_value, cfg.mode, dp, cfg.seed, cfg.clients,
                      cfg.local_iters, cfg.local_lr, cfg.secure, cfg.th, cfg.matching)


def _load_prepared(cfg: RunConfig, input_dim: int) -> tuple[AttackPlan, Prepared]:
    out = Path(cfg.out_dir)
    model = checkpoint.load_model(_need(str(out / MODEL_FILE), "model checkpoint"))
    pair = checkpoint.load_autoencoder(_need(str(out / AE_FILE), "autoencoder checkpoint"))
    arch = _arch(cfg, input_dim)
    expected = build_global_model(arch, SeededRng(0)).shapes()
    if model.shapes() != expected:
        raise CliError("model checkpoint does not match the configured architecture and data")
    return _plan(cfg, arch, None), Prepared(model, pair)


def _save_montage(path: Path, flat: np.ndarray, shape) -> None:
    if len(flat) == 0:
        return
    write_image(path, montage(np.clip(flat, 0, 1).reshape(-1, *shape)))


def _print_table(table: dict) -> None:
    print(f"{'m':>6} {'rate':>14} {'psnr (dB)':>16} {'time (s)':>10}")
    for r in table["summary"]:
        print(f"{r['m']:>6} {r['rate_mean']:>7.4f} ± {r['rate_std']:.4f} "
              f"{r['psnr_mean']:>8.3f} ± {r['psnr_std']:.3f} {r['time_mean']:>10.5f}")


def cmd_prepare(cfg: RunConfig) -> int:
    _validate_inputs(cfg, ("aux",))
    out = _out(cfg)
    aux = _load(cfg, "aux")
    plan = _plan(cfg, _arch(cfg, aux.input_dim), aux)
    prep = prepare(plan)
    checkpoint.save_autoencoder(out / AE_FILE, prep.autoencoder)
    checkpoint.save_model(out / MODEL_FILE, prep.model)
    x = aux.flat()
    round_trip = np.diag(psnr_matrix(x, decode(prep.autoencoder, encode(prep.autoencoder, x))))
    doc = {"config": cfg.echo(), "seed": cfg.seed, "aux_samples": len(aux),
           "final_loss": prep.history[-1], "aux_round_trip_psnr_mean": float(round_trip.mean())}
    report.write_report(out / "prepare.json", doc)
    print(f"prepared: {len(aux)} auxiliary samples, final loss {doc['final_loss']:.6f}, "
          f"round-trip PSNR {doc['aux_round_trip_psnr_mean']:.2f} dB")
    return 0


def cmd_attack(cfg: RunConfig) -> int:
    _validate_inputs(cfg, ("pool",))
    out = _out(cfg)
    pool = _load(cfg, "pool")
    plan, prep = _load_prepared(cfg, pool.input_dim)
    rng = SeededRng(cfg.seed).child(STREAM_CLIENT, cfg.m, 0)
    batch = sample_batch(pool, cfg.m, rng.child(0))
    rep = attack_batch(prep, plan, batch.images, batch.labels, rng.child(1))
    _save_montage(out / "originals.pgm" if pool.shape[2] == 1 else out / "originals.ppm",
                  batch.flat(), pool.shape)
    _save_montage(out / "recovered.pgm" if pool.shape[2] == 1 else out / "recovered.ppm",
                  rep.recovered_images, pool.shape)
    np.savez(out / ARTIFACTS, originals=batch.flat(), recovered=rep.recovered_images,
             bins=np.asarray(rep.recovered_bins, dtype=np.int64),
             statuses=np.asarray(rep.per_bin_status), shape=np.asarray(pool.shape), k=rep.k)
    report.write_report(out / "report.json", report.reconstruction_doc(rep, cfg.echo(), cfg.seed, cfg.timing))
    print(f"attack: m={rep.m} k={rep.k} recovered bins {len(rep.recovered_bins)} "
          f"rate {rep.rate:.4f} mean PSNR {rep.mean_psnr_success:.2f} dB")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    with np.load(_need(str(out / ARTIFACTS), "attack artifacts")) as art:
        originals, recovered, bins = art["originals"], art["recovered"], art["bins"]
        statuses, k = [str(s) for s in art["statuses"]], int(art["k"])
    res = match_and_rate(originals, recovered, cfg.th, bins, cfg.matching)
    rep = ReconstructionReport(recovered, statuses, res.matches, res.rate, res.mean_psnr_success,
                               0.0, len(originals), k)
    report.write_report(out / "evaluation.json", report.reconstruction_doc(rep, cfg.echo(), cfg.seed))
    print(f"evaluate: rate {rep.rate:.4f} at th={cfg.th} dB ({cfg.matching} matching), "
          f"mean PSNR {rep.mean_psnr_success:.2f} dB")
    return 0


def cmd_experiment(cfg: RunConfig) -> int:
    _validate_inputs(cfg, ("pool",))
    out = _out(cfg)
    pool = _load(cfg, "pool")
    plan, prep = _load_prepared(cfg, pool.input_dim)
    table = run_experiment(plan, prep, pool, cfg.batch_sizes, cfg.trials)
    report.write_report(out / "experiment.json", report.experiment_doc(table, cfg.echo(), cfg.seed, cfg.timing))
    _print_table(table)
    return 0


def cmd_demo(cfg: RunConfig) -> int:
    if cfg.data != "synth":
        raise CliError("demo runs on synthetic shapes; use prepare/experiment for file data")
    out = _out(cfg)
    aux, pool = _load(cfg, "aux"), _load(cfg, "pool")
    plan = _plan(cfg, _arch(cfg, aux.input_dim), aux)
    prep = prepare(plan)
    checkpoint.save_autoencoder(out / AE_FILE, prep.autoencoder)
    checkpoint.save_model(out / MODEL_FILE, prep.model)
    table = run_experiment(plan, prep, pool, cfg.batch_sizes, cfg.trials)
    report.write_report(out / "demo.json", report.experiment_doc(table, cfg.echo(), cfg.seed, cfg.timing))
    _print_table(table)
    return 0


COMMANDS = {"prepare": cmd_prepare, "attack": cmd_attack, "evaluate": cmd_evaluate,
            "experiment": cmd_experiment, "demo": cmd_demo}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="latentleak", allow_abbrev=False,
                                     description="Latent-space linear-leakage attack on a simulated "
                                                 "federated round with secure aggregation.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="key = value file; --key=value flags override it")
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, rest)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        return COMMANDS[args.subcommand](cfg)
    except (CliError, ValueError, OSError) as e:
        print(f"latentleak {args.subcommand}: error: {e}", file=sys.stderr)
        return 2
