"""JSON reports with a fixed key order so that reruns diff cleanly."""
from __future__ import annotations

import json
from pathlib import Path

from .attack import ReconstructionReport


def reconstruction_doc(report: ReconstructionReport, config: dict, seed: int,
                       timing: bool = False) -> dict:
    """Report document; ``wall_time_seconds`` is null unless ``timing`` is set,
    which keeps reports of identical runs byte-identical."""
    return {
        "config": dict(config),
        "seed": int(seed),
        "m": int(report.m),
        "k": int(report.k),
        "rate": float(report.rate),
        "mean_psnr_success": float(report.mean_psnr_success),
        "wall_time_seconds": float(report.wall_time_seconds) if timing else None,
        "per_bin_status": list(report.per_bin_status),
        "matches": [[int(i), int(b), float(p)] for i, b, p in report.matches],
    }


def experiment_doc(table: dict, config: dict, seed: int, timing: bool = False) -> dict:
    def row(r: dict) -> dict:
        out = {k: v for k, v in r.items() if not k.startswith("time")}
        if timing:
            out.update({k: v for k, v in r.items() if k.startswith("time")})
        return out

    return {
        "config": dict(config),
        "seed": int(seed),
        "k": int(table["k"]),
        "trials": int(table["trials"]),
        "summary": [row(r) for r in table["summary"]],
        "rows": [row(r) for r in table["rows"]],
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_report(path, doc: dict) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
