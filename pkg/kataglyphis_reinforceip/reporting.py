"""Result files: JSON reports and plot-ready CSV tables.

Every file starts with a manifest (package version, sha256 hash of the
resolved configuration, seed). JSON reports carry it under the key
``manifest``; CSV files carry it as leading ``# key: value`` lines.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections.abc import Iterable, Sequence
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import TYPE_CHECKING

from loguru import logger

if TYPE_CHECKING:
    import numpy as np

    from .analysis import CiBand
    from .reinforce import SolveReport, TrainLog


DISTRIBUTION = "kataglyphis_reinforceip"
FLOAT_FORMAT = ".17g"


def package_version() -> str:
    """Installed version of the package, ``unknown`` when running from a checkout."""
    try:
        return version(DISTRIBUTION)
    except PackageNotFoundError:
        return "unknown"


def canonical_json(payload: object) -> str:
    """Key-sorted compact JSON used for hashing."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def make_manifest(config: dict[str, object], seed: int) -> dict[str, object]:
    """Manifest block of a run."""
    digest = hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()
    return {
        "version": package_version(),
        "config_hash": digest,
        "seed": seed,
        "config": config,
    }


def _band(band: CiBand) -> dict[str, object]:
    return {"lower": band.lower.tolist(), "upper": band.upper.tolist(), "level": band.level}


def report_payload(
    report: SolveReport,
    manifest: dict[str, object],
    *,
    include_ensemble: bool = False,
) -> dict[str, object]:
    """JSON-ready content of a solve report."""
    return {
        "manifest": manifest,
        "statistics": {
            "mean": report.mean.tolist(),
            "ci": _band(report.ci),
            "groups": [
                {
                    "size": group.size,
                    "mean": group.mean.tolist(),
                    "ci": _band(group.ci),
                    "r_squared": group.r_squared,
                }
                for group in report.groups
            ],
        },
        "diagnostics": {
            "r_squared": report.r_squared,
            "final_performance": report.final_performance,
            "stop_reason": report.stop_reason,
            "updates": report.log.updates,
        },
        "reference": None if report.reference is None else report.reference.tolist(),
        "policy": report.policy.to_checkpoint(),
        "extras": report.extras,
        "ensemble": report.ensemble.estimates.tolist() if include_ensemble else None,
    }


def write_json(path: str | Path, payload: dict[str, object]) -> Path:
    """Write a JSON document, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    logger.debug("Wrote {}", target)
    return target


def load_report(path: str | Path) -> dict[str, object]:
    """Read a report written by :func:`write_json`."""
    return json.loads(Path(path).read_text(encoding="utf-8"))


def format_number(value: float | None) -> str:
    """Full round-trip decimal text of a float; empty for missing values."""
    if value is None:
        return ""
    return format(float(value), FLOAT_FORMAT)


def write_csv(
    path: str | Path,
    manifest: dict[str, object],
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
) -> Path:
    """Write a CSV table behind ``# key: value`` manifest lines.

    Floats are written with 17 significant digits, ``None`` as an empty cell.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        for key in ("version", "config_hash", "seed"):
            handle.write(f"# {key}: {manifest.get(key, '')}\n")
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [
                    format_number(cell) if cell is None or isinstance(cell, float) else cell
                    for cell in row
                ]
            )
    logger.debug("Wrote {}", target)
    return target


def read_csv(path: str | Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Return (manifest, header, rows) of a CSV written by :func:`write_csv`."""
    manifest: dict[str, str] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = []
    for line in lines:
        if line.startswith("# ") and not body:
            key, _, value = line[2:].partition(": ")
            manifest[key] = value
        else:
            body.append(line)
    table = list(csv.reader(body))
    return manifest, table[0], table[1:]


def write_train_log(path: str | Path, log: TrainLog, manifest: dict[str, object]) -> Path:
    """CSV with columns n, r, grad_norm, theta_norm."""
    rows = [
        (record.update, record.performance, record.grad_norm, record.theta_norm)
        for record in log.records
    ]
    return write_csv(path, manifest, ("n", "r", "grad_norm", "theta_norm"), rows)


def write_estimate(
    path: str | Path,
    mean: np.ndarray,
    reference: np.ndarray | None,
    manifest: dict[str, object],
) -> Path:
    """CSV of the ensemble mean against the reference, one row per grid point."""
    dim = mean.shape[0]
    rows = [
        (
            index,
            index / (dim - 1) if dim > 1 else 0.0,
            float(mean[index]),
            None if reference is None else float(reference[index]),
        )
        for index in range(dim)
    ]
    return write_csv(path, manifest, ("index", "t", "estimate", "reference"), rows)


def write_ci_bands(
    path: str | Path, report: SolveReport, manifest: dict[str, object]
) -> Path:
    """CSV of the overall band and of every K-means group band."""
    bands = [("all", report.ci)] + [
        (f"group{index}", group.ci) for index, group in enumerate(report.groups)
    ]
    rows = [
        (name, index, float(band.lower[index]), float(band.upper[index]))
        for name, band in bands
        for index in range(band.lower.shape[0])
    ]
    return write_csv(path, manifest, ("band", "index", "lower", "upper"), rows)


def write_loss_trajectories(
    path: str | Path,
    gd_loss: Sequence[float],
    rl_loss: Sequence[float],
    manifest: dict[str, object],
) -> Path:
    """CSV with columns step, gd_loss, rl_loss; the shorter series leaves empty cells."""
    steps = max(len(gd_loss), len(rl_loss))
    rows = [
        (
            step,
            float(gd_loss[step]) if step < len(gd_loss) else None,
            float(rl_loss[step]) if step < len(rl_loss) else None,
        )
        for step in range(steps)
    ]
    return write_csv(path, manifest, ("step", "gd_loss", "rl_loss"), rows)


def write_solve_outputs(
    directory: str | Path,
    report: SolveReport,
    manifest: dict[str, object],
    *,
    include_ensemble: bool = False,
) -> dict[str, Path]:
    """Write report.json, train_log.csv, estimate.csv and ci_bands.csv."""
    base = Path(directory)
    paths = {
        "report": write_json(
            base / "report.json",
            report_payload(report, manifest, include_ensemble=include_ensemble),
        ),
        "train_log": write_train_log(base / "train_log.csv", report.log, manifest),
        "estimate": write_estimate(
            base / "estimate.csv", report.mean, report.reference, manifest
        ),
        "ci_bands": write_ci_bands(base / "ci_bands.csv", report, manifest),
    }
    logger.info("Results written to {}", base)
    return paths
