"""Command-line interface: estimate, diagnose, simulate.

Configuration may come from flags or from a JSON config file whose keys
match the flag names (flags win).  Reports are JSON by default, with an
optional aligned-text rendering.  Exit codes: 0 success, 1 input or
configuration error, 2 identification/relevance failure (diagnostics
are still written where possible).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data_model import EstimationConfig, ModelSpec, TableSchema, load_table, validate_dataset
from .discontinuities import cell_table, ratio_late, relevance
from .errors import EstimationError, InputError
from .estimator import estimate
from .kernels import KernelKind
from .montecarlo import load_dgp_spec, run_study

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_IDENTIFICATION = 2


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multirdd",
        description=(
            "Regression discontinuity estimation with multivalued treatments: "
            "weighted 2SLS with cell-interacted instruments, cell-wise "
            "discontinuity diagnostics, and Monte Carlo verification."
        ),
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_io(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=["json", "text"], help="output format (default json)")

    def add_data(p):
        p.add_argument("--data", help="input CSV path")
        p.add_argument("--outcome", help="outcome column name")
        p.add_argument("--running", help="running-variable column name")
        p.add_argument("--cutoff", type=float, help="cutoff value (default 0)")
        p.add_argument("--treatment", help="integer-valued treatment column")
        p.add_argument(
            "--treatment-levels",
            dest="treatment_levels",
            help="comma-separated ordered treatment levels (default: observed values)",
        )
        p.add_argument(
            "--treatment-indicators",
            dest="treatment_indicators",
            help="comma-separated pre-built cumulative indicator columns",
        )
        p.add_argument("--w", help="comma-separated discrete covariate columns forming the cells")
        p.add_argument("--r", help="conditioning column for the conditional model")
        p.add_argument("--wtilde", help="comma-separated transform columns for the parametric model")
        p.add_argument("--controls", help="comma-separated extra exogenous control columns")
        p.add_argument("--cluster", help="cluster column name, or 'running' to cluster by z")
        p.add_argument("--kernel", help="uniform | triangular | epanechnikov")
        p.add_argument("--bandwidth", type=float, help="bandwidth in running-variable units")
        p.add_argument("--model", help="homogeneous | conditional | parametric")
        p.add_argument("--delimiter", help="CSV delimiter (default comma)")

    p_est = sub.add_parser("estimate", help="fit the weighted 2SLS estimator")
    add_data(p_est)
    add_io(p_est)

    p_diag = sub.add_parser("diagnose", help="cell-wise discontinuities and relevance")
    add_data(p_diag)
    p_diag.add_argument(
        "--series",
        help="also write per-cell binned means to this CSV (plotting data)",
    )
    add_io(p_diag)

    p_sim = sub.add_parser("simulate", help="Monte Carlo study from a DGP spec")
    p_sim.add_argument("--data", help="DGP spec JSON path")
    p_sim.add_argument("--n", type=int, help="sample size per replication")
    p_sim.add_argument("--reps", type=int, help="number of replications")
    p_sim.add_argument("--seed", type=int, help="master seed (default: spec's seed)")
    p_sim.add_argument("--workers", type=int, help="worker threads (default 1)")
    p_sim.add_argument("--kernel", help="uniform | triangular | epanechnikov")
    p_sim.add_argument("--bandwidth", type=float, help="bandwidth override")
    add_io(p_sim)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    merged: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            merged.update(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as err:
            raise InputError(f"config file {path} is not valid JSON: {err}") from None
    for key, value in vars(args).items():
        if key in ("config", "subcommand"):
            continue
        if value is not None:
            merged[key] = value
    return merged


def _require(cfg: dict, key: str) -> object:
    if cfg.get(key) in (None, ""):
        raise InputError(f"missing required option --{key.replace('_', '-')}")
    return cfg[key]


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return _csv_list(value)
    return [str(v) for v in value]


def _schema_from(cfg: dict) -> TableSchema:
    levels = cfg.get("treatment_levels")
    if isinstance(levels, str):
        levels = [float(v) for v in _csv_list(levels)]
    cluster = cfg.get("cluster")
    return TableSchema(
        outcome=str(_require(cfg, "outcome")),
        running=str(_require(cfg, "running")),
        cutoff=float(cfg.get("cutoff", 0.0)),
        treatment=cfg.get("treatment"),
        treatment_indicators=tuple(_as_list(cfg.get("treatment_indicators"))),
        treatment_levels=None if levels is None else tuple(levels),
        covariates=tuple(_as_list(cfg.get("w"))),
        cluster=None if cluster in (None, "running") else str(cluster),
        extra_controls=tuple(_as_list(cfg.get("controls"))),
        delimiter=str(cfg.get("delimiter", ",")),
    )


def _estimation_config(cfg: dict) -> EstimationConfig:
    cluster = cfg.get("cluster")
    return EstimationConfig(
        bandwidth=float(_require(cfg, "bandwidth")),
        kernel=KernelKind.from_name(str(cfg.get("kernel", "uniform"))),
        cutoff=float(cfg.get("cutoff", 0.0)),
        cluster_by=None if cluster is None else str(cluster),
        rcond_threshold=float(cfg.get("rcond_threshold", 1e-10)),
    )


def _model_spec(cfg: dict) -> ModelSpec:
    kind = str(cfg.get("model", "homogeneous")).lower()
    levels = cfg.get("treatment_levels")
    if isinstance(levels, str):
        levels = [float(v) for v in _csv_list(levels)]
    return ModelSpec(
        kind=kind,
        treatment_levels=tuple(levels) if levels else (),
        r_column=cfg.get("r"),
        wtilde_columns=tuple(_as_list(cfg.get("wtilde"))),
    )


def _write(payload: str, out_path: str | None) -> None:
    if out_path:
        Path(out_path).write_text(payload + "\n", encoding="utf-8")
    else:
        sys.stdout.write(payload + "\n")


def _render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


def _fit_text(doc: dict) -> str:
    rows = doc.get("coefficients", [])
    width = max([len(r["name"]) for r in rows] + [8])
    lines = [f"{'':{width}}  estimate", "-" * (width + 24)]
    for r in rows:
        lines.append(f"{r['name']:{width}}  {r['estimate']:12.4f}")
        lines.append(f"{'':{width}}  ({r['se']:.4f})")
    if doc.get("just_identified"):
        lines.append("[just identified; no over-identification test]")
    elif "j_pvalue" in doc:
        lines.append(f"[J-test p-value = {doc['j_pvalue']:.3f}]")
    lines.append(f"n (weight-positive) = {doc.get('n_effective')}")
    return "\n".join(lines)


def _diagnostics_doc(ds, cfg) -> tuple[dict, bool, float | None]:
    ct = cell_table(ds, cfg)
    tw = relevance(ct, rcond_threshold=cfg.rcond_threshold)
    ratios = {}
    for l, cell in enumerate(ct.cells):
        ratios[cell.label] = {
            f"x{j}": ratio_late(ct, l, j).to_dict() for j in range(1, ct.d + 1)
        }
    doc = {
        "cell_table": ct.to_dict(),
        "relevance": tw.to_dict(),
        "ratio_late": ratios,
        "validation": validate_dataset(ds, cfg).to_dict(),
    }
    return doc, tw.passed, float(tw.min_eigenvalue)


def write_series(path: str, ds, cfg, max_points: int = 60) -> None:
    """Per-cell, per-side binned means of the outcome and each indicator.

    This is the plotting data behind first-stage figures; the toolkit
    does not plot, it emits the series for external tooling.
    """
    from .kernels import weights_vector

    w = weights_vector(cfg.kernel, cfg.bandwidth, ds.z)
    keep = w > 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["cell", "side", "z", "count", "y_mean"]
            + [f"x{j + 1}_mean" for j in range(ds.d)]
        )
        for l, label in enumerate(ds.cell_labels):
            mask = keep & (ds.cells == l)
            for side, side_mask in (("left", ds.z < 0), ("right", ds.z >= 0)):
                sel = mask & side_mask
                if not sel.any():
                    continue
                z_vals = ds.z[sel]
                uniques = np.unique(z_vals)
                if len(uniques) > max_points:
                    edges = np.quantile(z_vals, np.linspace(0, 1, max_points + 1))
                    uniques = 0.5 * (edges[:-1] + edges[1:])
                    bins = np.clip(
                        np.searchsorted(edges[1:-1], z_vals, side="right"), 0, max_points - 1
                    )
                else:
                    lookup = {v: k for k, v in enumerate(uniques)}
                    bins = np.asarray([lookup[v] for v in z_vals])
                for b in range(len(uniques)):
                    rows = sel.nonzero()[0][bins == b]
                    if rows.size == 0:
                        continue
                    writer.writerow(
                        [label, side, f"{uniques[b]:.6g}", rows.size]
                        + [f"{ds.y[rows].mean():.6g}"]
                        + [f"{ds.x[rows, j].mean():.6g}" for j in range(ds.d)]
                    )


def estimate_cmd(cfg: dict) -> int:
    schema = _schema_from(cfg)
    ds = load_table(str(_require(cfg, "data")), schema)
    est_cfg = _estimation_config(cfg)
    spec = _model_spec(cfg)
    echo = {
        "data": str(cfg.get("data")),
        "kernel": est_cfg.kernel.value,
        "bandwidth": est_cfg.bandwidth,
        "cutoff": est_cfg.cutoff,
        "model": spec.kind,
        "cluster": cfg.get("cluster"),
    }
    min_eig = None
    if spec.kind == "homogeneous":
        try:
            _, _, min_eig = _diagnostics_doc(ds, est_cfg)
        except EstimationError:
            min_eig = None
    try:
        fit = estimate(ds, spec, est_cfg, joint_min_eigenvalue=min_eig)
    except EstimationError as err:
        doc = {"error": str(err), "config": echo}
        try:
            diag, _, _ = _diagnostics_doc(ds, est_cfg)
            doc["diagnostics"] = diag
        except EstimationError as diag_err:
            doc["diagnostics_error"] = str(diag_err)
        _write(_render_json(doc), cfg.get("out"))
        sys.stderr.write(f"estimation failed: {err}\n")
        return EXIT_IDENTIFICATION
    doc = fit.to_dict()
    doc["config"] = echo
    payload = _fit_text(doc) if cfg.get("format") == "text" else _render_json(doc)
    _write(payload, cfg.get("out"))
    return EXIT_OK


def diagnose_cmd(cfg: dict) -> int:
    schema = _schema_from(cfg)
    ds = load_table(str(_require(cfg, "data")), schema)
    est_cfg = _estimation_config(cfg)
    doc, passed, _ = _diagnostics_doc(ds, est_cfg)
    doc["config"] = {
        "data": str(cfg.get("data")),
        "kernel": est_cfg.kernel.value,
        "bandwidth": est_cfg.bandwidth,
        "cutoff": est_cfg.cutoff,
    }
    if cfg.get("series"):
        write_series(str(cfg["series"]), ds, est_cfg)
    _write(_render_json(doc), cfg.get("out"))
    if not passed:
        sys.stderr.write("relevance check failed; see the report for diagnostics\n")
        return EXIT_IDENTIFICATION
    return EXIT_OK


def simulate_cmd(cfg: dict) -> int:
    dgp = load_dgp_spec(str(_require(cfg, "data")))
    reps = int(cfg.get("reps", 0) or 0)
    if reps < 1:
        raise InputError(f"--reps must be at least 1, got {reps}")
    n = int(_require(cfg, "n"))
    est_cfg = None
    if cfg.get("bandwidth") is not None:
        est_cfg = EstimationConfig(
            bandwidth=float(cfg["bandwidth"]),
            kernel=KernelKind.from_name(str(cfg.get("kernel", "uniform"))),
        )
    result = run_study(
        dgp,
        n=n,
        reps=reps,
        cfg=est_cfg,
        seed=None if cfg.get("seed") is None else int(cfg["seed"]),
        workers=int(cfg.get("workers", 1) or 1),
    )
    payload = result.summary_text() if cfg.get("format") == "text" else result.to_json()
    _write(payload, cfg.get("out"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        if args.subcommand == "estimate":
            return estimate_cmd(cfg)
        if args.subcommand == "diagnose":
            return diagnose_cmd(cfg)
        if args.subcommand == "simulate":
            return simulate_cmd(cfg)
        raise InputError(f"unknown subcommand {args.subcommand!r}")  # pragma: no cover
    except InputError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_INPUT
    except EstimationError as err:
        sys.stderr.write(f"estimation failed: {err}\n")
        return EXIT_IDENTIFICATION


def entrypoint() -> None:  # pragma: no cover - console-script shim
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
