"""Command-line runner: ingest or simulate data, run the sampler, write results.

Outputs (in ``--out``):

``labels.csv``
    ``row,region`` for the selected tessellation.
``density_region_<i>.csv``
    ``y,mean,lower,upper`` posterior density curve and pointwise band of
    region ``i`` on the original response scale.
``trace.jsonl``
    One JSON object per kept sample (``iter, move, accepted, M, centers,
    w, logml``).
``summary.json``
    Selected tessellation, weights, changepoints (one covariate),
    acceptance rates, seed, posterior distribution of M and the
    configuration.

With ``--chains k`` each chain writes the files above into
``chain_<j>/`` and the top-level ``summary.json`` compares the chains'
posterior distributions of M.  Every file is a deterministic function of
the inputs and the seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ArgumentError,
    CDEError,
    DataError,
    EmptyDataError,
    MissingColumnError,
    UnreadableFileError,
)
from .mcmc import McmcConfig, run_chain, select_best
from .posterior import extract_changepoints, summarize_density
from .simulate import SCENARIOS, simulate
from .tessellation import Dataset, assign_regions, standardize

__all__ = ["RunConfig", "ingest_csv", "run", "main"]

log = logging.getLogger(__name__)

SEED_ENV = "CDE_SEED"


@dataclass(frozen=True)
class RunConfig:
    out: str
    input: str | None = None
    y_col: str | int | None = None
    x_cols: tuple | None = None
    scenario: str | None = None
    n: int = 1000
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    criterion: str = "marginal"
    level: float = 0.9
    n_draws: int = 4000
    chains: int = 1
    emit_labels: bool = True
    emit_densities: bool = True
    emit_trace: bool = True
    emit_summary: bool = True

    def __post_init__(self):
        if (self.input is None) == (self.scenario is None):
            raise ArgumentError("give exactly one of an input file or a scenario")
        if self.input is not None and self.y_col is None:
            raise ArgumentError("an input file needs a response column")
        if self.scenario is not None and self.scenario not in SCENARIOS:
            raise ArgumentError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.criterion not in ("marginal", "posterior"):
            raise ArgumentError("criterion must be 'marginal' or 'posterior'")
        if not 0.0 < self.level < 1.0:
            raise ArgumentError("level must lie in (0, 1)")
        if self.n_draws < 1 or self.chains < 1:
            raise ArgumentError("draws and chains must be positive")

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "mcmc"}
        out["x_cols"] = None if self.x_cols is None else list(self.x_cols)
        out["mcmc"] = self.mcmc.to_dict()
        return out


def _resolve_column(spec, header: list) -> int:
    if isinstance(spec, int) or (isinstance(spec, str) and spec.lstrip("-").isdigit() and spec not in header):
        idx = int(spec)
        if not 0 <= idx < len(header):
            raise MissingColumnError(f"column index {idx} out of range (file has {len(header)} columns)")
        return idx
    try:
        return header.index(spec)
    except ValueError:
        raise MissingColumnError(f"column {spec!r} not found; available: {header}") from None


def ingest_csv(path, y_col, x_cols=None) -> tuple[Dataset, int]:
    """Read a headed CSV file into a standardized :class:`Dataset`.

    Parameters
    ----------
    path : path-like
    y_col : str or int
        Response column, by header name or zero-based index.
    x_cols : sequence of str or int, optional
        Covariate columns; default all columns other than the response.

    Returns
    -------
    data : Dataset
    n_dropped : int
        Rows skipped because a used cell was missing or non-numeric (each
        is logged as a warning).
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise EmptyDataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    yi = _resolve_column(y_col, header)
    if x_cols is None:
        xi = [k for k in range(len(header)) if k != yi]
    else:
        xi = [_resolve_column(c, header) for c in x_cols]
    if not xi:
        raise MissingColumnError("no covariate columns")
    if yi in xi:
        raise ArgumentError("the response column cannot also be a covariate")

    used = [yi] + xi
    values = []
    dropped = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            vals = [float(row[k]) for k in used]
        except (IndexError, ValueError):
            vals = None
        if vals is None or not all(math.isfinite(v) for v in vals):
            dropped += 1
            log.warning("dropping line %d of %s: missing or non-numeric value", lineno, path)
            continue
        values.append(vals)
    if len(values) < 2:
        raise EmptyDataError(f"{path}: fewer than two usable rows")
    arr = np.asarray(values, dtype=float)
    return standardize(arr[:, 1:], arr[:, 0]), dropped


def _load(config: RunConfig) -> tuple[Dataset, int]:
    if config.scenario is not None:
        return simulate(config.scenario, config.n, seed=config.mcmc.seed), 0
    return ingest_csv(config.input, config.y_col, config.x_cols)


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _dump_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_one(data: Dataset, config: RunConfig, outdir: Path) -> dict:
    """Run one chain and write its files; returns the summary dict."""
    outdir.mkdir(parents=True, exist_ok=True)
    chain = run_chain(data, config.mcmc)
    tess, fits = select_best(chain, data, config.criterion)

    if config.emit_trace:
        with open(outdir / "trace.jsonl", "w") as fh:
            for rec in chain.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    if config.emit_labels:
        labels = assign_regions(data, tess).labels
        _write_csv(outdir / "labels.csv", ["row", "region"], ([i, int(l)] for i, l in enumerate(labels)))

    integrals = []
    if config.emit_densities:
        for i, fit in enumerate(fits):
            est = summarize_density(
                fit,
                level=config.level,
                n_draws=config.n_draws,
                seed=config.mcmc.seed + i,
                y_mean=data.y_mean,
                y_sd=data.y_sd,
                region_id=i,
            )
            integrals.append(est.integral())
            _write_csv(
                outdir / f"density_region_{i}.csv",
                ["y", "mean", "lower", "upper"],
                (
                    [_fmt(a), _fmt(b), _fmt(c), _fmt(d)]
                    for a, b, c, d in zip(est.y, est.mean, est.lower, est.upper)
                ),
            )

    centers = data.original_x()[list(tess.center_idx)]
    summary = {
        "seed": config.mcmc.seed,
        "n": data.n,
        "p": data.p,
        "selected": {
            "criterion": config.criterion,
            "M": tess.M,
            "center_idx": [int(c) for c in tess.center_idx],
            "centers": centers.tolist(),
            "region_sizes": [int(f.counts.n) for f in fits],
            "log_marginal": [float(f.log_marginal_density) for f in fits],
            "kernel_params": [[f.params.sigma2, f.params.length_scale] for f in fits],
        },
        "weights": [float(v) for v in tess.w],
        "changepoints": extract_changepoints(tess, data).tolist() if data.p == 1 else None,
        "acceptance_rates": {k: (None if math.isnan(v) else v) for k, v in chain.acceptance_rates.items()},
        "proposal_counts": chain.proposal_counts,
        "size_rejections": chain.size_rejections,
        "M_distribution": {str(k): v for k, v in chain.M_distribution().items()},
        "density_integrals": integrals,
        "config": config.to_dict(),
    }
    if config.emit_summary:
        _dump_json(outdir / "summary.json", summary)
    return summary


def _chain_job(args):
    data, config, outdir = args
    return _run_one(data, config, Path(outdir))


def run(config: RunConfig) -> int:
    """Execute a configured run; returns a process exit code."""
    try:
        data, dropped = _load(config)
        if dropped:
            log.warning("dropped %d row(s) with missing or non-numeric values", dropped)
        out = Path(config.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {out}: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise DataError(f"output directory {out} is not writable")

        if config.chains == 1:
            _run_one(data, config, out)
            return 0

        # chain j uses seed + j so that chain 0 reproduces a single-chain run
        jobs = []
        for j in range(config.chains):
            cfg_j = replace(config, mcmc=replace(config.mcmc, seed=config.mcmc.seed + j))
            jobs.append((data, cfg_j, str(out / f"chain_{j}")))
        workers = min(config.chains, os.cpu_count() or 1)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                summaries = list(pool.map(_chain_job, jobs))
        else:
            summaries = [_chain_job(job) for job in jobs]

        Ms = sorted({int(m) for s in summaries for m in s["M_distribution"]})
        table = {str(m): [s["M_distribution"].get(str(m), 0.0) for s in summaries] for m in Ms}
        best = int(np.argmax([sum(s["selected"]["log_marginal"]) for s in summaries]))
        _dump_json(
            out / "summary.json",
            {
                "chains": config.chains,
                "seeds": [s["seed"] for s in summaries],
                "M_distribution_by_chain": table,
                "max_abs_M_probability_difference": float(
                    max((max(v) - min(v) for v in table.values()), default=0.0)
                ),
                "best_chain": best,
                "selected_M": [s["selected"]["M"] for s in summaries],
                "config": config.to_dict(),
            },
        )
        return 0
    except CDEError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    d = McmcConfig()
    p = _Parser(prog="lgpcde", description="Voronoi partition conditional density estimation.")
    src = p.add_argument_group("data")
    src.add_argument("--input", help="CSV file with a header row")
    src.add_argument("--y", help="response column (name or zero-based index)")
    src.add_argument("--x", help="comma-separated covariate columns (default: all others)")
    src.add_argument("--scenario", choices=SCENARIOS, help="simulate instead of reading a file")
    src.add_argument("--n", type=int, default=1000, help="simulated sample size")
    ch = p.add_argument_group("sampler")
    ch.add_argument("--iters", type=int, default=d.n_iters)
    ch.add_argument("--burnin", type=int, default=d.burn_in)
    ch.add_argument("--mmax", type=int, default=d.M_max)
    ch.add_argument("--d", type=float, default=d.d, help="Dirichlet weight-proposal concentration")
    ch.add_argument("--r", type=int, default=d.r, help="grid bins per region")
    ch.add_argument("--pad", type=float, default=d.pad_frac, help="grid padding as a fraction of the range")
    ch.add_argument("--min-region", type=int, default=d.min_region_size)
    ch.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or 0)")
    ch.add_argument("--chains", type=int, default=1)
    o = p.add_argument_group("output")
    o.add_argument("--criterion", choices=("marginal", "posterior"), default="marginal")
    o.add_argument("--level", type=float, default=0.9, help="credible level of density bands")
    o.add_argument("--draws", type=int, default=4000, help="posterior draws per density curve")
    o.add_argument("--out", required=True, help="output directory")
    o.add_argument("-v", "--verbose", action="store_true")
    return p


def _seed(arg) -> int:
    if arg is not None:
        return int(arg)
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ArgumentError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def config_from_args(ns) -> RunConfig:
    mcmc = McmcConfig(
        n_iters=ns.iters,
        burn_in=ns.burnin,
        M_max=ns.mmax,
        d=ns.d,
        min_region_size=ns.min_region,
        r=ns.r,
        pad_frac=ns.pad,
        seed=_seed(ns.seed),
    )
    x_cols = None if ns.x is None else tuple(c.strip() for c in ns.x.split(",") if c.strip())
    return RunConfig(
        out=ns.out,
        input=ns.input,
        y_col=ns.y,
        x_cols=x_cols,
        scenario=ns.scenario,
        n=ns.n,
        mcmc=mcmc,
        criterion=ns.criterion,
        level=ns.level,
        n_draws=ns.draws,
        chains=ns.chains,
    )


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ns = build_parser().parse_args(argv)
        if ns.verbose:
            logging.getLogger("lgpcde").setLevel(logging.INFO)
        config = config_from_args(ns)
    except CDEError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
