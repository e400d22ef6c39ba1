"""Command-line interface: ``rfqfit {simulate,fit,analyze,validate}``.

Every flag may also be given in a flat ``key = value`` file passed with
``--config``; flags on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import analytics, io
from .distributions import ClientParams, ParameterError, SepParams
from .fitting import FitSettings, fit_model
from .model import COVARIATE_NAMES, ModelSpec, OtherRule, Pooling, Side, SideParams, Variant
from .simulate import CovariateGenerator, ReferenceQuoteRule, SimConfig, simulate_dataset

logger = logging.getLogger("rfqfit")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2
EXIT_IO = 3

DEFAULT_N_DISTRIBUTION = (0.2, 0.2, 0.2, 0.2, 0.2)

# Generating parameters used by ``simulate`` when no parameter file is given.
DEFAULT_SIM_PARAMS = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {
    (Side.BUY, None): SideParams(SepParams(0.735, 0.179, 0.424, 0.906), ClientParams(1.72, 1.92), 0.400),
    (Side.SELL, None): SideParams(SepParams(0.665, -0.103, -0.418, 0.794), ClientParams(-1.80, 1.68), 0.424),
})


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    data: str | None = None
    out: str | None = None
    params: str | None = None
    latent: str | None = None
    seed: int = 0
    model: Variant = Variant.PARTIAL
    pooling: Pooling = Pooling.POOLED
    other_rule: OtherRule = OtherRule.EXCLUSIVE
    side: str = "both"
    covariates: tuple[str, ...] = ()
    count: int = 10_000
    sides_mix: float = 0.5
    cover_record_prob: float = 1.0
    n_distribution: tuple[float, ...] = DEFAULT_N_DISTRIBUTION
    flag_probs: dict[str, float] = field(default_factory=dict)
    tick: float | None = None
    starts: int = 1
    f_tol: float = 1e-9
    x_tol: float = 1e-7
    line_tol: float = 1e-4
    max_iterations: int = 200
    grid_min: float = -8.0
    grid_max: float = 8.0
    grid_points: int = 801

    @property
    def sides(self) -> list[Side]:
        return [Side.BUY, Side.SELL] if self.side == "both" else [Side(self.side)]

    @property
    def settings(self) -> FitSettings:
        return FitSettings(self.f_tol, self.x_tol, self.max_iterations, self.line_tol, self.starts, self.seed)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def _covariates(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    for name in names:
        if name not in COVARIATE_NAMES:
            raise UsageError(f"unknown covariate {name!r} (choose from {', '.join(COVARIATE_NAMES)})")
    return names


_CONVERTERS = {
    "data": str, "out": str, "params": str, "latent": str,
    "seed": int, "count": int, "starts": int, "max_iterations": int, "grid_points": int,
    "model": Variant, "pooling": Pooling, "other_rule": OtherRule, "side": str,
    "covariates": _covariates, "n_distribution": _floats,
    "sides_mix": float, "cover_record_prob": float, "f_tol": float, "x_tol": float,
    "line_tol": float, "grid_min": float, "grid_max": float,
    "tick": lambda s: None if s.strip().lower() in ("", "none") else float(s),
}


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, str] = {}
    if args.config:
        values.update(io.read_config(args.config))
    for key in _CONVERTERS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    cfg = RunConfig(args.command)
    for key, text in values.items():
        if key.startswith("flag_prob."):
            name = key.split(".", 1)[1]
            if name not in COVARIATE_NAMES:
                raise UsageError(f"unknown covariate {name!r}")
            cfg.flag_probs[name] = float(text)
            continue
        if key not in _CONVERTERS:
            raise UsageError(f"unknown configuration key {key!r}")
        try:
            setattr(cfg, key, _CONVERTERS[key](text))
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {text!r}") from exc
    if cfg.side not in ("buy", "sell", "both"):
        raise UsageError("side must be buy, sell or both")
    return cfg


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--data", help="dataset CSV")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--model", choices=[v.value for v in Variant])
    common.add_argument("--pooling", choices=[p.value for p in Pooling])
    common.add_argument("--side", choices=["buy", "sell", "both"])
    common.add_argument("--covariates", help="comma-separated subset of " + ",".join(COVARIATE_NAMES))
    common.add_argument("--params", help="parameter JSON written by fit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rfqfit", description="Fit and simulate RFQ outcome models.")
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    sim.add_argument("--count", type=int, help="number of RFQs")
    sim.add_argument("--latent", help="also write latent draws to this CSV")
    fit = sub.add_parser("fit", parents=[common], help="maximum-likelihood fit")
    fit.add_argument("--starts", type=int, help="multistart runs per cell")
    fit.add_argument("--other-rule", dest="other_rule", choices=[r.value for r in OtherRule],
                     help="score 'other' traded-away records exclusively (default) or as missing sub-outcome")
    sub.add_parser("analyze", parents=[common], help="best-price and hit-ratio curves")
    sub.add_parser("validate", parents=[common], help="check a dataset and print its outcome summary")
    return parser


def cmd_simulate(cfg: RunConfig) -> int:
    if not cfg.out:
        raise UsageError("simulate needs --out")
    spec = io.read_params_json(cfg.params) if cfg.params else DEFAULT_SIM_PARAMS
    sides_mix = {"buy": 1.0, "sell": 0.0}.get(cfg.side, cfg.sides_mix)
    # Weights may be raw counts; normalise them here.
    weights = np.asarray(cfg.n_distribution, dtype=float)
    if weights.size != 5 or np.any(weights < 0) or not weights.sum() > 0:
        raise UsageError("n_distribution needs 5 non-negative weights with a positive sum")
    sim = SimConfig(
        true_params=spec,
        n_distribution=tuple(weights / weights.sum()),
        sides_mix=sides_mix,
        record_count=cfg.count,
        cover_record_prob=cfg.cover_record_prob,
        covariate_generator=CovariateGenerator(cfg.flag_probs),
        reference_quote_rule=ReferenceQuoteRule(),
        seed=cfg.seed,
        tick=cfg.tick,
    )
    data = simulate_dataset(sim)
    io.write_dataset(data.table, cfg.out)
    if cfg.latent:
        io.write_latent(data.latent, cfg.latent)
    print(f"wrote {len(data)} RFQs to {cfg.out}")
    return EXIT_OK


def _ingest(cfg: RunConfig) -> io.IngestResult:
    if not cfg.data:
        raise UsageError(f"{cfg.command} needs --data")
    result = io.ingest(cfg.data)
    print(result.report())
    return result


def cmd_validate(cfg: RunConfig) -> int:
    result = _ingest(cfg)
    return EXIT_INVALID if result.rejections else EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    result = _ingest(cfg)
    missing = [c for c in cfg.covariates if c not in result.covariate_columns]
    if missing:
        print(f"covariate columns missing from dataset: {', '.join(missing)}", file=sys.stderr)
        return EXIT_INVALID
    if len(result.table) == 0:
        print("no valid records", file=sys.stderr)
        return EXIT_INVALID
    batch = result.table.to_batch()
    sides = [s for s in cfg.sides if np.any(batch.side == s.sign)]
    if not sides:
        print("no records for the requested side", file=sys.stderr)
        return EXIT_INVALID
    fit = fit_model(batch, cfg.model, cfg.pooling, sides, cfg.covariates, cfg.settings, cfg.other_rule)
    extra = {(c.side, c.n): {"loglik": c.loglik, "converged": c.converged, "iterations": c.iterations,
                             "records": c.record_count} for c in fit.cells}
    table = io.format_params_table(fit.params, cfg.seed, extra)
    print(table, end="")
    out = cfg.out or "."
    os.makedirs(out, exist_ok=True)
    try:
        with open(os.path.join(out, "params.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
    except OSError as exc:
        raise io.DatasetError(f"cannot write parameter table: {exc}") from exc
    io.write_params_json(fit.params, os.path.join(out, "params.json"), cfg.seed, extra)
    for c in fit.cells:
        if not c.converged:
            print(f"warning: {c.side.value} n={c.n or 'all'} did not converge", file=sys.stderr)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_analyze(cfg: RunConfig) -> int:
    path = cfg.params or (os.path.join(cfg.out, "params.json") if cfg.out else None)
    if not path or not os.path.exists(path):
        print(f"fit parameter file not found: {path}", file=sys.stderr)
        return EXIT_IO
    spec = io.read_params_json(path)
    out = cfg.out or "."
    os.makedirs(out, exist_ok=True)
    grid = tuple(np.linspace(cfg.grid_min, cfg.grid_max, cfg.grid_points))
    written = 0
    for side in cfg.sides:
        for n in range(1, 6):
            try:
                spec.side_params(side, n)
            except KeyError:
                continue
            req = analytics.AnalyticsRequest(side, n, spec, grid)
            target = os.path.join(out, f"curves_{side.value}_n{n}.csv")
            analytics.export_curves(req, target)
            written += 1
    if not written:
        print("parameter file has no cells for the requested side", file=sys.stderr)
        return EXIT_INVALID
    print(f"wrote {written} curve file(s) to {out}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "analyze": cmd_analyze, "validate": cmd_validate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.command](cfg)
    except (UsageError, ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
