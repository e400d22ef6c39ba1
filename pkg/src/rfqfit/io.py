"""CSV datasets, parameter files and flat key=value configuration."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .distributions import ClientParams, SepParams, sep_mean, sep_std
from .model import (
    COVARIATE_NAMES,
    ModelSpec,
    OtherRule,
    Outcome,
    Pooling,
    RecordError,
    RfqRecord,
    RfqTable,
    Side,
    SideParams,
    SubOutcome,
    Variant,
)
from .simulate import LatentLog, OutcomeTable, outcome_frequencies

REQUIRED_COLUMNS = ("side", "outcome", "sub_outcome", "y_quote", "cover", "n_other", "cbbt_mid", "cbbt_half_spread")
CSV_COLUMNS = REQUIRED_COLUMNS + COVARIATE_NAMES

SIDE_CODES = {"buy": Side.BUY, "sell": Side.SELL}
OUTCOME_CODES = {"done": Outcome.DONE, "traded_away": Outcome.TRADED_AWAY, "not_traded": Outcome.NOT_TRADED}
SUB_CODES = {"tied": SubOutcome.TIED, "covered": SubOutcome.COVERED, "other": SubOutcome.OTHER,
             "na": SubOutcome.NOT_APPLICABLE}
OUTCOME_NAMES = {v: k for k, v in OUTCOME_CODES.items()}
SUB_NAMES = {v: k for k, v in SUB_CODES.items()}


class DatasetError(OSError):
    """The dataset file cannot be read or lacks required columns."""


@dataclass(frozen=True)
class Rejection:
    row: int  # 1-based data row (header excluded)
    reason: str


@dataclass
class IngestResult:
    table: RfqTable
    rejections: list[Rejection]
    covariate_columns: tuple[str, ...]
    rows_read: int = 0

    @property
    def summary(self) -> OutcomeTable:
        return outcome_frequencies(self.table)

    def report(self) -> str:
        lines = [f"{self.rows_read} rows read, {len(self.table)} accepted, {len(self.rejections)} rejected"]
        lines += [f"  row {r.row}: {r.reason}" for r in self.rejections]
        summary = self.summary
        for side in Side:
            if summary.counts[side].sum():
                lines.append(summary.format(side))
        return "\n".join(lines)


def _parse_float(text: str, what: str) -> float:
    if text is None or text.strip() == "":
        raise RecordError(f"missing {what}")
    try:
        value = float(text)
    except ValueError:
        raise RecordError(f"bad {what}: {text!r}") from None
    if not math.isfinite(value):
        raise RecordError(f"non-finite {what}")
    return value


def _parse_enum(text: str, codes: Mapping[str, object], what: str):
    key = (text or "").strip().lower()
    if key not in codes:
        raise RecordError(f"bad {what}: {text!r}")
    return codes[key]


def _parse_int(text: str, what: str) -> int:
    value = _parse_float(text, what)
    if value != int(value):
        raise RecordError(f"bad {what}: {text!r}")
    return int(value)


def parse_row(row: Mapping[str, str], covariate_columns: Iterable[str] = COVARIATE_NAMES) -> RfqRecord:
    present = set(covariate_columns)
    flags = []
    for name in COVARIATE_NAMES:
        if name in present:
            v = _parse_float(row.get(name), name)
            if v not in (0.0, 1.0):
                raise RecordError(f"{name} must be 0 or 1")
            flags.append(v)
        else:
            flags.append(0.0)
    cover_text = (row.get("cover") or "").strip()
    return RfqRecord(
        side=_parse_enum(row.get("side"), SIDE_CODES, "side"),
        outcome=_parse_enum(row.get("outcome"), OUTCOME_CODES, "outcome"),
        sub_outcome=_parse_enum(row.get("sub_outcome"), SUB_CODES, "sub_outcome"),
        y_quote=_parse_float(row.get("y_quote"), "y_quote"),
        cover=None if cover_text == "" else _parse_float(cover_text, "cover"),
        n_other=_parse_int(row.get("n_other"), "n_other"),
        cbbt_mid=_parse_float(row.get("cbbt_mid"), "cbbt_mid"),
        cbbt_half_spread=_parse_float(row.get("cbbt_half_spread"), "cbbt_half_spread"),
        covariates=tuple(flags),
    )


def ingest(path: str | os.PathLike) -> IngestResult:
    """Read and validate a dataset CSV; invalid rows are reported, not fatal."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {os.fspath(path)}: {exc}") from exc
    records: list[RfqRecord] = []
    rejections: list[Rejection] = []
    with fh:
        reader = csv.DictReader(fh)
        header = [h.strip().lower() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if not header or missing:
            raise DatasetError(f"{os.fspath(path)}: missing columns {', '.join(missing) or 'header'}")
        reader.fieldnames = header
        covs = tuple(c for c in COVARIATE_NAMES if c in header)
        count = 0
        for i, row in enumerate(reader, start=1):
            count = i
            try:
                records.append(parse_row(row, covs))
            except RecordError as exc:
                rejections.append(Rejection(i, str(exc)))
    return IngestResult(RfqTable.from_records(records), rejections, covs, count)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(table: RfqTable, path: str | os.PathLike) -> None:
    """Write the CSV layout read by :func:`ingest` (floats round-trip exactly)."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for i in range(len(table)):
                cover = table.cover[i]
                w.writerow([
                    "buy" if table.side[i] > 0 else "sell",
                    OUTCOME_NAMES[Outcome(int(table.outcome[i]))],
                    SUB_NAMES[SubOutcome(int(table.sub_outcome[i]))],
                    _fmt(table.y_quote[i]),
                    "" if np.isnan(cover) else _fmt(cover),
                    int(table.n_other[i]),
                    _fmt(table.cbbt_mid[i]),
                    _fmt(table.cbbt_half_spread[i]),
                    *(int(v) if float(v).is_integer() else _fmt(v) for v in table.covariates[i]),
                ])
    except OSError as exc:
        raise DatasetError(f"cannot write {os.fspath(path)}: {exc}") from exc


def write_latent(latent: LatentLog, path: str | os.PathLike) -> None:
    k = latent.w.shape[1]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["v"] + [f"w{i + 1}" for i in range(k)] + [f"a{i + 1}" for i in range(k)])
            for i in range(latent.v.size):
                w.writerow([_fmt(latent.v[i])]
                           + ["" if np.isnan(x) else _fmt(x) for x in latent.w[i]]
                           + [int(a) for a in latent.a[i]])
    except OSError as exc:
        raise DatasetError(f"cannot write {os.fspath(path)}: {exc}") from exc


# Parameter files -----------------------------------------------------------

def _cell_dict(side: Side, n: int | None, sp: SideParams, extra: Mapping[str, object] | None = None) -> dict:
    d = {
        "side": side.value,
        "n": n,
        "alpha": sp.dealer.alpha,
        "lambda": sp.dealer.lam,
        "mu": sp.dealer.mu,
        "sigma": sp.dealer.sigma,
        "p": sp.answer_prob,
        "nu": sp.client.nu,
        "tau": sp.client.tau,
        "beta": dict(sp.beta),
        "gamma": dict(sp.gamma),
    }
    if extra:
        d.update(extra)
    return d


def params_to_json(spec: ModelSpec, seed: int | None = None, cells_extra: Mapping | None = None) -> dict:
    cells = []
    for (side, n), sp in spec.params.items():
        extra = cells_extra.get((side, n)) if cells_extra else None
        cells.append(_cell_dict(side, n, sp, extra))
    return {"variant": spec.variant.value, "pooling": spec.pooling.value,
            "other_rule": spec.other_rule.value, "seed": seed, "cells": cells}


def spec_from_json(data: Mapping) -> ModelSpec:
    try:
        variant = Variant(data["variant"])
        pooling = Pooling(data.get("pooling", "pooled"))
        other_rule = OtherRule(data.get("other_rule", "exclusive"))
        params = {}
        for c in data["cells"]:
            sp = SideParams(
                SepParams(float(c["alpha"]), float(c["lambda"]), float(c["mu"]), float(c["sigma"])),
                ClientParams(float(c["nu"]), float(c["tau"])),
                float(c.get("p", 1.0)),
                tuple((k, float(v)) for k, v in (c.get("beta") or {}).items()),
                tuple((k, float(v)) for k, v in (c.get("gamma") or {}).items()),
            )
            n = c.get("n")
            params[(Side(c["side"]), None if n is None else int(n))] = sp
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed parameter file: {exc}") from exc
    return ModelSpec(variant, pooling, params, other_rule)


def write_params_json(spec: ModelSpec, path: str | os.PathLike, seed: int | None = None,
                      cells_extra: Mapping | None = None) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(params_to_json(spec, seed, cells_extra), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise DatasetError(f"cannot write {os.fspath(path)}: {exc}") from exc


def read_params_json(path: str | os.PathLike) -> ModelSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read {os.fspath(path)}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{os.fspath(path)}: not valid JSON ({exc})") from exc
    return spec_from_json(data)


def format_params_table(spec: ModelSpec, seed: int | None = None,
                        cells_extra: Mapping | None = None) -> str:
    """Aligned text table: one row per (side, n) cell with derived mean and std."""
    covs: list[str] = []
    for sp in spec.params.values():
        for name in sp.covariate_names:
            if name not in covs:
                covs.append(name)
    head = ["side", "n", "alpha", "lambda", "mu", "sigma", "mean", "std", "p", "nu", "tau"]
    head += [f"beta({c})" for c in covs] + [f"gamma({c})" for c in covs]
    show_extra = bool(cells_extra)
    if show_extra:
        head += ["loglik", "converged"]
    rows = [head]
    for (side, n), sp in spec.params.items():
        d = sp.dealer
        try:
            mean, std = f"{sep_mean(d):.4g}", f"{sep_std(d):.4g}"
        except (ValueError, OverflowError):
            mean = std = "nan"
        beta, gamma = dict(sp.beta), dict(sp.gamma)
        row = [side.value, "all" if n is None else str(n)]
        row += [f"{v:.4g}" for v in (d.alpha, d.lam, d.mu, d.sigma)] + [mean, std]
        row += [f"{sp.answer_prob:.4g}", f"{sp.client.nu:.4g}", f"{sp.client.tau:.4g}"]
        row += [f"{beta.get(c, 0.0):.4g}" for c in covs] + [f"{gamma.get(c, 0.0):.4g}" for c in covs]
        if show_extra:
            ex = cells_extra.get((side, n), {})
            row += [f"{ex.get('loglik', float('nan')):.6f}", str(ex.get("converged", ""))]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = [f"model: {spec.variant.value}  pooling: {spec.pooling.value}  seed: {seed}"]
    lines += ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


# Configuration ---------------------------------------------------------------

def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and ``#`` comments are ignored."""
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DatasetError(f"cannot read config {os.fspath(path)}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{os.fspath(path)}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().lower().replace("-", "_")] = value.strip()
    return out
