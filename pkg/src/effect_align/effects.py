"""Causal-effect vectors over ordinal options and their alignment distance.

An effect vector is the per-option probability shift between the two
endpoints of a controlled edit. Its prefix sums track cumulative mass
movement along the ordinal scale; the alignment distance averages the
absolute cumulative discrepancy between two effect vectors.
"""

from __future__ import annotations

import csv
import os
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .survey import EditContext

SUM_TOL = 1e-9
EFFECT_SIDES = ("data", "model")


def _values(x) -> np.ndarray:
    if isinstance(x, (CausalEffectVector, DeltaCdf)):
        return x.values
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class CausalEffectVector:
    """Per-option probability shift from toggling one attribute (level 1 minus
    level 0), under a fixed context."""

    values: np.ndarray
    question_id: str | None = None
    context: EditContext | None = None
    side: str = "data"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError(f"effect vector must be 1-D with length >= 2, got shape {vals.shape}")
        if abs(float(vals.sum())) > SUM_TOL:
            raise ValueError(f"effect vector entries must sum to 0, got {vals.sum()!r}")
        if np.any(np.abs(vals) > 1 + 1e-12):
            raise ValueError("effect vector entries must lie in [-1, 1]")
        if self.side not in EFFECT_SIDES:
            raise ValueError(f"side must be one of {EFFECT_SIDES}, got {self.side!r}")

    @property
    def num_options(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class DeltaCdf:
    """Prefix sums of an effect vector; the last entry is 0 by mass conservation."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if abs(float(vals[-1])) > SUM_TOL:
            raise ValueError(f"cumulative shift must end at 0, got {vals[-1]!r}")
        if np.any(np.abs(vals) > 1 + 1e-12):
            raise ValueError("cumulative shift entries must lie in [-1, 1]")


def causal_effect(
    p1,
    p0,
    *,
    question_id: str | None = None,
    context: EditContext | None = None,
    side: str = "data",
) -> CausalEffectVector:
    """Componentwise difference of two normalized option distributions,
    level-1 endpoint minus level-0 endpoint."""
    a1 = _values(p1)
    a0 = _values(p0)
    if a1.shape != a0.shape:
        raise ValueError(f"distribution lengths differ: {a1.shape} vs {a0.shape}")
    for name, arr in (("p1", a1), ("p0", a0)):
        if abs(float(arr.sum()) - 1.0) > 1e-6 or np.any(arr < -1e-12):
            raise ValueError(f"{name} is not a normalized distribution")
    return CausalEffectVector(a1 - a0, question_id=question_id, context=context, side=side)


def delta_cdf(ce) -> DeltaCdf:
    """Cumulative mass shift along the ordinal scale."""
    return DeltaCdf(np.cumsum(_values(ce)))


def cdf_distance(ce_model, ce_data) -> float:
    """Mean absolute cumulative discrepancy over all option levels
    (including the top level, which is zero by conservation)."""
    m = _values(ce_model)
    d = _values(ce_data)
    if m.shape != d.shape:
        raise ValueError(f"effect vector lengths differ: {m.shape} vs {d.shape}")
    delta = np.cumsum(m) - np.cumsum(d)
    return float(np.abs(delta).mean())


def scalar_effect(ce) -> float:
    """Expected-option shift: the effect vector dotted with option indices
    1..K. Equals minus the sum of the cumulative shift below the top level."""
    vals = _values(ce)
    idx = np.arange(1, vals.size + 1, dtype=float)
    return float(idx @ vals)


# ---------------------------------------------------------------------------
# export


@dataclass(frozen=True)
class EffectTableEntry:
    """One context's effect estimates, data side plus optional model side."""

    context: EditContext
    data: CausalEffectVector
    model: CausalEffectVector | None = None


def write_effect_table(
    entries: Sequence[EffectTableEntry],
    path,
    *,
    meta: Sequence[str] = (),
) -> None:
    """Comma-separated export: one row per context with per-option effects,
    cumulative shifts, scalar effects, and the alignment distance when a
    model side is present. Option columns are padded to the largest K."""
    max_k = max((e.data.num_options for e in entries), default=0)

    def cols(prefix: str) -> list[str]:
        return [f"{prefix}_{k}" for k in range(1, max_k + 1)]

    header = (
        ["country", "question_id", "attribute", "base_levels"]
        + cols("data_ce")
        + cols("data_dcdf")
        + ["data_scalar"]
        + cols("model_ce")
        + cols("model_dcdf")
        + ["model_scalar", "d_cdf"]
    )

    def padded(vals: np.ndarray) -> list[str]:
        out = [repr(float(v)) for v in vals]
        out.extend([""] * (max_k - len(out)))
        return out

    with open(os.fspath(path), "w", encoding="utf-8", newline="") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for e in entries:
            ctx = e.context
            base = "|".join(f"{k}={v}" for k, v in ctx.base.assignments)
            row = [ctx.base.country, ctx.question_id, ctx.attribute, base]
            row += padded(e.data.values)
            row += padded(delta_cdf(e.data).values)
            row.append(repr(scalar_effect(e.data)))
            if e.model is not None:
                row += padded(e.model.values)
                row += padded(delta_cdf(e.model).values)
                row.append(repr(scalar_effect(e.model)))
                row.append(repr(cdf_distance(e.model, e.data)))
            else:
                row += [""] * (2 * max_k + 2)
            writer.writerow(row)
