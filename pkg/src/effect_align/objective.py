"""Training objectives and their analytic gradients.

Two losses: a modal anchoring loss (negative log-probability of the
empirical modal answer, averaged over both endpoints of every context) and
an effect-alignment loss (mean cumulative-shift distance between model-side
and data-side effect vectors). The total is their affine combination.

Gradients are computed for any additive-logit response model, i.e. a model
whose option distribution is a softmax of a sum of parameter blocks drawn
from a flat parameter vector. The model must expose:

  - ``n_parameters``, ``get_parameters()``, ``set_parameters(vec)``
  - ``num_options(question_id)``
  - ``logit_block_starts(persona, question_id)``: flat-vector offsets of the
    K-length blocks summed into that persona's logits
  - ``predict(persona, question_id)``

The absolute value inside the alignment distance is smoothed as
sqrt(x^2 + eps^2) for differentiation only; reported loss values use the
exact distance.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .effects import CausalEffectVector, causal_effect, cdf_distance
from .survey import EditContext, SurveyDataset

PROB_FLOOR = 1e-12

SCHEDULE_SEQUENTIAL = "sequential"
SCHEDULE_JOINT = "joint"


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction for numerical stability."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class LossConfig:
    """Loss weights, schedule, and smoothing for the combined objective."""

    alpha: float = 1.0
    beta: float = 1.0
    schedule: str = SCHEDULE_SEQUENTIAL
    epsilon_smooth: float = 1e-8

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        if self.schedule not in (SCHEDULE_SEQUENTIAL, SCHEDULE_JOINT):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.epsilon_smooth <= 0:
            raise ValueError("epsilon_smooth must be positive")


@dataclass(frozen=True)
class ContextTarget:
    """Data-side targets for one training context: the empirical effect
    vector plus the modal answers at both endpoints (1-based)."""

    context: EditContext
    data_ce: np.ndarray
    mode_high: int
    mode_low: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "data_ce", np.asarray(self.data_ce, dtype=float))


@dataclass
class LossReport:
    """Evaluated losses over a batch; total is the affine combination."""

    anchor_loss: float
    ce_loss: float
    total: float
    per_context: dict[EditContext, float] = field(default_factory=dict)
    floored: int = 0

    def to_dict(self) -> dict[str, Any]:
        rows = [
            {
                "country": ctx.base.country,
                "question_id": ctx.question_id,
                "attribute": ctx.attribute,
                "base_levels": dict(ctx.base.assignments),
                "d_cdf": d,
            }
            for ctx, d in self.per_context.items()
        ]
        return {
            "anchor_loss": self.anchor_loss,
            "ce_loss": self.ce_loss,
            "total": self.total,
            "floored": self.floored,
            "per_context": rows,
        }


def build_training_batch(
    dataset: SurveyDataset,
    contexts: Sequence[EditContext],
    weighted: bool = True,
) -> list[ContextTarget]:
    """Compute data-side effect vectors and endpoint modes for each context."""
    batch: list[ContextTarget] = []
    for ctx in contexts:
        s1, s0 = ctx.endpoints()
        p1 = dataset.subgroup_distribution(s1, ctx.question_id, weighted=weighted).distribution()
        p0 = dataset.subgroup_distribution(s0, ctx.question_id, weighted=weighted).distribution()
        ce = causal_effect(p1, p0, question_id=ctx.question_id, context=ctx, side="data")
        batch.append(
            ContextTarget(
                context=ctx,
                data_ce=ce.values,
                mode_high=dataset.empirical_mode(s1, ctx.question_id, weighted=weighted),
                mode_low=dataset.empirical_mode(s0, ctx.question_id, weighted=weighted),
            )
        )
    return batch


def anchor_loss(model_dist, mode_index: int, floor: float = PROB_FLOOR) -> float:
    """Negative log-probability of the modal answer under the model."""
    dist = np.asarray(model_dist, dtype=float)
    if not 1 <= mode_index <= dist.size:
        raise ValueError(f"mode index {mode_index} out of range 1..{dist.size}")
    return float(-np.log(max(float(dist[mode_index - 1]), floor)))


def ce_loss(
    model_effects: Sequence[CausalEffectVector],
    data_effects: Sequence[CausalEffectVector],
) -> float:
    """Mean cumulative-shift distance over aligned context pairs."""
    if len(model_effects) != len(data_effects):
        raise ValueError(
            f"effect lists differ in length: {len(model_effects)} vs {len(data_effects)}"
        )
    if not model_effects:
        raise ValueError("cannot average over an empty context set")
    total = 0.0
    for m, d in zip(model_effects, data_effects):
        mc = getattr(m, "context", None)
        dc = getattr(d, "context", None)
        if mc is not None and dc is not None and mc != dc:
            raise ValueError(f"misaligned contexts: {mc.describe()} vs {dc.describe()}")
        total += cdf_distance(m, d)
    return total / len(model_effects)


# ---------------------------------------------------------------------------
# vectorized evaluation over a batch


class _Group:
    """Evaluation plan for all endpoints and contexts sharing one K."""

    __slots__ = (
        "k",
        "gather",
        "anchor_rows",
        "anchor_modes",
        "anchor_mult",
        "idx1",
        "idx0",
        "data_cum",
        "context_pos",
    )

    def __init__(self, k: int) -> None:
        self.k = k
        self.gather: np.ndarray | None = None
        self.anchor_rows: np.ndarray | None = None
        self.anchor_modes: np.ndarray | None = None
        self.anchor_mult: np.ndarray | None = None
        self.idx1: np.ndarray | None = None
        self.idx0: np.ndarray | None = None
        self.data_cum: np.ndarray | None = None
        self.context_pos: list[int] = []


class ObjectiveEvaluator:
    """Precompiled loss/gradient evaluation for an additive-logit model.

    Endpoint personas are deduplicated; anchoring multiplicities preserve the
    per-(context, endpoint) averaging. Reductions run in a fixed order, so
    results are deterministic.
    """

    def __init__(self, model, batch: Sequence[ContextTarget]) -> None:
        if not batch:
            raise ValueError("cannot evaluate an empty context set")
        self.model = model
        self.batch = list(batch)
        self.n_contexts = len(batch)
        self._groups = self._compile()

    def _compile(self) -> list[_Group]:
        model = self.model
        endpoint_ids: dict[tuple, int] = {}
        endpoint_starts: list[np.ndarray] = []
        endpoint_k: list[int] = []

        def endpoint(persona, qid: str) -> int:
            key = (persona, qid)
            idx = endpoint_ids.get(key)
            if idx is None:
                idx = len(endpoint_starts)
                endpoint_ids[key] = idx
                endpoint_starts.append(np.asarray(model.logit_block_starts(persona, qid)))
                endpoint_k.append(model.num_options(qid))
            return idx

        refs: list[tuple[int, int, int, np.ndarray, int]] = []
        for pos, target in enumerate(self.batch):
            ctx = target.context
            k = model.num_options(ctx.question_id)
            if target.data_ce.size != k:
                raise ValueError(
                    f"data effect length {target.data_ce.size} != {k} options "
                    f"for {ctx.describe()}"
                )
            e1 = endpoint(ctx.s1, ctx.question_id)
            e0 = endpoint(ctx.s0, ctx.question_id)
            refs.append((pos, e1, e0, target.data_ce, k))

        groups: dict[int, _Group] = {}
        local_of: dict[int, tuple[int, int]] = {}
        rows_per_k: dict[int, list[int]] = {}
        for eid, k in enumerate(endpoint_k):
            rows = rows_per_k.setdefault(k, [])
            local_of[eid] = (k, len(rows))
            rows.append(eid)

        for k, rows in rows_per_k.items():
            grp = groups[k] = _Group(k)
            starts = np.stack([endpoint_starts[e] for e in rows])
            grp.gather = starts[:, :, None] + np.arange(k)[None, None, :]

        anchor_slots: dict[int, dict[tuple[int, int], float]] = {k: {} for k in groups}
        ctx_lists: dict[int, dict[str, list]] = {
            k: {"idx1": [], "idx0": [], "cum": [], "pos": []} for k in groups
        }
        for pos, e1, e0, data_ce, k in refs:
            target = self.batch[pos]
            _, r1 = local_of[e1]
            _, r0 = local_of[e0]
            slots = anchor_slots[k]
            for row, mode in ((r1, target.mode_high - 1), (r0, target.mode_low - 1)):
                if not 0 <= mode < k:
                    raise ValueError(
                        f"mode {mode + 1} out of range 1..{k} for {target.context.describe()}"
                    )
                slots[(row, mode)] = slots.get((row, mode), 0.0) + 1.0
            lists = ctx_lists[k]
            lists["idx1"].append(r1)
            lists["idx0"].append(r0)
            lists["cum"].append(np.cumsum(data_ce))
            lists["pos"].append(pos)

        for k, grp in groups.items():
            slots = sorted(anchor_slots[k].items())
            grp.anchor_rows = np.array([rm[0] for rm, _ in slots], dtype=int)
            grp.anchor_modes = np.array([rm[1] for rm, _ in slots], dtype=int)
            grp.anchor_mult = np.array([m for _, m in slots])
            lists = ctx_lists[k]
            grp.idx1 = np.array(lists["idx1"], dtype=int)
            grp.idx0 = np.array(lists["idx0"], dtype=int)
            grp.data_cum = np.stack(lists["cum"])
            grp.context_pos = lists["pos"]
        return [groups[k] for k in sorted(groups)]

    def _theta(self, theta) -> np.ndarray:
        if theta is None:
            return self.model.get_parameters()
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.model.n_parameters:
            raise ValueError(
                f"parameter vector length {theta.size} != {self.model.n_parameters}"
            )
        return theta

    def _probs(self, theta: np.ndarray, grp: _Group) -> np.ndarray:
        logits = theta[grp.gather].sum(axis=1)
        return stable_softmax(logits, axis=1)

    def loss(self, config: LossConfig, theta=None) -> LossReport:
        """Exact losses plus the per-context distance table."""
        theta = self._theta(theta)
        anchor_sum = 0.0
        floored = 0
        ce_sum = 0.0
        per_context = np.empty(self.n_contexts)
        for grp in self._groups:
            p = self._probs(theta, grp)
            mode_p = p[grp.anchor_rows, grp.anchor_modes]
            clamped = mode_p < PROB_FLOOR
            floored += int(np.sum(clamped * grp.anchor_mult))
            anchor_sum += float(
                -(grp.anchor_mult * np.log(np.maximum(mode_p, PROB_FLOOR))).sum()
            )
            delta = np.cumsum(p[grp.idx1] - p[grp.idx0], axis=1) - grp.data_cum
            d = np.abs(delta).mean(axis=1)
            ce_sum += float(d.sum())
            per_context[grp.context_pos] = d
        anchor = anchor_sum / (2 * self.n_contexts)
        ce = ce_sum / self.n_contexts
        report = LossReport(
            anchor_loss=anchor,
            ce_loss=ce,
            total=config.alpha * anchor + config.beta * ce,
            per_context={
                t.context: float(per_context[i]) for i, t in enumerate(self.batch)
            },
            floored=floored,
        )
        return report

    def objective_value(self, config: LossConfig, theta=None) -> float:
        """Smoothed objective actually optimized; differs from the reported
        total only through the sqrt(x^2 + eps^2) smoothing."""
        theta = self._theta(theta)
        eps2 = config.epsilon_smooth**2
        anchor_sum = 0.0
        ce_sum = 0.0
        for grp in self._groups:
            p = self._probs(theta, grp)
            mode_p = np.maximum(p[grp.anchor_rows, grp.anchor_modes], PROB_FLOOR)
            anchor_sum += float(-(grp.anchor_mult * np.log(mode_p)).sum())
            delta = np.cumsum(p[grp.idx1] - p[grp.idx0], axis=1) - grp.data_cum
            ce_sum += float(np.sqrt(delta**2 + eps2).mean(axis=1).sum())
        anchor = anchor_sum / (2 * self.n_contexts)
        ce = ce_sum / self.n_contexts
        return config.alpha * anchor + config.beta * ce

    def gradient(self, config: LossConfig, theta=None) -> np.ndarray:
        """Analytic gradient of the smoothed objective wrt the flat parameters."""
        theta = self._theta(theta)
        eps2 = config.epsilon_smooth**2
        grad = np.zeros_like(theta)
        a_coef = config.alpha / (2 * self.n_contexts)
        c_coef = config.beta / self.n_contexts
        for grp in self._groups:
            p = self._probs(theta, grp)
            g_logit = np.zeros_like(p)
            if config.alpha != 0:
                row_weight = np.zeros(p.shape[0])
                np.add.at(row_weight, grp.anchor_rows, grp.anchor_mult)
                g_logit += a_coef * row_weight[:, None] * p
                np.subtract.at(
                    g_logit,
                    (grp.anchor_rows, grp.anchor_modes),
                    a_coef * grp.anchor_mult,
                )
            if config.beta != 0:
                delta = np.cumsum(p[grp.idx1] - p[grp.idx0], axis=1) - grp.data_cum
                u = delta / np.sqrt(delta**2 + eps2)
                r = np.flip(np.cumsum(np.flip(u, axis=1), axis=1), axis=1) / grp.k
                dp = np.zeros_like(p)
                np.add.at(dp, grp.idx1, c_coef * r)
                np.subtract.at(dp, grp.idx0, c_coef * r)
                g_logit += p * (dp - (p * dp).sum(axis=1, keepdims=True))
            np.add.at(grad, grp.gather, g_logit[:, None, :])
        return grad


def total_loss(model, batch: Sequence[ContextTarget], config: LossConfig) -> LossReport:
    """Evaluate both losses and their affine combination over a batch."""
    return ObjectiveEvaluator(model, batch).loss(config)


def loss_gradients(model, batch: Sequence[ContextTarget], config: LossConfig) -> np.ndarray:
    """Analytic gradient of the total objective, aligned with the model's
    flat parameter vector."""
    return ObjectiveEvaluator(model, batch).gradient(config)


def gradient_check(
    model,
    batch: Sequence[ContextTarget],
    config: LossConfig,
    *,
    n_points: int = 20,
    step: float = 1e-5,
    seed: int = 0,
    scale: float = 0.5,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences of the smoothed objective, over random parameter points."""
    evaluator = ObjectiveEvaluator(model, batch)
    rng = np.random.default_rng(seed)
    n = model.n_parameters
    worst = 0.0
    for _ in range(n_points):
        theta = rng.normal(0.0, scale, n)
        analytic = evaluator.gradient(config, theta)
        fd = np.empty(n)
        for i in range(n):
            orig = theta[i]
            theta[i] = orig + step
            hi = evaluator.objective_value(config, theta)
            theta[i] = orig - step
            lo = evaluator.objective_value(config, theta)
            theta[i] = orig
            fd[i] = (hi - lo) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6)
        worst = max(worst, float((np.abs(analytic - fd) / denom).max()))
    return worst


def stage_configs(config: LossConfig) -> list[tuple[str, LossConfig]]:
    """Expand a schedule into per-stage weightings. The sequential schedule
    anchors first, then aligns effects starting from the anchored parameters."""
    if config.schedule == SCHEDULE_JOINT:
        return [("joint", config)]
    return [
        ("anchor", replace(config, alpha=1.0, beta=0.0)),
        ("effect", replace(config, alpha=0.0, beta=1.0)),
    ]
