"""Upper bounds on the optimal success probability from dominating combs.

A process is cut into consecutive segments; for each segment the smallest s
such that s times a comb dominates every (weighted) candidate segment is
found by SDP, and the product of these scales bounds the success probability.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from math import prod
from typing import Sequence

import numpy as np

from .combs import (ChoiOperator, CombLayout, Ensemble, KrausChannel, ProcessComb, as_choi)
from .linalg import LabeledOperator, SignatureError, kron_all, permute_systems
from .sdp import SdpSettings
from .strategy import TesterSolution, solve_tester

log = logging.getLogger(__name__)

FACTOR_TOL = 1e-10


class Bound(float):
    """A bound value clamped to [0, 1] that keeps the raw value and diagnostics."""

    raw: float
    details: dict

    def __new__(cls, raw: float, details: dict | None = None, clamp: bool = True):
        val = min(1.0, max(0.0, raw)) if clamp else raw
        obj = super().__new__(cls, val)
        obj.raw = float(raw)
        obj.details = details or {}
        return obj

    @property
    def value(self) -> float:
        return float(self)


@dataclass(frozen=True)
class PartitionSpec:
    """Breakpoints h_1 < ... < h_L = T and per-segment prior weights.

    ``allocation[l][m]`` multiplies to ``priors[m]`` over l. When omitted the
    last segment carries the priors and every other segment has weight 1.
    """
    breakpoints: tuple[int, ...]
    allocation: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        bp = tuple(int(h) for h in self.breakpoints)
        if not bp or bp[0] < 1 or any(b <= a for a, b in zip(bp, bp[1:])):
            raise ValueError(f"breakpoints must be strictly increasing from >= 1, got {bp}")
        object.__setattr__(self, "breakpoints", bp)
        if self.allocation is not None:
            alloc = tuple(tuple(float(x) for x in row) for row in self.allocation)
            if len(alloc) != len(bp):
                raise ValueError("one allocation row per segment is required")
            object.__setattr__(self, "allocation", alloc)

    @property
    def L(self) -> int:
        return len(self.breakpoints)

    def segments(self) -> list[tuple[int, int]]:
        starts = (0,) + self.breakpoints[:-1]
        return [(a + 1, b) for a, b in zip(starts, self.breakpoints)]

    def weights(self, priors: Sequence[float]) -> list[list[float]]:
        if self.allocation is None:
            return [[1.0] * len(priors) for _ in range(self.L - 1)] + [list(priors)]
        alloc = [list(r) for r in self.allocation]
        for row in alloc:
            if len(row) != len(priors) or min(row) < 0:
                raise ValueError("allocation rows must hold one nonnegative weight per process")
        for m, p in enumerate(priors):
            if abs(prod(row[m] for row in alloc) - p) > 1e-12:
                raise ValueError(f"allocation for process {m} does not multiply to its prior")
        return alloc

    def check(self, T: int):
        if self.breakpoints[-1] != T:
            raise ValueError(f"last breakpoint must equal T={T}, got {self.breakpoints[-1]}")


@dataclass
class DominatingResult:
    s_star: float
    comb: ChoiOperator
    residuals: dict
    violation: float
    layout: CombLayout
    tester: TesterSolution = field(repr=False)


def _as_process(item) -> ProcessComb:
    if isinstance(item, ProcessComb):
        return item
    return ProcessComb(list(item))


def dominating_comb(segment: Sequence, weights: Sequence[float],
                    settings: SdpSettings | None = None) -> DominatingResult:
    """Smallest s with a comb chi, Tr-normalized to s, dominating weights[m] * C_m.

    ``segment`` holds, per process, either a ProcessComb or its list of step
    channels. All processes must share the same wire structure.
    """
    procs = [_as_process(p) for p in segment]
    if len(procs) != len(weights):
        raise ValueError("one weight per process is required")
    if min(weights) < 0:
        raise ValueError("weights must be nonnegative")
    layout = procs[0].layout
    for p in procs[1:]:
        if p.layout != layout:
            raise SignatureError("segment processes must share their wire structure")
    return _dominate([p.choi.matrix for p in procs], list(weights), layout, settings)


def _dominate(chois, weights, layout, settings) -> DominatingResult:
    ts = solve_tester(chois, weights, layout, settings)
    ins = tuple(l for _, i in layout.steps for l in i)
    outs = tuple(l for o, _ in layout.steps for l in o)
    comb = ChoiOperator(LabeledOperator(layout.signature(), ts.chi[-1]), ins, outs)
    return DominatingResult(ts.s_star, comb, ts.residuals, ts.domination_violation, layout, ts)


def _key(chois, weights, layout):
    h = hashlib.sha1()
    for c in chois:
        h.update(np.ascontiguousarray(c).tobytes())
    h.update(np.asarray(weights, dtype=float).tobytes())
    h.update(repr([(layout.dim_out(t), layout.dim_in(t)) for t in range(1, layout.T + 1)]).encode())
    return h.hexdigest()


def upper_bound_partition(e: Ensemble, spec: PartitionSpec,
                          settings: SdpSettings | None = None, cache: dict | None = None) -> Bound:
    """Product of segment scales s_l* for the given partition."""
    spec.check(e.T)
    weights = spec.weights(e.priors)
    cache = {} if cache is None else cache
    scales, results = [], []
    for (a, b), w in zip(spec.segments(), weights):
        segs = [p.segment(a, b) for p in e.processes]
        layout = segs[0][1]
        chois = [c.matrix for c, _ in segs]
        key = _key(chois, w, layout)
        if key not in cache:
            cache[key] = _dominate(chois, w, layout, settings)
        res = cache[key]
        scales.append(res.s_star)
        results.append(res)
    raw = prod(scales)
    return Bound(raw, {"scales": scales, "segments": spec.segments(), "results": results})


def partition_1(T: int) -> PartitionSpec:
    return PartitionSpec(tuple(range(1, T + 1)))


def partition_2(T: int) -> PartitionSpec:
    bp = list(range(2, T + 1, 2))
    if T % 2:
        bp.append(T)
    return PartitionSpec(tuple(bp))


def upper_bound_1(e: Ensemble, settings: SdpSettings | None = None,
                  cache: dict | None = None) -> Bound:
    """Product of single-step scales (the last step carries the priors)."""
    return upper_bound_partition(e, partition_1(e.T), settings, cache)


def upper_bound_2(e: Ensemble, settings: SdpSettings | None = None,
                  cache: dict | None = None) -> Bound:
    """Product of two-step scales, with a trailing single step when T is odd."""
    return upper_bound_partition(e, partition_2(e.T), settings, cache)


def _factor_choi(factors: Sequence[KrausChannel | ChoiOperator]) -> LabeledOperator:
    return kron_all([as_choi(f).op for f in factors])


def tensor_factor_bound(e: Ensemble, factorization, allocation=None,
                        settings: SdpSettings | None = None) -> Bound:
    """Product over steps t and factors j of the single-factor scales s_{t,j}*.

    ``factorization[m][t]`` lists the factor channels of step t+1 of process
    m; their tensor product must equal that step. ``allocation[t][j][m]``
    defaults to 1 except for the last factor of the last step, which carries
    the priors.
    """
    M, T = e.M, e.T
    if len(factorization) != M or any(len(f) != T for f in factorization):
        raise ValueError("factorization must list T steps for each of the M processes")
    J = [len(factorization[0][t]) for t in range(T)]
    for m in range(M):
        proc = e.processes[m]
        for t in range(T):
            if len(factorization[m][t]) != J[t]:
                raise ValueError(f"step {t + 1} has inconsistent factor counts across processes")
            step = proc.steps[t].op
            prod_op = _factor_choi(factorization[m][t])
            if set(prod_op.labels) != set(step.labels):
                raise SignatureError(f"factors of step {t + 1} of process {m} do not cover its systems")
            diff = np.abs(permute_systems(prod_op, step.labels).matrix - step.matrix).max()
            if diff > FACTOR_TOL:
                raise ValueError(f"factors of step {t + 1} of process {m} do not reproduce it "
                                 f"(max deviation {diff:.3e})")
    if allocation is None:
        allocation = [[[1.0] * M for _ in range(J[t])] for t in range(T)]
        allocation[T - 1][J[T - 1] - 1] = list(e.priors)
    else:
        for m, p in enumerate(e.priors):
            tot = prod(allocation[t][j][m] for t in range(T) for j in range(J[t]))
            if abs(tot - p) > 1e-12:
                raise ValueError(f"allocation for process {m} does not multiply to its prior")
    cache: dict = {}
    scales = []
    for t in range(T):
        for j in range(J[t]):
            procs = [ProcessComb([factorization[m][t][j]]) for m in range(M)]
            layout = procs[0].layout
            chois = [p.choi.matrix for p in procs]
            w = allocation[t][j]
            key = _key(chois, w, layout)
            if key not in cache:
                cache[key] = _dominate(chois, w, layout, settings)
            scales.append(cache[key].s_star)
    return Bound(prod(scales), {"scales": scales, "factors": J})


def ad_analytic_s_star(q_B: float, q_T: float) -> float:
    """Closed-form dominating scale for the pair of AD channels {A_qB, A_qT}.

    Evaluates the two-branch formula as printed, with the threshold
    q_th = 1 - (1 + q_B - q_T)^2 / 4. Arguments are swapped so q_B >= q_T.
    """
    if q_B < q_T:
        q_B, q_T = q_T, q_B
    q_th = 1.0 - (1.0 + q_B - q_T) ** 2 / 4.0
    if q_T < q_th:
        return 1.0 + q_B - q_T
    a = np.sqrt(1.0 - q_B)
    b = np.sqrt(1.0 - q_T)
    return float(1.0 - a + (q_B - q_T) * (1.0 - a) / (2.0 * b + 2.0 * a - q_B + q_T))


def ad_s_star_rederived(q_B: float, q_T: float) -> float:
    """Closed form from minimizing s over the 2x2 domination conditions directly.

    With a = sqrt(1 - q_B) <= b = sqrt(1 - q_T): s* = 1 + b^2 - a^2 when
    a + b >= 1, and s* = 1 + (b - a) / (2 - a - b) otherwise. Both pieces agree
    on a + b = 1.
    """
    if q_B < q_T:
        q_B, q_T = q_T, q_B
    a = np.sqrt(1.0 - q_B)
    b = np.sqrt(1.0 - q_T)
    if a + b >= 1.0:
        return float(1.0 + q_B - q_T)
    return float(1.0 + (b - a) / (2.0 - a - b))


def chain_bound(s_star: float, T: int, M: int, known: tuple[int, float] | None = None) -> float:
    """min(1, s*^k * base): base is a known optimum at T - k steps, else 1/M with k = T."""
    if s_star < 1.0 - 1e-9:
        raise ValueError(f"dominating scale must be >= 1, got {s_star}")
    if T < 1 or M < 2:
        raise ValueError("need T >= 1 and M >= 2")
    if known is None:
        k, base = T, 1.0 / M
    else:
        t_known, base = known
        if not 0 <= t_known <= T:
            raise ValueError("known optimum must be for at most T steps")
        k = T - t_known
    return min(1.0, s_star ** k * base)
