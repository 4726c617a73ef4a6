"""Achievable success probabilities: single-shot SDPs, the Bayesian updating
strategy, PGM and Choi-state baselines, and the exact comb optimum."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .combs import (ChoiOperator, CombLayout, Ensemble, KrausChannel, as_choi, link_product)
from .linalg import LabeledOperator, SignatureError, permute_systems, psd_sqrt_pinv
from .sdp import SdpFailure, SdpSettings
from .strategy import TesterSolution, solve_tester

log = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 256


class OrderCapError(ValueError):
    """Raised when a comb is too large for the exact SDP."""


@dataclass(frozen=True)
class StateEnsemble:
    states: tuple[LabeledOperator, ...]
    priors: tuple[float, ...]

    def __init__(self, states: Sequence[LabeledOperator | np.ndarray],
                 priors: Sequence[float] | None = None):
        ops = []
        for s in states:
            if not isinstance(s, LabeledOperator):
                arr = np.asarray(s)
                s = LabeledOperator([("S", arr.shape[0])], arr)
            ops.append(s)
        if len(ops) < 1:
            raise ValueError("need at least one state")
        sig = ops[0].signature
        for s in ops:
            if s.signature != sig:
                raise SignatureError("states must share one signature")
            h = s.hermitian_part()
            if abs(np.trace(h).real - 1) > 1e-10 or np.linalg.eigvalsh(h)[0] < -1e-10:
                raise ValueError("states must be PSD with unit trace")
        if priors is None:
            priors = [1.0 / len(ops)] * len(ops)
        priors = tuple(float(p) for p in priors)
        if len(priors) != len(ops) or min(priors) < 0 or abs(sum(priors) - 1) > 1e-12:
            raise ValueError("priors must be nonnegative, one per state, and sum to 1")
        object.__setattr__(self, "states", tuple(ops))
        object.__setattr__(self, "priors", priors)

    @property
    def M(self) -> int:
        return len(self.states)


@dataclass
class SingleShotResult:
    value: float
    phis: list[np.ndarray]
    phi: np.ndarray
    layout: CombLayout
    tester: TesterSolution | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.value, self.phis, self.phi))


def _single_layout(ops: Sequence[ChoiOperator]) -> CombLayout:
    ref = ops[0]
    for o in ops[1:]:
        if set(o.labels) != set(ref.labels) or set(o.input_labels) != set(ref.input_labels):
            raise SignatureError("maps must share input and output systems")
    return CombLayout([(ref.output_labels, ref.input_labels)], ref.op.signature.factors)


def single_shot_channels(weighted_maps: Sequence[ChoiOperator | KrausChannel],
                         settings: SdpSettings | None = None) -> SingleShotResult:
    """max sum_m Tr(C_m Phi_m) s.t. sum_m Phi_m = I_W (x) phi, phi a density operator."""
    ops = [as_choi(c) for c in weighted_maps]
    layout = _single_layout(ops)
    mats = [layout.align(o.op) for o in ops]
    if max(np.abs(m).max() for m in mats) == 0.0:
        d_in = layout.dim_in(1)
        phi = np.eye(d_in) / d_in
        phis = [np.kron(np.eye(layout.dim_out(1)), phi)] + \
            [np.zeros((layout.order, layout.order))] * (len(mats) - 1)
        return SingleShotResult(0.0, phis, phi, layout)
    ts = solve_tester(mats, [1.0] * len(mats), layout, settings, check_domination=False)
    return SingleShotResult(ts.value, ts.tester, ts.gammas[0], layout, ts)


def min_error_states(e: StateEnsemble, settings: SdpSettings | None = None):
    """Optimal minimum-error discrimination: returns (value, measurement operators)."""
    maps = [ChoiOperator.state(s * p) for s, p in zip(e.states, e.priors)]
    res = single_shot_channels(maps, settings)
    return res.value, res.phis


def pgm_success(e: StateEnsemble, rel_cutoff: float = 1e-12) -> float:
    """Success probability of the pretty good measurement."""
    rhos = [0.5 * (s.matrix + s.matrix.conj().T) for s in e.states]
    avg = sum(p * r for p, r in zip(e.priors, rhos))
    root = psd_sqrt_pinv(avg, rel_cutoff)
    return float(sum(p * p * np.real(np.trace(r @ root @ r @ root))
                     for p, r in zip(e.priors, rhos)))


def _support_isometry(mat: np.ndarray, rel_cutoff: float = 1e-12) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    keep = w > rel_cutoff * max(w[-1], 0.0)
    return v[:, keep]


def pgm_choi_tensor(e: Ensemble, rel_cutoff: float = 1e-12) -> float:
    """PGM on the tensor product over steps of normalized step Choi states.

    Applies to memoryless processes. Each factor is first compressed to the
    support of its prior-weighted average, which leaves the PGM unchanged
    because every tensor-product state lives inside the product of supports.
    """
    T = e.T
    for p in e.processes:
        if any(p.memory[t] for t in range(T - 1)):
            raise ValueError("the Choi-state PGM baseline needs memoryless processes")
    factors = []
    for t in range(T):
        states = []
        for p in e.processes:
            c = p.steps[t]
            layout = CombLayout([(c.output_labels, c.input_labels)], c.op.signature.factors)
            m = layout.align(c.op)
            states.append(m / layout.dim_in(1))
        avg = sum(pr * s for pr, s in zip(e.priors, states))
        iso = _support_isometry(avg, rel_cutoff)
        factors.append([iso.conj().T @ s @ iso for s in states])
    rhos = []
    for m in range(e.M):
        r = factors[0][m]
        for t in range(1, T):
            r = np.kron(r, factors[t][m])
        rhos.append(r)
    return pgm_success(StateEnsemble(rhos, e.priors), rel_cutoff)


def _check_order(e: Ensemble, max_order: int | None):
    order = e.layout.order
    if max_order is not None and order > max_order:
        raise OrderCapError(f"comb order {order} exceeds the cap {max_order}; "
                            f"the exact SDP needs an order-{order} tester")


def ultimate_success(e: Ensemble, settings: SdpSettings | None = None,
                     max_order: int | None = DEFAULT_MAX_ORDER) -> float:
    """Exact optimum over all testers (single comb SDP)."""
    return ultimate_tester(e, settings, max_order).value


def ultimate_tester(e: Ensemble, settings: SdpSettings | None = None,
                    max_order: int | None = DEFAULT_MAX_ORDER) -> TesterSolution:
    _check_order(e, max_order)
    return solve_tester(e.chois(), e.priors, e.layout, settings)


def choi_state_lower_bound(e: Ensemble, settings: SdpSettings | None = None,
                           max_order: int | None = DEFAULT_MAX_ORDER) -> float:
    """Optimal discrimination of the normalized process Choi states."""
    _check_order(e, max_order)
    layout = e.layout
    d_in = int(np.prod([layout.dim_in(t) for t in range(1, e.T + 1)]))
    sig = layout.signature()
    states = [LabeledOperator(sig, c / d_in) for c in e.chois()]
    return min_error_states(StateEnsemble(states, e.priors), settings)[0]


def nonadaptive_binary(ch1: KrausChannel, ch2: KrausChannel, T: int,
                       settings: SdpSettings | None = None, max_order: int = 64) -> float:
    """Best equal-prior discrimination of ch1^(x)T against ch2^(x)T using one parallel query."""
    c1, c2 = as_choi(ch1), as_choi(ch2)
    if set(c1.labels) != set(c2.labels):
        raise SignatureError("channels must share their systems")
    order = c1.op.dim ** T
    if order > max_order:
        raise OrderCapError(f"{T}-fold tensor channel has Choi order {order} > cap {max_order}")

    def power(c: ChoiOperator) -> ChoiOperator:
        ops = []
        for t in range(1, T + 1):
            ops.append(LabeledOperator(tuple((f"{l}#{t}", d) for l, d in c.op.signature.factors),
                                       c.matrix))
        acc = ops[0]
        for o in ops[1:]:
            acc = LabeledOperator(acc.signature + o.signature, np.kron(acc.matrix, o.matrix))
        ins = tuple(f"{l}#{t}" for t in range(1, T + 1) for l in c.input_labels)
        outs = tuple(f"{l}#{t}" for t in range(1, T + 1) for l in c.output_labels)
        return ChoiOperator(acc, ins, outs)

    p1, p2 = power(c1), power(c2)
    p2 = p2.permuted(p1.labels)
    return single_shot_channels([p1.scaled(0.5), p2.scaled(0.5)], settings).value


# -- Bayesian updating ------------------------------------------------------------

@dataclass
class BayesStage:
    t: int
    phis: dict[int, list[np.ndarray]]  # previous outcome -> Phi_{k|k'} on (W_t, V_t)
    phi: dict[int, np.ndarray]  # previous outcome -> input marginal on V_t
    rho: list[list[np.ndarray]]  # rho~_{m,k} on the outgoing memory
    q: np.ndarray  # q_{m,k} = Tr rho~_{m,k}
    success: float
    layout: CombLayout


@dataclass
class BayesTrace:
    stages: list[BayesStage]
    value: float

    @property
    def stage_success(self) -> list[float]:
        return [s.success for s in self.stages]

    def tester(self) -> list[np.ndarray]:
        """Tester elements implied by the strategy, in canonical comb order."""
        M = len(self.stages[0].rho)
        T = len(self.stages)
        out = []
        for m in range(M):
            total = None
            for ks in itertools.product(range(M), repeat=T - 1):
                outcomes = ks + (m,)
                term = self.stages[0].phis[0][outcomes[0]]
                for t in range(1, T):
                    term = np.kron(self.stages[t].phis[outcomes[t - 1]][outcomes[t]], term)
                total = term if total is None else total + term
            out.append(total)
        return out


def _step_parts(e: Ensemble, t: int):
    """Per process: (step Choi, incoming memory labels, outgoing memory labels)."""
    out = []
    for p in e.processes:
        mem_in = p.memory[t - 2] if t > 1 else ()
        mem_out = p.memory[t - 1] if t < p.T else ()
        out.append((p.steps[t - 1], mem_in, mem_out))
    return out


def _reduce_memory(c: ChoiOperator, mem_out, layout: CombLayout, phi: np.ndarray) -> np.ndarray:
    """Tr_{W V}[C (I_mem (x) Phi)] as an operator on the outgoing memory."""
    io = layout.labels()
    if not mem_out:
        return np.array([[np.einsum("ij,ji->", layout.align(c.op), phi)]])
    order = list(mem_out) + list(io)
    mat = permute_systems(c.op, order).matrix
    dm = c.dim_of(mem_out)
    n = layout.order
    return np.einsum("aibj,ji->ab", mat.reshape(dm, n, dm, n), phi)


def bayes_lower_bound(e: Ensemble, settings: SdpSettings | None = None):
    """Success probability of the Bayesian updating strategy: returns (value, trace)."""
    M, T = e.M, e.T
    stages: list[BayesStage] = []
    prev_rho: list[list[np.ndarray]] | None = None
    for t in range(1, T + 1):
        parts = _step_parts(e, t)
        n_prev = 1 if t == 1 else M
        phis, phi_in = {}, {}
        rho = [[None] * M for _ in range(M)]
        for kp in range(n_prev):
            linked = []
            for m, (c, mem_in, mem_out) in enumerate(parts):
                if t == 1:
                    lm = c.scaled(e.priors[m])
                else:
                    state = prev_rho[m][kp]
                    if mem_in:
                        sig = c.op.signature.select(mem_in)
                        lm = link_product(c, ChoiOperator.state(LabeledOperator(sig, state)))
                    else:
                        lm = c.scaled(float(np.real(state[0, 0])))
                linked.append((lm, mem_out))
            maps = [lm.trace_outputs(mo) if mo else lm for lm, mo in linked]
            try:
                res = single_shot_channels(maps, settings)
            except SdpFailure as exc:
                raise SdpFailure(f"Bayes stage {t} (previous outcome {kp + 1}): {exc}",
                                 exc.solution) from exc
            phis[kp] = res.phis
            phi_in[kp] = res.phi
            for m, (lm, mo) in enumerate(linked):
                for k in range(M):
                    r = _reduce_memory(lm, mo, res.layout, res.phis[k])
                    r = 0.5 * (r + r.conj().T)
                    rho[m][k] = r if rho[m][k] is None else rho[m][k] + r
        q = np.array([[float(np.real(np.trace(rho[m][k]))) for k in range(M)] for m in range(M)])
        success = float(np.trace(q))
        stages.append(BayesStage(t, phis, phi_in, rho, q, success, res.layout))
        prev_rho = rho
    trace = BayesTrace(stages, stages[-1].success)
    return trace.value, trace
