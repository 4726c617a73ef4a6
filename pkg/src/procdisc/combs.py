"""Channels, Choi operators, link products, combs and testers.

Choi operators use the output (x) input convention,
C = sum_{n,n'} L(|n><n'|) (x) |n><n'|. A T-step process is a chain of step
channels wired through memory systems; its composed Choi operator is written
in the canonical factor order out_T, in_T, ..., out_1, in_1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .linalg import (HERMITIAN_TOL, LabeledOperator, SignatureError, SystemSignature,
                     partial_trace, permute_systems)

CPTP_TOL = 1e-8
COMB_TOL = 1e-8


class Check(NamedTuple):
    """Outcome of a validity test with the worst residual found."""
    ok: bool
    residual: float
    details: dict


def _sig(s) -> SystemSignature:
    return s if isinstance(s, SystemSignature) else SystemSignature(tuple(s))


@dataclass(frozen=True)
class KrausChannel:
    kraus: tuple[np.ndarray, ...]
    input_signature: SystemSignature
    output_signature: SystemSignature

    def __init__(self, kraus, input_signature, output_signature):
        ins, outs = _sig(input_signature), _sig(output_signature)
        mats = []
        for k in kraus:
            k = np.array(k, dtype=complex)
            if k.shape != (outs.dim, ins.dim):
                raise SignatureError(
                    f"Kraus operator shape {k.shape} does not match ({outs.dim}, {ins.dim})")
            k.setflags(write=False)
            mats.append(k)
        if not mats:
            raise ValueError("a channel needs at least one Kraus operator")
        if set(ins.labels) & set(outs.labels):
            raise SignatureError("input and output labels must be disjoint")
        object.__setattr__(self, "kraus", tuple(mats))
        object.__setattr__(self, "input_signature", ins)
        object.__setattr__(self, "output_signature", outs)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus)

    def relabel(self, mapping: dict[str, str]) -> "KrausChannel":
        def ren(sig):
            return SystemSignature(tuple((mapping.get(l, l), d) for l, d in sig.factors))
        return KrausChannel(self.kraus, ren(self.input_signature), ren(self.output_signature))


@dataclass(frozen=True)
class ChoiOperator:
    op: LabeledOperator
    input_labels: tuple[str, ...]
    output_labels: tuple[str, ...]

    def __init__(self, op: LabeledOperator, input_labels, output_labels):
        input_labels, output_labels = tuple(input_labels), tuple(output_labels)
        if sorted(input_labels + output_labels) != sorted(op.labels):
            raise SignatureError(
                f"inputs {input_labels} and outputs {output_labels} must partition {op.labels}")
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "input_labels", input_labels)
        object.__setattr__(self, "output_labels", output_labels)

    @classmethod
    def state(cls, op: LabeledOperator) -> "ChoiOperator":
        """A state seen as a channel from the trivial system."""
        return cls(op, (), op.labels)

    @property
    def matrix(self) -> np.ndarray:
        return self.op.matrix

    @property
    def labels(self) -> tuple[str, ...]:
        return self.op.labels

    def dim_of(self, labels) -> int:
        return self.op.signature.dim_of(labels)

    def permuted(self, order) -> "ChoiOperator":
        return ChoiOperator(permute_systems(self.op, order), self.input_labels, self.output_labels)

    def trace_outputs(self, labels) -> "ChoiOperator":
        """Discard some output systems (compose with the trace)."""
        labels = tuple(labels)
        if not set(labels) <= set(self.output_labels):
            raise SignatureError(f"{labels} are not outputs of this operator")
        return ChoiOperator(partial_trace(self.op, labels), self.input_labels,
                            tuple(l for l in self.output_labels if l not in labels))

    def scaled(self, c: float) -> "ChoiOperator":
        return ChoiOperator(self.op * c, self.input_labels, self.output_labels)


def choi_from_kraus(ch: KrausChannel) -> ChoiOperator:
    """Choi operator on output (x) input: sum_i |K_i>><<K_i| with row-major vec."""
    vecs = np.stack([k.reshape(-1) for k in ch.kraus], axis=1)
    mat = vecs @ vecs.conj().T
    sig = ch.output_signature + ch.input_signature
    return ChoiOperator(LabeledOperator(sig, mat), ch.input_signature.labels,
                        ch.output_signature.labels)


def as_choi(ch: KrausChannel | ChoiOperator) -> ChoiOperator:
    return choi_from_kraus(ch) if isinstance(ch, KrausChannel) else ch


def is_cptp(ch: KrausChannel | ChoiOperator, tol: float = CPTP_TOL) -> Check:
    if isinstance(ch, KrausChannel):
        acc = sum(k.conj().T @ k for k in ch.kraus)
        tp = float(np.abs(acc - np.eye(acc.shape[0])).max())
        return Check(tp <= tol, tp, {"psd": 0.0, "trace_preservation": tp})
    c = ch.op
    herm = c.hermitian_residual()
    lam = float(np.linalg.eigvalsh(0.5 * (c.matrix + c.matrix.conj().T))[0])
    psd = max(0.0, -lam, herm)
    red = partial_trace(c, ch.output_labels)
    red = permute_systems(red, ch.input_labels) if ch.input_labels else red
    tp = float(np.abs(red.matrix - np.eye(red.dim)).max())
    worst = max(psd, tp)
    return Check(worst <= tol, worst, {"psd": psd, "trace_preservation": tp})


def link_product(a: ChoiOperator, b: ChoiOperator) -> ChoiOperator:
    """Link product a * b over the labels the two operators share.

    Shared labels must be inputs of one operand and outputs of the other. The
    result's factors are a's unshared factors followed by b's.
    """
    shared = [l for l in a.labels if l in b.labels]
    for l in shared:
        ok = (l in a.input_labels and l in b.output_labels) or \
             (l in a.output_labels and l in b.input_labels)
        if not ok:
            raise SignatureError(f"label {l!r} is not wired output-to-input between operands")
        if a.dim_of([l]) != b.dim_of([l]):
            raise SignatureError(f"dimension mismatch on shared label {l!r}")
    rest_a = [l for l in a.labels if l not in shared]
    rest_b = [l for l in b.labels if l not in shared]
    ds = a.dim_of(shared)
    ra, rb = a.dim_of(rest_a), b.dim_of(rest_b)
    am = permute_systems(a.op, rest_a + shared).matrix.reshape(ra, ds, ra, ds)
    bm = permute_systems(b.op, shared + rest_b).matrix.reshape(ds, rb, ds, rb)
    out = np.einsum("iukv,ujvl->ijkl", am, bm, optimize=True).reshape(ra * rb, ra * rb)
    sig = a.op.signature.select(rest_a) + b.op.signature.select(rest_b)
    ins = tuple(l for l in a.input_labels + b.input_labels if l not in shared)
    outs = tuple(l for l in a.output_labels + b.output_labels if l not in shared)
    return ChoiOperator(LabeledOperator(sig, out), ins, outs)


# -- comb layouts ------------------------------------------------------------

@dataclass(frozen=True)
class CombLayout:
    """Wire structure of a comb: (output labels, input labels) of each step, t = 1..T."""
    steps: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    dims: tuple[tuple[str, int], ...]

    def __init__(self, steps, dims):
        steps = tuple((tuple(o), tuple(i)) for o, i in steps)
        dims = dict(dims)
        labels = [l for o, i in steps for l in o + i]
        if len(set(labels)) != len(labels):
            raise SignatureError(f"duplicate labels in comb layout {labels}")
        missing = [l for l in labels if l not in dims]
        if missing:
            raise SignatureError(f"no dimension for labels {missing}")
        if not steps:
            raise ValueError("a comb needs at least one step")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "dims", tuple((l, int(dims[l])) for l in labels))

    @property
    def T(self) -> int:
        return len(self.steps)

    def _d(self, labels) -> int:
        d = dict(self.dims)
        return int(np.prod([d[l] for l in labels], dtype=np.int64)) if labels else 1

    def dim_out(self, t: int) -> int:
        return self._d(self.steps[t - 1][0])

    def dim_in(self, t: int) -> int:
        return self._d(self.steps[t - 1][1])

    def labels(self) -> tuple[str, ...]:
        """Canonical order out_T, in_T, ..., out_1, in_1."""
        out = []
        for o, i in reversed(self.steps):
            out.extend(o)
            out.extend(i)
        return tuple(out)

    def signature(self) -> SystemSignature:
        d = dict(self.dims)
        return SystemSignature(tuple((l, d[l]) for l in self.labels()))

    @property
    def order(self) -> int:
        return self.signature().dim

    def level_order(self, t: int) -> int:
        """Order of the level-t comb (steps 1..t)."""
        return int(np.prod([self.dim_out(s) * self.dim_in(s) for s in range(1, t + 1)],
                           dtype=np.int64))

    def align(self, op: LabeledOperator) -> np.ndarray:
        """Matrix of ``op`` in this layout's canonical order."""
        if set(op.labels) != set(self.labels()):
            raise SignatureError(f"operator labels {op.labels} do not match layout {self.labels()}")
        aligned = permute_systems(op, self.labels())
        if aligned.signature != self.signature():
            raise SignatureError("operator dimensions do not match layout")
        return aligned.matrix


def _trace_left(x: np.ndarray, d: int) -> np.ndarray:
    n = x.shape[0] // d
    return np.einsum("aiaj->ij", x.reshape(d, n, d, n))


def is_comb(x: LabeledOperator | np.ndarray, layout: CombLayout, tol: float = COMB_TOL,
            normalization: float = 1.0) -> Check:
    """PSD plus Tr_{out_t} X_t = I_{in_t} (x) X_{t-1}, with X_0 = ``normalization``."""
    mat = layout.align(x) if isinstance(x, LabeledOperator) else np.asarray(x)
    herm = float(np.abs(mat - mat.conj().T).max()) if mat.size else 0.0
    mat = 0.5 * (mat + mat.conj().T)
    psd = max(0.0, -float(np.linalg.eigvalsh(mat)[0]))
    worst = max(psd, herm)
    levels = {}
    cur = mat
    for t in range(layout.T, 0, -1):
        red = _trace_left(cur, layout.dim_out(t))
        din = layout.dim_in(t)
        lower = _trace_left(red, din) / din
        res = float(np.abs(red - np.kron(np.eye(din), lower)).max())
        levels[t] = res
        worst = max(worst, res)
        cur = lower
    norm_res = abs(float(np.real(cur.reshape(-1)[0])) - normalization)
    worst = max(worst, norm_res)
    return Check(worst <= tol, worst, {"psd": psd, "levels": levels, "normalization": norm_res})


def tester_normalization_residual(total: np.ndarray, layout: CombLayout) -> tuple[float, dict]:
    """Worst residual of Sum Theta = I_{out_T} (x) G_T, Tr_{in_t} G_t = I_{out_{t-1}} (x) G_{t-1}, Tr G_1 = 1."""
    cur = 0.5 * (total + total.conj().T)
    worst = 0.0
    levels = {}
    for t in range(layout.T, 0, -1):
        dout = layout.dim_out(t)
        gamma = _trace_left(cur, dout) / dout
        res = float(np.abs(cur - np.kron(np.eye(dout), gamma)).max())
        levels[t] = res
        worst = max(worst, res)
        cur = _trace_left(gamma, layout.dim_in(t))
    norm_res = abs(float(np.real(cur.reshape(-1)[0])) - 1.0)
    levels[0] = norm_res
    return max(worst, norm_res), levels


def is_tester(elements: Sequence[LabeledOperator | np.ndarray], layout: CombLayout,
              tol: float = COMB_TOL) -> Check:
    mats = [layout.align(e) if isinstance(e, LabeledOperator) else np.asarray(e)
            for e in elements]
    psd = 0.0
    for m in mats:
        psd = max(psd, -float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]))
    norm, levels = tester_normalization_residual(sum(mats), layout)
    worst = max(psd, norm)
    return Check(worst <= tol, worst, {"psd": psd, "levels": levels})


# -- processes ---------------------------------------------------------------

class ProcessComb:
    """A T-step process; consecutive steps are wired through shared memory labels.

    Memory systems between steps t and t+1 are the labels that are outputs of
    step t and inputs of step t+1. The remaining inputs of step t form V_t and
    the remaining outputs form W_t.
    """

    def __init__(self, steps: Sequence[KrausChannel | ChoiOperator], name: str = ""):
        if not steps:
            raise ValueError("a process needs at least one step")
        self.name = name
        self._channels = tuple(steps)
        self.steps: tuple[ChoiOperator, ...] = tuple(as_choi(s) for s in steps)
        T = len(self.steps)
        mem = []
        for t in range(T - 1):
            a, b = self.steps[t], self.steps[t + 1]
            shared = tuple(l for l in a.output_labels if l in b.input_labels)
            for l in shared:
                if a.dim_of([l]) != b.dim_of([l]):
                    raise SignatureError(f"memory wire {l!r} has mismatched dimensions")
            mem.append(shared)
        self.memory: tuple[tuple[str, ...], ...] = tuple(mem)
        seen: dict[str, int] = {}
        for t, s in enumerate(self.steps):
            for l in s.labels:
                if l in seen and not (seen[l] == t - 1 and l in self.memory[t - 1]):
                    raise SignatureError(f"label {l!r} reused outside a memory wire")
                seen.setdefault(l, t)
        v, w = [], []
        for t, s in enumerate(self.steps):
            mem_in = self.memory[t - 1] if t > 0 else ()
            mem_out = self.memory[t] if t < T - 1 else ()
            v.append(tuple(l for l in s.input_labels if l not in mem_in))
            w.append(tuple(l for l in s.output_labels if l not in mem_out))
        self.v_labels = tuple(v)
        self.w_labels = tuple(w)

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def channels(self):
        return self._channels

    def step_dims(self) -> list[tuple[int, int, int]]:
        """(N_V, N_W, N_W') per step; N_W' of the last step is 1."""
        out = []
        for t, s in enumerate(self.steps):
            mem = self.memory[t] if t < self.T - 1 else ()
            out.append((s.dim_of(self.v_labels[t]), s.dim_of(self.w_labels[t]), s.dim_of(mem)))
        return out

    @cached_property
    def layout(self) -> CombLayout:
        dims = {}
        for s in self.steps:
            dims.update(s.op.signature.factors)
        return CombLayout([(self.w_labels[t], self.v_labels[t]) for t in range(self.T)], dims)

    def segment(self, start: int, stop: int) -> tuple[ChoiOperator, CombLayout]:
        """Composed Choi of steps start..stop (1-based, inclusive) and its layout.

        Boundary memory wires become an extra input of the first step and an
        extra output of the last step.
        """
        if not 1 <= start <= stop <= self.T:
            raise ValueError(f"invalid segment ({start}, {stop}) for T={self.T}")
        acc = self.steps[start - 1]
        for t in range(start, stop):
            acc = link_product(self.steps[t], acc)
        inner = {l for t in range(start - 1, stop - 1) for l in self.memory[t]}
        groups = []
        dims = {}
        for t in range(start - 1, stop):
            s = self.steps[t]
            dims.update(s.op.signature.factors)
            groups.append((tuple(l for l in s.output_labels if l not in inner),
                           tuple(l for l in s.input_labels if l not in inner)))
        layout = CombLayout(groups, dims)
        return acc.permuted(layout.labels()), layout

    @cached_property
    def choi(self) -> ChoiOperator:
        """Composed Choi operator in canonical order W_T, V_T, ..., W_1, V_1."""
        c, layout = self.segment(1, self.T)
        if layout != self.layout:
            raise SignatureError("boundary memory systems must be trivial")
        return c


def process_choi(p: ProcessComb) -> ChoiOperator:
    return p.choi


@dataclass(frozen=True)
class Ensemble:
    processes: tuple[ProcessComb, ...]
    priors: tuple[float, ...]

    def __init__(self, processes: Sequence[ProcessComb], priors: Sequence[float] | None = None):
        processes = tuple(processes)
        if len(processes) < 2:
            raise ValueError("an ensemble needs at least two processes")
        if priors is None:
            priors = [1.0 / len(processes)] * len(processes)
        priors = tuple(float(p) for p in priors)
        if len(priors) != len(processes):
            raise ValueError("one prior per process is required")
        if min(priors) < 0 or abs(sum(priors) - 1.0) > 1e-12:
            raise ValueError("priors must be nonnegative and sum to 1")
        ref = processes[0]
        for p in processes[1:]:
            if p.T != ref.T or p.layout != ref.layout:
                raise SignatureError("processes in an ensemble must share their wire structure")
        object.__setattr__(self, "processes", processes)
        object.__setattr__(self, "priors", priors)

    @property
    def M(self) -> int:
        return len(self.processes)

    @property
    def T(self) -> int:
        return self.processes[0].T

    @property
    def layout(self) -> CombLayout:
        return self.processes[0].layout

    def chois(self) -> list[np.ndarray]:
        return [p.choi.matrix for p in self.processes]


def tester_success_probability(e: Ensemble, tester: Sequence[LabeledOperator | np.ndarray],
                               tol: float = 1e-7) -> float:
    """Sum_m p_m Tr(C_m Theta_m) for a validated tester."""
    if len(tester) != e.M:
        raise ValueError(f"expected {e.M} tester elements, got {len(tester)}")
    layout = e.layout
    mats = [layout.align(t) if isinstance(t, LabeledOperator) else np.asarray(t) for t in tester]
    check = is_tester(mats, layout, tol)
    if not check.ok:
        raise ValueError(f"invalid tester (residual {check.residual:.3e})")
    return float(sum(p * np.real(np.vdot(c, th))
                     for p, c, th in zip(e.priors, e.chois(), mats)))


__all__ = [
    "CPTP_TOL", "COMB_TOL", "HERMITIAN_TOL", "Check", "KrausChannel", "ChoiOperator",
    "CombLayout", "ProcessComb", "Ensemble", "choi_from_kraus", "as_choi", "is_cptp",
    "link_product", "process_choi", "is_comb", "is_tester", "tester_normalization_residual",
    "tester_success_probability",
]
