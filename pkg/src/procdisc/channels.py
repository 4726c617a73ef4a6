"""Channel and process families: amplitude damping, correlated generalized AD
memory channels, channel position finding and a few generic test channels.

Step labels may contain a ``{t}`` placeholder which :func:`multishot` fills in
with the step index; labels without it get the index appended.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .combs import Ensemble, KrausChannel, ProcessComb
from .linalg import SystemSignature

RADICAND_TOL = 1e-12


@dataclass(frozen=True)
class AdParams:
    q: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"damping q must lie in [0, 1], got {self.q}")


@dataclass(frozen=True)
class GadParams:
    p_c: float
    nu: float
    n: float

    def __post_init__(self):
        if not 0.0 <= self.p_c <= 1.0:
            raise ValueError(f"memory degree p_c must lie in [0, 1], got {self.p_c}")
        if self.nu < 0 or self.n < 0:
            raise ValueError("nu and n must be nonnegative")

    @property
    def gamma(self) -> float:
        return self.n / (2 * self.n + 1)

    @property
    def omega(self) -> float:
        return float(np.exp(-(2 * self.n + 1) * self.nu))


def _qubits(labels) -> SystemSignature:
    return SystemSignature(tuple((l, 2) for l in labels))


def ad_kraus(q: float) -> tuple[np.ndarray, np.ndarray]:
    AdParams(q)
    e0 = np.array([[1.0, 0.0], [0.0, np.sqrt(1.0 - q)]])
    e1 = np.array([[0.0, np.sqrt(q)], [0.0, 0.0]])
    return e0, e1


def amplitude_damping(p: AdParams | float, in_label: str = "V",
                      out_label: str = "W") -> KrausChannel:
    q = p.q if isinstance(p, AdParams) else float(p)
    return KrausChannel(ad_kraus(q), _qubits([in_label]), _qubits([out_label]))


def _root(value: float, name: str) -> float:
    if value < -RADICAND_TOL:
        raise ValueError(f"radicand of {name} is negative ({value:.3e}); invalid parameters")
    return float(np.sqrt(max(value, 0.0)))


def gad_kraus(p: GadParams) -> list[np.ndarray]:
    g, w, n, nu = p.gamma, p.omega, p.n, p.nu
    e = [
        np.sqrt(g) * np.array([[1.0, 0.0], [0.0, np.sqrt(w)]]),
        np.sqrt(1 - g) * np.array([[np.sqrt(w), 0.0], [0.0, 1.0]]),
        np.sqrt(g) * np.array([[0.0, np.sqrt(1 - w)], [0.0, 0.0]]),
        np.sqrt(1 - g) * np.array([[0.0, 0.0], [np.sqrt(1 - w), 0.0]]),
    ]
    b = [np.zeros((4, 4)) for _ in range(5)]
    b[0][np.arange(4), np.arange(4)] = [np.sqrt(np.exp(-(n + 1) * nu)), 1.0, 1.0,
                                        np.sqrt(np.exp(-n * nu))]
    b[1][3, 0] = _root((1 - g) * (1 - w), "B_2")
    b[2][0, 3] = _root(g * (1 - w), "B_3")
    b[3][0, 0] = _root(g + w - g * w - np.exp(-(n + 1) * nu), "B_4")
    b[4][3, 3] = _root(1 - g + g * w - np.exp(-n * nu), "B_5")
    out = [np.sqrt(1 - p.p_c) * np.kron(ej, ek) for ej in e for ek in e]
    out += [np.sqrt(p.p_c) * bj for bj in b]
    return out


def generalized_ad_memory(p: GadParams, in_labels=("Wp_in", "V"),
                          out_labels=("Wp_out", "W")) -> KrausChannel:
    """Two uses of a generalized AD channel with correlated noise.

    The first tensor factor is the first use, the second factor the second use.
    In process wiring the first factor is the memory system W'.
    """
    return KrausChannel(gad_kraus(p), _qubits(in_labels), _qubits(out_labels))


def _fill(label: str, t: int) -> str:
    return label.format(t=t) if "{t}" in label else f"{label}{t}"


def relabel_step(ch: KrausChannel, t: int) -> KrausChannel:
    labels = ch.input_signature.labels + ch.output_signature.labels
    return ch.relabel({l: _fill(l, t) for l in labels})


def multishot(ch: KrausChannel, T: int, name: str = "") -> ProcessComb:
    """T independent uses of one channel as a T-step process without memory."""
    return ProcessComb([relabel_step(ch, t) for t in range(1, T + 1)], name=name)


def tensor_channel(channels) -> KrausChannel:
    """Tensor product of channels; factors keep their order."""
    kraus = [reduce(np.kron, ks) for ks in itertools.product(*(c.kraus for c in channels))]
    ins = reduce(lambda a, b: a + b, (c.input_signature for c in channels))
    outs = reduce(lambda a, b: a + b, (c.output_signature for c in channels))
    return KrausChannel(kraus, ins, outs)


def cpf_factors(M: int, q_B: float, q_T: float) -> list[list[KrausChannel]]:
    """Per hypothesis m, the M single-qubit AD factors (target in slot m)."""
    return [[amplitude_damping(q_T if j == m else q_B, f"V{{t}}_{j + 1}", f"W{{t}}_{j + 1}")
             for j in range(M)] for m in range(M)]


def cpf_ensemble(M: int, q_B: float, q_T: float, T: int = 1) -> Ensemble:
    """Channel position finding: slot m carries A_{q_T}, all others A_{q_B}."""
    if M < 2:
        raise ValueError("channel position finding needs M >= 2")
    procs = [multishot(tensor_channel(f), T, name=f"target@{m + 1}")
             for m, f in enumerate(cpf_factors(M, q_B, q_T))]
    return Ensemble(procs)


def cpf_factorization(M: int, q_B: float, q_T: float, T: int) -> list[list[list[KrausChannel]]]:
    """factorization[m][t] lists the AD factors of step t+1 of hypothesis m."""
    return [[[relabel_step(c, t) for c in f] for t in range(1, T + 1)]
            for f in cpf_factors(M, q_B, q_T)]


def memory_process(nus: list[float], p_c: float, n: float, name: str = "") -> ProcessComb:
    """Three-step memory process: step t applies G with parameter nus[t].

    The memory starts in |0><0| and is discarded after the last step.
    """
    T = len(nus)
    steps = []
    zero = np.array([[1.0], [0.0]])
    for t, nu in enumerate(nus, start=1):
        kraus = gad_kraus(GadParams(p_c, nu, n))
        ins, outs = [f"Wp{t - 1}", f"V{t}"], [f"Wp{t}", f"W{t}"]
        if t == 1:
            prep = np.kron(zero, np.eye(2))
            kraus = [k @ prep for k in kraus]
            ins = ins[1:]
        if t == T:
            kraus = [np.kron(np.eye(2)[[b]], np.eye(2)) @ k for k in kraus for b in range(2)]
            outs = outs[1:]
        steps.append(KrausChannel(kraus, _qubits(ins), _qubits(outs)))
    return ProcessComb(steps, name=name)


def memory_ensemble(nu0: float, dnu: float, p_c: float, n: float, M: int = 3) -> Ensemble:
    """Hypothesis m has the perturbed channel (nu0 + dnu) at step m, nu0 elsewhere."""
    procs = [memory_process([nu0 + dnu if t == m else nu0 for t in range(M)], p_c, n,
                          name=f"perturbed@{m + 1}") for m in range(M)]
    return Ensemble(procs)


# -- generic helpers -----------------------------------------------------------

def identity_channel(dim: int, in_label: str = "V", out_label: str = "W") -> KrausChannel:
    return KrausChannel([np.eye(dim)], [(in_label, dim)], [(out_label, dim)])


def unitary_channel(u, in_label: str = "V", out_label: str = "W") -> KrausChannel:
    u = np.asarray(u, dtype=complex)
    return KrausChannel([u], [(in_label, u.shape[1])], [(out_label, u.shape[0])])


def replacement_channel(sigma, in_dim: int | None = None, in_label: str = "V",
                        out_label: str = "W") -> KrausChannel:
    """rho -> Tr(rho) sigma."""
    sigma = np.asarray(sigma, dtype=complex)
    d_out = sigma.shape[0]
    d_in = d_out if in_dim is None else in_dim
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    kraus = [np.sqrt(max(wi, 0.0)) * np.outer(v[:, i], np.eye(d_in)[j])
             for i, wi in enumerate(w) if wi > 1e-15 for j in range(d_in)]
    return KrausChannel(kraus, [(in_label, d_in)], [(out_label, d_out)])


def random_channel(seed: int, dim: int = 2, n_kraus: int = 2, in_label: str = "V",
                   out_label: str = "W") -> KrausChannel:
    """Random channel from a Haar-like isometry dim -> dim * n_kraus."""
    kraus = _random_kraus(np.random.default_rng(seed), dim, dim, n_kraus)
    return KrausChannel(kraus, [(in_label, dim)], [(out_label, dim)])


def random_qubit_channel(seed: int, n_kraus: int = 2, in_label: str = "V",
                         out_label: str = "W") -> KrausChannel:
    return random_channel(seed, 2, n_kraus, in_label, out_label)


def _random_kraus(rng, d_in: int, d_out: int, n_kraus: int) -> list[np.ndarray]:
    g = rng.normal(size=(d_out * n_kraus, d_in)) + 1j * rng.normal(size=(d_out * n_kraus, d_in))
    q, r = np.linalg.qr(g)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return [q[i * d_out:(i + 1) * d_out, :] for i in range(n_kraus)]


def random_process(seed: int, T: int = 2, dim: int = 2, mem_dim: int = 2,
                   n_kraus: int = 2) -> ProcessComb:
    """Random T-step process with wires V_t, W_t of order ``dim`` and memory of order ``mem_dim``."""
    rng = np.random.default_rng(seed)
    steps = []
    for t in range(1, T + 1):
        ins = ([(f"Wp{t - 1}", mem_dim)] if t > 1 else []) + [(f"V{t}", dim)]
        outs = ([(f"Wp{t}", mem_dim)] if t < T else []) + [(f"W{t}", dim)]
        d_in = int(np.prod([d for _, d in ins]))
        d_out = int(np.prod([d for _, d in outs]))
        steps.append(KrausChannel(_random_kraus(rng, d_in, d_out, n_kraus), ins, outs))
    return ProcessComb(steps, name=f"random{seed}")
