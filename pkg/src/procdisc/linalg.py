"""Dense operators on labeled tensor-product spaces.

Every operator carries an ordered list of ``(label, dim)`` factors. Matrix
indices are row-major with the leftmost factor most significant, so for a
signature ``[("A", dA), ("B", dB)]`` the basis vector ``|a>|b>`` sits at
index ``a * dB + b``.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from math import prod
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10


class SignatureError(ValueError):
    """Raised when system labels or dimensions are inconsistent."""


class NotHermitianError(ValueError):
    """Raised when an operator asserted Hermitian is not, beyond tolerance."""


@dataclass(frozen=True)
class SystemSignature:
    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        factors = tuple((str(lab), int(d)) for lab, d in self.factors)
        labels = [lab for lab, _ in factors]
        if len(set(labels)) != len(labels):
            raise SignatureError(f"duplicate labels in signature {labels}")
        for lab, d in factors:
            if d < 1:
                raise SignatureError(f"factor {lab!r} has non-positive dimension {d}")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def of(cls, *factors: tuple[str, int]) -> "SystemSignature":
        return cls(tuple(factors))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def dim(self) -> int:
        return prod(self.dims)

    def __len__(self) -> int:
        return len(self.factors)

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SignatureError(f"unknown label {label!r}; signature has {self.labels}") from None

    def dim_of(self, labels: Iterable[str]) -> int:
        d = dict(self.factors)
        return prod(d[lab] for lab in labels)

    def select(self, labels: Iterable[str]) -> "SystemSignature":
        """Sub-signature with the given labels, in the given order."""
        d = dict(self.factors)
        out = []
        for lab in labels:
            if lab not in d:
                raise SignatureError(f"unknown label {lab!r}; signature has {self.labels}")
            out.append((lab, d[lab]))
        return SystemSignature(tuple(out))

    def without(self, labels: Iterable[str]) -> "SystemSignature":
        drop = set(labels)
        return SystemSignature(tuple(f for f in self.factors if f[0] not in drop))

    def __add__(self, other: "SystemSignature") -> "SystemSignature":
        return SystemSignature(self.factors + other.factors)


class LabeledOperator:
    """Square complex matrix acting on a labeled tensor-product space.

    The matrix is copied on construction and marked read-only, so instances
    can be shared freely.
    """

    __slots__ = ("signature", "matrix")

    def __init__(self, signature: SystemSignature | Sequence[tuple[str, int]], matrix):
        if not isinstance(signature, SystemSignature):
            signature = SystemSignature(tuple(signature))
        mat = np.array(matrix, dtype=complex)
        if mat.ndim == 0:
            mat = mat.reshape(1, 1)
        n = signature.dim
        if mat.shape != (n, n):
            raise SignatureError(
                f"matrix shape {mat.shape} does not match signature dimension {n}")
        mat.setflags(write=False)
        self.signature = signature
        self.matrix = mat

    def __repr__(self):
        return f"LabeledOperator({list(self.signature.factors)}, dim={self.dim})"

    @property
    def labels(self) -> tuple[str, ...]:
        return self.signature.labels

    @property
    def dims(self) -> tuple[int, ...]:
        return self.signature.dims

    @property
    def dim(self) -> int:
        return self.signature.dim

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def dagger(self) -> "LabeledOperator":
        return LabeledOperator(self.signature, self.matrix.conj().T)

    def hermitian_residual(self) -> float:
        if self.matrix.size == 0:
            return 0.0
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermitian_residual() <= tol

    def hermitian_part(self, tol: float = HERMITIAN_TOL) -> np.ndarray:
        """Symmetrized matrix; raises if the anti-Hermitian part exceeds ``tol``."""
        res = self.hermitian_residual()
        if res > tol:
            raise NotHermitianError(f"operator is not Hermitian (residual {res:.3e} > {tol:.1e})")
        return 0.5 * (self.matrix + self.matrix.conj().T)

    def _check_same(self, other: "LabeledOperator"):
        if other.signature != self.signature:
            raise SignatureError(
                f"signature mismatch: {self.signature.factors} vs {other.signature.factors}")

    def __add__(self, other: "LabeledOperator") -> "LabeledOperator":
        self._check_same(other)
        return LabeledOperator(self.signature, self.matrix + other.matrix)

    def __sub__(self, other: "LabeledOperator") -> "LabeledOperator":
        self._check_same(other)
        return LabeledOperator(self.signature, self.matrix - other.matrix)

    def __mul__(self, scalar) -> "LabeledOperator":
        return LabeledOperator(self.signature, self.matrix * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other: "LabeledOperator") -> "LabeledOperator":
        self._check_same(other)
        return LabeledOperator(self.signature, self.matrix @ other.matrix)

    def allclose(self, other: "LabeledOperator", atol: float = 1e-10) -> bool:
        """Compare up to factor order: ``other`` is permuted to ``self``'s order."""
        if set(other.labels) != set(self.labels):
            return False
        other = permute_systems(other, self.labels)
        if other.signature != self.signature:
            return False
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0))


def identity(signature: SystemSignature | Sequence[tuple[str, int]]) -> LabeledOperator:
    if not isinstance(signature, SystemSignature):
        signature = SystemSignature(tuple(signature))
    return LabeledOperator(signature, np.eye(signature.dim))


def kron(a: LabeledOperator, b: LabeledOperator) -> LabeledOperator:
    """Tensor product; the result's factors are ``a``'s followed by ``b``'s."""
    clash = set(a.labels) & set(b.labels)
    if clash:
        raise SignatureError(f"kron operands share labels {sorted(clash)}")
    return LabeledOperator(a.signature + b.signature, np.kron(a.matrix, b.matrix))


def kron_all(ops: Iterable[LabeledOperator]) -> LabeledOperator:
    ops = list(ops)
    out = ops[0]
    for op in ops[1:]:
        out = kron(out, op)
    return out


def _as_tensor(a: LabeledOperator) -> np.ndarray:
    return a.matrix.reshape(a.dims + a.dims)


def permute_systems(a: LabeledOperator, new_order: Sequence[str]) -> LabeledOperator:
    new_order = tuple(new_order)
    if sorted(new_order) != sorted(a.labels) or len(set(new_order)) != len(new_order):
        raise SignatureError(f"{new_order} is not a permutation of {a.labels}")
    if new_order == a.labels:
        return a
    perm = [a.signature.index(lab) for lab in new_order]
    k = len(perm)
    t = _as_tensor(a).transpose(perm + [p + k for p in perm])
    sig = a.signature.select(new_order)
    return LabeledOperator(sig, t.reshape(sig.dim, sig.dim))


def partial_trace(a: LabeledOperator, labels: Iterable[str]) -> LabeledOperator:
    """Trace out ``labels``; tracing everything yields a 1x1 operator."""
    labels = list(dict.fromkeys(labels))
    for lab in labels:
        a.signature.index(lab)
    if not labels:
        return a
    keep = [lab for lab in a.labels if lab not in labels]
    k = len(a.labels)
    letters = list(string.ascii_letters[:2 * k])
    row = letters[:k]
    col = letters[k:]
    for lab in labels:
        i = a.signature.index(lab)
        col[i] = row[i]
    out_idx = [row[a.signature.index(lab)] for lab in keep] + \
              [col[a.signature.index(lab)] for lab in keep]
    expr = "".join(row) + "".join(col) + "->" + "".join(out_idx)
    t = np.einsum(expr, _as_tensor(a))
    sig = a.signature.select(keep)
    return LabeledOperator(sig, t.reshape(sig.dim, sig.dim))


def partial_transpose(a: LabeledOperator, labels: Iterable[str]) -> LabeledOperator:
    labels = list(labels)
    if not labels:
        return a
    k = len(a.labels)
    axes = list(range(2 * k))
    for lab in labels:
        i = a.signature.index(lab)
        axes[i], axes[i + k] = axes[i + k], axes[i]
    t = _as_tensor(a).transpose(axes)
    return LabeledOperator(a.signature, t.reshape(a.dim, a.dim))


def relabel(a: LabeledOperator, mapping: dict[str, str]) -> LabeledOperator:
    sig = SystemSignature(tuple((mapping.get(lab, lab), d) for lab, d in a.signature.factors))
    return LabeledOperator(sig, a.matrix)


def embed(a: LabeledOperator, signature: SystemSignature) -> LabeledOperator:
    """Tensor ``a`` with identities so it acts on ``signature`` (in that order)."""
    rest = signature.without(a.labels)
    for lab, d in a.signature.factors:
        if signature.dim_of([lab]) != d:
            raise SignatureError(f"dimension mismatch for label {lab!r}")
    out = kron(a, identity(rest)) if len(rest) else a
    return permute_systems(out, signature.labels)


def min_eigenvalue(a: LabeledOperator, tol: float = HERMITIAN_TOL) -> float:
    return float(np.linalg.eigvalsh(a.hermitian_part(tol))[0])


def is_psd(a: LabeledOperator, tol: float = 1e-10) -> bool:
    return min_eigenvalue(a) >= -tol


def max_entangled_projector(dim: int, labels: tuple[str, str]) -> LabeledOperator:
    """Unnormalized projector onto sum_n |n>|n> on the two labeled factors."""
    if dim < 1:
        raise SignatureError("dimension must be positive")
    v = np.eye(dim).reshape(-1)
    return LabeledOperator(SystemSignature(((labels[0], dim), (labels[1], dim))), np.outer(v, v))


def psd_sqrt_pinv(mat: np.ndarray, rel_cutoff: float = 1e-12) -> np.ndarray:
    """Pseudo-inverse square root of a PSD matrix on its numerical support."""
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    cut = rel_cutoff * max(w[-1], 0.0) if w.size else 0.0
    inv = np.zeros_like(w)
    good = w > cut
    inv[good] = 1.0 / np.sqrt(w[good])
    return (v * inv) @ v.conj().T
