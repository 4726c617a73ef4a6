"""Block Hermitian SDPs in standard equality form.

    minimize / maximize   sum_b Re Tr(C_b X_b)
    subject to            sum_b Re Tr(A_ib X_b) = b_i,   X_b >= 0.

Coefficients are stored row-wise per block as sparse matrices whose row ``i``
is the row-major ``vec(A_ib)``. Families of rows generated from a Hermitian
matrix equation ``sum_b L_b(X_b) = R`` keep their row bookkeeping so the
matrix-valued Lagrange multiplier can be rebuilt after solving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-10


# -- sparse linear maps on row-major vec(X) ---------------------------------

def identity_map(n: int) -> sp.csr_matrix:
    return sp.identity(n * n, dtype=complex, format="csr")


def identity_left_map(d_left: int, n_right: int) -> sp.csr_matrix:
    """vec(G) -> vec(I_{d_left} (x) G) for G of order ``n_right``."""
    n = d_left * n_right
    w, i, j = np.meshgrid(np.arange(d_left), np.arange(n_right), np.arange(n_right),
                          indexing="ij")
    rows = ((w * n_right + i) * n + (w * n_right + j)).ravel()
    cols = np.broadcast_to(i * n_right + j, w.shape).ravel()
    return sp.csr_matrix((np.ones(rows.size, dtype=complex), (rows, cols)),
                         shape=(n * n, n_right * n_right))


def trace_left_map(d_left: int, n_right: int) -> sp.csr_matrix:
    """vec(X) -> vec(Tr_left X) for X on (left, right), left factor first."""
    return identity_left_map(d_left, n_right).T.tocsr()


def trace_map(n: int) -> sp.csr_matrix:
    cols = np.arange(n) * (n + 1)
    return sp.csr_matrix((np.ones(n, dtype=complex), (np.zeros(n, dtype=int), cols)),
                         shape=(1, n * n))


def _transpose_perm(n: int) -> np.ndarray:
    return np.arange(n * n).reshape(n, n).T.ravel()


def _hermitize_rows(rows: sp.csr_matrix, n: int) -> sp.csr_matrix:
    """Rows l (functionals X -> l.vec(X)) -> rows vec(A)^T with Re Tr(AX) = Re l.vec(X)."""
    perm = _transpose_perm(n)
    swapped = rows[:, perm]
    out = 0.5 * (rows.conj() + swapped)
    out = out.tocsr()
    out.eliminate_zeros()
    return out


@dataclass
class EqualityFamily:
    name: str
    start: int
    stop: int
    order: int
    # (a, b, part) for each row; part 0 = real, 1 = imaginary
    entries: np.ndarray = field(repr=False)


class HermitianSdp:
    """A block SDP over Hermitian matrices with linear equality constraints."""

    def __init__(self, sense: str = "min"):
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.sense = sense
        self.blocks: dict[str, int] = {}
        self.objective: dict[str, np.ndarray] = {}
        self.families: dict[str, EqualityFamily] = {}
        self._chunks: list[tuple[dict[str, sp.csr_matrix], np.ndarray]] = []
        self._m = 0
        self._cache = None

    # -- construction -------------------------------------------------------

    def add_block(self, name: str, order: int) -> str:
        if name in self.blocks:
            raise ValueError(f"duplicate block {name!r}")
        if order < 1:
            raise ValueError("block order must be positive")
        self.blocks[name] = int(order)
        self._cache = None
        return name

    def set_objective(self, name: str, coeff) -> None:
        n = self.blocks[name]
        c = np.array(coeff, dtype=complex).reshape(n, n)
        _check_hermitian(c, f"objective coefficient of block {name!r}")
        self.objective[name] = 0.5 * (c + c.conj().T)
        self._cache = None

    def add_constraint(self, coeffs: dict, rhs: float) -> int:
        """Append ``sum_b Re Tr(A_b X_b) = rhs`` with Hermitian ``A_b``."""
        rows = {}
        for name, a in coeffs.items():
            n = self.blocks[name]
            a = np.array(a, dtype=complex).reshape(n, n)
            _check_hermitian(a, f"constraint coefficient of block {name!r}")
            a = 0.5 * (a + a.conj().T)
            rows[name] = sp.csr_matrix(a.reshape(1, -1))
        self._chunks.append((rows, np.array([float(rhs)])))
        self._m += 1
        self._cache = None
        return self._m - 1

    def add_equality(self, name: str, terms: dict, rhs) -> EqualityFamily:
        """Append the Hermitian matrix equation ``sum_b L_b(vec X_b) = R``.

        ``terms`` maps block names to sparse ``(k*k, n_b*n_b)`` matrices acting on
        row-major vectorizations; each ``L_b`` must send Hermitian matrices to
        Hermitian matrices. One real row per independent real parameter of R.
        """
        if name in self.families:
            raise ValueError(f"duplicate equality family {name!r}")
        rhs = np.array(rhs, dtype=complex)
        k = rhs.shape[0]
        _check_hermitian(rhs, f"right-hand side of {name!r}")
        iu, ju = np.triu_indices(k)
        strict = iu != ju
        re_idx = iu * k + ju
        im_idx = (iu * k + ju)[strict]
        rows = {}
        for bname, lmap in terms.items():
            n = self.blocks[bname]
            lmap = sp.csr_matrix(lmap, dtype=complex)
            if lmap.shape != (k * k, n * n):
                raise ValueError(f"map for block {bname!r} has shape {lmap.shape}, "
                                 f"expected {(k * k, n * n)}")
            re_rows = lmap[re_idx]
            im_rows = -1j * lmap[im_idx]
            rows[bname] = _hermitize_rows(sp.vstack([re_rows, im_rows]).tocsr(), n)
        b = np.concatenate([rhs[iu, ju].real, rhs[iu[strict], ju[strict]].imag])
        entries = np.concatenate([
            np.stack([iu, ju, np.zeros_like(iu)], axis=1),
            np.stack([iu[strict], ju[strict], np.ones(strict.sum(), dtype=int)], axis=1),
        ])
        fam = EqualityFamily(name, self._m, self._m + b.size, k, entries)
        self.families[name] = fam
        self._chunks.append((rows, b))
        self._m += b.size
        self._cache = None
        return fam

    # -- views --------------------------------------------------------------

    @property
    def num_constraints(self) -> int:
        return self._m

    def _assemble(self):
        if self._cache is None:
            coeff = {}
            for name, n in self.blocks.items():
                parts = []
                for rows, b in self._chunks:
                    r = rows.get(name)
                    parts.append(r if r is not None else sp.csr_matrix((b.size, n * n), dtype=complex))
                if parts:
                    coeff[name] = sp.vstack(parts).tocsr()
                else:
                    coeff[name] = sp.csr_matrix((0, n * n), dtype=complex)
            rhs = np.concatenate([b for _, b in self._chunks]) if self._chunks else np.zeros(0)
            obj = {name: self.objective.get(name, np.zeros((n, n), dtype=complex))
                   for name, n in self.blocks.items()}
            self._cache = (coeff, rhs, obj)
        return self._cache

    @property
    def coefficients(self) -> dict[str, sp.csr_matrix]:
        return self._assemble()[0]

    @property
    def rhs(self) -> np.ndarray:
        return self._assemble()[1]

    def objective_matrices(self) -> dict[str, np.ndarray]:
        return self._assemble()[2]

    def constraint(self, i: int) -> dict[str, np.ndarray]:
        """Dense Hermitian coefficients of row ``i`` (blocks it touches)."""
        out = {}
        for name, mat in self.coefficients.items():
            row = mat.getrow(i)
            if row.nnz:
                n = self.blocks[name]
                out[name] = row.toarray().reshape(n, n)
        return out

    def realified_order(self) -> int:
        return 2 * sum(self.blocks.values())

    def evaluate(self, x: dict[str, np.ndarray]) -> tuple[float, np.ndarray]:
        """Objective value and constraint values ``A(X)`` at a point."""
        coeff, _, obj = self._assemble()
        val = sum(float(np.real(np.vdot(obj[k], x[k]))) for k in self.blocks)
        ax = np.zeros(self._m)
        for name, mat in coeff.items():
            ax += np.real(mat.conj() @ np.asarray(x[name], dtype=complex).reshape(-1))
        return val, ax


def _check_hermitian(a: np.ndarray, what: str):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be square")
    if a.size and np.abs(a - a.conj().T).max() > HERMITIAN_TOL * max(1.0, np.abs(a).max()):
        raise ValueError(f"{what} is not Hermitian")
