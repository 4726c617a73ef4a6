"""Primal-dual interior-point method for block Hermitian SDPs.

Infeasible-start path following with Mehrotra's predictor-corrector and the
HKM search direction. The Schur complement is formed densely and factored by
Cholesky. When every coefficient is invariant under complex conjugation the
problem is solved over real symmetric matrices, which is exact (averaging a
solution with its conjugate keeps it optimal) and much cheaper.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import HermitianSdp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"


DIVERGENCE = 1e12


class SdpSizeError(ValueError):
    """Raised when a problem exceeds the configured realified-order cap."""


class SdpFailure(RuntimeError):
    """Raised by callers that require an optimal solve and did not get one."""

    def __init__(self, message: str, solution: "SdpSolution | None" = None):
        super().__init__(message)
        self.solution = solution


_listeners: list = []


def add_solve_listener(fn) -> None:
    """Register ``fn(solution)``, called after every solve (for auditing)."""
    _listeners.append(fn)


def remove_solve_listener(fn) -> None:
    if fn in _listeners:
        _listeners.remove(fn)


@dataclass(frozen=True)
class SdpSettings:
    tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.98
    max_order: int = 10_000
    max_constraints: int = 12_000  # bounds the dense Schur complement (m x m)
    presolve_tol: float = 1e-10


@dataclass
class SdpSolution:
    status: str
    objective: float
    primal_objective: float
    dual_objective: float
    X: dict[str, np.ndarray]
    S: dict[str, np.ndarray]  # dual slack: C - A^T y (min) or A^T y - C (max), PSD
    y: np.ndarray
    primal_infeasibility: float
    dual_infeasibility: float
    gap: float
    iterations: int
    real_mode: bool
    dropped_rows: np.ndarray
    history: list[dict] = field(default_factory=list, repr=False)
    problem: HermitianSdp | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def residuals(self) -> dict[str, float]:
        return {"primal": self.primal_infeasibility, "dual": self.dual_infeasibility,
                "gap": self.gap}

    def multiplier(self, family: str) -> np.ndarray:
        """Hermitian multiplier Y of an equality family, ``sum_i y_i f_i = Re Tr(Y L(X))``.

        Sign convention: for a ``max`` problem ``A^T y - C`` is PSD, for ``min``
        ``C - A^T y`` is PSD.
        """
        fam = self.problem.families[family]
        y = self.y[fam.start:fam.stop]
        k = fam.order
        out = np.zeros((k, k), dtype=complex)
        a, b, part = fam.entries.T
        diag = a == b
        out[a[diag], b[diag]] = y[diag]
        off = ~diag
        re = off & (part == 0)
        im = off & (part == 1)
        out[a[re], b[re]] += 0.5 * y[re]
        out[a[im], b[im]] += 0.5j * y[im]
        upper = np.triu(out, 1)
        return np.diag(np.diag(out)) + upper + upper.conj().T


class _Group:
    """Blocks sharing one coefficient matrix; their Schur terms are summed."""

    def __init__(self, members, rows, mat, cols, n):
        self.members = members
        self.rows = rows
        self.mat = mat  # csr, len(rows) x len(cols)
        self.cols = cols
        self.n = n
        self.a_idx = cols // n
        self.b_idx = cols % n


def _real_mode(coeff, obj, b, eps=1e-14):
    """Return (is_real, keep_row_mask) for conjugation invariance."""
    m = b.size
    for c in obj.values():
        if np.abs(c.imag).max(initial=0.0) > eps * max(1.0, np.abs(c).max(initial=0.0)):
            return False, None
    re_max = np.zeros(m)
    im_max = np.zeros(m)
    for mat in coeff.values():
        if mat.nnz == 0:
            continue
        r = abs(sp.csr_matrix(mat.real)).max(axis=1).toarray().ravel()
        i = abs(sp.csr_matrix(mat.imag)).max(axis=1).toarray().ravel()
        re_max = np.maximum(re_max, r)
        im_max = np.maximum(im_max, i)
    real_rows = im_max <= eps * np.maximum(1.0, re_max)
    imag_rows = (re_max <= eps * np.maximum(1.0, im_max)) & (np.abs(b) <= eps)
    if np.all(real_rows | imag_rows):
        return True, real_rows
    return False, None


def _presolve(coeff, b, tol):
    """Drop zero and linearly dependent rows; return kept indices and row norms."""
    m = b.size
    gram = np.zeros((m, m))
    for mat in coeff.values():
        if mat.nnz:
            g = mat.conj() @ mat.T
            gram += np.real(g.toarray())
    norms = np.sqrt(np.maximum(np.diag(gram), 0.0))
    nonzero = norms > 1e-14
    if np.any(~nonzero & (np.abs(b) > 1e-12)):
        raise ValueError("constraint with zero coefficients but nonzero right-hand side")
    idx = np.flatnonzero(nonzero)
    if idx.size == 0:
        return idx, norms
    g = gram[np.ix_(idx, idx)] / np.outer(norms[idx], norms[idx])
    _, r, piv = sla.qr(g, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > tol * d[0]))
    keep = np.sort(idx[piv[:rank]])
    return keep, norms


def _psd_step(x, dx, frac):
    """Largest step in [0, 1] keeping x + a dx PSD, shortened by ``frac``."""
    try:
        lo = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return 0.0
    w = sla.solve_triangular(lo, dx, lower=True)
    w = sla.solve_triangular(lo, w.conj().T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (w + w.conj().T))[0]
    if lam >= 0:
        return 1.0
    return min(1.0, frac * (-1.0 / lam))


def _sym(a):
    return 0.5 * (a + a.conj().T)


def solve(problem: HermitianSdp, settings: SdpSettings | None = None) -> SdpSolution:
    """Solve ``problem``; status is ``optimal`` only when all residuals meet ``tol``."""
    st = settings or SdpSettings()
    if problem.realified_order() > st.max_order:
        raise SdpSizeError(
            f"realified order {problem.realified_order()} exceeds cap {st.max_order}")
    coeff_all, b_all, obj_user = problem._assemble()
    names = list(problem.blocks)
    orders = [problem.blocks[k] for k in names]
    sign = 1.0 if problem.sense == "min" else -1.0
    obj = {k: sign * obj_user[k] for k in names}

    real, real_rows = _real_mode(coeff_all, obj, b_all)
    if real:
        active = np.flatnonzero(real_rows)
        coeff = {k: sp.csr_matrix(coeff_all[k][active].real) for k in names}
        cmat = [np.ascontiguousarray(obj[k].real) for k in names]
    else:
        active = np.arange(b_all.size)
        coeff = {k: coeff_all[k] for k in names}
        cmat = [obj[k] for k in names]
    b_act = b_all[active]

    keep, norms = _presolve(coeff, b_act, st.presolve_tol)
    scale = norms[keep]
    amat = [sp.csr_matrix(coeff[k][keep].multiply(1.0 / scale[:, None])) for k in names]
    b = b_act[keep] / scale
    dropped = np.setdiff1d(np.arange(b_all.size), active[keep])
    m = b.size
    if m > st.max_constraints:
        raise SdpSizeError(f"{m} independent constraints exceed cap {st.max_constraints}")
    dtype = float if real else complex

    groups = _build_groups(amat, orders)
    n_tot = sum(orders)

    # initial point
    x, s = [], []
    bnorm = np.linalg.norm(b)
    cnorm = np.sqrt(sum(np.linalg.norm(c) ** 2 for c in cmat))
    for j, n in enumerate(orders):
        a = amat[j]
        rn = np.sqrt(np.asarray(abs(a.multiply(a.conj())).sum(axis=1)).ravel())
        touched = rn > 0
        if touched.any():
            xi = max(10.0, np.sqrt(n), n * np.max((1 + np.abs(b[touched])) / (1 + rn[touched])))
            eta = max(10.0, np.sqrt(n), rn.max(), np.linalg.norm(cmat[j]))
        else:
            xi = eta = max(10.0, np.sqrt(n), np.linalg.norm(cmat[j]))
        x.append(xi * np.eye(n, dtype=dtype))
        s.append((1.0 + eta) * np.eye(n, dtype=dtype))
    y = np.zeros(m)

    def a_op(mats):
        out = np.zeros(m)
        for j, mat in enumerate(mats):
            v = amat[j].conj() @ mats[j].reshape(-1) if not real else amat[j] @ mats[j].reshape(-1)
            out += np.real(v)
        return out

    def at_op(vec):
        return [(amat[j].T @ vec).reshape(n, n) for j, n in enumerate(orders)]

    history = []
    status = MAX_ITERATIONS
    pobj = dobj = np.nan
    pinf = dinf = gap = np.inf
    it = 0
    small_steps = 0
    for it in range(st.max_iter + 1):
        aty = at_op(y)
        rp = b - a_op(x)
        rd = [cmat[j] - s[j] - aty[j] for j in range(len(orders))]
        pobj = sum(float(np.real(np.vdot(cmat[j], x[j]))) for j in range(len(orders)))
        dobj = float(b @ y)
        xs = sum(float(np.real(np.vdot(x[j], s[j]))) for j in range(len(orders)))
        mu = xs / n_tot
        pinf = np.linalg.norm(rp) / (1 + bnorm)
        dinf = np.sqrt(sum(np.linalg.norm(r) ** 2 for r in rd)) / (1 + cnorm)
        denom = 1 + abs(pobj) + abs(dobj)
        gap = max(abs(pobj - dobj), abs(xs)) / denom
        history.append({"iter": it, "pobj": sign * pobj, "dobj": sign * dobj,
                        "pinf": pinf, "dinf": dinf, "gap": gap})
        log.debug("it %3d pobj %.10e dobj %.10e pinf %.2e dinf %.2e gap %.2e",
                  it, pobj, dobj, pinf, dinf, gap)
        if not (np.isfinite(pobj) and np.isfinite(dobj) and np.isfinite(mu)):
            status = NUMERICAL_FAILURE
            break
        if pinf <= st.tol and dinf <= st.tol and gap <= st.tol:
            status = OPTIMAL
            break
        if it == st.max_iter:
            status = MAX_ITERATIONS
            break
        scale_xy = max(max(np.abs(xj).max() for xj in x), np.abs(y).max() if m else 0.0)
        if scale_xy > DIVERGENCE:
            log.warning("iterates diverge (max entry %.2e); the problem looks infeasible "
                        "or unbounded", scale_xy)
            status = NUMERICAL_FAILURE
            break
        try:
            z = []
            for j in range(len(orders)):
                cf = sla.cho_factor(s[j], lower=True)
                z.append(sla.cho_solve(cf, np.eye(orders[j], dtype=dtype)))
                z[j] = _sym(z[j])
            schur = _schur(groups, x, z, m, real)
            solve_schur = _factor(schur)
        except (np.linalg.LinAlgError, ValueError):
            status = NUMERICAL_FAILURE
            break

        def direction(rcz):
            # rcz[j] = R_c Z for the complementarity right-hand side R_c
            t = [rcz[j] - x[j] @ rd[j] @ z[j] for j in range(len(orders))]
            dy = solve_schur(rp - a_op(t))
            ads = at_op(dy)
            ds = [rd[j] - ads[j] for j in range(len(orders))]
            dx = [_sym(rcz[j] - x[j] @ ds[j] @ z[j]) for j in range(len(orders))]
            return dx, dy, ds

        dx, dy, ds = direction([-xj for xj in x])
        if not _finite(dx, dy, ds):
            status = NUMERICAL_FAILURE
            break
        ap = min(_psd_step(x[j], dx[j], 1.0) for j in range(len(orders)))
        ad = min(_psd_step(s[j], ds[j], 1.0) for j in range(len(orders)))
        mu_aff = sum(float(np.real(np.vdot(x[j] + ap * dx[j], s[j] + ad * ds[j])))
                     for j in range(len(orders))) / n_tot
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0

        rcz = [sigma * mu * z[j] - x[j] - dx[j] @ ds[j] @ z[j] for j in range(len(orders))]
        dx, dy, ds = direction(rcz)
        if not _finite(dx, dy, ds):
            status = NUMERICAL_FAILURE
            break
        ap = min(_psd_step(x[j], dx[j], st.step_fraction) for j in range(len(orders)))
        ad = min(_psd_step(s[j], ds[j], st.step_fraction) for j in range(len(orders)))
        if max(ap, ad) < 1e-10:
            small_steps += 1
            if small_steps >= 3:
                status = NUMERICAL_FAILURE
                break
        else:
            small_steps = 0
        x = [_sym(x[j] + ap * dx[j]) for j in range(len(orders))]
        s = [_sym(s[j] + ad * ds[j]) for j in range(len(orders))]
        y = y + ad * dy

    y_full = np.zeros(b_all.size)
    y_full[active[keep]] = y / scale
    user = 1.0 if problem.sense == "min" else -1.0
    sol = SdpSolution(
        status=status,
        objective=sign * pobj,
        primal_objective=sign * pobj,
        dual_objective=sign * dobj,
        X={k: np.asarray(x[j], dtype=complex) for j, k in enumerate(names)},
        S={k: np.asarray(s[j], dtype=complex) for j, k in enumerate(names)},
        y=user * y_full,
        primal_infeasibility=float(pinf),
        dual_infeasibility=float(dinf),
        gap=float(gap),
        iterations=it,
        real_mode=real,
        dropped_rows=dropped,
        history=history,
        problem=problem,
    )
    for fn in list(_listeners):
        fn(sol)
    if status != OPTIMAL:
        log.warning("SDP finished with status %s (pinf %.2e dinf %.2e gap %.2e)",
                    status, pinf, dinf, gap)
    return sol


def _finite(dx, dy, ds) -> bool:
    return bool(np.isfinite(dy).all() and all(np.isfinite(d).all() for d in dx)
                and all(np.isfinite(d).all() for d in ds))


def _build_groups(amat, orders):
    groups: list[_Group] = []
    for j, (a, n) in enumerate(zip(amat, orders)):
        rows = np.flatnonzero(np.diff(a.indptr))
        if rows.size == 0:
            continue
        sub = a[rows]
        cols = np.unique(sub.indices)
        sub = sp.csr_matrix(sub[:, cols])
        for g in groups:
            if (g.n == n and np.array_equal(g.rows, rows) and np.array_equal(g.cols, cols)
                    and (g.mat != sub).nnz == 0):
                g.members.append(j)
                break
        else:
            groups.append(_Group([j], rows, sub, cols, n))
    return groups


def _schur(groups, x, z, m, real):
    """M_ij = Re Tr(A_i X A_j Z) summed over blocks."""
    schur = np.zeros((m, m))
    for g in groups:
        n = g.n
        if g.cols.size == n * n:
            # kron(X, Z^T) written as a broadcast product, accumulated in place
            k = np.zeros((n, n, n, n), dtype=x[g.members[0]].dtype)
            for j in g.members:
                k += x[j][:, None, :, None] * z[j].T[None, :, None, :]
            k = k.reshape(n * n, n * n)
        else:
            k = None
            ia = np.ix_(g.a_idx, g.a_idx)
            ib = np.ix_(g.b_idx, g.b_idx)
            for j in g.members:
                term = x[j][ia] * z[j][ib].T
                k = term if k is None else k + term
        left = g.mat.conj() @ k if not real else g.mat @ k
        blk = (g.mat @ left.T).T
        schur[np.ix_(g.rows, g.rows)] += np.real(blk)
    return 0.5 * (schur + schur.T)


def _factor(schur):
    m = schur.shape[0]
    if m == 0:
        return lambda r: np.zeros(0)
    try:
        cf = sla.cho_factor(schur, lower=True, check_finite=False)
        return lambda r: sla.cho_solve(cf, r, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    reg = 1e-12 * max(1.0, np.abs(np.diag(schur)).max())
    try:
        cf = sla.cho_factor(schur + reg * np.eye(m), lower=True, check_finite=False)
        return lambda r: sla.cho_solve(cf, r, check_finite=False)
    except np.linalg.LinAlgError:
        lu = sla.lu_factor(schur, check_finite=False)
        return lambda r: sla.lu_solve(lu, r, check_finite=False)
