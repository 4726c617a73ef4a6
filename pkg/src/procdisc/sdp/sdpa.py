"""SDPA sparse (.dat-s) export of Hermitian SDPs, and a reader for the format.

Each Hermitian block H = X + iY of order n becomes the real symmetric block
[[X, -Y], [Y, X]] of order 2n. Since the real trace inner product doubles
Re Tr(A H), every coefficient is halved. The problem is written as the SDPA
dual ``maximize Tr(F0 Y) s.t. Tr(Fi Y) = ci, Y >= 0``; for ``min`` problems F0
is negated, so the SDPA optimum is minus the original one.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .problem import HermitianSdp


def _fmt(v: float) -> str:
    return "%.16e" % v


def _block_entries(vec: sp.csr_matrix | np.ndarray, n: int, scale: float):
    """Upper-triangle (i, j, value) of scale * realify(A) for A given as vec(A)."""
    if sp.issparse(vec):
        coo = vec.tocoo()
        idx, vals = coo.col, coo.data
    else:
        flat = np.asarray(vec).reshape(-1)
        idx = np.flatnonzero(flat)
        vals = flat[idx]
    out = []
    for k, v in zip(idx, vals):
        a, c = divmod(int(k), n)
        re, im = scale * v.real, scale * v.imag
        if a <= c and re != 0.0:
            out.append((a, c, re))
            out.append((a + n, c + n, re))
        if im != 0.0 and a != c:
            out.append((a, c + n, -im))
    out.sort()
    return out


def export_sdpa(problem: HermitianSdp) -> str:
    """Return the problem as SDPA sparse text (deterministic, LF endings)."""
    coeff, rhs, obj = problem._assemble()
    names = list(problem.blocks)
    orders = [problem.blocks[k] for k in names]
    lines = [str(rhs.size), str(len(names)), " ".join(str(2 * n) for n in orders),
             " ".join(_fmt(v) for v in rhs)]
    sign = 0.5 if problem.sense == "max" else -0.5
    for b, (name, n) in enumerate(zip(names, orders), start=1):
        for i, j, v in _block_entries(obj[name], n, sign):
            lines.append(f"0 {b} {i + 1} {j + 1} {_fmt(v)}")
    for r in range(rhs.size):
        for b, (name, n) in enumerate(zip(names, orders), start=1):
            row = coeff[name].getrow(r)
            if row.nnz == 0:
                continue
            for i, j, v in _block_entries(row, n, 0.5):
                lines.append(f"{r + 1} {b} {i + 1} {j + 1} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def read_sdpa(text: str) -> tuple[np.ndarray, list[list[np.ndarray]]]:
    """Parse SDPA sparse text into ``(c, F)`` with ``F[i][block]`` dense symmetric.

    ``F[0]`` is the objective matrix; comment lines and ``{}(),`` separators in
    the header are tolerated as in the reference format.
    """
    raw = [ln for ln in text.splitlines() if ln.strip() and ln.lstrip()[0] not in "*\""]
    strip = str.maketrans("{}(),", "     ")
    m = int(raw[0].translate(strip).split()[0])
    nblocks = int(raw[1].translate(strip).split()[0])
    sizes = [int(s) for s in raw[2].translate(strip).split()[:nblocks]]
    if m:
        c = np.array([float(s) for s in raw[3].translate(strip).split()[:m]])
        body = raw[4:]
    else:
        c = np.zeros(0)
        body = raw[4:] if len(raw) > 3 and len(raw[3].split()) != 5 else raw[3:]
    f = [[np.zeros((abs(s), abs(s))) for s in sizes] for _ in range(m + 1)]
    for ln in body:
        mat, blk, i, j, v = ln.split()
        mat, blk, i, j = int(mat), int(blk) - 1, int(i) - 1, int(j) - 1
        val = float(v)
        f[mat][blk][i, j] = val
        f[mat][blk][j, i] = val
    return c, f
