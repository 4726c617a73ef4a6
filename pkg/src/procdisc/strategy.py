"""The comb discrimination SDP and its dual dominating comb.

One SDP serves every comb problem in the package:

    maximize    sum_m w_m Tr(C_m Theta_m)
    subject to  sum_m Theta_m = I_{out_T} (x) G_T,
                Tr_{in_t} G_t = I_{out_{t-1}} (x) G_{t-1},   Tr G_1 = 1,

over PSD tester elements Theta_m and PSD G_t. Its dual asks for the smallest
s such that some comb chi with chi_0 = s dominates every w_m C_m, so the
primal value is the optimal success probability and the dual value s* is the
dominating-comb scale. The dual multipliers give chi level by level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .combs import CombLayout, _trace_left
from .sdp import (HermitianSdp, SdpFailure, SdpSettings, SdpSolution, identity_left_map,
                  identity_map, solve, trace_left_map, trace_map)


@dataclass
class TesterSolution:
    """Optimal tester and dominating comb for weighted comb operators."""
    value: float  # primal optimum: achievable weighted success
    s_star: float  # dual optimum: dominating-comb scale
    tester: list[np.ndarray]
    gammas: list[np.ndarray]  # G_1 .. G_T
    chi: list[np.ndarray]  # chi_0 .. chi_T, chi_T dominates every w_m C_m
    layout: CombLayout
    domination_violation: float
    solution: SdpSolution = field(repr=False)

    @property
    def residuals(self) -> dict[str, float]:
        return self.solution.residuals


def build_tester_sdp(chois: Sequence[np.ndarray], weights: Sequence[float],
                     layout: CombLayout) -> HermitianSdp:
    T = layout.T
    N = layout.order
    p = HermitianSdp("max")
    thetas = []
    for m, (c, w) in enumerate(zip(chois, weights)):
        c = np.asarray(c)
        if c.shape != (N, N):
            raise ValueError(f"comb operator {m} has shape {c.shape}, layout order is {N}")
        name = p.add_block(f"theta{m}", N)
        p.set_objective(name, w * c)
        thetas.append(name)
    gorder = {t: layout.level_order(t) // layout.dim_out(t) for t in range(1, T + 1)}
    for t in range(T, 0, -1):
        p.add_block(f"gamma{t}", gorder[t])
    top = {name: identity_map(N) for name in thetas}
    top[f"gamma{T}"] = -identity_left_map(layout.dim_out(T), gorder[T])
    p.add_equality("top", top, np.zeros((N, N)))
    for t in range(T, 1, -1):
        din = layout.dim_in(t)
        k = gorder[t] // din
        p.add_equality(f"level{t}", {
            f"gamma{t}": trace_left_map(din, k),
            f"gamma{t - 1}": -identity_left_map(layout.dim_out(t - 1), gorder[t - 1]),
        }, np.zeros((k, k)))
    p.add_equality("norm", {"gamma1": trace_map(gorder[1])}, np.ones((1, 1)))
    return p


def _repair(chi: list[np.ndarray], layout: CombLayout) -> list[np.ndarray]:
    """Lift a dual sub-comb to an exact comb that dominates it, bottom-up."""
    out = [np.real_if_close(chi[0]).reshape(1, 1).astype(complex)]
    for t in range(1, layout.T + 1):
        dout, din = layout.dim_out(t), layout.dim_in(t)
        x = 0.5 * (chi[t] + chi[t].conj().T)
        gap = np.kron(np.eye(din), out[t - 1]) - _trace_left(x, dout)
        gap = 0.5 * (gap + gap.conj().T)
        out.append(x + np.kron(np.eye(dout) / dout, gap))
    return out


def solve_tester(chois: Sequence[np.ndarray], weights: Sequence[float], layout: CombLayout,
                 settings: SdpSettings | None = None, check_domination: bool = True,
                 require_optimal: bool = True) -> TesterSolution:
    """Solve the comb discrimination SDP for operators given in ``layout`` order."""
    problem = build_tester_sdp(chois, weights, layout)
    sol = solve(problem, settings)
    if require_optimal and not sol.optimal:
        raise SdpFailure(f"comb SDP did not converge: status {sol.status}, "
                         f"residuals {sol.residuals}", sol)
    T = layout.T
    chi = [sol.multiplier("norm")]
    for t in range(2, T + 1):
        chi.append(sol.multiplier(f"level{t}"))
    chi.append(sol.multiplier("top"))
    chi = _repair(chi, layout)
    s_star = float(np.real(chi[0][0, 0]))
    violation = 0.0
    if check_domination:
        for c, w in zip(chois, weights):
            d = chi[T] - w * np.asarray(c)
            violation = max(violation, -float(np.linalg.eigvalsh(0.5 * (d + d.conj().T))[0]))
    tester = [sol.X[f"theta{m}"] for m in range(len(chois))]
    gammas = [sol.X[f"gamma{t}"] for t in range(1, T + 1)]
    return TesterSolution(value=sol.primal_objective, s_star=s_star, tester=tester,
                          gammas=gammas, chi=chi, layout=layout,
                          domination_violation=violation, solution=sol)
