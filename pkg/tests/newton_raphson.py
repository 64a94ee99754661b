"""Polar Newton-Raphson AC power flow used as a reference solution.

Written against a bus admittance matrix with PI-model lines so that it
shares nothing with the sweep solver under test. Bus 0 is the slack
(angle 0); all other buses are PQ.
"""

from __future__ import annotations

import numpy as np


class OracleDiverged(RuntimeError):
    pass


def admittance_matrix(n, edges, r, x, b):
    Y = np.zeros((n, n), dtype=complex)
    for (i, j), rk, xk, bk in zip(edges, r, x, b):
        ys = 1.0 / complex(rk, xk)
        Y[i, i] += ys + 0.5j * bk
        Y[j, j] += ys + 0.5j * bk
        Y[i, j] -= ys
        Y[j, i] -= ys
    return Y


def newton_raphson(n, edges, r, x, b, p_load, q_load, v0_sq, tol=1e-13, max_iter=40):
    """Return ``(v_sq, p_flow, q_flow)`` with flows keyed by downstream node.

    ``p_flow``/``q_flow`` are sending-end powers through the series branch.
    """
    Y = admittance_matrix(n, edges, r, x, b)
    G, B = Y.real, Y.imag
    vm = np.full(n, np.sqrt(v0_sq))
    va = np.zeros(n)
    p_spec = -np.asarray(p_load, dtype=float)
    q_spec = -np.asarray(q_load, dtype=float)
    pq = np.arange(1, n)
    m = len(pq)

    for _ in range(max_iter):
        V = vm * np.exp(1j * va)
        S = V * np.conj(Y @ V)
        mis = np.concatenate([p_spec[pq] - S.real[pq], q_spec[pq] - S.imag[pq]])
        if not np.all(np.isfinite(mis)):
            raise OracleDiverged("non-finite mismatch")
        if np.max(np.abs(mis), initial=0.0) < tol:
            break
        J = np.zeros((2 * m, 2 * m))
        for a, i in enumerate(pq):
            for c, k in enumerate(pq):
                if i == k:
                    Pi, Qi = S.real[i], S.imag[i]
                    J[a, c] = -Qi - B[i, i] * vm[i] ** 2
                    J[a, m + c] = Pi / vm[i] + G[i, i] * vm[i]
                    J[m + a, c] = Pi - G[i, i] * vm[i] ** 2
                    J[m + a, m + c] = Qi / vm[i] - B[i, i] * vm[i]
                else:
                    th = va[i] - va[k]
                    J[a, c] = vm[i] * vm[k] * (G[i, k] * np.sin(th) - B[i, k] * np.cos(th))
                    J[a, m + c] = vm[i] * (G[i, k] * np.cos(th) + B[i, k] * np.sin(th))
                    J[m + a, c] = -vm[i] * vm[k] * (G[i, k] * np.cos(th) + B[i, k] * np.sin(th))
                    J[m + a, m + c] = vm[i] * (G[i, k] * np.sin(th) - B[i, k] * np.cos(th))
        try:
            dx = np.linalg.solve(J, mis)
        except np.linalg.LinAlgError as exc:
            raise OracleDiverged("singular Jacobian") from exc
        va[pq] += dx[:m]
        vm[pq] += dx[m:]
        if np.any(vm <= 0.05) or not np.all(np.isfinite(vm)):
            raise OracleDiverged("voltage collapse")
    else:
        raise OracleDiverged("no convergence")

    V = vm * np.exp(1j * va)
    p_flow = np.zeros(n)
    q_flow = np.zeros(n)
    for (i, j), rk, xk in zip(edges, r, x):
        s = V[i] * np.conj((V[i] - V[j]) / complex(rk, xk))
        p_flow[j], q_flow[j] = s.real, s.imag
    return vm**2, p_flow, q_flow


def solve_grid(grid, p_load, q_load, v0_sq, **kw):
    edges = [(ln.upstream, ln.downstream) for ln in grid.lines]
    r = [ln.r for ln in grid.lines]
    x = [ln.x for ln in grid.lines]
    b = [ln.b for ln in grid.lines]
    return newton_raphson(grid.n_nodes, edges, r, x, b, p_load, q_load, v0_sq, **kw)
