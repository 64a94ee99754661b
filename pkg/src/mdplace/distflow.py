"""Backward/forward sweep load flow with PI-model shunts.

All quantities are per-unit. Voltages are carried as squared magnitudes
(``v_sq``); line flows are the sending-end active/reactive power through the
series branch of each line. Line-indexed arrays use the downstream node id.

:func:`solve_batch` takes and returns arrays of shape ``(batch, n_nodes)``
and is what the estimator and Monte-Carlo code use; :func:`solve_distflow`
is the single-scenario entry point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NoConvergence, ZeroVoltage
from .grid import SLACK, RadialGrid

V_SQ_GUARD = 1e-12
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class LoadingScenario:
    """Per-node loads (positive = consumption) and the slack squared voltage.

    Load arrays have length ``n_nodes``; the slack entry must be zero.
    """

    p_load: np.ndarray
    q_load: np.ndarray
    v0_sq: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.p_load, dtype=float)
        q = np.asarray(self.q_load, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p_load and q_load must be 1-D arrays of equal length")
        if p.size and (p[SLACK] != 0 or q[SLACK] != 0):
            raise ValueError("the slack node carries no load")
        if not self.v0_sq > 0:
            raise ValueError("v0_sq must be positive")
        object.__setattr__(self, "p_load", p)
        object.__setattr__(self, "q_load", q)


@dataclass(frozen=True)
class GridState:
    """Full electrical state. Line arrays are indexed by line id; entry 0 is 0."""

    p_load: np.ndarray
    q_load: np.ndarray
    v_sq: np.ndarray
    p_flow: np.ndarray
    q_flow: np.ndarray
    i_flow: np.ndarray
    iterations: int = 0

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(self.v_sq)

    @property
    def v0_sq(self) -> float:
        return float(self.v_sq[SLACK])

    def loading(self, grid: RadialGrid) -> np.ndarray:
        """``I_flow / I_cap`` per line (entry 0 is 0)."""
        out = np.zeros(grid.n_nodes)
        out[1:] = self.i_flow[1:] / grid.i_cap[1:]
        return out

    def scenario(self) -> LoadingScenario:
        return LoadingScenario(self.p_load, self.q_load, self.v0_sq)


def flat_state(grid: RadialGrid, scenario: LoadingScenario) -> GridState:
    n = grid.n_nodes
    return GridState(
        p_load=scenario.p_load,
        q_load=scenario.q_load,
        v_sq=np.full(n, float(scenario.v0_sq)),
        p_flow=np.zeros(n),
        q_flow=np.zeros(n),
        i_flow=np.zeros(n),
    )


# -- batched kernels ---------------------------------------------------------


def _backward(grid, p_load, q_load, v_sq):
    """Node-major kernel: all arrays are ``(n_nodes, batch)``."""
    p_flow = np.zeros_like(p_load)
    q_flow = np.zeros_like(q_load)
    r, x, bsig = grid.r, grid.x, grid.half_susceptance
    for nodes, (pos, kids, offsets) in zip(reversed(grid.levels), reversed(grid.level_children)):
        vj = v_sq[nodes]
        pp = p_load[nodes]
        qp = q_load[nodes] - bsig[nodes, None] * vj
        if pos.size:
            pp[pos] += np.add.reduceat(p_flow[kids], offsets, axis=0)
            qp[pos] += np.add.reduceat(q_flow[kids], offsets, axis=0)
        loss = (pp * pp + qp * qp) / vj
        p_flow[nodes] = pp + r[nodes, None] * loss
        q_flow[nodes] = qp + x[nodes, None] * loss
    return p_flow, q_flow


def _forward(grid, p_flow, q_flow, v0_sq):
    v_sq = np.empty_like(p_flow)
    v_sq[SLACK] = v0_sq
    r, x, parent = grid.r, grid.x, grid.parent
    for nodes in grid.levels:
        vi = v_sq[parent[nodes]]
        pf, qf = p_flow[nodes], q_flow[nodes]
        rn, xn = r[nodes, None], x[nodes, None]
        v_sq[nodes] = vi - 2.0 * (rn * pf + xn * qf) + (rn * rn + xn * xn) * (pf * pf + qf * qf) / vi
    return v_sq


def line_currents(grid: RadialGrid, p_flow: np.ndarray, q_flow: np.ndarray, v_sq: np.ndarray) -> np.ndarray:
    """Current magnitude per line from sending-end power and upstream voltage."""
    i_flow = np.zeros_like(p_flow)
    if grid.n_nodes > 1:
        up = grid.parent[1:]
        i_flow[..., 1:] = np.sqrt(p_flow[..., 1:] ** 2 + q_flow[..., 1:] ** 2) / np.sqrt(v_sq[..., up])
    return i_flow


@dataclass
class BatchSolution:
    p_flow: np.ndarray
    q_flow: np.ndarray
    v_sq: np.ndarray
    converged: np.ndarray
    collapsed: np.ndarray
    iterations: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.converged & ~self.collapsed


def solve_batch(
    grid: RadialGrid,
    p_load: np.ndarray,
    q_load: np.ndarray,
    v0_sq: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    v_init: np.ndarray | None = None,
) -> BatchSolution:
    """Solve ``batch`` independent load flows sharing one grid.

    A row stops being updated once its largest change in ``v_sq`` or flow
    drops below ``tol``, so each row's result does not depend on the rest of
    the batch. Rows whose voltage collapses are flagged and frozen.
    """
    # kernels run node-major: (n_nodes, batch)
    p_load = np.ascontiguousarray(np.atleast_2d(np.asarray(p_load, dtype=float)).T)
    q_load = np.ascontiguousarray(np.atleast_2d(np.asarray(q_load, dtype=float)).T)
    n, batch = p_load.shape
    v0_sq = np.broadcast_to(np.asarray(v0_sq, dtype=float), (batch,))
    if v_init is None:
        v_sq = np.repeat(v0_sq[None, :], n, axis=0)
    else:
        v_sq = np.array(np.atleast_2d(v_init).T, dtype=float, order="C")
        v_sq[SLACK] = v0_sq
    p_flow = np.zeros((n, batch))
    q_flow = np.zeros((n, batch))
    converged = np.zeros(batch, dtype=bool)
    collapsed = ~(v0_sq > V_SQ_GUARD)
    active = ~collapsed
    iterations = np.zeros(batch, dtype=int)

    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            every = idx.size == batch
            vs = v_sq if every else v_sq[:, idx]
            new_p, new_q = _backward(
                grid, p_load if every else p_load[:, idx], q_load if every else q_load[:, idx], vs
            )
            new_v = _forward(grid, new_p, new_q, v0_sq[idx])
            old_p = p_flow if every else p_flow[:, idx]
            old_q = q_flow if every else q_flow[:, idx]
            bad = ~np.all(new_v > V_SQ_GUARD, axis=0) | ~np.all(np.isfinite(new_p) & np.isfinite(new_q), axis=0)
            delta = np.maximum(
                np.abs(new_v - vs).max(axis=0),
                np.maximum(np.abs(new_p - old_p).max(axis=0), np.abs(new_q - old_q).max(axis=0)),
            )
            if every:
                v_sq, p_flow, q_flow = new_v, new_p, new_q
            else:
                v_sq[:, idx], p_flow[:, idx], q_flow[:, idx] = new_v, new_p, new_q
            iterations[idx] = it
            done = (delta < tol) & ~bad
            converged[idx[done]] = True
            collapsed[idx[bad]] = True
            active[idx[done | bad]] = False

    return BatchSolution(p_flow.T, q_flow.T, v_sq.T, converged, collapsed, iterations)


# -- single-scenario API -----------------------------------------------------


def backward_sweep(grid: RadialGrid, state: GridState) -> GridState:
    """One leaf-to-root pass updating line flows from loads and current voltages."""
    if np.any(state.v_sq <= V_SQ_GUARD):
        node = int(np.flatnonzero(state.v_sq <= V_SQ_GUARD)[0])
        raise ZeroVoltage(f"squared voltage at node {node} is {state.v_sq[node]:.3g}")
    p, q = _backward(grid, state.p_load[:, None], state.q_load[:, None], state.v_sq[:, None])
    return replace(state, p_flow=p[:, 0], q_flow=q[:, 0])


def forward_sweep(grid: RadialGrid, state: GridState, v0_sq: float) -> GridState:
    """One root-to-leaf pass updating squared voltages from line flows."""
    if not v0_sq > V_SQ_GUARD:
        raise ZeroVoltage(f"slack squared voltage is {v0_sq:.3g}")
    with np.errstate(all="ignore"):
        v = _forward(grid, state.p_flow[:, None], state.q_flow[:, None], v0_sq)[:, 0]
    if not np.all(v > V_SQ_GUARD):
        node = int(np.flatnonzero(~(v > V_SQ_GUARD))[0])
        raise ZeroVoltage(f"squared voltage at node {node} collapsed to {v[node]:.3g}")
    return replace(state, v_sq=v)


def solve_distflow(
    grid: RadialGrid,
    scenario: LoadingScenario,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> GridState:
    """Iterate sweeps from a flat start until flows and voltages settle.

    Raises:
        NoConvergence: ``max_iter`` reached, or the iterates diverged
            (voltage collapse, e.g. load beyond the deliverable power).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if scenario.p_load.shape != (grid.n_nodes,):
        raise ValueError(f"scenario has {scenario.p_load.size} nodes, grid has {grid.n_nodes}")
    sol = solve_batch(grid, scenario.p_load, scenario.q_load, scenario.v0_sq, tol, max_iter)
    its = int(sol.iterations[0])
    if sol.collapsed[0]:
        raise NoConvergence(f"voltage collapsed after {its} iterations", iterations=its) from ZeroVoltage(
            "squared voltage fell below the guard"
        )
    if not sol.converged[0]:
        raise NoConvergence(f"no convergence within {max_iter} iterations", iterations=its)
    return GridState(
        p_load=scenario.p_load.copy(),
        q_load=scenario.q_load.copy(),
        v_sq=sol.v_sq[0],
        p_flow=sol.p_flow[0],
        q_flow=sol.q_flow[0],
        i_flow=line_currents(grid, sol.p_flow[0], sol.q_flow[0], sol.v_sq[0]),
        iterations=its,
    )
