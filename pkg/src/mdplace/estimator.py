"""Weighted-least-squares state estimation with a constant Jacobian.

The state vector is ``[P_load(1..L), Q_load(1..L), V0_sq]``. The Jacobian
depends only on topology and line parameters, so the gain matrix is
factorized once per measurement layout and reused across iterations and
across Monte-Carlo realizations (see :class:`WLSGain`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .distflow import DEFAULT_MAX_ITER as DISTFLOW_MAX_ITER
from .distflow import GridState, LoadingScenario, line_currents, solve_batch, solve_distflow
from .errors import NoConvergence, SingularGain
from .grid import SLACK, RadialGrid, incident_lines

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
# sigmas below this are clamped when building weights
SIGMA_FLOOR = 1e-9


class MeasurementKind(enum.IntEnum):
    PM_P = 0
    PM_Q = 1
    MD_PFLOW = 2
    MD_QFLOW = 3
    MD_V2 = 4


@dataclass(frozen=True)
class MeasurementEntry:
    kind: MeasurementKind
    element: int
    value: float = 0.0
    sigma: float = 0.0


@dataclass(frozen=True, eq=False)
class MeasurementLayout:
    """Ordered (kind, element) pairs; the order fixes the rows of H and W."""

    kinds: np.ndarray
    elements: np.ndarray

    def __len__(self) -> int:
        return len(self.kinds)

    def __iter__(self) -> Iterator[tuple[MeasurementKind, int]]:
        for k, e in zip(self.kinds, self.elements):
            yield MeasurementKind(int(k)), int(e)

    def __eq__(self, other):
        if not isinstance(other, MeasurementLayout):
            return NotImplemented
        return np.array_equal(self.kinds, other.kinds) and np.array_equal(self.elements, other.elements)

    __hash__ = None

    @property
    def key(self) -> tuple:
        return tuple(zip(self.kinds.tolist(), self.elements.tolist()))

    def rows(self, kind: MeasurementKind) -> np.ndarray:
        return np.flatnonzero(self.kinds == kind)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "MeasurementLayout":
        pairs = sorted({(int(k), int(e)) for k, e in pairs})
        kinds = np.array([k for k, _ in pairs], dtype=int)
        elements = np.array([e for _, e in pairs], dtype=int)
        return cls(kinds, elements)


def measurement_layout(
    grid: RadialGrid, devices: Iterable[int] = (), slack_voltage: bool = True
) -> MeasurementLayout:
    """Layout for PMs at every load bus plus devices at ``devices``.

    A device contributes the node's V² and P/Q flow on every incident line.
    Lines seen by two devices appear once. ``slack_voltage`` adds the slack
    V² measurement even without a device there.
    """
    devices = sorted({grid.check_node(d) for d in devices})
    pairs = [(MeasurementKind.PM_P, j) for j in range(1, grid.n_nodes)]
    pairs += [(MeasurementKind.PM_Q, j) for j in range(1, grid.n_nodes)]
    flow_lines = {ln for d in devices for ln in incident_lines(grid, d)}
    pairs += [(MeasurementKind.MD_PFLOW, ln) for ln in flow_lines]
    pairs += [(MeasurementKind.MD_QFLOW, ln) for ln in flow_lines]
    v_nodes = set(devices) | ({SLACK} if slack_voltage else set())
    pairs += [(MeasurementKind.MD_V2, i) for i in v_nodes]
    return MeasurementLayout.from_pairs(pairs)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    layout: MeasurementLayout
    values: np.ndarray
    sigmas: np.ndarray
    master_seed: int | None = None
    realization: int | None = None

    def __post_init__(self):
        if not (len(self.values) == len(self.sigmas) == len(self.layout)):
            raise ValueError("values and sigmas must match the layout length")

    def __len__(self) -> int:
        return len(self.layout)

    @property
    def entries(self) -> list[MeasurementEntry]:
        return [
            MeasurementEntry(k, e, float(v), float(s))
            for (k, e), v, s in zip(self.layout, self.values, self.sigmas)
        ]

    @classmethod
    def from_entries(cls, entries: Iterable[MeasurementEntry], **kw) -> "MeasurementSet":
        entries = sorted(entries, key=lambda m: (int(m.kind), m.element))
        keys = [(int(m.kind), m.element) for m in entries]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate measurement entry")
        layout = MeasurementLayout(
            np.array([k for k, _ in keys], dtype=int), np.array([e for _, e in keys], dtype=int)
        )
        return cls(
            layout,
            np.array([m.value for m in entries], dtype=float),
            np.array([m.sigma for m in entries], dtype=float),
            **kw,
        )


@dataclass(frozen=True)
class StateVector:
    """Estimation state: loads of buses ``1..L`` and the slack squared voltage."""

    p_load: np.ndarray
    q_load: np.ndarray
    v0_sq: float

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p_load, self.q_load, [self.v0_sq]])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "StateVector":
        arr = np.asarray(arr, dtype=float)
        L = (arr.size - 1) // 2
        return cls(arr[:L].copy(), arr[L : 2 * L].copy(), float(arr[-1]))

    @classmethod
    def from_state(cls, state: GridState) -> "StateVector":
        return cls(state.p_load[1:].copy(), state.q_load[1:].copy(), float(state.v_sq[SLACK]))

    def scenario(self) -> LoadingScenario:
        return LoadingScenario(np.r_[0.0, self.p_load], np.r_[0.0, self.q_load], self.v0_sq)


def build_jacobian(grid: RadialGrid, layout: MeasurementLayout) -> np.ndarray:
    """Constant approximate Jacobian of the measurement function.

    Rows follow ``layout``; columns are ``[P_load(1..L), Q_load(1..L), V0_sq]``.
    Loss terms are dropped, so flows respond 1:1 to downstream loads and V²
    responds through the resistance/reactance of the path shared with the
    load. A reactive flow sees ``V0_sq`` through every shunt half hanging
    below its metering point: the receiving half of the line itself and both
    halves of every deeper line.
    """
    n = grid.n_nodes
    L = n - 1
    H = np.zeros((len(layout), 2 * L + 1))
    below = grid.subtree_mask[:, 1:].astype(float)
    for row, (kind, e) in enumerate(layout):
        if kind is MeasurementKind.PM_P:
            H[row, e - 1] = 1.0
        elif kind is MeasurementKind.PM_Q:
            H[row, L + e - 1] = 1.0
        elif kind is MeasurementKind.MD_PFLOW:
            H[row, :L] = below[e]
        elif kind is MeasurementKind.MD_QFLOW:
            H[row, L : 2 * L] = below[e]
            H[row, 2 * L] = -(grid.subtree_mask[e] @ grid.b - grid.b[e] / 2)
        else:
            path = _path_lines(grid, e)
            # lines of the slack-to-e path that also feed j: the shared path
            shared = below[path]
            H[row, :L] = -2.0 * grid.r[path] @ shared
            H[row, L : 2 * L] = -2.0 * grid.x[path] @ shared
            H[row, 2 * L] = 1.0
    return H


def _path_lines(grid: RadialGrid, node: int) -> np.ndarray:
    path = []
    while node != SLACK:
        path.append(node)
        node = int(grid.parent[node])
    return np.array(path[::-1], dtype=int)


def read_measurements(
    grid: RadialGrid,
    layout: MeasurementLayout,
    p_load: np.ndarray,
    q_load: np.ndarray,
    v_sq: np.ndarray,
    p_flow: np.ndarray,
    q_flow: np.ndarray,
) -> np.ndarray:
    """Gather measured quantities from (batched) node/line arrays."""
    sources = {
        MeasurementKind.PM_P: p_load,
        MeasurementKind.PM_Q: q_load,
        MeasurementKind.MD_PFLOW: p_flow,
        MeasurementKind.MD_QFLOW: q_flow,
        MeasurementKind.MD_V2: v_sq,
    }
    out = np.empty(p_load.shape[:-1] + (len(layout),))
    for kind, src in sources.items():
        rows = layout.rows(kind)
        out[..., rows] = src[..., layout.elements[rows]]
    return out


def true_measurements(grid: RadialGrid, layout: MeasurementLayout, state: GridState) -> np.ndarray:
    return read_measurements(grid, layout, state.p_load, state.q_load, state.v_sq, state.p_flow, state.q_flow)


def measurement_function(
    grid: RadialGrid,
    x: StateVector,
    layout: MeasurementLayout,
    tol: float = DEFAULT_TOL,
    max_iter: int = DISTFLOW_MAX_ITER,
) -> np.ndarray:
    """Predicted measurements for state ``x`` (runs a full load flow)."""
    state = solve_distflow(grid, x.scenario(), tol=tol, max_iter=max_iter)
    return true_measurements(grid, layout, state)


@dataclass(frozen=True, eq=False)
class WLSGain:
    """``G = (Hᵀ W H)⁻¹ Hᵀ W`` for one layout and one set of sigmas."""

    layout: MeasurementLayout
    H: np.ndarray
    G: np.ndarray
    weights: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, grid: RadialGrid, layout: MeasurementLayout, sigmas: np.ndarray) -> "WLSGain":
        H = build_jacobian(grid, layout)
        n_state = H.shape[1]
        if np.linalg.matrix_rank(H) < n_state:
            raise SingularGain(
                f"layout of {len(layout)} measurements does not determine all {n_state} states "
                "(a voltage measurement is needed)"
            )
        s = np.maximum(np.asarray(sigmas, dtype=float), SIGMA_FLOOR)
        sqrt_w = 1.0 / s
        # QR of the row-scaled Jacobian avoids squaring its condition number
        q, r = np.linalg.qr(H * sqrt_w[:, None])
        G = np.linalg.solve(r, q.T * sqrt_w[None, :])
        return cls(layout, H, G, sqrt_w**2)


def initial_state(grid: RadialGrid, z: MeasurementSet) -> StateVector:
    """PM warm start; slack V² from its measurement if present, else 1.0."""
    L = grid.n_nodes - 1
    x = _initial_array(z.layout, z.values[None, :], L)[0]
    return StateVector.from_array(x)


def _initial_array(layout: MeasurementLayout, Z: np.ndarray, L: int) -> np.ndarray:
    X = np.zeros((Z.shape[0], 2 * L + 1))
    X[:, 2 * L] = 1.0
    for kind, offset in ((MeasurementKind.PM_P, 0), (MeasurementKind.PM_Q, L)):
        rows = layout.rows(kind)
        X[:, offset + layout.elements[rows] - 1] = Z[:, rows]
    slack_v = np.flatnonzero((layout.kinds == MeasurementKind.MD_V2) & (layout.elements == SLACK))
    if slack_v.size:
        X[:, 2 * L] = Z[:, slack_v[0]]
    return X


@dataclass
class BatchEstimate:
    x: np.ndarray
    v_sq: np.ndarray
    p_flow: np.ndarray
    q_flow: np.ndarray
    ok: np.ndarray
    iterations: np.ndarray


def estimate_batch(
    grid: RadialGrid,
    gain: WLSGain,
    Z: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    X0: np.ndarray | None = None,
    trace: list | None = None,
) -> BatchEstimate:
    """Run the constant-gain WLS iteration on each row of ``Z``, then re-solve the load flow.

    Rows that fail (non-convergent WLS or load flow) are flagged in ``ok``;
    rows that converge are frozen so results do not depend on the batch.
    """
    layout = gain.layout
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    batch = Z.shape[0]
    n = grid.n_nodes
    L = n - 1
    X = _initial_array(layout, Z, L) if X0 is None else np.array(X0, dtype=float, copy=True)
    GT = gain.G.T
    v_warm = None
    active = np.ones(batch, dtype=bool)
    converged = np.zeros(batch, dtype=bool)
    failed = np.zeros(batch, dtype=bool)
    iterations = np.zeros(batch, dtype=int)

    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Xa = X[idx]
        p_load, q_load = _node_loads(Xa, L)
        sol = solve_batch(
            grid, p_load, q_load, Xa[:, 2 * L], tol=tol, v_init=None if v_warm is None else v_warm[idx]
        )
        if v_warm is None:
            v_warm = np.ones((batch, n))
        v_warm[idx] = sol.v_sq
        pred = read_measurements(grid, layout, p_load, q_load, sol.v_sq, sol.p_flow, sol.q_flow)
        resid = Z[idx] - pred
        dx = resid @ GT
        bad = ~sol.ok | ~np.all(np.isfinite(dx), axis=1)
        if trace is not None:
            trace.append(
                {
                    "iteration": it,
                    "weighted_residual_norm": np.sqrt((resid**2 * gain.weights).sum(axis=1)).tolist(),
                    "max_step": np.abs(dx).max(axis=1).tolist(),
                }
            )
        X[idx] = np.where(bad[:, None], Xa, Xa + dx)
        iterations[idx] = it
        done = (np.abs(dx).max(axis=1) < tol) & ~bad
        converged[idx[done]] = True
        failed[idx[bad]] = True
        active[idx[done | bad]] = False

    p_load, q_load = _node_loads(X, L)
    final = solve_batch(grid, p_load, q_load, X[:, 2 * L], tol=tol, v_init=v_warm)
    ok = converged & ~failed & final.ok
    return BatchEstimate(X, final.v_sq, final.p_flow, final.q_flow, ok, iterations)


def _node_loads(X: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Node-indexed load arrays (slack column zero) from state rows."""
    zero = np.zeros((X.shape[0], 1))
    return np.hstack([zero, X[:, :L]]), np.hstack([zero, X[:, L : 2 * L]])


def wls_solve(
    grid: RadialGrid,
    z: MeasurementSet,
    x0: StateVector | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    gain: WLSGain | None = None,
    trace: list | None = None,
) -> StateVector:
    """Iterate ``x ← x + G (z − h(x))`` to a fixed point.

    Raises:
        SingularGain: the layout leaves some state undetermined.
        NoConvergence: no fixed point within ``max_iter``, or the load flow failed.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if gain is None:
        gain = WLSGain.build(grid, z.layout, z.sigmas)
    X0 = None if x0 is None else x0.to_array()[None, :]
    est = estimate_batch(grid, gain, z.values[None, :], tol, max_iter, X0=X0, trace=trace)
    if not est.ok[0]:
        raise NoConvergence(
            f"state estimation did not converge ({int(est.iterations[0])} iterations)",
            iterations=int(est.iterations[0]),
        )
    return StateVector.from_array(est.x[0])


def estimate_state(
    grid: RadialGrid,
    z: MeasurementSet,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    gain: WLSGain | None = None,
    trace: list | None = None,
) -> GridState:
    """WLS estimate followed by a load flow on the estimated loads."""
    x = wls_solve(grid, z, tol=tol, max_iter=max_iter, gain=gain, trace=trace)
    return solve_distflow(grid, x.scenario(), tol=tol)


def batch_currents(grid: RadialGrid, est: BatchEstimate) -> np.ndarray:
    return line_currents(grid, est.p_flow, est.q_flow, est.v_sq)
