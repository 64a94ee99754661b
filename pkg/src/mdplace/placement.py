"""Monte-Carlo inaccuracy cost and greedy device placement.

A configuration is scored by estimating the grid state from ``R`` noisy
measurement realizations and comparing the spread of the estimated V² per
node and current per line with the operator's limits. The greedy loop adds
one device at a time, always the candidate with the smallest worst-case
excess, until no quantity exceeds its limit.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .distflow import GridState, line_currents
from .errors import BudgetExhausted, TooManyFailures
from .estimator import DEFAULT_MAX_ITER, DEFAULT_TOL, WLSGain, estimate_batch
from .grid import RadialGrid, leaves
from .noise import DeviceConfiguration, NoiseSpec, sample_measurement_batch

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.01


@dataclass(frozen=True)
class Thresholds:
    """Relative uncertainty limits.

    ``rel_sigma_v2`` bounds σ(V²)/V² per node; ``rel_sigma_i`` bounds
    σ(I)/I_cap per line. With ``current_squared`` the current limit applies
    to σ(I²)/I_cap² instead. ``math.inf`` disables a limit.
    """

    rel_sigma_v2: float = 0.003
    rel_sigma_i: float = 0.05
    current_squared: bool = False

    def __post_init__(self):
        if not (self.rel_sigma_v2 > 0 and self.rel_sigma_i > 0):
            raise ValueError("thresholds must be positive")


@dataclass
class UncertaintyReport:
    devices: list[int]
    sigma_v2: np.ndarray  # per node
    sigma_i: np.ndarray  # per line id, entry 0 unused
    limit_v2: np.ndarray
    limit_i: np.ndarray
    cost_v2: np.ndarray
    cost_i: np.ndarray
    realizations: int
    failures: int
    master_seed: int

    @property
    def cost(self) -> np.ndarray:
        """Cost vector: nodes ``0..L`` followed by lines ``1..L``."""
        return np.concatenate([self.cost_v2, self.cost_i[1:]])

    @property
    def j_inf(self) -> float:
        return float(self.cost.max(initial=0.0))

    @property
    def violations(self) -> list[tuple[str, int]]:
        return [("node", int(i)) for i in np.flatnonzero(self.cost_v2 > 0)] + [
            ("line", int(i)) for i in np.flatnonzero(self.cost_i > 0)
        ]

    @property
    def voltage_violations(self) -> list[int]:
        return [i for kind, i in self.violations if kind == "node"]

    @property
    def current_violations(self) -> list[int]:
        return [i for kind, i in self.violations if kind == "line"]


@dataclass(frozen=True)
class IterationRecord:
    candidates: int
    chosen: int
    j_inf: float


@dataclass
class PlacementResult:
    placements: list[int]
    per_iteration: list[IterationRecord]
    base_report: UncertaintyReport
    final_report: UncertaintyReport
    evaluations_count: int
    # False when a separate final check at a larger R still shows violations
    verified: bool = True

    @property
    def n_devices(self) -> int:
        return len(self.placements)


def evaluate_configuration(
    grid: RadialGrid,
    true_state: GridState,
    g: DeviceConfiguration | Iterable[int],
    spec: NoiseSpec,
    thresholds: Thresholds,
    realizations: int = 1000,
    master_seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    slack_voltage: bool = True,
) -> UncertaintyReport:
    """Empirical estimation uncertainty of configuration ``g`` and its cost vector.

    Realizations whose estimation fails are dropped; more than 1 % failures
    raises :class:`TooManyFailures`.
    """
    if realizations < 2:
        raise ValueError("need at least two realizations")
    if not isinstance(g, DeviceConfiguration):
        g = DeviceConfiguration(g)
    layout, Z, sigmas = sample_measurement_batch(
        grid, true_state, g, spec, master_seed, realizations, slack_voltage=slack_voltage
    )
    gain = WLSGain.build(grid, layout, sigmas)
    est = estimate_batch(grid, gain, Z, tol=tol, max_iter=max_iter)
    failures = int((~est.ok).sum())
    if failures > MAX_FAILURE_FRACTION * realizations:
        raise TooManyFailures(
            f"{failures} of {realizations} realizations failed for devices {sorted(g.measured_nodes)}",
            failures,
            realizations,
        )
    ok = est.ok
    v_sq = est.v_sq[ok]
    current = line_currents(grid, est.p_flow[ok], est.q_flow[ok], v_sq)
    if thresholds.current_squared:
        current = current**2
        cap = grid.i_cap**2
    else:
        cap = grid.i_cap

    sigma_v2 = v_sq.std(axis=0, ddof=1)
    sigma_i = current.std(axis=0, ddof=1)
    sigma_i[0] = 0.0
    limit_v2 = thresholds.rel_sigma_v2 * true_state.v_sq
    limit_i = np.full(grid.n_nodes, math.inf)
    limit_i[1:] = thresholds.rel_sigma_i * cap[1:]
    return UncertaintyReport(
        devices=sorted(g.measured_nodes),
        sigma_v2=sigma_v2,
        sigma_i=sigma_i,
        limit_v2=limit_v2,
        limit_i=limit_i,
        cost_v2=np.maximum(sigma_v2 - limit_v2, 0.0),
        cost_i=np.maximum(sigma_i - limit_i, 0.0),
        realizations=realizations,
        failures=failures,
        master_seed=master_seed,
    )


def candidates(grid: RadialGrid, g: DeviceConfiguration | Iterable[int]) -> list[int]:
    """Nodes still eligible for a device: not yet measured and not a leaf."""
    taken = set(g.measured_nodes if isinstance(g, DeviceConfiguration) else g)
    excluded = taken | leaves(grid)
    return [i for i in range(grid.n_nodes) if i not in excluded]


def greedy_place(
    grid: RadialGrid,
    true_state: GridState,
    spec: NoiseSpec,
    thresholds: Thresholds,
    r_search: int = 1000,
    master_seed: int = 0,
    max_devices: int | None = None,
    r_final: int | None = None,
    threads: int = 1,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    progress: Callable[[IterationRecord], None] | None = None,
) -> PlacementResult:
    """Add devices one at a time until every uncertainty limit holds.

    Each iteration scores every candidate under the same noise realizations
    and keeps the one with the smallest ``‖J‖∞`` (lowest node id on ties).
    With ``r_final`` the chosen configuration is re-scored with that many
    realizations; ``result.verified`` records whether it still meets the limits.

    Raises:
        BudgetExhausted: ``max_devices`` placed (or no candidate left) while
            limits are still violated. The partial result is attached.
    """

    def score(devices: DeviceConfiguration, realizations: int) -> UncertaintyReport:
        return evaluate_configuration(
            grid, true_state, devices, spec, thresholds, realizations, master_seed, tol, max_iter
        )

    g = DeviceConfiguration()
    base = score(g, r_search)
    current = base
    history: list[IterationRecord] = []
    placements: list[int] = []
    evaluations = 0

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        while current.j_inf > 0:
            pool_nodes = candidates(grid, g)
            if not pool_nodes or (max_devices is not None and len(placements) >= max_devices):
                partial = PlacementResult(placements, history, base, current, evaluations, verified=False)
                raise BudgetExhausted(
                    f"{len(placements)} devices placed, worst excess still {current.j_inf:.3g}", partial
                )
            reports = list(pool.map(lambda i: score(g.with_device(i), r_search), pool_nodes))
            evaluations += len(pool_nodes)
            costs = np.array([rep.j_inf for rep in reports])
            best = int(np.argmin(costs))  # first minimum = lowest node id
            chosen = pool_nodes[best]
            g = g.with_device(chosen)
            placements.append(chosen)
            current = reports[best]
            rec = IterationRecord(len(pool_nodes), chosen, float(costs[best]))
            history.append(rec)
            log.info(
                "iteration %d: %d candidates, chose node %d, j_inf=%.3g",
                len(history), rec.candidates, rec.chosen, rec.j_inf,
            )
            if progress is not None:
                progress(rec)

    final, verified = current, True
    if r_final is not None and r_final != r_search:
        final = score(g, r_final)
        verified = final.j_inf == 0
    return PlacementResult(placements, history, base, final, evaluations, verified)


def expected_evaluations(n_candidates: int, n_devices: int) -> int:
    """n + (n-1) + ... + (n - (|g| - 1))."""
    return sum(n_candidates - k for k in range(n_devices))


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    devices: int
    placements: tuple[int, ...]


def sensitivity_sweep(
    grid: RadialGrid,
    true_state: GridState,
    spec: NoiseSpec,
    levels: Sequence[float],
    r_search: int = 1000,
    master_seed: int = 0,
    quantity: str = "voltage",
    base: Thresholds | None = None,
    threads: int = 1,
    max_devices: int | None = None,
) -> list[SweepPoint]:
    """Device count needed as a function of the allowed relative uncertainty.

    ``quantity`` selects which limit is swept (``voltage``, ``current`` or
    ``both``); a limit that is not swept is taken from ``base`` (disabled
    when ``base`` is None).
    """
    if list(levels) != sorted(levels):
        raise ValueError("threshold levels must be sorted ascending")
    if quantity not in ("voltage", "current", "both"):
        raise ValueError(f"unknown quantity {quantity!r}")
    base = base or Thresholds(math.inf, math.inf)
    out = []
    for level in levels:
        th = replace(
            base,
            rel_sigma_v2=level if quantity in ("voltage", "both") else base.rel_sigma_v2,
            rel_sigma_i=level if quantity in ("current", "both") else base.rel_sigma_i,
        )
        res = greedy_place(
            grid, true_state, spec, th, r_search=r_search, master_seed=master_seed, threads=threads,
            max_devices=max_devices,
        )
        out.append(SweepPoint(float(level), res.n_devices, tuple(res.placements)))
    return out
