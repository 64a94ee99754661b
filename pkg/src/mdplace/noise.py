"""Synthetic pseudo-measurements and device measurements around a known state.

Every measurement entry owns an independent random stream keyed by
``(master_seed, kind, element)``; realization ``r`` is draw ``r`` of that
stream. An entry therefore receives the same noise in every device
configuration that contains it (common random numbers), and batches of
realizations are reproducible regardless of how they are split or
parallelized.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

from .distflow import GridState
from .estimator import MeasurementKind, MeasurementLayout, MeasurementSet, measurement_layout, true_measurements
from .grid import RadialGrid


@dataclass(frozen=True)
class NoiseSpec:
    """Proportional + absolute error model ``sigma = c * |value| + sigma0``.

    Defaults are the generic constants (20 % PM error with a 1e-4 floor,
    0.5 % on device flows, 0.1 % on device V²).
    """

    c_pm: float = 0.2
    sigma0_pm: float = 1e-4
    c_md_flow: float = 0.005
    sigma0_md_flow: float = 0.0
    c_md_v2: float = 0.001
    sigma0_md_v2: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value >= 0 and np.isfinite(value)):
                raise ValueError(f"{name} must be a finite non-negative number")

    @classmethod
    def noiseless(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


# constants used for the 85-node case study: tighter PM floor, 0.2 % V² devices
CASE_STUDY_NOISE = NoiseSpec(
    c_pm=0.2,
    sigma0_pm=1.9e-7,
    c_md_flow=0.005,
    sigma0_md_flow=1.9e-7,
    c_md_v2=0.002,
    sigma0_md_v2=0.0,
)


@dataclass(frozen=True)
class DeviceConfiguration:
    """Nodes carrying a measurement device."""

    measured_nodes: frozenset[int] = frozenset()

    def __init__(self, measured_nodes: Iterable[int] = ()):
        object.__setattr__(self, "measured_nodes", frozenset(int(i) for i in measured_nodes))

    def __iter__(self):
        return iter(sorted(self.measured_nodes))

    def __len__(self) -> int:
        return len(self.measured_nodes)

    def with_device(self, node: int) -> "DeviceConfiguration":
        return DeviceConfiguration(self.measured_nodes | {node})

    def layout(self, grid: RadialGrid, slack_voltage: bool = True) -> MeasurementLayout:
        return measurement_layout(grid, self.measured_nodes, slack_voltage=slack_voltage)


def pm_sigma(true_value, spec: NoiseSpec):
    return spec.c_pm * np.abs(true_value) + spec.sigma0_pm


def md_sigma(true_value, kind: MeasurementKind, spec: NoiseSpec):
    if kind == MeasurementKind.MD_V2:
        return spec.c_md_v2 * np.abs(true_value) + spec.sigma0_md_v2
    if kind in (MeasurementKind.MD_PFLOW, MeasurementKind.MD_QFLOW):
        return spec.c_md_flow * np.abs(true_value) + spec.sigma0_md_flow
    raise ValueError(f"{kind!r} is not a device measurement")


def layout_sigmas(layout: MeasurementLayout, truth: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    out = np.empty(len(layout))
    for kind in MeasurementKind:
        rows = layout.rows(kind)
        if kind in (MeasurementKind.PM_P, MeasurementKind.PM_Q):
            out[rows] = pm_sigma(truth[rows], spec)
        else:
            out[rows] = md_sigma(truth[rows], kind, spec)
    return out


@lru_cache(maxsize=4096)
def _stream(master_seed: int, kind: int, element: int, count: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, kind, element])))
    out = rng.standard_normal(count)
    out.flags.writeable = False
    return out


def standard_normals(layout: MeasurementLayout, master_seed: int, n_realizations: int) -> np.ndarray:
    """``(n_realizations, len(layout))`` unit normals, one stream per entry."""
    if master_seed < 0:
        raise ValueError("master_seed must be non-negative")
    cols = [_stream(int(master_seed), int(k), int(e), int(n_realizations)) for k, e in layout]
    if not cols:
        return np.zeros((n_realizations, 0))
    return np.stack(cols, axis=1)


def sample_measurement_batch(
    grid: RadialGrid,
    true_state: GridState,
    g: DeviceConfiguration,
    spec: NoiseSpec,
    master_seed: int,
    n_realizations: int,
    slack_voltage: bool = True,
) -> tuple[MeasurementLayout, np.ndarray, np.ndarray]:
    """Realizations ``0..n-1`` at once: returns ``(layout, values, sigmas)``."""
    layout = g.layout(grid, slack_voltage=slack_voltage)
    truth = true_measurements(grid, layout, true_state)
    sigmas = layout_sigmas(layout, truth, spec)
    values = truth + sigmas * standard_normals(layout, master_seed, n_realizations)
    return layout, values, sigmas


def sample_measurements(
    grid: RadialGrid,
    true_state: GridState,
    g: DeviceConfiguration,
    spec: NoiseSpec,
    master_seed: int,
    r: int,
    slack_voltage: bool = True,
) -> MeasurementSet:
    """Realization ``r`` of the measurement vector for configuration ``g``."""
    if r < 0:
        raise ValueError("realization index must be non-negative")
    layout, values, sigmas = sample_measurement_batch(
        grid, true_state, g, spec, master_seed, r + 1, slack_voltage=slack_voltage
    )
    return MeasurementSet(layout, values[r].copy(), sigmas, master_seed=master_seed, realization=r)
