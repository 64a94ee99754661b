"""
How many devices does a tighter limit cost?
===========================================

Sweep the V^2 limit and count devices for two pseudo-measurement
accuracies. Better load forecasts need fewer devices.
"""

import dataclasses

from mdplace import CASE_STUDY_NOISE, fixture_state, sensitivity_sweep

grid, state = fixture_state()
levels = [0.003, 0.006, 0.01]

for c_pm in (0.2, 0.15):
    spec = dataclasses.replace(CASE_STUDY_NOISE, c_pm=c_pm)
    pts = sensitivity_sweep(grid, state, spec, levels, r_search=200, master_seed=42, quantity="voltage")
    print(f"c_pm {c_pm}:", ", ".join(f"{p.threshold:.3f} -> {p.devices}" for p in pts))
