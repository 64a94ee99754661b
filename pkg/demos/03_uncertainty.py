"""
Monte-Carlo uncertainty of a device configuration
=================================================

Estimate many noisy realizations and compare the spread of the estimated
V^2 and line currents with the operator's limits.
"""

from mdplace import CASE_STUDY_NOISE, Thresholds, evaluate_configuration, fixture_state

grid, state = fixture_state()
th = Thresholds(rel_sigma_v2=0.003, rel_sigma_i=0.05)

# only the slack voltage is measured: most deep nodes are too uncertain
base = evaluate_configuration(grid, state, [], CASE_STUDY_NOISE, th, realizations=500, master_seed=42)
print("no devices:", len(base.voltage_violations), "voltage and", len(base.current_violations), "current violations")
print(f"J_inf = {base.j_inf:.2e}")

# both runs see the same noise draws, so the comparison is not blurred
# by sampling luck
more = evaluate_configuration(grid, state, [5, 20, 29, 74], CASE_STUDY_NOISE, th, 500, master_seed=42)
print("four devices:", len(more.violations), "violations, J_inf =", f"{more.j_inf:.2e}")
print("worst excess shrank by", f"{base.j_inf / more.j_inf:.0f}x")
