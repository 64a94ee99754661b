"""
Load flow on a small feeder
===========================

Build a radial grid from an edge list, solve the backward/forward sweep
and look at voltages, flows and line loading.
"""

import numpy as np

from mdplace import LoadingScenario, grid_from_edges, solve_distflow

# a five-line feeder with one lateral at node 1
grid = grid_from_edges(
    [(0, 1), (1, 2), (2, 3), (1, 4), (4, 5)],
    r=[0.02, 0.03, 0.04, 0.03, 0.05],
    x=[0.02, 0.02, 0.03, 0.02, 0.03],
    b=0.01,
    i_cap=[1.0, 0.6, 0.3, 0.6, 0.3],
)
print(grid.n_nodes, "nodes, parents", grid.parent.tolist())

# loads in per-unit, node 0 is the slack
p = np.array([0, 0.05, 0.08, 0.06, 0.04, 0.07])
state = solve_distflow(grid, LoadingScenario(p, 0.3 * p, v0_sq=1.0))
print("converged in", state.iterations, "sweeps")

# voltages fall along the feeder, fastest on the longer lateral
for n in range(grid.n_nodes):
    print(f"node {n}: V^2 = {state.v_sq[n]:.5f}")

# flows are indexed by receiving node, line j feeds node j
loading = state.loading(grid)
for j in range(1, grid.n_nodes):
    print(f"line {j}: P = {state.p_flow[j]:+.4f}  Q = {state.q_flow[j]:+.4f}  loading {loading[j]:.0%}")

# losses are what the slack delivers beyond the loads
print("losses:", state.p_flow[grid.children[0]].sum() - p.sum())
