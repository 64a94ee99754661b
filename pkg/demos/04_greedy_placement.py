"""
Greedy device placement
=======================

Add devices one at a time, each time picking the candidate that lowers
the worst excess uncertainty the most, until every limit is met.
"""

import sys

from mdplace import CASE_STUDY_NOISE, Thresholds, fixture_state, greedy_place

r_search = int(sys.argv[1]) if len(sys.argv) > 1 else 200

grid, state = fixture_state()


def show(rec):
    print(f"  picked node {rec.chosen:2d} from {rec.candidates} candidates, J_inf {rec.j_inf:.2e}")


res = greedy_place(
    grid,
    state,
    CASE_STUDY_NOISE,
    Thresholds(),
    r_search=r_search,
    r_final=5 * r_search,
    master_seed=42,
    threads=4,
    progress=show,
)
print(res.n_devices, "devices:", res.placements)
print(res.evaluations_count, "configurations evaluated")
# the final check reruns the chosen set with more realizations
print("holds at", res.final_report.realizations, "realizations:", res.verified)
