import itertools
import math

import numpy as np
import pytest

from mdplace.distflow import LoadingScenario, solve_distflow
from mdplace.errors import BudgetExhausted, SingularGain, TooManyFailures
from mdplace.grid import grid_from_edges, leaves
from mdplace.noise import CASE_STUDY_NOISE, DeviceConfiguration, NoiseSpec
from mdplace.placement import (
    Thresholds,
    candidates,
    evaluate_configuration,
    expected_evaluations,
    greedy_place,
    sensitivity_sweep,
)

from conftest import chain, star


def six_node_case():
    grid = grid_from_edges(
        [(0, 1), (1, 2), (2, 3), (1, 4), (4, 5)],
        r=[0.02, 0.03, 0.04, 0.03, 0.05],
        x=[0.02, 0.02, 0.03, 0.02, 0.03],
        b=0.01,
        i_cap=[1.0, 0.6, 0.3, 0.6, 0.3],
    )
    p = np.array([0, 0.05, 0.08, 0.06, 0.04, 0.07])
    return grid, solve_distflow(grid, LoadingScenario(p, 0.3 * p, 1.0))


@pytest.fixture(scope="module")
def six():
    return six_node_case()


def two_node(r=0.01, x=0.01, p=0.05, q=0.02):
    grid = chain(2, r=r, x=x)
    return grid, solve_distflow(grid, LoadingScenario(np.array([0, p]), np.array([0, q]), 1.0))


class TestEvaluate:
    def test_zero_noise(self, six):
        grid, state = six
        rep = evaluate_configuration(grid, state, [], NoiseSpec.noiseless(), Thresholds(), 50)
        assert np.all(rep.sigma_v2 < 1e-12) and np.all(rep.sigma_i < 1e-12)
        assert rep.j_inf == 0 and rep.violations == []

    def test_two_node_analytic(self):
        r, x = 0.01, 0.02
        grid, state = two_node(r, x)
        spec = NoiseSpec(c_pm=0.2, sigma0_pm=1e-4, c_md_v2=0.0, sigma0_md_v2=0.0)
        rep = evaluate_configuration(grid, state, [], spec, Thresholds(), 20000, master_seed=8)
        sp = 0.2 * 0.05 + 1e-4
        sq = 0.2 * 0.02 + 1e-4
        analytic = math.hypot(2 * r * sp, 2 * x * sq)
        assert rep.sigma_v2[1] == pytest.approx(analytic, rel=0.05)
        assert rep.sigma_v2[0] < 1e-12

    def test_cost_definition(self, six):
        grid, state = six
        th = Thresholds(0.001, 0.02)
        rep = evaluate_configuration(grid, state, [2], CASE_STUDY_NOISE, th, 500, master_seed=1)
        np.testing.assert_allclose(rep.limit_v2, 0.001 * state.v_sq)
        np.testing.assert_allclose(rep.limit_i[1:], 0.02 * grid.i_cap[1:])
        assert np.all(rep.cost >= 0)
        np.testing.assert_array_equal(rep.cost_v2 == 0, rep.sigma_v2 <= rep.limit_v2)
        np.testing.assert_array_equal(rep.cost_v2[rep.cost_v2 > 0], (rep.sigma_v2 - rep.limit_v2)[rep.cost_v2 > 0])
        assert rep.j_inf == rep.cost.max()
        assert rep.cost.size == grid.n_nodes + grid.n_lines
        assert (rep.realizations, rep.master_seed, rep.devices) == (500, 1, [2])

    def test_current_squared_switch(self, six):
        grid, state = six
        lin = evaluate_configuration(grid, state, [], CASE_STUDY_NOISE, Thresholds(), 300)
        sq = evaluate_configuration(grid, state, [], CASE_STUDY_NOISE, Thresholds(current_squared=True), 300)
        np.testing.assert_allclose(sq.limit_i[1:], 0.05 * grid.i_cap[1:] ** 2)
        # d(I^2) = 2 I dI
        np.testing.assert_allclose(sq.sigma_i[1:], 2 * state.i_flow[1:] * lin.sigma_i[1:], rtol=0.05)

    def test_needs_voltage_anchor(self, six):
        grid, state = six
        with pytest.raises(SingularGain):
            evaluate_configuration(grid, state, [], CASE_STUDY_NOISE, Thresholds(), 10, slack_voltage=False)

    def test_failures(self, six):
        grid, state = six
        with pytest.raises(TooManyFailures):
            # a device makes the layout over-determined, so one step is not enough
            evaluate_configuration(grid, state, [2], CASE_STUDY_NOISE, Thresholds(), 20, max_iter=1)

    def test_too_few_realizations(self, six):
        grid, state = six
        with pytest.raises(ValueError):
            evaluate_configuration(grid, state, [], CASE_STUDY_NOISE, Thresholds(), 1)

    def test_thresholds_positive(self):
        with pytest.raises(ValueError):
            Thresholds(0.0, 0.05)


def test_crn_monotone_and_leaf_dominance(six):
    grid, state = six
    j = {}
    for k in range(3):
        for g in itertools.combinations(range(6), k):
            j[g] = evaluate_configuration(grid, state, g, CASE_STUDY_NOISE, Thresholds(), 5000, 3).j_inf
    for g, cost in j.items():
        if len(g) == 2:
            continue
        for i in set(range(6)) - set(g):
            assert j[tuple(sorted(g + (i,)))] <= cost
        for leaf in leaves(grid) - set(g):
            par = int(grid.parent[leaf])
            if par not in g:
                assert j[tuple(sorted(g + (par,)))] <= j[tuple(sorted(g + (leaf,)))]


class TestCandidates:
    def test_chain(self):
        assert candidates(chain(3), []) == [0, 1]

    def test_star(self):
        assert candidates(star(3), DeviceConfiguration([0])) == []

    def test_fixture(self, fixture_case):
        grid, _ = fixture_case
        assert len(candidates(grid, [])) == 42
        assert 0 in candidates(grid, [])


class TestGreedy:
    def test_loose_thresholds(self, six):
        grid, state = six
        res = greedy_place(grid, state, CASE_STUDY_NOISE, Thresholds(1.0, 10.0), r_search=200)
        assert res.placements == [] and res.evaluations_count == 0
        assert res.final_report.j_inf == 0

    def test_two_node_huge_noise(self):
        grid, state = two_node(r=0.05, x=0.05, p=0.1, q=0.05)
        spec = NoiseSpec(c_pm=2.0, c_md_v2=0.0)
        th = Thresholds(1e-4, math.inf)
        assert evaluate_configuration(grid, state, [], spec, th, 500).j_inf > 0
        try:
            res = greedy_place(grid, state, spec, th, r_search=500)
        except BudgetExhausted as exc:
            res = exc.result
            assert res.final_report.j_inf > 0
        else:
            assert res.final_report.j_inf == 0
        assert res.placements == [0] and res.evaluations_count == 1

    def test_budget(self, six):
        grid, state = six
        with pytest.raises(BudgetExhausted) as exc:
            greedy_place(grid, state, CASE_STUDY_NOISE, Thresholds(1e-5, 1e-5), r_search=200, max_devices=2)
        partial = exc.value.result
        assert len(partial.placements) == 2 and not partial.verified

    def test_evaluations_and_choice(self, six):
        grid, state = six
        th = Thresholds(0.003, 0.02)
        res = greedy_place(grid, state, CASE_STUDY_NOISE, th, r_search=300, master_seed=2, max_devices=4)
        n = len(candidates(grid, []))
        assert res.evaluations_count == expected_evaluations(n, res.n_devices)
        assert [rec.candidates for rec in res.per_iteration] == list(range(n, n - res.n_devices, -1))
        assert len(set(res.placements)) == res.n_devices
        assert not set(res.placements) & leaves(grid)
        assert res.final_report.j_inf == 0
        # each choice is the argmin over its candidate pool, lowest id on ties
        g = []
        for rec in res.per_iteration:
            pool = candidates(grid, g)
            costs = [
                evaluate_configuration(grid, state, g + [i], CASE_STUDY_NOISE, th, 300, 2).j_inf for i in pool
            ]
            assert rec.chosen == pool[int(np.argmin(costs))]
            assert rec.j_inf == min(costs)
            g.append(rec.chosen)

    def test_threads_deterministic(self, six):
        grid, state = six
        th = Thresholds(0.003, 0.02)
        a = greedy_place(grid, state, CASE_STUDY_NOISE, th, r_search=200, master_seed=5, threads=1)
        b = greedy_place(grid, state, CASE_STUDY_NOISE, th, r_search=200, master_seed=5, threads=4)
        assert a.placements == b.placements
        assert a.final_report.sigma_v2.tobytes() == b.final_report.sigma_v2.tobytes()

    def test_final_verification(self, six):
        grid, state = six
        res = greedy_place(grid, state, CASE_STUDY_NOISE, Thresholds(), r_search=200, r_final=2000)
        assert res.final_report.realizations == 2000
        assert res.verified == (res.final_report.j_inf == 0)


class TestSweep:
    def test_monotone(self, six):
        grid, state = six
        levels = [0.01, 0.02, 0.03, 0.05, 0.1]
        pts = sensitivity_sweep(grid, state, CASE_STUDY_NOISE, levels, r_search=300, quantity="current")
        counts = [p.devices for p in pts]
        assert counts == sorted(counts, reverse=True)
        assert counts[0] > counts[-1]

    def test_infinite_threshold(self, six):
        grid, state = six
        (pt,) = sensitivity_sweep(grid, state, CASE_STUDY_NOISE, [math.inf], r_search=100, quantity="both")
        assert pt.devices == 0

    def test_validation(self, six):
        grid, state = six
        with pytest.raises(ValueError):
            sensitivity_sweep(grid, state, CASE_STUDY_NOISE, [0.01, 0.001])
        with pytest.raises(ValueError):
            sensitivity_sweep(grid, state, CASE_STUDY_NOISE, [0.01], quantity="power")


def test_expected_evaluations():
    assert expected_evaluations(42, 0) == 0
    assert expected_evaluations(42, 3) == 42 + 41 + 40
