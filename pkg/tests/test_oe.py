import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import STATES, random_grid, random_grid2, random_trajectories
from oracles import naive_aggregate_1d, naive_aggregate_2d

from msoe.oe import (
    GridError,
    OETable,
    TimeDurationGrid,
    TimeGrid,
    aggregate_1d,
    aggregate_2d,
    diagonal_slice,
    occupation_probability,
    oe_rates,
    rate_ci_theorem_scale,
    subject_contributions,
    wald_bounds,
)
from msoe.trajectory import Cohort, Trajectory

TRANS = [("1", "2"), ("1", "3"), ("2", "1"), ("2", "3")]


def cohort_of(trajs):
    return Cohort.from_trajectories(trajs, states=STATES, absorbing={"3"}, transitions=TRANS)


def test_single_trajectory_hand_example():
    tr = Trajectory(0, "1", [(3.2, "1", "2")], 12.0)
    tab = aggregate_1d([tr], TimeGrid(0, 40, 4), [("1", "2")])
    assert tab.O("1", "2").tolist() == [1, 0, 0, 0]
    assert tab.E("1").tolist() == pytest.approx([3.2, 0, 0, 0], abs=1e-15)
    assert tab.E("2").tolist() == pytest.approx([6.8, 2.0, 0, 0], abs=1e-15)


def test_empty_cohort():
    c = cohort_of([])
    tab = aggregate_1d(c, TimeGrid(0, 40, 4))
    assert not tab.occurrence.any() and not tab.exposure.any()
    tab2 = aggregate_2d(c, TimeDurationGrid(TimeGrid(0, 40, 4), TimeGrid(0, 40, 4)))
    assert not tab2.occurrence.any() and not tab2.exposure.any()


def test_censor_on_boundary():
    tab = aggregate_1d([Trajectory(0, "1", [], 10.0)], TimeGrid(0, 40, 4), [])
    assert tab.E("1")[:2].tolist() == [10.0, 0.0]


def test_duration_diagonal_example():
    g2 = TimeDurationGrid(TimeGrid(0, 6, 3), TimeGrid(0, 6, 3))
    tab = aggregate_2d([Trajectory(0, "1", [], 5.0)], g2, [])
    E = tab.E("1")
    assert np.diag(E).tolist() == pytest.approx([2, 2, 1])
    assert E.sum() == pytest.approx(np.trace(E))


def test_duration_resets_at_jump():
    g2 = TimeDurationGrid(TimeGrid(0, 6, 3), TimeGrid(0, 6, 3))
    tab = aggregate_2d([Trajectory(0, "1", [(3.0, "1", "2")], 5.0)], g2, [("1", "2")])
    E2 = tab.E("2")
    assert E2[1, 0] == pytest.approx(1.0) and E2[2, 0] == pytest.approx(1.0)
    assert E2.sum() == pytest.approx(2.0)
    # the jump happens at duration 3, in duration bin [2, 4)
    assert tab.O("1", "2")[1, 1] == 1


def test_matches_naive_aggregator_1d():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        grid = random_grid(rng)
        trajs = random_trajectories(rng, 100, snap=grid.edges)
        tab = aggregate_1d(cohort_of(trajs), grid)
        O, E = naive_aggregate_1d(trajs, grid.edges, TRANS, STATES)
        for jk in TRANS:
            assert tab.O(*jk).tolist() == O[jk]
        for s in ("1", "2"):
            assert np.allclose(tab.E(s), E[s], rtol=1e-12, atol=1e-12)
        # time in the absorbing state is not exposure
        assert not tab.E("3").any()


def test_matches_naive_aggregator_2d():
    rng = np.random.default_rng(7)
    for _ in range(10):
        g2 = random_grid2(rng)
        trajs = random_trajectories(rng, 60, snap=g2.time.edges)
        tab = aggregate_2d(cohort_of(trajs), g2)
        O, E = naive_aggregate_2d(trajs, g2.time.edges, g2.duration.edges, TRANS, STATES)
        for jk in TRANS:
            assert np.array_equal(tab.O(*jk), O[jk])
        for s in ("1", "2"):
            assert np.allclose(tab.E(s), E[s], rtol=1e-12, atol=1e-12)


def test_conservation():
    rng = np.random.default_rng(3)
    trajs = random_trajectories(rng, 300, t_max=40.0)
    grid = TimeGrid(0.0, 40.0, 17)
    tab = aggregate_1d(cohort_of(trajs), grid)
    idle = 0.0
    for tr in trajs:
        absorbed = [t for t, _, b in tr.jumps if b == "3"]
        idle += (tr.censor_time - absorbed[0]) if absorbed else 0.0
        idle += 40.0 - tr.censor_time
    total = tab.exposure.sum() + idle
    assert total == pytest.approx(len(trajs) * 40.0, rel=1e-9)


def test_2d_marginalizes_to_1d():
    rng = np.random.default_rng(5)
    trajs = random_trajectories(rng, 200, t_max=40.0)
    tg = TimeGrid(0.0, 40.0, 20)
    c = cohort_of(trajs)
    one = aggregate_1d(c, tg)
    # duration axis must cover every possible duration for the marginal to be complete
    two = aggregate_2d(c, TimeDurationGrid(tg, TimeGrid(0.0, 40.0, 13)))
    assert np.array_equal(two.occurrence.sum(axis=2), one.occurrence)
    assert np.allclose(two.exposure.sum(axis=2), one.exposure, rtol=1e-9, atol=1e-12)


def test_subject_contributions_sum_to_table():
    rng = np.random.default_rng(9)
    trajs = random_trajectories(rng, 200, t_max=40.0)
    c = cohort_of(trajs)
    tg = TimeGrid(0.0, 40.0, 8)
    tab = aggregate_1d(c, tg)
    X, Y = subject_contributions(c, "1", "2", tg.edges[3], tg.edges[4])
    assert X.sum() == tab.O("1", "2")[3]
    assert Y.sum() == pytest.approx(tab.E("1")[3], rel=1e-12)
    two = aggregate_2d(c, TimeDurationGrid(tg, TimeGrid(0.0, 40.0, 8)))
    X, Y = subject_contributions(c, "2", "3", tg.edges[5], tg.edges[6], 10.0, 15.0)
    assert X.sum() == two.O("2", "3")[5, 2]
    assert Y.sum() == pytest.approx(two.E("2")[5, 2], rel=1e-12)


def table(O, E):
    g = TimeGrid(0.0, float(len(O)), len(O))
    return OETable(g, ("1", "2"), [("1", "2")], np.array([O]), np.array([E, np.zeros(len(E))], dtype=float), 1)


def test_oe_rate_examples():
    fit = oe_rates(table([0, 12, 3], [5.0, 100.0, 0.0]))
    assert fit.rate[0, 0] == 0 and fit.ci_lo[0, 0] == 0 and fit.ci_hi[0, 0] == 0
    assert fit.rate[0, 1] == pytest.approx(0.12)
    assert math.sqrt(fit.variance[0, 1]) == pytest.approx(math.sqrt(12) / 100)
    assert math.sqrt(fit.variance[0, 1]) == pytest.approx(0.03464, abs=1e-5)
    assert fit.ci_lo[0, 1] <= fit.rate[0, 1] <= fit.ci_hi[0, 1]
    assert np.isnan(fit.rate[0, 2]) and np.isnan(fit.ci_lo[0, 2]) and np.isnan(fit.ci_hi[0, 2])


def test_log_scale_intervals():
    lo, hi = wald_bounds(np.array([0.12]), np.array([12]), np.array([100.0]), 0.95, "log")
    z = 1.959963984540054
    assert lo[0] == pytest.approx(0.12 * math.exp(-z / math.sqrt(12)))
    assert hi[0] == pytest.approx(0.12 * math.exp(z / math.sqrt(12)))


@given(
    st.lists(st.integers(0, 50), min_size=1, max_size=10),
    st.floats(0.01, 100),
    st.integers(0, 2**32 - 1),
)
def test_scale_equivariance(O, c, seed):
    E = np.random.default_rng(seed).uniform(0.5, 50, len(O))
    a = oe_rates(table(O, E)).rate
    b = oe_rates(table(O, c * E)).rate
    assert np.allclose(b, a / c, rtol=1e-12)


def test_theorem_scale_variance():
    g = TimeGrid(0.0, 4.0, 2)
    tab = OETable(g, ("1", "2"), [("1", "2")], np.array([[12, 0]]), np.array([[100.0, 0.0], [0, 0]]), 500)
    fit = oe_rates(tab)
    assert rate_ci_theorem_scale(fit, 1.0, 500) == pytest.approx(1.2)
    with pytest.raises(GridError):
        rate_ci_theorem_scale(fit, 3.0, 500)
    with pytest.raises(GridError):
        rate_ci_theorem_scale(fit, 9.0, 500)
    # full occupation: p_hat = 1 and the variance is the rate itself
    tab = OETable(g, ("1", "2"), [("1", "2")], np.array([[30, 0]]), np.array([[1000.0, 0.0], [0, 0]]), 500)
    assert rate_ci_theorem_scale(oe_rates(tab), 1.0, 500) == pytest.approx(0.03)


def test_occupation_probability_examples():
    trajs = [Trajectory(0, "1", [(1.0, "1", "2")], 5.0), Trajectory(1, "1", [], 3.0)]
    assert occupation_probability(trajs, "1", 0.0) == 1.0
    assert occupation_probability(trajs, "2", 2.0) == 0.5
    assert occupation_probability(trajs, "1", 4.0) == 0.0
    with pytest.raises(KeyError):
        occupation_probability(trajs, "9", 1.0)


def test_diagonal_slices():
    rng = np.random.default_rng(1)
    trajs = random_trajectories(rng, 300, t_max=40.0)
    g2 = TimeDurationGrid(TimeGrid(0, 40, 20), TimeGrid(0, 40, 20))
    fit = oe_rates(aggregate_2d(cohort_of(trajs), g2))
    assert diagonal_slice(fit, 50.0, ("1", "2")) == []
    pts = diagonal_slice(fit, 0.0, ("1", "2"))
    for t, r in pts:
        assert r == fit.at(("1", "2"), t, t)
    with pytest.raises(ValueError):
        diagonal_slice(fit, -1.0, ("1", "2"))


def test_slice_of_constant_surface_is_flat():
    from msoe.model import IntensityModel
    from msoe.simulate import CensoringSpec, SimConfig, simulate_cohort

    m = IntensityModel.from_strings(("1", "2"), {("1", "2"): "0.1"}, absorbing=("2",), kind="semi_markov")
    c = simulate_cohort(SimConfig(m, "1", 50_000, 20.0, CensoringSpec.none(20), 1))
    g2 = TimeDurationGrid(TimeGrid(0, 20, 10), TimeGrid(0, 20, 10))
    pts = diagonal_slice(oe_rates(aggregate_2d(c, g2)), 0.0, ("1", "2"))
    r = np.array([p[1] for p in pts[:6]])
    assert np.all(np.abs(r - 0.1) < 0.01)
