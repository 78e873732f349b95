import math

import numpy as np
import pytest

from msoe.experiments import (
    PAPER_CENSORING,
    Cell,
    bias_variance_sweep,
    clt_study,
    consistency_study,
    independence_check,
    replicate_cells,
    semimarkov_surface,
    single_sample_illustration,
    true_rate,
    variance_lemma_check,
)
from msoe.oe import subject_contributions
from msoe.rng import derive_seed
from msoe.simulate import SimConfig, simulate_cohort


def test_truth_values(markov_model, semimarkov_model):
    assert float(true_rate(markov_model, "1", "2", 20.0)) == pytest.approx(0.101519, abs=5e-7)
    assert float(true_rate(semimarkov_model, "2", "3", 10.0, 4.0)) == pytest.approx(0.204, abs=1e-12)


def test_single_sample_smoke(markov_model):
    fit, truth = single_sample_illustration(markov_model, n=10, M=40, seed=1)
    assert fit.rate.shape == (3, 40) and truth.shape == (3, 40)
    assert np.isnan(fit.rate).any()
    assert np.allclose(truth[0], true_rate(markov_model, "1", "2", fit.grid.midpoints))


def test_sweep_smoke_and_identity(markov_model):
    rows = bias_variance_sweep(markov_model, Ms=(5,), n=500, reps=2, seed=3)
    assert np.isfinite(rows[0].var_Z) and np.isfinite(rows[0].scaled_abs_bias)
    rows = bias_variance_sweep(markov_model, Ms=(10, 20), n=300, reps=50, seed=3)
    for r in rows:
        assert r.delta == 40 / r.M and r.reps == 50
        assert r.var_Z == pytest.approx(r.var_Z_from_rates, rel=1e-9)


def test_clt_needs_two_reps(markov_model):
    with pytest.raises(ValueError):
        clt_study(markov_model, Ms=(15,), reps=1)
    (s,) = clt_study(markov_model, Ms=(15,), n=300, reps=40, seed=2)
    assert s.matched_sd == pytest.approx(np.std(s.z_values, ddof=1))
    assert 0 <= s.ks_distance <= 1


def test_sweep_and_clt_share_streams(markov_model):
    (row,) = bias_variance_sweep(markov_model, Ms=(15,), n=200, reps=20, seed=9)
    (s,) = clt_study(markov_model, Ms=(15,), n=200, reps=20, seed=9)
    assert np.var(s.z_values, ddof=1) == pytest.approx(row.var_Z, rel=1e-12)


def test_independence_rejects_same_bin(markov_model):
    with pytest.raises(ValueError, match="distinct"):
        independence_check(markov_model, s=20.0, t=20.5, M=15, reps=3)


def test_replications_are_thread_invariant(semimarkov_model):
    seeds = [derive_seed(4, "t", r) for r in range(12)]
    cells = [Cell("1", "2", 10, 12), Cell("2", "3", 20, 22, 0, 2)]
    a = replicate_cells(semimarkov_model, seeds, 100, PAPER_CENSORING, cells)
    b = replicate_cells(semimarkov_model, seeds, 100, PAPER_CENSORING, cells, workers=4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_replication_block_equals_cohort(markov_model):
    seeds = [derive_seed(4, "t", r) for r in range(3)]
    O, E = replicate_cells(markov_model, seeds, 150, PAPER_CENSORING, [Cell("1", "2", 18, 22)])
    c = simulate_cohort(SimConfig(markov_model, "1", 150, 40.0, PAPER_CENSORING, seeds[1]))
    X, Y = subject_contributions(c, "1", "2", 18, 22)
    assert O[1, 0] == X.sum() and E[1, 0] == pytest.approx(Y.sum(), rel=1e-12)


def test_mean_occurrence_scales_with_width(markov_model):
    c = simulate_cohort(SimConfig(markov_model, "1", 2_000_000, 40.0, PAPER_CENSORING, 31))
    X1, _ = subject_contributions(c, "1", "2", 20 - 0.125, 20 + 0.125)
    X2, _ = subject_contributions(c, "1", "2", 20 - 0.25, 20 + 0.25)
    assert 1.9 <= X2.mean() / X1.mean() <= 2.1


def test_lemma_check_reports_rows(markov_model, semimarkov_model):
    rows, meta = variance_lemma_check(markov_model, n=20_000, seed=1)
    assert [r.quantity for r in rows] == ["mean_X", "var_X", "mean_Y", "var_Y"]
    assert 0 < meta["p_c"] < 1
    rows, meta = variance_lemma_check(semimarkov_model, t=20, delta=2, u=4, delta_u=2, n=20_000, seed=1,
                                      transition=("2", "3"))
    assert meta["d2_p_c"] > 0 and all(np.isfinite(r.estimate) for r in rows)


def test_consistency_smoke(markov_model):
    rows = consistency_study(markov_model, ns=(500, 2000), reps=(10, 10), seed=1)
    assert [r["n"] for r in rows] == [500, 2000]
    assert rows[1]["delta"] == pytest.approx(4 / math.sqrt(2000))


def test_surface_structure(semimarkov_model):
    res = semimarkov_surface(semimarkov_model, n=2000, seed=1)
    assert len(res.slices) == 6
    fit = res.fit
    i = fit.index(("1", "2"))
    # boxes entirely above the diagonal get no exposure and no rate
    assert fit.exposure[i, 2, 5] == 0 and np.isnan(fit.rate[i, 2, 5])
    assert np.isnan(res.truth[i, 2, 5]) and np.isfinite(res.truth[i, 5, 2])
