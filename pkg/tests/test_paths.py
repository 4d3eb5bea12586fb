import numpy as np
import pytest
from scipy import stats

from msle.errors import InitOrder, InvalidGrid, NonpositiveState, ParamOrder
from msle.paths import (
    NoisePath,
    TimeGrid,
    bessel_dimension,
    bessel_index,
    bessel_step,
    difference_noise,
    dyson_pair_from_bessel,
    infimum_to_horizon,
    sample_noise,
    sample_noise_batch,
    simulate_bessel,
    simulate_coupled_bessel_dims,
    simulate_coupled_bessel_starts,
    simulate_dyson,
    sum_noise,
)


# --- grids and noise ---------------------------------------------------------


def test_grid_rejects_zero_steps():
    with pytest.raises(InvalidGrid):
        TimeGrid(1.0, 0)


def test_grid_from_dt_requires_whole_steps():
    assert TimeGrid.from_dt(1.0, 1e-3).n_steps == 1000
    with pytest.raises(InvalidGrid):
        TimeGrid.from_dt(1.0, 0.3)


def test_grid_times_end_exactly_at_horizon():
    g = TimeGrid(0.7, 7)
    assert g.times[-1] == 0.7 and g.times[0] == 0.0


def test_noise_is_deterministic():
    g = TimeGrid(1.0, 10)
    a = sample_noise(g, 42).increments
    b = sample_noise(g, 42).increments
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_noise(g, 43).increments)


def test_noise_variance_matches_dt():
    # 10^6 draws; the sample variance has relative SE sqrt(2/n)
    g = TimeGrid(1.0, 1000)
    inc = sample_noise_batch(g, 0, 0, 1000).increments.ravel()
    n = inc.size
    se = g.dt * np.sqrt(2.0 / n)
    assert abs(inc.var() - g.dt) < 5 * se


def test_batch_rows_equal_single_draws():
    g = TimeGrid(1.0, 50)
    batch = sample_noise_batch(g, 7, 2, 5, 3)
    for k, i in enumerate(range(2, 5)):
        assert np.array_equal(batch.increments[k], sample_noise(g, 7 + i, 3).increments)


def test_coarsen_preserves_endpoint():
    g = TimeGrid(1.0, 40)
    n = sample_noise(g, 1)
    c = n.coarsen(4)
    assert c.grid.n_steps == 10
    assert np.allclose(c.cumulative()[-1], n.cumulative()[-1])
    with pytest.raises(InvalidGrid):
        n.coarsen(3)


def test_difference_and_sum_noise():
    g = TimeGrid(1.0, 20)
    b1, b2 = sample_noise(g, 1), sample_noise(g, 2)
    d, s = difference_noise(b1, b2), sum_noise(b1, b2)
    assert np.allclose((d.increments + s.increments) / np.sqrt(2), b1.increments)


def test_noise_shape_checked():
    with pytest.raises(InvalidGrid):
        NoisePath(TimeGrid(1.0, 5), np.zeros(4))


# --- Bessel step --------------------------------------------------------------


def test_bessel_dimension_and_index():
    assert bessel_dimension(4.0) == 3.0
    assert bessel_index(3.0) == 0.5
    assert bessel_dimension(2.0) == 5.0


def test_bessel_step_zero_step():
    assert bessel_step(1.0, 0.0, 0.0, 3.0) == 1.0


def test_bessel_step_large_negative_kick_stays_positive():
    x = bessel_step(1.0, -2.0, 0.01, 3.0)
    assert x == pytest.approx((-1 + np.sqrt(1.04)) / 2, rel=1e-12)
    assert x > 0


def test_bessel_step_matches_quadratic_root():
    # x' solves x'^2 - y x' - (d-1) dt / 2 = 0 with y = x + dw
    x = bessel_step(2.0, 0.0, 0.1, 3.0)
    roots = np.roots([1.0, -2.0, -0.1])
    assert x == pytest.approx(roots.max(), rel=1e-12)
    assert x == pytest.approx(2.048809, abs=1e-6)


def test_bessel_step_vectorised():
    x = bessel_step(np.array([1.0, 2.0]), np.array([0.0, -5.0]), 0.01, 3.0)
    assert x.shape == (2,) and np.all(x > 0)


# --- Bessel paths -------------------------------------------------------------


def test_deterministic_bessel_matches_ode(grid):
    noise = NoisePath(grid, np.zeros(grid.n_steps))
    p = simulate_bessel(grid, noise, 1.0, 3.0)
    assert p.values[-1] == pytest.approx(np.sqrt(3.0), abs=5 * grid.dt)


def test_bessel_positive(grid):
    noise = sample_noise_batch(grid, 0, 0, 200)
    p = simulate_bessel(grid, noise, 1.0, 3.0)
    assert p.values.min() > 0


def test_besq_moment(grid):
    noise = sample_noise_batch(grid, 100, 0, 10_000)
    x2 = simulate_bessel(grid, noise, 1.0, 3.0).values[:, -1] ** 2
    se = x2.std(ddof=1) / np.sqrt(x2.size)
    assert abs(x2.mean() - 4.0) < 3 * se


def test_bessel_rejects_bad_start(grid):
    with pytest.raises(NonpositiveState):
        simulate_bessel(grid, sample_noise(grid, 0), 0.0, 3.0)


def test_coupled_starts_identical_when_equal(grid):
    X, Y = simulate_coupled_bessel_starts(grid, sample_noise(grid, 3), 1.0, 1.0, 3.0)
    assert np.array_equal(X.values, Y.values)


def test_coupled_starts_stay_ordered(grid):
    # same noise, larger start: the monotone scheme keeps Y >= X
    X, Y = simulate_coupled_bessel_starts(grid, sample_noise_batch(grid, 0, 0, 50), 1.0, 1.1, 3.0)
    assert np.all(Y.values >= X.values)


def test_coupled_dims_identical_for_equal_kappa(grid):
    X, Xs = simulate_coupled_bessel_dims(grid, sample_noise(grid, 3), 2.0, 2.0, 2.0)
    assert np.array_equal(X.values, Xs.values)


def test_coupled_dims_order_enforced(grid):
    with pytest.raises(ParamOrder):
        simulate_coupled_bessel_dims(grid, sample_noise(grid, 3), 2.0, 3.0, 2.0)


def test_coupled_dims_lemma_bound(grid):
    kappa, ks = 2.0, 2.5
    X, Xs = simulate_coupled_bessel_dims(grid, sample_noise_batch(grid, 0, 0, 200), 2.0, kappa, ks)
    t = grid.times
    lhs = np.maximum.accumulate((Xs.values - X.values) ** 2, axis=-1)
    assert np.all(lhs <= 4 * t / kappa**2 * (ks - kappa) + 10 * grid.dt)


def test_infimum_law():
    d = bessel_dimension(4.0)
    nu = bessel_index(d)
    m = infimum_to_horizon(1.0, d, 100.0, 1e-2, range(2000))
    ks = stats.kstest(m, lambda y: np.clip(y, 0, 1) ** (2 * nu)).statistic
    assert ks < 0.03
    assert np.all((m > 0) & (m <= 1.0))


# --- Dyson ----------------------------------------------------------------------


def test_dyson_single_particle_is_scaled_bm(grid):
    noise = sample_noise(grid, 5, 1)
    D = simulate_dyson(grid, 5, 1, 2.0, (0.3,))
    assert np.allclose(D.positions[0], 0.3 + noise.cumulative()[0] / np.sqrt(2))


@pytest.mark.parametrize("N,init", [(2, (1.0, -1.0)), (3, (2.0, 0.0, -2.0)), (4, (3, 1, -1, -3))])
def test_dyson_ordered(grid, N, init):
    noise = sample_noise_batch(grid, 0, 0, 30, N)
    D = simulate_dyson(grid, 0, N, 2.0, init, noise=noise)
    assert D.is_ordered()


def test_dyson_centre_of_mass_is_driftless(grid):
    noise = sample_noise_batch(grid, 0, 0, 20, 3)
    D = simulate_dyson(grid, 0, 3, 2.0, (2.0, 0.0, -2.0), noise=noise)
    com = D.positions.sum(-2)
    assert np.allclose(com, 0.0 + noise.cumulative().sum(-2) / np.sqrt(2), atol=1e-9)


def test_dyson_init_checks(grid):
    with pytest.raises(InitOrder):
        simulate_dyson(grid, 0, 2, 2.0, (-1.0, 1.0))
    with pytest.raises(InitOrder):
        simulate_dyson(grid, 0, 3, 2.0, (1.0, -1.0))
    with pytest.raises(ValueError, match="kappa"):
        simulate_dyson(grid, 0, 2, 5.0, (1.0, -1.0))


def test_pair_from_constant_gap(coarse):
    from msle.paths import BesselPath

    X = BesselPath(coarse, np.full(coarse.n_steps + 1, 2.0), 3.0, 2.0)
    zero = NoisePath(coarse, np.zeros(coarse.n_steps))
    D = dyson_pair_from_bessel(X, zero, 1.0, -1.0)
    assert np.allclose(D.positions[0], 1.0) and np.allclose(D.positions[1], -1.0)


def test_pair_reconstructs_gap(grid):
    b1, b2 = sample_noise(grid, 1), sample_noise(grid, 2)
    X = simulate_bessel(grid, difference_noise(b1, b2), 2.0, 3.0)
    D = dyson_pair_from_bessel(X, sum_noise(b1, b2), 1.0, -1.0)
    assert np.allclose(D.positions[0] - D.positions[1], X.values, atol=1e-14)


def test_pair_sum_is_martingale(grid):
    n = 10_000
    W = sample_noise_batch(grid, 0, 0, n)
    Wp = sample_noise_batch(grid, 50_000, 0, n)
    X = simulate_bessel(grid, W, 2.0, 3.0)
    D = dyson_pair_from_bessel(X, Wp, 1.0, -1.0)
    s = D.positions[:, :, -1].sum(-1)
    assert abs(s.mean() - 0.0) < 3 * s.std(ddof=1) / np.sqrt(n)


def test_dyson_gap_law_matches_bessel_pipeline(grid):
    n = 10_000
    noise = sample_noise_batch(grid, 0, 0, n, 2)
    D = simulate_dyson(grid, 0, 2, 4.0, (1.0, -1.0), noise=noise)
    W = sample_noise_batch(grid, 10**6, 0, n)
    X = simulate_bessel(grid, W, 2.0, 3.0)
    ks = stats.ks_2samp(D.gaps()[:, 0, -1], X.values[:, -1]).statistic
    assert ks < 0.03
