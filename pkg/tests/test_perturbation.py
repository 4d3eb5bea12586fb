import numpy as np
import pytest
from scipy import stats

from msle.errors import ConfigInvalid, ParamOrder
from msle.metrics import CompactGridSpec
from msle.paths import TimeGrid, sample_noise, simulate_dyson
from msle.perturbation import (
    HausdorffConfig,
    InitPerturbConfig,
    KappaPerturbConfig,
    convergence_sweep,
    coupled_init_pairs,
    identity_convergence,
    infimum_law_cdf,
    init_identity_residual,
    diffusivity_gap_bound,
    diffusivity_gap_bound_derived,
    phi,
    phi_alphas,
    q_diagnostic,
    reflection_tail_bound,
    run_hausdorff_perturbation,
    run_init_perturbation,
    run_kappa_perturbation,
    sup_bm_cdf,
    zeta,
    zeta_star,
)

# --- closed forms ---------------------------------------------------------------


def test_phi_arithmetic():
    al = phi_alphas(4.0, 1.0, 2.0, 1.0)
    assert np.allclose(al, (4.0, 16.0, 4.0))
    assert phi(0.01, *al) == pytest.approx(
        4 * 0.01**0.125 + 16 * 0.01**0.25 + 4 * 0.01**0.875, rel=1e-12)
    assert phi(0.01, *al) == pytest.approx(7.379, abs=1e-2)


def test_phi_monotone():
    x = np.geomspace(1e-8, 1, 50)
    assert np.all(np.diff(phi(x, 1.0, 2.0, 3.0)) > 0)
    with pytest.raises(ValueError):
        phi(-1.0, 1, 1, 1)


def test_zeta_small_perturbation():
    # x^{nu/8} decays slowly: at nu = 1/2 the bound needs x ~ 1e-48 to drop below 1e-3
    assert zeta(1e-8, 0.5, 2.0, 1.0) == pytest.approx(10 ** -0.5, rel=1e-9)
    assert zeta(1e-50, 0.5, 2.0, 1.0) < 1e-3
    assert zeta(0.0, 0.5, 2.0, 1.0) == 0.0


def test_zeta_vacuous_regime():
    v = zeta(0.01, 0.5, 1.0, 1.0)
    assert v == pytest.approx(2 * 0.01 ** (1 / 16), rel=1e-9)
    assert v == pytest.approx(1.5, abs=1e-3) and v > 1


def test_zeta_positive_and_continuous():
    x = np.linspace(1e-6, 1, 2001)
    z = zeta(x, 0.5, 2.0, 1.0)
    assert np.all(z > 0)
    assert np.max(np.abs(zeta(x + 1e-10, 0.5, 2.0, 1.0) - z)) < 1e-5


def test_zeta_star_close_to_zeta_for_close_indices():
    x = 0.01
    a, b = zeta(x, 1.5, 2.0, 1.0), zeta_star(x, 1.5, 1.5, 2.0, 1.0)
    assert a == pytest.approx(b, rel=1e-6)


def test_infimum_cdf():
    assert infimum_law_cdf(1.0, 1.0, 0.5) == 1.0
    assert infimum_law_cdf(0.0, 1.0, 0.5) == 0.0
    assert infimum_law_cdf(0.5, 1.0, 1.5) == pytest.approx(0.125)


def test_sup_bm_cdf():
    assert sup_bm_cdf(0.0, 1.0) == 0.0
    assert sup_bm_cdf(1.96, 1.0) == pytest.approx(0.95, abs=1e-3)
    assert sup_bm_cdf(1.96, 1.0) == pytest.approx(2 * stats.norm.cdf(1.96) - 1, rel=1e-12)


def test_reflection_bound_dominates_exact_tail():
    x = np.array([1.0, 2.0, 4.0])
    exact = 2 * (1 - sup_bm_cdf(x, 1.0))
    assert np.all(reflection_tail_bound(x, 1.0) >= exact)


def test_diffusivity_gap_bounds():
    assert diffusivity_gap_bound(1.0, 2.0, 2.5) == pytest.approx(0.5)
    assert diffusivity_gap_bound_derived(1.0, 2.0, 2.5) == pytest.approx(0.8)


# --- initial-value perturbation ---------------------------------------------------------


def test_init_config_validation():
    with pytest.raises(ConfigInvalid, match=r"\(a1 - a2\)/3"):
        InitPerturbConfig(eps=1.0, b=(1.5, -1.5)).validate()
    with pytest.raises(ConfigInvalid):
        InitPerturbConfig(b=(1.2, -1.0), eps=0.1).validate()
    InitPerturbConfig().validate()


def test_zero_perturbation():
    cfg = InitPerturbConfig(b=(1.0, -1.0), eps=0.1, dt=1e-2, n_paths=5, chains=False)
    pair = coupled_init_pairs(cfg, 0, 5)
    assert np.array_equal(pair.lam.positions, pair.eta.positions)
    assert np.all(init_identity_residual(pair, cfg) == 0)
    r = run_init_perturbation(cfg)
    assert r.separation.passed and r.separation.worst_margin == pytest.approx(0.2)


def test_identity_converges_at_first_order():
    cfg = InitPerturbConfig(b=(1.05, -1.03), eps=0.1)
    for seed in range(3):
        (_, coarse), (_, fine) = identity_convergence(cfg, seed, [1e-3, 5e-4])
        assert coarse < 1e-2 * cfg.eps
        assert 1.5 <= coarse / fine <= 2.5


def test_init_perturbation_bounds():
    cfg = InitPerturbConfig(b=(1.03, -1.015), eps=0.05, n_paths=10, dt=1e-3)
    r = run_init_perturbation(cfg)
    assert r.separation.passed and r.identity.passed and r.caratheodory.passed
    assert r.monotone_fraction == 1.0
    assert r.records["sup_diff"].shape == (10,)


def test_init_sweep_distances_shrink():
    base = InitPerturbConfig(n_paths=4, dt=1e-2, grid=CompactGridSpec(-1, 1, 2, 3))
    tab = convergence_sweep("init", [0.2, 0.1, 0.05], base)
    assert tab.decreasing() and tab.within_bound()
    assert len(tab.rows) == 3


def test_empty_sweep():
    assert convergence_sweep("init", []).rows == []
    with pytest.raises(ValueError):
        convergence_sweep("init", [0.1, 0.2])


# --- diffusivity perturbation --------------------------------------------------------------


def test_kappa_order_enforced():
    with pytest.raises(ParamOrder):
        KappaPerturbConfig(kappa=3.0, kappa_star=2.0).validate()


def test_near_zero_kappa_perturbation():
    cfg = KappaPerturbConfig(kappa=2.0, kappa_star=2.0 + 1e-9, n_paths=10, dt=1e-2, t_long=10.0)
    rep = run_kappa_perturbation(cfg)
    assert rep.deviation_freq == 0.0
    assert rep.event_freq["E1"] == 1.0 and rep.event_freq["E2"] == 1.0
    assert rep.passed and rep.lemma.passed


def test_kappa_perturbation_lemma(grid):
    cfg = KappaPerturbConfig(kappa=2.0, kappa_star=2.5, n_paths=50, chains=False, events=False)
    rep = run_kappa_perturbation(cfg)
    assert rep.lemma.n_paths == 50 and rep.lemma.passed
    assert rep.lemma.extra["derived_bound_violations"] == 0


# --- N >= 3 diagnostic ---------------------------------------------------------------------


def _triple(grid, seed, b):
    n = sample_noise(grid, seed, 3)
    o = simulate_dyson(grid, seed, 3, 2.0, (2.0, 0.0, -2.0), noise=n)
    p = simulate_dyson(grid, seed, 3, 2.0, b, noise=n)
    return o, p


def test_q_requires_three_particles(grid):
    n = sample_noise(grid, 0, 2)
    o = simulate_dyson(grid, 0, 2, 2.0, (1.0, -1.0), noise=n)
    with pytest.raises(ValueError):
        q_diagnostic(o, o, 0, 1)


def test_q_zero_perturbation(grid):
    o, _ = _triple(grid, 0, (2.0, 0.0, -2.0))
    q = q_diagnostic(o, o, 0, 1)
    assert not q.defined.any() and q.max_residual == 0.0


def test_q_translation_is_degenerate(grid):
    o, p = _triple(grid, 0, (2.05, 0.05, -1.95))
    assert not q_diagnostic(o, p, 0, 2).defined.any()


@pytest.mark.parametrize("pair", [(0, 1), (1, 2), (0, 2)])
def test_q_identity_first_order(pair):
    fine = TimeGrid(0.5, 2000)
    for seed in range(2):
        n = sample_noise(fine, seed, 3)
        res = []
        for f in (2, 1):
            c = n.coarsen(f)
            o = simulate_dyson(c.grid, seed, 3, 2.0, (2.0, 0.0, -2.0), noise=c)
            p = simulate_dyson(c.grid, seed, 3, 2.0, (2.05, 0.0, -1.97), noise=c)
            res.append(q_diagnostic(o, p, *pair).max_residual)
        assert 1.5 <= res[0] / res[1] <= 2.5


# --- Hausdorff stability ---------------------------------------------------------------------


def test_hausdorff_perturbation_small():
    rep, rec = run_hausdorff_perturbation(HausdorffConfig(n_paths=3, dt=1e-3))
    assert rep.passed and rep.n_paths + rep.extra["n_unverified"] == 3
    assert np.all(rec["d_H"] < 0.01)
