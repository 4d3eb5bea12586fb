"""The acceptance suite: thirteen numbered checks with pinned sizes and tolerances.

Each ``criterion_NN`` returns a :class:`Criterion`.  ``scale="quick"`` cuts
path counts for smoke runs; the pinned (full) sizes are the default.
"""

from __future__ import annotations

import filecmp
import json
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .loewner import DrivingForces, backward_evolve, capacity_coefficient, forward_flow, inverse_map
from .metrics import CompactGridSpec, check_lemma41, koebe_check
from .paths import (
    TimeGrid,
    bessel_dimension,
    bessel_index,
    infimum_to_horizon,
    sample_noise_batch,
    simulate_bessel,
    simulate_dyson,
)
from .perturbation import (
    HausdorffConfig,
    InitPerturbConfig,
    KappaPerturbConfig,
    identity_convergence,
    infimum_law_cdf,
    run_hausdorff_perturbation,
    run_init_perturbation,
    run_kappa_perturbation,
)


@dataclass
class Criterion:
    number: int
    title: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d}. {self.title}: {_brief(self.detail)}"


def _brief(d: dict) -> str:
    parts = []
    for k, v in d.items():
        if isinstance(v, float):
            parts.append(f"{k}={v:.4g}")
        elif isinstance(v, (int, bool, str)):
            parts.append(f"{k}={v}")
    return ", ".join(parts)


def _n(full: int, scale: str, quick: int) -> int:
    return full if scale == "full" else quick


def _bessel_batch(grid, seed_base, n, d, a=1.0, chunk=2000):
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        noise = sample_noise_batch(grid, seed_base, s, e)
        yield simulate_bessel(grid, noise, a, d)


# ---------------------------------------------------------------------------


def criterion_01(scale="full", seed=0, workers=None) -> Criterion:
    """Bessel paths stay positive; Dyson paths stay strictly ordered."""
    grid = TimeGrid(1.0, 1000)
    n_b = _n(10_000, scale, 500)
    n_d = _n(1000, scale, 50)
    bad_b = 0
    for kappa in (1.0, 2.0, 4.0):
        for path in _bessel_batch(grid, seed, n_b, bessel_dimension(kappa)):
            bad_b += int(np.count_nonzero(~np.all(path.values > 0, axis=-1)))
    bad_d = 0
    for N, init in ((2, (1.0, -1.0)), (3, (2.0, 0.0, -2.0))):
        for s in range(0, n_d, 250):
            e = min(s + 250, n_d)
            noise = sample_noise_batch(grid, seed, s, e, N)
            D = simulate_dyson(grid, seed, N, 2.0, init, noise=noise)
            bad_d += int(np.count_nonzero(~np.all(D.gaps() > 0, axis=(-1, -2))))
    return Criterion(1, "Bessel positivity and Dyson ordering", bad_b == 0 and bad_d == 0,
                     {"bessel_paths": 3 * n_b, "nonpositive": bad_b, "dyson_paths": 2 * n_d,
                      "unordered": bad_d})


def criterion_02(scale="full", seed=0, workers=None) -> Criterion:
    """E[X_1^2] = a^2 + d within 3 standard errors."""
    grid = TimeGrid(1.0, 1000)
    n = _n(10_000, scale, 2000)
    x2 = np.concatenate([p.values[:, -1] ** 2 for p in _bessel_batch(grid, seed, n, 3.0)])
    mean, se = float(x2.mean()), float(x2.std(ddof=1) / np.sqrt(n))
    z = abs(mean - 4.0) / se
    return Criterion(2, "BESQ moment", z <= 3.0, {"mean": mean, "target": 4.0, "se": se, "z": z})


def criterion_03(scale="full", seed=0, workers=None) -> Criterion:
    """KS distance of the simulated infimum against (y/a)^{2 nu} below 0.02."""
    n = _n(10_000, scale, 2000)
    d = bessel_dimension(4.0)
    m = infimum_to_horizon(1.0, d, 100.0, 1e-2, range(seed, seed + n))
    nu = bessel_index(d)
    ks = float(stats.kstest(m, lambda y: infimum_law_cdf(y, 1.0, nu)).statistic)
    return Criterion(3, "infimum law", ks < 0.02, {"ks": ks, "n": n, "t_long": 100.0})


def criterion_04(scale="full", seed=0, workers=None) -> Criterion:
    """Closed-form separation identity: residual < 1e-2 eps, halving dt halves it."""
    cfg = InitPerturbConfig(a=(1.0, -1.0), b=(1.05, -1.03), eps=0.1, kappa=4.0)
    res, ratios, ok = [], [], True
    for s in range(seed, seed + 5):
        (_, r_coarse), (_, r_fine) = identity_convergence(cfg, s, [1e-3, 5e-4])
        ratio = r_coarse / r_fine
        res.append(r_coarse)
        ratios.append(ratio)
        ok &= r_coarse < 1e-2 * cfg.eps and 1.5 <= ratio <= 2.5
    return Criterion(4, "separation identity", bool(ok),
                     {"max_residual": max(res), "limit": 1e-2 * cfg.eps,
                      "min_ratio": min(ratios), "max_ratio": max(ratios)})


def criterion_05(scale="full", seed=0, workers=None) -> Criterion:
    """|lambda_k - eta_k| < 2 eps and Caratheodory distance <= 4 C(T,G) eps."""
    eps = 0.05
    cfg = InitPerturbConfig(
        a=(1.0, -1.0), b=(1.0 + 0.6 * eps, -1.0 - 0.3 * eps), eps=eps, kappa=4.0,
        seed_base=seed, n_paths=_n(1000, scale, 40), grid=CompactGridSpec(-1, 1, 1, 2, 4, 3),
    )
    r = run_init_perturbation(cfg, workers)
    c = r.caratheodory
    ok = r.separation.passed and c.passed
    return Criterion(5, "initial-value perturbation bounds", ok,
                     {"separation_violations": r.separation.n_violations,
                      "caratheodory_violations": c.n_violations,
                      "caratheodory_worst_margin": c.worst_margin,
                      "excluded_swallowed": c.extra.get("n_swallowed", 0),
                      "paths": cfg.n_paths})


def criterion_06(scale="full", seed=0, workers=None) -> Criterion:
    """sup (X* - X)^2 <= (4t/kappa^2) |kappa* - kappa| on every pair."""
    cfg = KappaPerturbConfig(kappa=2.0, kappa_star=2.5, a=2.0, seed_base=seed,
                             n_paths=_n(1000, scale, 100), chains=False, events=False)
    rep = run_kappa_perturbation(cfg, workers)
    lem = rep.lemma
    return Criterion(6, "diffusivity lemma bound", lem.passed,
                     {"violations": lem.n_violations, "worst_margin": lem.worst_margin,
                      "derived_bound_violations": lem.extra["derived_bound_violations"],
                      "paths": cfg.n_paths})


def criterion_07(scale="full", seed=0, workers=None) -> Criterion:
    """Deviation frequency <= zeta + 2 SE; P(E1) within 3 SE of its law."""
    cfg = KappaPerturbConfig(kappa=2.0, kappa_star=2.01, a=2.0, seed_base=seed,
                             n_paths=_n(1000, scale, 40))
    rep = run_kappa_perturbation(cfg, workers)
    e1 = rep.event_within("E1", 3.0)
    ok = rep.passed and e1
    return Criterion(7, "diffusivity tail bound", ok,
                     {"zeta": rep.zeta, "zeta_star": rep.zeta_star, "vacuous": rep.vacuous,
                      "deviation_freq": rep.deviation_freq, "deviation_se": rep.deviation_se,
                      "E1_freq": rep.event_freq["E1"], "E1_pred": rep.event_pred["E1"],
                      "paths": cfg.n_paths})


def _dyson_forces(grid, seed, n, N=2, kappa=4.0, init=(1.0, -1.0)):
    noise = sample_noise_batch(grid, seed, 0, n, N)
    return DrivingForces.from_dyson(simulate_dyson(grid, seed, N, kappa, init, noise=noise))


def criterion_08(scale="full", seed=0, workers=None) -> Criterion:
    """|h_T(g_T(z)) - z| < 1e-4 on 20 grid points over 100 Dyson paths."""
    grid = TimeGrid(1.0, 1000)
    n = _n(100, scale, 10)
    F = _dyson_forces(grid, seed, n)
    z = np.broadcast_to(CompactGridSpec(-1, 1, 1, 2, 5, 4).points(), (n, 20)).copy()
    fl = forward_flow(z, F)
    alive = ~np.isfinite(fl.swallowed_at)
    back = backward_evolve(np.where(alive, fl.values, 1j), F)
    res = np.abs(back - z)[alive]
    worst = float(res.max()) if res.size else 0.0
    return Criterion(8, "conformal round trip", worst < 1e-4,
                     {"max_residual": worst, "points": int(alive.sum()),
                      "excluded_swallowed": int((~alive).sum())})


def criterion_09(scale="full", seed=0, workers=None) -> Criterion:
    """|(g_T(z) - z) z - 2T| / 2T < 0.05 at z = 100i."""
    grid = TimeGrid(1.0, 1000)
    F = _dyson_forces(grid, seed, _n(20, scale, 5))
    cap = capacity_coefficient(np.full(F.batch_shape, 100j), F)
    err = float(np.max(np.abs(cap - 2.0)) / 2.0)
    return Criterion(9, "capacity coefficient", err < 0.05, {"max_rel_error": err})


def criterion_10(scale="full", seed=0, workers=None) -> Criterion:
    """Backward-chain Lipschitz bound on 100 paths, constant offsets 1e-3 and 1e-2."""
    grid = TimeGrid(1.0, 1000)
    n = _n(100, scale, 10)
    F = _dyson_forces(grid, seed, n)
    z = CompactGridSpec(-1, 1, 1, 2, 4, 3).points()
    viol, worst = 0, np.inf
    for eps in (1e-3, 1e-2):
        rep = check_lemma41(F, F.shifted(eps), z)
        viol += rep.n_violations
        worst = min(worst, rep.worst_margin)
    return Criterion(10, "backward-chain perturbation bound", viol == 0,
                     {"violations": viol, "worst_margin": float(worst), "paths": n})


def criterion_11(scale="full", seed=0, workers=None) -> Criterion:
    """Hausdorff estimate on coupled pairs with eps = 1e-3."""
    cfg = HausdorffConfig(eps=1e-3, seed_base=seed, n_paths=_n(50, scale, 5))
    rep, rec = run_hausdorff_perturbation(cfg, workers)
    return Criterion(11, "Hausdorff estimate", rep.passed and rep.n_paths > 0,
                     {"violations": rep.n_violations, "worst_margin": rep.worst_margin,
                      "checked": rep.n_paths, "excluded_unverified": rep.extra["n_unverified"],
                      "theta_hat_max": rep.extra["theta_hat_max"],
                      "max_d_H": float(np.max(rec["d_H"]))})


def _koebe_triples(rng, n, x_range=(-2.0, 2.0), y_range=(0.2, 2.0)):
    z = rng.uniform(*x_range, n) + 1j * rng.uniform(*y_range, n)
    r = rng.uniform(0.05, 0.95, n)
    rho = rng.uniform(0.0, 1.0, n)
    w = z + r * z.imag * rho * np.exp(2j * np.pi * rng.uniform(size=n))
    return z, w, r


def criterion_12(scale="full", seed=0, workers=None) -> Criterion:
    """Koebe distortion bounds for z^2 and for backward-chain maps."""
    rng = np.random.default_rng(seed)
    z, w, r = _koebe_triples(rng, 100)
    rep = koebe_check(lambda u: u * u, z, w, r)
    viol, worst = rep.n_violations, rep.worst_margin
    grid = TimeGrid(1.0, 1000)
    n_maps = _n(10, scale, 2)
    F = _dyson_forces(grid, seed, n_maps)
    for p in range(n_maps):
        f = inverse_map(DrivingForces(grid, F.paths[p]))
        z, w, r = _koebe_triples(rng, 100)
        rep = koebe_check(f, z, w, r)
        viol += rep.n_violations
        worst = min(worst, rep.worst_margin)
    return Criterion(12, "Koebe distortion", viol == 0,
                     {"violations": viol, "worst_rel_margin": worst, "maps": 1 + n_maps})


def _manifest_core(out: Path) -> dict:
    # wall time, output dir and worker count legitimately differ between runs
    m = json.loads((out / "manifest.json").read_text())
    m.pop("wall_time")
    for k in ("out", "workers"):
        m["config"].pop(k)
    return m


def criterion_13(scale="full", seed=0, workers=None) -> Criterion:
    """Reruns and different worker counts give byte-identical artifacts."""
    from .cli import run
    from .config import parse_config

    kinds = [
        ["kind=perturb-init", "eps=0.05", "n_paths=6", "dt=0.01"],
        ["kind=perturb-kappa", "kappa=2", "kappa_star=2.5", "n_paths=6", "dt=0.01", "t_long=10"],
        ["kind=trace", "n_paths=3", "dt=0.01"],
        ["kind=simulate-dyson", "N=3", "n_paths=3", "dt=0.01"],
    ]
    same = True
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, over in enumerate(kinds):
            outs = []
            for tag, w in (("a", 1), ("b", 1), ("c", 2)):
                out = Path(tmp) / f"{i}{tag}"
                cfg = parse_config(None, over + [f"out={out}", f"seed={seed}", f"workers={w}"])
                run(cfg)
                outs.append(out)
            files = sorted(p.name for p in outs[0].iterdir() if p.name != "manifest.json")
            ref = _manifest_core(outs[0])
            for other in outs[1:]:
                if sorted(p.name for p in other.iterdir() if p.name != "manifest.json") != files:
                    same = False
                    mismatched.append(other.name)
                if _manifest_core(other) != ref:
                    same = False
                    mismatched.append(f"{other.name}/manifest.json")
                _, bad, err = filecmp.cmpfiles(outs[0], other, files, shallow=False)
                if bad or err:
                    same = False
                    mismatched += bad + err
    return Criterion(13, "determinism and parallel equals serial", same,
                     {"experiments": len(kinds), "mismatched": len(mismatched)})


CRITERIA: dict = {
    i: f
    for i, f in enumerate(
        [criterion_01, criterion_02, criterion_03, criterion_04, criterion_05, criterion_06,
         criterion_07, criterion_08, criterion_09, criterion_10, criterion_11, criterion_12,
         criterion_13],
        start=1,
    )
}


def run_all(scale="full", seed=0, workers=None, only=None, echo: Optional[Callable] = None):
    out = []
    for i, fn in CRITERIA.items():
        if only and i not in only:
            continue
        t = time.perf_counter()
        c = fn(scale=scale, seed=seed, workers=workers)
        c.seconds = time.perf_counter() - t
        out.append(c)
        if echo:
            echo(c.line())
    return out
