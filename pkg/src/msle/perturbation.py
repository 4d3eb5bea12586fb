"""Coupled experiments: perturbed initial values and perturbed diffusivity.

Both drivers simulate the original and the perturbed driving forces on the
same Brownian increments, run both forward Loewner chains on a compact grid
and compare what they see against the pathwise and probabilistic bounds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigInvalid, ParamOrder
from .loewner import DrivingForces
from .metrics import CompactGridSpec, compare_chains, ctg_value
from .parallel import map_paths
from .paths import (
    DysonPaths,
    TimeGrid,
    bessel_dimension,
    bessel_index,
    difference_noise,
    dyson_pair_from_bessel,
    infimum_to_horizon,
    sample_noise_batch,
    simulate_coupled_bessel_dims,
    simulate_coupled_bessel_starts,
    sum_noise,
)
from .reports import BoundReport, TailReport, default_slack

# ---------------------------------------------------------------------------
# closed forms


def phi_alphas(C, T: float, kappa: float, a: float):
    """(alpha_1, alpha_2, alpha_3) = C (4T/k^2, 32 T^{5/2}/k^3, 4Ta/k^2)."""
    C = np.asarray(C, dtype=float)
    return (
        C * 4.0 * T / kappa**2,
        C * 32.0 * T**2.5 / kappa**3,
        C * 4.0 * T * a / kappa**2,
    )


def phi(x, alpha1, alpha2, alpha3):
    """alpha1 x^{1/8} + alpha2 x^{1/4} + alpha3 x^{7/8}."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("phi is defined for x >= 0")
    out = alpha1 * x**0.125 + alpha2 * x**0.25 + alpha3 * x**0.875
    return float(out) if np.ndim(out) == 0 else out


def _tail_term(x, T):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0, x**0.75 * np.exp(-1.0 / (2.0 * T * np.maximum(x, 1e-300) ** 1.5)), 0.0)


def zeta(x, nu: float, a: float, T: float):
    """2 x^{nu/8} / a^{2 nu} + 2 x^{3/4} exp(-1 / (2 T x^{3/2})); 0 at x = 0."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, 2.0 * np.maximum(x, 0) ** (nu / 8.0) / a ** (2 * nu), 0.0)
    out = out + 2.0 * _tail_term(x, T)
    return float(out) if out.ndim == 0 else out


def zeta_star(x, nu: float, nu_star: float, a: float, T: float):
    """Union bound over E1, E2, E3 with both indices and the sqrt(2/pi) factor kept."""
    x = np.asarray(x, dtype=float)
    xp = np.maximum(x, 0)
    out = np.where(
        x > 0, xp ** (nu / 8.0) / a ** (2 * nu) + xp ** (nu_star / 8.0) / a ** (2 * nu_star), 0.0
    )
    out = out + 2.0 * np.sqrt(2.0 / np.pi) * _tail_term(x, T)
    return float(out) if out.ndim == 0 else out


def infimum_law_cdf(y, a: float, nu: float):
    """P(M_inf < y) = (y/a)^{2 nu} on [0, a]."""
    y = np.asarray(y, dtype=float)
    out = np.clip(y / a, 0.0, 1.0) ** (2.0 * nu)
    out = np.where(y <= 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def sup_bm_cdf(x, t: float):
    """P(sup_{s<=t} W_s <= x) = 2 Phi(x / sqrt t) - 1 for x >= 0."""
    if not t > 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, erf(np.maximum(x, 0) / np.sqrt(2.0 * t)), 0.0)
    return float(out) if out.ndim == 0 else out


def reflection_tail_bound(x, t: float):
    """2 sqrt(2/pi) (sqrt t / x) exp(-x^2 / 2t): bound on P(sup |W| > x)."""
    x = np.asarray(x, dtype=float)
    return 2.0 * np.sqrt(2.0 / np.pi) * np.sqrt(t) / x * np.exp(-(x**2) / (2.0 * t))


def diffusivity_gap_bound(t, kappa: float, kappa_star: float):
    """(4t / kappa^2) |kappa* - kappa|, the bound as stated."""
    return 4.0 * np.asarray(t) / kappa**2 * abs(kappa_star - kappa)


def diffusivity_gap_bound_derived(t, kappa: float, kappa_star: float):
    """8t |kappa* - kappa| / (kappa kappa*), re-derived from the Ito expansion."""
    return 8.0 * np.asarray(t) * abs(kappa_star - kappa) / (kappa * kappa_star)


def force_gap_bound(t, x, kappa, kappa_star, a, M, Ms, supW):
    """Pathwise bound on |lambda_k(t) - lambda*_k(t)| from running infima and sup |W|."""
    mm = M * Ms
    return (
        x * 2.0 * a / (kappa_star * kappa) * t / mm
        + np.sqrt(x) * 16.0 / (kappa_star * kappa**2) * t**2.5 / mm**2
        + x * 2.0 / (kappa_star * kappa) * t / mm * supW
    )


def _trapezoid_cumulative(f, dt):
    out = np.zeros(f.shape)
    out[..., 1:] = np.cumsum(0.5 * dt * (f[..., 1:] + f[..., :-1]), axis=-1)
    return out


def identity_rhs(X, Y, a_gap, b_gap, kappa, dt):
    """(a - b) exp(-(4/kappa) int 1/(X Y)), the integral by trapezoid."""
    I = _trapezoid_cumulative(1.0 / (X * Y), dt)
    return (a_gap - b_gap) * np.exp(-(4.0 / kappa) * I)


# ---------------------------------------------------------------------------
# initial-value perturbation


@dataclass(frozen=True)
class InitPerturbConfig:
    a: tuple = (1.0, -1.0)
    b: tuple = (1.05, -1.03)
    eps: float = 0.1
    kappa: float = 4.0
    T: float = 1.0
    dt: float = 1e-3
    seed_base: int = 0
    n_paths: int = 100
    grid: CompactGridSpec = field(default_factory=CompactGridSpec)
    chains: bool = True

    def validate(self):
        a1, a2 = self.a
        b1, b2 = self.b
        if not 0.0 < self.kappa <= 4.0:
            raise ConfigInvalid("kappa must lie in (0,4]")
        if not a1 > a2:
            raise ConfigInvalid("need a1 > a2")
        if not b1 > b2:
            raise ConfigInvalid("need b1 > b2")
        if not self.eps > 0:
            raise ConfigInvalid("eps must be positive")
        if not self.eps < (a1 - a2) / 3.0:
            raise ConfigInvalid(
                f"eps must satisfy 0 < eps < (a1 - a2)/3 = {(a1 - a2) / 3.0:g}"
            )
        if not (abs(a1 - b1) < self.eps and abs(a2 - b2) < self.eps):
            raise ConfigInvalid("need |a_k - b_k| < eps for k = 1, 2")
        if self.n_paths < 0:
            raise ConfigInvalid("n_paths must be nonnegative")
        return self

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid.from_dt(self.T, self.dt)


@dataclass(frozen=True)
class CoupledInit:
    """Both Dyson pairs and their gaps for one batch of paths."""

    lam: DysonPaths
    eta: DysonPaths
    X: np.ndarray
    Y: np.ndarray


def coupled_init_pairs(cfg: InitPerturbConfig, start: int, stop: int, noise=None) -> CoupledInit:
    """lambda from a, eta from b, sharing gap noise W and sum noise W'."""
    grid = cfg.time_grid
    if noise is None:
        noise = sample_noise_batch(grid, cfg.seed_base, start, stop, 2)
    grid = noise.grid
    W = difference_noise(noise.stream(0), noise.stream(1))
    Ws = sum_noise(noise.stream(0), noise.stream(1))
    (a1, a2), (b1, b2) = cfg.a, cfg.b
    d = bessel_dimension(cfg.kappa)
    X, Y = simulate_coupled_bessel_starts(grid, W, a1 - a2, b1 - b2, d)
    lam = dyson_pair_from_bessel(X, Ws, a1, a2)
    eta = dyson_pair_from_bessel(Y, Ws, b1, b2)
    return CoupledInit(lam, eta, X.values, Y.values)


def init_identity_residual(pair: CoupledInit, cfg: InitPerturbConfig) -> np.ndarray:
    """max over t and k of |lambda_k - eta_k - (a_k - b_k + (-1)^{3-k}(rhs - (a-b))/2)|."""
    (a1, a2), (b1, b2) = cfg.a, cfg.b
    ag, bg = a1 - a2, b1 - b2
    rhs = identity_rhs(pair.X, pair.Y, ag, bg, cfg.kappa, pair.lam.grid.dt)
    diff = pair.lam.positions - pair.eta.positions
    pred1 = (a1 - b1) + 0.5 * (rhs - (ag - bg))
    pred2 = (a2 - b2) - 0.5 * (rhs - (ag - bg))
    r = np.maximum(np.abs(diff[..., 0, :] - pred1), np.abs(diff[..., 1, :] - pred2))
    return r.max(-1)


def identity_convergence(cfg: InitPerturbConfig, seed: int, dts: Sequence[float]):
    """Identity residual of one path at each dt, all on one Brownian path.

    The noise is drawn on the finest grid and summed up to the coarser ones.
    """
    dts = sorted(dts)
    fine = TimeGrid.from_dt(cfg.T, dts[0])
    noise = sample_noise_batch(fine, seed, 0, 1, 2)
    out = []
    for dt in sorted(dts, reverse=True):
        factor = int(round(dt / dts[0]))
        nz = noise.coarsen(factor) if factor > 1 else noise
        pair = coupled_init_pairs(cfg, 0, 1, nz)
        out.append((dt, float(init_identity_residual(pair, cfg)[0])))
    return out


def _init_chunk(cfg: InitPerturbConfig, start: int, stop: int) -> dict:
    pair = coupled_init_pairs(cfg, start, stop)
    (a1, a2), (b1, b2) = cfg.a, cfg.b
    diff = np.abs(pair.lam.positions - pair.eta.positions)  # (P, 2, n+1)
    sup_k = diff.max(-1)
    # |lambda_k - eta_k - (a_k - b_k)| must be nondecreasing in t
    drift = np.abs(pair.lam.positions - pair.eta.positions - np.array([a1 - b1, a2 - b2])[:, None])
    mono = np.all(np.diff(drift, axis=-1) >= -1e-12, axis=(-1, -2))
    out = {
        "sup_diff": sup_k.max(-1),
        "sum_sup": sup_k.sum(-1),
        "residual": init_identity_residual(pair, cfg),
        "monotone": mono,
    }
    if cfg.chains:
        f1 = DrivingForces.from_dyson(pair.lam)
        f2 = DrivingForces.from_dyson(pair.eta)
        cmp = compare_chains(f1, f2, cfg.grid)
        out["distance"] = cmp.distance
        out["delta1"] = cmp.delta1
        out["swallowed"] = cmp.swallowed
    return out


@dataclass(frozen=True)
class InitPerturbResult:
    separation: BoundReport
    identity: BoundReport
    caratheodory: Optional[BoundReport]
    monotone_fraction: float
    records: dict

    @property
    def passed(self) -> bool:
        ok = self.separation.passed and self.identity.passed
        return ok and (self.caratheodory is None or self.caratheodory.passed)

    def to_dict(self) -> dict:
        return {
            "separation": self.separation.to_dict(),
            "identity": self.identity.to_dict(),
            "caratheodory": None if self.caratheodory is None else self.caratheodory.to_dict(),
            "monotone_fraction": self.monotone_fraction,
            "pass": self.passed,
        }


def _params(cfg) -> dict:
    d = asdict(cfg)
    d["grid"] = asdict(cfg.grid)
    return d


def run_init_perturbation(cfg: InitPerturbConfig, workers: Optional[int] = None) -> InitPerturbResult:
    """Check |lambda_k - eta_k| < 2 eps, the closed-form identity and the
    Caratheodory bound 4 C(T, G) eps on every coupled path.

    C(T, G) is evaluated per path with delta1 = min Im g_T over the grid and
    both chains.  Paths where a grid point is swallowed are excluded from the
    Caratheodory check and counted.
    """
    cfg.validate()
    rec = map_paths(_init_chunk, cfg.n_paths, (cfg,), workers)
    slack = default_slack(cfg.dt)
    params = _params(cfg)
    sep = BoundReport.from_margins("init_separation", 2 * cfg.eps - rec.get("sup_diff", []), slack, params)
    # the identity is exact in continuous time; its residual should be far
    # below eps (1e-2 eps is the acceptance level)
    ident = BoundReport.from_margins(
        "init_identity", 1e-2 * cfg.eps - rec.get("residual", []), 0.0, params
    )
    cara = None
    if cfg.chains:
        C = ctg_value(rec["delta1"], cfg.grid.delta2, cfg.T, 2)
        margins = 4.0 * C * cfg.eps - rec["distance"]
        cara = BoundReport.from_margins(
            "init_caratheodory",
            margins,
            slack,
            params,
            n_swallowed=int(np.count_nonzero(rec["swallowed"])),
            C_min=float(np.nanmin(C)) if np.any(np.isfinite(C)) else None,
            C_max=float(np.nanmax(C)) if np.any(np.isfinite(C)) else None,
        )
    mono = float(np.mean(rec["monotone"])) if cfg.n_paths else 1.0
    return InitPerturbResult(sep, ident, cara, mono, rec)


# ---------------------------------------------------------------------------
# diffusivity perturbation


@dataclass(frozen=True)
class KappaPerturbConfig:
    kappa: float = 2.0
    kappa_star: float = 2.5
    a: float = 2.0
    center: float = 0.0
    T: float = 1.0
    dt: float = 1e-3
    seed_base: int = 0
    n_paths: int = 100
    grid: CompactGridSpec = field(default_factory=CompactGridSpec)
    t_long: Optional[float] = None
    dt_long: float = 1e-2
    chains: bool = True
    events: bool = True

    def validate(self):
        for name, k in (("kappa", self.kappa), ("kappa_star", self.kappa_star)):
            if not 0.0 < k <= 4.0:
                raise ConfigInvalid(f"{name} must lie in (0,4]")
        if not self.kappa_star > self.kappa:
            raise ParamOrder(f"need kappa < kappa_star, got {self.kappa} >= {self.kappa_star}")
        if not self.a > 0:
            raise ConfigInvalid("gap a must be positive")
        return self

    @property
    def x(self) -> float:
        return self.kappa_star - self.kappa

    @property
    def nu(self) -> float:
        return bessel_index(bessel_dimension(self.kappa))

    @property
    def nu_star(self) -> float:
        return bessel_index(bessel_dimension(self.kappa_star))

    @property
    def horizon_long(self) -> float:
        return 100.0 * self.a**2 if self.t_long is None else self.t_long

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid.from_dt(self.T, self.dt)

    @property
    def starts(self) -> tuple:
        return (self.center + self.a / 2.0, self.center - self.a / 2.0)


def coupled_kappa_pairs(cfg: KappaPerturbConfig, start: int, stop: int, noise=None):
    """(lambda, lambda*, X, X*, W) on shared gap noise W and sum noise W'."""
    grid = cfg.time_grid
    if noise is None:
        noise = sample_noise_batch(grid, cfg.seed_base, start, stop, 2)
    grid = noise.grid
    W = difference_noise(noise.stream(0), noise.stream(1))
    Ws = sum_noise(noise.stream(0), noise.stream(1))
    X, Xs = simulate_coupled_bessel_dims(grid, W, cfg.a, cfg.kappa, cfg.kappa_star)
    a1, a2 = cfg.starts
    lam = dyson_pair_from_bessel(X, Ws, a1, a2)
    lam_s = dyson_pair_from_bessel(Xs, Ws, a1, a2)
    return lam, lam_s, X.values, Xs.values, W


def _kappa_chunk(cfg: KappaPerturbConfig, start: int, stop: int) -> dict:
    lam, lam_s, X, Xs, W = coupled_kappa_pairs(cfg, start, stop)
    grid = lam.grid
    t = grid.times
    x = cfg.x
    run_sq = np.maximum.accumulate((Xs - X) ** 2, axis=-1)
    # both sides vanish at t = 0, so margins are taken over t > 0
    lemma = np.min((diffusivity_gap_bound(t, cfg.kappa, cfg.kappa_star) - run_sq)[..., 1:], axis=-1)
    lemma_d = np.min((diffusivity_gap_bound_derived(t, cfg.kappa, cfg.kappa_star) - run_sq)[..., 1:], axis=-1)
    M = np.minimum.accumulate(X, axis=-1)
    Ms = np.minimum.accumulate(Xs, axis=-1)
    supW = np.maximum.accumulate(np.abs(W.cumulative()), axis=-1)
    fb = force_gap_bound(t, x, cfg.kappa, cfg.kappa_star, cfg.a, M, Ms, supW)
    gap = np.abs(lam.positions - lam_s.positions).max(-2)
    force_margin = np.min((fb - gap)[..., 1:], axis=-1)
    sum_sup = np.abs(lam.positions - lam_s.positions).max(-1).sum(-1)
    out = {
        "lemma_margin": lemma,
        "lemma_margin_derived": lemma_d,
        "force_margin": force_margin,
        "sum_sup": sum_sup,
        "E3": supW[:, -1] <= x ** (-0.75),
    }
    if cfg.events:
        out.update(_events(cfg, start, stop, X, Xs, M, Ms))
    if cfg.chains:
        cmp = compare_chains(DrivingForces.from_dyson(lam), DrivingForces.from_dyson(lam_s), cfg.grid)
        out["distance"] = cmp.distance
        out["delta1"] = cmp.delta1
        out["swallowed"] = cmp.swallowed
    return out


def _events(cfg, start, stop, X, Xs, M, Ms) -> dict:
    # infima past T: continue both gaps from X_T with their running minima
    seeds = range(cfg.seed_base + start, cfg.seed_base + stop)
    dims = np.array([[bessel_dimension(cfg.kappa)], [bessel_dimension(cfg.kappa_star)]])
    minf = infimum_to_horizon(
        cfg.a,
        dims,
        cfg.horizon_long,
        cfg.dt_long,
        seeds,
        x_start=np.stack([X[:, -1], Xs[:, -1]]),
        min_start=np.stack([M[:, -1], Ms[:, -1]]),
    )
    thr = cfg.x ** (1.0 / 16.0)
    return {"E1": minf[0] >= thr, "E2": minf[1] >= thr, "M_inf": minf[0], "M_inf_star": minf[1]}


def run_kappa_perturbation(
    cfg: KappaPerturbConfig, workers: Optional[int] = None, with_records: bool = False
):
    """Lemma bound, driving-force bound, events E1..E3 and the tail claim.

    The deviation frequency counts paths whose Caratheodory distance on the
    grid exceeds phi(kappa* - kappa), with C(T, G) from each path's delta1;
    paths where a grid point is swallowed are excluded and counted.
    """
    cfg.validate()
    rec = map_paths(_kappa_chunk, cfg.n_paths, (cfg,), workers)
    params = _params(cfg)
    slack = default_slack(cfg.dt)
    x = cfg.x
    lemma = BoundReport.from_margins(
        "diffusivity_gap",
        rec["lemma_margin"],
        slack,
        params,
        derived_bound_violations=int(np.count_nonzero(rec["lemma_margin_derived"] < -slack)),
        derived_bound_worst=float(np.min(rec["lemma_margin_derived"])) if cfg.n_paths else None,
    )
    force = BoundReport.from_margins("force_gap_bound", rec["force_margin"], slack, params)
    n = cfg.n_paths
    nu, nus, a, T = cfg.nu, cfg.nu_star, cfg.a, cfg.T
    names = ("E1", "E2", "E3") if cfg.events else ("E3",)
    freq = {k: float(np.mean(rec[k])) if n else 0.0 for k in names}
    y3 = x ** (-0.75)
    pred = {
        "E1": 1.0 - x ** (nu / 8.0) / a ** (2 * nu),
        "E2": 1.0 - x ** (nus / 8.0) / a ** (2 * nus),
        # P(sup |W| > y) <= 2 P(sup W >= y); recorded as the matching lower bound on P(E3)
        "E3": 1.0 - 2.0 * (1.0 - sup_bm_cdf(y3, T)),
    }
    pred = {k: v for k, v in pred.items() if k in names}
    notes = ["M_inf from the running infimum to t_long plus an exact tail draw"]
    phi_val = float("nan")
    dev_freq, dev_se = 0.0, 0.0
    if cfg.chains:
        C = ctg_value(rec["delta1"], cfg.grid.delta2, T, 2)
        phis = phi(x, *phi_alphas(C, T, cfg.kappa, a))
        ok = ~rec["swallowed"]
        dev = rec["distance"][ok] > phis[ok]
        m = int(ok.sum())
        dev_freq = float(dev.mean()) if m else 0.0
        dev_se = float(np.sqrt(max(dev_freq * (1 - dev_freq), 0.0) / m)) if m else 0.0
        phi_val = float(np.nanmedian(phis)) if m else float("nan")
        notes.append(f"{n - m} paths excluded (grid point swallowed)")
        notes.append("phi uses C(T,G) per path; phi reported is the median")
    report = TailReport(
        n_paths=n,
        x=x,
        phi=phi_val,
        zeta=zeta(x, nu, a, T),
        zeta_star=zeta_star(x, nu, nus, a, T),
        deviation_freq=dev_freq,
        deviation_se=dev_se,
        event_freq=freq,
        event_pred=pred,
        lemma=lemma,
        force_bound=force,
        params=params,
        notes=tuple(notes),
    )
    return (report, rec) if with_records else report


# ---------------------------------------------------------------------------
# N >= 3 diagnostic


@dataclass(frozen=True)
class QDiagnostic:
    times: np.ndarray
    Q: np.ndarray
    defined: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs)

    @property
    def max_residual(self) -> float:
        """Largest residual over the times where the identity is available."""
        r = self.residual
        r = r[np.isfinite(r)]
        return float(np.max(r)) if r.size else 0.0

    @property
    def degenerate(self) -> np.ndarray:
        return ~self.defined


def q_diagnostic(orig: DysonPaths, pert: DysonPaths, i: int, j: int) -> QDiagnostic:
    """Q^{ij}_t from the pairwise gaps of two coupled Dyson systems (0-based i, j).

    Where X^{ij} - Y^{ij} vanishes Q is NaN and the time is flagged.  The
    residual compares X^{ij} - Y^{ij} against
    (a_ij - b_ij) exp(-(4/k) int 1/(X^ij Y^ij) - (2/k) int Q), both by trapezoid.
    Single-path inputs.
    """
    N = orig.N
    if N < 3:
        raise ValueError("Q needs N >= 3 (the interaction sum is empty for N = 2)")
    if i == j or not (0 <= i < N and 0 <= j < N):
        raise ValueError("need distinct particle indices in range")
    lam, eta = orig.positions, pert.positions
    if lam.ndim != 2:
        raise ValueError("q_diagnostic takes single-path DysonPaths")
    kappa, dt = orig.kappa, orig.grid.dt

    def gaps(p, q):
        return lam[p] - lam[q], eta[p] - eta[q]

    Xij, Yij = gaps(i, j)
    D = Xij - Yij
    # differences at rounding level (e.g. a pure translation) count as zero
    tol = 1e-12 * max(1.0, float(np.max(np.abs(Xij))))
    D = np.where(np.abs(D) > tol, D, 0.0)
    defined = D != 0.0
    Dsafe = np.where(defined, D, 1.0)
    Q = np.zeros_like(D)
    for k in range(N):
        if k in (i, j):
            continue
        Xik, Yik = gaps(i, k)
        Xjk, Yjk = gaps(j, k)
        Q += ((Xik - Yik) / (Xik * Yik) - (Xjk - Yjk) / (Xjk * Yjk)) / Dsafe
    Q = np.where(defined, Q, np.nan)
    rhs = np.full_like(D, np.nan)
    if not np.any(D):
        rhs[:] = 0.0  # zero perturbation: the identity reads 0 = 0
    else:
        # the exponent exists up to the first time the gap difference vanishes
        stop = D.size if np.all(defined) else int(np.argmin(defined))
        if stop:
            I = _trapezoid_cumulative(1.0 / (Xij * Yij)[:stop], dt)
            J = _trapezoid_cumulative(Q[:stop], dt)
            rhs[:stop] = D[0] * np.exp(-(4.0 / kappa) * I - (2.0 / kappa) * J)
    return QDiagnostic(orig.grid.times, Q, defined, D, rhs)


# ---------------------------------------------------------------------------
# convergence sweeps


@dataclass(frozen=True)
class SweepTable:
    mode: str
    params: tuple
    distance_max: tuple
    distance_mean: tuple
    bound: tuple
    n_excluded: tuple

    @property
    def rows(self) -> list:
        return [
            {"param": p, "distance_max": d, "distance_mean": m, "bound": b, "n_excluded": e}
            for p, d, m, b, e in zip(
                self.params, self.distance_max, self.distance_mean, self.bound, self.n_excluded
            )
        ]

    def decreasing(self) -> bool:
        d = np.asarray(self.distance_max, dtype=float)
        return bool(np.all(np.diff(d) <= 0.0))

    def within_bound(self) -> bool:
        d = np.asarray(self.distance_max, dtype=float)
        b = np.asarray(self.bound, dtype=float)
        return bool(np.all(~np.isfinite(b) | (d <= b)))


def _check_sequence(seq):
    s = np.asarray(list(seq), dtype=float)
    if s.size and (np.any(s <= 0) or np.any(np.diff(s) >= 0)):
        raise ValueError("sweep needs a strictly decreasing positive sequence")
    return s


def convergence_sweep(
    mode: str,
    sequence: Sequence[float],
    base=None,
    direction: Sequence[float] = (0.6, -0.3),
    workers: Optional[int] = None,
) -> SweepTable:
    """Caratheodory distances on a fixed grid as the perturbation shrinks.

    mode "init": b = a + eps_n * direction (|direction_k| < 1), bound 4 C eps_n.
    mode "kappa": kappa* = kappa + x_n, bound phi(x_n) (reported, not asserted).
    The same seeds are used at every level.
    """
    seq = _check_sequence(sequence)
    P, D, Mn, B, E = [], [], [], [], []
    for s in seq:
        if mode == "init":
            cfg = base or InitPerturbConfig()
            a = np.asarray(cfg.a, dtype=float)
            b = tuple((a + s * np.asarray(direction)).tolist())
            cfg = InitPerturbConfig(
                cfg.a, b, float(s), cfg.kappa, cfg.T, cfg.dt, cfg.seed_base, cfg.n_paths, cfg.grid
            )
            res = run_init_perturbation(cfg, workers)
            d = res.records["distance"]
            C = ctg_value(res.records["delta1"], cfg.grid.delta2, cfg.T, 2)
            bound = 4.0 * C * s
        elif mode == "kappa":
            cfg = base or KappaPerturbConfig()
            cfg = KappaPerturbConfig(
                cfg.kappa, cfg.kappa + s, cfg.a, cfg.center, cfg.T, cfg.dt, cfg.seed_base,
                cfg.n_paths, cfg.grid, cfg.t_long, cfg.dt_long,
            )
            _, rec = run_kappa_perturbation(cfg, workers, with_records=True)
            d = rec["distance"]
            C = ctg_value(rec["delta1"], cfg.grid.delta2, cfg.T, 2)
            bound = phi(s, *phi_alphas(C, cfg.T, cfg.kappa, cfg.a))
        else:
            raise ValueError("mode must be 'init' or 'kappa'")
        ok = np.isfinite(d)
        P.append(float(s))
        D.append(float(np.max(d[ok])) if ok.any() else float("nan"))
        Mn.append(float(np.mean(d[ok])) if ok.any() else float("nan"))
        B.append(float(np.min(bound[ok])) if ok.any() else float("nan"))
        E.append(int(np.count_nonzero(~ok)))
    return SweepTable(mode, tuple(P), tuple(D), tuple(Mn), tuple(B), tuple(E))


# ---------------------------------------------------------------------------
# Hausdorff stability of the hulls


@dataclass(frozen=True)
class HausdorffConfig:
    a: tuple = (1.0, -1.0)
    eps: float = 1e-3
    kappa: float = 4.0
    T: float = 1.0
    dt: float = 1e-3
    seed_base: int = 0
    n_paths: int = 50
    delta_trace: Optional[float] = None
    # b = a + share * eps * (1, -1): each force moves by less than share * 2 eps
    share: float = 0.24

    def validate(self):
        if not 0.0 < self.kappa <= 4.0:
            raise ConfigInvalid("kappa must lie in (0,4]")
        if not self.eps > 0:
            raise ConfigInvalid("eps must be positive")
        if not self.a[0] > self.a[1]:
            raise ConfigInvalid("need a1 > a2")
        return self

    @property
    def b(self) -> tuple:
        d = self.share * self.eps
        return (self.a[0] + d, self.a[1] - d)


def _hausdorff_chunk(cfg: HausdorffConfig, start: int, stop: int) -> dict:
    from .loewner import hull_clip_length, hull_from_trace, trace_extract
    from .metrics import check_prop43, clip_is_exact, derivative_probe, probe_deltas, probe_zetas

    icfg = InitPerturbConfig(
        cfg.a, cfg.b, max(cfg.eps, 1e-300), cfg.kappa, cfg.T, cfg.dt, cfg.seed_base, 0, chains=False
    )
    pair = coupled_init_pairs(icfg, start, stop)
    f1 = DrivingForces.from_dyson(pair.lam)
    f2 = DrivingForces.from_dyson(pair.eta)
    sum_sup = f1.sup_difference(f2).sum(-1)
    tr1 = trace_extract(f1, delta_trace=cfg.delta_trace)
    tr2 = trace_extract(f2, delta_trace=cfg.delta_trace)
    n = stop - start
    keys = ("d_H", "rhs", "theta_hat", "verified", "sum_sup", "clip_exact")
    out = {k: np.empty(n) for k in keys}
    deltas = probe_deltas(cfg.T, cfg.eps)
    for p in range(n):
        g1 = DrivingForces(f1.grid, f1.paths[p])
        g2 = DrivingForces(f2.grid, f2.paths[p])
        L = max(hull_clip_length(g1), hull_clip_length(g2))
        h1, h2 = hull_from_trace(tr1, L, p), hull_from_trace(tr2, L, p)
        probe = derivative_probe(g1, probe_zetas(g1), deltas, cfg.eps)
        rep = check_prop43(h1, h2, cfg.eps, probe.theta, cfg.T, probe.verified)
        out["d_H"][p] = rep.d_H
        out["rhs"][p] = rep.rhs
        out["theta_hat"][p] = probe.theta_hat
        out["verified"][p] = probe.verified and sum_sup[p] < cfg.eps
        out["sum_sup"][p] = sum_sup[p]
        out["clip_exact"][p] = clip_is_exact(h1) and clip_is_exact(h2)
    out["verified"] = out["verified"].astype(bool)
    out["clip_exact"] = out["clip_exact"].astype(bool)
    return out


def run_hausdorff_perturbation(cfg: HausdorffConfig, workers: Optional[int] = None):
    """d_H of the hulls of two coupled pairs against 8 (T eps)^((1-theta)/2) + 3 sqrt(eps (1+eps)).

    theta is the probe estimate for the original chain.  Paths where the
    probe finds theta_hat >= 1, or where the forces differ by eps or more in
    total, are excluded and counted.  Returns (BoundReport, records).
    """
    cfg.validate()
    rec = map_paths(_hausdorff_chunk, cfg.n_paths, (cfg,), workers, chunk=10)
    margins = np.where(rec["verified"], rec["rhs"] - rec["d_H"], np.nan)
    report = BoundReport.from_margins(
        "hausdorff_estimate",
        margins,
        0.0,
        asdict(cfg),
        n_unverified=int(np.count_nonzero(~rec["verified"])),
        theta_hat_max=float(np.max(rec["theta_hat"])) if cfg.n_paths else None,
        clip_exact=bool(np.all(rec["clip_exact"])),
        note="hypothesis checked at probes only",
    )
    return report, rec
