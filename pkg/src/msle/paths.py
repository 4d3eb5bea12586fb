"""Brownian noise, Bessel gaps and Dyson Brownian motion on a uniform grid.

All randomness comes from counter-based Philox generators keyed by an integer
seed, one key per Monte Carlo path.  Each key owns several independent
streams (``jumped`` copies of the generator):

    stream 0   particle increments B_1..B_N on the main grid
    stream 1   increments that continue a path past the main horizon
    stream 2   uniforms for bridge-corrected running minima
    stream 3   uniforms for the exact tail of the infimum

so a path is reproducible bit-for-bit from its key alone, no matter how
paths are grouped into batches or spread across worker processes.

Array layout: every time series keeps time on the last axis; leading axes
are batch axes (paths, perturbation copies, ...).  Dyson positions are
``(..., N, n_steps + 1)`` and ordered *decreasingly*, lambda_1 > ... > lambda_N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InitOrder,
    InvalidGrid,
    NonpositiveState,
    OrderingViolation,
    ParamOrder,
)

SQRT2 = np.sqrt(2.0)

NOISE_STREAM = 0
EXTENSION_STREAM = 1
BRIDGE_STREAM = 2
TAIL_STREAM = 3


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * T / n on [0, T]."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not isinstance(self.n_steps, (int, np.integer)) or self.n_steps < 1:
            raise InvalidGrid(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InvalidGrid(f"horizon must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> "TimeGrid":
        if dt <= 0:
            raise InvalidGrid(f"dt must be positive, got {dt!r}")
        n = int(round(horizon / dt))
        if n < 1 or not np.isclose(n * dt, horizon, rtol=1e-9, atol=0.0):
            raise InvalidGrid(f"horizon {horizon} is not a whole number of steps dt={dt}")
        return cls(horizon, n)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)

    def index_of(self, t: float) -> int:
        """Grid index of time t; t must be a grid time."""
        i = int(round(t / self.dt))
        if i < 0 or i > self.n_steps or not np.isclose(i * self.dt, t, rtol=1e-9, atol=1e-15):
            raise InvalidGrid(f"t={t} is not a grid time")
        return i


def path_generator(seed: int, stream: int = NOISE_STREAM) -> np.random.Generator:
    """Philox generator for one path; ``stream`` selects an independent substream."""
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    bg = np.random.Philox(key=int(seed))
    if stream:
        bg = bg.jumped(stream)
    return np.random.Generator(bg)


@dataclass(frozen=True)
class NoisePath:
    """Gaussian increments dW_i ~ N(0, dt) on a grid (time on the last axis)."""

    grid: TimeGrid
    increments: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        inc = _readonly(self.increments)
        if inc.ndim == 0 or inc.shape[-1] != self.grid.n_steps:
            raise InvalidGrid(
                f"expected {self.grid.n_steps} increments on the last axis, got shape {inc.shape}"
            )
        object.__setattr__(self, "increments", inc)

    def cumulative(self) -> np.ndarray:
        """W(t_i) with W(0) = 0."""
        w = np.zeros(self.increments.shape[:-1] + (self.grid.n_steps + 1,))
        np.cumsum(self.increments, axis=-1, out=w[..., 1:])
        return w

    def coarsen(self, factor: int) -> "NoisePath":
        """Same Brownian path seen on a grid with ``factor`` times larger steps."""
        if self.grid.n_steps % factor:
            raise InvalidGrid(f"{self.grid.n_steps} steps are not divisible by {factor}")
        n = self.grid.n_steps // factor
        inc = self.increments.reshape(self.increments.shape[:-1] + (n, factor)).sum(-1)
        return NoisePath(TimeGrid(self.grid.horizon, n), inc, self.seed)

    def stream(self, j: int) -> "NoisePath":
        """Increments of particle j from a multi-stream path ``(..., N, n)``."""
        return NoisePath(self.grid, self.increments[..., j, :], self.seed)


def sample_noise(grid: TimeGrid, seed: int, n_streams: Optional[int] = None) -> NoisePath:
    """Independent N(0, dt) increments, deterministic in ``seed``.

    With ``n_streams`` the increments have shape ``(n_streams, n_steps)``, one
    row per particle.
    """
    shape = (grid.n_steps,) if n_streams is None else (n_streams, grid.n_steps)
    z = path_generator(seed).standard_normal(shape)
    return NoisePath(grid, z * np.sqrt(grid.dt), seed)


def sample_noise_batch(
    grid: TimeGrid, seed_base: int, start: int, stop: int, n_streams: Optional[int] = None
) -> NoisePath:
    """Noise for paths ``start..stop-1``; path i is keyed by ``seed_base + i``.

    Row i of the result equals ``sample_noise(grid, seed_base + i, n_streams)``.
    """
    rows = [sample_noise(grid, seed_base + i, n_streams).increments for i in range(start, stop)]
    shape = (0,) + (() if n_streams is None else (n_streams,)) + (grid.n_steps,)
    inc = np.stack(rows) if rows else np.zeros(shape)
    return NoisePath(grid, inc, seed_base)


def difference_noise(b1: NoisePath, b2: NoisePath) -> NoisePath:
    """W = (B_1 - B_2) / sqrt(2): the noise driving the gap of a Dyson pair."""
    return NoisePath(b1.grid, (b1.increments - b2.increments) / SQRT2, b1.seed)


def sum_noise(b1: NoisePath, b2: NoisePath) -> NoisePath:
    """W' = (B_1 + B_2) / sqrt(2): the noise driving lambda_1 + lambda_2."""
    return NoisePath(b1.grid, (b1.increments + b2.increments) / SQRT2, b1.seed)


# ---------------------------------------------------------------------------
# Bessel processes


def bessel_dimension(kappa: float) -> float:
    return 1.0 + 8.0 / kappa


def bessel_index(d: float) -> float:
    return (d - 2.0) / 2.0


def _check_kappa(kappa, name="kappa"):
    if not (0.0 < kappa <= 4.0):
        raise ValueError(f"{name} must lie in (0,4], got {kappa!r}")


def _bessel_root(y, c):
    # positive root of x^2 - y x - c/4 = 0, written without cancellation for y < 0
    root = np.sqrt(y * y + c)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = 0.5 * c / (root - y)
    return np.where(y >= 0.0, 0.5 * (y + root), neg)


def bessel_step(x, dw, dt: float, d):
    """One semi-implicit step x' = x + ((d-1)/2) dt / x' + dw.

    Returns the positive root of the quadratic, so x' > 0 whatever dw is.
    Works elementwise on arrays; scalars in give a float back.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0.0)):
        raise NonpositiveState(f"Bessel state must be positive, got {x!r}")
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if np.any(np.asarray(d) < 3.0):
        raise ValueError("Bessel dimension must be >= 3 (kappa <= 4)")
    out = _bessel_root(xa + dw, 2.0 * (np.asarray(d, dtype=float) - 1.0) * dt)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BesselPath:
    """Bessel process of dimension d sampled on a grid (time on the last axis)."""

    grid: TimeGrid
    values: np.ndarray
    d: float
    a: float

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))

    @property
    def nu(self) -> float:
        return bessel_index(self.d)

    @property
    def kappa(self) -> float:
        return 8.0 / (self.d - 1.0)

    def running_infimum(self) -> np.ndarray:
        return np.minimum.accumulate(self.values, axis=-1)


@dataclass(frozen=True)
class RunningExtrema:
    infimum: np.ndarray
    sup_abs_noise: np.ndarray


def running_extrema(path: BesselPath, noise: NoisePath) -> RunningExtrema:
    """Running infimum M_t of a Bessel path and running sup of |W|."""
    w = np.abs(noise.cumulative())
    return RunningExtrema(path.running_infimum(), np.maximum.accumulate(w, axis=-1))


def _integrate_bessel(x0, increments, dt, d):
    d = np.asarray(d, dtype=float)
    c = 2.0 * (d - 1.0) * dt
    n = increments.shape[-1]
    x = np.broadcast_to(np.asarray(x0, dtype=float), np.broadcast_shapes(
        np.shape(x0), increments.shape[:-1], np.shape(c)
    )).copy()
    c = np.broadcast_to(c, x.shape)
    out = np.empty(x.shape + (n + 1,))
    out[..., 0] = x
    for i in range(n):
        x = _bessel_root(x + increments[..., i], c)
        out[..., i + 1] = x
    return out


def simulate_bessel(grid: TimeGrid, noise: NoisePath, a: float, d: float) -> BesselPath:
    """Pathwise semi-implicit integration of dX = ((d-1)/2) dt / X + dW from X_0 = a."""
    if d < 3.0:
        raise ValueError("Bessel dimension must be >= 3 (kappa <= 4)")
    if not a > 0:
        raise NonpositiveState(f"start must be positive, got {a!r}")
    vals = _integrate_bessel(a, noise.increments, grid.dt, d)
    return BesselPath(grid, vals, float(d), float(a))


def simulate_coupled_bessel_starts(grid, noise, a: float, b: float, d: float):
    """X from a and Y from b, both driven by the same increments."""
    if not (a > 0 and b > 0):
        raise NonpositiveState("both starts must be positive")
    if d < 3.0:
        raise ValueError("Bessel dimension must be >= 3 (kappa <= 4)")
    starts = np.array([a, b], dtype=float).reshape((2,) + (1,) * (noise.increments.ndim - 1))
    vals = _integrate_bessel(starts, noise.increments[None], grid.dt, d)
    return BesselPath(grid, vals[0], d, a), BesselPath(grid, vals[1], d, b)


def simulate_coupled_bessel_dims(grid, noise, a: float, kappa: float, kappa_star: float):
    """X of dimension 1 + 8/kappa and X* of dimension 1 + 8/kappa* on shared noise.

    kappa == kappa_star is allowed and yields identical paths.
    """
    _check_kappa(kappa)
    _check_kappa(kappa_star, "kappa_star")
    if kappa > kappa_star:
        raise ParamOrder(f"need kappa <= kappa_star, got {kappa} > {kappa_star}")
    if not a > 0:
        raise NonpositiveState(f"start must be positive, got {a!r}")
    d, ds = bessel_dimension(kappa), bessel_dimension(kappa_star)
    dims = np.array([d, ds]).reshape((2,) + (1,) * (noise.increments.ndim - 1))
    vals = _integrate_bessel(a, noise.increments[None], grid.dt, dims)
    return BesselPath(grid, vals[0], d, a), BesselPath(grid, vals[1], ds, a)


# ---------------------------------------------------------------------------
# Running infimum past the horizon


def _positive_bridge_min(x0, x1, dt, u):
    """Minimum of a Brownian bridge from x0 to x1 conditioned to stay positive.

    Exact for the 3-dimensional Bessel bridge; for other dimensions it is a
    bridge correction that keeps the minimum inside (0, min(x0, x1)].
    """
    p = -np.expm1(-2.0 * x0 * x1 / dt)
    q = -0.5 * dt * np.log1p(-u * p)
    return 0.5 * ((x0 + x1) - np.sqrt((x0 - x1) ** 2 + 4.0 * q))


def bessel_infimum_tail(x, nu, u):
    """Sample inf_{s>=0} of a Bessel process of index nu started at x.

    Uses P(inf < y) = (y/x)^{2 nu}, inverted at the uniform u.
    """
    return x * u ** (1.0 / (2.0 * nu))


def continue_infimum(x, running_min, d, increments, dt, uniforms=None):
    """Advance Bessel states past the horizon keeping only the running minimum.

    ``x`` and ``running_min`` broadcast against ``increments[..., 0]``; ``d``
    may be an array (one dimension per coupled copy).  With ``uniforms`` the
    minimum inside each step is bridge-corrected.  Returns (x_end, min_end).
    """
    d = np.asarray(d, dtype=float)
    c = 2.0 * (d - 1.0) * dt
    shape = np.broadcast_shapes(np.shape(x), increments.shape[:-1], np.shape(c))
    x = np.broadcast_to(x, shape).astype(float)
    m = np.broadcast_to(running_min, shape).astype(float)
    c = np.broadcast_to(c, shape)
    for i in range(increments.shape[-1]):
        x_new = _bessel_root(x + increments[..., i], c)
        if uniforms is None:
            m = np.minimum(m, x_new)
        else:
            m = np.minimum(m, _positive_bridge_min(x, x_new, dt, uniforms[..., i]))
        x = x_new
    return x, m


def infimum_to_horizon(
    x0,
    d,
    t_long: float,
    dt: float,
    seeds: Sequence[int],
    bridge: bool = True,
    tail: bool = True,
    x_start=None,
    min_start=None,
):
    """Estimate M_infinity for one Bessel path per seed (optionally coupled copies).

    The paths run to ``t_long`` on the extension stream of each seed, with
    the running minimum bridge-corrected inside steps.  With ``tail`` the
    infimum after ``t_long`` is drawn exactly from the hitting law of the
    Bessel process, so no mass is lost to late excursions.

    ``d`` may have shape ``(k, 1)`` to run k coupled copies (shared noise) of
    each path; the result then has shape ``(k, n_paths)``.  ``x_start`` and
    ``min_start`` continue paths that already ran up to some earlier time.
    """
    seeds = list(seeds)
    n = int(round(t_long / dt))
    d = np.asarray(d, dtype=float)
    inc = np.stack([path_generator(s, EXTENSION_STREAM).standard_normal(n) for s in seeds])
    inc *= np.sqrt(dt)
    uni = None
    if bridge:
        uni = np.stack([path_generator(s, BRIDGE_STREAM).random(n) for s in seeds])
    x = x0 if x_start is None else x_start
    m = x if min_start is None else min_start
    x, m = continue_infimum(x, m, d, inc, dt, uni)
    if tail:
        u = np.array([path_generator(s, TAIL_STREAM).random() for s in seeds])
        m = np.minimum(m, bessel_infimum_tail(x, bessel_index(d), u))
    return m


# ---------------------------------------------------------------------------
# Dyson Brownian motion


@dataclass(frozen=True)
class DysonPaths:
    """Ordered particle trajectories, shape ``(..., N, n_steps + 1)``."""

    grid: TimeGrid
    positions: np.ndarray
    kappa: float
    init: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(self.positions))
        if self.positions.shape[-1] != self.grid.n_steps + 1:
            raise InvalidGrid("positions must have n_steps + 1 samples on the last axis")

    @property
    def N(self) -> int:
        return self.positions.shape[-2]

    def gaps(self) -> np.ndarray:
        """Adjacent gaps lambda_j - lambda_{j+1}, shape ``(..., N-1, n+1)``."""
        return self.positions[..., :-1, :] - self.positions[..., 1:, :]

    def is_ordered(self) -> bool:
        return bool(np.all(self.gaps() > 0.0))

    def check_ordering(self):
        g = self.gaps()
        if g.size and not np.all(g > 0.0):
            idx = np.argwhere(~(g > 0.0))[0]
            raise OrderingViolation(f"particles not strictly ordered at index {tuple(idx)}")


def weyl_to_descending(x: Sequence[float]) -> np.ndarray:
    """Convert an ascending Weyl-chamber vector x_1 < ... < x_N to our order."""
    return np.asarray(x, dtype=float)[::-1].copy()


def _check_init(init):
    init = np.asarray(init, dtype=float)
    if init.ndim != 1 or init.size < 1:
        raise InitOrder("init must be a non-empty vector")
    if np.any(np.diff(init) >= 0):
        raise InitOrder(f"init must be strictly decreasing, got {init.tolist()}")
    return init


def _adjacent_gaps(y, c, tol=1e-14, max_iter=200):
    """Solve G_j = Y_j + c (2/G_j - 1/G_{j-1} - 1/G_{j+1}) for G > 0 by Jacobi sweeps.

    Every sweep solves each gap's own quadratic exactly, so iterates stay
    positive even before convergence.
    """
    Y = y[:, :-1] - y[:, 1:]
    G = _bessel_root(Y, 8.0 * c)
    if G.shape[1] == 1:
        return G
    for _ in range(max_iter):
        nb = np.zeros_like(G)
        nb[:, 1:] += 1.0 / G[:, :-1]
        nb[:, :-1] += 1.0 / G[:, 1:]
        G_new = _bessel_root(Y - c * nb, 8.0 * c)
        done = np.all(np.abs(G_new - G) <= tol * G_new)
        G = G_new
        if done:
            break
    return G


def _dyson_step(lam, dB, dt, kappa):
    """Advance ``lam`` (P, N) by one step with increments ``dB`` (P, N)."""
    P, N = lam.shape
    y = lam + dB / SQRT2
    if N == 1:
        return y
    if N > 2:
        diff = lam[:, :, None] - lam[:, None, :]
        j = np.arange(N)
        far = np.abs(j[:, None] - j[None, :]) >= 2
        with np.errstate(divide="ignore"):
            inv = np.where(far, 1.0 / np.where(far, diff, 1.0), 0.0)
        y = y + (2.0 / kappa) * dt * inv.sum(-1)
    c = 2.0 * dt / kappa
    G = _adjacent_gaps(y, c)
    out = np.empty_like(lam)
    # rebuild from gaps and the conserved centre of mass
    weights = np.arange(1, N)
    out[:, -1] = (y.sum(-1) - (G * weights).sum(-1)) / N
    out[:, :-1] = out[:, -1:] + np.cumsum(G[:, ::-1], axis=1)[:, ::-1]
    return out


def _dyson_advance(lam, dB, dt, kappa, depth, max_halvings):
    out = _dyson_step(lam, dB, dt, kappa)
    bad = ~np.all(np.isfinite(out), axis=1)
    if out.shape[1] > 1:
        bad |= ~np.all(out[:, :-1] > out[:, 1:], axis=1)
    if np.any(bad):
        if depth >= max_halvings:
            raise OrderingViolation(
                f"Dyson step left the Weyl chamber after {max_halvings} halvings; reduce dt"
            )
        sub_lam, sub_dB = lam[bad], dB[bad] / 2.0
        mid = _dyson_advance(sub_lam, sub_dB, dt / 2.0, kappa, depth + 1, max_halvings)
        out[bad] = _dyson_advance(mid, sub_dB, dt / 2.0, kappa, depth + 1, max_halvings)
    return out


def integrate_dyson(init, increments, dt, kappa, max_halvings=20):
    """Integrate Dyson dynamics for increments ``(..., N, n)``; returns ``(..., N, n+1)``.

    ``init`` broadcasts against ``increments[..., 0]`` (shape ``(..., N)``).
    """
    inc = np.asarray(increments, dtype=float)
    batch = inc.shape[:-2]
    N, n = inc.shape[-2:]
    lam = np.broadcast_to(np.asarray(init, dtype=float), batch + (N,)).reshape(-1, N).copy()
    flat = inc.reshape(-1, N, n)
    out = np.empty(flat.shape[:2] + (n + 1,))
    out[:, :, 0] = lam
    for i in range(n):
        lam = _dyson_advance(lam, flat[:, :, i], dt, kappa, 0, max_halvings)
        out[:, :, i + 1] = lam
    return out.reshape(batch + (N, n + 1))


def simulate_dyson(
    grid: TimeGrid,
    seed: int,
    N: int,
    kappa: float,
    init: Sequence[float],
    noise: Optional[NoisePath] = None,
    max_halvings: int = 20,
) -> DysonPaths:
    """Dyson Brownian motion d lambda_j = dB_j / sqrt(2) + (2/kappa) sum_k dt / (lambda_j - lambda_k).

    Repulsion between neighbours is implicit in the new gaps (each gap solves
    its own positive quadratic), the remaining pairs are explicit.  For N = 2
    the gap update is exactly :func:`bessel_step` with d = 1 + 8/kappa.
    ``noise`` (increments ``(..., N, n)``) overrides the draw from ``seed``.
    """
    _check_kappa(kappa)
    init = _check_init(init)
    if init.size != N:
        raise InitOrder(f"init has {init.size} entries, expected N={N}")
    if noise is None:
        noise = sample_noise(grid, seed, n_streams=N)
    if noise.increments.shape[-2] != N:
        raise InvalidGrid("noise must carry one stream per particle")
    pos = integrate_dyson(init, noise.increments, grid.dt, kappa, max_halvings)
    paths = DysonPaths(grid, pos, float(kappa), tuple(init.tolist()))
    paths.check_ordering()
    return paths


def dyson_pair_from_bessel(X: BesselPath, noise_sum: NoisePath, a1: float, a2: float) -> DysonPaths:
    """Rebuild lambda_1 = (S + X)/2, lambda_2 = (S - X)/2 with S = a1 + a2 + W'."""
    if not a1 > a2:
        raise InitOrder(f"need a1 > a2, got a1={a1}, a2={a2}")
    if not np.allclose(X.values[..., 0], a1 - a2, rtol=1e-12, atol=1e-12):
        raise InitOrder("gap path must start at a1 - a2")
    S = (a1 + a2) + noise_sum.cumulative()
    S, Xv = np.broadcast_arrays(S, X.values)
    pos = np.stack([(S + Xv) / 2.0, (S - Xv) / 2.0], axis=-2)
    return DysonPaths(X.grid, pos, X.kappa, (a1, a2))
