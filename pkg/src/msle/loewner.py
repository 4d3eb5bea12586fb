"""Forward and backward multiple Loewner chains driven by N real forces.

Forward chain:   dg/dt = (1/N) sum_j 2 / (g - lambda_j(t)),        g_0(z) = z
Backward chain:  dh/dt = (1/N) sum_j -2 / (h - lambda_j(T - t)),    h_0(z) = z

so that h_T is the inverse of g_T.  Forces are piecewise linear between grid
times.  Two integrators are available:

``rk4``
    classical Runge-Kutta with ``n_sub`` substeps per grid step.  Accurate
    and cheap when points stay well away from the forces.
``slit``
    Strang splitting into the N single-force flows, each solved exactly
    (a vertical slit map, (g - c)^2 +/- 4 tau / N under a square root) with
    the force frozen at the substep midpoint.  Second order, maps the upper
    half-plane into itself exactly and copes with starting points next to
    a force, which is what trace extraction and derivative probes need.

Batches: forces carry shape ``(..., N, n_steps + 1)``; points carry the same
leading batch shape followed by any number of point axes, or no batch axes
at all (then they are shared by every path).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidGrid, SwallowedPoint
from .paths import DysonPaths, TimeGrid

FORWARD = 1.0
BACKWARD = -1.0


@dataclass(frozen=True)
class DrivingForces:
    """N continuous real forces on a grid, linearly interpolated in between."""

    grid: TimeGrid
    paths: np.ndarray

    def __post_init__(self):
        p = np.array(self.paths, dtype=float)
        if p.ndim == 1:
            p = p[None, :]
        if p.shape[-1] != self.grid.n_steps + 1:
            raise InvalidGrid(
                f"forces need {self.grid.n_steps + 1} samples per curve, got {p.shape[-1]}"
            )
        p.setflags(write=False)
        object.__setattr__(self, "paths", p)

    @property
    def N(self) -> int:
        return self.paths.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return self.paths.shape[:-2]

    @classmethod
    def from_dyson(cls, dyson: DysonPaths) -> "DrivingForces":
        return cls(dyson.grid, dyson.positions)

    @classmethod
    def constant(cls, grid: TimeGrid, values) -> "DrivingForces":
        v = np.asarray(values, dtype=float)
        return cls(grid, np.repeat(v[..., None], grid.n_steps + 1, axis=-1))

    def shifted(self, offset) -> "DrivingForces":
        """Forces plus a constant per-curve offset (scalar or shape (..., N))."""
        return DrivingForces(self.grid, self.paths + np.asarray(offset, dtype=float)[..., None])

    def truncated(self, index: int) -> "DrivingForces":
        """Restriction to [0, t_index]."""
        if not 1 <= index <= self.grid.n_steps:
            raise InvalidGrid(f"truncation index {index} out of range")
        grid = TimeGrid(index * self.grid.dt, index)
        return DrivingForces(grid, self.paths[..., : index + 1])

    def reversed(self, index: Optional[int] = None) -> "DrivingForces":
        """Time-reversed forces s -> lambda(t - s) for the horizon t = t_index."""
        f = self if index is None or index == self.grid.n_steps else self.truncated(index)
        return DrivingForces(f.grid, f.paths[..., ::-1])

    def sup_difference(self, other: "DrivingForces") -> np.ndarray:
        """Per-curve sup over the grid of |V_1j - V_2j|, shape (..., N)."""
        return np.max(np.abs(self.paths - other.paths), axis=-1)

    def sup_abs(self) -> np.ndarray:
        """max_j sup_t |lambda_j(t)| per path."""
        return np.max(np.abs(self.paths), axis=(-1, -2))


# ---------------------------------------------------------------------------
# integration core


# substep refinement near the forces: h <= REFINE * d**2, at most MAX_SUB
# substeps per grid step
REFINE = 0.01
MAX_SUB = 2048


def _flatten(z, forces: DrivingForces):
    """Flatten points to (Q,) with the path index of each point."""
    batch = forces.batch_shape
    z = np.asarray(z, dtype=complex)
    nb = len(batch)
    if nb and z.shape[:nb] == batch:
        pts_shape = z.shape[nb:]
    else:
        pts_shape = z.shape
        z = np.broadcast_to(z, batch + pts_shape)
    P = int(np.prod(batch, dtype=int))
    M = int(np.prod(pts_shape, dtype=int))
    lam = forces.paths.reshape(P, forces.N, -1)
    p_idx = np.repeat(np.arange(P), M)
    return z.reshape(P * M).copy(), lam, p_idx, batch + pts_shape


def _field(g, lam_t, sign):
    # sign * (2/N) sum_j 1 / (g - lam_j); g (Q,), lam_t (Q, N)
    N = lam_t.shape[-1]
    return sign * (2.0 / N) * np.sum(1.0 / (g[:, None] - lam_t), axis=-1)


def _slit_flow(g, c, tau, sign, N):
    r = np.sqrt((g - c) ** 2 + sign * 4.0 * tau / N)
    r = np.where(r.imag < 0.0, -r, r)
    return c + r


def _slit_substep(g, lam_mid, h, sign):
    """Strang-split slit flows; every point carries its own forces (Q, N)."""
    N = lam_mid.shape[-1]
    if N == 1:
        return _slit_flow(g, lam_mid[:, 0], h, sign, 1)
    for j in range(N - 1):
        g = _slit_flow(g, lam_mid[:, j], h / 2.0, sign, N)
    g = _slit_flow(g, lam_mid[:, N - 1], h, sign, N)
    for j in range(N - 2, -1, -1):
        g = _slit_flow(g, lam_mid[:, j], h / 2.0, sign, N)
    return g


def _rk4_substep(g, la, lm, lb, h, sign):
    k1 = _field(g, la, sign)
    k2 = _field(g + 0.5 * h * k1, lm, sign)
    k3 = _field(g + 0.5 * h * k2, lm, sign)
    k4 = _field(g + h * k3, lb, sign)
    return g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(g, l0, l1, dt, ns, sign, method, swallow_tol):
    """One grid step split into ``ns`` substeps; returns (g, hit_fraction)."""
    h = dt / ns
    dl = l1 - l0
    hit_at = np.full(g.shape, np.nan)
    alive = np.ones(g.shape, dtype=bool)
    for s in range(ns):
        la = l0 + (s / ns) * dl
        lb = l0 + ((s + 1) / ns) * dl
        lm = l0 + ((s + 0.5) / ns) * dl
        if method == "rk4":
            g_new = _rk4_substep(g, la, lm, lb, h, sign)
        else:
            g_new = _slit_substep(g, lm, h, sign)
        if swallow_tol is not None:
            dist = np.min(np.abs(g_new[:, None] - lb), axis=-1)
            hit = alive & ~((dist >= swallow_tol) & (g_new.imag > 0.0))
            if np.any(hit):
                hit_at[hit] = (s + 1) / ns
                alive &= ~hit
        g = np.where(alive, g_new, g)
    return g, hit_at


def _integrate(
    g,
    lam,
    p_idx,
    dt,
    n_sub,
    sign,
    method,
    swallow_tol=None,
    record=False,
    stop=None,
    refine=REFINE,
    max_sub=MAX_SUB,
):
    """Integrate flat points g (Q,) through forces lam (P, N, n+1).

    Substeps are refined per point while it sits close to a force: a point
    at distance d from the nearest force takes substeps of at most
    ``refine * d**2`` (in powers of two above ``n_sub``, capped at
    ``max_sub``).  Returns (g_end, swallowed_at, samples).
    """
    n = lam.shape[-1] - 1 if stop is None else stop
    lam_t = np.moveaxis(lam, -1, 0)  # (n+1, P, N)
    swallowed_at = np.full(g.shape, np.nan)
    alive = np.ones(g.shape, dtype=bool)
    samples = None
    if record:
        samples = np.empty(g.shape + (n + 1,), dtype=complex)
        samples[:, 0] = g
    max_level = int(np.log2(max(max_sub // n_sub, 1)))
    with np.errstate(all="ignore"):
        for k in range(n):
            l0 = lam_t[k][p_idx]
            l1 = lam_t[k + 1][p_idx]
            if refine:
                d = np.min(np.abs(g[:, None] - l0), axis=-1)
                need = dt / (n_sub * refine * d * d)
                level = np.clip(np.ceil(np.log2(np.maximum(need, 1.0))), 0, max_level)
                level = np.where(np.isfinite(level), level, max_level).astype(int)
            else:
                level = np.zeros(g.shape, dtype=int)
            for lev in np.unique(level[alive]):
                sel = np.flatnonzero(alive & (level == lev))
                g_sel, hit = _advance(
                    g[sel], l0[sel], l1[sel], dt, n_sub << int(lev), sign, method, swallow_tol
                )
                g[sel] = g_sel
                got = np.isfinite(hit)
                if np.any(got):
                    swallowed_at[sel[got]] = (k + hit[got]) * dt
                    alive[sel[got]] = False
            if record:
                samples[:, k + 1] = np.where(alive, g, np.nan)
    return g, swallowed_at, samples


def _check_method(method):
    if method not in ("rk4", "slit"):
        raise ValueError(f"unknown integrator {method!r}; use 'rk4' or 'slit'")


def default_swallow_tol(grid: TimeGrid) -> float:
    return 10.0 * grid.dt


# ---------------------------------------------------------------------------
# public operations


@dataclass(frozen=True)
class MapTrajectory:
    """g(t_i, z) along the grid; samples after a swallow are NaN."""

    z: complex
    times: np.ndarray
    samples: np.ndarray
    swallowed_at: Optional[float] = None

    @property
    def alive(self) -> np.ndarray:
        return np.isfinite(self.samples)

    def final(self) -> complex:
        if self.swallowed_at is not None:
            raise SwallowedPoint(self.swallowed_at, self.z)
        return complex(self.samples[-1])

    def imag_strictly_decreasing(self) -> bool:
        im = self.samples.imag[self.alive]
        return bool(np.all(np.diff(im) < 0.0))


@dataclass(frozen=True)
class Flow:
    """Batch result of a chain: end values and swallow times (NaN if alive)."""

    values: np.ndarray
    swallowed_at: np.ndarray
    samples: Optional[np.ndarray] = None

    @property
    def any_swallowed(self) -> bool:
        return bool(np.any(np.isfinite(self.swallowed_at)))


def forward_flow(
    z,
    forces: DrivingForces,
    n_sub: int = 4,
    swallow_tol: Optional[float] = None,
    method: str = "rk4",
    record: bool = False,
    index: Optional[int] = None,
    refine: float = REFINE,
) -> Flow:
    """g_t(z) for arrays of points; ``index`` stops at grid time t_index."""
    _check_method(method)
    if np.any(np.asarray(z).imag <= 0):
        raise ValueError("points must lie in the upper half-plane")
    if swallow_tol is None:
        swallow_tol = default_swallow_tol(forces.grid)
    g, lam, p_idx, shape = _flatten(z, forces)
    g, sw, samples = _integrate(
        g, lam, p_idx, forces.grid.dt, n_sub, FORWARD, method, swallow_tol, record, index, refine
    )
    if samples is not None:
        samples = samples.reshape(shape + (-1,))
    return Flow(g.reshape(shape), sw.reshape(shape), samples)


def forward_evolve(
    z: complex,
    forces: DrivingForces,
    n_sub: int = 4,
    swallow_tol: Optional[float] = None,
    method: str = "rk4",
) -> MapTrajectory:
    """Trajectory of one point under the forward chain of single-path forces.

    A swallow is not an error here: the trajectory stops and records the
    time in ``swallowed_at`` (``MapTrajectory.final`` raises SwallowedPoint).
    """
    if forces.batch_shape:
        raise ValueError("forward_evolve takes single-path forces; use forward_flow for batches")
    flow = forward_flow(np.array([z]), forces, n_sub, swallow_tol, method, record=True)
    sw = float(flow.swallowed_at[0])
    return MapTrajectory(
        complex(z), forces.grid.times, flow.samples[0], None if np.isnan(sw) else sw
    )


def backward_evolve(
    z,
    forces: DrivingForces,
    horizon: Optional[float] = None,
    n_sub: int = 4,
    method: str = "rk4",
    refine: float = REFINE,
):
    """h_t(z) for the chain driven by the reversed forces lambda(t - s).

    ``horizon`` must be a grid time (default T).  Imaginary parts only grow
    along this flow, so nothing is swallowed.
    """
    _check_method(method)
    za = np.asarray(z, dtype=complex)
    if np.any(za.imag <= 0):
        raise ValueError("points must lie in the upper half-plane")
    idx = forces.grid.n_steps if horizon is None else forces.grid.index_of(horizon)
    if idx == 0:
        return za.copy() if za.ndim else complex(za)
    rev = forces.reversed(idx)
    g, lam, p_idx, shape = _flatten(za, rev)
    g, _, _ = _integrate(
        g, lam, p_idx, rev.grid.dt, n_sub, BACKWARD, method, refine=refine
    )
    out = g.reshape(shape)
    return complex(out) if out.ndim == 0 else out


def inverse_map(forces: DrivingForces, n_sub: int = 4, method: str = "slit"):
    """Callable z -> f_T(z) = h_T(z) for single-path forces."""

    def f(z):
        return backward_evolve(z, forces, None, n_sub, method)

    return f


def roundtrip_check(
    z, forces: DrivingForces, n_sub: int = 4, method: str = "rk4", refine: float = REFINE
):
    """|h_T(g_T(z)) - z|; raises SwallowedPoint if any point is swallowed by T."""
    flow = forward_flow(z, forces, n_sub, method=method, refine=refine)
    if flow.any_swallowed:
        i = np.flatnonzero(np.isfinite(flow.swallowed_at.ravel()))[0]
        raise SwallowedPoint(float(flow.swallowed_at.ravel()[i]), np.asarray(z).ravel()[0])
    back = backward_evolve(flow.values, forces, None, n_sub, method, refine)
    res = np.abs(np.asarray(back) - np.broadcast_to(np.asarray(z, dtype=complex), np.shape(back)))
    return float(res) if np.ndim(res) == 0 else res


def capacity_coefficient(z, forces: DrivingForces, n_sub: int = 4):
    """(g_T(z) - z) * z, which tends to 2T as |z| grows."""
    g = forward_flow(z, forces, n_sub).values
    return (g - z) * z


# ---------------------------------------------------------------------------
# traces and hulls


@dataclass(frozen=True)
class Trace:
    """Per-curve polylines gamma_j(t_k), shape (..., N, K)."""

    times: np.ndarray
    points: np.ndarray
    delta_trace: float
    warnings: tuple = field(default=())

    @property
    def N(self) -> int:
        return self.points.shape[-2]

    def curve(self, j: int) -> np.ndarray:
        return self.points[..., j, :]


@dataclass(frozen=True)
class HullPolyline:
    """K_T union R, discretised as trace polylines plus a real segment [-L, L]."""

    polylines: tuple
    L: float

    def __post_init__(self):
        if not self.polylines and self.L <= 0:
            raise ValueError("hull must be nonempty")
        for p in self.polylines:
            if not np.all(np.isfinite(p)):
                raise ValueError("hull polylines must be finite")

    @property
    def pieces(self) -> tuple:
        """All polylines including the real segment."""
        seg = np.array([-self.L, self.L], dtype=complex)
        return tuple(self.polylines) + (seg,)


def _sample_indices(grid: TimeGrid, sample_times=None, every: Optional[int] = None):
    if sample_times is not None:
        return np.array([grid.index_of(t) for t in sample_times], dtype=int)
    every = every or max(1, grid.n_steps // 100)
    idx = np.arange(0, grid.n_steps + 1, every)
    if idx[-1] != grid.n_steps:
        idx = np.append(idx, grid.n_steps)
    return idx


def _backward_multi(z, lam, idx, dt, n_sub):
    """Backward slit flow for many horizons at once.

    z (P, K, C) starting points, one column k per horizon t_{idx[k]};
    lam (P, N, n+1).  Column k is driven by lambda(t_{idx[k]} - s).
    """
    P, K, C = z.shape
    N = lam.shape[1]
    h = dt / n_sub
    m = idx[None, :]
    lam_t = np.moveaxis(lam, 1, 2)  # (P, n+1, N)
    with np.errstate(all="ignore"):
        for i in range(int(idx.max())):
            active = (m > i)[0]
            hi = np.clip(m - i, 0, None)[0]
            lo = np.clip(m - i - 1, 0, None)[0]
            f0 = lam_t[:, hi, :]
            f1 = lam_t[:, lo, :]
            zz = z[:, active, :].reshape(-1)
            for s in range(n_sub):
                mid = f0 + ((s + 0.5) / n_sub) * (f1 - f0)
                mid = np.repeat(mid[:, active, :], C, axis=1).reshape(-1, N)
                zz = _slit_substep(zz, mid, h, BACKWARD)
            z[:, active, :] = zz.reshape(P, -1, C)
    return z


def default_delta_trace(grid: TimeGrid) -> float:
    return 1e-3 * np.sqrt(grid.horizon)


def trace_extract(
    forces: DrivingForces,
    sample_times: Optional[Sequence[float]] = None,
    delta_trace: Optional[float] = None,
    every: Optional[int] = None,
    n_sub: int = 2,
    tol_x: float = 1e-2,
) -> Trace:
    """gamma_j(t) ~ h^{(t)}_t(lambda_j(t) + i delta_trace) for every sample time.

    Sample times default to about 100 evenly spaced grid times.  Curves of
    the same path that come closer than ``tol_x`` produce a warning record.
    """
    if delta_trace is None:
        delta_trace = default_delta_trace(forces.grid)
    if delta_trace <= 0:
        raise ValueError("delta_trace must be positive")
    idx = _sample_indices(forces.grid, sample_times, every)
    batch = forces.batch_shape
    P = int(np.prod(batch, dtype=int))
    N = forces.N
    lam = forces.paths.reshape(P, N, -1)
    starts = np.moveaxis(lam[:, :, idx], 1, 2) + 1j * delta_trace  # (P, K, N)
    pts = _backward_multi(starts.astype(complex), lam, idx, forces.grid.dt, n_sub)
    pts = np.moveaxis(pts, 2, 1).reshape(batch + (N, len(idx)))
    warnings = []
    if N > 1:
        sep = curve_separation(pts)
        for flat_i, s in enumerate(np.ravel(sep)):
            if s < tol_x:
                warnings.append(
                    {"path": flat_i, "min_separation": float(s), "tol_x": tol_x}
                )
    times = forces.grid.times[idx]
    return Trace(times, pts, float(delta_trace), tuple(warnings))


def _point_segment_distance(p, a, b):
    # p (..., 1), a/b (..., S): distance from p to each segment [a, b]
    ab = b - a
    denom = np.abs(ab) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.real((p - a) * np.conj(ab)) / denom
    t = np.where(denom > 0, np.clip(t, 0.0, 1.0), 0.0)
    return np.abs(p - (a + t * ab))


def _segments_cross(a1, b1, a2, b2):
    def cross(u, v):
        return u.real * v.imag - u.imag * v.real

    d1 = cross(b2 - a2, a1 - a2)
    d2 = cross(b2 - a2, b1 - a2)
    d3 = cross(b1 - a1, a2 - a1)
    d4 = cross(b1 - a1, b2 - a1)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def polyline_distance(P1: np.ndarray, P2: np.ndarray) -> float:
    """Minimum distance between two polylines (0 if they cross)."""
    P1, P2 = np.asarray(P1, complex), np.asarray(P2, complex)
    if len(P1) == 1 or len(P2) == 1:
        if len(P1) == 1 and len(P2) == 1:
            return float(abs(P1[0] - P2[0]))
        p, q = (P1, P2) if len(P1) == 1 else (P2, P1)
        return float(np.min(_point_segment_distance(p[0], q[:-1], q[1:])))
    a1, b1 = P1[:-1, None], P1[1:, None]
    a2, b2 = P2[None, :-1], P2[None, 1:]
    if np.any(_segments_cross(a1, b1, a2, b2)):
        return 0.0
    d = min(
        np.min(_point_segment_distance(P1[:, None], a2, b2)),
        np.min(_point_segment_distance(P2[:, None], P1[None, :-1], P1[None, 1:])),
    )
    return float(d)


def curve_separation(points: np.ndarray) -> np.ndarray:
    """Minimum distance between distinct curves, per path; points (..., N, K)."""
    batch = points.shape[:-2]
    N = points.shape[-2]
    flat = points.reshape((-1,) + points.shape[-2:])
    out = np.full(flat.shape[0], np.inf)
    for p in range(flat.shape[0]):
        for i in range(N):
            for j in range(i + 1, N):
                out[p] = min(out[p], polyline_distance(flat[p, i], flat[p, j]))
    return out.reshape(batch)


def hull_clip_length(forces: DrivingForces) -> float:
    """L = max_j sup_t |lambda_j| + 4 sqrt(T) over all paths of ``forces``."""
    return float(np.max(forces.sup_abs()) + 4.0 * np.sqrt(forces.grid.horizon))


def hull_from_trace(trace: Trace, L: float, path: Optional[int] = None) -> HullPolyline:
    """HullPolyline of one path (``path`` indexes the flattened batch)."""
    pts = trace.points
    if pts.ndim > 2:
        if path is None:
            raise ValueError("pick a path from a batched trace")
        pts = pts.reshape((-1,) + pts.shape[-2:])[path]
    return HullPolyline(tuple(np.array(p) for p in pts), float(L))
