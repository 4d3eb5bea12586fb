"""Distances between Loewner chains and hulls, and the bound checks built on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainViolation, EmptySet, GridIntersectsHull
from .loewner import (
    DrivingForces,
    HullPolyline,
    backward_evolve,
    forward_flow,
    hull_clip_length,
)
from .reports import BoundReport, HausdorffReport

# ---------------------------------------------------------------------------
# compact grids and the constant C(T, G)


@dataclass(frozen=True)
class CompactGridSpec:
    """Rectangle [x_min, x_max] x [y_min, y_max] in the upper half-plane."""

    x_min: float = -1.0
    x_max: float = 1.0
    y_min: float = 1.0
    y_max: float = 2.0
    nx: int = 4
    ny: int = 3

    def __post_init__(self):
        if not self.y_min > 0:
            raise ValueError("y_min must be positive (G must stay away from the real line)")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError("empty rectangle")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one point per axis")

    @property
    def delta2(self) -> float:
        return self.y_min

    def points(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.nx)
        y = np.linspace(self.y_min, self.y_max, self.ny)
        return (x[:, None] + 1j * y[None, :]).ravel()

    def refined(self) -> "CompactGridSpec":
        """Grid with spacing halved; contains every point of this one."""
        return CompactGridSpec(
            self.x_min, self.x_max, self.y_min, self.y_max, 2 * self.nx - 1, 2 * self.ny - 1
        )


@dataclass(frozen=True)
class CaratheodoryConstant:
    delta1: float
    delta2: float
    horizon: float
    N: int
    value: float


def ctg_value(delta1, delta2, T, N):
    """(delta2 / max(delta1, sqrt((delta2^2 - 4T)^+)))^N, vectorised."""
    delta1 = np.asarray(delta1, dtype=float)
    floor = np.sqrt(np.maximum(np.square(delta2) - 4.0 * T, 0.0))
    return (delta2 / np.maximum(delta1, floor)) ** N


def constant_CTG(delta1: float, delta2: float, T: float, N: int) -> CaratheodoryConstant:
    if not (delta1 > 0 and delta2 > 0 and T >= 0):
        raise ValueError("delta1, delta2 must be positive and T nonnegative")
    return CaratheodoryConstant(
        float(delta1), float(delta2), float(T), int(N), float(ctg_value(delta1, delta2, T, N))
    )


# ---------------------------------------------------------------------------
# Caratheodory distance


@dataclass(frozen=True)
class ChainComparison:
    """Per-path sup |g_1 - g_2| over grid x times, and min Im g_T (delta1).

    Paths where a grid point was swallowed by either chain carry NaN.
    """

    distance: np.ndarray
    delta1: np.ndarray
    swallowed: np.ndarray

    @property
    def n_swallowed(self) -> int:
        return int(np.count_nonzero(self.swallowed))


def _grid_batch(spec_or_points, P):
    if isinstance(spec_or_points, CompactGridSpec):
        pts = spec_or_points.points()
    else:
        pts = np.asarray(spec_or_points, dtype=complex).ravel()
    return np.broadcast_to(pts, (P, pts.size)).copy()


def compare_chains(
    forces1: DrivingForces,
    forces2: DrivingForces,
    grid,
    index: Optional[int] = None,
    chunk: int = 64,
    n_sub: int = 4,
) -> ChainComparison:
    """Run both forward chains on the grid points and compare them pathwise.

    ``grid`` is a CompactGridSpec or an array of points; ``index`` stops at
    grid time t_index (default T).  Works in chunks of paths to bound memory.
    """
    if forces1.paths.shape != forces2.paths.shape:
        raise ValueError("both chains need forces of the same shape")
    batch = forces1.batch_shape
    P = int(np.prod(batch, dtype=int))
    p1 = forces1.paths.reshape((P,) + forces1.paths.shape[-2:])
    p2 = forces2.paths.reshape((P,) + forces2.paths.shape[-2:])
    dist = np.empty(P)
    d1 = np.empty(P)
    sw = np.zeros(P, dtype=bool)
    for s in range(0, P, chunk):
        e = min(s + chunk, P)
        z = _grid_batch(grid, e - s)
        f1 = forward_flow(z, DrivingForces(forces1.grid, p1[s:e]), n_sub, record=True, index=index)
        f2 = forward_flow(z, DrivingForces(forces2.grid, p2[s:e]), n_sub, record=True, index=index)
        hit = np.isfinite(f1.swallowed_at).any(-1) | np.isfinite(f2.swallowed_at).any(-1)
        diff = np.abs(f1.samples - f2.samples)
        with np.errstate(invalid="ignore"):
            dist[s:e] = np.where(hit, np.nan, np.max(diff, axis=(-1, -2)))
            im = np.minimum(f1.values.imag, f2.values.imag).min(-1)
        d1[s:e] = np.where(hit, np.nan, im)
        sw[s:e] = hit
    return ChainComparison(dist.reshape(batch), d1.reshape(batch), sw.reshape(batch))


def caratheodory_distance(
    forces1: DrivingForces,
    forces2: DrivingForces,
    grid,
    horizon: Optional[float] = None,
    n_sub: int = 4,
):
    """max over grid x [0, horizon] of |g_1(t, z) - g_2(t, z)|.

    Raises GridIntersectsHull if any grid point is swallowed by either chain.
    """
    index = None if horizon is None else forces1.grid.index_of(horizon)
    cmp = compare_chains(forces1, forces2, grid, index, n_sub=n_sub)
    if np.any(cmp.swallowed):
        raise GridIntersectsHull("a grid point is swallowed before the horizon")
    d = cmp.distance
    return float(d) if d.ndim == 0 else d


def delta1_estimate(
    forces1: DrivingForces,
    grid,
    forces2: Optional[DrivingForces] = None,
    horizon: Optional[float] = None,
    n_sub: int = 4,
):
    """min over grid points (and both chains) of Im g(T, z)."""
    index = None if horizon is None else forces1.grid.index_of(horizon)
    cmp = compare_chains(forces1, forces2 if forces2 is not None else forces1, grid, index, n_sub=n_sub)
    if np.any(cmp.swallowed):
        raise GridIntersectsHull("a grid point is swallowed before the horizon")
    d = cmp.delta1
    return float(d) if d.ndim == 0 else d


def resolution_change(forces1, forces2, spec: CompactGridSpec, n_sub: int = 4):
    """Relative change of the distance when the grid spacing is halved.

    Values above 0.05 mean the grid maximum under-resolves the sup norm.
    """
    coarse = compare_chains(forces1, forces2, spec, n_sub=n_sub).distance
    fine = compare_chains(forces1, forces2, spec.refined(), n_sub=n_sub).distance
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(fine > 0, np.abs(fine - coarse) / fine, 0.0)
    return rel


# ---------------------------------------------------------------------------
# Hausdorff distance


def _as_pieces(A) -> tuple:
    if isinstance(A, HullPolyline):
        pieces = A.pieces
    elif isinstance(A, np.ndarray) or np.isscalar(A):
        pieces = (np.atleast_1d(np.asarray(A, dtype=complex)),)
    else:
        pieces = tuple(np.atleast_1d(np.asarray(p, dtype=complex)) for p in A)
    pieces = tuple(p for p in pieces if p.size)
    if not pieces:
        raise EmptySet("Hausdorff distance needs nonempty sets")
    return pieces


def _densify(piece: np.ndarray, spacing: float) -> np.ndarray:
    if piece.size == 1:
        return piece
    out = [piece[:1]]
    for a, b in zip(piece[:-1], piece[1:]):
        k = max(1, int(np.ceil(abs(b - a) / spacing)))
        out.append(a + (b - a) * np.arange(1, k + 1) / k)
    return np.concatenate(out)


def _segments(pieces):
    a, b = [], []
    for p in pieces:
        if p.size == 1:
            a.append(p)
            b.append(p)
        else:
            a.append(p[:-1])
            b.append(p[1:])
    return np.concatenate(a), np.concatenate(b)


def _point_to_segments(pts, a, b, block=2048):
    ab = b - a
    denom = np.abs(ab) ** 2
    safe = np.where(denom > 0, denom, 1.0)
    out = np.empty(pts.size)
    for s in range(0, pts.size, block):
        p = pts[s : s + block, None]
        t = np.real((p - a) * np.conj(ab)) / safe
        t = np.where(denom > 0, np.clip(t, 0.0, 1.0), 0.0)
        out[s : s + block] = np.min(np.abs(p - (a + t * ab)), axis=1)
    return out


def directed_distance(A, B, spacing: Optional[float] = None) -> float:
    """sup over a in A of dist(a, B); polylines of A are densified."""
    pa, pb = _as_pieces(A), _as_pieces(B)
    if spacing is None:
        spacing = _default_spacing(pa + pb)
    pts = np.concatenate([_densify(p, spacing) for p in pa])
    a, b = _segments(pb)
    return float(np.max(_point_to_segments(pts, a, b)))


def _default_spacing(pieces) -> float:
    allp = np.concatenate(pieces)
    ext = max(np.ptp(allp.real), np.ptp(allp.imag))
    return 1e-3 * ext if ext > 0 else 1.0


def hausdorff_distance(A, B, spacing: Optional[float] = None) -> float:
    """Two-sided Hausdorff distance between discretised sets.

    A and B are HullPolylines, arrays of points (one polyline), or sequences
    of polylines; a single-point array is a point.  Points of A are taken on
    the polylines every ``spacing`` (default 1e-3 of the joint extent) and
    measured against the segments of B, and vice versa.
    """
    pa, pb = _as_pieces(A), _as_pieces(B)
    if spacing is None:
        spacing = _default_spacing(pa + pb)
    return max(directed_distance(pa, pb, spacing), directed_distance(pb, pa, spacing))


def clip_is_exact(hull: HullPolyline) -> bool:
    """True if clipping the real line at L cannot change distances to the hull.

    Every curve point then projects onto the kept segment [-L, L].
    """
    if not hull.polylines:
        return True
    return bool(max(np.max(np.abs(p.real)) for p in hull.polylines) <= hull.L)


# ---------------------------------------------------------------------------
# backward-chain bounds


def backward_lipschitz_constant(delta: float, T: float) -> float:
    return float(np.sqrt(1.0 + 4.0 * T / delta**2))


def check_lemma41(
    forces1: DrivingForces,
    forces2: DrivingForces,
    z,
    horizon: Optional[float] = None,
    slack: float = 1e-9,
    n_sub: int = 4,
) -> BoundReport:
    """|h_1(T, z) - h_2(T, z)| <= sqrt(1 + 4T/delta^2) sum_j sup|V_1j - V_2j| per path.

    delta is the smallest imaginary part among the points ``z``.
    """
    z = np.asarray(z, dtype=complex).ravel()
    delta = float(z.imag.min())
    if not delta > 0:
        raise ValueError("points must lie in the upper half-plane")
    T = forces1.grid.horizon if horizon is None else horizon
    idx = forces1.grid.index_of(T)
    batch = forces1.batch_shape
    zz = np.broadcast_to(z, batch + z.shape).copy()
    h1 = backward_evolve(zz, forces1, T, n_sub)
    h2 = backward_evolve(zz, forces2, T, n_sub)
    lhs = np.max(np.abs(np.asarray(h1) - np.asarray(h2)), axis=-1)
    dv = np.max(np.abs(forces1.paths[..., : idx + 1] - forces2.paths[..., : idx + 1]), axis=-1)
    C = backward_lipschitz_constant(delta, T)
    bound = C * dv.sum(-1)
    return BoundReport.from_margins(
        "backward_lipschitz", bound - lhs, slack, {"delta": delta, "T": T, "C": C}
    )


def central_derivative(f: Callable, z, h):
    """(f(z + h) - f(z - h)) / 2h along the real direction."""
    z = np.asarray(z, dtype=complex)
    zp, zm = np.broadcast_arrays(z + h, z - h)
    v = np.asarray(f(np.stack([zp, zm])))  # one call for both sides
    return (v[0] - v[1]) / (2.0 * h)


def koebe_check(
    f: Callable,
    z,
    w,
    r,
    d=None,
    tol: float = 1e-4,
    claim: str = "koebe",
) -> BoundReport:
    """Koebe distortion bounds for f univalent on the disc |u - z| < d.

    |f'(z)| |z-w| / (1+r)^2 <= |f(z) - f(w)| <= |f'(z)| |z-w| / (1-r)^2 for
    |z - w| <= r d.  d defaults to Im z (f defined on the upper half-plane).
    f' is a central difference with step 1e-6 d and is trusted to ``tol``
    relative; margins are relative to |f'(z)| |z - w|.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    r = np.broadcast_to(np.asarray(r, dtype=float), z.shape)
    d = z.imag if d is None else np.broadcast_to(np.asarray(d, dtype=float), z.shape)
    if np.any((r <= 0) | (r >= 1)):
        raise DomainViolation("r must lie in (0, 1)")
    dist = np.abs(z - w)
    if np.any(dist > r * d * (1 + 1e-12)):
        raise DomainViolation("|z - w| exceeds r * dist(z, boundary)")
    fp = np.abs(central_derivative(f, z, 1e-6 * d))
    df = np.abs(np.asarray(f(z)) - np.asarray(f(w)))
    scale = fp * dist
    with np.errstate(invalid="ignore", divide="ignore"):
        lo = (df - (1 - tol) * scale / (1 + r) ** 2) / scale
        hi = ((1 + tol) * scale / (1 - r) ** 2 - df) / scale
    margins = np.where(scale > 0, np.minimum(lo, hi), 0.0)
    return BoundReport.from_margins(claim, margins, 0.0, {"tol": tol})


# ---------------------------------------------------------------------------
# derivative probes and the Hausdorff estimate


@dataclass(frozen=True)
class ProbeResult:
    zetas: np.ndarray
    deltas: np.ndarray
    derivs: np.ndarray
    theta_hat: float

    @property
    def verified(self) -> bool:
        """Hypothesis |f'(zeta + i delta)| <= delta^-theta holds at the probes with theta < 1."""
        return bool(np.isfinite(self.theta_hat) and self.theta_hat < 1.0)

    @property
    def theta(self) -> float:
        """theta used downstream: theta_hat, kept inside the open interval (0, 1)."""
        return float(min(max(self.theta_hat, THETA_FLOOR), 1.0))


THETA_FLOOR = 1e-6


def probe_deltas(T: float, eps: float, n: int = 5, span: float = 30.0) -> np.ndarray:
    """Geometric deltas from 4 sqrt(T eps) down by a factor ``span``."""
    top = 4.0 * np.sqrt(T * eps)
    return top * np.geomspace(1.0, 1.0 / span, n)


def probe_zetas(forces: DrivingForces, n: int = 41) -> np.ndarray:
    """Evenly spaced reals over the clip range plus the final force positions."""
    L = hull_clip_length(forces)
    tips = np.ravel(forces.paths[..., -1])
    return np.unique(np.concatenate([np.linspace(-L, L, n), tips]))


def derivative_probe(
    forces: DrivingForces,
    zetas,
    deltas,
    eps: Optional[float] = None,
    n_sub: int = 4,
) -> ProbeResult:
    """theta_hat = max over probes of log|f'(zeta + i delta)| / log(1/delta), f = h_T.

    Single-path forces.  f' is a real-direction central difference of the
    backward slit flow.  With ``eps`` the deltas must lie in (0, 4 sqrt(T eps)].
    """
    if forces.batch_shape:
        raise ValueError("derivative_probe takes single-path forces")
    zetas = np.atleast_1d(np.asarray(zetas, dtype=float))
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    if np.any(deltas <= 0) or np.any(deltas >= 1):
        raise ValueError("probe deltas must lie in (0, 1)")
    if eps is not None:
        top = 4.0 * np.sqrt(forces.grid.horizon * eps)
        if np.any(deltas > top * (1 + 1e-12)):
            raise ValueError("probe deltas must not exceed 4 sqrt(T eps)")
    z = zetas[:, None] + 1j * deltas[None, :]

    def f(u):
        return backward_evolve(u, forces, None, n_sub, "slit")

    fp = np.abs(central_derivative(f, z, 1e-6 * deltas[None, :]))
    theta = np.log(fp) / np.log(1.0 / deltas[None, :])
    return ProbeResult(zetas, deltas, fp, float(np.max(theta)))


def hausdorff_estimate_rhs(T: float, eps: float, theta: float) -> float:
    return float(8.0 * (T * eps) ** ((1.0 - theta) / 2.0) + 3.0 * np.sqrt(eps * (1.0 + eps)))


def check_prop43(
    hull1: HullPolyline,
    hull2: HullPolyline,
    eps: float,
    theta: float,
    T: float,
    hypothesis_verified: bool = True,
    spacing: Optional[float] = None,
) -> HausdorffReport:
    """d_H(K_1 u R, K_2 u R) <= 8 (T eps)^((1-theta)/2) + 3 sqrt(eps (1 + eps))."""
    d = hausdorff_distance(hull1, hull2, spacing) if (hull1.polylines or hull2.polylines) else 0.0
    return HausdorffReport(
        d_H=float(d),
        rhs=hausdorff_estimate_rhs(T, eps, theta),
        theta=float(theta),
        epsilon=float(eps),
        horizon=float(T),
        hypothesis_verified=bool(hypothesis_verified),
    )


__all__ = [
    "CompactGridSpec",
    "CaratheodoryConstant",
    "ChainComparison",
    "ProbeResult",
    "caratheodory_distance",
    "check_lemma41",
    "check_prop43",
    "clip_is_exact",
    "compare_chains",
    "constant_CTG",
    "ctg_value",
    "delta1_estimate",
    "derivative_probe",
    "directed_distance",
    "hausdorff_distance",
    "koebe_check",
    "backward_lipschitz_constant",
    "probe_deltas",
    "probe_zetas",
    "hausdorff_estimate_rhs",
    "resolution_change",
]
