import numpy as np
import pytest

from msle.errors import InvalidGrid, SwallowedPoint
from msle.loewner import (
    DrivingForces,
    HullPolyline,
    backward_evolve,
    capacity_coefficient,
    curve_separation,
    forward_evolve,
    forward_flow,
    hull_clip_length,
    hull_from_trace,
    inverse_map,
    polyline_distance,
    roundtrip_check,
    trace_extract,
)
from msle.paths import TimeGrid, sample_noise_batch, simulate_dyson


def zero_forces(grid, N=2):
    return DrivingForces.constant(grid, np.zeros(N))


def dyson_forces(grid, n, seed=0, kappa=4.0):
    noise = sample_noise_batch(grid, seed, 0, n, 2)
    return DrivingForces.from_dyson(simulate_dyson(grid, seed, 2, kappa, (1.0, -1.0), noise=noise))


def test_forces_shape_checked(grid):
    with pytest.raises(InvalidGrid):
        DrivingForces(grid, np.zeros((2, 10)))


def test_forces_helpers(grid):
    F = DrivingForces.constant(grid, [1.0, -1.0])
    assert F.N == 2 and F.batch_shape == ()
    assert np.allclose(F.sup_difference(F.shifted(0.3)), 0.3)
    assert F.sup_abs() == 1.0
    assert F.truncated(10).grid.horizon == pytest.approx(0.01)
    with pytest.raises(InvalidGrid):
        F.truncated(0)


@pytest.mark.parametrize("z", [3j, 1 + 1j, -0.5 + 2j])
def test_forward_zero_forces_closed_form(grid, z):
    # with both forces at 0 the field is 2/g, so g_t = sqrt(z^2 + 4t)
    tr = forward_evolve(z, zero_forces(grid))
    exact = np.sqrt(z * z + 4 * grid.times)
    exact = np.where(exact.imag < 0, -exact, exact)
    assert np.max(np.abs(tr.samples - exact)) < 1e-6
    assert tr.swallowed_at is None


def test_forward_point_on_slit_is_swallowed(grid):
    # i lies on the vertical slit [0, 2i] and is swallowed at t = 1/4
    tr = forward_evolve(1j, zero_forces(grid))
    assert tr.swallowed_at == pytest.approx(0.25, abs=0.02)
    with pytest.raises(SwallowedPoint):
        tr.final()


def test_forward_at_time_zero_is_identity(grid):
    fl = forward_flow(np.array([1 + 1j, 2j]), zero_forces(grid), record=True)
    assert np.array_equal(fl.samples[:, 0], [1 + 1j, 2j])


def test_forward_imag_decreases(grid):
    F = DrivingForces(grid, dyson_forces(grid, 1).paths[0])
    tr = forward_evolve(0.3 + 1.5j, F)
    assert tr.imag_strictly_decreasing()


def test_forward_rejects_lower_half_plane(grid):
    with pytest.raises(ValueError):
        forward_flow(np.array([1 - 1j]), zero_forces(grid))


def test_backward_zero_forces_closed_form(grid):
    assert backward_evolve(1j, zero_forces(grid)) == pytest.approx(np.sqrt(5) * 1j, abs=1e-6)
    assert backward_evolve(1j, zero_forces(grid), horizon=0.0) == 1j


def test_backward_slit_method_agrees(grid):
    z = np.array([1j, 0.5 + 0.2j])
    a = backward_evolve(z, zero_forces(grid), method="rk4")
    b = backward_evolve(z, zero_forces(grid), method="slit")
    assert np.allclose(a, b, atol=1e-6)


def test_roundtrip_zero_forces(grid):
    assert roundtrip_check(np.array([3j, 1 + 1j]), zero_forces(grid)).max() < 1e-6


def test_roundtrip_raises_for_swallowed(grid):
    with pytest.raises(SwallowedPoint):
        roundtrip_check(np.array([1j]), zero_forces(grid))


def test_roundtrip_dyson(grid):
    F = dyson_forces(grid, 100)
    res = roundtrip_check(np.full(F.batch_shape, 2j), F)
    assert res.max() < 1e-4


def test_capacity_coefficient(grid):
    F = dyson_forces(grid, 10)
    cap = capacity_coefficient(np.full(F.batch_shape, 100j), F)
    assert np.max(np.abs(cap - 2.0)) / 2.0 < 0.05


def test_inverse_map_undoes_forward(grid):
    F = DrivingForces(grid, dyson_forces(grid, 1).paths[0])
    z = np.array([0.2 + 1.5j, -1 + 1j])
    g = forward_flow(z, F, method="slit").values
    assert np.allclose(inverse_map(F)(g), z, atol=1e-8)


def test_trace_of_zero_forces_reaches_slit_tip(grid):
    tr = trace_extract(zero_forces(grid))
    tips = tr.points[:, -1]
    assert np.allclose(tips, 2j, atol=0.01)
    assert tr.points[0, 0] == pytest.approx(0 + 1e-3j)


def test_trace_starts_near_forces(grid):
    F = dyson_forces(grid, 3)
    tr = trace_extract(F)
    assert np.allclose(tr.points[..., 0], F.paths[..., 0], atol=2 * tr.delta_trace)
    assert tr.points.shape == (3, 2, len(tr.times))


def test_dyson_traces_do_not_meet(grid):
    tr = trace_extract(dyson_forces(grid, 5, kappa=2.0))
    assert not tr.warnings
    assert np.all(curve_separation(tr.points) > 0)


def test_polyline_distance():
    a = np.array([0, 1], complex)
    b = np.array([2j, 1 + 2j], complex)
    assert polyline_distance(a, b) == pytest.approx(2.0)
    c = np.array([0.5 - 1j, 0.5 + 1j])
    assert polyline_distance(a, c) == 0.0
    assert polyline_distance(np.array([3j]), a) == pytest.approx(3.0)


def test_hull_pieces(grid):
    F = dyson_forces(grid, 2)
    tr = trace_extract(F)
    assert hull_clip_length(zero_forces(grid)) == pytest.approx(4.0)
    assert hull_clip_length(F) > 4.0 + 1.0
    h = hull_from_trace(tr, 5.0, path=1)
    assert len(h.pieces) == 3
    assert np.array_equal(h.pieces[-1], [-5, 5])
    with pytest.raises(ValueError):
        hull_from_trace(tr, 5.0)
    with pytest.raises(ValueError):
        HullPolyline((), 0.0)
