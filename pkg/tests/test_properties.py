import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from msle.loewner import DrivingForces, backward_evolve, forward_flow
from msle.metrics import ctg_value, hausdorff_distance
from msle.paths import TimeGrid, bessel_step
from msle.perturbation import infimum_law_cdf, phi

pos = st.floats(1e-6, 1e3)
real = st.floats(-1e3, 1e3)


@given(x=pos, dw=real, dt=st.floats(0, 10), d=st.floats(3, 50))
def test_bessel_step_positive_root(x, dw, dt, d):
    y = bessel_step(x, dw, dt, d)
    assert y >= 0
    if dt > 0:
        assert y > 0
        # residual of x'^2 - (x + dw) x' - (d-1) dt / 2 = 0, relative to the largest term
        res = y * y - (x + dw) * y - 0.5 * (d - 1) * dt
        scale = max(y * y, abs(x + dw) * y, 0.5 * (d - 1) * dt)
        assert abs(res) <= 1e-9 * scale


@given(x=pos, dw=real, dt=st.floats(1e-6, 1), d=st.floats(3, 20), h=st.floats(0, 10))
def test_bessel_step_monotone_in_start(x, dw, dt, d, h):
    assert bessel_step(x + h, dw, dt, d) >= bessel_step(x, dw, dt, d)


@given(d1=st.floats(1e-3, 10), d2=st.floats(1e-3, 10), T=st.floats(0, 5), N=st.integers(1, 5))
def test_ctg_at_least_one_when_delta1_below_delta2(d1, d2, T, N):
    c = float(ctg_value(min(d1, d2), d2, T, N))
    assert c >= 1.0 - 1e-12


@given(y=st.floats(0, 5), a=st.floats(0.1, 5), nu=st.floats(0.01, 10))
def test_infimum_cdf_is_probability(y, a, nu):
    c = infimum_law_cdf(y, a, nu)
    assert 0.0 <= c <= 1.0


@given(x=st.floats(0, 1), y=st.floats(0, 1))
def test_phi_monotone(x, y):
    lo, hi = sorted((x, y))
    assert phi(lo, 1.0, 2.0, 3.0) <= phi(hi, 1.0, 2.0, 3.0) + 1e-12


pts = st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
               min_size=1, max_size=6)


@given(a=pts, b=pts, c=pts)
@settings(max_examples=50)
def test_hausdorff_is_a_metric(a, b, c):
    A, B, C = (np.array(v) for v in (a, b, c))
    dab = hausdorff_distance(A, B, spacing=0.05)
    assert dab >= 0
    assert abs(dab - hausdorff_distance(B, A, spacing=0.05)) < 1e-12
    assert hausdorff_distance(A, A, spacing=0.05) < 1e-9
    # densification error is at most the spacing on each leg
    assert dab <= hausdorff_distance(A, C, spacing=0.05) + hausdorff_distance(C, B, spacing=0.05) + 0.2


GRID = TimeGrid(0.5, 50)


@given(
    x=st.floats(-3, 3),
    y=st.floats(1.5, 4),
    c1=st.floats(-1, 1),
    c2=st.floats(-1, 1),
)
@settings(max_examples=40, deadline=None)
def test_chain_round_trip_and_imag_decrease(x, y, c1, c2):
    F = DrivingForces.constant(GRID, [max(c1, c2) + 0.1, min(c1, c2)])
    z = np.array([x + 1j * y])
    fl = forward_flow(z, F, record=True)
    if np.isfinite(fl.swallowed_at[0]):
        return
    assert np.all(np.diff(fl.samples[0].imag) < 0)
    back = backward_evolve(fl.values, F)
    assert abs(back[0] - z[0]) < 1e-6
    assert backward_evolve(z, F)[0].imag > y
