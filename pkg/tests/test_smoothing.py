from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_level
from staircase_lab import (
    SmoothingWindow,
    bias_bound,
    build_synthetic_spectrum,
    coarse_grain_to_gap,
    convolve,
    delta_lambda_for,
    partition_exact,
    staircase_exact,
    tau_effective,
)
from staircase_lab.exact_filter import StaircaseCurve


def _flat_curve(value: float, n: int = 101, tau: float = 2.0) -> StaircaseCurve:
    lam = np.linspace(0, 10, n)
    z = np.full(n, value)
    return StaircaseCurve(lambdas=lam, N_vals=z * 0.5, Z_vals=z, H_vals=np.full(n, 0.5),
                          log_z=np.log(z), provenance="exact", tau=tau)


def test_window_kernel_unit_area_and_symmetry():
    for kind in ("gaussian", "boxcar"):
        w = SmoothingWindow(0.7, kind=kind)
        k = w.kernel(0.01)
        assert abs(k.sum() - 1.0) < 1e-10
        assert np.allclose(k, k[::-1])


def test_zero_width_window_is_identity():
    sm = two_level()
    lam = np.linspace(-1, 2, 301)
    c = staircase_exact(sm, 3.0, lam)
    out = convolve(c, SmoothingWindow(0.0))
    assert np.array_equal(out.Z_vals, c.Z_vals)
    assert np.array_equal(out.N_vals, c.N_vals)
    assert np.allclose(out.H_vals, c.H_vals, rtol=1e-14, atol=0)
    assert out.provenance == "smoothed"


def test_constant_curve_unchanged_by_plain_convolution():
    c = _flat_curve(3.3)
    out = convolve(c, SmoothingWindow(0.8), renormalize=False)
    good = ~out.flagged
    assert np.abs(out.Z_vals[good] - 3.3).max() < 1e-12
    assert np.abs(out.H_vals[good] - 0.5).max() < 1e-12


def test_gaussian_smoothing_equals_exact_at_tau_eff():
    sm = build_synthetic_spectrum([(0, 1), (0.9, 2), (2.2, 1)])
    tau, dl = 6.0, 0.45
    lam = np.linspace(-5, 7, 4801)
    base = staircase_exact(sm, tau, lam)
    smoothed = convolve(base, SmoothingWindow(dl))
    teff = tau_effective(tau, dl)
    ref = staircase_exact(sm, teff, lam)
    good = ~smoothed.flagged
    assert np.abs(smoothed.Z_vals[good] - ref.Z_vals[good]).max() < 1e-8
    assert np.abs(smoothed.N_vals[good] - ref.N_vals[good]).max() < 1e-8
    assert np.abs(smoothed.H_vals[good] - ref.H_vals[good]).max() < 1e-6
    assert smoothed.tau == pytest.approx(teff)
    assert smoothed.meta["tau_eff"] == pytest.approx(teff)


def test_gaussian_semigroup():
    sm = two_level(gap=1.4)
    tau = 5.0
    a, b = 0.3, 0.4
    lam = np.linspace(-8, 9.5, 7001)
    base = staircase_exact(sm, tau, lam)
    two_step = convolve(convolve(base, SmoothingWindow(a)), SmoothingWindow(b))
    one_step = convolve(base, SmoothingWindow(math.hypot(a, b)))
    good = ~(two_step.flagged | one_step.flagged)
    assert np.abs(two_step.Z_vals[good] - one_step.Z_vals[good]).max() < 1e-8
    assert two_step.tau == pytest.approx(one_step.tau, rel=1e-12)


def test_convolution_is_linear_per_channel():
    sm1 = two_level(gap=1.0)
    sm2 = build_synthetic_spectrum([(0.3, 2), (0.8, 1)])
    tau = 4.0
    lam = np.linspace(-2, 3, 1001)
    w = SmoothingWindow(0.35)
    c1 = staircase_exact(sm1, tau, lam)
    c2 = staircase_exact(sm2, tau, lam)
    summed = StaircaseCurve(
        lambdas=lam, N_vals=2 * c1.N_vals + 3 * c2.N_vals,
        Z_vals=2 * c1.Z_vals + 3 * c2.Z_vals,
        H_vals=(2 * c1.N_vals + 3 * c2.N_vals) / (2 * c1.Z_vals + 3 * c2.Z_vals),
        log_z=np.log(2 * c1.Z_vals + 3 * c2.Z_vals), provenance="exact", tau=tau)
    lhs = convolve(summed, w)
    r1, r2 = convolve(c1, w), convolve(c2, w)
    good = ~lhs.flagged
    assert np.abs(lhs.Z_vals[good] - (2 * r1.Z_vals + 3 * r2.Z_vals)[good]).max() < 1e-10
    assert np.abs(lhs.N_vals[good] - (2 * r1.N_vals + 3 * r2.N_vals)[good]).max() < 1e-10


def test_window_wider_than_grid_rejected():
    c = _flat_curve(1.0, n=21)
    with pytest.raises(ValueError, match="support"):
        convolve(c, SmoothingWindow(30.0))


def test_nonuniform_grid_rejected():
    lam = np.array([0.0, 0.1, 0.3, 0.6])
    c = StaircaseCurve(lambdas=lam, N_vals=lam, Z_vals=np.ones(4), H_vals=lam,
                       log_z=np.zeros(4), provenance="exact", tau=1.0)
    with pytest.raises(ValueError, match="uniform"):
        convolve(c, SmoothingWindow(0.05))


def test_edge_points_are_flagged():
    c = _flat_curve(1.0, n=201)
    out = convolve(c, SmoothingWindow(0.5), renormalize=False)
    assert out.flagged[0] and out.flagged[-1]
    assert not out.flagged[len(out.flagged) // 2]


def test_tau_effective_algebra():
    assert tau_effective(3.0, 0.0) == pytest.approx(3.0)
    tau = 2.7
    dl = 1.0 / math.sqrt(tau)  # tau * dl^2 = 1
    assert tau_effective(tau, dl) == pytest.approx(tau / 2)


def test_tau_effective_asymptotic_scale():
    tau = 100.0
    for dl in (0.8, 1.5, 3.0):  # dl >> 1/sqrt(tau) = 0.1
        teff = tau_effective(tau, dl)
        assert abs(1.0 / math.sqrt(teff) - dl) / dl < 0.05


@given(st.floats(0.1, 50), st.floats(0.0, 5.0))
@settings(max_examples=60, deadline=None)
def test_tau_effective_bounds(tau, dl):
    teff = tau_effective(tau, dl)
    assert 0 < teff <= tau


def test_delta_lambda_for_inverts():
    tau, target = 8.0, 2.5
    dl = delta_lambda_for(tau, target)
    assert tau_effective(tau, dl) == pytest.approx(target, rel=1e-12)


def test_coarse_grain_noop_when_already_at_target():
    K = 1024
    delta = 0.5
    tau = math.log(K) / delta ** 2
    plan = coarse_grain_to_gap(tau, delta, K)
    assert plan.noop
    assert plan.delta_lambda == 0.0


def test_coarse_grain_limit_large_tau():
    K = 4096
    delta = 0.7
    plan = coarse_grain_to_gap(1e12, delta, K)
    assert not plan.noop
    assert plan.delta_lambda == pytest.approx(delta / math.sqrt(math.log(K)), rel=1e-4)


def test_coarse_grain_resolution_matches_target():
    # smooth a sharp two-level staircase to the planned width; the measured
    # transition width maps back to delta_j / sqrt(ln K) within 25%
    K = 2048
    gap = 1.0
    sm = two_level(gap=gap, e0=0.5)
    tau = 400.0
    plan = coarse_grain_to_gap(tau, gap, K)
    assert not plan.noop
    lam = np.linspace(-5, 6.5, 11501)
    sharp = staircase_exact(sm, tau, lam)
    smoothed = convolve(sharp, SmoothingWindow(plan.delta_lambda))
    seg = (lam > 0.5) & (lam < 1.5) & ~smoothed.flagged
    h = smoothed.H_vals[seg]
    x = lam[seg]
    assert np.all(np.diff(h) > 0)  # monotone transition between the levels
    width = float(np.interp(0.5 + 0.75 * gap, h, x) - np.interp(0.5 + 0.25 * gap, h, x))
    teff_meas = math.log(3.0) / (2.0 * width * (gap / 2.0))
    delta_meas = 1.0 / math.sqrt(teff_meas)
    target = gap / math.sqrt(math.log(K))
    assert abs(delta_meas - target) / target < 0.25


def test_bias_bound_values_and_monotonicity():
    assert bias_bound(math.log(100.0), 1.0) == pytest.approx(0.01)
    assert bias_bound(2.0, 1.0) > bias_bound(3.0, 1.0)
    assert bias_bound(2.0, 1.0) > bias_bound(2.0, 1.5)


def test_smoothed_plateau_shift_within_bias_bound():
    # |smoothed H at the lower level - E0| <= ||H|| exp(-tau_eff Delta^2)
    for gap in (0.8, 1.2):
        for teff_target in (2.0, 4.0, 8.0):
            tau = 40.0 / gap ** 2
            sm = two_level(gap=gap, e0=1.0)
            dl = delta_lambda_for(tau, teff_target)
            margin = 7.0 * dl + 2.0 * gap
            lam = np.linspace(1.0 - margin, 1.0 + gap + margin, 6001)
            base = staircase_exact(sm, tau, lam)
            smoothed = convolve(base, SmoothingWindow(dl))
            i0 = np.argmin(np.abs(lam - 1.0))
            shift = abs(smoothed.H_vals[i0] - 1.0)
            half = gap / 2.0
            bound = sm.spectral_norm * bias_bound(teff_target, half)
            assert shift <= bound + 1e-12
