from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from conftest import two_level
from staircase_lab import (
    build_synthetic_spectrum,
    compute_overlaps,
    gauss_hermite_rule,
    mbar_for_precision,
    partition_exact,
    quadrature_error_bound,
    staircase_binomial,
    staircase_exact,
    staircase_quadrature,
    truncate_rule,
)
from staircase_lab.itqde import read_overlap_csv, write_overlap_csv


def test_rule_m1_closed_form():
    r = gauss_hermite_rule(1)
    assert np.array_equal(r.nodes, [0.0])
    assert np.array_equal(r.weights, [1.0])


def test_rule_m2_closed_form():
    r = gauss_hermite_rule(2)
    assert np.allclose(np.sort(r.nodes), [-1 / math.sqrt(2), 1 / math.sqrt(2)])
    assert np.allclose(r.weights, [0.5, 0.5])


@pytest.mark.parametrize("m", [3, 5, 16, 64, 257, 500])
def test_rule_symmetry_and_normalization(m):
    r = gauss_hermite_rule(m)
    assert np.array_equal(r.nodes, -r.nodes[::-1])
    assert abs(r.weights.sum() - 1.0) < 1e-10
    assert np.all(r.weights >= 0.0)
    assert np.all(np.isfinite(r.log_weights))


def test_rule_degree_range():
    with pytest.raises(ValueError):
        gauss_hermite_rule(0)
    with pytest.raises(ValueError):
        gauss_hermite_rule(501)


def test_tail_weight_decay_slope():
    # ln w_k vs positive-node index in the mid-tail decays with rate ~ 2
    r = gauss_hermite_rule(200)
    pos = r.nodes > 0
    order = np.argsort(r.nodes[pos])
    lw = r.log_weights[pos][order]
    npos = len(lw)
    k = np.arange(1, npos + 1)
    sel = (k >= 0.2 * npos) & (k <= 0.6 * npos)
    slope = np.polyfit(k[sel], lw[sel], 1)[0]
    assert -2.2 < slope < -1.8


def test_positive_nodes_near_sqrt_2k_in_band():
    r = gauss_hermite_rule(200)
    x = np.sort(r.nodes[r.nodes > 0])
    npos = len(x)
    k = np.arange(1, npos + 1)
    band = (k >= math.ceil(0.65 * npos)) & (k <= int(0.80 * npos))
    rel = np.abs(x - np.sqrt(2 * k)) / np.sqrt(2 * k)
    assert rel[band].max() < 0.10


def test_truncate_identity():
    r = gauss_hermite_rule(32)
    t = truncate_rule(r, mbar=32)
    assert t.mbar == 32
    assert t.discarded_weight == 0.0
    assert t.leading_discarded_node == math.inf


def test_truncate_epsilon_one_keeps_center_only():
    t = truncate_rule(gauss_hermite_rule(32), epsilon=1.0)
    assert t.mbar == 2  # the central +- pair
    t_odd = truncate_rule(gauss_hermite_rule(33), epsilon=1.0)
    assert t_odd.mbar == 1  # odd degree has a node at 0


def test_truncate_keeps_pairs_and_orders_by_weight():
    r = gauss_hermite_rule(30)
    t = truncate_rule(r, mbar=7)  # odd request rounds up to close the pair
    assert t.mbar == 8
    kept = t.retained_nodes
    for x in kept:
        assert np.any(np.abs(kept + x) < 1e-12)
    assert np.all(np.diff(t.retained_weights[::2]) <= 1e-15)


def test_truncate_epsilon_minimality():
    r = gauss_hermite_rule(40)
    eps = 1e-6
    t = truncate_rule(r, epsilon=eps)
    assert t.discarded_weight < eps
    fewer = truncate_rule(r, mbar=t.mbar - 2)
    assert fewer.discarded_weight >= eps


def test_discarded_sum_decay_rate():
    # ln(discarded sum) vs retained pair count: rate ~ -2 per pair in the
    # mid-tail band q/m in [0.125, 0.25]
    m = 200
    r = gauss_hermite_rule(m)
    pairs, lns = [], []
    for q in range(int(0.1 * m), int(0.3 * m)):
        t = truncate_rule(r, mbar=2 * q)
        pairs.append(t.mbar // 2)
        lns.append(t.log_discarded_weight)
    pairs = np.array(pairs)
    lns = np.array(lns)
    sel = (pairs >= 0.125 * m) & (pairs <= 0.25 * m)
    slope = np.polyfit(pairs[sel], lns[sel], 1)[0]
    assert -2.2 < slope < -1.8


def test_mbar_for_precision_kappa_e():
    s = 10.0
    est = mbar_for_precision(s, epsilon=0.9, kappa=math.e)
    assert est.mbar == math.ceil(math.e / 2 * s)
    assert est.degree_m == math.ceil(math.e * s)


def test_mbar_for_precision_scales_linearly():
    # doubling s at fixed kappa and fixed eps^(1/s) doubles mbar
    s = 9.0
    target = math.exp(-4.0)  # eps^(1/s), chosen so -ln(eps)/2 is integral
    a = mbar_for_precision(s, epsilon=target ** s, kappa=2.0)
    b = mbar_for_precision(2 * s, epsilon=target ** (2 * s), kappa=2.0)
    assert b.mbar == 2 * a.mbar


@given(st.floats(0.5, 40), st.floats(1.1, 4))
@settings(max_examples=40, deadline=None)
def test_mbar_for_precision_monotone_in_s(s, kappa):
    a = mbar_for_precision(s, 1e-3, kappa)
    b = mbar_for_precision(2 * s, 1e-3, kappa)
    assert b.mbar >= a.mbar
    assert b.degree_m >= a.degree_m


def test_overlaps_at_zero_time():
    sm = build_synthetic_spectrum([(0, 1), (1, 2), (3, 1)])
    rule = gauss_hermite_rule(1, tau=0.0)
    ov = compute_overlaps(sm, rule)
    assert ov.z[0] == pytest.approx(4.0)      # sum of weights
    assert ov.n[0] == pytest.approx(1 * 2 + 3)  # weighted energy sum


def test_overlaps_single_level_phase():
    c = 1.7
    sm = build_synthetic_spectrum([(c, 2)])
    rule = gauss_hermite_rule(8, tau=0.9)
    ov = compute_overlaps(sm, rule)
    expected = 2.0 * np.exp(-2j * ov.node_times * c)
    assert np.abs(ov.z - expected).max() < 1e-12
    assert np.abs(ov.n - c * ov.z).max() < 1e-12


def test_overlap_conjugate_pairs():
    sm = two_level(gap=1.3, g1=2)
    rule = gauss_hermite_rule(16, tau=1.1)
    ov = compute_overlaps(sm, rule)
    for i, x in enumerate(ov.nodes):
        j = int(np.argmin(np.abs(ov.nodes + x)))
        assert abs(ov.nodes[j] + x) < 1e-12
        assert abs(ov.z[i] - np.conj(ov.z[j])) < 1e-12


def _ratio_error_budget(sm, lam, tau, m):
    """Per-lambda bound on |H_quad - H_exact| from the exact Gauss-Hermite
    error constant C_m = m! 2^m / (2m)! applied level by level."""
    u = sm.spectral_weights()
    E = sm.levels
    d2 = (E[None, :] - lam[:, None]) ** 2
    log_cm = gammaln(m + 1) + m * math.log(2.0) - gammaln(2 * m + 1)
    per_level = np.exp(log_cm + m * np.log(np.maximum(tau * d2, 1e-300)))
    bz = (u[None, :] * per_level).sum(axis=1)
    bn = (u[None, :] * np.abs(E)[None, :] * per_level).sum(axis=1)
    z, _ = partition_exact(sm, tau, lam)
    h = staircase_exact(sm, tau, lam).H_vals
    denom = z - bz
    ok = denom > 0
    bound = np.full(len(lam), np.inf)
    bound[ok] = (bn[ok] + np.abs(h[ok]) * bz[ok]) / denom[ok]
    return bound


def test_quadrature_single_level_constant():
    c = -0.8
    sm = build_synthetic_spectrum([(c, 3)])
    rule = truncate_rule(gauss_hermite_rule(24, tau=2.0), mbar=10)
    ov = compute_overlaps(sm, rule)
    curve = staircase_quadrature(ov, rule, np.linspace(-2, 1, 41))
    stable = ~curve.flagged
    assert stable.any()
    assert np.abs(curve.H_vals[stable] - c).max() < 1e-10


def test_quadrature_matches_exact_within_ratio_budget(fh22):
    tau, m = 0.5, 60
    rule = gauss_hermite_rule(m, tau=tau)
    lam = np.linspace(fh22.e_min, fh22.e_max, 301)
    exact = staircase_exact(fh22, tau, lam)
    quad = staircase_quadrature(compute_overlaps(fh22, rule), rule, lam)
    budget = _ratio_error_budget(fh22, lam, tau, m) + 1e-11 * fh22.spectral_norm
    assert np.all(np.abs(quad.H_vals - exact.H_vals) <= budget)


def test_quadrature_z_matches_partition_within_bound(fh22):
    # operator-level check against the finite-m bound, on probes where
    # ||H - lambda|| <= norm used in the bound
    tau, m = 0.6, 44
    rule = gauss_hermite_rule(m, tau=tau)
    lam = np.linspace(fh22.e_max - fh22.spectral_norm,
                      fh22.e_min + fh22.spectral_norm, 101)
    z_exact, _ = partition_exact(fh22, tau, lam)
    quad = staircase_quadrature(compute_overlaps(fh22, rule), rule, lam)
    bound = quadrature_error_bound(tau, fh22.spectral_norm, m).bound
    # trace-mode weights sum to D, the scalar bound applies per unit weight
    assert np.abs(quad.Z_vals - z_exact).max() <= bound * fh22.total_weight + 1e-10


def test_quadrature_realness_is_structural(fh22):
    rule = truncate_rule(gauss_hermite_rule(40, tau=0.7), mbar=20)
    ov = compute_overlaps(fh22, rule)
    lam = np.linspace(-1, 7, 64)
    curve = staircase_quadrature(ov, rule, lam)
    assert curve.N_vals.dtype == np.float64
    assert curve.Z_vals.dtype == np.float64
    # explicit complex evaluation agrees with the per-node Re[] construction
    ref = (np.exp(2j * np.outer(lam, ov.node_times)) * ov.z[None, :]) @ ov.weights
    assert np.abs(ref.imag).max() < 1e-12 * np.abs(ref.real).max()
    assert np.abs(ref.real - curve.Z_vals).max() < 1e-12 * np.abs(ref.real).max()


def test_truncation_error_monotone_in_mbar(fh22):
    from staircase_lab import integrated_error

    tau, m = 0.5, 64
    rule = gauss_hermite_rule(m, tau=tau)
    lam = np.linspace(fh22.e_min, fh22.e_max, 401)
    exact = staircase_exact(fh22, tau, lam)
    errors = []
    for mbar in (8, 16, 24, 32, 48, 64):
        t = truncate_rule(rule, mbar=mbar)
        curve = staircase_quadrature(compute_overlaps(fh22, t), t, lam)
        errors.append(integrated_error(exact, curve, include_flagged=True).value)
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errors, errors[1:]))


def test_quadrature_flags_unstable_gap_points():
    sm = build_synthetic_spectrum([(0, 1), (4, 1)])
    tau = 3.0
    rule = truncate_rule(gauss_hermite_rule(220, tau=tau), epsilon=1e-4)
    ov = compute_overlaps(sm, rule)
    lam = np.linspace(-1, 5, 121)
    curve = staircase_quadrature(ov, rule, lam)
    mid = np.abs(lam - 2.0) < 0.3
    assert curve.flagged[mid].all()
    plateau = np.abs(lam - 0.0) < 0.2
    assert not curve.flagged[plateau].any()


def test_binomial_single_level():
    c = 0.9
    sm = build_synthetic_spectrum([(c, 1)])
    curve = staircase_binomial(sm, tau=1.0, dtau=0.5, lambdas=np.linspace(0, 2, 11))
    assert np.abs(curve.H_vals - c).max() < 1e-12


def test_binomial_rejects_odd_or_fractional_steps():
    sm = two_level()
    with pytest.raises(ValueError):
        staircase_binomial(sm, tau=1.0, dtau=1.0 / 3.0, lambdas=np.array([0.5]))
    with pytest.raises(ValueError):
        staircase_binomial(sm, tau=0.3, dtau=0.2, lambdas=np.array([0.5]))


def test_binomial_first_order_in_dtau():
    # halving dtau at fixed tau halves the deviation from the exact staircase
    sm = two_level(gap=1.0)
    tau = 4.0
    lam = np.linspace(-0.5, 1.5, 201)
    exact = staircase_exact(sm, tau, lam)
    errs = []
    for dtau in (0.05, 0.025, 0.0125):
        curve = staircase_binomial(sm, tau, dtau, lam)
        errs.append(np.abs(curve.H_vals - exact.H_vals).max())
    for a, b in zip(errs, errs[1:]):
        assert 1.7 < a / b < 2.3


def test_binomial_quadrature_cross_consistency(fh22):
    # both estimators within their a-priori budgets of each other
    tau, dtau, m = 0.6, 0.015, 60
    lam = np.linspace(fh22.e_min, fh22.e_max, 301)
    rule = gauss_hermite_rule(m, tau=tau)
    quad = staircase_quadrature(compute_overlaps(fh22, rule), rule, lam)
    binom = staircase_binomial(fh22, tau, dtau, lam)
    u = fh22.spectral_weights()
    E = fh22.levels
    d = np.abs(E[None, :] - lam[:, None])
    # binomial kernel error <= (tau dtau / 3) d^4 e^{-tau d^2} (1 + h.o.)
    margin = 3.0
    ker = (tau * dtau / 3.0) * d ** 4 * np.exp(-tau * d ** 2) * margin
    bz = (u[None, :] * ker).sum(axis=1)
    bn = (u[None, :] * np.abs(E)[None, :] * ker).sum(axis=1)
    z, _ = partition_exact(fh22, tau, lam)
    h = staircase_exact(fh22, tau, lam).H_vals
    budget_bin = (bn + np.abs(h) * bz) / (z - bz)
    budget_quad = _ratio_error_budget(fh22, lam, tau, m)
    assert np.all(np.abs(binom.H_vals - quad.H_vals)
                  <= budget_bin + budget_quad + 1e-11 * fh22.spectral_norm)


def test_error_bound_zero_cases():
    b = quadrature_error_bound(0.0, 5.0, 10)
    assert b.bound == 0.0 and b.asymptotic == 0.0
    b2 = quadrature_error_bound(1.0, 0.0, 10)
    assert b2.bound == 0.0


def test_error_bound_monotone_beyond_threshold():
    tau, norm = 0.4, 3.0
    thresh = tau * math.e * norm ** 2 / 2.0
    ms = range(int(thresh) + 1, int(thresh) + 30)
    vals = [quadrature_error_bound(tau, norm, m).log_asymptotic for m in ms]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_error_bound_log_consistency():
    b = quadrature_error_bound(0.3, 2.0, 12)
    assert b.bound == pytest.approx(math.exp(b.log_bound))
    assert b.asymptotic == pytest.approx(math.exp(b.log_asymptotic))
    big = quadrature_error_bound(50.0, 1e40, 10)
    assert big.bound == math.inf and math.isfinite(big.log_bound)


def test_overlap_csv_roundtrip(tmp_path, fh22):
    rule = truncate_rule(gauss_hermite_rule(24, tau=0.8), mbar=12)
    ov = compute_overlaps(fh22, rule)
    path = tmp_path / "overlaps.csv"
    write_overlap_csv(path, ov)
    back = read_overlap_csv(path, tau=0.8, mode=ov.mode,
                            total_weight=ov.total_weight,
                            discarded_weight=ov.discarded_weight)
    assert np.array_equal(back.node_times, ov.node_times)
    assert np.array_equal(back.z, ov.z)
    assert np.array_equal(back.n, ov.n)
    # lambda rescan from the file reproduces the staircase
    lam = np.linspace(0, 4, 21)
    a = staircase_quadrature(ov, rule, lam)
    b = staircase_quadrature(back, rule, lam)
    assert np.array_equal(a.H_vals, b.H_vals)
