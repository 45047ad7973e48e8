"""Diagnostics: integrated error, stability thresholds, oscillation scores,
plateau readout, and scaling-collapse tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import itqde
from .exact_filter import StaircaseCurve, partition_exact, staircase_exact
from .model import LatticeSpec, SpectrumModel, build_fermi_hubbard, diagonalize


class IntegratedError(NamedTuple):
    """Trapezoidal integral of |H_a - H_b| and the lambda measure excluded
    because either curve was flagged (or NaN)."""

    value: float
    excluded_measure: float

    def __float__(self) -> float:
        return self.value


def integrated_error(curve_a: StaircaseCurve, curve_b: StaircaseCurve,
                     lo: float | None = None, hi: float | None = None,
                     include_flagged: bool = False) -> IntegratedError:
    """Integrate |H_a - H_b| over [lo, hi] (defaults to the full grid).

    The two curves must share their lambda grid.  Flagged or non-finite
    points are excluded segment-wise unless ``include_flagged``; the excluded
    measure is reported alongside.
    """
    if len(curve_a.lambdas) != len(curve_b.lambdas) or \
            not np.allclose(curve_a.lambdas, curve_b.lambdas, rtol=0, atol=1e-12):
        raise ValueError("integrated_error requires identical lambda grids")
    lam = curve_a.lambdas
    diff = np.abs(curve_a.H_vals - curve_b.H_vals)
    good = np.isfinite(diff)
    if not include_flagged:
        good &= ~curve_a.flagged & ~curve_b.flagged
    sel = np.ones(len(lam), dtype=bool)
    if lo is not None:
        sel &= lam >= lo - 1e-12
    if hi is not None:
        sel &= lam <= hi + 1e-12
    seg = sel[:-1] & sel[1:]
    ok = seg & good[:-1] & good[1:]
    widths = np.diff(lam)
    heights = 0.5 * (diff[:-1] + diff[1:])
    value = float((widths * heights)[ok].sum())
    excluded = float(widths[seg & ~ok].sum())
    return IntegratedError(value=value, excluded_measure=excluded)


@dataclass
class StabilityReport:
    """Truncation stability summary for one (spectrum, rule) pair.

    ``unstable_intervals`` are the lambda ranges where the exact partition
    function drops below Z_epsilon / r0, i.e. where the tail ratio
    r(lambda) = Z_epsilon / Z(lambda) exceeds the tolerance r0.
    """

    z_epsilon: float
    leading_weight: float
    tau_epsilon: float
    d_epsilon: float
    delta_epsilon: float
    delta_epsilon_linear: float
    r0: float
    mbar: int
    tau: float
    unstable_intervals: list = field(default_factory=list)
    vacuous: bool = False


def _mask_intervals(lam: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    out = []
    start = None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        if not m and start is not None:
            out.append((float(lam[start]), float(lam[i - 1])))
            start = None
    if start is not None:
        out.append((float(lam[start]), float(lam[-1])))
    return out


def stability_report(spec: SpectrumModel, rule: itqde.QuadratureRule,
                     r0: float = 0.1, lambdas: np.ndarray | None = None) -> StabilityReport:
    """Predict where the truncated estimator is reliable.

    Z_epsilon is the full discarded-weight sum (the single leading discarded
    weight is reported separately); the resolvable radius is
    d_eps = sqrt(ln(1/(r0 Z_eps)) / tau) and the largest resolvable gap is
    2 d_eps, with the linearized form 2 sqrt((2 mbar - ln r0)/tau) alongside.
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    tau = float(rule.tau)
    if tau <= 0:
        raise ValueError("rule must carry tau > 0")
    z_eps = rule.discarded_weight
    lead = rule.leading_discarded_weight
    tau_eps = math.sqrt(tau) * rule.leading_discarded_node if z_eps > 0 else math.inf
    mbar = rule.mbar
    lin = 2.0 * math.sqrt(max(2.0 * mbar - math.log(r0), 0.0) / tau)
    if z_eps <= 0:
        d_eps = math.inf
        vac = False
    elif r0 * z_eps >= 1.0:
        # tolerance so lax that no lambda is flagged; radius unbounded
        d_eps = math.inf
        vac = True
    else:
        d_eps = math.sqrt(math.log(1.0 / (r0 * z_eps)) / tau)
        vac = False
    intervals: list[tuple[float, float]] = []
    if lambdas is not None and z_eps > 0 and not vac:
        z_vals, _ = partition_exact(spec, tau, lambdas)
        intervals = _mask_intervals(np.asarray(lambdas, dtype=float),
                                    z_vals < z_eps / r0)
    return StabilityReport(
        z_epsilon=z_eps, leading_weight=lead, tau_epsilon=tau_eps,
        d_epsilon=d_eps, delta_epsilon=2.0 * d_eps, delta_epsilon_linear=lin,
        r0=r0, mbar=mbar, tau=tau, unstable_intervals=intervals, vacuous=vac,
    )


def _moving_average(vals: np.ndarray, window_pts: int) -> np.ndarray:
    kern = np.ones(window_pts) / window_pts
    half = (window_pts - 1) // 2
    padded = np.pad(vals, (half, window_pts - 1 - half), mode="edge")
    return np.convolve(padded, kern, mode="valid")


@dataclass
class OscillationScores:
    lambdas: np.ndarray
    scores: np.ndarray
    threshold: float
    over_resolved: np.ndarray  # boolean mask
    intervals: list


def oscillation_diagnostic(curve: StaircaseCurve, window_pts: int,
                           threshold_factor: float = 10.0,
                           min_score: float = 1e-3) -> OscillationScores:
    """High-pass residual power as an over-resolution detector.

    score = RMS of (H - moving average of H) over a window, normalized by the
    staircase range.  Points are marked over-resolved when their score exceeds
    both threshold_factor times the median score and the absolute floor
    ``min_score`` (smooth exact curves carry a discretization residue well
    below it).  Works without any ground-truth curve.
    """
    if not curve.has_uniform_grid():
        raise ValueError("oscillation_diagnostic requires a uniform grid")
    if window_pts < 3:
        raise ValueError("window_pts must be >= 3")
    if window_pts > len(curve.lambdas):
        raise ValueError("window larger than the grid")
    h = curve.H_vals.copy()
    finite = np.isfinite(h)
    if not finite.all():
        # fill isolated bad points with local averages so the filter is defined
        h[~finite] = np.interp(curve.lambdas[~finite], curve.lambdas[finite], h[finite])
    scale = np.nanmax(h[finite]) - np.nanmin(h[finite]) if finite.any() else 1.0
    scale = scale if scale > 0 else 1.0
    resid = h - _moving_average(h, window_pts)
    power = _moving_average(resid ** 2, window_pts)
    scores = np.sqrt(np.clip(power, 0.0, None)) / scale
    med = float(np.median(scores))
    thr = max(threshold_factor * med, min_score)
    mask = scores > thr
    return OscillationScores(
        lambdas=curve.lambdas.copy(), scores=scores, threshold=thr,
        over_resolved=mask, intervals=_mask_intervals(curve.lambdas, mask),
    )


@dataclass(frozen=True)
class Plateau:
    energy: float
    lambda_lo: float
    lambda_hi: float
    width: float


def extract_plateaux(curve: StaircaseCurve, slope_tol: float | None = None,
                     min_width: int = 5) -> list[Plateau]:
    """Maximal low-slope intervals of the staircase and their level estimates.

    An interval qualifies when |dH/dlambda| (central differences) stays below
    slope_tol over at least min_width grid points; the level estimate is the
    median of H over the interval.  Default slope_tol is 2% of the average
    staircase slope, 0.02 (H_max - H_min) / lambda span.
    """
    lam = curve.lambdas
    h = curve.H_vals
    good = np.isfinite(h) & ~curve.flagged
    if slope_tol is None:
        finite = h[good]
        if len(finite) < 2:
            return []
        slope_tol = 0.02 * (finite.max() - finite.min()) / (lam[-1] - lam[0])
    dh = np.gradient(h, lam)
    flat = (np.abs(dh) < slope_tol) & good
    out = []
    for lo, hi in _mask_intervals(lam, flat):
        i0 = int(np.searchsorted(lam, lo))
        i1 = int(np.searchsorted(lam, hi))
        if i1 - i0 + 1 < min_width:
            continue
        est = float(np.median(h[i0:i1 + 1]))
        out.append(Plateau(energy=est, lambda_lo=lo, lambda_hi=hi, width=hi - lo))
    return out


@dataclass
class CollapseRow:
    mode: str
    s: float
    mbar: int
    eps: float
    eps_pow: float  # eps^(1/s)
    mbar_over_s: float


@dataclass
class CollapseTable:
    rows: list
    mode: str
    spread: float  # max pairwise vertical spread of log10(eps^(1/s))

    def by_s(self) -> dict:
        out: dict[float, list[CollapseRow]] = {}
        for r in self.rows:
            out.setdefault(r.s, []).append(r)
        return out


def _hopping_for_target_s(base: LatticeSpec, tau0: float, s_target: float,
                          dim_cap: int) -> tuple[LatticeSpec, SpectrumModel, float]:
    """Bisection on t_hop so that tau0 * ||H(t)||^2 hits s_target."""

    def norm_for(t: float) -> tuple[SpectrumModel, float]:
        spec_t = LatticeSpec(lx=base.lx, ly=base.ly, n_up=base.n_up, n_down=base.n_down,
                             t_hop=t, u=base.u, mu=base.mu,
                             periodic_x=base.periodic_x, periodic_y=base.periodic_y)
        sm = diagonalize(build_fermi_hubbard(spec_t, dim_cap=dim_cap))
        return sm, tau0 * sm.spectral_norm ** 2

    lo_t, hi_t = 1e-3, 1.0
    sm, s_hi = norm_for(hi_t)
    while s_hi < s_target:
        hi_t *= 2.0
        if hi_t > 64:
            raise ValueError("cannot reach target s by raising the hopping scale")
        sm, s_hi = norm_for(hi_t)
    for _ in range(60):
        mid = 0.5 * (lo_t + hi_t)
        sm, s_mid = norm_for(mid)
        if abs(s_mid - s_target) <= 1e-6 * s_target:
            break
        if s_mid < s_target:
            lo_t = mid
        else:
            hi_t = mid
    spec_t = LatticeSpec(lx=base.lx, ly=base.ly, n_up=base.n_up, n_down=base.n_down,
                         t_hop=mid, u=base.u, mu=base.mu,
                         periodic_x=base.periodic_x, periodic_y=base.periodic_y)
    return spec_t, sm, tau0 * sm.spectral_norm ** 2


def scaling_collapse(model: LatticeSpec | SpectrumModel, s_values,
                     mbar_over_s_grid, mode: str = "tau", tau0: float | None = None,
                     kappa: float = 6.0, lambda_points: int = 801,
                     dim_cap: int = 4096) -> CollapseTable:
    """Integrated truncation error across s = tau ||H||^2 in rescaled units.

    ``tau`` mode varies tau on a fixed model; ``hopping`` mode varies the
    hopping scale at fixed tau0 (solved by bisection to hit each target s).
    For each s the quadrature degree is m = ceil(kappa s) and mbar sweeps
    mbar_over_s_grid * s.  Rows carry (s, mbar, eps, eps^{1/s}, mbar/s); the
    collapse spread is the max pairwise gap of log10(eps^{1/s}) interpolated
    onto the common mbar/s range.
    """
    if mode not in ("tau", "hopping"):
        raise ValueError("mode must be 'tau' or 'hopping'")
    rows: list[CollapseRow] = []
    curves_log: list[tuple[np.ndarray, np.ndarray]] = []
    for s in s_values:
        if mode == "tau":
            if isinstance(model, LatticeSpec):
                sm = diagonalize(build_fermi_hubbard(model, dim_cap=dim_cap))
            else:
                sm = model
            tau = s / sm.spectral_norm ** 2
        else:
            if not isinstance(model, LatticeSpec):
                raise ValueError("hopping mode needs a LatticeSpec")
            if tau0 is None:
                raise ValueError("hopping mode needs tau0")
            _, sm, s_actual = _hopping_for_target_s(model, tau0, s, dim_cap)
            tau = tau0
            s = s_actual
        m = min(math.ceil(kappa * s), itqde.MAX_DEGREE)
        rule = itqde.gauss_hermite_rule(m, tau=tau)
        lam = np.linspace(sm.e_min, sm.e_max, lambda_points)
        exact = staircase_exact(sm, tau, lam)
        xs, ys = [], []
        seen_mbar: set[int] = set()
        for r in mbar_over_s_grid:
            mbar = max(2, min(m, math.ceil(r * s)))
            trunc = itqde.truncate_rule(rule, mbar=mbar)
            if trunc.mbar in seen_mbar:
                continue
            seen_mbar.add(trunc.mbar)
            ov = itqde.compute_overlaps(sm, trunc)
            quad = itqde.staircase_quadrature(ov, trunc, lam)
            eps = integrated_error(exact, quad, include_flagged=True).value
            eps_pow = math.exp(math.log(eps) / s) if eps > 0 else 0.0
            mbar_eff = trunc.mbar
            rows.append(CollapseRow(mode=mode, s=float(s), mbar=mbar_eff, eps=eps,
                                    eps_pow=eps_pow, mbar_over_s=mbar_eff / s))
            if eps > 0:
                xs.append(mbar_eff / s)
                ys.append(math.log10(eps_pow))
        curves_log.append((np.array(xs), np.array(ys)))
    spread = 0.0
    if len(curves_log) > 1:
        lo = max(c[0].min() for c in curves_log)
        hi = min(c[0].max() for c in curves_log)
        if hi > lo:
            grid = np.linspace(lo, hi, 41)
            interp = np.array([np.interp(grid, xs, ys) for xs, ys in curves_log])
            spread = float((interp.max(axis=0) - interp.min(axis=0)).max())
    return CollapseTable(rows=rows, mode=mode, spread=spread)
