"""Window smoothing of staircase curves and the tau -> tau_eff map.

Convolving the numerator and denominator channels with an even unit-area
window of width delta_lambda, then re-taking the ratio, is equivalent to
narrowing the filter:

    tau_eff = tau / (1 + tau delta_lambda^2)

The Gaussian window realizing this exactly has standard deviation
delta_lambda / sqrt(2).  A plain unit-area convolution maps the exact
Z channel to sqrt(tau_eff/tau) * Z(tau_eff); the ratio H is insensitive to
that prefactor, but so that smoothed curves are directly comparable to exact
curves at tau_eff, Gaussian smoothing rescales N and Z by
sqrt(1 + tau delta_lambda^2) by default (``renormalize``).  The rescaling
composes consistently: two smoothings of widths a and b equal one smoothing
of width sqrt(a^2 + b^2) either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exact_filter import StaircaseCurve


@dataclass(frozen=True)
class SmoothingWindow:
    """Even, unit-area window of width delta_lambda on a uniform grid."""

    width: float
    kind: str = "gaussian"
    grid_support: int | None = None  # half-width in grid points; None = auto

    def __post_init__(self) -> None:
        if self.width < 0:
            raise ValueError("window width must be >= 0")
        if self.kind not in ("gaussian", "boxcar"):
            raise ValueError(f"unknown window kind {self.kind!r}")

    def kernel(self, step: float) -> np.ndarray:
        """Discrete symmetric kernel for grid spacing ``step``, summing to 1."""
        if step <= 0:
            raise ValueError("grid step must be positive")
        if self.width == 0.0:
            return np.array([1.0])
        if self.kind == "gaussian":
            sigma = self.width / math.sqrt(2.0)
            half = self.grid_support or max(1, int(math.ceil(8.0 * sigma / step)))
            x = np.arange(-half, half + 1) * step
            k = np.exp(-(x / self.width) ** 2)
        else:
            half = self.grid_support or max(1, int(round(0.5 * self.width / step)))
            k = np.ones(2 * half + 1)
        return k / k.sum()


def tau_effective(tau: float, delta_lambda: float) -> float:
    """Effective filter width after smoothing: tau / (1 + tau dl^2)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if delta_lambda < 0:
        raise ValueError("delta_lambda must be >= 0")
    return tau / (1.0 + tau * delta_lambda ** 2)


def delta_lambda_for(tau: float, tau_eff_target: float) -> float:
    """Window width mapping tau down to tau_eff_target (inverse of
    tau_effective); requires tau_eff_target < tau."""
    if not 0 < tau_eff_target < tau:
        raise ValueError("need 0 < tau_eff_target < tau")
    return math.sqrt(1.0 / tau_eff_target - 1.0 / tau)


class CoarseGrainPlan(NamedTuple):
    tau_eff_target: float
    delta_lambda: float
    noop: bool


def coarse_grain_to_gap(tau: float, delta_j: float, K: int) -> CoarseGrainPlan:
    """Smoothing width matching the kernel to a target gap under shot budget K.

    Saturating the shot-budget bound sets alpha = ln K and
    tau_eff = alpha / delta_j^2.  When tau is already at or below the target
    the plan is a flagged no-op.
    """
    if delta_j <= 0:
        raise ValueError("delta_j must be positive")
    if K < 2:
        raise ValueError("K must be >= 2")
    if tau <= 0:
        raise ValueError("tau must be positive")
    alpha = math.log(K)
    target = alpha / delta_j ** 2
    if tau <= target:
        return CoarseGrainPlan(tau_eff_target=target, delta_lambda=0.0, noop=True)
    return CoarseGrainPlan(target, delta_lambda_for(tau, target), False)


def bias_bound(tau_eff: float, delta: float) -> float:
    """Gaussian weight on the far side of a gap: exp(-tau_eff delta^2)."""
    if tau_eff <= 0 or delta <= 0:
        raise ValueError("tau_eff and delta must be positive")
    return math.exp(-tau_eff * delta * delta)


def convolve(curve: StaircaseCurve, window: SmoothingWindow,
             renormalize: bool | None = None) -> StaircaseCurve:
    """Smooth the N and Z channels, then retake the ratio.

    Requires a uniform lambda grid wider than the window support.  Edges are
    handled by domain extension (edge-value padding) and the edge-affected
    points are flagged, as are points within one support of flagged inputs.

    ``renormalize`` defaults to True for Gaussian windows on curves with a
    known tau > 0; it multiplies N and Z by sqrt(1 + tau dl^2), expressing
    them in the tau_eff filter normalization (H is unchanged).  Pass False
    for the plain unit-area convolution, which leaves constants untouched.
    """
    if not curve.has_uniform_grid():
        raise ValueError("convolve requires a uniform lambda grid")
    step = curve.grid_step
    kern = window.kernel(step) if len(curve.lambdas) > 1 else np.array([1.0])
    half = (len(kern) - 1) // 2
    if 2 * half + 1 > len(curve.lambdas):
        raise ValueError("window support exceeds the lambda grid span")
    if renormalize is None:
        renormalize = window.kind == "gaussian" and curve.tau > 0
    scale = 1.0
    tau_eff = curve.tau
    tau_eff_meta = math.nan  # the tau_eff identity is exact for Gaussian windows only
    if curve.tau > 0 and window.kind == "gaussian":
        tau_eff = tau_effective(curve.tau, window.width)
        tau_eff_meta = tau_eff
    if renormalize:
        if window.kind != "gaussian":
            raise ValueError("renormalization is defined for Gaussian windows only")
        scale = math.sqrt(1.0 + curve.tau * window.width ** 2)

    def smooth(vals: np.ndarray) -> np.ndarray:
        padded = np.pad(vals, half, mode="edge")
        return np.convolve(padded, kern, mode="valid")

    ns = smooth(curve.N_vals) * scale
    zs = smooth(curve.Z_vals) * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        hs = np.where(zs != 0.0, ns / np.where(zs == 0.0, 1.0, zs), np.nan)
        log_z = np.where(zs != 0.0, np.log(np.abs(zs)), np.nan)
    flagged = curve.flagged.copy()
    if half > 0:
        # dilate input flags by the support and flag the edge regions
        kern01 = np.ones(2 * half + 1)
        flagged = np.convolve(np.pad(flagged.astype(float), half, mode="constant"),
                              kern01, mode="valid") > 0
        flagged[:half] = True
        flagged[-half:] = True
    meta = dict(curve.meta)
    meta.update({
        "tau_eff": tau_eff_meta,
        "delta_lambda": window.width,
        "window": window.kind,
        "renormalized": bool(renormalize),
        "source_provenance": curve.provenance,
        "source_tau": curve.tau,
    })
    return StaircaseCurve(
        lambdas=curve.lambdas.copy(), N_vals=ns, Z_vals=zs, H_vals=hs,
        log_z=log_z, provenance="smoothed", tau=tau_eff, flagged=flagged,
        meta=meta,
    )
