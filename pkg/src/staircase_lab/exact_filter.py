"""Exact Gaussian-filtered staircase and partition function.

For a spectrum {E_j} with weights u_j (see SpectrumModel.spectral_weights)
and a probe grid in lambda,

    Z(lambda) = sum_j u_j exp(-tau (E_j - lambda)^2)
    N(lambda) = sum_j E_j u_j exp(-tau (E_j - lambda)^2)
    H(lambda) = N / Z

All Gaussian sums are evaluated with the per-lambda max exponent factored
out, so Z is never computed as a sum of underflowed terms and log Z is always
available; H is the shifted weighted mean and never overflows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import SpectrumModel

CSV_COLUMNS = ("lambda", "N", "Z", "logZ", "H", "provenance", "tau")

PROVENANCES = ("exact", "quadrature", "binomial", "sampled", "smoothed")


@dataclass
class StaircaseCurve:
    """One staircase on a lambda grid: numerator, denominator, ratio.

    ``flagged`` marks points considered unreliable by the producer (truncation
    floor, smoothing edge effects).  ``log_z`` is ln|Z| (NaN where Z == 0);
    for exact curves Z > 0 and log_z is exact even where Z underflows.
    ``meta`` carries producer extras (e.g. tau_eff / delta_lambda after
    smoothing).
    """

    lambdas: np.ndarray
    N_vals: np.ndarray
    Z_vals: np.ndarray
    H_vals: np.ndarray
    log_z: np.ndarray
    provenance: str
    tau: float
    flagged: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.N_vals = np.asarray(self.N_vals, dtype=float)
        self.Z_vals = np.asarray(self.Z_vals, dtype=float)
        self.H_vals = np.asarray(self.H_vals, dtype=float)
        self.log_z = np.asarray(self.log_z, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(len(self.lambdas), dtype=bool)
        self.flagged = np.asarray(self.flagged, dtype=bool)
        n = len(self.lambdas)
        for name in ("N_vals", "Z_vals", "H_vals", "log_z", "flagged"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch with lambda grid")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def grid_step(self) -> float:
        if len(self.lambdas) < 2:
            return 0.0
        return float(self.lambdas[1] - self.lambdas[0])

    def has_uniform_grid(self, rtol: float = 1e-9) -> bool:
        d = np.diff(self.lambdas)
        return len(d) == 0 or np.allclose(d, d[0], rtol=rtol, atol=0.0)


def default_lambda_grid(spec: SpectrumModel, tau: float, points: int = 2001) -> np.ndarray:
    """Uniform grid over [E_min - 3/sqrt(tau), E_max + 3/sqrt(tau)].

    tau = 0 has no filter scale; the pad falls back to the spectral span
    (or 1 for a single level).
    """
    span = spec.e_max - spec.e_min
    pad = 3.0 / math.sqrt(tau) if tau > 0 else max(span, 1.0)
    return np.linspace(spec.e_min - pad, spec.e_max + pad, points)


def _shifted_weights(spec: SpectrumModel, tau: float, lambdas: np.ndarray):
    """Stabilized Gaussian weights: returns (w_shifted, shift) with
    w_shifted[i, j] = u_j exp(-tau (E_j - lam_i)^2 - shift_i), max entry 1."""
    lam = np.asarray(lambdas, dtype=float)
    u = spec.spectral_weights()
    with np.errstate(over="ignore"):
        expo = -tau * (spec.levels[None, :] - lam[:, None]) ** 2
    # keep exponents finite so the max-shift stays well defined even for
    # absurdly distant probes; clipped levels all underflow identically
    expo = np.maximum(expo, -1e306)
    shift = expo.max(axis=1, keepdims=True)
    return u[None, :] * np.exp(expo - shift), shift[:, 0]


def staircase_exact(spec: SpectrumModel, tau: float, lambdas: np.ndarray) -> StaircaseCurve:
    """Ground-truth staircase H(lambda); tau = 0 gives the plain weighted mean."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    w, shift = _shifted_weights(spec, tau, lambdas)
    zs = w.sum(axis=1)
    ns = (w * spec.levels[None, :]).sum(axis=1)
    log_z = np.log(zs) + shift
    return StaircaseCurve(
        lambdas=lambdas,
        N_vals=ns * np.exp(shift),
        Z_vals=zs * np.exp(shift),
        H_vals=ns / zs,
        log_z=log_z,
        provenance="exact",
        tau=tau,
    )


def partition_exact(spec: SpectrumModel, tau: float, lambdas: np.ndarray):
    """Filtered partition function; returns (Z values, log Z values).

    The log values are exact even where the linear values underflow.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    w, shift = _shifted_weights(spec, tau, lambdas)
    zs = w.sum(axis=1)
    return zs * np.exp(shift), np.log(zs) + shift


def logistic_two_level(e_lo: float, e_hi: float, ratio: float, tau: float,
                       lambdas: np.ndarray) -> np.ndarray:
    """Closed-form two-level staircase between adjacent levels e_lo < e_hi.

    With half-gap d = (e_hi - e_lo)/2, midpoint c, and weight ratio
    R = u_lo/u_hi, the exact two-level ratio is the logistic

        H(lambda) = e_lo + 2 d / (1 + R exp(-4 tau d (lambda - c)))

    rising from e_lo (lambda << c) to e_hi (lambda >> c).
    """
    if not e_lo < e_hi:
        raise ValueError("need e_lo < e_hi")
    if ratio <= 0:
        raise ValueError("weight ratio must be positive")
    lam = np.asarray(lambdas, dtype=float)
    d = 0.5 * (e_hi - e_lo)
    c = 0.5 * (e_hi + e_lo)
    # log-domain logistic; exponent can be +-huge
    t = np.clip(-4.0 * tau * d * (lam - c) + math.log(ratio), -700, 700)
    return e_lo + 2.0 * d / (1.0 + np.exp(t))


def accuracy_bound(delta: float, tau: float) -> float:
    """Plateau accuracy bound d * exp(-tau d^2) for half-gap d = delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return delta * math.exp(-tau * delta * delta)


class TauForAccuracy(NamedTuple):
    tau: float
    vacuous: bool


def tau_for_accuracy(delta: float, eps: float) -> TauForAccuracy:
    """Smallest tau with accuracy_bound(delta, tau) <= eps.

    When eps >= delta the bound already holds at tau = 0 and the requirement
    is vacuous; the result is flagged.
    """
    if delta <= 0 or eps <= 0:
        raise ValueError("delta and eps must be positive")
    if eps >= delta:
        return TauForAccuracy(0.0, True)
    return TauForAccuracy(math.log(delta / eps) / (delta * delta), False)


def write_staircase_csv(path, curves) -> None:
    """Shared staircase CSV schema: lambda, N, Z, logZ, H, provenance, tau.

    Accepts one curve or a sequence (e.g. a tau sweep); rows are stacked in
    the given order.  Floats are written with repr for byte-stable output.
    """
    if isinstance(curves, StaircaseCurve):
        curves = [curves]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for c in curves:
            for i in range(len(c.lambdas)):
                wr.writerow([
                    repr(float(c.lambdas[i])),
                    repr(float(c.N_vals[i])),
                    repr(float(c.Z_vals[i])),
                    repr(float(c.log_z[i])),
                    repr(float(c.H_vals[i])),
                    c.provenance,
                    repr(float(c.tau)),
                ])


def read_staircase_csv(path) -> list[StaircaseCurve]:
    """Inverse of write_staircase_csv; one curve per (provenance, tau) run."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected staircase CSV columns {header}")
        rows = [(float(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]),
                 r[5], float(r[6])) for r in rd]
    curves = []
    i = 0
    while i < len(rows):
        j = i
        key = (rows[i][5], rows[i][6])
        while j < len(rows) and (rows[j][5], rows[j][6]) == key:
            j += 1
        block = rows[i:j]
        curves.append(StaircaseCurve(
            lambdas=[r[0] for r in block],
            N_vals=[r[1] for r in block],
            Z_vals=[r[2] for r in block],
            log_z=[r[3] for r in block],
            H_vals=[r[4] for r in block],
            provenance=key[0],
            tau=key[1],
        ))
        i = j
    return curves
