"""Unitary-overlap estimators for the Gaussian-filtered staircase.

The filter is rewritten through the Gaussian integral

    exp(-tau (H - lambda)^2)
        = (1/sqrt(pi)) Int exp(-x^2) exp(-2i sqrt(tau) x (H - lambda)) dx

and the integral replaced by a Gauss-Hermite rule with nodes x_k and
normalized weights w_k (the 1/sqrt(pi) prefactor is absorbed so that
sum w_k = 1, making Z directly comparable to the exact partition function).
With node times tau_k = sqrt(tau) x_k and per-node overlaps

    z_k = <e^{-2i tau_k H}>,   n_k = <H e^{-2i tau_k H}>,

the estimators are

    Z(lambda) = sum_k w_k Re[e^{2i lambda tau_k} z_k]
    N(lambda) = sum_k w_k Re[e^{2i lambda tau_k} n_k],   H = N / Z.

Overlaps are independent of lambda, so one overlap set serves any number of
probe grids by classical reweighting.

A binomial (random-walk) discretization of the same filter is provided for
cross-checks: with tau = m dtau, per-step unitary U = exp(-i sqrt(dtau/2) H)
and t_j = 2 j sqrt(dtau/2), the binomial weights 2^-m C(m, m/2+j) over
j = -m/2..m/2 approximate the Gaussian to O(m dtau^2).  Note the phase in the
reweighting is exp(2i lambda t_j) with the same t_j as in the overlap span
(2 t_j of evolution separate the two states), mirroring the quadrature form;
this is the convention that converges to the exact filter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

from .exact_filter import StaircaseCurve
from .model import SpectrumModel

MAX_DEGREE = 500

# Multiplier on the discarded-weight mass setting the default stability floor
# for |Z(lambda)|.
Z_FLOOR_FACTOR = 10.0


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes and normalized weights with a truncation.

    ``retained`` lists node indices sorted by descending weight, symmetric
    +-x pairs kept adjacent; ``tau`` is the filter width the rule is bound to
    (None until attached).  ``log_weights`` stays accurate deep in the tail
    where the linear weights underflow.
    """

    degree_m: int
    nodes: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    retained: np.ndarray
    tau: float | None = None

    @property
    def mbar(self) -> int:
        return len(self.retained)

    @property
    def retained_nodes(self) -> np.ndarray:
        return self.nodes[self.retained]

    @property
    def retained_weights(self) -> np.ndarray:
        return self.weights[self.retained]

    @property
    def discarded_weight(self) -> float:
        """Total weight of pruned nodes (the residual threshold scale)."""
        keep = np.zeros(self.degree_m, dtype=bool)
        keep[self.retained] = True
        return float(self.weights[~keep].sum())

    @property
    def log_discarded_weight(self) -> float:
        """ln of the discarded-weight sum, exact even where it underflows."""
        keep = np.zeros(self.degree_m, dtype=bool)
        keep[self.retained] = True
        lw = self.log_weights[~keep]
        if len(lw) == 0:
            return -math.inf
        top = lw.max()
        return float(top + np.log(np.exp(lw - top).sum()))

    @property
    def leading_discarded_weight(self) -> float:
        keep = np.zeros(self.degree_m, dtype=bool)
        keep[self.retained] = True
        disc = self.weights[~keep]
        return float(disc.max()) if len(disc) else 0.0

    @property
    def leading_discarded_node(self) -> float:
        """Smallest |x_k| among pruned nodes (sets the residual frequency)."""
        keep = np.zeros(self.degree_m, dtype=bool)
        keep[self.retained] = True
        disc = np.abs(self.nodes[~keep])
        return float(disc.min()) if len(disc) else math.inf

    def node_times(self) -> np.ndarray:
        if self.tau is None:
            raise ValueError("rule has no tau attached; use with_tau")
        return math.sqrt(self.tau) * self.retained_nodes

    def with_tau(self, tau: float) -> "QuadratureRule":
        if tau < 0:
            raise ValueError("tau must be >= 0")
        return replace(self, tau=float(tau))


def _pair_order(nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Node indices sorted by descending weight with +-x pairs adjacent."""
    m = len(nodes)
    order = []
    half = np.argsort(np.abs(nodes), kind="stable")
    seen = np.zeros(m, dtype=bool)
    groups = []
    for i in half:
        if seen[i]:
            continue
        j = m - 1 - i  # ascending symmetric layout: nodes[i] = -nodes[m-1-i]
        if j != i and not seen[j] and abs(nodes[i] + nodes[j]) <= 1e-12 * (abs(nodes[i]) + 1):
            groups.append(((i, j), max(weights[i], weights[j]), abs(nodes[i])))
            seen[i] = seen[j] = True
        else:
            groups.append(((i,), weights[i], abs(nodes[i])))
            seen[i] = True
    # rank by the members' individual weight (ties broken towards the center)
    groups.sort(key=lambda g: (-g[1], g[2]))
    for idx, _, _ in groups:
        order.extend(idx)
    return np.array(order, dtype=np.int64)


def _log_hermite_prev_sq(m: int, nodes: np.ndarray) -> np.ndarray:
    """2 ln |H_{m-1}(x)| at the degree-m nodes, by a rescaled recurrence.

    Forward recurrence H_{n+1} = 2x H_n - 2n H_{n-1} with periodic rescaling;
    stable here because the quadrature weight only needs H_{m-1} at the roots
    of H_m, where H_{m-1} is away from its own zeros.
    """
    x = np.asarray(nodes, dtype=float)
    p_prev = np.zeros_like(x)
    p = np.ones_like(x)
    expo = np.zeros_like(x)
    for n in range(m - 1):
        p_next = 2.0 * x * p - 2.0 * n * p_prev
        p_prev, p = p, p_next
        big = np.abs(p) > 1e120
        if big.any():
            scale = np.where(big, np.abs(p), 1.0)
            expo += np.log(scale)
            p = p / scale
            p_prev = p_prev / scale
    return 2.0 * (expo + np.log(np.abs(p)))


def gauss_hermite_rule(m: int, tau: float | None = None) -> QuadratureRule:
    """Degree-m Gauss-Hermite rule.

    Nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix;
    normalized weights come from the closed form

        w_k = 2^(m-1) m! / (m^2 H_{m-1}(x_k)^2)

    evaluated in log space, so tail weights stay relatively accurate down to
    (and beyond) the underflow threshold, where the linear values become 0.
    Sum w_k = 1 (the Gaussian-integral prefactor 1/sqrt(pi) is absorbed).
    """
    if not 1 <= m <= MAX_DEGREE:
        raise ValueError(f"degree m must be in [1, {MAX_DEGREE}], got {m}")
    if m == 1:
        nodes = np.array([0.0])
        log_weights = np.array([0.0])
    else:
        off = np.sqrt(np.arange(1, m) / 2.0)
        nodes = eigh_tridiagonal(np.zeros(m), off, eigvals_only=True)
        # exact antisymmetry of the node set
        nodes = 0.5 * (nodes - nodes[::-1])
        log_c = (m - 1) * math.log(2.0) + gammaln(m + 1) - 2.0 * math.log(m)
        log_weights = log_c - _log_hermite_prev_sq(m, nodes)
        log_weights = 0.5 * (log_weights + log_weights[::-1])
    with np.errstate(under="ignore"):
        weights = np.exp(log_weights)
    rule = QuadratureRule(
        degree_m=m,
        nodes=nodes,
        weights=weights,
        log_weights=log_weights,
        retained=np.empty(0, dtype=np.int64),
        tau=tau,
    )
    return replace(rule, retained=_pair_order(nodes, weights))


def truncate_rule(rule: QuadratureRule, mbar: int | None = None,
                  epsilon: float | None = None) -> QuadratureRule:
    """Keep the mbar largest-weight nodes (pairs together), or with
    ``epsilon`` the fewest nodes whose discarded weight stays below it.

    A requested mbar that would split a symmetric pair is rounded up.
    """
    if (mbar is None) == (epsilon is None):
        raise ValueError("pass exactly one of mbar, epsilon")
    full = _pair_order(rule.nodes, rule.weights)
    w = rule.weights[full]
    if epsilon is not None:
        if not 0 < epsilon <= 1:
            raise ValueError("epsilon must be in (0, 1]")
        csum = np.cumsum(w)
        total = csum[-1]
        # fewest leading nodes with discarded = total - kept strictly < epsilon
        n = int(np.searchsorted(csum, total - epsilon, side="right")) + 1
        n = min(n, rule.degree_m)
    else:
        if not 1 <= mbar <= rule.degree_m:
            raise ValueError(f"mbar must be in [1, {rule.degree_m}]")
        n = mbar
    # never split a pair: grow until the next node is not this node's mirror
    while n < rule.degree_m and abs(rule.nodes[full[n]] + rule.nodes[full[n - 1]]) \
            <= 1e-12 * (abs(rule.nodes[full[n]]) + 1):
        n += 1
    return replace(rule, retained=full[:n])


class MbarEstimate(NamedTuple):
    mbar: int
    degree_m: int


def mbar_for_precision(s: float, epsilon: float, kappa: float = 2.0) -> MbarEstimate:
    """Retained-node count for scaled filter strength s = tau ||H||^2.

    Balancing the degree error (s/m)^m at m = kappa s (i.e. exp(-gamma s),
    gamma = kappa ln kappa) against the truncation law exp(-d mbar) with
    d = 2 gives mbar = (gamma/d) s, floored at the epsilon requirement
    mbar = -ln(epsilon)/d.  The recommended degree is m = ceil(kappa s).
    """
    if s <= 0:
        raise ValueError("s must be positive")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must be in (0, 1)")
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    d = 2.0
    gamma = kappa * math.log(kappa)
    mbar = max(math.ceil(gamma / d * s), math.ceil(-math.log(epsilon) / d))
    return MbarEstimate(mbar=mbar, degree_m=math.ceil(kappa * s))


@dataclass
class OverlapSet:
    """Per-node overlaps for the retained nodes of one rule.

    z[k] = <e^{-2i tau_k H}> and n[k] = <H e^{-2i tau_k H}>, with the
    expectation over psi0 populations (state mode) or the trace (trace mode).
    ``total_weight`` is sum_j u_j (D in trace mode, 1 in state mode).
    """

    nodes: np.ndarray
    weights: np.ndarray
    node_times: np.ndarray
    z: np.ndarray
    n: np.ndarray
    mode: str
    source: str
    tau: float
    total_weight: float
    discarded_weight: float = 0.0

    def __post_init__(self) -> None:
        if not (len(self.nodes) == len(self.weights) == len(self.node_times)
                == len(self.z) == len(self.n)):
            raise ValueError("overlap arrays must be aligned")
        if self.source not in ("exact-eigenbasis", "sampled"):
            raise ValueError(f"unknown source {self.source!r}")


def compute_overlaps(spec: SpectrumModel, rule: QuadratureRule) -> OverlapSet:
    """Exact eigenbasis overlaps z_k, n_k at the rule's retained node times."""
    tk = rule.node_times()
    u = spec.spectral_weights()
    phases = np.exp(-2j * np.outer(tk, spec.levels))
    z = phases @ u
    n = phases @ (u * spec.levels)
    return OverlapSet(
        nodes=rule.retained_nodes.copy(),
        weights=rule.retained_weights.copy(),
        node_times=tk,
        z=z,
        n=n,
        mode=spec.mode,
        source="exact-eigenbasis",
        tau=float(rule.tau),
        total_weight=spec.total_weight,
        discarded_weight=rule.discarded_weight,
    )


def _reweight(overlaps: OverlapSet, lambdas: np.ndarray):
    lam = np.asarray(lambdas, dtype=float)
    # per-node Re[] keeps both channels structurally real
    phase = np.exp(2j * np.outer(lam, overlaps.node_times))
    zmat = np.real(phase * overlaps.z[None, :])
    nmat = np.real(phase * overlaps.n[None, :])
    return zmat @ overlaps.weights, nmat @ overlaps.weights


def staircase_quadrature(overlaps: OverlapSet, rule: QuadratureRule,
                         lambdas: np.ndarray, z_floor: float | None = None) -> StaircaseCurve:
    """Truncated-quadrature staircase; lambda enters only through phases.

    Points with |Z| below the stability floor are flagged, not dropped; the
    default floor is Z_FLOOR_FACTOR * (discarded weight) * (total weight),
    zero for an untruncated rule.  Z == 0 exactly yields a flagged NaN.
    """
    zs, ns = _reweight(overlaps, lambdas)
    if z_floor is None:
        z_floor = Z_FLOOR_FACTOR * overlaps.discarded_weight * overlaps.total_weight
    flagged = np.abs(zs) < z_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        hs = np.where(zs != 0.0, ns / np.where(zs == 0.0, 1.0, zs), np.nan)
        log_z = np.where(zs != 0.0, np.log(np.abs(zs)), np.nan)
    flagged |= zs == 0.0
    return StaircaseCurve(
        lambdas=lambdas, N_vals=ns, Z_vals=zs, H_vals=hs, log_z=log_z,
        provenance="quadrature", tau=overlaps.tau, flagged=flagged,
        meta={"mbar": rule.mbar, "degree_m": rule.degree_m, "z_floor": z_floor},
    )


def staircase_from_overlaps(overlaps: OverlapSet, lambdas: np.ndarray,
                            z_floor: float | None = None,
                            provenance: str = "sampled") -> StaircaseCurve:
    """Reweight an overlap set (e.g. sampled) onto a probe grid."""
    zs, ns = _reweight(overlaps, lambdas)
    if z_floor is None:
        z_floor = Z_FLOOR_FACTOR * overlaps.discarded_weight * overlaps.total_weight
    flagged = np.abs(zs) < z_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        hs = np.where(zs != 0.0, ns / np.where(zs == 0.0, 1.0, zs), np.nan)
        log_z = np.where(zs != 0.0, np.log(np.abs(zs)), np.nan)
    flagged |= zs == 0.0
    return StaircaseCurve(
        lambdas=lambdas, N_vals=ns, Z_vals=zs, H_vals=hs, log_z=log_z,
        provenance=provenance, tau=overlaps.tau, flagged=flagged,
        meta={"z_floor": z_floor},
    )


def staircase_binomial(spec: SpectrumModel, tau: float, dtau: float,
                       lambdas: np.ndarray) -> StaircaseCurve:
    """Random-walk (binomial) staircase with m = tau/dtau steps, m even.

    Binomial coefficients are accumulated in log space; the j = 0 term enters
    once (the conjugate-pair symmetrization would otherwise double it).
    """
    if tau <= 0 or dtau <= 0:
        raise ValueError("tau and dtau must be positive")
    m_float = tau / dtau
    m = int(round(m_float))
    if abs(m_float - m) > 1e-9 * max(1, m) or m < 2 or m % 2:
        raise ValueError(f"tau/dtau must be a positive even integer, got {m_float}")
    js = np.arange(0, m // 2 + 1)
    logb = (gammaln(m + 1) - gammaln(m / 2 + js + 1) - gammaln(m / 2 - js + 1)
            - m * math.log(2.0))
    b = np.exp(logb)
    wts = np.where(js == 0, b, 2.0 * b)
    t_j = 2.0 * js * math.sqrt(dtau / 2.0)
    u = spec.spectral_weights()
    phases = np.exp(-2j * np.outer(t_j, spec.levels))
    z = phases @ u
    n = phases @ (u * spec.levels)
    lam = np.asarray(lambdas, dtype=float)
    phase = np.exp(2j * np.outer(lam, t_j))
    zs = np.real(phase * z[None, :]) @ wts
    ns = np.real(phase * n[None, :]) @ wts
    flagged = zs == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        hs = np.where(zs != 0.0, ns / np.where(zs == 0.0, 1.0, zs), np.nan)
        log_z = np.where(zs != 0.0, np.log(np.abs(zs)), np.nan)
    return StaircaseCurve(
        lambdas=lam, N_vals=ns, Z_vals=zs, H_vals=hs, log_z=log_z,
        provenance="binomial", tau=tau, flagged=flagged,
        meta={"dtau": dtau, "m_steps": m},
    )


class QuadratureErrorBound(NamedTuple):
    """Finite-m and asymptotic operator-norm bounds on the quadrature error,
    with log values for regimes where the linear value over/underflows."""

    bound: float
    log_bound: float
    asymptotic: float
    log_asymptotic: float


def quadrature_error_bound(tau: float, norm_h: float, m: int) -> QuadratureErrorBound:
    """Error of the degree-m rule applied to exp(-tau A^2), ||A|| <= norm_h.

    Finite-m:  (m+1)^(m+1/2) / (2m+1)^(2m+1/2) * e^(1/(12m+12))
               * (2 tau e)^m * norm_h^(2m)
    Asymptotic: (tau e / (2m))^m * norm_h^(2m)

    This is an exact-arithmetic statement; empirical comparisons must allow
    a floating-point noise floor.  Probing at lambda shifts the operator to
    H - lambda, so the relevant norm argument is ||H - lambda||.
    """
    if tau < 0 or norm_h < 0:
        raise ValueError("tau and norm_h must be >= 0")
    if m < 1:
        raise ValueError("m must be >= 1")
    if tau == 0 or norm_h == 0:
        return QuadratureErrorBound(0.0, -math.inf, 0.0, -math.inf)
    lb = ((m + 0.5) * math.log(m + 1) - (2 * m + 0.5) * math.log(2 * m + 1)
          + 1.0 / (12 * m + 12) + m * math.log(2 * tau * math.e)
          + 2 * m * math.log(norm_h))
    la = m * math.log(tau * math.e / (2 * m)) + 2 * m * math.log(norm_h)

    def safe_exp(x: float) -> float:
        return math.exp(x) if x < 700 else math.inf

    return QuadratureErrorBound(safe_exp(lb), lb, safe_exp(la), la)


OVERLAP_CSV_COLUMNS = ("k", "x_k", "w_k", "tau_k", "Re_z", "Im_z", "Re_n", "Im_n")


def write_overlap_csv(path, overlaps: OverlapSet) -> None:
    """Dump retained-node overlaps; enough to rescan any lambda grid later."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(OVERLAP_CSV_COLUMNS)
        for k in range(len(overlaps.nodes)):
            wr.writerow([
                k,
                repr(float(overlaps.nodes[k])),
                repr(float(overlaps.weights[k])),
                repr(float(overlaps.node_times[k])),
                repr(float(overlaps.z[k].real)),
                repr(float(overlaps.z[k].imag)),
                repr(float(overlaps.n[k].real)),
                repr(float(overlaps.n[k].imag)),
            ])


def read_overlap_csv(path, tau: float, mode: str = "trace",
                     total_weight: float = 1.0,
                     discarded_weight: float = 0.0) -> OverlapSet:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != OVERLAP_CSV_COLUMNS:
            raise ValueError(f"unexpected overlap CSV columns {header}")
        rows = [[float(v) for v in r[1:]] for r in rd]
    arr = np.array(rows)
    return OverlapSet(
        nodes=arr[:, 0], weights=arr[:, 1], node_times=arr[:, 2],
        z=arr[:, 3] + 1j * arr[:, 4], n=arr[:, 5] + 1j * arr[:, 6],
        mode=mode, source="exact-eigenbasis", tau=tau,
        total_weight=total_weight, discarded_weight=discarded_weight,
    )
