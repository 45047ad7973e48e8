"""Stochastic trace estimation with Haar-random states.

A Haar state's coefficients in any orthonormal basis are i.i.d. standard
complex Gaussians normalized to unit length, so states are drawn directly in
the eigenbasis; only the spectrum is needed.  For any operator O diagonal in
that basis,

    E[<phi|O|phi>]   = Tr O / D
    Var[<phi|O|phi>] = (Tr(O+O) - |Tr O|^2 / D) / (D (D+1))

and for two operators estimated on the *same* batch of states the cross
covariance is (Tr(A+ B) - Tr A+ Tr B / D) / (K D (D+1)).  Sharing the batch
between the staircase numerator and denominator makes their fluctuations
positively correlated and cancels the leading 1/D suppression in the ratio.

Determinism: state i of a batch is drawn from a Philox stream keyed by
(seed, i), so batches are reproducible bit-for-bit regardless of evaluation
order, and a batch of size K is a prefix of the batch of size K' > K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .itqde import OverlapSet, QuadratureRule, Z_FLOOR_FACTOR
from .model import SpectrumModel

_MASK64 = (1 << 64) - 1

# Predicted relative error on Z above which the ratio linearization is
# considered unreliable and the prediction flagged.
PERTURBATIVE_REL_Z = 1.0 / 3.0


def _substream(seed: int, index: int) -> np.random.Generator:
    key = ((int(seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def haar_state(dim: int, seed: int, index: int = 0) -> np.ndarray:
    """One Haar-random state from the (seed, index) substream."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = _substream(seed, index)
    raw = rng.standard_normal(2 * dim)
    vec = raw[0::2] + 1j * raw[1::2]
    return vec / np.linalg.norm(vec)


def haar_batch(dim: int, count: int, seed: int) -> np.ndarray:
    """(count, dim) matrix whose rows are haar_state(dim, seed, i)."""
    out = np.empty((count, dim), dtype=complex)
    for i in range(count):
        rng = _substream(seed, i)
        raw = rng.standard_normal(2 * dim)
        vec = raw[0::2] + 1j * raw[1::2]
        out[i] = vec / np.linalg.norm(vec)
    return out


@dataclass
class SampleBatch:
    """Per-state, per-node raw expectations from one shared Haar batch.

    raw_z[i, k] = <phi_i| e^{-2i tau_k H} |phi_i> and raw_n likewise with H
    inserted; multiplying batch means by D estimates the traces.
    """

    K: int
    seed: int
    node_times: np.ndarray
    raw_z: np.ndarray
    raw_n: np.ndarray
    dim: int

    def trace_estimates(self):
        """(z_hat, n_hat): D-rescaled batch means per node."""
        return (self.dim * self.raw_z.mean(axis=0),
                self.dim * self.raw_n.mean(axis=0))


def sampled_overlaps(spec: SpectrumModel, rule: QuadratureRule, K: int,
                     seed: int) -> tuple[OverlapSet, SampleBatch]:
    """Estimate trace-mode overlaps z_k = Tr e^{-2i tau_k H} (and n_k) from K
    Haar states, one shared batch for all nodes and both channels."""
    if K < 2:
        raise ValueError("K must be >= 2 (variance undefined below)")
    tk = rule.node_times()
    D = spec.dim
    # per-state populations per distinct level
    levels = spec.levels
    degs = spec.degeneracies
    starts = np.concatenate(([0], np.cumsum(degs)[:-1]))
    coeffs = haar_batch(D, K, seed)
    pops = np.add.reduceat(np.abs(coeffs) ** 2, starts, axis=1)
    phases = np.exp(-2j * np.outer(tk, levels))  # (nodes, levels)
    raw_z = pops @ phases.T
    raw_n = pops @ (phases * levels[None, :]).T
    batch = SampleBatch(K=K, seed=seed, node_times=tk, raw_z=raw_z, raw_n=raw_n, dim=D)
    z_hat, n_hat = batch.trace_estimates()
    ov = OverlapSet(
        nodes=rule.retained_nodes.copy(),
        weights=rule.retained_weights.copy(),
        node_times=tk,
        z=z_hat,
        n=n_hat,
        mode="trace",
        source="sampled",
        tau=float(rule.tau),
        total_weight=float(D),
        discarded_weight=rule.discarded_weight,
    )
    return ov, batch


@dataclass
class HaarMoments:
    mean: complex
    variance: float
    covariance: complex | None = None


def haar_moments(values, degeneracies=None, second=None, K: int = 1) -> HaarMoments:
    """Closed-form Haar moments for operators diagonal in a common basis.

    ``values`` are the eigenvalues of O (optionally per distinct level with
    ``degeneracies``); ``second`` (same layout) gives the shared-batch cross
    covariance E[conj(dA) dB] of the two batch means.  ``K`` divides variance
    and covariance (a batch of K i.i.d. states).
    """
    a = np.asarray(values, dtype=complex)
    g = np.ones(len(a)) if degeneracies is None else np.asarray(degeneracies, dtype=float)
    D = g.sum()
    tr_a = (g * a).sum()
    mean = tr_a / D
    var = float(((g * np.abs(a) ** 2).sum() - abs(tr_a) ** 2 / D).real) / (D * (D + 1)) / K
    cov = None
    if second is not None:
        b = np.asarray(second, dtype=complex)
        tr_b = (g * b).sum()
        cov = ((g * np.conj(a) * b).sum() - np.conj(tr_a) * tr_b / D) / (D * (D + 1)) / K
    return HaarMoments(mean=complex(mean), variance=var, covariance=cov)


@dataclass
class EstimatorStats:
    """Per-lambda predicted statistics of the shared-batch ratio estimator.

    Trace-scale means and (co)variances of the D-rescaled batch means, the
    relative-error prefactor c(lambda), the filter purity
    Q(lambda) = Tr(Z^2)/(Tr Z)^2 in [1/D, 1], the predicted relative standard
    error sqrt(D/(D+1)) c / sqrt(K), and the Cauchy-Schwarz bound on c.
    """

    lambdas: np.ndarray
    mean_N: np.ndarray
    mean_Z: np.ndarray
    var_N: np.ndarray
    var_Z: np.ndarray
    cov_NZ: np.ndarray
    c_lambda: np.ndarray
    q_lambda: np.ndarray
    rel_stderr_pred: np.ndarray
    c_bound: np.ndarray
    flagged: np.ndarray
    K: int
    tau: float


def _kernel(spec: SpectrumModel, rule: QuadratureRule | None, tau: float,
            lambdas: np.ndarray, kind: str) -> np.ndarray:
    """Per (lambda, level) filter kernel zeta(E_j; lambda)."""
    lam = np.asarray(lambdas, dtype=float)
    if kind == "gaussian":
        return np.exp(-tau * (spec.levels[None, :] - lam[:, None]) ** 2)
    if kind == "quadrature":
        if rule is None:
            raise ValueError("quadrature kernel needs a rule")
        tk = rule.node_times()
        w = rule.retained_weights
        # sum_k w_k cos(2 tau_k (lambda - E))
        ang = 2.0 * (lam[:, None, None] - spec.levels[None, :, None]) * tk[None, None, :]
        return (np.cos(ang) * w[None, None, :]).sum(axis=2)
    raise ValueError(f"unknown kernel {kind!r}")


def ratio_error_prediction(spec: SpectrumModel, rule: QuadratureRule,
                           lambdas: np.ndarray, K: int = 1,
                           kernel: str = "gaussian") -> EstimatorStats:
    """Exact-trace predictions for the sampled ratio H = N/Z at each probe.

    c(lambda)^2 = Tr(N+N)/|Tr N|^2 + Tr(Z+Z)/|Tr Z|^2 - 2 Tr(N+Z)/(Tr N Tr Z)
    evaluated from the spectrum (trace mode).  Predictions are flagged where
    Tr Z falls below the rule's truncation floor or where the predicted
    relative Z error at this K exceeds 1/3 (ratio linearization unreliable).
    """
    if spec.mode != "trace":
        raise ValueError("ratio error prediction is defined for trace-mode spectra")
    tau = float(rule.tau)
    lam = np.asarray(lambdas, dtype=float)
    zeta = _kernel(spec, rule, tau, lam, kernel)
    g = spec.degeneracies.astype(float)
    E = spec.levels
    D = float(spec.dim)
    tr_z = zeta @ g
    tr_zz = (zeta ** 2) @ g
    tr_n = zeta @ (g * E)
    tr_nn = (zeta ** 2) @ (g * E ** 2)
    tr_nz = (zeta ** 2) @ (g * E)
    with np.errstate(divide="ignore", invalid="ignore"):
        c2 = tr_nn / tr_n ** 2 + tr_zz / tr_z ** 2 - 2.0 * tr_nz / (tr_n * tr_z)
        c = np.sqrt(np.clip(c2, 0.0, None))
        q = tr_zz / tr_z ** 2
        h = tr_n / tr_z
        c_bound = np.sqrt(q) * (spec.spectral_norm / np.abs(h) + 1.0)
        var_z = (tr_zz - tr_z ** 2 / D) / (D * (D + 1)) / K * D ** 2
        var_n = (tr_nn - tr_n ** 2 / D) / (D * (D + 1)) / K * D ** 2
        cov_nz = (tr_nz - tr_n * tr_z / D) / (D * (D + 1)) / K * D ** 2
        rel_z = np.sqrt(var_z) / np.abs(tr_z)
    z_floor = Z_FLOOR_FACTOR * rule.discarded_weight * D
    flagged = (np.abs(tr_z) < z_floor) | (rel_z > PERTURBATIVE_REL_Z)
    rel_stderr = math.sqrt(D / (D + 1.0)) * c / math.sqrt(K)
    return EstimatorStats(
        lambdas=lam, mean_N=tr_n, mean_Z=tr_z, var_N=var_n, var_Z=var_z,
        cov_NZ=cov_nz, c_lambda=c, q_lambda=q, rel_stderr_pred=rel_stderr,
        c_bound=c_bound, flagged=flagged, K=K, tau=tau,
    )


def with_measurement_noise(overlaps: OverlapSet, sigma_z: float, sigma_n: float,
                           seed: int) -> OverlapSet:
    """Additive per-overlap estimation noise on an overlap set.

    Models the bounded-outcome floor of any protocol that estimates each
    overlap separately from finite shots: every overlap acquires i.i.d.
    complex Gaussian noise of the given standard deviations (sigma ~ scale /
    sqrt(K)), independent of the overlap's magnitude.  Conjugate node pairs
    receive conjugate noise (one measurement serves both signs) and a node at
    x = 0 receives real noise.  Complements Haar-state trace estimation,
    whose noise is a low-rank reweighting rather than an additive floor.
    """
    if sigma_z < 0 or sigma_n < 0:
        raise ValueError("noise scales must be >= 0")
    rng = _substream(seed, 0)
    n = len(overlaps.nodes)
    dz = np.zeros(n, dtype=complex)
    dn = np.zeros(n, dtype=complex)
    done = np.zeros(n, dtype=bool)
    order = np.argsort(-overlaps.nodes)  # positive nodes first
    for i in order:
        if done[i]:
            continue
        g = rng.standard_normal(4)
        if abs(overlaps.nodes[i]) <= 1e-12:
            dz[i] = sigma_z * g[0]
            dn[i] = sigma_n * g[1]
            done[i] = True
            continue
        j = int(np.argmin(np.abs(overlaps.nodes + overlaps.nodes[i])))
        paired = abs(overlaps.nodes[j] + overlaps.nodes[i]) <= 1e-12 and not done[j]
        dz[i] = sigma_z * (g[0] + 1j * g[1]) / math.sqrt(2)
        dn[i] = sigma_n * (g[2] + 1j * g[3]) / math.sqrt(2)
        done[i] = True
        if paired and j != i:
            dz[j] = np.conj(dz[i])
            dn[j] = np.conj(dn[i])
            done[j] = True
    out = OverlapSet(
        nodes=overlaps.nodes.copy(), weights=overlaps.weights.copy(),
        node_times=overlaps.node_times.copy(), z=overlaps.z + dz,
        n=overlaps.n + dn, mode=overlaps.mode, source="sampled",
        tau=overlaps.tau, total_weight=overlaps.total_weight,
        discarded_weight=overlaps.discarded_weight,
    )
    return out


def resolvable_gap_from_K(K: int, tau: float) -> float:
    """Largest gap the sampled estimator resolves: sqrt(ln K / (2 tau))."""
    if K < 2:
        raise ValueError("K must be >= 2")
    if tau <= 0:
        raise ValueError("tau must be positive")
    return math.sqrt(math.log(K) / (2.0 * tau))


def shot_budget_bound(delta_min: float, delta_max: float, c_const: float = 1.0) -> float:
    """Shots needed to span a local gap bandwidth: exp(c (dmax/dmin)^2)."""
    if not 0 < delta_min <= delta_max:
        raise ValueError("need 0 < delta_min <= delta_max")
    expo = c_const * (delta_max / delta_min) ** 2
    return math.exp(expo) if expo < 700 else math.inf


STATS_CSV_COLUMNS = ("lambda", "H_sampled", "H_exact", "rel_err",
                     "rel_stderr_pred", "c_lambda", "Q_lambda", "flagged")


def write_stats_csv(path, lambdas, h_sampled, h_exact, stats: EstimatorStats,
                    flagged=None) -> None:
    import csv

    if flagged is None:
        flagged = stats.flagged
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = np.abs(np.asarray(h_sampled) - np.asarray(h_exact)) / np.abs(h_exact)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(STATS_CSV_COLUMNS)
        for i in range(len(lambdas)):
            wr.writerow([
                repr(float(lambdas[i])),
                repr(float(h_sampled[i])),
                repr(float(h_exact[i])),
                repr(float(rel_err[i])),
                repr(float(stats.rel_stderr_pred[i])),
                repr(float(stats.c_lambda[i])),
                repr(float(stats.q_lambda[i])),
                int(bool(flagged[i])),
            ])
