"""Model builders: 2D Fermi-Hubbard sectors, synthetic spectra, diagonalization.

The lattice Hamiltonian is

    H = t * sum_{<i,j>,s} (c+_is c_js + h.c.) + U * sum_j n_ju n_jd - mu * N

built in the occupation-number basis of a fixed (n_up, n_down) particle
sector.  Sites are ordered row-major (site = y*Lx + x); fermion modes carry
the spin-up block before the spin-down block, so spin-diagonal hopping signs
reduce to the occupation parity between the two sites within one spin
species.

Everything downstream consumes a :class:`SpectrumModel`: distinct levels,
their degeneracies, and per-level weights, in one of two modes.  In ``trace``
mode the weights are the degeneracies (populations are identically one); in
``state`` mode they are the total populations of an initial state aggregated
over each degenerate eigenspace.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_DIM_CAP = 4096

# Grouping tolerance for eigenvalues, relative to max(1, ||H||).
DEGENERACY_RTOL = 1e-9


class ModelError(ValueError):
    """Invalid model specification or a model exceeding configured limits."""


@dataclass(frozen=True)
class LatticeSpec:
    """Fixed-sector 2D Fermi-Hubbard parameters."""

    lx: int
    ly: int
    n_up: int
    n_down: int
    t_hop: float = 1.0
    u: float = 0.0
    mu: float = 0.0
    periodic_x: bool = False
    periodic_y: bool = False

    def __post_init__(self) -> None:
        if self.lx < 1 or self.ly < 1:
            raise ModelError(f"lattice extents must be positive, got {self.lx}x{self.ly}")
        L = self.n_sites
        if not (0 <= self.n_up <= L and 0 <= self.n_down <= L):
            raise ModelError(
                f"sector (n_up={self.n_up}, n_down={self.n_down}) out of range for {L} sites"
            )

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    @property
    def sector_dim(self) -> int:
        return math.comb(self.n_sites, self.n_up) * math.comb(self.n_sites, self.n_down)

    def bonds(self) -> list[tuple[int, int]]:
        """Nearest-neighbour site pairs, with periodic wraps only when the
        wrap bond is not already present (axis length > 2)."""
        out = []
        for y in range(self.ly):
            for x in range(self.lx):
                s = y * self.lx + x
                if x + 1 < self.lx:
                    out.append((s, s + 1))
                elif self.periodic_x and self.lx > 2:
                    out.append((s, y * self.lx))
                if y + 1 < self.ly:
                    out.append((s, s + self.lx))
                elif self.periodic_y and self.ly > 2:
                    out.append((s, x))
        return out


@dataclass
class HamiltonianMatrix:
    """Dense Hermitian matrix with sector basis metadata.

    ``norm_bound`` is a cheap upper bound on the spectral norm (max absolute
    row sum); the sharp value max_j |E_j| is available from the spectrum once
    diagonalized.
    """

    entries: np.ndarray
    basis_labels: list[tuple[int, int]]
    norm_bound: float

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __post_init__(self) -> None:
        self.entries = np.asarray(self.entries, dtype=complex)
        d = self.entries.shape
        if len(d) != 2 or d[0] != d[1]:
            raise ModelError(f"entries must be square, got shape {d}")
        if len(self.basis_labels) != d[0]:
            raise ModelError("basis_labels length does not match matrix dimension")
        scale = np.abs(self.entries).max() or 1.0
        herm_defect = np.abs(self.entries - self.entries.conj().T).max()
        if herm_defect > 1e-12 * scale:
            raise ModelError(f"matrix is not Hermitian (defect {herm_defect:.3e})")


@dataclass
class SpectrumModel:
    """Distinct eigenvalues with degeneracies and per-level populations.

    Invariants: levels strictly ascending, sum(degeneracies) = D, and in
    ``state`` mode the populations sum to one (they are aggregated over each
    degenerate eigenspace); in ``trace`` mode populations are identically 1.
    """

    levels: np.ndarray
    degeneracies: np.ndarray
    populations: np.ndarray
    mode: str = "trace"

    def __post_init__(self) -> None:
        self.levels = np.asarray(self.levels, dtype=float)
        self.degeneracies = np.asarray(self.degeneracies, dtype=np.int64)
        self.populations = np.asarray(self.populations, dtype=float)
        if self.mode not in ("state", "trace"):
            raise ModelError(f"unknown mode {self.mode!r}")
        if not (len(self.levels) == len(self.degeneracies) == len(self.populations)):
            raise ModelError("levels/degeneracies/populations length mismatch")
        if len(self.levels) == 0:
            raise ModelError("empty spectrum")
        if not np.all(np.isfinite(self.levels)):
            raise ModelError("non-finite eigenvalue in spectrum")
        if np.any(np.diff(self.levels) <= 0):
            raise ModelError("levels must be strictly ascending")
        if np.any(self.degeneracies < 1):
            raise ModelError("degeneracies must be positive")
        if self.mode == "state" and abs(self.populations.sum() - 1.0) > 1e-10:
            raise ModelError("state-mode populations must sum to 1")

    @property
    def dim(self) -> int:
        return int(self.degeneracies.sum())

    @property
    def spectral_norm(self) -> float:
        return float(np.abs(self.levels).max())

    @property
    def e_min(self) -> float:
        return float(self.levels[0])

    @property
    def e_max(self) -> float:
        return float(self.levels[-1])

    def spectral_weights(self) -> np.ndarray:
        """Per-level filter weights: g_j in trace mode, aggregated
        populations in state mode (degeneracy is already summed into them)."""
        if self.mode == "trace":
            return self.degeneracies.astype(float)
        return self.populations.copy()

    @property
    def total_weight(self) -> float:
        return float(self.spectral_weights().sum())


@dataclass
class InitialState:
    """Unit-norm reference state in the sector basis."""

    amplitudes: np.ndarray
    kind: str = "custom"

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        nrm = np.linalg.norm(self.amplitudes)
        if abs(nrm - 1.0) > 1e-12:
            raise ModelError(f"initial state must be unit norm, got {nrm}")


@dataclass
class Eigensystem:
    """Raw (ungrouped) dense eigendecomposition, ascending eigenvalues."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _parity_between(mask: int, a: int, b: int) -> float:
    """Sign from moving a fermion between modes a and b of one spin species:
    (-1)^(number of occupied modes strictly between a and b)."""
    lo, hi = (a, b) if a < b else (b, a)
    between = mask & (((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1))
    return -1.0 if bin(between).count("1") % 2 else 1.0


def build_fermi_hubbard(spec: LatticeSpec, dim_cap: int = DEFAULT_DIM_CAP) -> HamiltonianMatrix:
    """Assemble the dense sector Hamiltonian for ``spec``.

    The diagonal carries U * (# doubly occupied sites) - mu * (n_up+n_down);
    every hopping entry carries the fermionic parity sign of the occupied
    modes between the two sites.
    """
    D = spec.sector_dim
    if D > dim_cap:
        raise ModelError(f"sector dimension {D} exceeds cap {dim_cap}; raise dim_cap to override")
    L = spec.n_sites
    ups = [sum(1 << i for i in c) for c in itertools.combinations(range(L), spec.n_up)]
    dns = [sum(1 << i for i in c) for c in itertools.combinations(range(L), spec.n_down)]
    basis = [(u, d) for u in ups for d in dns]
    index = {b: i for i, b in enumerate(basis)}
    H = np.zeros((D, D), dtype=complex)
    bonds = spec.bonds()
    n_tot = spec.n_up + spec.n_down
    for i, (u, d) in enumerate(basis):
        H[i, i] = spec.u * bin(u & d).count("1") - spec.mu * n_tot
        for (a, b) in bonds:
            for mask, is_up in ((u, True), (d, False)):
                for src, dst in ((a, b), (b, a)):
                    if (mask >> src) & 1 and not (mask >> dst) & 1:
                        new = (mask ^ (1 << src)) | (1 << dst)
                        key = (new, d) if is_up else (u, new)
                        H[index[key], i] += spec.t_hop * _parity_between(mask, src, dst)
    norm_bound = float(np.abs(H).sum(axis=1).max())
    return HamiltonianMatrix(entries=H, basis_labels=basis, norm_bound=norm_bound)


def build_synthetic_spectrum(levels, merge_tol: float = 1e-12) -> SpectrumModel:
    """Trace-mode spectrum from (energy, degeneracy) pairs.

    Levels are sorted; entries closer than ``merge_tol`` are merged (their
    degeneracies add).  NaN energies are rejected.
    """
    pairs = [(float(e), int(g)) for e, g in levels]
    if not pairs:
        raise ModelError("levels must be non-empty")
    for e, g in pairs:
        if not math.isfinite(e):
            raise ModelError(f"non-finite level {e}")
        if g < 1:
            raise ModelError(f"degeneracy must be positive, got {g}")
    pairs.sort()
    es, gs = [pairs[0][0]], [pairs[0][1]]
    for e, g in pairs[1:]:
        if e - es[-1] < merge_tol:
            # merged level sits at the degeneracy-weighted mean
            es[-1] = (es[-1] * gs[-1] + e * g) / (gs[-1] + g)
            gs[-1] += g
        else:
            es.append(e)
            gs.append(g)
    return SpectrumModel(
        levels=np.array(es),
        degeneracies=np.array(gs),
        populations=np.ones(len(es)),
        mode="trace",
    )


def eigensystem(H: HamiltonianMatrix) -> Eigensystem:
    vals, vecs = np.linalg.eigh(H.entries)
    return Eigensystem(eigenvalues=vals, eigenvectors=vecs)


def _group_levels(vals: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray, list[slice]]:
    """Group ascending eigenvalues into distinct levels at tolerance ``tol``.
    Returns (levels, degeneracies, slices into the raw array)."""
    edges = [0]
    for i in range(1, len(vals)):
        if vals[i] - vals[i - 1] >= tol:
            edges.append(i)
    edges.append(len(vals))
    slices = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]
    levels = np.array([vals[s].mean() for s in slices])
    degs = np.array([s.stop - s.start for s in slices], dtype=np.int64)
    return levels, degs, slices


def diagonalize(
    H: HamiltonianMatrix | Eigensystem,
    psi0: InitialState | None = None,
    degeneracy_tol: float | None = None,
) -> SpectrumModel:
    """Reduce a Hamiltonian to a SpectrumModel.

    With ``psi0`` the result is in state mode and each level carries the total
    population of the degenerate eigenspace, p_j = sum_eigvec |<v|psi0>|^2;
    otherwise the result is in trace mode.
    """
    eig = H if isinstance(H, Eigensystem) else eigensystem(H)
    vals = eig.eigenvalues
    if degeneracy_tol is None:
        scale = max(1.0, float(np.abs(vals).max()))
        degeneracy_tol = DEGENERACY_RTOL * scale
    levels, degs, slices = _group_levels(vals, degeneracy_tol)
    if psi0 is None:
        return SpectrumModel(levels=levels, degeneracies=degs,
                             populations=np.ones(len(levels)), mode="trace")
    amps2 = np.abs(eig.eigenvectors.conj().T @ psi0.amplitudes) ** 2
    pops = np.array([amps2[s].sum() for s in slices])
    pops = pops / pops.sum()
    return SpectrumModel(levels=levels, degeneracies=degs, populations=pops, mode="state")


def make_initial_state(kind: str, dim: int, seed: int | None = None) -> InitialState:
    """Uniform, Haar-random (seeded, reproducible), or validated custom state."""
    if dim < 1:
        raise ModelError("dim must be >= 1")
    if kind == "uniform":
        return InitialState(np.full(dim, 1.0 / math.sqrt(dim), dtype=complex), kind="uniform")
    if kind == "seeded-random":
        if seed is None:
            raise ModelError("seeded-random initial state requires a seed")
        from .sampling import haar_state

        return InitialState(haar_state(dim, seed), kind="seeded-random")
    raise ModelError(f"unknown initial state kind {kind!r}; use make-your-own for custom")
