"""
Floquet-Bloch eigenproblem on the unit cell, discretized with plane waves.

For a wavevector k in [-pi, pi]^d the shifted operator
    A(k) u = -(1/rho) (grad + ik) . [ G (grad + ik) u ]
is discretized in the basis e_a(x) = exp(i 2 pi j_a . x), |j_a|_inf <= N,
giving the generalized Hermitian pencil

    S(k)[a, b] = G_hat(j_a - j_b) (2 pi j_b + k) . (2 pi j_a + k)
    B[a, b]    = rho_hat(j_a - j_b)

whose eigenvalues are the squared Bloch frequencies omega_m^2(k).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .medium import CoefficientTable, MediumSpec, fourier_table

PHASE_FALLBACK_TOL = 1e-8
SIMPLE_REL_TOL = 1e-6


@dataclass(frozen=True)
class PlaneWaveBasis:
    """Truncated Fourier basis exp(i 2 pi j.x), |j|_inf <= cutoff.

    The index array puts j = 0 first; the remaining indices keep their
    lexicographic order.
    """

    dimension: int
    cutoff: int
    indices: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        ax = np.arange(-self.cutoff, self.cutoff + 1)
        if self.dimension == 1:
            idx = ax[:, None]
        else:
            g1, g2 = np.meshgrid(ax, ax, indexing="ij")
            idx = np.stack([g1.ravel(), g2.ravel()], axis=-1)
        zero = np.flatnonzero(np.all(idx == 0, axis=1))[0]
        order = np.concatenate([[zero], np.delete(np.arange(len(idx)), zero)])
        object.__setattr__(self, "indices", idx[order])

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    def cube_scatter(self):
        """Per-basis-function flat position in the (2N+1)^d coefficient cube."""
        shifted = self.indices + self.cutoff
        if self.dimension == 1:
            return shifted[:, 0]
        return shifted[:, 0] * (2 * self.cutoff + 1) + shifted[:, 1]

    def coeff_cube(self, vec: np.ndarray) -> np.ndarray:
        """Rearrange a coefficient vector into a dense (2N+1)^d cube."""
        n = 2 * self.cutoff + 1
        cube = np.zeros((n,) * self.dimension, dtype=complex)
        cube.ravel()[self.cube_scatter()] = vec
        return cube


def _difference_matrix(table: CoefficientTable, basis: PlaneWaveBasis, which: str):
    """Matrix Q[a, b] = q_hat(j_a - j_b) from a coefficient table."""
    arr = table.G_hat if which == "G" else table.rho_hat
    dm = basis.indices[:, None, :] - basis.indices[None, :, :]
    off = dm + table.cutoff
    if basis.dimension == 1:
        return arr[off[..., 0]]
    return arr[off[..., 0], off[..., 1]]


def assemble_operator(table: CoefficientTable, basis: PlaneWaveBasis, k):
    """Stiffness and mass matrices of the shifted operator at wavevector k."""
    if table.dimension != basis.dimension:
        raise ValueError("table/basis dimension mismatch")
    if table.cutoff < 2 * basis.cutoff:
        raise ValueError("coefficient table cutoff must be >= 2 * basis cutoff")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.shape != (basis.dimension,):
        raise ValueError("wavevector has wrong dimension")

    G_mat = _difference_matrix(table, basis, "G")
    rho_mat = _difference_matrix(table, basis, "rho")
    kpg = 2.0 * np.pi * basis.indices + k  # (M, d)
    dots = kpg @ kpg.T
    S = G_mat * dots
    # enforce exact Hermitian symmetry against roundoff
    S = 0.5 * (S + S.conj().T)
    B = 0.5 * (rho_mat + rho_mat.conj().T)
    return S, B


@dataclass
class BandSolution:
    """Lowest eigenpairs of one Bloch pencil, B-orthonormal eigenvectors."""

    k: np.ndarray
    omega2: np.ndarray        # (count,), ascending
    vectors: np.ndarray       # (M, count)
    basis: PlaneWaveBasis


def solve_bands(table, basis, k, count) -> BandSolution:
    """Solve the generalized pencil at wavevector k for the lowest `count` bands."""
    M = basis.size
    if not (1 <= count <= M):
        raise ValueError(f"count must be in [1, {M}]")
    S, B = assemble_operator(table, basis, k)
    try:
        vals, vecs = scipy.linalg.eigh(S, B, subset_by_index=(0, count - 1))
    except scipy.linalg.LinAlgError as exc:  # mass not positive definite
        raise ValueError(f"mass matrix not positive definite: {exc}") from exc
    return BandSolution(k=np.atleast_1d(np.asarray(k, dtype=float)),
                        omega2=vals, vectors=vecs, basis=basis)


# ---------------------------------------------------------------------------
# Dispersion diagrams and band gaps
# ---------------------------------------------------------------------------

def brillouin_path(dimension: int, samples_per_segment: int = 30):
    """Sampled path through the Brillouin zone.

    1D: uniform samples on [-pi, pi].
    2D: Gamma -> X -> M -> Gamma on the square lattice.
    Returns (k_points, arclength, tick_positions, tick_labels).
    """
    if dimension == 1:
        ks = np.linspace(-np.pi, np.pi, 2 * samples_per_segment + 1)
        return ks[:, None], ks.copy(), [-np.pi, 0.0, np.pi], ["-pi", "0", "pi"]

    gamma = np.array([0.0, 0.0])
    xpt = np.array([np.pi, 0.0])
    mpt = np.array([np.pi, np.pi])
    nodes = [gamma, xpt, mpt, gamma]
    pts, dist = [], []
    offset = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        ts = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)
        pts.append(a[None, :] + ts[:, None] * (b - a)[None, :])
        dist.append(offset + ts * np.linalg.norm(b - a))
        offset += np.linalg.norm(b - a)
    pts.append(gamma[None, :])
    dist.append(np.array([offset]))
    ticks = [0.0, np.pi, 2 * np.pi, 2 * np.pi + np.pi * np.sqrt(2.0)]
    return (np.concatenate(pts), np.concatenate(dist), ticks,
            ["Gamma", "X", "M", "Gamma"])


@dataclass
class DispersionDiagram:
    k_points: np.ndarray      # (nk, d)
    arclength: np.ndarray     # (nk,)
    omega2: np.ndarray        # (nk, count)
    tick_positions: list
    tick_labels: list


def dispersion_diagram(spec: MediumSpec, cutoff: int, count: int,
                       samples_per_segment: int = 30,
                       k_points=None, arclength=None) -> DispersionDiagram:
    """Band diagram along the standard path (or explicit k samples)."""
    basis = PlaneWaveBasis(spec.dimension, cutoff)
    table = fourier_table(spec, 2 * cutoff)
    if k_points is None:
        k_points, arclength, ticks, labels = brillouin_path(
            spec.dimension, samples_per_segment)
    else:
        k_points = np.atleast_2d(np.asarray(k_points, dtype=float))
        if arclength is None:
            arclength = np.arange(len(k_points), dtype=float)
        ticks, labels = [], []
    omega2 = np.empty((len(k_points), count))
    for i, k in enumerate(k_points):
        omega2[i] = solve_bands(table, basis, k, count).omega2
    return DispersionDiagram(k_points=k_points, arclength=np.asarray(arclength),
                             omega2=omega2, tick_positions=ticks,
                             tick_labels=labels)


@dataclass(frozen=True)
class BandGap:
    """Open interval of omega^2 between two consecutive branches."""

    below_branch: int         # gap sits above this branch index
    omega2_low: float
    omega2_high: float

    @property
    def width(self) -> float:
        return self.omega2_high - self.omega2_low

    def contains(self, omega2: float, margin: float = 0.0) -> bool:
        return self.omega2_low + margin < omega2 < self.omega2_high - margin


def find_band_gaps(diagram: DispersionDiagram) -> list[BandGap]:
    """Complete gaps between consecutive sampled branches."""
    highs = diagram.omega2.max(axis=0)
    lows = diagram.omega2.min(axis=0)
    gaps = []
    for m in range(diagram.omega2.shape[1] - 1):
        if lows[m + 1] > highs[m]:
            gaps.append(BandGap(below_branch=m, omega2_low=highs[m],
                                omega2_high=lows[m + 1]))
    return gaps


def export_diagram_csv(diagram: DispersionDiagram, path: str,
                       normalized: bool = False, G1: float = 1.0,
                       rho1: float = 1.0, header_lines=()):
    """Write the diagram as long-format CSV: k_index, k components, m, omega.

    With normalized=True, wavenumbers are scaled by pi and frequencies by
    sqrt(G1/rho1) (background sound speed over the half-cell wavenumber).
    """
    omega = np.sqrt(np.clip(diagram.omega2, 0.0, None))
    kpts = diagram.k_points.copy()
    if normalized:
        kpts = kpts / np.pi
        omega = omega / np.sqrt(G1 / rho1)
    d = kpts.shape[1]
    names = ["k_index"] + [f"k_{i + 1}" for i in range(d)] + ["m", "omega"]
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for i in range(kpts.shape[0]):
            kcols = ",".join(f"{kpts[i, a]:.12g}" for a in range(d))
            for m in range(omega.shape[1]):
                fh.write(f"{i},{kcols},{m},{omega[i, m]:.12g}\n")


# ---------------------------------------------------------------------------
# Eigenpair at the zone center
# ---------------------------------------------------------------------------

@dataclass
class GammaPair:
    """Phase-fixed branch-p eigenpair at k = 0, plus simplicity info."""

    spec: MediumSpec
    basis: PlaneWaveBasis
    table: CoefficientTable
    branch: int
    omega2: float
    coeffs: np.ndarray        # (M,), B-orthonormal: c^H B c = 1
    simple: bool
    separation: float         # min relative distance to neighbor eigenvalues


def fix_phase(coeffs: np.ndarray) -> np.ndarray:
    """Rotate a coefficient vector so its cell average (j=0 entry) is real > 0.

    Falls back to the largest-magnitude coefficient when the average is
    numerically zero.
    """
    pivot = coeffs[0]
    if abs(pivot) < PHASE_FALLBACK_TOL * np.linalg.norm(coeffs):
        pivot = coeffs[np.argmax(np.abs(coeffs))]
    return coeffs * (pivot.conjugate() / abs(pivot))


def eigenpair_at_gamma(spec: MediumSpec, branch: int, cutoff: int) -> GammaPair:
    """Solve at k = 0 and return the branch-p eigenpair with fixed phase."""
    basis = PlaneWaveBasis(spec.dimension, cutoff)
    table = fourier_table(spec, 2 * cutoff)
    count = min(branch + 2, basis.size)
    sol = solve_bands(table, basis, np.zeros(spec.dimension), count)
    if branch >= len(sol.omega2):
        raise ValueError(f"branch {branch} not available with cutoff {cutoff}")
    lam = sol.omega2[branch]
    scale = max(abs(lam), 1.0)
    seps = []
    if branch > 0:
        seps.append(abs(lam - sol.omega2[branch - 1]))
    if branch + 1 < len(sol.omega2):
        seps.append(abs(lam - sol.omega2[branch + 1]))
    separation = min(seps) / scale if seps else np.inf
    coeffs = fix_phase(sol.vectors[:, branch])
    return GammaPair(spec=spec, basis=basis, table=table, branch=branch,
                     omega2=lam, coeffs=coeffs,
                     simple=separation > SIMPLE_REL_TOL, separation=separation)
