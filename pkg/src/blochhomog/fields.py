"""
Wavefield synthesis: exact Bloch superposition, single-branch restriction,
macroscopic envelopes, and the homogenized approximations of order 0, 1, 2.

All wavenumber integrals share one quadrature over khat in [-K, K]^d; the
exact solution uses the same nodes scaled by eps (k = eps khat), dropping
nodes that leave the Brillouin zone.  Envelope derivatives are taken
spectrally (multiplication by i khat under the integral), never by grid
differencing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import GammaPair, PlaneWaveBasis, solve_bands
from .cell import EffectiveCoefficients
from .source import FrequencySpec, SourceSpec

DENOM_TOL = 1e-8
ENVELOPE_DENOM_TOL = 1e-10
DEFAULT_MODE_COUNT = 30


class GapViolation(Exception):
    """A Bloch denominator omega_m^2(k) - omega^2 came within DENOM_TOL of zero."""


class EnvelopeSingularity(Exception):
    """The macroscopic symbol vanished on a quadrature node."""


# ---------------------------------------------------------------------------
# Quadrature over the envelope wavenumber
# ---------------------------------------------------------------------------

@dataclass
class WavenumberQuadrature:
    """Tensor-product rule on [-k_max, k_max]^d.

    nodes: (Q, d); weights: (Q,) — full tensor weights.
    axis_nodes/axis_weights keep the 1D factors for separable synthesis.
    """

    dimension: int
    k_max: float
    rule: str
    axis_nodes: np.ndarray
    axis_weights: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray


def wavenumber_quadrature(dimension: int, k_max: float = 8.0,
                          points_per_axis: int = 64,
                          rule: str = "gauss") -> WavenumberQuadrature:
    if rule == "gauss":
        x, w = np.polynomial.legendre.leggauss(points_per_axis)
        x = x * k_max
        w = w * k_max
    elif rule == "trapezoid":
        x = np.linspace(-k_max, k_max, points_per_axis)
        w = np.full(points_per_axis, 2.0 * k_max / (points_per_axis - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    if dimension == 1:
        nodes = x[:, None]
        weights = w.copy()
    else:
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        nodes = np.stack([X1.ravel(), X2.ravel()], axis=-1)
        weights = np.outer(w, w).ravel()
    return WavenumberQuadrature(dimension=dimension, k_max=k_max, rule=rule,
                                axis_nodes=x, axis_weights=w,
                                nodes=nodes, weights=weights)


def quadrature_self_test(quad: WavenumberQuadrature) -> float:
    """Worst relative error integrating exp(-|k|^2/4) and k^2 exp(-|k|^2/4)."""
    from scipy.special import erf
    k = quad.axis_nodes
    w = quad.axis_weights
    a = quad.k_max
    exact0 = 2.0 * np.sqrt(np.pi) * erf(a / 2.0)
    got0 = float(w @ np.exp(-k ** 2 / 4.0))
    exact2 = 4.0 * np.sqrt(np.pi) * erf(a / 2.0) - 4.0 * a * np.exp(-a ** 2 / 4.0)
    got2 = float(w @ (k ** 2 * np.exp(-k ** 2 / 4.0)))
    return max(abs(got0 - exact0) / exact0, abs(got2 - exact2) / abs(exact2))


# ---------------------------------------------------------------------------
# Grids and field containers
# ---------------------------------------------------------------------------

@dataclass
class FieldOnGrid:
    """Complex field sampled on a separable grid in fast coordinates x.

    axes: tuple of 1D coordinate arrays; values has shape tuple(len(ax)).
    """

    axes: tuple
    values: np.ndarray
    label: str = ""
    meta: dict = None

    @property
    def dimension(self) -> int:
        return len(self.axes)

    def line(self, y0: float) -> tuple[np.ndarray, np.ndarray]:
        """Transect values along x2 = y0 (2D only; nearest grid row)."""
        if self.dimension != 2:
            raise ValueError("line extraction needs a 2D field")
        j = int(np.argmin(np.abs(self.axes[1] - y0)))
        return self.axes[0], self.values[:, j]


def synthesize_periodic(basis: PlaneWaveBasis, coeffs: np.ndarray, x):
    """Evaluate sum_j c_j exp(i 2 pi j.x) at points x (shape (..., d) or (...,))."""
    x = np.asarray(x, dtype=float)
    d = basis.dimension
    if d == 1:
        pts = x.reshape(-1) if (x.ndim <= 1 or x.shape[-1] != 1) else x[..., 0].reshape(-1)
        cube = basis.coeff_cube(coeffs)
        n = np.arange(-basis.cutoff, basis.cutoff + 1)
        vals = np.exp(2j * np.pi * np.outer(pts, n)) @ cube
        return vals.reshape(x.shape if x.ndim <= 1 else x.shape[:-1])
    pts = x.reshape(-1, d)
    cube = basis.coeff_cube(coeffs)
    n = np.arange(-basis.cutoff, basis.cutoff + 1)
    e1 = np.exp(2j * np.pi * np.outer(pts[:, 0], n))
    e2 = np.exp(2j * np.pi * np.outer(pts[:, 1], n))
    vals = np.einsum("pa,ab,pb->p", e1, cube, e2)
    return vals.reshape(x.shape[:-1])


def _grid_points(axes):
    """Stack separable axes into points of shape (n1[, n2], d)."""
    if len(axes) == 1:
        return axes[0][:, None]
    X1, X2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.stack([X1, X2], axis=-1)


def _synth_on_axes(basis: PlaneWaveBasis, coeffs, axes, k=None):
    """Evaluate a (possibly Bloch-shifted) coefficient vector on a separable grid.

    Returns sum_j c_j exp(i (2 pi j + k).x) with k optional.
    """
    n = np.arange(-basis.cutoff, basis.cutoff + 1)
    cube = basis.coeff_cube(coeffs)
    if basis.dimension == 1:
        freq = 2.0 * np.pi * n + (k[0] if k is not None else 0.0)
        return np.exp(1j * np.outer(axes[0], freq)) @ cube
    f1 = 2.0 * np.pi * n + (k[0] if k is not None else 0.0)
    f2 = 2.0 * np.pi * n + (k[1] if k is not None else 0.0)
    e1 = np.exp(1j * np.outer(axes[0], f1))
    e2 = np.exp(1j * np.outer(axes[1], f2))
    return e1 @ cube @ e2.T


# ---------------------------------------------------------------------------
# Exact Bloch solution and branch restriction
# ---------------------------------------------------------------------------

def exact_bloch_solution(gamma: GammaPair, freq: FrequencySpec,
                         source: SourceSpec, quad: WavenumberQuadrature,
                         axes, mode_count: int = DEFAULT_MODE_COUNT,
                         branch_only: bool = False) -> FieldOnGrid:
    """Mode superposition of the driven response on a fast-coordinate grid.

    u(x) = (2 pi)^{-d/2} int_Y sum_m  eps^2 <rho phi_p(0) conj(phi_m(eps khat))>
           F(khat) / (omega_m^2 - omega^2) e^{i eps khat.x} phi_m(x) dkhat

    With branch_only=True the sum keeps only m = p.
    """
    basis, table = gamma.basis, gamma.table
    d = basis.dimension
    eps = freq.eps
    mode_count = min(mode_count, basis.size)
    if branch_only and gamma.branch >= mode_count:
        mode_count = gamma.branch + 1
    from .bloch import assemble_operator
    _, Bmat = assemble_operator(table, basis, np.zeros(d))
    bc0 = Bmat @ gamma.coeffs

    pref = (2.0 * np.pi) ** (-d / 2.0) * eps ** (2 + d) / eps ** d
    # (eps^d from dk = eps^d dkhat cancels the eps^{-d} in the projection)

    out = np.zeros(tuple(len(a) for a in axes), dtype=complex)
    F_all = source.envelope.spectrum(quad.nodes)
    tail = 0.0
    for q in range(len(quad.nodes)):
        khat = quad.nodes[q]
        k = eps * khat
        if np.max(np.abs(k)) > np.pi:
            continue                  # outside the Brillouin zone
        sol = solve_bands(table, basis, k, mode_count)
        denom = sol.omega2 - freq.omega2
        if np.min(np.abs(denom)) < DENOM_TOL:
            raise GapViolation(
                f"denominator {np.min(np.abs(denom)):.3e} at k = {k}")
        proj = sol.vectors.conj().T @ bc0          # <rho phi_p(0) conj(phi_m)>
        amps = proj / denom
        if branch_only:
            keep = np.zeros_like(amps)
            keep[gamma.branch] = amps[gamma.branch]
            amps = keep
        tail = max(tail, abs(amps[-1]) * F_all[q])
        combo = sol.vectors @ amps
        node_field = _synth_on_axes(basis, combo, axes, k=k)
        out += (quad.weights[q] * F_all[q]) * node_field
    out *= pref
    label = f"branch {gamma.branch} solution" if branch_only else "exact solution"
    return FieldOnGrid(axes=tuple(axes), values=out, label=label,
                       meta={"tail_indicator": tail, "eps": eps})


def branch_solution(gamma, freq, source, quad, axes,
                    mode_count: int = DEFAULT_MODE_COUNT) -> FieldOnGrid:
    """Single-branch (m = p) restriction of the exact solution."""
    return exact_bloch_solution(gamma, freq, source, quad, axes,
                                mode_count=mode_count, branch_only=True)


# ---------------------------------------------------------------------------
# Macroscopic envelopes
# ---------------------------------------------------------------------------

def envelope_denominator(eff: EffectiveCoefficients, freq: FrequencySpec,
                         quad: WavenumberQuadrature, order: int) -> np.ndarray:
    """Symbol of the effective operator on the quadrature nodes.

    order 0:  (mu0/rho0) : khat khat - sigma Omega_hat^2
    order 2:  adds -eps^2 (mu2/rho0) : khat^4
    """
    kh = quad.nodes
    D = np.einsum("qa,ab,qb->q", kh, eff.mu0, kh) / eff.rho0 \
        - freq.sigma * freq.omega_hat ** 2
    if order >= 2:
        k4 = np.einsum("qa,qb,qc,qd,abcd->q", kh, kh, kh, kh, eff.mu2)
        D = D - freq.eps ** 2 * k4 / eff.rho0
    return D


def effective_envelope(eff: EffectiveCoefficients, freq: FrequencySpec,
                       source: SourceSpec, quad: WavenumberQuadrature,
                       order: int, axes, derivative: tuple = ()) -> np.ndarray:
    """W(r) (and spectral derivatives) on a separable slow-coordinate grid.

    derivative is a tuple of axis indices; each entry multiplies the
    integrand by i khat_axis.
    """
    d = quad.dimension
    D = envelope_denominator(eff, freq, quad, order)
    if np.min(np.abs(D)) < ENVELOPE_DENOM_TOL:
        raise EnvelopeSingularity(
            f"effective symbol vanished: min |D| = {np.min(np.abs(D)):.3e}")
    F = source.envelope.spectrum(quad.nodes)
    s = (quad.weights * F / D).astype(complex)
    for ax in derivative:
        s = s * (1j * quad.nodes[:, ax])
    pref = (2.0 * np.pi) ** (-d / 2.0)
    if d == 1:
        e1 = np.exp(1j * np.outer(axes[0], quad.nodes[:, 0]))
        return pref * (e1 @ s)
    nq = len(quad.axis_nodes)
    S = s.reshape(nq, nq)
    e1 = np.exp(1j * np.outer(axes[0], quad.axis_nodes))
    e2 = np.exp(1j * np.outer(axes[1], quad.axis_nodes))
    return pref * (e1 @ S @ e2.T)


def envelope_pde_residual(eff: EffectiveCoefficients, freq: FrequencySpec,
                          source: SourceSpec, quad: WavenumberQuadrature,
                          axes) -> float:
    """Max residual of  mu0 : grad^2 W0 + rho0 sigma Omega_hat^2 W0 = -rho0 g
    with g the inverse transform of F, all evaluated spectrally."""
    d = quad.dimension
    res = np.zeros(tuple(len(a) for a in axes), dtype=complex)
    for a in range(d):
        for b in range(d):
            res += eff.mu0[a, b] * effective_envelope(
                eff, freq, source, quad, 0, axes, derivative=(a, b))
    W0 = effective_envelope(eff, freq, source, quad, 0, axes)
    res += eff.rho0 * freq.sigma * freq.omega_hat ** 2 * W0
    g = source.envelope.modulation(_grid_points(axes))
    res += eff.rho0 * g
    return float(np.max(np.abs(res)) / max(np.max(np.abs(W0)), 1e-300))


# ---------------------------------------------------------------------------
# Homogenized fields
# ---------------------------------------------------------------------------

def homogenized_field(eff: EffectiveCoefficients, freq: FrequencySpec,
                      source: SourceSpec, quad: WavenumberQuadrature,
                      order: int, axes) -> FieldOnGrid:
    """Order-m approximation U_m evaluated at x (fast grid), r = eps x.

    U0 = phi_p W0
    U1 = U0 + eps chi1 . grad W0
    U2 = phi_p W2 + eps chi1 . grad W2
         + eps^2 (corrector_cov phi_p + chi2) : grad^2 W2
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1, or 2")
    gamma = eff.gamma
    basis = gamma.basis
    d = basis.dimension
    eps = freq.eps
    r_axes = tuple(eps * a for a in axes)

    env_order = 2 if order == 2 else 0
    W = effective_envelope(eff, freq, source, quad, env_order, r_axes)
    phi = _synth_on_axes(basis, gamma.coeffs, axes)
    out = phi * W
    if order >= 1:
        for a in range(d):
            dW = effective_envelope(eff, freq, source, quad, env_order,
                                    r_axes, derivative=(a,))
            chi1a = _synth_on_axes(basis, eff.cell.chi1[:, a], axes)
            out += eps * chi1a * dW
    if order == 2:
        for a in range(d):
            for b in range(d):
                d2W = effective_envelope(eff, freq, source, quad, env_order,
                                         r_axes, derivative=(a, b))
                chi2ab = _synth_on_axes(basis, eff.cell.chi2[:, a, b], axes)
                cell_part = eff.corrector_cov[a, b] * phi + chi2ab
                out += eps ** 2 * cell_part * d2W
    return FieldOnGrid(axes=tuple(axes), values=out,
                       label=f"order-{order} approximation",
                       meta={"eps": eps, "order": order})


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_field_csv(field: FieldOnGrid, path: str, header_lines=()):
    """CSV dump: coordinates, real part, imaginary part."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        if field.dimension == 1:
            fh.write("x1,re,im\n")
            for x, v in zip(field.axes[0], field.values):
                fh.write(f"{x:.12g},{v.real:.12g},{v.imag:.12g}\n")
        else:
            fh.write("x1,x2,re,im\n")
            for i, x1 in enumerate(field.axes[0]):
                for j, x2 in enumerate(field.axes[1]):
                    v = field.values[i, j]
                    fh.write(f"{x1:.12g},{x2:.12g},{v.real:.12g},{v.imag:.12g}\n")


def export_field_npz(field: FieldOnGrid, path: str, **extra):
    """Binary dump of axes and values."""
    arrays = {f"axis{i}": a for i, a in enumerate(field.axes)}
    np.savez_compressed(path, values=field.values, label=field.label,
                        **arrays, **extra)
