"""
Band-gap driving frequencies and the admissible long-wavelength source family.

The source has the separated form

    f_eps(x) = (2 pi)^{-d/2} ( int F(khat) e^{i khat.x} dkhat )
               * rho(x/eps) * phi_p(0; x/eps),

with F a rapidly decaying envelope spectrum.  For the built-in Gaussian
F(khat) = (2 sqrt(pi))^{-1} exp(-|khat|^2/4) the inner integral is itself a
Gaussian, available in closed form.

The driving frequency is omega^2 = omega_p^2(0) + eps^2 sigma Omega_hat^2
and must sit strictly inside a band gap (or below the whole spectrum when
p = 0, sigma = -1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import BandGap, DispersionDiagram, GammaPair
from .medium import evaluate_coefficient


class NotInGap(Exception):
    """Requested frequency intersects a sampled dispersion branch."""


@dataclass(frozen=True)
class GaussianEnvelope:
    """F(khat) = amplitude * exp(-|khat|^2/4)."""

    dimension: int
    amplitude: float = 1.0 / (2.0 * np.sqrt(np.pi))

    def spectrum(self, khat) -> np.ndarray:
        khat = np.asarray(khat, dtype=float)
        if khat.ndim == 1 and self.dimension == 1:
            sq = khat ** 2
        else:
            sq = np.sum(np.atleast_2d(khat) ** 2, axis=-1)
        return self.amplitude * np.exp(-sq / 4.0)

    def modulation(self, y) -> np.ndarray:
        """Closed form of (2 pi)^{-d/2} int F(khat) exp(i khat.y) dkhat.

        Gaussian integral: the prefactor is
        (2 pi)^{-d/2} * amplitude * (2 sqrt(pi))^d.
        """
        y = np.asarray(y, dtype=float)
        if self.dimension > 1:
            sq = np.sum(y ** 2, axis=-1)
        else:
            if y.ndim >= 2 and y.shape[-1] == 1:
                y = y[..., 0]
            sq = y ** 2
        pref = (2.0 * np.pi) ** (-self.dimension / 2.0) * self.amplitude \
            * (2.0 * np.sqrt(np.pi)) ** self.dimension
        return pref * np.exp(-sq)

    def tail_mass(self, k_max: float) -> float:
        """Envelope magnitude at the quadrature cutoff (tail indicator)."""
        return float(self.amplitude * np.exp(-k_max ** 2 / 4.0))


@dataclass(frozen=True)
class SourceSpec:
    """Envelope plus wavenumber cutoff for all quadratures."""

    envelope: GaussianEnvelope
    k_max: float = 8.0

    def __post_init__(self):
        if self.k_max <= 0:
            raise ValueError("k_max must be positive")


@dataclass(frozen=True)
class FrequencySpec:
    """Validated in-gap driving frequency."""

    branch: int
    sigma: int
    omega_hat: float
    eps: float
    omega2: float


def make_frequency(gamma: GammaPair, gaps: list[BandGap] | DispersionDiagram,
                   sigma: int, omega_hat: float, eps: float,
                   k_window: float | None = None) -> FrequencySpec:
    """Build omega^2 = omega_p^2(0) + eps^2 sigma Omega_hat^2 and validate it.

    `gaps` may be a DispersionDiagram (preferred: branch ranges are checked
    directly) or a precomputed gap list.

    With `k_window` set (only meaningful for the diagram path), the branch
    ranges are taken over |k|_inf <= k_window.  This admits frequencies that
    sit in a local gap around the zone center -- the regime a long-wavelength
    source actually probes -- even when a distant part of some branch crosses
    omega^2.  Pass eps * K_max of the source to match the synthesis window.
    """
    if sigma not in (-1, 1):
        raise ValueError("sigma must be +1 or -1")
    if omega_hat <= 0 or eps <= 0:
        raise ValueError("omega_hat and eps must be positive")
    omega2 = gamma.omega2 + eps ** 2 * sigma * omega_hat ** 2

    if isinstance(gaps, DispersionDiagram):
        omega2_table = gaps.omega2
        if k_window is not None:
            mask = np.max(np.abs(gaps.k_points), axis=1) <= k_window
            if not mask.any():
                raise ValueError("k_window excludes every diagram sample")
            omega2_table = omega2_table[mask]
        lows = omega2_table.min(axis=0)
        highs = omega2_table.max(axis=0)
        if omega2 < lows[0]:
            pass                       # below the whole spectrum: sub-acoustic
        else:
            for m in range(len(lows)):
                if lows[m] <= omega2 <= highs[m]:
                    raise NotInGap(
                        f"omega^2 = {omega2:.6g} intersects branch {m} "
                        f"range [{lows[m]:.6g}, {highs[m]:.6g}]")
            if omega2 > highs[-1]:
                raise NotInGap(
                    f"omega^2 = {omega2:.6g} above the last computed branch")
    else:
        if omega2 >= 0:
            if not any(g.contains(omega2) for g in gaps):
                raise NotInGap(f"omega^2 = {omega2:.6g} not inside any gap")
    return FrequencySpec(branch=gamma.branch, sigma=sigma,
                         omega_hat=omega_hat, eps=eps, omega2=omega2)


def sample_source(gamma: GammaPair, source: SourceSpec, eps: float,
                  x_points, quad=None) -> np.ndarray:
    """Evaluate f_eps(eps x) on points in fast coordinates.

    Material density is the sharp pointwise value; the eigenfunction is
    synthesized from its Fourier coefficients.  With `quad` given (a
    WavenumberQuadrature), the envelope modulation is computed by numerical
    quadrature instead of the closed form — the two must agree to
    quadrature accuracy.
    """
    from .fields import synthesize_periodic  # local import, no cycle at module load

    x = np.asarray(x_points, dtype=float)
    spec = gamma.spec
    rho = evaluate_coefficient(spec, "rho", x)
    phi = synthesize_periodic(gamma.basis, gamma.coeffs, x)
    if quad is None:
        mod = source.envelope.modulation(eps * x)
    else:
        F = source.envelope.spectrum(quad.nodes)
        if spec.dimension == 1:
            phase = np.exp(1j * eps * np.outer(
                x.reshape(-1), quad.nodes[:, 0]))
            mod = (2.0 * np.pi) ** -0.5 * (phase @ (quad.weights * F))
            mod = mod.reshape(x.shape[:1] if x.ndim > 1 else x.shape)
        else:
            r = x.reshape(-1, spec.dimension)
            phase = np.exp(1j * eps * (r @ quad.nodes.T))
            mod = (2.0 * np.pi) ** -1.0 * (phase @ (quad.weights * F))
            mod = mod.reshape(x.shape[:-1])
    return mod * rho * phi


def projection_check(gamma: GammaPair, source: SourceSpec, eps: float,
                     k, coeffs_other, half_width: float,
                     points_per_cell: int = 32) -> float:
    """Discrepancy between the closed-form projection of the source onto a
    Bloch mode and its brute-force trapezoid evaluation.

    Closed form: int f_eps(eps x) conj(e^{ik.x} phi(x)) dx
               = eps^{-d} (2 pi)^{d/2} conj(<rho conj(phi_p) phi>) F(k/eps).
    """
    from .fields import synthesize_periodic

    from .bloch import assemble_operator

    d = gamma.spec.dimension
    _, Bmat = assemble_operator(gamma.table, gamma.basis, np.zeros(d))
    # <rho conj(phi_p) phi> with phi = the other mode
    inner = np.vdot(gamma.coeffs, Bmat @ np.asarray(coeffs_other))
    k = np.atleast_1d(np.asarray(k, dtype=float))
    F = source.envelope.spectrum((k / eps)[None, :])[0]
    closed = (eps ** -d) * (2.0 * np.pi) ** (d / 2.0) * np.conj(inner) * F

    h = 1.0 / points_per_cell
    n = int(round(2 * half_width / h))
    ax = -half_width + (np.arange(n) + 0.5) * h
    if d == 1:
        pts = ax[:, None]
        fvals = sample_source(gamma, source, eps, pts)
        mode = np.exp(1j * k[0] * ax) * synthesize_periodic(
            gamma.basis, np.asarray(coeffs_other), pts)
        brute = np.sum(fvals * np.conj(mode)) * h
    else:
        X1, X2 = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([X1, X2], axis=-1)
        fvals = sample_source(gamma, source, eps, pts)
        mode = np.exp(1j * (k[0] * X1 + k[1] * X2)) * synthesize_periodic(
            gamma.basis, np.asarray(coeffs_other), pts)
        brute = np.sum(fvals * np.conj(mode)) * h ** 2
    return abs(brute - closed)
