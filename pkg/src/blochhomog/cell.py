"""
Cell problems at the zone center and the effective coefficients they yield.

Everything here lives in the same truncated plane-wave space as the Bloch
eigensolver.  Writing the stiffness pencil at k = eps*khat as

    S(eps*khat) = S0 + eps khat.S1 + eps^2 |khat|^2 Gm,

the branch-p eigenpair admits an expansion whose successive orders are the
cell problems.  Solving them in matrix form keeps the discrete dispersion
relation and the effective tensors consistent to machine precision at any
truncation level.

Cell functions follow the convention that the eigenvector expansion reads

    c(eps khat) = c0 + chi1 . (i eps khat) + chi2 : (i eps khat)^2
                     + chi3 : (i eps khat)^3 + O(eps^4),

with every correction B-orthogonal to c0 (zero rho-weighted mean), and

    omega_p^2(eps khat) = w0 + eps^2 w2(khat) + eps^4 w4(khat) + O(eps^6),
    w2 = -(mu0/rho0) : (i khat)^2,   w4 = -(mu2/rho0) : (i khat)^4.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .bloch import GammaPair, PlaneWaveBasis, solve_bands
from .medium import CoefficientTable, MediumSpec
from . import bloch as _bloch

COMPAT_TOL = 1e-9
CONSTRAINT_TOL = 1e-10
RESIDUAL_TOL = 1e-10
DIAGNOSTIC_TOL = 1e-7


class CompatibilityViolation(Exception):
    """Right-hand side not orthogonal to the zone-center eigenfunction."""


class SingularSystem(Exception):
    """Bordered cell-problem system could not be factorized."""


# ---------------------------------------------------------------------------
# Tensor symmetrization
# ---------------------------------------------------------------------------

def symmetrize_full(T: np.ndarray) -> np.ndarray:
    """Average over all permutations of the tensor indices."""
    n = T.ndim
    perms = list(itertools.permutations(range(n)))
    return sum(np.transpose(T, p) for p in perms) / len(perms)


def symmetrize_partial(T: np.ndarray) -> np.ndarray:
    """Average over permutations of all indices except the first."""
    n = T.ndim
    perms = list(itertools.permutations(range(1, n)))
    return sum(np.transpose(T, (0,) + p) for p in perms) / len(perms)


# ---------------------------------------------------------------------------
# Matrix blocks of the pencil expansion at k = 0
# ---------------------------------------------------------------------------

def pencil_blocks(table: CoefficientTable, basis: PlaneWaveBasis):
    """Return (S0, S1_list, Gm, B) with S(k) = S0 + sum k_a S1[a] + |k|^2 Gm."""
    G_mat = _bloch._difference_matrix(table, basis, "G")
    rho_mat = _bloch._difference_matrix(table, basis, "rho")
    tp = 2.0 * np.pi * basis.indices          # (M, d)
    S0 = G_mat * (tp @ tp.T)
    S0 = 0.5 * (S0 + S0.conj().T)
    S1 = [G_mat * (tp[:, a][:, None] + tp[:, a][None, :])
          for a in range(basis.dimension)]
    B = 0.5 * (rho_mat + rho_mat.conj().T)
    return S0, S1, G_mat, B


class ConstrainedSolver:
    """Solve (S0 - w0 B) x = rhs subject to c0^H B x = 0 via a bordered system.

    The operator is singular on span(c0); the border adds the Lagrange
    multiplier that projects the right-hand side onto the compatible
    subspace.  One LU factorization is shared by all right-hand sides.
    """

    def __init__(self, S0, B, omega2, c0):
        n = S0.shape[0]
        A = S0 - omega2 * B
        b = B @ c0
        K = np.zeros((n + 1, n + 1), dtype=complex)
        K[:n, :n] = A
        K[:n, n] = b
        K[n, :n] = b.conj()
        try:
            self._lu = scipy.linalg.lu_factor(K)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(str(exc)) from exc
        self._A = A
        self._b = b
        self._c0 = c0
        self._n = n
        # roundoff floor: below this an RHS is numerically zero and the
        # relative compatibility test would be meaningless
        self._floor = 1e-12 * (1.0 + np.mean(np.abs(np.diag(A))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for one right-hand side; checks compatibility and residual."""
        scale = np.linalg.norm(rhs)
        if scale < self._floor:
            return np.zeros(self._n, dtype=complex)
        incompat = abs(np.vdot(self._c0, rhs))
        if scale > 0 and incompat > COMPAT_TOL * scale:
            raise CompatibilityViolation(
                f"<rhs, phi_p> = {incompat:.3e} exceeds {COMPAT_TOL:.0e} * |rhs|")
        full = np.zeros(self._n + 1, dtype=complex)
        full[:self._n] = rhs
        sol = scipy.linalg.lu_solve(self._lu, full)
        x, mult = sol[:self._n], sol[self._n]
        res = np.linalg.norm(self._A @ x + mult * self._b - rhs)
        if scale > 0 and res > max(RESIDUAL_TOL, 1e-12) * max(scale, 1.0) * 100:
            raise SingularSystem(f"bordered solve residual {res:.3e}")
        constraint = abs(np.vdot(self._b, x))
        if constraint > CONSTRAINT_TOL * max(np.linalg.norm(x), 1.0):
            raise SingularSystem(f"zero-mean constraint violated: {constraint:.3e}")
        return x


# ---------------------------------------------------------------------------
# Cell functions
# ---------------------------------------------------------------------------

@dataclass
class CellFunctions:
    """First, second, and third corrector fields in coefficient form.

    chi1: (M, d); chi2: (M, d, d); chi3: (M, d, d, d).  All have zero
    rho-weighted mean against the zone-center eigenfunction.
    """

    gamma: GammaPair
    chi1: np.ndarray
    chi2: np.ndarray
    chi3: np.ndarray


def solve_cell_functions(gamma: GammaPair) -> CellFunctions:
    """Solve the three cell problems for one zone-center eigenpair."""
    if not gamma.simple:
        raise ValueError(
            f"branch {gamma.branch} eigenvalue is not simple "
            f"(relative separation {gamma.separation:.2e})")
    basis, table = gamma.basis, gamma.table
    d = basis.dimension
    M = basis.size
    S0, S1, Gm, B = pencil_blocks(table, basis)
    # the hierarchy below assumes unit rho-normalization; enforce it so a
    # rescaled eigenvector yields identical correctors
    c0 = gamma.coeffs
    c0 = c0 / np.sqrt(np.real(np.vdot(c0, B @ c0)))
    solver = ConstrainedSolver(S0, B, gamma.omega2, c0)

    gc0 = Gm @ c0
    bc0 = B @ c0

    # first corrector: (S0 - w0 B) chi1_a = i S1_a c0
    chi1 = np.zeros((M, d), dtype=complex)
    for a in range(d):
        chi1[:, a] = solver.solve(1j * (S1[a] @ c0))

    # quadratic dispersion tensor (mu0 / rho0)
    A2 = np.zeros((d, d), dtype=complex)
    for a in range(d):
        for b in range(d):
            A2[a, b] = 1j * np.vdot(c0, S1[a] @ chi1[:, b])
    A2 = 0.5 * (A2 + A2.T) + np.eye(d) * np.vdot(c0, gc0)

    # second corrector:
    # (S0 - w0 B) chi2_ab = sym_ab[ i S1_a chi1_b + delta_ab Gm c0 - A2_ab B c0 ]
    chi2 = np.zeros((M, d, d), dtype=complex)
    for a in range(d):
        for b in range(a, d):
            rhs = 0.5 * (1j * (S1[a] @ chi1[:, b]) + 1j * (S1[b] @ chi1[:, a]))
            if a == b:
                rhs = rhs + gc0
            rhs = rhs - A2[a, b] * bc0
            chi2[:, a, b] = solver.solve(rhs)
            chi2[:, b, a] = chi2[:, a, b]

    # third corrector:
    # (S0 - w0 B) chi3_abc =
    #     sym_abc[ i S1_a chi2_bc + delta_ab Gm chi1_c - A2_ab B chi1_c ]
    chi3 = np.zeros((M, d, d, d), dtype=complex)
    done = {}
    for a in range(d):
        for b in range(d):
            for c in range(d):
                key = tuple(sorted((a, b, c)))
                if key in done:
                    chi3[:, a, b, c] = chi3[:, key[0], key[1], key[2]]
                    continue
                terms = []
                for (i, j, l) in set(itertools.permutations((a, b, c))):
                    t = 1j * (S1[i] @ chi2[:, j, l])
                    if i == j:
                        t = t + Gm @ chi1[:, l]
                    t = t - A2[i, j] * (B @ chi1[:, l])
                    terms.append(t)
                rhs = sum(terms) / len(terms)
                chi3[:, a, b, c] = solver.solve(rhs)
                done[key] = True
    return CellFunctions(gamma=gamma, chi1=chi1, chi2=chi2, chi3=chi3)


# ---------------------------------------------------------------------------
# Effective coefficients
# ---------------------------------------------------------------------------

@dataclass
class EffectiveCoefficients:
    """Effective tensors of the second-order macroscopic model.

    mu0 (d,d) and mu2 (d,d,d,d) enter the dispersion expansion through
    w2 = -(mu0/rho0):(i khat)^2 and w4 = -(mu2/rho0):(i khat)^4.  The
    odd/cross tensors rho1, mu1, rho2 vanish analytically and are kept as
    numerical diagnostics.  corrector_cov is <rho chi1 (x) conj(chi1)>,
    the tensor weighting the second-gradient term of the order-2 field.
    """

    gamma: GammaPair
    cell: CellFunctions
    alpha_p: float
    rho0: float
    mu0: np.ndarray
    mu2: np.ndarray
    rho1: np.ndarray
    mu1: np.ndarray
    rho2: np.ndarray
    corrector_cov: np.ndarray
    diagnostics_ok: bool

    def omega2_expansion(self, khat, eps: float) -> float:
        """omega_p^2(eps*khat) through fourth order."""
        khat = np.atleast_1d(np.asarray(khat, dtype=float))
        w2 = np.einsum("ab,a,b->", self.mu0, khat, khat) / self.rho0
        w4 = -np.einsum("abcd,a,b,c,d->", self.mu2, khat, khat, khat, khat) / self.rho0
        return self.gamma.omega2 + eps ** 2 * w2.real + eps ** 4 * w4.real

    def quadratic_form(self, khat) -> float:
        """(mu0/rho0) : khat khat, the leading dispersion curvature."""
        khat = np.atleast_1d(np.asarray(khat, dtype=float))
        return float(np.einsum("ab,a,b->", self.mu0, khat, khat).real / self.rho0)

    def quartic_form(self, khat) -> float:
        """-(mu2/rho0) : khat^4, the next dispersion correction."""
        khat = np.atleast_1d(np.asarray(khat, dtype=float))
        return float(-np.einsum("abcd,a,b,c,d->", self.mu2,
                                khat, khat, khat, khat).real / self.rho0)


def effective_coefficients(cell: CellFunctions) -> EffectiveCoefficients:
    """Averages of the corrector fields: effective tensors plus diagnostics.

    All cell averages are evaluated exactly in Fourier space; the
    coefficient tables extend to twice the basis cutoff, so products of a
    material field with two basis functions carry no truncation error.
    """
    gamma = cell.gamma
    basis, table = gamma.basis, gamma.table
    d = basis.dimension
    _, S1, Gm, B = pencil_blocks(table, basis)
    # same unit rho-normalization as the cell solves
    c0 = gamma.coeffs
    c0 = c0 / np.sqrt(np.real(np.vdot(c0, B @ c0)))

    alpha_p = 1.0 / float(np.real(np.vdot(c0, c0)))   # <|phi_p|^2>^-1
    rho0 = alpha_p * float(np.real(np.vdot(c0, B @ c0)))

    def flux_average(chi_lower, chi_higher):
        """alpha_p < {G(grad chi^(n) + I (x) chi^(n-1)) conj(phi_p)}
                     - {G chi^(n) (x) conj(grad phi_p)} >, fully symmetrized.

        In matrix form the pair of terms contracts to
        i c0^H S1_a chi^(n)_... + delta_ab c0^H Gm chi^(n-1)_...
        """
        shape = chi_higher.shape[1:]
        out = np.zeros((d,) + shape, dtype=complex)
        for a in range(d):
            for rest in itertools.product(range(d), repeat=len(shape)):
                val = 1j * np.vdot(c0, S1[a] @ chi_higher[(slice(None),) + rest])
                if a == rest[0]:
                    val += np.vdot(c0, Gm @ chi_lower[(slice(None),) + rest[1:]])
                out[(a,) + rest] = val
        return alpha_p * symmetrize_full(out)

    # mu0: chi_higher = chi1, chi_lower = phi_p itself
    mu0 = np.zeros((d, d), dtype=complex)
    gc0 = Gm @ c0
    for a in range(d):
        for b in range(d):
            mu0[a, b] = 1j * np.vdot(c0, S1[a] @ cell.chi1[:, b])
            if a == b:
                mu0[a, b] += np.vdot(c0, gc0)
    mu0 = alpha_p * symmetrize_full(mu0)

    mu1 = flux_average(cell.chi1, cell.chi2)          # (d,d,d), should vanish
    mu2 = flux_average(cell.chi2, cell.chi3)          # (d,d,d,d)

    rho1 = alpha_p * np.array([np.vdot(c0, B @ cell.chi1[:, a]) for a in range(d)])
    rho2 = alpha_p * np.array([[np.vdot(c0, B @ cell.chi2[:, a, b])
                                for b in range(d)] for a in range(d)])

    cov = np.zeros((d, d), dtype=complex)
    for a in range(d):
        for b in range(d):
            cov[a, b] = np.vdot(cell.chi1[:, b], B @ cell.chi1[:, a])

    scale = max(np.abs(mu0).max(), 1e-300)
    diag_ok = (np.abs(rho1).max() < DIAGNOSTIC_TOL * max(rho0, 1.0)
               and np.abs(rho2).max() < DIAGNOSTIC_TOL * max(rho0, 1.0)
               and np.abs(mu1).max() < DIAGNOSTIC_TOL * scale)

    return EffectiveCoefficients(
        gamma=gamma, cell=cell, alpha_p=alpha_p, rho0=rho0,
        mu0=mu0.real.copy(), mu2=mu2.real.copy(),
        rho1=rho1, mu1=mu1, rho2=rho2,
        corrector_cov=cov, diagnostics_ok=diag_ok)


def extrapolated_coefficients(fine: EffectiveCoefficients,
                              coarse: EffectiveCoefficients) -> EffectiveCoefficients:
    """Richardson-extrapolate the effective tensors in 1/cutoff.

    For sharp (discontinuous) media the Galerkin effective tensors converge
    like 1/N; combining two cutoffs N and N/2 removes the leading bias.
    The corrector fields keep the fine-level values.
    """
    nf = fine.gamma.basis.cutoff
    nc = coarse.gamma.basis.cutoff
    if nf <= nc:
        raise ValueError("fine cutoff must exceed coarse cutoff")
    # weights solving a + b = 1, a/nf + b/nc = 0
    a = nf / (nf - nc)
    b = 1.0 - a
    out = EffectiveCoefficients(
        gamma=fine.gamma, cell=fine.cell, alpha_p=fine.alpha_p,
        rho0=a * fine.rho0 + b * coarse.rho0,
        mu0=a * fine.mu0 + b * coarse.mu0,
        mu2=a * fine.mu2 + b * coarse.mu2,
        rho1=fine.rho1, mu1=fine.mu1, rho2=fine.rho2,
        corrector_cov=fine.corrector_cov, diagnostics_ok=fine.diagnostics_ok)
    return out


# ---------------------------------------------------------------------------
# Dispersion expansion self-test
# ---------------------------------------------------------------------------

def dispersion_expansion_check(eff: EffectiveCoefficients, khat,
                               eps_list) -> dict:
    """Remainder |omega_p^2(eps khat) - 4th-order expansion| and its slope.

    The remainder should scale like eps^6; the returned slope is the
    log-log least-squares fit over eps_list.
    """
    gamma = eff.gamma
    khat = np.atleast_1d(np.asarray(khat, dtype=float))
    remainders = []
    for eps in eps_list:
        sol = solve_bands(gamma.table, gamma.basis, eps * khat,
                          gamma.branch + 1)
        exact = sol.omega2[gamma.branch]
        approx = eff.omega2_expansion(khat, eps)
        remainders.append(abs(exact - approx))
    eps_arr = np.asarray(eps_list, dtype=float)
    rem = np.asarray(remainders)
    good = rem > 0
    slope = np.nan
    if good.sum() >= 2:
        slope = np.polyfit(np.log(eps_arr[good]), np.log(rem[good]), 1)[0]
    return {"eps": eps_arr, "remainder": rem, "slope": float(slope)}
