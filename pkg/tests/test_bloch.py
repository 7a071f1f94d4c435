import numpy as np
import pytest
import scipy.linalg
from scipy.optimize import brentq

from blochhomog import (MediumSpec, PlaneWaveBasis, assemble_operator,
                        dispersion_diagram, eigenpair_at_gamma,
                        export_diagram_csv, find_band_gaps, fix_phase,
                        fourier_table, solve_bands, two_phase_1d)
from blochhomog.bloch import brillouin_path


# ---------------------------------------------------------------------------
# Exact spectra on homogeneous media
# ---------------------------------------------------------------------------

def test_homogeneous_spectrum_1d():
    spec = MediumSpec(dimension=1, background_G=2.0, background_rho=5.0)
    basis = PlaneWaveBasis(1, 8)
    table = fourier_table(spec, 16)
    k = 1.3
    sol = solve_bands(table, basis, [k], 5)
    j = np.arange(-8, 9)
    expected = np.sort((2.0 / 5.0) * (2 * np.pi * j + k) ** 2)[:5]
    assert np.max(np.abs(sol.omega2 - expected)) < 1e-10


def test_homogeneous_spectrum_2d():
    spec = MediumSpec(dimension=2, background_G=1.0, background_rho=1.0)
    basis = PlaneWaveBasis(2, 4)
    table = fourier_table(spec, 8)
    k = np.array([0.3, -0.2])
    sol = solve_bands(table, basis, k, 4)
    expected = np.sort(np.sum((2 * np.pi * basis.indices + k) ** 2, axis=1))[:4]
    assert np.max(np.abs(sol.omega2 - expected)) < 1e-10


# ---------------------------------------------------------------------------
# Pencil invariants
# ---------------------------------------------------------------------------

def test_b_orthonormal_eigenvectors(med1d):
    basis = PlaneWaveBasis(1, 16)
    table = fourier_table(med1d, 32)
    sol = solve_bands(table, basis, [0.7], 6)
    _, B = assemble_operator(table, basis, [0.7])
    gram = sol.vectors.conj().T @ B @ sol.vectors
    assert np.max(np.abs(gram - np.eye(6))) < 1e-10


def test_periodicity_under_reciprocal_shift(med1d):
    """The pencil at k + 2*pi*e1 equals the pencil at k on the index-shifted
    basis, so the spectra coincide exactly."""
    basis = PlaneWaveBasis(1, 12)
    table = fourier_table(med1d, 26)      # covers all differences; shift safe
    k = 0.9
    S2, B2 = assemble_operator(table, basis, [k + 2 * np.pi])
    # hand-built pencil on the shifted index set {j + 1} at wavevector k
    jj = basis.indices[:, 0] + 1
    diff = jj[:, None] - jj[None, :]
    G = np.array([[table.value("G", [n]) for n in row] for row in diff])
    R = np.array([[table.value("rho", [n]) for n in row] for row in diff])
    freqs = 2 * np.pi * jj + k
    S_shift = G * np.outer(freqs, freqs)
    w2 = scipy.linalg.eigh(S2, B2, eigvals_only=True, subset_by_index=(0, 5))
    w2s = scipy.linalg.eigh(S_shift, R, eigvals_only=True, subset_by_index=(0, 5))
    assert np.max(np.abs(w2 - w2s)) < 1e-10 * max(1.0, np.max(np.abs(w2)))


def test_time_reversal(med1d):
    basis = PlaneWaveBasis(1, 12)
    table = fourier_table(med1d, 24)
    a = solve_bands(table, basis, [1.1], 4).omega2
    b = solve_bands(table, basis, [-1.1], 4).omega2
    assert np.max(np.abs(a - b)) < 1e-10


def test_variational_monotonicity(med1d):
    """Galerkin eigenvalues decrease monotonically as the basis grows."""
    k = [1.0]
    prev = None
    for N in (8, 16, 32):
        basis = PlaneWaveBasis(1, N)
        table = fourier_table(med1d, 2 * N)
        w2 = solve_bands(table, basis, k, 4).omega2
        if prev is not None:
            assert np.all(w2 <= prev + 1e-12)
        prev = w2


def test_discrete_parseval(med1d):
    basis = PlaneWaveBasis(1, 6)
    table = fourier_table(med1d, 12)
    M = basis.size
    sol = solve_bands(table, basis, [0.4], M)
    _, B = assemble_operator(table, basis, [0.4])
    rng = np.random.default_rng(7)
    x = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    coeffs = sol.vectors.conj().T @ (B @ x)
    lhs = float(np.sum(np.abs(coeffs) ** 2))
    rhs = float(np.real(np.vdot(x, B @ x)))
    assert abs(lhs - rhs) < 1e-10 * rhs


# ---------------------------------------------------------------------------
# Transfer-matrix oracle for the layered medium
# ---------------------------------------------------------------------------

def transfer_matrix_edges(G, rho, n_edges=4):
    """Band edges of a half-half bilayer from the monodromy trace.

    cos k = cos(w s1 l1) cos(w s2 l2)
            - (z1^2 + z2^2)/(2 z1 z2) sin(w s1 l1) sin(w s2 l2),
    edges at trace = +-1.
    """
    s1, s2 = np.sqrt(rho[0] / G[0]), np.sqrt(rho[1] / G[1])
    z1, z2 = np.sqrt(G[0] * rho[0]), np.sqrt(G[1] * rho[1])

    def trace(w):
        a, b = 0.5 * w * s1, 0.5 * w * s2
        return (np.cos(a) * np.cos(b)
                - (z1 ** 2 + z2 ** 2) / (2 * z1 * z2) * np.sin(a) * np.sin(b))

    ws = np.linspace(1e-6, 30.0, 60001)
    edges = []
    for target in (1.0, -1.0):
        g = trace(ws) - target
        for i in range(len(ws) - 1):
            if g[i] * g[i + 1] < 0:
                edges.append(brentq(lambda w: trace(w) - target,
                                    ws[i], ws[i + 1]))
    return np.sort(np.asarray(edges))[:n_edges]


def test_band_edges_match_transfer_matrix(med1d):
    oracle = transfer_matrix_edges((1.0, 6.0), (1.0, 20.0), n_edges=4)

    def edges_at(N):
        basis = PlaneWaveBasis(1, N)
        table = fourier_table(med1d, 2 * N)
        w0 = solve_bands(table, basis, [0.0], 3).omega2
        wp = solve_bands(table, basis, [np.pi], 3).omega2
        # nonzero edges: branch 0 and 1 at k=pi, branches 1 and 2 at k=0
        return np.sort(np.sqrt(np.array([wp[0], wp[1], w0[1], w0[2]])))

    e64, e128 = edges_at(64), edges_at(128)
    extrap = 2.0 * e128 - e64            # leading 1/N bias removed
    rel = np.abs(extrap - oracle) / oracle
    assert np.max(rel) < 1e-4


# ---------------------------------------------------------------------------
# Diagrams, gaps, export
# ---------------------------------------------------------------------------

def test_brillouin_path_2d_geometry():
    pts, arc, ticks, labels = brillouin_path(2, samples_per_segment=10)
    assert labels == ["Gamma", "X", "M", "Gamma"]
    assert np.allclose(pts[0], [0.0, 0.0]) and np.allclose(pts[-1], [0.0, 0.0])
    assert np.all(np.diff(arc) > 0)
    assert abs(ticks[-1] - (2 * np.pi + np.sqrt(2) * np.pi)) < 1e-12


def test_find_band_gaps_1d(med1d):
    diagram = dispersion_diagram(med1d, cutoff=16, count=4,
                                 samples_per_segment=40)
    gaps = find_band_gaps(diagram)
    assert len(gaps) >= 2
    g0 = gaps[0]
    assert g0.below_branch == 0
    assert abs(g0.omega2_low - diagram.omega2[:, 0].max()) < 1e-12
    assert abs(g0.omega2_high - diagram.omega2[:, 1].min()) < 1e-12
    assert g0.contains(0.5 * (g0.omega2_low + g0.omega2_high))
    assert not g0.contains(g0.omega2_low)


def test_export_diagram_csv(tmp_path, med1d):
    diagram = dispersion_diagram(med1d, cutoff=8, count=3,
                                 samples_per_segment=5)
    path = tmp_path / "disp.csv"
    export_diagram_csv(diagram, str(path), header_lines=["probe"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# probe"
    assert lines[1] == "k_index,k_1,m,omega"
    nk = diagram.omega2.shape[0]
    assert len(lines) == 2 + 3 * nk

    npath = tmp_path / "disp_norm.csv"
    export_diagram_csv(diagram, str(npath), normalized=True, G1=1.0, rho1=1.0)
    row = npath.read_text().splitlines()[1].split(",")
    assert abs(float(row[1]) - diagram.k_points[0, 0] / np.pi) < 1e-12


# ---------------------------------------------------------------------------
# Zone-center eigenpair
# ---------------------------------------------------------------------------

def test_fix_phase():
    rng = np.random.default_rng(3)
    v = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    w = fix_phase(v)
    assert abs(np.linalg.norm(w) - np.linalg.norm(v)) < 1e-12
    assert w[0].imag < 1e-12 and w[0].real > 0


def test_gamma_pair_normalization(gamma1d_32):
    _, B = assemble_operator(gamma1d_32.table, gamma1d_32.basis, [0.0])
    norm = np.vdot(gamma1d_32.coeffs, B @ gamma1d_32.coeffs)
    assert abs(norm - 1.0) < 1e-10
    assert gamma1d_32.simple


def test_simplicity_flags(med2d):
    homog = MediumSpec(dimension=1, background_G=1.0, background_rho=1.0)
    degenerate = eigenpair_at_gamma(homog, 1, 8)   # +-1 modes coincide
    assert not degenerate.simple
    p3 = eigenpair_at_gamma(med2d, 3, 8)
    assert p3.simple and p3.separation > 1e-2


def test_solve_bands_validation(med1d):
    basis = PlaneWaveBasis(1, 4)
    table = fourier_table(med1d, 8)
    with pytest.raises(ValueError):
        solve_bands(table, basis, [0.0], 0)
    with pytest.raises(ValueError):
        solve_bands(table, basis, [0.0, 0.0], 2)
    small = fourier_table(med1d, 4)
    with pytest.raises(ValueError):
        assemble_operator(small, basis, [0.0])
