import numpy as np
import pytest
import scipy.linalg

from twogrid.problems import (Grid2D, build_biharmonic, build_convection_diffusion,
                              build_helmholtz, inject, make_pair, parse_h)

from oracles import biharmonic_dense, conv_diff_dense, laplacian_1d


@pytest.mark.parametrize("h, n", [("1/512", 261121), ("1/64", 3969),
                                  ("1/128", 16129), ("1/256", 65025)])
def test_grid_sizes(h, n):
    assert Grid2D.from_h(h).n == n


@pytest.mark.parametrize("bad", ["2/7", 0.3, "-1/4"])
def test_parse_h_rejects_non_reciprocals(bad):
    with pytest.raises(ValueError):
        parse_h(bad)


def test_parse_h_forms():
    assert parse_h("1/16") == parse_h(0.0625) == parse_h(16)


def test_conv_diff_matches_looped_oracle():
    _, A, _ = build_convection_diffusion("1/8")
    np.testing.assert_allclose(A.toarray(), conv_diff_dense(8), rtol=1e-14, atol=1e-14)


def test_pure_laplacian_h_quarter():
    g, A, _ = build_convection_diffusion("1/4", scaled=False, beta=0.0, diffusion=False)
    T = laplacian_1d(3)
    L = (np.kron(np.eye(3), T) + np.kron(T, np.eye(3))) * 16
    assert g.n == 9
    np.testing.assert_allclose(A.toarray(), L, atol=1e-12)


def test_laplacian_eigenvalues_analytic():
    N1 = 16
    h = 1.0 / N1
    _, A, _ = build_convection_diffusion(f"1/{N1}", scaled=False, beta=0.0,
                                         diffusion=False)
    w = np.sort(np.linalg.eigvalsh(A.toarray()))
    i = np.arange(1, N1)
    s = np.sin(i * np.pi * h / 2) ** 2
    exact = np.sort((4 / h ** 2 * (s[:, None] + s[None, :])).ravel())
    np.testing.assert_allclose(w, exact, rtol=1e-10)


def test_conv_diff_rhs_unit_norm():
    P = make_pair("convection-diffusion", "1/64", "1/16")
    assert np.linalg.norm(P.rhs) == pytest.approx(1.0, abs=1e-14)


def test_helmholtz_symmetric_and_spectrum():
    _, A, _ = build_helmholtz("1/32", kappa=30.0)
    S = A.to_scipy()
    D = S - S.T
    assert D.count_nonzero() == 0
    _, L, _ = build_helmholtz("1/8", kappa=0.0, scaled=False)
    lam = np.linalg.eigvalsh(L.toarray())[0]
    assert abs(lam - 2 * np.pi ** 2) / (2 * np.pi ** 2) < 0.03


def test_helmholtz_shift():
    _, A0, _ = build_helmholtz("1/16", kappa=0.0, scaled=False)
    _, A1, _ = build_helmholtz("1/16", kappa=10.0, scaled=False)
    np.testing.assert_allclose((A0.to_scipy() - A1.to_scipy()).toarray(),
                               100.0 * np.eye(225), atol=1e-9)


def test_biharmonic_matches_oracle_and_nnz():
    _, A, b = build_biharmonic("1/12")
    np.testing.assert_allclose(A.toarray(), biharmonic_dense(12), rtol=1e-13, atol=1e-12)
    nnz = np.diff(A.row_ptr)
    assert nnz.max() == 13
    N = 11
    ix, iy = np.arange(N * N) % N, np.arange(N * N) // N
    interior = (ix >= 2) & (ix < N - 2) & (iy >= 2) & (iy < N - 2)
    assert np.all(nnz[interior] == 13) and np.all(nnz[~interior] < 13)
    assert b.shape == (121,)


def test_stencil_widths_conv_diff():
    _, A, _ = build_convection_diffusion("1/10")
    nnz = np.diff(A.row_ptr)
    N = 9
    ix, iy = np.arange(N * N) % N, np.arange(N * N) // N
    interior = (ix > 0) & (ix < N - 1) & (iy > 0) & (iy < N - 1)
    assert np.all(nnz[interior] == 5) and np.all(nnz[~interior] < 5)


@pytest.mark.parametrize("family, fine, coarse, sizes", [
    ("convection-diffusion", "1/512", "1/64", (261121, 3969)),
    ("biharmonic", "1/512", "1/128", (261121, 16129)),
    ("convection-diffusion", "1/16", "1/8", (225, 49)),
])
def test_make_pair_sizes(family, fine, coarse, sizes):
    if sizes[0] > 100000:
        # sizes only; skip the large assembly
        assert (Grid2D.from_h(fine).n, Grid2D.from_h(coarse).n) == sizes
        return
    P = make_pair(family, fine, coarse)
    assert (P.fine_grid.n, P.coarse_grid.n) == sizes
    assert P.coarse_scale == 4


def test_nesting_coincident_points():
    f, c = Grid2D.from_h("1/16"), Grid2D.from_h("1/8")
    x, y = f.mesh()
    xc, yc = c.mesh()
    np.testing.assert_allclose(inject(f, c, x), xc)
    np.testing.assert_allclose(inject(f, c, y), yc)


def test_random_rhs_reproducible_and_injected():
    P1 = make_pair("helmholtz", "1/32", "1/8", seed=7, kappa=20.0)
    P2 = make_pair("helmholtz", "1/32", "1/8", seed=7, kappa=20.0)
    np.testing.assert_array_equal(P1.rhs, P2.rhs)
    np.testing.assert_allclose(P1.coarse_rhs,
                               inject(P1.fine_grid, P1.coarse_grid, P1.rhs) * 16)


@pytest.mark.parametrize("coarse", ["1/24", "1/32", "1/64"])
def test_make_pair_bad_ratio(coarse):
    with pytest.raises(ValueError):
        make_pair("convection-diffusion", "1/32", coarse)


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown problem family"):
        make_pair("poisson3d", "1/16")


def test_conv_diff_nonsymmetric_but_stable():
    _, A, _ = build_convection_diffusion("1/16")
    D = A.toarray()
    assert not np.allclose(D, D.T)
    assert np.all(scipy.linalg.eigvals(D).real > 0)
