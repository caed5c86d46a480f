"""Independent reference computations used by the tests.

Nothing here imports the package's solvers: matrices are rebuilt from the
difference formulas point by point, and solvers are replaced by dense
numpy/scipy calls.
"""
import numpy as np
import scipy.linalg


def conv_diff_dense(N1, beta=40.0):
    """h^2-scaled central-difference convection-diffusion matrix, looped."""
    h = 1.0 / N1
    N = N1 - 1
    n = N * N
    A = np.zeros((n, n))
    for j in range(N):
        for i in range(N):
            x, y = (i + 1) * h, (j + 1) * h
            a = np.exp(5 * x * y)
            row = i + N * j
            A[row, row] = 4 * a
            for di, dj, c in ((1, 0, -a + beta * h / 2), (-1, 0, -a - beta * h / 2),
                              (0, 1, -a + beta * h / 2), (0, -1, -a - beta * h / 2)):
                ii, jj = i + di, j + dj
                if 0 <= ii < N and 0 <= jj < N:
                    A[row, ii + N * jj] = c
    return A


def laplacian_1d(N):
    return 2 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1)


def biharmonic_dense(N1, beta=40.0):
    """h^4-scaled (Dxx + Dyy)^2 - beta h^4 Dxxx with zero boundary values.

    Built from 1-D operators on an extended grid so that values one point
    outside the domain are zero (the 13-point stencil truncated), not the
    reflected values a Kronecker product of truncated 1-D matrices gives.
    """
    h = 1.0 / N1
    N = N1 - 1
    n = N * N
    A = np.zeros((n, n))
    st = {(0, 0): 20.0}
    for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        st[d] = -8.0
    for d in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        st[d] = 2.0
    for d in ((2, 0), (-2, 0), (0, 2), (0, -2)):
        st[d] = 1.0
    # central u_xxx ~ (u_{i+2} - 2u_{i+1} + 2u_{i-1} - u_{i-2}) / (2h^3)
    for dx, c in ((2, 1.0), (1, -2.0), (-1, 2.0), (-2, -1.0)):
        st[(dx, 0)] = st.get((dx, 0), 0.0) - beta * h * c / 2
    for j in range(N):
        for i in range(N):
            for (di, dj), c in st.items():
                ii, jj = i + di, j + dj
                if 0 <= ii < N and 0 <= jj < N:
                    A[i + N * j, ii + N * jj] += c
    return A


def dense_gmres_min(A, r0, m):
    """min ||r0 - A z|| over z in K_m(A, r0) by explicit least squares."""
    K = np.empty((len(r0), m))
    v = r0 / np.linalg.norm(r0)
    for j in range(m):
        K[:, j] = v
        v = A @ v
        v /= np.linalg.norm(v)
    Q, _ = np.linalg.qr(K)
    y, *_ = np.linalg.lstsq(A @ Q, r0, rcond=None)
    return Q @ y


def galerkin_dense(A, V, r0):
    d = np.linalg.solve(V.T @ A @ V, V.T @ r0)
    return V @ d, r0 - A @ V @ d


def minres_dense(A, V, r0):
    AV = A @ V
    d = np.linalg.solve(AV.T @ AV, AV.T @ r0)
    return V @ d, r0 - AV @ d


def cycle_tol_reference(rtol, ncyc, icyc, r0, r):
    a = (rtol * r0 / r) ** (1.0 / (ncyc - icyc + 1))
    b = (r0 / r) * rtol ** (icyc / ncyc)
    return min(a, b)


def smallest_eigs(A, k):
    w = scipy.linalg.eigvals(A)
    return w[np.argsort(np.abs(w))][:k]
