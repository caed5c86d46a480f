"""Finite-difference model problems on the unit square.

Unknowns are interior grid values in lexicographic order with x running
fastest.  By default matrices are scaled to unit stencil size (multiplied by
h^2 for second-order operators and h^4 for the biharmonic), which keeps
absolute eigen-residual tolerances and the ILU diagonal shift meaningful
across grids; pass ``scaled=False`` for the plain 1/h^p difference operator.
"""
from __future__ import annotations

import dataclasses
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .linalg import CsrMatrix

__all__ = ["Grid2D", "ProblemInstance", "parse_h", "build_convection_diffusion",
           "build_helmholtz", "build_biharmonic", "make_pair", "FAMILIES"]

FAMILIES = ("convection-diffusion", "helmholtz", "biharmonic")
NOMINAL_NNZ = {"convection-diffusion": 5, "helmholtz": 5, "biharmonic": 13}
ORDER = {"convection-diffusion": 2, "helmholtz": 2, "biharmonic": 4}


def parse_h(h) -> Fraction:
    """Mesh width as an exact fraction 1/N1; accepts '1/512', 0.125, 512..."""
    if isinstance(h, str):
        h = h.strip()
        f = Fraction(h)
    elif isinstance(h, Fraction):
        f = h
    elif isinstance(h, (int, np.integer)) and h > 1:
        f = Fraction(1, int(h))
    else:
        inv = 1.0 / float(h)
        if abs(inv - round(inv)) > 1e-9 * inv:
            raise ValueError(f"mesh width {h} is not the reciprocal of an integer")
        f = Fraction(1, int(round(inv)))
    if f <= 0 or f.numerator != 1:
        raise ValueError(f"mesh width {h} is not the reciprocal of an integer")
    return f


@dataclasses.dataclass(frozen=True)
class Grid2D:
    h: Fraction
    N: int

    @classmethod
    def from_h(cls, h) -> "Grid2D":
        h = parse_h(h)
        return cls(h, h.denominator - 1)

    @property
    def n(self) -> int:
        return self.N * self.N

    @property
    def hf(self) -> float:
        return float(self.h)

    def coords(self):
        """1-D interior coordinates (same along x and y)."""
        return np.arange(1, self.N + 1) * self.hf

    def mesh(self):
        """Flattened (x, y) of every unknown."""
        t = self.coords()
        X, Y = np.meshgrid(t, t)  # rows are y, columns are x
        return X.ravel(), Y.ravel()


@dataclasses.dataclass
class ProblemInstance:
    label: str
    fine_grid: Grid2D
    fine_matrix: CsrMatrix
    rhs: np.ndarray
    coarse_grid: Optional[Grid2D] = None
    coarse_matrix: Optional[CsrMatrix] = None
    coarse_rhs: Optional[np.ndarray] = None
    nnz_per_row_nominal: int = 5
    rhs_seed: Optional[int] = None
    params: dict = dataclasses.field(default_factory=dict)

    @property
    def ratio(self) -> int:
        return int(self.coarse_grid.h / self.fine_grid.h)

    @property
    def coarse_scale(self) -> int:
        return self.ratio ** 2


def _assemble(grid: Grid2D, stencil) -> CsrMatrix:
    """Assemble from ``[(dx, dy, coeff), ...]``; coeff is a scalar or an
    array over unknowns.  Neighbours outside the interior are dropped, i.e.
    boundary and ghost values are zero."""
    N = grid.N
    idx = np.arange(grid.n)
    ix, iy = idx % N, idx // N
    rows, cols, vals = [], [], []
    for dx, dy, c in stencil:
        c = np.broadcast_to(np.asarray(c, dtype=np.float64), (grid.n,))
        jx, jy = ix + dx, iy + dy
        ok = (jx >= 0) & (jx < N) & (jy >= 0) & (jy < N) & (c != 0)
        rows.append(idx[ok])
        cols.append((jx + N * jy)[ok])
        vals.append(c[ok])
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows),
                                              np.concatenate(cols))),
                      shape=(grid.n, grid.n))
    return CsrMatrix.from_scipy(A)


def _laplacian_stencil(coef):
    """-(u_xx + u_yy) times ``coef`` with unit mesh width."""
    return [(0, 0, 4 * coef), (1, 0, -coef), (-1, 0, -coef),
            (0, 1, -coef), (0, -1, -coef)]


def conv_diff_rhs(grid: Grid2D) -> np.ndarray:
    x, y = grid.mesh()
    return np.sin(x) * np.cos(x) * np.exp(x * y)


def build_convection_diffusion(h, scaled=True, diffusion=True, beta=40.0,
                               rhs_scale: Optional[float] = None,
                               seed: Optional[int] = None):
    """-e^{5xy} (u_xx + u_yy) + beta u_x + beta u_y = c sin(x) cos(x) e^{xy}.

    Central differences throughout.  With ``diffusion=False`` the variable
    coefficient is replaced by 1.  The right-hand side is normalised to unit
    2-norm unless ``rhs_scale`` fixes the constant c (used to give a coarse
    grid the same c as its fine grid).  With a ``seed`` the right-hand side
    is standard normal instead.
    """
    grid = Grid2D.from_h(h)
    if grid.N < 3:
        raise ValueError("need 1/h >= 4")
    hf = grid.hf
    x, y = grid.mesh()
    a = np.exp(5 * x * y) if diffusion else np.ones(grid.n)
    conv = beta * hf / 2  # central difference, scaled by h^2
    st = _laplacian_stencil(a)
    st += [(1, 0, conv), (-1, 0, -conv), (0, 1, conv), (0, -1, -conv)]
    A = _assemble(grid, st)
    if not scaled:
        A = CsrMatrix.from_scipy(A.to_scipy() / hf ** 2)
    if seed is not None:
        return grid, A, np.random.default_rng(seed).standard_normal(grid.n)
    f = conv_diff_rhs(grid)
    if rhs_scale is None:
        b = f / np.linalg.norm(f)
    else:
        b = rhs_scale * f * (hf ** 2 if scaled else 1.0)
    return grid, A, b


def build_helmholtz(h, kappa=100.0, scaled=True, seed: Optional[int] = 0):
    """-u_xx - u_yy - kappa^2 u = f with a standard-normal right-hand side."""
    grid = Grid2D.from_h(h)
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    hf = grid.hf
    st = _laplacian_stencil(1.0)
    st[0] = (0, 0, 4.0 - (kappa * hf) ** 2)
    A = _assemble(grid, st)
    if not scaled:
        A = CsrMatrix.from_scipy(A.to_scipy() / hf ** 2)
    b = np.random.default_rng(seed).standard_normal(grid.n)
    return grid, A, b


def build_biharmonic(h, scaled=True, beta=40.0, seed: Optional[int] = 0):
    """13-point biharmonic plus a central third derivative in x.

    The operator is u_xxxx + 2 u_xxyy + u_yyyy - beta u_xxx, i.e. the stated
    equation multiplied by -1 so that the diagonal is positive (the sign is
    immaterial for the Krylov solvers but matters for a diagonal ILU shift).
    Values at and beyond the boundary are zero.
    """
    grid = Grid2D.from_h(h)
    if grid.N < 7:
        raise ValueError("need 1/h >= 8")
    hf = grid.hf
    c3 = beta * hf / 2  # -beta * (-1, 2, 0, -2, 1) / (2 h^3), times h^4
    st = [(0, 0, 20.0),
          (1, 0, -8.0), (-1, 0, -8.0), (0, 1, -8.0), (0, -1, -8.0),
          (1, 1, 2.0), (1, -1, 2.0), (-1, 1, 2.0), (-1, -1, 2.0),
          (2, 0, 1.0), (-2, 0, 1.0), (0, 2, 1.0), (0, -2, 1.0)]
    third = {-2: -1.0, -1: 2.0, 1: -2.0, 2: 1.0}
    merged = {(dx, dy): c for dx, dy, c in st}
    for dx, c in third.items():
        merged[(dx, 0)] = merged[(dx, 0)] - c3 * c
    A = _assemble(grid, [(dx, dy, c) for (dx, dy), c in merged.items()])
    if not scaled:
        A = CsrMatrix.from_scipy(A.to_scipy() / hf ** 4)
    b = np.random.default_rng(seed).standard_normal(grid.n)
    return grid, A, b


def inject(fine: Grid2D, coarse: Grid2D, v) -> np.ndarray:
    """Sample a fine-grid vector at the coarse points (nested grids)."""
    r = int(coarse.h / fine.h)
    idx = (np.arange(1, coarse.N + 1) * r) - 1
    V = np.asarray(v).reshape(fine.N, fine.N)
    return V[np.ix_(idx, idx)].ravel()


def make_pair(family: str, fine_h, coarse_h=None, seed: Optional[int] = 0,
              kappa: float = 100.0, scaled: bool = True,
              random_rhs: Optional[bool] = None) -> ProblemInstance:
    """Matched fine/coarse problems of one family.

    The coarse right-hand side samples the same source as the fine one, so a
    coarse solution is a sensible initial guess after prolongation.
    ``random_rhs`` defaults to False for convection-diffusion (smooth source)
    and True otherwise; random right-hand sides are drawn from ``seed``.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown problem family {family!r}; "
                         f"choose from {', '.join(FAMILIES)}")
    fh = parse_h(fine_h)
    if random_rhs is None:
        random_rhs = family != "convection-diffusion"
    if not random_rhs:
        seed = None
    if family == "convection-diffusion":
        grid, A, b = build_convection_diffusion(fh, scaled=scaled, seed=seed)
    elif family == "helmholtz":
        grid, A, b = build_helmholtz(fh, kappa=kappa, scaled=scaled, seed=seed)
    else:
        grid, A, b = build_biharmonic(fh, scaled=scaled, seed=seed)
    inst = ProblemInstance(family, grid, A, b,
                           nnz_per_row_nominal=NOMINAL_NNZ[family],
                           rhs_seed=seed, params={"kappa": kappa} if family == "helmholtz" else {})
    if coarse_h is None:
        return inst
    ch = parse_h(coarse_h)
    ratio = ch / fh
    if ratio.denominator != 1 or ratio.numerator < 2 or \
            ratio.numerator & (ratio.numerator - 1):
        raise ValueError(f"coarse/fine mesh ratio {ratio} is not a power of 2 >= 2")
    p = ORDER[family]
    if family == "convection-diffusion" and not random_rhs:
        f = conv_diff_rhs(grid)
        c = 1.0 / np.linalg.norm(f * (grid.hf ** 2 if scaled else 1.0))
        cgrid, cA, cb = build_convection_diffusion(ch, scaled=scaled, rhs_scale=c)
    else:
        if family == "convection-diffusion":
            cgrid, cA, _ = build_convection_diffusion(ch, scaled=scaled)
        elif family == "helmholtz":
            cgrid, cA, _ = build_helmholtz(ch, kappa=kappa, scaled=scaled)
        else:
            cgrid, cA, _ = build_biharmonic(ch, scaled=scaled)
        cb = inject(grid, cgrid, b) * (float(ratio) ** p if scaled else 1.0)
    inst.coarse_grid, inst.coarse_matrix, inst.coarse_rhs = cgrid, cA, cb
    return inst
