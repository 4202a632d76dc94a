"""Elliptic solves backing the divergence-removal step.

Two problems per time sample: a surface-Laplacian solve on the closed boundary
curve (which needs mean-zero data w.r.t. the surface measure; the projected
mean is reported, never silently dropped), then an interior Dirichlet Poisson
problem.  On the unit disk the interior solve diagonalizes over angular Fourier
modes into small radial collocation systems; on a stretched domain it falls
back to one dense factorization of the full collocation operator, reused for
every right-hand side.
"""

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import SolverFailure
from .spectral import diff_matrix, fourier_diff_matrix


def solve_curve_laplacian(metric, data):
    """Solve -Laplace_Beltrami r0 = data on the closed curve.

    Data is projected onto the solvability class (mean zero against the area
    element); returns (r0, removed_mean).  The gauge fixes the dS-mean of r0
    to zero.
    """
    m = metric.n_nodes
    ds_weight = metric.sqrt_g * (2.0 * np.pi / m)
    mean = float(np.sum(data * ds_weight) / np.sum(ds_weight))
    rhs = data - mean
    d1 = fourier_diff_matrix(m, 1)
    d2 = fourier_diff_matrix(m, 2)
    lap = metric.g_inv[:, None] * (d2 - metric.christoffel[:, None] * d1)
    aug = np.vstack([-lap, ds_weight])
    b = np.concatenate([rhs, [0.0]])
    r0, *_ = np.linalg.lstsq(aug, b, rcond=None)
    resid = np.max(np.abs(-lap @ r0 - rhs))
    if not np.isfinite(resid) or resid > 1e-8 * max(1.0, np.max(np.abs(rhs))):
        raise SolverFailure(f"boundary Laplacian solve residual {resid:.3e}")
    return r0, mean


class DirichletPoisson:
    """-Laplace r = f in the reference domain, r = r0 on the boundary layer.

    Factorizations are built once per grid and reused across time samples.
    """

    def __init__(self, grid):
        self.grid = grid
        self._mode_lu = {}
        self._dense_lu = None

    # -- disk fast path: one small radial system per angular mode ----------------

    def _mode_factor(self, k2):
        if k2 not in self._mode_lu:
            g = self.grid
            d1 = diff_matrix(g.r)
            d2 = d1 @ d1
            op = -(d2 + np.diag(1.0 / g.r) @ d1 - k2 * np.diag(1.0 / g.r ** 2))
            op[-1, :] = 0.0
            op[-1, -1] = 1.0
            self._mode_lu[k2] = lu_factor(op)
        return self._mode_lu[k2]

    def _solve_disk(self, rhs, boundary):
        g = self.grid
        fhat = np.fft.fft(rhs, axis=1)
        bhat = np.fft.fft(boundary)
        k = np.fft.fftfreq(g.ntheta, d=1.0 / g.ntheta)
        rhat = np.empty_like(fhat)
        for j, kk in enumerate(k):
            b = fhat[:, j].copy()
            b[-1] = bhat[j]
            lu = self._mode_factor(kk * kk)
            rhat[:, j] = lu_solve(lu, b.real) + 1j * lu_solve(lu, b.imag)
        return np.real(np.fft.ifft(rhat, axis=1))

    # -- dense fallback for stretched domains -------------------------------------

    def _dense_factor(self):
        if self._dense_lu is None:
            g = self.grid
            lap = -(g.dense_dx @ g.dense_dx + g.dense_dy @ g.dense_dy)
            bnd = np.arange((g.nr - 1) * g.ntheta, g.nr * g.ntheta)
            lap[bnd, :] = 0.0
            lap[bnd, bnd] = 1.0
            # Row equilibration keeps the backward error componentwise small.
            scale = np.max(np.abs(lap), axis=1)
            self._dense_lu = (lu_factor(lap / scale[:, None]), lap, scale, bnd)
        return self._dense_lu

    def _solve_dense(self, rhs, boundary):
        g = self.grid
        lu, lap, scale, bnd = self._dense_factor()
        b = rhs.ravel().copy()
        b[bnd] = boundary
        x = lu_solve(lu, b / scale)
        # Two rounds of iterative refinement recover the accuracy the
        # near-axis 1/r^2 conditioning eats.
        for _ in range(2):
            x += lu_solve(lu, (b - lap @ x) / scale)
        return x.reshape(g.nr, g.ntheta)

    def solve(self, rhs, boundary):
        """Solve for nodal r given interior data and Dirichlet boundary values."""
        rhs = np.asarray(rhs, dtype=float)
        boundary = np.asarray(boundary, dtype=float)
        if self.grid.is_disk:
            r = self._solve_disk(rhs, boundary)
        else:
            r = self._solve_dense(rhs, boundary)
        if not np.all(np.isfinite(r)):
            raise SolverFailure("interior Poisson solve produced non-finite values")
        return r
