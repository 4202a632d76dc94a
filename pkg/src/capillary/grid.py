"""Tensor-product polar grid on the reference domain and its derivative machinery.

Radial nodes are a Legendre-Gauss-Radau rule on (0, 1] (open at the origin to
avoid the coordinate singularity, closed at r=1 so the outermost layer *is*
the boundary).  Angular nodes are equispaced; angular derivatives are FFTs,
radial derivatives barycentric-polynomial.  An optional constant axis stretch
diag(ax, ay) realizes an elliptical reference domain with the same machinery:
the stretch is folded into the Cartesian derivative operators and the
quadrature weights, so every operator below acts in physical coordinates.

Fields are arrays shaped (nr, ntheta, ...) with trailing component axes.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import BoundaryCurve
from .spectral import diff_matrix, fourier_diff, fourier_diff_matrix, radau_nodes


@dataclass(frozen=True, eq=False)
class PolarGrid:
    nr: int
    ntheta: int
    stretch: tuple = (1.0, 1.0)

    r: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nr < 4:
            raise ValueError("nr must be >= 4")
        if self.ntheta < 8 or self.ntheta % 2:
            raise ValueError("ntheta must be even and >= 8")
        r, rw = radau_nodes(self.nr)
        theta = 2.0 * np.pi * np.arange(self.ntheta) / self.ntheta
        ax, ay = self.stretch
        weights = (ax * ay) * np.outer(rw * r, np.full(self.ntheta, 2.0 * np.pi / self.ntheta))
        xi = np.stack(np.broadcast_arrays(np.outer(r, np.cos(theta)),
                                          np.outer(r, np.sin(theta))), axis=-1)
        nodes = xi * np.array([ax, ay])
        for name, val in (("r", r), ("theta", theta), ("weights", weights), ("nodes", nodes)):
            object.__setattr__(self, name, val)

    # -- cached helper arrays -------------------------------------------------

    @cached_property
    def _dr_matrix(self):
        return diff_matrix(self.r)

    @cached_property
    def _dr_offdiag(self):
        d = self._dr_matrix.copy()
        np.fill_diagonal(d, 0.0)
        return d

    @cached_property
    def _cos(self):
        return np.cos(self.theta)

    @cached_property
    def _sin(self):
        return np.sin(self.theta)

    @cached_property
    def _inv_r(self):
        return 1.0 / self.r

    def _b(self, radial, angular, f_ndim):
        """Broadcast a separable (nr,)x(ntheta,) factor against trailing axes."""
        arr = np.outer(radial, angular)
        return arr.reshape(arr.shape + (1,) * (f_ndim - 2))

    # -- derivative operators --------------------------------------------------

    def d_dr(self, f):
        # Shifted barycentric product sum_j D_ij (f_j - f_i): algebraically equal
        # to D @ f (rows of D sum to zero) but avoids the large cancellation the
        # clustered near-axis nodes otherwise produce.
        f = np.asarray(f, dtype=float)
        diffs = f[None, :] - f[:, None]
        return np.einsum("ij,ij...->i...", self._dr_offdiag, diffs)

    def d_dtheta(self, f):
        return fourier_diff(f, axis=1)

    def dx(self, f):
        f = np.asarray(f, dtype=float)
        ones_r = np.ones(self.nr)
        out = self._b(ones_r, self._cos, f.ndim) * self.d_dr(f) \
            - self._b(self._inv_r, self._sin, f.ndim) * self.d_dtheta(f)
        return out / self.stretch[0]

    def dy(self, f):
        f = np.asarray(f, dtype=float)
        ones_r = np.ones(self.nr)
        out = self._b(ones_r, self._sin, f.ndim) * self.d_dr(f) \
            + self._b(self._inv_r, self._cos, f.ndim) * self.d_dtheta(f)
        return out / self.stretch[1]

    def gradient(self, v):
        """grad[..., i, j] = d v_i / d x_j for a vector field v (nr, ntheta, 2)."""
        return np.stack([self.dx(v), self.dy(v)], axis=-1)

    def scalar_gradient(self, f):
        return np.stack([self.dx(f), self.dy(f)], axis=-1)

    def divergence(self, v):
        return self.dx(v[..., 0]) + self.dy(v[..., 1])

    def laplacian(self, f):
        return self.dx(self.dx(f)) + self.dy(self.dy(f))

    def deformation(self, v):
        """Def v = grad v + (grad v)^T, twice the rate-of-strain."""
        g = self.gradient(v)
        return g + np.swapaxes(g, -1, -2)

    # -- quadrature -------------------------------------------------------------

    def integrate(self, f):
        f = np.asarray(f, dtype=float)
        return np.einsum("rt,rt...->...", self.weights, f)

    def inner(self, f, g):
        f, g = np.asarray(f, dtype=float), np.asarray(g, dtype=float)
        w = self.weights.reshape(self.weights.shape + (1,) * (f.ndim - 2))
        return float(np.sum(w * f * g))

    def norm_l2(self, f):
        return float(np.sqrt(max(self.inner(f, f), 0.0)))

    def mean_zero(self, f):
        """Remove the quadrature mean of a scalar field."""
        return f - self.integrate(f) / self.area

    @cached_property
    def area(self):
        return float(self.weights.sum())

    def sobolev_norm(self, f, order):
        """H^order norm by quadrature of all canonical spectral derivatives."""
        f = np.asarray(f, dtype=float)
        total = self.inner(f, f)
        level = {(0, 0): f}
        for _ in range(order):
            nxt = {}
            for (a, b), cur in level.items():
                if (a + 1, b) not in nxt:
                    nxt[(a + 1, b)] = self.dx(cur)
                if (a, b + 1) not in nxt:
                    nxt[(a, b + 1)] = self.dy(cur)
            for arr in nxt.values():
                total += self.inner(arr, arr)
            level = nxt
        return float(np.sqrt(max(total, 0.0)))

    # -- boundary ----------------------------------------------------------------

    def boundary_values(self, f):
        """Trace of a grid field on the outermost radial layer (= the boundary)."""
        return np.asarray(f)[-1]

    @cached_property
    def boundary_curve(self):
        """The reference boundary as a BoundaryCurve (circle or stretched circle)."""
        return BoundaryCurve(self.nodes[-1].copy())

    def identity_map(self):
        return self.nodes.copy()

    # -- dense operator matrices (for the elliptic solves) ------------------------

    @cached_property
    def dense_dx(self):
        return self._dense_first_derivative(0)

    @cached_property
    def dense_dy(self):
        return self._dense_first_derivative(1)

    def _dense_first_derivative(self, axis):
        nr, nt = self.nr, self.ntheta
        dr_full = np.kron(self._dr_matrix, np.eye(nt))
        dth_full = np.kron(np.eye(nr), fourier_diff_matrix(nt))
        cos_f = np.tile(self._cos, nr)
        sin_f = np.tile(self._sin, nr)
        inv_r_f = np.repeat(self._inv_r, nt)
        if axis == 0:
            mat = cos_f[:, None] * dr_full - (sin_f * inv_r_f)[:, None] * dth_full
            return mat / self.stretch[0]
        mat = sin_f[:, None] * dr_full + (cos_f * inv_r_f)[:, None] * dth_full
        return mat / self.stretch[1]

    @property
    def is_disk(self):
        return self.stretch == (1.0, 1.0)
