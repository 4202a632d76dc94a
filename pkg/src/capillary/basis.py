"""Divergence-free velocity basis from polynomial stream functions.

On a simply connected 2D domain every divergence-free field is the
perp-gradient of a stream function, so the constraint is satisfied exactly, not
approximately.  Stream functions are the solid-harmonic family r^d cos(n th),
r^d sin(n th) with d >= n, d - n even: polynomials in Cartesian coordinates, so
every discrete derivative of them (and of their perp-gradients) is exact on
this grid.  The family contains the rigid motions: translations (d=n=1) and
the rotation (d=2, n=0).

Closed forms are kept alongside the nodal values so oracle tests can evaluate
orthonormalized fields off-grid.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BasisDegenerate


def enumerate_streams(count):
    """Deterministic stream-function index list [(degree, n, kind), ...]."""
    out = []
    deg = 1
    while len(out) < count:
        for n in range(deg, -1, -2):
            if n == 0:
                out.append((deg, 0, "cos"))
            else:
                out.append((deg, n, "cos"))
                out.append((deg, n, "sin"))
        deg += 1
    return out[:count]


def stream_scalar(deg, n, kind, r, theta):
    """Stream function r^deg * cos/sin(n theta) at polar points."""
    ang = np.cos(n * theta) if kind == "cos" else np.sin(n * theta)
    return r ** deg * ang


def stream_velocity(deg, n, kind, r, theta, stretch=(1.0, 1.0)):
    """Perp-gradient of the stream function, in physical coordinates.

    Returns an array (..., 2).  The radial power is deg-1 >= 0, so the field
    is regular at the origin.
    """
    rp = r ** (deg - 1)
    c, s = np.cos(theta), np.sin(theta)
    cn, sn = np.cos(n * theta), np.sin(n * theta)
    if kind == "cos":
        d1 = rp * (deg * c * cn + n * s * sn)   # d(stream)/d xi_1
        d2 = rp * (deg * s * cn - n * c * sn)   # d(stream)/d xi_2
    else:
        d1 = rp * (deg * c * sn - n * s * cn)
        d2 = rp * (deg * s * sn + n * c * cn)
    ax, ay = stretch
    return np.stack([d2 / ay, -d1 / ax], axis=-1)


@dataclass(frozen=True, eq=False)
class DivFreeBasis:
    """Orthonormal divergence-free velocity fields with their stream functions."""

    grid: object
    streams: tuple                 # ((deg, n, kind), ...) raw family, length m
    coeff: np.ndarray              # (m, m): ortho field i = sum_k coeff[k, i] * raw_k
    velocity_fields: np.ndarray    # (m, nr, ntheta, 2)
    stream_functions: np.ndarray   # (m, nr, ntheta)

    @property
    def count(self):
        return self.velocity_fields.shape[0]

    @property
    def boundary_traces(self):
        return self.velocity_fields[:, -1]

    def evaluate(self, i, r, theta):
        """Closed-form evaluation of orthonormal field i at arbitrary polar points."""
        out = None
        for k, (deg, n, kind) in enumerate(self.streams):
            c = self.coeff[k, i]
            if c == 0.0:
                continue
            term = c * stream_velocity(deg, n, kind, r, theta, self.grid.stretch)
            out = term if out is None else out + term
        return out

    def project(self, field):
        """L^2 coefficients of a velocity field against the basis."""
        w = self.grid.weights[..., None]
        return np.einsum("krti,rti->k", self.velocity_fields, w * field)

    def synthesize(self, lam):
        """Velocity field(s) from coefficients; lam may carry leading axes."""
        return np.tensordot(lam, self.velocity_fields, axes=(-1, 0))


def build_basis(grid, m, mix_seed=None):
    """Orthonormalize the first m stream fields in the quadrature L^2 inner product.

    mix_seed, when given, pre-mixes the selected raw fields by a random
    well-conditioned matrix before orthonormalization.  The span is unchanged;
    this exists so tests can verify solver output is basis-independent.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    cap = grid.ntheta * grid.nr // 4
    if m > cap:
        raise ValueError(f"m={m} exceeds grid capacity {cap}")
    streams = tuple(enumerate_streams(m))
    max_n = max(n for _, n, _ in streams)
    if max_n >= grid.ntheta // 2 - 1:
        raise ValueError("stream family exceeds angular resolution")

    r = grid.r[:, None] * np.ones(grid.ntheta)
    th = np.ones((grid.nr, 1)) * grid.theta
    raw_v = np.stack([stream_velocity(d, n, k, r, th, grid.stretch)
                      for (d, n, k) in streams])
    raw_s = np.stack([stream_scalar(d, n, k, r, th) for (d, n, k) in streams])

    mix = np.eye(m)
    if mix_seed is not None:
        rng = np.random.default_rng(mix_seed)
        mix, _ = np.linalg.qr(rng.standard_normal((m, m)))
    mixed_v = np.tensordot(mix.T, raw_v, axes=(1, 0))

    # Weighted QR: columns of X are sqrt(weight)-scaled fields, so Q columns
    # are orthonormal in the quadrature inner product.
    sw = np.sqrt(grid.weights)[..., None]
    x = (mixed_v * sw).reshape(m, -1).T
    _, rmat = np.linalg.qr(x)
    diag = np.abs(np.diag(rmat))
    if diag.min() < 1e-8 * max(1.0, diag.max()):
        raise BasisDegenerate(f"orthonormalization pivot {diag.min():.3e}")
    coeff = mix @ np.linalg.inv(rmat)     # raw -> ortho combination matrix
    # Synthesize nodal values from the closed forms rather than keeping Q:
    # the result is then an exact polynomial sample, so discrete derivatives
    # (in particular the divergence) stay at the polynomial roundoff floor.
    ortho_v = np.tensordot(coeff.T, raw_v, axes=(1, 0))
    ortho_s = np.tensordot(coeff.T, raw_s, axes=(1, 0))
    return DivFreeBasis(grid=grid, streams=streams, coeff=coeff,
                        velocity_fields=ortho_v, stream_functions=ortho_s)
