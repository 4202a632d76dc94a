"""Low-level discretization utilities: periodic FFT derivatives, Fourier-multiplier
norms, Legendre-Gauss-Radau nodes, and barycentric differentiation matrices."""

import numpy as np
from numpy.polynomial import legendre


def fourier_wavenumbers(m):
    """Integer wavenumbers in FFT layout for m equispaced nodes on [0, 2pi)."""
    return np.fft.fftfreq(m, d=1.0 / m)


def fourier_coeffs(f, axis=-1):
    """Normalized DFT: coefficients c_k with f(y) = sum_k c_k e^{iky}."""
    f = np.asarray(f)
    return np.fft.fft(f, axis=axis) / f.shape[axis]


def fourier_diff(f, order=1, axis=-1):
    """Spectral derivative of periodic samples on [0, 2pi).

    Exact for trigonometric polynomials below the Nyquist mode.  The Nyquist
    coefficient is zeroed for odd orders to keep real data real.
    """
    f = np.asarray(f, dtype=float)
    m = f.shape[axis]
    k = fourier_wavenumbers(m)
    mult = (1j * k) ** order
    if order % 2 == 1 and m % 2 == 0:
        mult[m // 2] = 0.0
    shape = [1] * f.ndim
    shape[axis] = m
    fh = np.fft.fft(f, axis=axis) * mult.reshape(shape)
    return np.real(np.fft.ifft(fh, axis=axis))


def fourier_diff_matrix(m, order=1):
    """Dense differentiation matrix equivalent to :func:`fourier_diff`."""
    return np.column_stack([fourier_diff(col, order=order) for col in np.eye(m)])


def sobolev_weight(k, s):
    """Fourier multiplier (1 + k^2)^{s/2} used by the boundary H^s norms."""
    return (1.0 + np.asarray(k, dtype=float) ** 2) ** (s / 2.0)


def radau_nodes(n):
    """Legendre-Gauss-Radau rule on (0, 1] with the right endpoint included.

    Returns (r, w) with sum(w * p(r)) = int_0^1 p exactly for polynomials of
    degree <= 2n-2.  The node at r=1 carries the boundary layer of the grid.
    """
    if n < 2:
        raise ValueError("need at least 2 radial nodes")
    # Left-Radau on [-1,1]: x=-1 plus the roots of P_{n-1} + P_n.
    c = np.zeros(n + 1)
    c[n - 1] = 1.0
    c[n] = 1.0
    interior = legendre.legroots(c)
    interior = np.real(interior[np.argsort(np.real(interior))])
    interior = interior[np.abs(interior + 1.0) > 1e-10]
    x = np.concatenate([[-1.0], interior])
    pn1 = legendre.legval(x, np.eye(n)[n - 1])
    w = (1.0 - x) / (n * n * pn1 ** 2)
    w[0] = 2.0 / n ** 2
    # Flip to include +1, then map to (0,1].
    x, w = -x[::-1], w[::-1]
    r = (x + 1.0) / 2.0
    return r, w / 2.0


def barycentric_weights(x):
    x = np.asarray(x, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # Rescale to tame over/underflow for larger node counts.
    scale = 4.0 / (x.max() - x.min())
    w = 1.0 / np.prod(diff * scale, axis=1)
    return w / np.max(np.abs(w))


def diff_matrix(x):
    """Barycentric first-derivative matrix on arbitrary distinct nodes."""
    x = np.asarray(x, dtype=float)
    w = barycentric_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


def time_derivative(samples, dt):
    """Second-order finite differences along axis 0 (one-sided at the ends)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 3:
        raise ValueError("need at least 3 time samples")
    out = np.empty_like(samples)
    out[1:-1] = (samples[2:] - samples[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * samples[0] + 4.0 * samples[1] - samples[2]) / (2.0 * dt)
    out[-1] = (3.0 * samples[-1] - 4.0 * samples[-2] + samples[-3]) / (2.0 * dt)
    return out


def cumulative_trapezoid(samples, dt):
    """Running trapezoidal integral along axis 0, starting at zero."""
    samples = np.asarray(samples, dtype=float)
    out = np.zeros_like(samples)
    increments = 0.5 * dt * (samples[1:] + samples[:-1])
    np.cumsum(increments, axis=0, out=out[1:])
    return out


def trapezoid_time(values, dt):
    """Plain trapezoidal rule along axis 0 for trajectory norms."""
    values = np.asarray(values, dtype=float)
    return float(np.trapz(values, dx=dt, axis=0))
