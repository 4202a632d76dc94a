"""The basic linear problem: a time-dependent Stokes system whose boundary
condition couples the normal stress to the surface Laplacian of the running
velocity integral.

Pipeline: remove the divergence defect through an elliptic potential, modify
the data accordingly, project onto the divergence-free stream-function basis,
integrate the resulting second-order ODE system with an implicit trapezoidal
rule, and recover the pressure as the Lagrange multiplier of the weak
formulation tested against gradient fields.
"""

import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import geometry as geo
from .basis import build_basis, stream_scalar
from .errors import CompatibilityViolation, SingularStepMatrix
from .poisson import DirichletPoisson, solve_curve_laplacian
from .spectral import cumulative_trapezoid, fourier_diff, time_derivative

COMPATIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class PhysicalParams:
    nu: float
    sigma: float

    def __post_init__(self):
        if self.nu <= 0 or self.sigma <= 0:
            raise ValueError("viscosity and surface tension must be positive")


@dataclass(frozen=True, eq=False)
class BoundaryGeometry:
    """Reference boundary objects shared by assembly and forcing construction."""

    curve: geo.BoundaryCurve
    metric: geo.SurfaceMetric
    normals: geo.NormalField

    @property
    def ds_weights(self):
        m = self.metric.n_nodes
        return self.metric.sqrt_g * (2.0 * np.pi / m)

    @property
    def length(self):
        return float(np.sum(self.ds_weights))


def boundary_geometry(grid):
    curve = grid.boundary_curve
    return BoundaryGeometry(curve=curve, metric=geo.compute_metric(curve),
                            normals=geo.outward_normal(curve))


@dataclass(frozen=True, eq=False)
class LinearProblemData:
    """Sampled data (f_bar, g_bar, B_bar, a_bar, w0) for one linear problem."""

    times: np.ndarray     # (nt+1,)
    f_bar: np.ndarray     # (nt+1, nr, ntheta, 2) interior forcing
    g_bar: np.ndarray     # (nt+1, M, 2) boundary vector forcing
    B_bar: np.ndarray     # (nt+1, M) boundary scalar forcing
    a_bar: np.ndarray     # (nt+1, nr, ntheta) divergence defect
    w0: np.ndarray        # (nr, ntheta, 2) initial velocity

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n_samples(self):
        return len(self.times)

    @staticmethod
    def zero(grid, times, w0=None):
        nt1 = len(times)
        shape = (grid.nr, grid.ntheta)
        m = grid.ntheta
        return LinearProblemData(
            times=np.asarray(times, dtype=float),
            f_bar=np.zeros((nt1,) + shape + (2,)),
            g_bar=np.zeros((nt1, m, 2)),
            B_bar=np.zeros((nt1, m)),
            a_bar=np.zeros((nt1,) + shape),
            w0=np.zeros(shape + (2,)) if w0 is None else np.asarray(w0, dtype=float))

    def validate(self, geom, atol=1e-8):
        scale = max(1.0, np.max(np.abs(self.g_bar)), np.max(np.abs(self.B_bar)),
                    np.max(np.abs(self.a_bar)))
        if np.max(np.abs(self.B_bar[0])) > atol * scale:
            raise ValueError("B_bar(0) must vanish")
        if np.max(np.abs(self.a_bar[0])) > atol * scale:
            raise ValueError("a_bar(0) must vanish")
        g0_tan = geo.tangential_part(geom.normals, self.g_bar[0])
        if np.max(np.abs(g0_tan)) > atol * scale:
            raise ValueError("tangential part of g_bar(0) must vanish")


# -- divergence removal ----------------------------------------------------------

_POISSON_CACHE = weakref.WeakKeyDictionary()


def _poisson_solver(grid):
    if grid not in _POISSON_CACHE:
        _POISSON_CACHE[grid] = DirichletPoisson(grid)
    return _POISSON_CACHE[grid]


@dataclass(frozen=True, eq=False)
class DivergenceRemoval:
    """Potential flow v = grad r with div v equal to the divergence defect."""

    v: np.ndarray                # (nt+1, nr, ntheta, 2)
    potential: np.ndarray        # (nt+1, nr, ntheta)
    projected_means: np.ndarray  # (nt+1,) solvability mass removed per sample
    max_residual: float          # max |div v - a_bar| over interior nodes


def divergence_removal(grid, a_traj, geom=None):
    """Solve the two-stage elliptic problem per time sample and return grad r.

    The boundary surface-Laplacian problem on a closed curve is solvable only
    for data with zero mean against the area element; that mean is projected
    out and reported, never silently dropped.
    """
    geom = geom or boundary_geometry(grid)
    a_traj = np.asarray(a_traj, dtype=float)
    nt1 = a_traj.shape[0]
    solver = _poisson_solver(grid)
    v = np.zeros(a_traj.shape + (2,))
    pot = np.zeros_like(a_traj)
    means = np.zeros(nt1)
    max_res = 0.0
    for i in range(nt1):
        if np.max(np.abs(a_traj[i])) == 0.0:
            continue
        trace = grid.boundary_values(a_traj[i])
        # Orientation: r solves lap r = a_bar so that div grad r = a_bar,
        # with boundary data r0 solving the matching curve problem.
        r0, mean = solve_curve_laplacian(geom.metric, -trace)
        pot[i] = solver.solve(-a_traj[i], r0)
        v[i] = grid.scalar_gradient(pot[i])
        means[i] = mean
        res = np.abs(grid.divergence(v[i]) - a_traj[i])[:-1]
        max_res = max(max_res, float(res.max()))
    return DivergenceRemoval(v=v, potential=pot, projected_means=means,
                             max_residual=max_res)


# -- data modification -------------------------------------------------------------

def modify_data(data, removal, grid, geom, params):
    """Shift the problem onto the divergence-free unknown w = w_bar - v.

    Interior forcing loses v_t and gains the viscous term; the boundary vector
    forcing loses the tangential viscous traction of v; the scalar forcing
    absorbs the surface Laplacian of the running integral of v and the normal
    viscous traction (divided by sigma, which multiplies the scalar group in
    the boundary condition).  The initial velocity is unchanged since v(0)=0.
    """
    v = removal.v
    if np.max(np.abs(v)) == 0.0:
        return data
    nt1 = data.n_samples
    dt = data.dt
    nrm = geom.normals.normals
    v_t = time_derivative(v, dt)
    int_v = cumulative_trapezoid(v, dt)

    f_new = data.f_bar.copy()
    g_new = data.g_bar.copy()
    b_new = data.B_bar.copy()
    for i in range(nt1):
        f_new[i] += -v_t[i] + params.nu * np.stack(
            [grid.laplacian(v[i, ..., 0]), grid.laplacian(v[i, ..., 1])], axis=-1)
        def_v = grid.deformation(v[i])[-1]
        traction = params.nu * np.einsum("tij,tj->ti", def_v, nrm)
        traction_n = np.einsum("ti,ti->t", traction, nrm)
        g_new[i] -= traction - traction_n[:, None] * nrm
        lap_int = geo.surface_laplacian(geom.metric, grid.boundary_values(int_v[i]))
        b_new[i] += np.einsum("ti,ti->t", nrm, lap_int) - traction_n / params.sigma
    return LinearProblemData(times=data.times, f_bar=f_new, g_bar=g_new,
                             B_bar=b_new, a_bar=np.zeros_like(data.a_bar),
                             w0=data.w0)


# -- Galerkin assembly ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GalerkinMatrices:
    """Dissipation matrix G, boundary coupling H, and load trajectory F."""

    G: np.ndarray   # (m, m), (Def psi_j, Def psi_k), symmetric PSD
    H: np.ndarray   # (m, m), H[j, k] = int d_y psi_j^i g^-1 d_y(N.psi_k N^i) dS
    F: np.ndarray   # (nt+1, m) load vector per sample


@dataclass(frozen=True)
class GalerkinState:
    lam: np.ndarray
    d: np.ndarray
    time: float


def boundary_coupling_row(geom, du_trace, v_trace):
    """Integrand contraction of the boundary form for given nodal traces.

    du_trace: parameter derivative of the field in the first slot (M, 2);
    v_trace: field in the second slot (M, 2).  Returns the dS integral.
    """
    nrm = geom.normals.normals
    vn = np.einsum("ti,ti->t", v_trace, nrm)
    proj = vn[:, None] * nrm
    dproj = fourier_diff(proj, axis=0)
    integrand = np.einsum("ti,ti->t", du_trace, dproj) * geom.metric.g_inv
    return float(np.sum(integrand * geom.ds_weights))


def assemble(basis, geom, params, data):
    """Quadrature assembly of G, H and the load trajectory F."""
    grid = basis.grid
    m = basis.count
    defs = np.stack([grid.deformation(basis.velocity_fields[k]) for k in range(m)])
    w = grid.weights[..., None, None]
    g_mat = np.einsum("artij,brtij->ab", defs * w, defs)

    traces = basis.boundary_traces                      # (m, M, 2)
    d_traces = fourier_diff(traces, axis=1)
    nrm = geom.normals.normals
    vn = np.einsum("kti,ti->kt", traces, nrm)
    proj = vn[..., None] * nrm                          # (m, M, 2)
    d_proj = fourier_diff(proj, axis=1)
    ds_ginv = geom.ds_weights * geom.metric.g_inv
    h_mat = np.einsum("jti,kti,t->jk", d_traces, d_proj, ds_ginv)

    wq = grid.weights[..., None]
    f_load = np.einsum("irtc,krtc->ik", data.f_bar * wq, basis.velocity_fields)
    ds = geom.ds_weights
    g_load = np.einsum("itc,ktc,t->ik", data.g_bar, traces, ds)
    b_load = params.sigma * np.einsum("it,kt,t->ik", data.B_bar, vn, ds)
    return GalerkinMatrices(G=g_mat, H=h_mat, F=f_load + g_load + b_load)


def _step_matrix(matrices, params, dt):
    m = matrices.G.shape[0]
    return (np.eye(m) + 0.25 * dt * params.nu * matrices.G
            + 0.25 * dt * dt * params.sigma * matrices.H.T)


def _rhs(state, matrices, params, dt, f_now, f_next):
    lam, d = state.lam, state.d
    accel = f_now + f_next - 0.5 * params.nu * (matrices.G @ lam) \
        - params.sigma * (matrices.H.T @ (2.0 * d + 0.5 * dt * lam))
    return lam + 0.5 * dt * accel


def step_ode(state, matrices, params, dt):
    """One trapezoidal step of the coefficient system.

    The running-integral coefficients d satisfy d' = lam; the boundary matrix
    enters transposed because the evolving field sits in the differentiated
    slot of the boundary form.  F is taken from the assembled load at the two
    step ends (matrices.F rows); use solve_linear_problem for full runs.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    i = int(round(state.time / dt))
    f_now, f_next = matrices.F[i], matrices.F[i + 1]
    a_step = _step_matrix(matrices, params, dt)
    try:
        lam_new = np.linalg.solve(a_step, _rhs(state, matrices, params, dt, f_now, f_next))
    except np.linalg.LinAlgError as exc:
        raise SingularStepMatrix(str(exc)) from exc
    d_new = state.d + 0.5 * dt * (state.lam + lam_new)
    return GalerkinState(lam=lam_new, d=d_new, time=state.time + dt)


# -- driver -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearTrajectory:
    """Output of one linear solve: coefficients, fields, and provenance."""

    times: np.ndarray
    lam: np.ndarray           # (nt+1, m)
    d: np.ndarray             # (nt+1, m)
    basis: object
    matrices: GalerkinMatrices
    removal: DivergenceRemoval
    data: LinearProblemData             # original data
    data_modified: LinearProblemData    # divergence-free data
    w: np.ndarray             # (nt+1, nr, ntheta, 2) divergence-free part
    w_bar: np.ndarray         # (nt+1, nr, ntheta, 2) full velocity
    params: PhysicalParams
    grid: object
    geom: BoundaryGeometry

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def solve_linear_problem(data, T, dt, m, grid, params, basis=None, geom=None,
                         check_compatibility=True):
    """Run the full linear pipeline over [0, T] and return the trajectory."""
    nt = int(round(T / dt))
    if abs(nt * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of dt")
    if data.n_samples != nt + 1:
        raise ValueError(f"data carries {data.n_samples} samples, expected {nt + 1}")
    geom = geom or boundary_geometry(grid)
    data.validate(geom)
    if check_compatibility:
        report = compatibility_check(data.w0, data.g_bar[0], grid, geom, params)
        if not report.passed:
            raise CompatibilityViolation(
                f"[nu Def w0 N - g0]_tan = {report.max_violation:.3e} "
                f"exceeds {report.tolerance:.1e}")

    removal = divergence_removal(grid, data.a_bar, geom)
    mdata = modify_data(data, removal, grid, geom, params)
    basis = basis or build_basis(grid, m)
    mats = assemble(basis, geom, params, mdata)

    lam = np.empty((nt + 1, basis.count))
    d = np.zeros((nt + 1, basis.count))
    lam[0] = basis.project(mdata.w0)
    a_step = _step_matrix(mats, params, dt)
    try:
        lu = lu_factor(a_step)
    except np.linalg.LinAlgError as exc:
        raise SingularStepMatrix(str(exc)) from exc
    state = GalerkinState(lam=lam[0], d=d[0], time=0.0)
    for i in range(nt):
        rhs = _rhs(state, mats, params, dt, mats.F[i], mats.F[i + 1])
        lam_new = lu_solve(lu, rhs)
        d_new = state.d + 0.5 * dt * (state.lam + lam_new)
        state = GalerkinState(lam=lam_new, d=d_new, time=state.time + dt)
        lam[i + 1] = lam_new
        d[i + 1] = d_new
    w = basis.synthesize(lam)
    return LinearTrajectory(times=data.times, lam=lam, d=d, basis=basis,
                            matrices=mats, removal=removal, data=data,
                            data_modified=mdata, w=w, w_bar=w + removal.v,
                            params=params, grid=grid, geom=geom)


# -- pressure recovery ---------------------------------------------------------------

def enumerate_pressure_streams(count):
    """Non-harmonic scalar family whose Laplacians span the pressure space."""
    out = []
    deg = 2
    while len(out) < count:
        for n in range(deg - 2, -1, -2):
            if n == 0:
                out.append((deg, 0, "cos"))
            else:
                out.append((deg, n, "cos"))
                out.append((deg, n, "sin"))
        deg += 1
    return out[:count]


@dataclass(frozen=True, eq=False)
class PressureTrajectory:
    """Mean-zero pressure fields plus the boundary-determined gauge constant."""

    times: np.ndarray
    p: np.ndarray          # (nt+1, nr, ntheta) mean-zero fields
    gauge: np.ndarray      # (nt+1,) additive constant fixed by the stress balance
    gauge_weak: np.ndarray # (nt+1,) same constant as seen by the weak residual
    lsq_residual: float    # worst relative residual of the mixed solves

    def full(self):
        return self.p + self.gauge[:, None, None]


def recover_pressure(traj, n_test=30, n_candidates=None):
    """Pressure as the Lagrange multiplier of the weak residual.

    Tests the weak form on gradient fields grad(chi) for a family of
    non-harmonic scalar polynomials chi; the pressure is expanded in the
    orthonormalized mean-zero span of a strict subfamily of their Laplacians,
    so the per-step mixed solve is a genuinely overdetermined least-squares
    problem (an equal-size system would be square-plus-gauge and the min-norm
    solution would smear the constant).  The additive gauge, invisible to
    divergence-free test fields, is recovered separately from the
    surface-measure mean of the normal stress balance of the original problem.
    """
    grid, geom, params = traj.grid, traj.geom, traj.params
    mdata = traj.data_modified
    dt = traj.dt
    if n_candidates is None:
        n_candidates = n_test - 9
    if n_candidates >= n_test:
        raise ValueError("need more test fields than pressure candidates")
    r = grid.r[:, None] * np.ones(grid.ntheta)
    th = np.ones((grid.nr, 1)) * grid.theta

    chis = [stream_scalar(dg, n, k, r, th) for dg, n, k in enumerate_pressure_streams(n_test)]
    phis = np.stack([grid.scalar_gradient(c) for c in chis])          # (L, nr, nt, 2)
    div_phis = np.stack([grid.laplacian(c) for c in chis])
    candidates = np.stack([grid.mean_zero(dp) for dp in div_phis[:n_candidates]])

    # Orthonormalize the mean-zero pressure candidates in L^2 via SVD: the
    # family contains an exactly-zero member (the projected constant), which
    # would silently skew a plain QR's span.
    sw = np.sqrt(grid.weights)
    x = (candidates * sw).reshape(n_candidates, -1).T
    u, sing, _ = np.linalg.svd(x, full_matrices=False)
    keep = sing > 1e-10 * sing.max()
    p_basis = (u.T[keep].reshape(-1, grid.nr, grid.ntheta)) / sw
    n_p = p_basis.shape[0]

    w_l2 = grid.weights
    mix = np.einsum("prt,lrt->lp", p_basis * w_l2, div_phis)          # (L, n_p)
    # Gradient test fields have nonzero boundary flux, so the weak residual
    # sees the pressure mean as well; the constant direction must be a column
    # of the mixed system or the mean-zero solve is inconsistent.
    const_col = np.einsum("rt,lrt->l", w_l2, div_phis)[:, None]
    mix_aug = np.hstack([const_col, mix])
    mix_pinv = np.linalg.pinv(mix_aug)

    # Precomputed bilinear couplings against the velocity basis.
    basis = traj.basis
    m = basis.count
    wq = grid.weights[..., None]
    pair_wphi = np.einsum("krtc,lrtc->kl", basis.velocity_fields * wq, phis)
    defs_psi = np.stack([grid.deformation(basis.velocity_fields[k]) for k in range(m)])
    defs_phi = np.stack([grid.deformation(phis[l]) for l in range(len(chis))])
    w2 = grid.weights[..., None, None]
    defgram = np.einsum("krtij,lrtij->kl", defs_psi * w2, defs_phi)

    phi_traces = phis[:, -1]                                          # (L, M, 2)
    nrm = geom.normals.normals
    ds = geom.ds_weights
    phi_n = np.einsum("lti,ti->lt", phi_traces, nrm)
    d_psi_traces = fourier_diff(basis.boundary_traces, axis=1)
    d_proj_phi = fourier_diff(phi_n[..., None] * nrm, axis=1)
    h_mix = np.einsum("kti,lti,t->kl", d_psi_traces, d_proj_phi, ds * geom.metric.g_inv)

    lam_dot = time_derivative(traj.lam, dt)
    f_phi = np.einsum("irtc,lrtc->il", mdata.f_bar * wq, phis)
    g_phi = np.einsum("itc,ltc,t->il", mdata.g_bar, phi_traces, ds)
    b_phi = params.sigma * np.einsum("it,lt,t->il", mdata.B_bar, phi_n, ds)

    nt1 = traj.times.shape[0]
    lam_big = (np.einsum("ik,kl->il", lam_dot, pair_wphi)
               + 0.5 * params.nu * np.einsum("ik,kl->il", traj.lam, defgram)
               - f_phi - g_phi - b_phi
               + params.sigma * np.einsum("ik,kl->il", traj.d, h_mix))

    coeffs = lam_big @ mix_pinv.T                                     # (nt+1, 1+n_p)
    p_fields = np.tensordot(coeffs[:, 1:], p_basis, axes=(1, 0))
    resid = np.linalg.norm(coeffs @ mix_aug.T - lam_big, axis=1)
    scale = np.maximum(np.linalg.norm(lam_big, axis=1), 1e-14)
    lsq_residual = float(np.max(resid / scale))

    gauge = _pressure_gauge(traj, p_fields)
    return PressureTrajectory(times=traj.times, p=p_fields, gauge=gauge,
                              gauge_weak=coeffs[:, 0], lsq_residual=lsq_residual)


def _pressure_gauge(traj, p_fields):
    """Additive constant from the dS-mean of the normal stress balance."""
    grid, geom, params = traj.grid, traj.geom, traj.params
    data = traj.data
    nrm = geom.normals.normals
    ds = geom.ds_weights
    total = float(np.sum(ds))
    int_w = cumulative_trapezoid(traj.w_bar, traj.dt)
    gauge = np.empty(traj.times.shape[0])
    for i in range(traj.times.shape[0]):
        def_w = grid.deformation(traj.w_bar[i])[-1]
        traction_n = params.nu * np.einsum("tij,tj,ti->t", def_w, nrm, nrm)
        lap_int = geo.surface_laplacian(geom.metric, grid.boundary_values(int_w[i]))
        surf = params.sigma * (np.einsum("ti,ti->t", nrm, lap_int) + data.B_bar[i])
        gn = np.einsum("ti,ti->t", data.g_bar[i], nrm)
        p_trace = grid.boundary_values(p_fields[i])
        gauge[i] = np.sum((traction_n - surf - gn - p_trace) * ds) / total
    return gauge


# -- compatibility --------------------------------------------------------------------

@dataclass(frozen=True)
class CompatibilityReport:
    max_violation: float
    tolerance: float

    @property
    def passed(self):
        return self.max_violation <= self.tolerance


def compatibility_check(w0, g0, grid, geom, params, tolerance=COMPATIBILITY_TOL):
    """Max over boundary nodes of |[nu Def w0 N - g0]_tan|."""
    def_w0 = grid.deformation(np.asarray(w0, dtype=float))[-1]
    nrm = geom.normals.normals
    traction = params.nu * np.einsum("tij,tj->ti", def_w0, nrm)
    mismatch = traction - np.asarray(g0, dtype=float)
    tang = mismatch - np.einsum("ti,ti->t", mismatch, nrm)[:, None] * nrm
    return CompatibilityReport(max_violation=float(np.max(np.abs(tang))),
                               tolerance=tolerance)
