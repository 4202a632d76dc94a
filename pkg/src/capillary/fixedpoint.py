"""The nonlinear scheme: successive approximation for the flow-map-frozen
linear problem, wrapped in an outer fixed-point loop whose limit solves the
free-boundary system in Lagrangian form.

Every inner iterate feeds the previous velocity/pressure pair through
difference forcings built on the *outer* iterate's flow map; the tangential
boundary forcing is projected onto the reference tangent plane by
construction, which is the property that makes the splitting solvable at all.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .basis import build_basis
from .errors import CompatibilityViolation, NoContraction, OutsideTrustRegion
from .lagrangian import integrate_flow
from .linear_stokes import (LinearProblemData, boundary_geometry,
                            compatibility_check, recover_pressure,
                            solve_linear_problem)
from .spectral import cumulative_trapezoid, time_derivative, trapezoid_time


@dataclass(frozen=True)
class IterationConfig:
    T: float
    dt: float
    m: int
    inner_tol: float = 1e-7
    inner_max_iter: int = 12
    outer_max_iter: int = 10
    M_cap: float = None
    t_max: float = 0.25     # trust horizon; larger T must be bisected by the caller

    def __post_init__(self):
        if self.T <= 0 or self.dt <= 0 or self.m < 1:
            raise ValueError("T, dt, m must be positive")
        if self.T > self.t_max:
            raise ValueError(f"T={self.T} exceeds trust horizon t_max={self.t_max}")
        if self.inner_tol <= 0:
            raise ValueError("inner_tol must be positive")
        nt = round(self.T / self.dt)
        if abs(nt * self.dt - self.T) > 1e-9:
            raise ValueError("T must be an integer multiple of dt")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


INNER_SAFETY = 1e-2


@dataclass(frozen=True)
class IterateRecord:
    index: int
    x_norm: float
    diff_norm: float
    ratio: float            # nan for the first two iterates
    tangency_max: float     # max |g1 . N| over nodes and samples
    min_alignment: float
    min_det_a: float


# -- discrete X_T norm ------------------------------------------------------------

def discrete_x_norm(grid, v_traj, q_traj, dt):
    """Trajectory norm combining interior Sobolev and boundary dual components.

    Six squared pieces: velocity in L2-H3, its time derivative in L2-H1,
    pressure in L2-H2 and its time derivative in L2-L2, plus the boundary
    H^{-1/2} norms of the time-differenced velocity gradient trace and of the
    pressure-derivative trace.
    """
    v_traj = np.asarray(v_traj, dtype=float)
    q_traj = np.asarray(q_traj, dtype=float)
    nt1 = v_traj.shape[0]
    if nt1 < 3:
        raise ValueError("need at least 3 samples")
    v_t = time_derivative(v_traj, dt)
    q_t = time_derivative(q_traj, dt)
    h3 = np.array([grid.sobolev_norm(v_traj[i], 3) ** 2 for i in range(nt1)])
    h1t = np.array([grid.sobolev_norm(v_t[i], 1) ** 2 for i in range(nt1)])
    h2q = np.array([grid.sobolev_norm(q_traj[i], 2) ** 2 for i in range(nt1)])
    l2qt = np.array([grid.norm_l2(q_t[i]) ** 2 for i in range(nt1)])
    bnd_gvt = np.empty(nt1)
    bnd_qt = np.empty(nt1)
    for i in range(nt1):
        gvt = grid.boundary_values(grid.gradient(v_t[i])).reshape(grid.ntheta, 4)
        bnd_gvt[i] = geo.boundary_sobolev_norm(gvt, -0.5) ** 2
        bnd_qt[i] = geo.boundary_sobolev_norm(grid.boundary_values(q_t[i]), -0.5) ** 2
    total = sum(trapezoid_time(comp, dt)
                for comp in (h3, h1t, h2q, l2qt, bnd_gvt, bnd_qt))
    return float(np.sqrt(max(total, 0.0)))


# -- iteration forcings ------------------------------------------------------------

def compute_iteration_forcings(grid, geom, params, v_traj, q_traj, flow_traj,
                               metrics=None):
    """Difference forcings of the frozen-coefficient splitting plus the
    inhomogeneous surface term, as data for the basic linear problem.

    Returns (data, tangency_max): data carries f_bar/a_bar/g_bar/B_bar with
    zero w0 (the caller supplies initial velocity and external forcing);
    tangency_max records max |g1 . N|, which vanishes by construction.
    """
    nu, sigma = params.nu, params.sigma
    nrm = geom.normals.normals
    nt1 = v_traj.shape[0]
    dt = float(flow_traj.times[1] - flow_traj.times[0])
    int_v = cumulative_trapezoid(v_traj, dt)
    if metrics is None:
        metrics = [geo.compute_metric(flow_traj.boundary_curve_at(i)) for i in range(nt1)]
    ref_positions = geom.curve.samples

    f_bar = np.zeros_like(v_traj)
    a_bar = np.zeros(v_traj.shape[:-1])
    g_bar = np.zeros((nt1, grid.ntheta, 2))
    b_bar = np.zeros((nt1, grid.ntheta))
    tangency = 0.0
    for i in range(nt1):
        a = flow_traj.a[i]
        v, q = v_traj[i], q_traj[i]
        grad_v = grid.gradient(v)
        lap_v = np.stack([grid.laplacian(v[..., 0]), grid.laplacian(v[..., 1])], axis=-1)
        aat = np.einsum("...jl,...kl->...jk", a, a)
        flux = np.einsum("...jk,...ik->...ij", aat, grad_v)   # flux[i, j] = sum_k aat_jk dv_i/dxk
        div_flux = np.stack([grid.dx(flux[..., 0, 0]) + grid.dy(flux[..., 0, 1]),
                             grid.dx(flux[..., 1, 0]) + grid.dy(flux[..., 1, 1])], axis=-1)
        grad_q = grid.scalar_gradient(q)
        at_grad_q = np.einsum("...ki,...k->...i", a, grad_q)
        f_bar[i] = -nu * (lap_v - div_flux) + grad_q - at_grad_q
        a_bar[i] = grid.divergence(v) - np.einsum("...ki,...ik->...", a, grad_v)

        a_b = a[-1]
        grad_v_b = grad_v[-1]
        def_v = grad_v_b + np.swapaxes(grad_v_b, -1, -2)
        m_eta = np.einsum("tik,tkl->til", grad_v_b, a_b)
        d_eta = m_eta + np.swapaxes(m_eta, -1, -2)
        at_n = np.einsum("tki,tk->ti", a_b, nrm)
        at_n_unit = at_n / np.linalg.norm(at_n, axis=1)[:, None]
        def_v_n = np.einsum("tij,tj->ti", def_v, nrm)
        d_eta_atn = np.einsum("tij,tj->ti", d_eta, at_n)
        proj_eta = d_eta_atn - np.einsum("ti,ti->t", d_eta_atn, at_n_unit)[:, None] * at_n_unit
        mismatch = def_v_n - proj_eta
        g1 = mismatch - np.einsum("ti,ti->t", mismatch, nrm)[:, None] * nrm
        tangency = max(tangency, float(np.max(np.abs(np.einsum("ti,ti->t", g1, nrm)))))

        q_b = grid.boundary_values(q)
        s_n = nu * def_v_n - q_b[:, None] * nrm
        s_eta_atn = nu * d_eta_atn - q_b[:, None] * at_n
        g2 = np.einsum("ti,ti->t", nrm, s_n) - np.einsum("ti,ti->t", nrm, s_eta_atn)

        int_v_b = grid.boundary_values(int_v[i])
        lap_t = geo.surface_laplacian(metrics[i], int_v_b)
        lap_0 = geo.surface_laplacian(geom.metric, int_v_b)
        b_bar[i] = np.einsum("ti,ti->t", nrm, lap_t - lap_0)

        surface = sigma * np.einsum("ti,ti->t", nrm,
                                    geo.surface_laplacian(metrics[i], ref_positions))
        g_bar[i] = nu * g1 + (g2 + surface)[:, None] * nrm

    data = LinearProblemData(times=flow_traj.times, f_bar=f_bar, g_bar=g_bar,
                             B_bar=b_bar, a_bar=a_bar,
                             w0=np.zeros(v_traj.shape[1:]))
    return data, tangency


# -- the map and its drivers --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ThetaResult:
    v: np.ndarray
    q: np.ndarray             # full pressure fields (mean-zero + gauge)
    q_mean_zero: np.ndarray
    q_gauge: np.ndarray
    records: tuple
    flow: object
    converged: bool
    linear: object            # last inner LinearTrajectory


def _external_forcing_samples(f_external, flow_traj):
    nt1 = flow_traj.times.shape[0]
    out = np.zeros(flow_traj.eta.shape)
    if f_external is None:
        return out
    for i in range(nt1):
        out[i] = f_external(float(flow_traj.times[i]), flow_traj.eta[i])
    return out


def theta_map(grid, params, v, q, u0, f_external, config, basis=None, geom=None,
              m_cap=None):
    """One application of the outer map: freeze the flow of v, then iterate
    the basic linear problem from (0, 0) until the X-norm difference settles.

    Raises OutsideTrustRegion when the input pair leaves the configured ball,
    HorizonTooLarge/InvertibilityLost when the flow controls fail, and
    NoContraction when inner differences grow three iterates in a row.
    """
    geom = geom or boundary_geometry(grid)
    basis = basis if basis is not None else build_basis(grid, config.m)
    dt = config.dt
    if m_cap is not None:
        x_in = discrete_x_norm(grid, v, q, dt)
        if x_in > m_cap:
            raise OutsideTrustRegion(f"X-norm {x_in:.3e} exceeds M_cap {m_cap:.3e}")
    comp = compatibility_check(u0, np.zeros((grid.ntheta, 2)), grid, geom, params)
    if not comp.passed:
        raise CompatibilityViolation(
            f"[Def u0 N]_tan = {comp.max_violation:.3e} exceeds {comp.tolerance:.1e}")

    flow = integrate_flow(grid, v, dt, geom.normals)
    metrics = [geo.compute_metric(flow.boundary_curve_at(i))
               for i in range(flow.n_samples)]
    f_ext = _external_forcing_samples(f_external, flow)
    worst_alignment = min(r.min_normal_alignment for r in flow.controls)
    worst_det = min(r.min_det_a for r in flow.controls)

    v_n = np.zeros_like(v)
    q_n = np.zeros_like(q)
    records = []
    prev_diff = None
    grow_streak = 0
    converged = False
    lin = pressure = None
    # The inner loop runs a safety factor below the nominal tolerance so its
    # truncation noise does not set the floor of the outer iteration.
    tight = INNER_SAFETY * config.inner_tol
    for n in range(1, config.inner_max_iter + 1):
        data, tangency = compute_iteration_forcings(grid, geom, params, v_n, q_n,
                                                    flow, metrics)
        data = replace(data, f_bar=data.f_bar + f_ext, w0=np.asarray(u0, dtype=float))
        lin = solve_linear_problem(data, config.T, dt, config.m, grid, params,
                                   basis=basis, geom=geom)
        pressure = recover_pressure(lin)
        v_next = lin.w_bar
        q_next = pressure.full()
        diff = discrete_x_norm(grid, v_next - v_n, q_next - q_n, dt)
        x_norm = discrete_x_norm(grid, v_next, q_next, dt)
        ratio = float("nan") if prev_diff is None or prev_diff == 0.0 \
            else diff / prev_diff
        records.append(IterateRecord(index=n, x_norm=x_norm, diff_norm=diff,
                                     ratio=ratio, tangency_max=tangency,
                                     min_alignment=worst_alignment,
                                     min_det_a=worst_det))
        v_n, q_n = v_next, q_next
        scale = max(x_norm, 1.0)
        if diff <= config.inner_tol * scale:
            converged = True
            if diff <= tight * scale or (np.isfinite(ratio) and ratio > 1.0):
                # Below the working tolerance, or bouncing on the noise floor.
                break
        elif np.isfinite(ratio) and ratio > 1.0:
            grow_streak += 1
            if grow_streak >= 3:
                raise NoContraction(
                    f"inner differences grew for 3 consecutive iterates (last ratio {ratio:.3f})")
        else:
            grow_streak = 0
        prev_diff = diff
    return ThetaResult(v=v_n, q=q_n, q_mean_zero=pressure.p, q_gauge=pressure.gauge,
                       records=tuple(records), flow=flow, converged=converged,
                       linear=lin)


def default_m_cap(grid, geom, params, u0, seed_norm):
    """Trust radius: 10x the larger of the seed X-norm and the data scale."""
    lap_id = geo.surface_laplacian(geom.metric, geom.curve.samples)
    curv_term = geo.boundary_sobolev_norm(
        np.einsum("ti,ti->t", geom.normals.normals, lap_id), 0.5)
    data_scale = grid.sobolev_norm(np.asarray(u0, dtype=float), 2) \
        + params.sigma * curv_term
    return 10.0 * max(seed_norm, data_scale)


@dataclass(frozen=True, eq=False)
class NonlinearSolution:
    times: np.ndarray
    v: np.ndarray
    q: np.ndarray
    q_mean_zero: np.ndarray
    q_gauge: np.ndarray
    flow: object
    outer_records: tuple      # (iteration, outer diff norm) pairs
    inner_records: tuple      # tuple of per-outer-call IterateRecord tuples
    converged: bool           # outer difference met the tolerance
    stalled: bool             # stopped on a stagnating noise-floor plateau
    stall_level: float        # relative outer difference where iteration stopped
    boundary_residual: float  # max |S_eta a^T N - sigma lap_g eta| at nodes
    interior_residual: float
    linear: object            # final inner linear trajectory
    m_cap: float

    @property
    def last_inner(self):
        return self.inner_records[-1]

    @property
    def settled(self):
        """Converged, or resolved down to the iteration's numerical floor."""
        return self.converged or (self.stalled and self.stall_level < 1e-4)


def solve_nonlinear(grid, params, u0, f_external, config, seed_v=None, seed_q=None,
                    geom=None, basis=None):
    """Outer fixed-point iteration from the constant-in-time extension of u0."""
    geom = geom or boundary_geometry(grid)
    basis = basis if basis is not None else build_basis(grid, config.m)
    nt1 = config.n_steps + 1
    u0 = np.asarray(u0, dtype=float)
    v = np.broadcast_to(u0, (nt1,) + u0.shape).copy() if seed_v is None \
        else np.asarray(seed_v, dtype=float).copy()
    q = np.zeros((nt1, grid.nr, grid.ntheta)) if seed_q is None \
        else np.asarray(seed_q, dtype=float).copy()
    seed_norm = discrete_x_norm(grid, v, q, config.dt)
    m_cap = config.M_cap if config.M_cap is not None \
        else default_m_cap(grid, geom, params, u0, seed_norm)

    outer_records = []
    inner_records = []
    converged = False
    result = None
    for k in range(1, config.outer_max_iter + 1):
        result = theta_map(grid, params, v, q, u0, f_external, config,
                           basis=basis, geom=geom, m_cap=m_cap)
        inner_records.append(result.records)
        diff = discrete_x_norm(grid, result.v - v, result.q - q, config.dt)
        x_norm = discrete_x_norm(grid, result.v, result.q, config.dt)
        outer_records.append((k, diff))
        v, q = result.v, result.q
        if diff <= config.inner_tol * max(x_norm, 1.0):
            converged = True
            break

    bres = boundary_condition_residual(grid, geom, params, v, q, result.flow)
    ires = interior_residual(grid, params, v, q, result.flow, f_external)
    return NonlinearSolution(times=config.times, v=v, q=q,
                             q_mean_zero=result.q_mean_zero,
                             q_gauge=result.q_gauge, flow=result.flow,
                             outer_records=tuple(outer_records),
                             inner_records=tuple(inner_records),
                             converged=converged, boundary_residual=bres,
                             interior_residual=ires, linear=result.linear,
                             m_cap=m_cap)


def boundary_condition_residual(grid, geom, params, v_traj, q_traj, flow_traj):
    """Pointwise residual of the full vector stress balance on the interface.

    The solver imposes only the split tangential/normal conditions; at the
    fixed point the full vector condition closes because the deformed normal
    stays non-orthogonal to the reference one.
    """
    nrm = geom.normals.normals
    worst = 0.0
    for i in range(v_traj.shape[0]):
        a_b = flow_traj.a[i, -1]
        grad_v_b = grid.gradient(v_traj[i])[-1]
        m_eta = np.einsum("tik,tkl->til", grad_v_b, a_b)
        d_eta = m_eta + np.swapaxes(m_eta, -1, -2)
        at_n = np.einsum("tki,tk->ti", a_b, nrm)
        q_b = grid.boundary_values(q_traj[i])
        s_atn = params.nu * np.einsum("tij,tj->ti", d_eta, at_n) - q_b[:, None] * at_n
        curve = flow_traj.boundary_curve_at(i)
        lap_eta = geo.surface_laplacian(geo.compute_metric(curve), curve.samples)
        worst = max(worst, float(np.max(np.abs(s_atn - params.sigma * lap_eta))))
    return worst


def interior_residual(grid, params, v_traj, q_traj, flow_traj, f_external):
    """Max-norm strong residual of the interior momentum balance."""
    dt = float(flow_traj.times[1] - flow_traj.times[0])
    v_t = time_derivative(v_traj, dt)
    f_ext = _external_forcing_samples(f_external, flow_traj)
    worst = 0.0
    for i in range(v_traj.shape[0]):
        a = flow_traj.a[i]
        grad_v = grid.gradient(v_traj[i])
        aat = np.einsum("...jl,...kl->...jk", a, a)
        flux = np.einsum("...jk,...ik->...ij", aat, grad_v)
        div_flux = np.stack([grid.dx(flux[..., 0, 0]) + grid.dy(flux[..., 0, 1]),
                             grid.dx(flux[..., 1, 0]) + grid.dy(flux[..., 1, 1])], axis=-1)
        at_grad_q = np.einsum("...ki,...k->...i", a,
                              grid.scalar_gradient(q_traj[i]))
        res = v_t[i] - params.nu * div_flux + at_grad_q - f_ext[i]
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


# -- contraction and uniqueness diagnostics ------------------------------------------

@dataclass(frozen=True)
class ContractionSummary:
    rho: float
    contracting: bool
    n_iterates: int
    strictly_decreasing: bool


def contraction_monitor(records):
    """Geometric-fit contraction ratio of the inner difference norms."""
    diffs = np.array([r.diff_norm for r in records], dtype=float)
    if len(diffs) < 3:
        raise ValueError("need at least 3 inner iterates")
    strictly = bool(np.all(np.diff(diffs) < 0.0))
    positive = diffs[diffs > 0.0]
    if len(positive) < 2:
        rho = 0.0
    else:
        idx = np.arange(len(positive))
        slope = np.polyfit(idx, np.log(positive), 1)[0]
        rho = float(np.exp(slope))
    return ContractionSummary(rho=rho, contracting=rho < 1.0,
                              n_iterates=len(diffs), strictly_decreasing=strictly)


@dataclass(frozen=True)
class UniquenessReport:
    distance: float
    tolerance: float
    baseline_norm: float

    @property
    def passed(self):
        return self.distance <= self.tolerance


def uniqueness_probe(grid, params, u0, f_external, config, perturbation_scale,
                     seed=0, geom=None, basis=None, baseline=None):
    """Re-run the outer iteration from a perturbed seed and compare limits.

    The perturbation is a random combination of divergence-free basis fields,
    constant in time, normalized to unit velocity L^2 norm and scaled.
    """
    geom = geom or boundary_geometry(grid)
    basis = basis if basis is not None else build_basis(grid, config.m)
    if baseline is None:
        baseline = solve_nonlinear(grid, params, u0, f_external, config,
                                   geom=geom, basis=basis)
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(basis.count)
    bump = basis.synthesize(coeffs / np.linalg.norm(coeffs))
    nt1 = config.n_steps + 1
    seed_v = np.broadcast_to(np.asarray(u0, dtype=float), (nt1,) + bump.shape).copy()
    seed_v += perturbation_scale * bump
    perturbed = solve_nonlinear(grid, params, u0, f_external, config,
                                seed_v=seed_v, geom=geom, basis=basis)
    distance = discrete_x_norm(grid, perturbed.v - baseline.v,
                               perturbed.q - baseline.q, config.dt)
    base_norm = discrete_x_norm(grid, baseline.v, baseline.q, config.dt)
    tol = 10.0 * config.inner_tol * max(base_norm, 1.0)
    return UniquenessReport(distance=distance, tolerance=tol,
                            baseline_norm=base_norm)
