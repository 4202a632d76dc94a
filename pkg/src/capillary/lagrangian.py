"""Lagrangian kinematics: the flow map, its inverse deformation gradient,
pulled-back deformation/stress tensors, and the geometric runtime controls
that gate every later stage of the scheme."""

from dataclasses import dataclass

import numpy as np

from .errors import HorizonTooLarge, InvertibilityLost
from .geometry import BoundaryCurve
from .spectral import cumulative_trapezoid


def invert_2x2_field(mat):
    """Closed-form nodewise inverse; raises if any determinant is nonpositive."""
    det = mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] * mat[..., 1, 0]
    if det.min() <= 0.0:
        raise InvertibilityLost(f"min det grad eta = {det.min():.3e}")
    inv = np.empty_like(mat)
    inv[..., 0, 0] = mat[..., 1, 1]
    inv[..., 1, 1] = mat[..., 0, 0]
    inv[..., 0, 1] = -mat[..., 0, 1]
    inv[..., 1, 0] = -mat[..., 1, 0]
    return inv / det[..., None, None], det


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Flow map sample at one instant, with its gradient, inverse and determinant."""

    eta: np.ndarray            # (nr, ntheta, 2) positions
    grad_eta: np.ndarray       # (nr, ntheta, 2, 2)
    a: np.ndarray              # (nr, ntheta, 2, 2), inverse of grad_eta
    det_grad_eta: np.ndarray   # (nr, ntheta)
    time: float

    @staticmethod
    def from_eta(grid, eta, time):
        grad = grid.gradient(eta)
        a, det = invert_2x2_field(grad)
        return FlowMap(eta=eta, grad_eta=grad, a=a, det_grad_eta=det, time=time)

    @staticmethod
    def identity(grid):
        return FlowMap.from_eta(grid, grid.identity_map(), 0.0)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Symmetric 2x2 tensor per node; kind in {"Def", "D_eta", "S_eta"}."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        asym = np.max(np.abs(self.values - np.swapaxes(self.values, -1, -2)))
        if asym > 1e-12 * max(1.0, np.max(np.abs(self.values))):
            raise ValueError(f"tensor of kind {self.kind} lost symmetry: {asym:.3e}")


def compute_a(grid, flow_or_eta):
    """Inverse deformation gradient a = (grad eta)^{-1} by closed-form inversion."""
    if isinstance(flow_or_eta, FlowMap):
        grad = flow_or_eta.grad_eta
    else:
        grad = grid.gradient(np.asarray(flow_or_eta, dtype=float))
    a, _ = invert_2x2_field(grad)
    return a


def advance_flow_map(grid, flow, v, dt, v_end=None):
    """Advance eta by dt: explicit Euler on v, trapezoidal when v_end is given."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = np.asarray(v, dtype=float)
    if v.shape != flow.eta.shape:
        raise ValueError(f"velocity shape {v.shape} != flow shape {flow.eta.shape}")
    incr = v if v_end is None else 0.5 * (v + np.asarray(v_end, dtype=float))
    return FlowMap.from_eta(grid, flow.eta + dt * incr, flow.time + dt)


def deformation_tensor_eta(grid, v, a):
    """Pulled-back deformation: D[i,l] = v^i,_k a^k_l + v^l,_k a^k_i.

    With a = Id this is Def v = grad v + (grad v)^T.
    """
    grad_v = grid.gradient(np.asarray(v, dtype=float))
    m = np.einsum("...ik,...kl->...il", grad_v, a)
    return TensorField(values=m + np.swapaxes(m, -1, -2), kind="D_eta")


def stress_eta(grid, v, q, a, nu):
    """Pulled-back stress: nu * D_eta(v) - q * Id."""
    d = deformation_tensor_eta(grid, v, a)
    vals = nu * d.values.copy()
    q = np.asarray(q, dtype=float)
    vals[..., 0, 0] -= q
    vals[..., 1, 1] -= q
    return TensorField(values=vals, kind="S_eta")


@dataclass(frozen=True)
class ControlReport:
    """Snapshot of the geometric controls the iteration must maintain."""

    sup_a_t_minus_id: float
    min_normal_alignment: float
    min_det_a: float

    @property
    def alignment_ok(self):
        return self.min_normal_alignment >= 0.5

    @property
    def det_ok(self):
        return self.min_det_a >= 0.5

    @property
    def passed(self):
        return self.alignment_ok and self.det_ok


def geometric_controls(flow, normals):
    """Evaluate sup ||a^T - Id||, boundary normal alignment, and min det a."""
    a_t = np.swapaxes(flow.a, -1, -2)
    sup_dev = float(np.max(np.abs(a_t - np.eye(2))))
    a_bnd = flow.a[-1]
    n = normals.normals
    at_n = np.einsum("tki,tk->ti", a_bnd, n)
    at_n_unit = at_n / np.linalg.norm(at_n, axis=1)[:, None]
    alignment = float(np.min(np.einsum("ti,ti->t", at_n_unit, n)))
    min_det_a = float(np.min(1.0 / flow.det_grad_eta))
    return ControlReport(sup_a_t_minus_id=sup_dev,
                         min_normal_alignment=alignment,
                         min_det_a=min_det_a)


def pushforward_boundary(flow):
    """The moving interface: restriction of eta to the outer radial layer."""
    return BoundaryCurve(flow.eta[-1].copy())


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    """Flow maps along a run, stored as stacked arrays plus control snapshots."""

    times: np.ndarray       # (nt+1,)
    eta: np.ndarray         # (nt+1, nr, ntheta, 2)
    grad_eta: np.ndarray    # (nt+1, nr, ntheta, 2, 2)
    a: np.ndarray           # (nt+1, nr, ntheta, 2, 2)
    det_grad_eta: np.ndarray
    controls: tuple         # ControlReport per sample

    @property
    def n_samples(self):
        return len(self.times)

    def flow_at(self, i):
        return FlowMap(eta=self.eta[i], grad_eta=self.grad_eta[i], a=self.a[i],
                       det_grad_eta=self.det_grad_eta[i], time=float(self.times[i]))

    def boundary_curve_at(self, i):
        return BoundaryCurve(self.eta[i, -1].copy())


def integrate_flow(grid, v_traj, dt, normals, enforce_controls=True):
    """Build the flow of a sampled velocity: eta(t) = Id + running trapezoid of v.

    Raises InvertibilityLost if det grad eta ever drops to zero, and
    HorizonTooLarge if the alignment/determinant controls fall below 1/2
    (the hypotheses every later estimate rests on; we abort rather than clamp).
    """
    v_traj = np.asarray(v_traj, dtype=float)
    nt = v_traj.shape[0] - 1
    times = dt * np.arange(nt + 1)
    displacement = cumulative_trapezoid(v_traj, dt)
    identity = grid.identity_map()

    eta = identity[None] + displacement
    grads = np.empty(eta.shape[:-1] + (2, 2))
    a = np.empty_like(grads)
    det = np.empty(eta.shape[:-1])
    reports = []
    for i in range(nt + 1):
        grads[i] = grid.gradient(eta[i])
        try:
            a[i], det[i] = invert_2x2_field(grads[i])
        except InvertibilityLost as exc:
            raise InvertibilityLost(f"t={times[i]:.4f}: {exc}") from exc
        report = geometric_controls(
            FlowMap(eta=eta[i], grad_eta=grads[i], a=a[i], det_grad_eta=det[i],
                    time=float(times[i])), normals)
        reports.append(report)
        if enforce_controls and not report.passed:
            raise HorizonTooLarge(
                f"geometric controls failed at t={times[i]:.4f}: "
                f"alignment={report.min_normal_alignment:.3f}, "
                f"det a={report.min_det_a:.3f}; shrink the horizon")
    return FlowTrajectory(times=times, eta=eta, grad_eta=grads, a=a,
                          det_grad_eta=det, controls=tuple(reports))
