"""System parameters and payload/UAV bookkeeping for the transport formation.

Covers UAV position reconstruction from the payload pose and cable
directions, required resultant force, payload moments from cable tensions,
and an end-to-end trajectory verification report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import EnvironmentMap


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ w = v x w."""
    x, y, z = np.asarray(v, float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def equilateral_attachments(circumradius: float = 0.5, n: int = 3) -> np.ndarray:
    """Attachment offsets at the vertices of a regular n-gon in the payload
    plane, centered on the mass center."""
    angles = np.pi / 2 + 2 * np.pi * np.arange(n) / n
    return np.stack(
        [circumradius * np.cos(angles), circumradius * np.sin(angles), np.zeros(n)],
        axis=1,
    )


@dataclass
class SystemParams:
    m0: float = 5.0
    J0: np.ndarray = field(default_factory=lambda: np.diag([0.6875, 0.59375, 0.78333]))
    n_C: int = 3
    m_i: float = 1.0
    l_i: float = 0.75
    rho_i: np.ndarray = field(default_factory=equilateral_attachments)
    uav_radius: float = 0.3
    payload_half_diag: float = 0.5

    def __post_init__(self):
        self.J0 = np.asarray(self.J0, float)
        self.rho_i = np.asarray(self.rho_i, float)
        if not np.allclose(self.J0, self.J0.T, atol=1e-12):
            raise ValueError("J0 must be symmetric")
        if np.any(np.linalg.eigvalsh(self.J0) <= 0):
            raise ValueError("J0 must be positive definite")
        if self.l_i <= 0:
            raise ValueError("cable length must be positive")

    def min_tube_radius(self, alpha_u: float) -> float:
        """Tube radius covering payload body, tilted cables, and UAV hulls."""
        return self.payload_half_diag + self.l_i * np.sin(alpha_u) + self.uav_radius


@dataclass
class PayloadRefState:
    xi0: np.ndarray
    R0: np.ndarray
    Omega: np.ndarray
    Omega_dot: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.R0 = np.asarray(self.R0, float)
        if np.max(np.abs(self.R0.T @ self.R0 - np.eye(3))) > 1e-10:
            raise ValueError("R0 must be orthonormal")


def uav_position(xi0, R0, rho_i, l_i: float, q_i) -> np.ndarray:
    """UAV position xi0 + R0 rho_i + l_i q_i for a unit cable direction q_i."""
    q = np.asarray(q_i, float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-9:
        raise ValueError("cable direction must be a unit vector")
    return np.asarray(xi0, float) + np.asarray(R0, float) @ np.asarray(rho_i, float) + l_i * q


def required_force(a, params: SystemParams, g_vec) -> np.ndarray:
    """Resultant cable force m0*(a + g) the formation must transmit."""
    return params.m0 * (np.asarray(a, float) + np.asarray(g_vec, float))


def payload_moment(F_list, R_ref, rho_list) -> np.ndarray:
    """Total moment sum_i rho_i x (R_ref^T F_i) on the payload."""
    F = np.atleast_2d(np.asarray(F_list, float))
    rho = np.atleast_2d(np.asarray(rho_list, float))
    if F.shape[0] != rho.shape[0]:
        raise ValueError("need one attachment per cable force")
    R = np.asarray(R_ref, float)
    m = np.zeros(3)
    for fi, ri in zip(F, rho):
        m += np.cross(ri, R.T @ fi)
    return m


def reference_moment(J0, Omega, Omega_dot) -> np.ndarray:
    """Rigid-body moment J0*Omega_dot + Omega x (J0*Omega)."""
    J0 = np.asarray(J0, float)
    Om = np.asarray(Omega, float)
    return J0 @ np.asarray(Omega_dot, float) + np.cross(Om, J0 @ Om)


def tilt_angle(F) -> float:
    """Angle between a force vector and vertical (pi for non-lifting forces)."""
    F = np.asarray(F, float)
    n = np.linalg.norm(F)
    if n < 1e-12:
        return 0.0
    return float(np.arccos(np.clip(F[2] / n, -1.0, 1.0)))


@dataclass
class VerifyBounds:
    T_u: float = 35.0
    alpha_u: float = np.deg2rad(22.0)
    T_l: float = 1.0  # reporting threshold, not a pass criterion
    equil_tol: float | None = None  # None -> 1e-6 * m0 * 9.81
    moment_max: float = np.inf
    tol: float = 1e-6  # slack allowed on tension/tilt bounds


@dataclass
class VerificationReport:
    max_tension: float
    min_tension: float
    max_tilt: float
    max_equilibrium_residual: float
    max_moment_norm: float
    min_clearance_along_traj: float
    pass_: bool
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "max_tension_n": self.max_tension,
            "min_tension_n": self.min_tension,
            "max_tilt_rad": self.max_tilt,
            "max_equilibrium_residual_n": self.max_equilibrium_residual,
            "max_moment_norm_nm": self.max_moment_norm,
            "min_clearance_along_traj_m": self.min_clearance_along_traj,
            "pass": self.pass_,
            "warnings": list(self.warnings),
        }


def verify(
    spline,
    tensions,
    params: SystemParams,
    bounds: VerifyBounds,
    envmap: EnvironmentMap | None = None,
    g_vec=(0.0, 0.0, 9.81),
    sample_hz: float = 100.0,
    ref_moments=None,
) -> VerificationReport:
    """Audit a trajectory/tension solution against the physical constraints.

    Samples the payload spline at `sample_hz`, recomputes force equilibrium
    at the tension sample instants, reconstructs UAV positions with cable
    directions aligned to the tensions (linearly interpolated between
    samples for the dense clearance sweep), and aggregates a pass/fail.
    Clearance is measured to obstacle surfaces only; UAV points must clear
    them by at least `params.uav_radius`.
    """
    g_vec = np.asarray(g_vec, float)
    equil_tol = bounds.equil_tol
    if equil_tol is None:
        equil_tol = 1e-6 * params.m0 * float(np.linalg.norm(g_vec))

    times = np.asarray(tensions.times, float)
    F = np.asarray(tensions.forces, float)  # (Ns, nC, 3)
    norms = np.linalg.norm(F, axis=2)
    max_tension = float(norms.max())
    min_tension = float(norms.min())
    max_tilt = float(max(tilt_angle(f) for k in range(F.shape[0]) for f in F[k]))

    acc = spline.eval(times, q=2)
    resid = np.linalg.norm(F.sum(axis=1) - params.m0 * (acc + g_vec), axis=1)
    max_equil = float(resid.max())

    if ref_moments is None:
        ref_moments = np.zeros((F.shape[0], 3))
    moments = np.array(
        [payload_moment(F[k], np.eye(3), params.rho_i) - ref_moments[k]
         for k in range(F.shape[0])]
    )
    max_moment = float(np.linalg.norm(moments, axis=1).max())

    warnings_ = []
    if min_tension < bounds.T_l:
        warnings_.append(
            f"min tension {min_tension:.3f} N below reporting threshold {bounds.T_l} N"
        )

    # dense clearance sweep of payload and reconstructed UAV positions
    t0, t1 = spline.knots[0], spline.knots[-1]
    dense_t = np.arange(t0, t1 + 0.5 / sample_hz, 1.0 / sample_hz)
    pos = spline.eval(dense_t, q=0)
    if envmap is not None and envmap.obstacles:
        margins = [np.asarray(envmap.obstacle_distance(pos), float)]
        for i in range(params.n_C):
            Fi = np.stack([np.interp(dense_t, times, F[:, i, ax]) for ax in range(3)],
                          axis=1)
            ni = np.linalg.norm(Fi, axis=1)
            qi = np.where(ni[:, None] > 1e-9, Fi / np.maximum(ni, 1e-9)[:, None],
                          np.array([0.0, 0.0, 1.0]))
            uav = pos + params.rho_i[i][None, :] + params.l_i * qi
            margins.append(np.asarray(envmap.obstacle_distance(uav), float) - params.uav_radius)
        min_clearance = float(np.min([m.min() for m in margins]))
    else:
        min_clearance = np.inf

    ok = (
        max_tension <= bounds.T_u + bounds.tol
        and max_tilt <= bounds.alpha_u + bounds.tol
        and max_equil <= equil_tol
        and max_moment <= bounds.moment_max
        and min_clearance > 0.0
    )
    return VerificationReport(
        max_tension=max_tension,
        min_tension=min_tension,
        max_tilt=max_tilt,
        max_equilibrium_residual=max_equil,
        max_moment_norm=max_moment,
        min_clearance_along_traj=min_clearance,
        pass_=bool(ok),
        warnings=warnings_,
    )
