"""Payload trajectory smoothing as a joint conic program.

The payload path is an S-segment degree-n piecewise polynomial; cable force
vectors at discrete sample instants are decision variables alongside the
polynomial coefficients. The objective stacks the r-th derivative smoothness
energy with force magnitude/variation, tension-sharing, and moment-tracking
regularizers; constraints enforce waypoints, derivative continuity, sampled
velocity/acceleration boxes, force equilibrium, a tension cap, and a
vertical tilt cone on every cable force.

Matrices are assembled in a per-segment time-scaled monomial basis (local
time divided by the segment duration) to keep the problem well conditioned;
the returned spline is always converted back to plain local-time
coefficients.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .dynmodel import equilateral_attachments, hat, tilt_angle


class IllPosedError(ValueError):
    """Equality system is rank-deficient beyond the expected nullspace."""


class SolverFailure(RuntimeError):
    """The conic solver did not return a usable optimum."""


class InfeasibleProblem(RuntimeError):
    """The conic program was certified infeasible."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


@dataclass
class OptConfig:
    r: int = 5  # smoothness derivative order
    n: int = 9  # polynomial degree
    N_s: int | None = None  # total force samples; None -> samples_per_segment * S
    samples_per_segment: int = 10
    lambda_f: float = 10.0
    lambda_T: float = 1.0
    lambda_share: float = 1.0
    lambda_M: float = 0.1
    T_u: float = 35.0
    alpha_u: float = float(np.deg2rad(22.0))
    v_max: float = 2.0
    a_max: float = 1.0
    m0: float = 5.0
    g_vec: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 9.81]))
    n_cables: int = 3
    attachments: np.ndarray = field(default_factory=equilateral_attachments)
    T_l: float = 1.0  # reporting threshold only; a hard lower bound is nonconvex
    min_duration: float = 0.1
    densify_step: float | None = 3.0  # subdivide long edges so the spline hugs the tube
    rate_margin: float = 0.02  # shave sampled v/a boxes so the continuous bounds hold
    ref_rotations: np.ndarray | None = None  # (N_s, 3, 3); None -> identity
    ref_moments: np.ndarray | None = None  # (N_s, 3); None -> zero

    def __post_init__(self):
        self.g_vec = np.asarray(self.g_vec, float)
        self.attachments = np.asarray(self.attachments, float)
        if self.r < 1:
            raise ValueError("smoothness order r must be >= 1")
        if self.n < 2 * self.r - 1:
            raise ValueError("degree n must be >= 2r-1 for full continuity")
        hover = self.m0 * np.linalg.norm(self.g_vec) / (
            self.n_cables * np.cos(self.alpha_u)
        )
        if self.T_u <= hover:
            warnings.warn(
                f"T_u={self.T_u} is at or below the hover-feasibility bound "
                f"{hover:.3f} N; the program may be infeasible",
                stacklevel=2,
            )


# -- time allocation ----------------------------------------------------------

def densify_waypoints(waypoints, step: float) -> np.ndarray:
    """Subdivide edges longer than `step` with evenly spaced interior points.

    The smoothing stage carries no obstacle constraints; interpolating the
    tube polyline at a bounded spacing keeps the spline's deviation from the
    collision-checked path small.
    """
    wps = np.atleast_2d(np.asarray(waypoints, float))
    if len(wps) < 2 or step <= 0:
        return wps.copy()
    out = [wps[0]]
    for a, b in zip(wps[:-1], wps[1:]):
        length = float(np.linalg.norm(b - a))
        pieces = max(1, int(np.ceil(length / step)))
        for j in range(1, pieces + 1):
            out.append(a + (b - a) * (j / pieces))
    return np.array(out)


def merge_coincident(waypoints, tol: float = 1e-9) -> np.ndarray:
    """Drop consecutive duplicate waypoints (with a warning)."""
    wps = np.atleast_2d(np.asarray(waypoints, float))
    keep = [wps[0]]
    dropped = 0
    for w in wps[1:]:
        if np.linalg.norm(w - keep[-1]) <= tol:
            dropped += 1
        else:
            keep.append(w)
    if dropped:
        warnings.warn(f"merged {dropped} coincident waypoint(s)", stacklevel=2)
    return np.array(keep)


def allocate_times(waypoints, v_max: float, a_max: float,
                   min_duration: float = 0.1) -> np.ndarray:
    """Knot times from a trapezoidal speed profile at 0.8 of the limits.

    Short segments use a triangular speed profile peaking at the cruise
    speed; long ones add the ramp time to the cruise time. Coincident
    waypoints are merged first; a degenerate single waypoint yields one
    minimum-duration hold segment.
    """
    wps = merge_coincident(waypoints)
    if len(wps) < 2:
        return np.array([0.0, min_duration])
    v_c = 0.8 * v_max
    a_c = 0.8 * a_max
    lengths = np.linalg.norm(np.diff(wps, axis=0), axis=1)
    crit = v_c * v_c / a_c
    durations = np.where(lengths < crit, 2.0 * lengths / v_c,
                         lengths / v_c + v_c / a_c)
    durations = np.maximum(durations, min_duration)
    return np.concatenate([[0.0], np.cumsum(durations)])


# -- polynomial machinery -------------------------------------------------------

def _fall(j: int, q: int) -> float:
    """Falling factorial j!/(j-q)! (0 when q > j)."""
    return 0.0 if q > j else factorial(j) / factorial(j - q)


def coeff_index(s: int, j: int, axis: int, n: int) -> int:
    return 3 * (s * (n + 1) + j) + axis


def build_smoothness(durations, n: int, r: int, tscale=None) -> sp.csr_matrix:
    """Block-diagonal Gram matrix Q with c^T Q c = integral ||d^r xi/dt^r||^2.

    `tscale` sets the per-segment basis scale sigma_s (basis (tau/sigma)^j);
    None means the plain local-time monomial basis (sigma = 1).
    """
    durations = np.asarray(durations, float)
    S = len(durations)
    sigma = np.ones(S) if tscale is None else np.asarray(tscale, float)
    rows, cols, vals = [], [], []
    cond_worst = 1.0
    for s in range(S):
        T = durations[s]
        sg = sigma[s]
        block = np.zeros((n + 1, n + 1))
        for j in range(r, n + 1):
            for k in range(r, n + 1):
                p = j + k - 2 * r + 1
                block[j, k] = (
                    _fall(j, r) * _fall(k, r) * (T / sg) ** p * sg ** (1 - 2 * r) / p
                )
        active = block[r:, r:]
        if active.size:
            try:
                cond_worst = max(cond_worst, float(np.linalg.cond(active)))
            except np.linalg.LinAlgError:
                pass
        for j in range(r, n + 1):
            for k in range(r, n + 1):
                if block[j, k] == 0.0:
                    continue
                for axis in range(3):
                    rows.append(coeff_index(s, j, axis, n))
                    cols.append(coeff_index(s, k, axis, n))
                    vals.append(block[j, k])
    if cond_worst > 1e12:
        warnings.warn(
            f"smoothness Gram matrix condition {cond_worst:.2e} exceeds 1e12; "
            "consider shorter segments or the scaled basis",
            stacklevel=2,
        )
    size = 3 * S * (n + 1)
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def smoothness_factor(durations, n: int, r: int, tscale=None) -> sp.csr_matrix:
    """Sparse L with L^T L = Q, via exact Gauss-Legendre quadrature of the
    r-th-derivative Gram (integrand degree 2(n-r), so n-r+1 nodes suffice)."""
    durations = np.asarray(durations, float)
    S = len(durations)
    sigma = np.ones(S) if tscale is None else np.asarray(tscale, float)
    k = n - r + 1
    nodes, weights = np.polynomial.legendre.leggauss(k)
    size = 3 * S * (n + 1)
    rows, cols, vals = [], [], []
    rr = 0
    for s in range(S):
        T = durations[s]
        sg = sigma[s]
        taus = 0.5 * T * (nodes + 1.0)
        ws = 0.5 * T * weights
        for g in range(k):
            base = np.zeros(n + 1)
            for j in range(r, n + 1):
                base[j] = _fall(j, r) * (taus[g] / sg) ** (j - r) / sg**r
            wgt = np.sqrt(ws[g])
            for axis in range(3):
                for j in range(r, n + 1):
                    rows.append(rr)
                    cols.append(coeff_index(s, j, axis, n))
                    vals.append(wgt * base[j])
                rr += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(rr, size))


def _basis_derivative(n: int, tau: float, q: int, sigma: float) -> np.ndarray:
    """Row of d^q/dt^q [(tau/sigma)^j] for j = 0..n."""
    row = np.zeros(n + 1)
    x = tau / sigma
    for j in range(q, n + 1):
        row[j] = _fall(j, q) * x ** (j - q) / sigma**q
    return row


def _segment_of(knots: np.ndarray, t: float) -> int:
    S = len(knots) - 1
    s = int(np.searchsorted(knots, t, side="right")) - 1
    return min(max(s, 0), S - 1)


def derivative_row(knots, n: int, t: float, q: int, tscale=None) -> np.ndarray:
    """(3, 3S(n+1)) map from stacked coefficients to d^q xi(t)/dt^q."""
    knots = np.asarray(knots, float)
    if t < knots[0] - 1e-12 or t > knots[-1] + 1e-12:
        raise ValueError(f"time {t} outside [{knots[0]}, {knots[-1]}]")
    if q > n:
        raise ValueError("derivative order exceeds polynomial degree")
    S = len(knots) - 1
    s = _segment_of(knots, t)
    sigma = 1.0 if tscale is None else float(np.asarray(tscale, float)[s])
    row = _basis_derivative(n, t - knots[s], q, sigma)
    out = np.zeros((3, 3 * S * (n + 1)))
    for j in range(n + 1):
        for axis in range(3):
            out[axis, coeff_index(s, j, axis, n)] = row[j]
    return out


def build_equalities(waypoints, knots, r: int, n: int, tscale=None):
    """Waypoint, continuity (orders 0..r-1), and rest-to-rest boundary rows.

    Returns (A_eq, b_eq); raises IllPosedError when the rows are not
    linearly independent.
    """
    wps = np.atleast_2d(np.asarray(waypoints, float))
    knots = np.asarray(knots, float)
    S = len(knots) - 1
    if len(wps) != S + 1:
        raise ValueError("need one waypoint per knot")
    sigma = np.ones(S) if tscale is None else np.asarray(tscale, float)
    ncoef = 3 * S * (n + 1)
    rows = []
    rhs = []

    def add(segment, tau, q, target):
        base = _basis_derivative(n, tau, q, sigma[segment])
        for axis in range(3):
            row = np.zeros(ncoef)
            for j in range(n + 1):
                row[coeff_index(segment, j, axis, n)] = base[j]
            rows.append(row)
            rhs.append(target[axis])

    def add_pair(segment, q):
        # derivative continuity: end of `segment` equals start of `segment+1`
        left = _basis_derivative(n, knots[segment + 1] - knots[segment], q, sigma[segment])
        right = _basis_derivative(n, 0.0, q, sigma[segment + 1])
        for axis in range(3):
            row = np.zeros(ncoef)
            for j in range(n + 1):
                row[coeff_index(segment, j, axis, n)] = left[j]
                row[coeff_index(segment + 1, j, axis, n)] -= right[j]
            rows.append(row)
            rhs.append(0.0)

    add(0, 0.0, 0, wps[0])
    for s in range(S):
        add(s, knots[s + 1] - knots[s], 0, wps[s + 1])
    for s in range(S - 1):
        for q in range(r):
            add_pair(s, q)
    zero = np.zeros(3)
    for q in range(1, r):
        add(0, 0.0, q, zero)
        add(S - 1, knots[S] - knots[S - 1], q, zero)

    A = np.array(rows)
    b = np.array(rhs)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise IllPosedError("equality system has linearly dependent rows")
    return A, b


def sample_times(knots, per_segment: int, total: int | None = None) -> np.ndarray:
    """Chebyshev-like sample grid: per segment, points clustering at the ends,
    including the segment's right knot (the global start is excluded)."""
    knots = np.asarray(knots, float)
    S = len(knots) - 1
    if total is not None:
        base = total // S
        extra = total - base * S
        counts = [base + (1 if s < extra else 0) for s in range(S)]
    else:
        counts = [per_segment] * S
    ts = []
    for s in range(S):
        k = counts[s]
        if k < 1:
            raise ValueError("need at least one sample per segment")
        j = np.arange(1, k + 1)
        x = 0.5 * (1.0 - np.cos(j * np.pi / k))
        ts.append(knots[s] + (knots[s + 1] - knots[s]) * x)
    return np.concatenate(ts)


# -- problem containers ---------------------------------------------------------

@dataclass
class SOCGroup:
    """Batched second-order cones: for each j, ||(A x + b)[3j:3j+3]|| <= (C x + d)[j]."""

    A: sp.csr_matrix
    b: np.ndarray
    C: sp.csr_matrix
    d: np.ndarray

    @property
    def count(self) -> int:
        return self.d.shape[0]


@dataclass
class ConicProblem:
    P: sp.csr_matrix
    q: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    socs: list[SOCGroup]
    offset: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass
class ConicSolution:
    x: np.ndarray | None
    objective: float
    status: str  # optimal | inaccurate | infeasible | unbounded | failed
    residuals: dict

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "inaccurate")


@dataclass
class TensionProfile:
    times: np.ndarray
    forces: np.ndarray  # (N_s, n_C, 3)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.forces, axis=2)

    def max_tilt(self) -> float:
        return float(max(tilt_angle(f) for k in range(self.forces.shape[0])
                         for f in self.forces[k]))


class PolySpline:
    """Piecewise polynomial xi_s(t) = sum_j c_{s,j} (t - t_{s-1})^j."""

    def __init__(self, knots, coeffs):
        self.knots = np.asarray(knots, float)
        self.coeffs = np.asarray(coeffs, float)  # (S, n+1, 3)
        if self.coeffs.shape[0] != len(self.knots) - 1:
            raise ValueError("coefficient blocks must match segments")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")

    @property
    def S(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def duration(self) -> float:
        return float(self.knots[-1] - self.knots[0])

    def eval(self, t, q: int = 0) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(t, float))
        segs = np.clip(np.searchsorted(self.knots, ts, side="right") - 1, 0, self.S - 1)
        tau = ts - self.knots[segs]
        out = np.zeros((len(ts), 3))
        for j in range(q, self.n + 1):
            w = _fall(j, q) * tau ** (j - q)
            out += w[:, None] * self.coeffs[segs, j, :]
        return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out

    def knot_continuity(self, r: int) -> float:
        """Max relative jump of derivatives 0..r-1 across interior knots."""
        worst = 0.0
        for s in range(self.S - 1):
            t = self.knots[s + 1]
            tau_l = t - self.knots[s]
            for q in range(r):
                left = np.zeros(3)
                right = np.zeros(3)
                for j in range(q, self.n + 1):
                    left += _fall(j, q) * tau_l ** (j - q) * self.coeffs[s, j, :]
                right = _fall(q, q) * self.coeffs[s + 1, q, :]
                scale = max(1.0, float(np.linalg.norm(left)))
                worst = max(worst, float(np.linalg.norm(left - right)) / scale)
        return worst

    def waypoint_residual(self, waypoints) -> float:
        wps = np.atleast_2d(np.asarray(waypoints, float))
        vals = self.eval(self.knots, q=0)
        return float(np.max(np.linalg.norm(vals - wps, axis=1)))


def spline_from_scaled(knots, x_coeffs, n: int, tscale) -> PolySpline:
    """Convert stacked scaled-basis coefficients to a plain-basis spline."""
    knots = np.asarray(knots, float)
    S = len(knots) - 1
    sigma = np.asarray(tscale, float)
    coeffs = np.zeros((S, n + 1, 3))
    for s in range(S):
        for j in range(n + 1):
            for axis in range(3):
                coeffs[s, j, axis] = x_coeffs[coeff_index(s, j, axis, n)] / sigma[s] ** j
    return PolySpline(knots, coeffs)


# -- assembly -------------------------------------------------------------------

def _stack_rows(knots, n, times, q, tscale) -> sp.csr_matrix:
    blocks = [sp.csr_matrix(derivative_row(knots, n, float(t), q, tscale)) for t in times]
    return sp.vstack(blocks, format="csr")


def assemble(waypoints, cfg: OptConfig, knots=None) -> ConicProblem:
    """Build the joint spline/tension conic program for a waypoint sequence."""
    wps = merge_coincident(waypoints)
    if len(wps) == 1:
        wps = np.vstack([wps[0], wps[0] + 0.0])
        knots = np.array([0.0, cfg.min_duration])
        hold = True
    else:
        hold = False
        if knots is None:
            knots = allocate_times(wps, cfg.v_max, cfg.a_max, cfg.min_duration)
    knots = np.asarray(knots, float)
    S = len(knots) - 1
    n = cfg.n
    durations = np.diff(knots)
    tscale = np.maximum(durations, 1.0)  # clamp: sub-second scales blow up sigma^-r

    nc = 3 * S * (n + 1)
    grid = sample_times(knots, cfg.samples_per_segment, total=cfg.N_s)
    Ns = len(grid)
    nC = cfg.n_cables
    nF = 3 * Ns * nC
    N = nc + nF

    def f_index(k, i):
        return nc + 3 * (k * nC + i)

    Q = build_smoothness(durations, n, cfg.r, tscale)
    A_sp, b_sp = build_equalities(wps, knots, cfg.r, n, tscale)

    A1 = _stack_rows(knots, n, grid, 1, tscale)  # (3Ns, nc)
    A2 = _stack_rows(knots, n, grid, 2, tscale)

    # objective as stacked least-squares factors: J = 0.5 ||L x + b_f||^2,
    # so P = L^T L, q = L^T b_f, and the constant offset is 0.5 b_f.b_f
    factors: list[sp.csr_matrix] = []
    shifts: list[np.ndarray] = []

    LQ = smoothness_factor(durations, n, cfg.r, tscale)
    factors.append(sp.hstack([LQ, sp.csr_matrix((LQ.shape[0], nF))], format="csr"))
    shifts.append(np.zeros(LQ.shape[0]))

    if cfg.lambda_T > 0:
        eyeF = sp.hstack(
            [sp.csr_matrix((nF, nc)), sp.eye(nF, format="csr")], format="csr"
        )
        factors.append(np.sqrt(2.0 * cfg.lambda_T) * eyeF)
        shifts.append(np.zeros(nF))

    # force temporal variation: sum over i, k of ||F_{k+1,i} - F_{k,i}||^2
    if Ns > 1 and cfg.lambda_f > 0:
        rows, cols, vals = [], [], []
        rr = 0
        for i in range(nC):
            for k in range(Ns - 1):
                for axis in range(3):
                    rows += [rr, rr]
                    cols += [f_index(k + 1, i) + axis, f_index(k, i) + axis]
                    vals += [1.0, -1.0]
                    rr += 1
        D = sp.csr_matrix((vals, (rows, cols)), shape=(rr, N))
        factors.append(np.sqrt(2.0 * cfg.lambda_f) * D)
        shifts.append(np.zeros(rr))

    # tension sharing: sum ||F_{k,i} - (m0/nC)(A2_k c + g)||^2
    scale = cfg.m0 / nC
    if cfg.lambda_share > 0:
        G = sp.lil_matrix((3 * Ns * nC, N))
        h = np.zeros(3 * Ns * nC)
        for k in range(Ns):
            block = (-scale) * A2[3 * k : 3 * k + 3, :nc]
            for i in range(nC):
                r0 = 3 * (k * nC + i)
                G[r0 : r0 + 3, :nc] = block
                for axis in range(3):
                    G[r0 + axis, f_index(k, i) + axis] = 1.0
                h[r0 : r0 + 3] = scale * cfg.g_vec
        w = np.sqrt(2.0 * cfg.lambda_share)
        factors.append(w * G.tocsr())
        shifts.append(-w * h)

    # moment tracking: sum_k ||sum_i hat(rho_i) R_k^T F_{k,i} - M_ref_k||^2
    if cfg.lambda_M > 0:
        m_ref = (np.zeros((Ns, 3)) if cfg.ref_moments is None
                 else np.asarray(cfg.ref_moments, float))
        rots = (np.tile(np.eye(3), (Ns, 1, 1)) if cfg.ref_rotations is None
                else np.asarray(cfg.ref_rotations, float))
        H = sp.lil_matrix((3 * Ns, N))
        hm = np.zeros(3 * Ns)
        for k in range(Ns):
            for i in range(nC):
                block = hat(cfg.attachments[i]) @ rots[k].T
                H[3 * k : 3 * k + 3, f_index(k, i) : f_index(k, i) + 3] = block
            hm[3 * k : 3 * k + 3] = m_ref[k]
        w = np.sqrt(2.0 * cfg.lambda_M)
        factors.append(w * H.tocsr())
        shifts.append(-w * hm)

    L = sp.vstack(factors, format="csr")
    b_f = np.concatenate(shifts)
    P = (L.T @ L).tocsr()
    qv = L.T @ b_f
    offset = 0.5 * float(b_f @ b_f)

    # equalities: spline rows plus per-sample force equilibrium
    n_eq_extra = 3 * Ns
    A_eq = sp.lil_matrix((A_sp.shape[0] + n_eq_extra, N))
    A_eq[: A_sp.shape[0], :nc] = A_sp
    b_eq = np.concatenate([b_sp, np.tile(cfg.m0 * cfg.g_vec, Ns)])
    for k in range(Ns):
        r0 = A_sp.shape[0] + 3 * k
        A_eq[r0 : r0 + 3, :nc] = -cfg.m0 * A2[3 * k : 3 * k + 3, :nc]
        for i in range(nC):
            for axis in range(3):
                A_eq[r0 + axis, f_index(k, i) + axis] = 1.0
    A_eq = A_eq.tocsr()

    # velocity / acceleration boxes at the sample grid, shaved by the
    # discretization margin so the continuous-time bounds hold between samples
    shave = 1.0 - cfg.rate_margin
    vb = np.full(3 * Ns, shave * cfg.v_max)
    ab = np.full(3 * Ns, shave * cfg.a_max)
    Zf = sp.csr_matrix((3 * Ns, nF))
    A1f = sp.hstack([A1, Zf], format="csr")
    A2f = sp.hstack([A2, Zf], format="csr")
    A_in = sp.vstack([A1f, -A1f, A2f, -A2f], format="csr")
    b_in = np.concatenate([vb, vb, ab, ab])

    # SOC groups: tension cap and tilt cone per (k, i)
    sel_rows, sel_cols, sel_vals = [], [], []
    cone_rows, cone_cols, cone_vals = [], [], []
    rr = 0
    for k in range(Ns):
        for i in range(nC):
            for axis in range(3):
                sel_rows.append(3 * rr + axis)
                sel_cols.append(f_index(k, i) + axis)
                sel_vals.append(1.0)
            cone_rows.append(rr)
            cone_cols.append(f_index(k, i) + 2)
            cone_vals.append(1.0 / np.cos(cfg.alpha_u))
            rr += 1
    A_sel = sp.csr_matrix((sel_vals, (sel_rows, sel_cols)), shape=(3 * rr, N))
    C_cone = sp.csr_matrix((cone_vals, (cone_rows, cone_cols)), shape=(rr, N))
    zeros3 = np.zeros(3 * rr)
    caps = SOCGroup(A_sel, zeros3, sp.csr_matrix((rr, N)), np.full(rr, cfg.T_u))
    cones = SOCGroup(A_sel, zeros3.copy(), C_cone, np.zeros(rr))

    meta = {
        "knots": knots,
        "waypoints": wps,
        "grid": grid,
        "tscale": tscale,
        "S": S,
        "n": n,
        "nc": nc,
        "Ns": Ns,
        "nC": nC,
        "hold": hold,
        "A2": A2,
        "obj_factor": (L, b_f),
    }
    return ConicProblem(
        P=P, q=qv, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
        socs=[caps, cones], offset=offset, meta=meta,
    )


# -- solving --------------------------------------------------------------------

def solve(problem: ConicProblem, warm_start: np.ndarray | None = None) -> ConicSolution:
    """Solve the conic program with CLARABEL through cvxpy."""
    import cvxpy as cp

    x = cp.Variable(problem.n)
    if warm_start is not None:
        x.value = np.asarray(warm_start, float)
    factor = problem.meta.get("obj_factor")
    if factor is not None:
        L, b_f = factor
        objective = 0.5 * cp.sum_squares(L @ x + b_f)
    else:
        objective = 0.5 * cp.quad_form(x, cp.psd_wrap(problem.P)) + problem.q @ x
    cons = []
    if problem.A_eq.shape[0]:
        cons.append(problem.A_eq @ x == problem.b_eq)
    if problem.A_in.shape[0]:
        cons.append(problem.A_in @ x <= problem.b_in)
    for g in problem.socs:
        t = g.C @ x + g.d
        v = cp.reshape(g.A @ x + g.b, (3, g.count), order="F")
        cons.append(cp.SOC(t, v, axis=0))
    prob = cp.Problem(cp.Minimize(objective), cons)
    try:
        prob.solve(solver=cp.CLARABEL, warm_start=warm_start is not None)
    except cp.error.SolverError as exc:
        return ConicSolution(None, np.nan, "failed", {"error": str(exc)})

    status_map = {
        cp.OPTIMAL: "optimal",
        cp.OPTIMAL_INACCURATE: "inaccurate",
        cp.INFEASIBLE: "infeasible",
        cp.INFEASIBLE_INACCURATE: "infeasible",
        cp.UNBOUNDED: "unbounded",
        cp.UNBOUNDED_INACCURATE: "unbounded",
    }
    status = status_map.get(prob.status, "failed")
    if x.value is None or status in ("infeasible", "unbounded", "failed"):
        return ConicSolution(None, np.nan, status, {})

    xv = np.asarray(x.value, float)
    residuals = problem_residuals(problem, xv)
    obj = float(0.5 * xv @ (problem.P @ xv) + problem.q @ xv + problem.offset)
    return ConicSolution(xv, obj, status, residuals)


def problem_residuals(problem: ConicProblem, x: np.ndarray) -> dict:
    res = {}
    if problem.A_eq.shape[0]:
        eq = np.abs(problem.A_eq @ x - problem.b_eq)
        res["eq_max"] = float(eq.max())
        res["eq_max_scaled"] = float(eq.max() / (1.0 + np.abs(problem.b_eq).max()))
    if problem.A_in.shape[0]:
        res["ineq_max"] = float(np.maximum(problem.A_in @ x - problem.b_in, 0.0).max())
    slacks = []
    for g in problem.socs:
        v = (g.A @ x + g.b).reshape(-1, 3)
        t = g.C @ x + g.d
        slacks.append(t - np.linalg.norm(v, axis=1))
    if slacks:
        res["soc_min_slack"] = float(np.concatenate(slacks).min())
    return res


# -- initialization -------------------------------------------------------------

def unconstrained_spline(waypoints, cfg: OptConfig, knots=None) -> PolySpline:
    """Minimum r-th-derivative spline through the waypoints (KKT solve)."""
    wps = merge_coincident(waypoints)
    if len(wps) == 1:
        knots = np.array([0.0, cfg.min_duration])
        coeffs = np.zeros((1, cfg.n + 1, 3))
        coeffs[0, 0, :] = wps[0]
        return PolySpline(knots, coeffs)
    if knots is None:
        knots = allocate_times(wps, cfg.v_max, cfg.a_max, cfg.min_duration)
    durations = np.diff(knots)
    tscale = np.maximum(durations, 1.0)
    Q = build_smoothness(durations, cfg.n, cfg.r, tscale)
    A, b = build_equalities(wps, knots, cfg.r, cfg.n, tscale)
    m = A.shape[0]
    ncoef = Q.shape[0]
    kkt = sp.bmat([[Q, sp.csr_matrix(A).T], [sp.csr_matrix(A), None]], format="csc")
    rhs = np.concatenate([np.zeros(ncoef), b])
    sol = spsolve(kkt, rhs)
    return spline_from_scaled(knots, sol[:ncoef], cfg.n, tscale)


def project_tilt_cone(F, alpha_u: float) -> np.ndarray:
    """Euclidean projection onto {F : e3.F >= cos(alpha_u) ||F||}."""
    F = np.asarray(F, float)
    beta = np.tan(alpha_u)
    y = F[:2]
    t = F[2]
    s = float(np.linalg.norm(y))
    if s <= beta * t:
        return F.copy()
    if beta * s <= -t:
        return np.zeros(3)
    lam = (beta * s + t) / (beta * beta + 1.0)
    out = np.empty(3)
    out[:2] = beta * lam * y / s
    out[2] = lam
    return out


def init_tensions(spline0: PolySpline, cfg: OptConfig) -> TensionProfile:
    """Equal-share allocation F = r_k/n_C projected onto the tilt cone."""
    grid = sample_times(spline0.knots, cfg.samples_per_segment, total=cfg.N_s)
    acc = spline0.eval(grid, q=2)
    forces = np.zeros((len(grid), cfg.n_cables, 3))
    for k in range(len(grid)):
        share = cfg.m0 * (acc[k] + cfg.g_vec) / cfg.n_cables
        for i in range(cfg.n_cables):
            forces[k, i] = project_tilt_cone(share, cfg.alpha_u)
    return TensionProfile(times=grid, forces=forces)


# -- pipeline -------------------------------------------------------------------

def objective_terms(problem: ConicProblem, x: np.ndarray, cfg: OptConfig) -> dict:
    """Evaluate each objective term at x (for reporting)."""
    meta = problem.meta
    nc, Ns, nC = meta["nc"], meta["Ns"], meta["nC"]
    c = x[:nc]
    F = x[nc:].reshape(Ns, nC, 3)
    Q = build_smoothness(np.diff(meta["knots"]), meta["n"], cfg.r, meta["tscale"])
    j_traj = 0.5 * float(c @ (Q @ c))
    j_df = cfg.lambda_f * float(np.sum((F[1:] - F[:-1]) ** 2)) if Ns > 1 else 0.0
    j_f = cfg.lambda_T * float(np.sum(F**2))
    acc = (meta["A2"] @ c).reshape(Ns, 3)
    share = cfg.m0 * (acc + cfg.g_vec) / nC
    j_share = cfg.lambda_share * float(np.sum((F - share[:, None, :]) ** 2))
    m_ref = (np.zeros((Ns, 3)) if cfg.ref_moments is None
             else np.asarray(cfg.ref_moments, float))
    rots = (np.tile(np.eye(3), (Ns, 1, 1)) if cfg.ref_rotations is None
            else np.asarray(cfg.ref_rotations, float))
    j_m = 0.0
    for k in range(Ns):
        mk = np.zeros(3)
        for i in range(nC):
            mk += hat(cfg.attachments[i]) @ (rots[k].T @ F[k, i])
        j_m += float(np.sum((mk - m_ref[k]) ** 2))
    j_m *= cfg.lambda_M
    return {
        "traj": j_traj,
        "delta_F": j_df,
        "F": j_f,
        "share": j_share,
        "moment": j_m,
        "total": j_traj + j_df + j_f + j_share + j_m,
    }


def optimize(path, cfg: OptConfig):
    """Full Stage-II pipeline: times, pre-solve, init, assemble, solve.

    `path` may be a planner PathResult or a plain (M, 3) waypoint array.
    Returns (PolySpline, TensionProfile, report dict). Raises
    InfeasibleProblem / SolverFailure when no optimum is available.
    """
    waypoints = getattr(path, "waypoints", path)
    if cfg.densify_step is not None:
        waypoints = densify_waypoints(waypoints, cfg.densify_step)
    t_start = time.perf_counter()
    problem = assemble(waypoints, cfg)
    meta = problem.meta
    nc = meta["nc"]

    spline0 = unconstrained_spline(meta["waypoints"], cfg, knots=meta["knots"])
    tens0 = init_tensions(spline0, cfg)
    warm = np.zeros(problem.n)
    sigma = meta["tscale"]
    for s in range(meta["S"]):
        for j in range(meta["n"] + 1):
            for axis in range(3):
                warm[coeff_index(s, j, axis, meta["n"])] = (
                    spline0.coeffs[s, j, axis] * sigma[s] ** j
                )
    warm[nc:] = tens0.forces.reshape(-1)

    sol = solve(problem, warm_start=warm)
    if sol.status == "infeasible":
        raise InfeasibleProblem(
            "trajectory program infeasible under tension/tilt/rate bounds",
            sol.residuals,
        )
    if not sol.ok:
        raise SolverFailure(f"conic solver failed with status {sol.status}")

    spline = spline_from_scaled(meta["knots"], sol.x[:nc], meta["n"], meta["tscale"])
    forces = sol.x[nc:].reshape(meta["Ns"], meta["nC"], 3)
    tensions = TensionProfile(times=meta["grid"], forces=forces)

    dense_t = np.arange(meta["knots"][0], meta["knots"][-1] + 0.005, 0.01)
    v_dense = spline.eval(dense_t, q=1)
    a_dense = spline.eval(dense_t, q=2)
    norms = tensions.norms
    report = {
        "status": sol.status,
        "objective": sol.objective,
        "terms": objective_terms(problem, sol.x, cfg),
        "residuals": sol.residuals,
        "decision_vars": problem.n,
        "segments": meta["S"],
        "force_samples": meta["Ns"],
        "duration_s": float(meta["knots"][-1]),
        "max_tension_n": float(norms.max()),
        "min_tension_n": float(norms.min()),
        "max_tilt_rad": tensions.max_tilt(),
        "max_speed_dense": float(np.abs(v_dense).max()),
        "max_acc_dense": float(np.abs(a_dense).max()),
        "knot_continuity": spline.knot_continuity(cfg.r),
        "waypoint_residual": spline.waypoint_residual(meta["waypoints"]),
        "solve_time_s": time.perf_counter() - t_start,
        "warnings": [],
    }
    if float(norms.min()) < cfg.T_l:
        report["warnings"].append(
            f"min tension {norms.min():.3f} N below reporting threshold {cfg.T_l} N"
        )
    return spline, tensions, report


# -- artifact I/O ----------------------------------------------------------------

def export_trajectory_csv(spline: PolySpline, tensions: TensionProfile, file) -> None:
    """CSV at the force sample instants: t, pos, vel, acc, per-cable forces."""
    times = tensions.times
    pos = spline.eval(times, q=0)
    vel = spline.eval(times, q=1)
    acc = spline.eval(times, q=2)
    nC = tensions.forces.shape[1]
    header = ["t", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az"]
    for i in range(nC):
        header += [f"F{i+1}x", f"F{i+1}y", f"F{i+1}z"]
    with open(file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, t in enumerate(times):
            row = [repr(float(v)) for v in
                   np.concatenate([[t], pos[k], vel[k], acc[k],
                                   tensions.forces[k].reshape(-1)])]
            writer.writerow(row)


def save_solution_json(spline: PolySpline, tensions: TensionProfile, report: dict,
                       file) -> None:
    payload = {
        "knots": spline.knots.tolist(),
        "coeffs": spline.coeffs.tolist(),
        "tension_times": tensions.times.tolist(),
        "tension_forces": tensions.forces.tolist(),
        "report": report,
    }
    with open(file, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_solution_json(file) -> tuple[PolySpline, TensionProfile, dict]:
    with open(file) as fh:
        data = json.load(fh)
    spline = PolySpline(np.asarray(data["knots"]), np.asarray(data["coeffs"]))
    tensions = TensionProfile(
        times=np.asarray(data["tension_times"]),
        forces=np.asarray(data["tension_forces"]),
    )
    return spline, tensions, data.get("report", {})
