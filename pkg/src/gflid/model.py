"""Converter, LCL filter, PLL and control-loop equations.

The functions here accept a single state (length-15 vector) or a batch
(N x 15 array). The scalar path runs on Python floats so the fixed-step
integrator stays fast; the batch path runs on numpy columns.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .params import DegenerateNetworkError, ModelParams

STATE_NAMES = (
    "i_cv_r", "i_cv_i",
    "v_filt_r", "v_filt_i",
    "i_filt_r", "i_filt_i",
    "v_q_pll", "eps_pll", "theta_pll",
    "sigma_p", "p_m", "sigma_q", "q_m",
    "gamma_d", "gamma_q",
)
INPUT_NAMES = ("p_ref", "q_ref")
ALGEBRAIC_NAMES = (
    "v_grid_r", "v_grid_i",
    "v_d_filt", "v_q_filt",
    "i_d_cv", "i_q_cv",
    "i_d_ref", "i_q_ref",
    "v_d_ref", "v_q_ref",
    "v_d_cvref", "v_q_cvref",
    "v_cv_r", "v_cv_i",
    "omega_pll",
)
N_STATES = len(STATE_NAMES)
STATE_INDEX = {name: k for k, name in enumerate(STATE_NAMES)}


class AlgebraicOutputs(NamedTuple):
    v_grid_r: float
    v_grid_i: float
    v_d_filt: float
    v_q_filt: float
    i_d_cv: float
    i_q_cv: float
    i_d_ref: float
    i_q_ref: float
    v_d_ref: float
    v_q_ref: float
    v_d_cvref: float
    v_q_cvref: float
    v_cv_r: float
    v_cv_i: float
    omega_pll: float


class NoConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def solve_grid_node(v_filt: complex, params: ModelParams) -> complex:
    """Voltage of the node between the grid-side filter leg and the line.

    Solves (v_grid - v2) * Y1 + (v_grid - v_filt) * Yf = 0.
    """
    y1, yf = params.y_line, params.y_filt
    ysum = y1 + yf
    if abs(ysum) < 1e-12 * abs(y1):
        raise DegenerateNetworkError(f"|Y1 + Yf| = {abs(ysum):.3e} is singular")
    return (params.v2 * y1 + v_filt * yf) / ysum


def rotate_to_dq(r, i, theta, cos=np.cos, sin=np.sin):
    c, s = cos(theta), sin(theta)
    return c * r + s * i, -s * r + c * i


def rotate_from_dq(d, q, theta, cos=np.cos, sin=np.sin):
    c, s = cos(theta), sin(theta)
    return c * d - s * q, s * d + c * q


def _algebraic(x, u, p: ModelParams, a: complex, b: complex, cos, sin):
    (i_cv_r, i_cv_i, v_filt_r, v_filt_i, _i_filt_r, _i_filt_i,
     v_q_pll, eps_pll, theta, sigma_p, p_m, sigma_q, q_m, gamma_d, gamma_q) = x
    p_ref, q_ref = u

    # grid node: v_grid = a + b * v_filt
    v_grid_r = a.real + b.real * v_filt_r - b.imag * v_filt_i
    v_grid_i = a.imag + b.real * v_filt_i + b.imag * v_filt_r

    c, s = cos(theta), sin(theta)
    v_d_filt = c * v_filt_r + s * v_filt_i
    v_q_filt = -s * v_filt_r + c * v_filt_i
    i_d_cv = c * i_cv_r + s * i_cv_i
    i_q_cv = -s * i_cv_r + c * i_cv_i

    omega_pll = p.kp_pll * v_q_pll + p.ki_pll * eps_pll + 1.0

    # active power drives the q-axis reference, reactive power the d-axis one
    i_q_ref = p.kp_p * (p_ref - p_m) + p.ki_p * sigma_p
    i_d_ref = p.kp_q * (q_ref - q_m) + p.ki_q * sigma_q

    v_d_ref = p.kp_c * (i_d_ref - i_d_cv) + p.ki_c * gamma_d
    v_q_ref = p.kp_c * (i_q_ref - i_q_cv) + p.ki_c * gamma_q
    v_d_cvref = v_d_ref - omega_pll * p.l_f * i_q_cv + p.k_ffv * v_d_filt
    v_q_cvref = v_q_ref + omega_pll * p.l_f * i_d_cv + p.k_ffv * v_q_filt

    v_cv_r = c * v_d_cvref - s * v_q_cvref
    v_cv_i = s * v_d_cvref + c * v_q_cvref

    return (v_grid_r, v_grid_i, v_d_filt, v_q_filt, i_d_cv, i_q_cv, i_d_ref, i_q_ref,
            v_d_ref, v_q_ref, v_d_cvref, v_q_cvref, v_cv_r, v_cv_i, omega_pll)


def _rhs(x, u, p: ModelParams, a: complex, b: complex, cos, sin):
    (i_cv_r, i_cv_i, v_filt_r, v_filt_i, i_filt_r, i_filt_i,
     v_q_pll, eps_pll, _theta, _sigma_p, p_m, _sigma_q, q_m, _gamma_d, _gamma_q) = x
    p_ref, q_ref = u
    (v_grid_r, v_grid_i, _vd, v_q_filt, i_d_cv, i_q_cv, i_d_ref, i_q_ref,
     _vdr, _vqr, _vdc, _vqc, v_cv_r, v_cv_i, _w) = _algebraic(x, u, p, a, b, cos, sin)

    wb, ws = p.omega_b, p.omega_s
    return (
        wb / p.l_f * (v_cv_r - v_filt_r - p.r_f * i_cv_r + ws * p.l_f * i_cv_i),
        wb / p.l_f * (v_cv_i - v_filt_i - p.r_f * i_cv_i - ws * p.l_f * i_cv_r),
        wb / p.c_f * (i_cv_r - i_filt_r + ws * p.c_f * v_filt_i),
        wb / p.c_f * (i_cv_i - i_filt_i - ws * p.c_f * v_filt_r),
        wb / p.l_g * (v_filt_r - v_grid_r - p.r_g * i_filt_r + ws * p.l_g * i_filt_i),
        wb / p.l_g * (v_filt_i - v_grid_i - p.r_g * i_filt_i - ws * p.l_g * i_filt_r),
        p.l_lp * (v_q_filt - v_q_pll),
        v_q_pll,
        wb * (p.kp_pll * v_q_pll + p.ki_pll * eps_pll + 1.0 - ws),
        p_ref - p_m,
        p.omega_z * (v_filt_r * i_filt_r + v_filt_i * i_filt_i - p_m),
        q_ref - q_m,
        p.omega_f * (-v_filt_r * i_filt_i + v_filt_i * i_filt_r - q_m),
        i_d_ref - i_d_cv,
        i_q_ref - i_q_cv,
    )


def _split(state, inputs):
    x = np.asarray(state, dtype=float)
    u = np.asarray(inputs, dtype=float)
    if x.shape[-1] != N_STATES or u.shape[-1] != len(INPUT_NAMES):
        raise ValueError(f"expected (..., {N_STATES}) states and (..., 2) inputs, "
                         f"got {x.shape} and {u.shape}")
    return x, u


def algebraic_outputs(state, inputs, params: ModelParams):
    """Grid node voltage, dq projections, references and converter voltage.

    Returns an AlgebraicOutputs of floats for a single state, or of arrays
    for a batch of states.
    """
    a, b = params.node_coefficients()
    x, u = _split(state, inputs)
    if x.ndim == 1:
        vals = _algebraic([float(v) for v in x], [float(v) for v in u], params, a, b,
                          math.cos, math.sin)
    else:
        u = np.broadcast_to(u, x.shape[:-1] + (2,))
        vals = _algebraic(x.T, u.T, params, a, b, np.cos, np.sin)
    return AlgebraicOutputs(*vals)


def rhs(state, inputs, params: ModelParams) -> np.ndarray:
    """Time derivatives of the 15 states, pu/s."""
    a, b = params.node_coefficients()
    x, u = _split(state, inputs)
    if x.ndim == 1:
        return np.array(_rhs([float(v) for v in x], [float(v) for v in u], params, a, b,
                             math.cos, math.sin))
    u = np.broadcast_to(u, x.shape[:-1] + (2,))
    return np.stack(_rhs(x.T, u.T, params, a, b, np.cos, np.sin), axis=-1)


def make_rhs_scalar(params: ModelParams):
    """Fast closure f(x_list, u_list) -> tuple for the integrator hot loop."""
    a, b = params.node_coefficients()

    def f(x, u):
        return _rhs(x, u, params, a, b, math.cos, math.sin)

    return f


def flat_start(params: ModelParams | None = None) -> np.ndarray:
    """Unit filter voltage, zero currents and integrators, theta_pll = 0."""
    x = np.zeros(N_STATES)
    x[STATE_INDEX["v_filt_r"]] = 1.0
    return x


def jacobian_fd(f, x: np.ndarray, step: float = 1e-7) -> np.ndarray:
    """Forward-difference Jacobian of f at x."""
    f0 = f(x)
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        xk = x.copy()
        h = step * max(1.0, abs(x[k]))
        xk[k] += h
        jac[:, k] = (f(xk) - f0) / h
    return jac


def find_equilibrium(params: ModelParams, inputs, guess=None, tol: float = 1e-10,
                     max_iter: int = 100) -> np.ndarray:
    """Steady state of the closed loop by damped Newton with a finite-difference Jacobian.

    theta_pll only enters through sin/cos, so the equilibrium is unique up to
    2*pi; the result is wrapped into (-pi, pi].
    """
    u = np.asarray(inputs, dtype=float)
    x = flat_start(params) if guess is None else np.array(guess, dtype=float)

    def f(z):
        return rhs(z, u, params)

    res = f(x)
    norm = np.max(np.abs(res))
    for _ in range(max_iter):
        if norm < tol:
            break
        jac = jacobian_fd(f, x)
        dx = np.linalg.lstsq(jac, -res, rcond=None)[0]
        lam = 1.0
        while True:
            x_new = x + lam * dx
            res_new = f(x_new)
            norm_new = np.max(np.abs(res_new))
            if np.all(np.isfinite(res_new)) and norm_new < norm:
                break
            lam *= 0.5
            if lam < 1e-12:
                raise NoConvergenceError(
                    f"damped Newton stalled at residual {norm:.3e}", norm)
        x, res, norm = x_new, res_new, norm_new
    else:
        if norm >= tol:
            raise NoConvergenceError(
                f"no convergence in {max_iter} iterations, residual {norm:.3e}", norm)
    if norm >= tol:
        raise NoConvergenceError(
            f"no convergence in {max_iter} iterations, residual {norm:.3e}", norm)
    k = STATE_INDEX["theta_pll"]
    x[k] = math.remainder(x[k], 2.0 * math.pi)
    return x
