"""L-BFGS with Armijo backtracking, and the scale/translation vs rotation
block alternation used when fitting one cuboid.

Scale is optimized in log-space so positivity never needs explicit bounds;
the chain rule maps the analytic energy gradient into log-space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyConfig, EnergyObjective
from .geometry import Primitive, wrap_angles


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    armijo_c: float = 1e-4
    max_line_search: int = 50

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")


@dataclass(frozen=True)
class AlternationConfig:
    max_iterations: int = 5
    delta_tolerance: float = 0.01
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.delta_tolerance <= 0:
            raise ValueError("delta_tolerance must be positive")


def lbfgs_minimize(objective, gradient, x0, cfg: LbfgsConfig = LbfgsConfig(),
                   value_and_grad=None):
    """Minimize a smooth function; returns (x_best, f_best).

    `objective`/`gradient` are called separately unless a fused
    `value_and_grad` is supplied (saves shared work in the energy case).
    Two-loop recursion with history scaling, Armijo backtracking by halving.
    The accepted iterate sequence is non-increasing in f by construction.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if value_and_grad is None:
        def value_and_grad(v):
            return objective(v), np.asarray(gradient(v), dtype=np.float64)

    f, g = value_and_grad(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("non-finite objective or gradient at x0")

    s_hist, y_hist, rho_hist = [], [], []
    for it in range(cfg.max_iterations):
        gnorm = np.linalg.norm(g)
        if gnorm <= cfg.gradient_tolerance:
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        direction = -q
        dg = np.dot(direction, g)
        if dg >= 0:  # not a descent direction; fall back to steepest descent
            direction = -g
            dg = -gnorm * gnorm

        step = 1.0 if y_hist else min(1.0, 1.0 / gnorm)
        accepted = False
        for _ in range(cfg.max_line_search):
            x_new = x + step * direction
            f_new = objective(x_new)
            with np.errstate(invalid="ignore"):
                ok = np.isfinite(f_new) and f_new <= f + cfg.armijo_c * step * dg
            if ok:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        f_new, g_new = value_and_grad(x_new)
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            break
        s_vec = x_new - x
        y_vec = g_new - g
        sy = np.dot(s_vec, y_vec)
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
    return x, float(f)


@dataclass
class AlternationResult:
    primitive: Primitive
    energy: float
    deltas: list
    converged_iteration: int  # first outer iteration (1-based) with delta < tol, or -1


def _solve_scale_translation(prim, obj, lb_cfg, scale_cap=None):
    """Minimize over (log S, T) with rotation fixed.

    `scale_cap` (3-vector) pins the scale parameterization below a ceiling;
    the volume reward makes unbounded growth a descent direction on sparse
    clouds, and capped candidates remain useful starts for refinement.
    """
    theta = prim.rotation
    log_hi = 200.0 if scale_cap is None else np.log(np.asarray(scale_cap, dtype=np.float64))

    def unpack(v):
        # lower clamp keeps exp finite on wild line-search probes
        return Primitive(np.exp(np.clip(v[:3], -200.0, log_hi)), v[3:6], theta)

    def fused(v):
        p = unpack(v)
        e, grad = obj.value_and_grad(p)
        g_log_s = grad.d_scale * p.scale
        if scale_cap is not None:
            g_log_s = np.where((v[:3] >= log_hi) & (g_log_s < 0), 0.0, g_log_s)
        return e, np.concatenate([g_log_s, grad.d_translation])

    x0 = np.concatenate([np.log(np.minimum(prim.scale, np.exp(log_hi))), prim.translation])
    x, f = lbfgs_minimize(lambda v: obj.value(unpack(v)), None, x0, lb_cfg,
                          value_and_grad=fused)
    return unpack(x), f


def _solve_rotation(prim, obj, lb_cfg):
    """Minimize over Euler angles with scale and translation fixed."""
    def unpack(v):
        return prim.with_params(rotation=v)

    def fused(v):
        e, grad = obj.value_and_grad(unpack(v))
        return e, grad.d_rotation

    x, f = lbfgs_minimize(lambda v: obj.value(unpack(v)), None,
                          prim.rotation.copy(), lb_cfg, value_and_grad=fused)
    return unpack(x), f


def alternate_fit(prim0: Primitive, points, negative, e_cfg: EnergyConfig,
                  a_cfg: AlternationConfig = AlternationConfig(),
                  objective: EnergyObjective = None,
                  scale_cap=None) -> AlternationResult:
    """Fit one cuboid by alternating (S, T) and theta solves.

    Stops when the squared parameter change between outer iterations falls
    below delta_tolerance or max_iterations is reached.  The energy is
    non-increasing across outer iterations.
    """
    obj = objective if objective is not None else EnergyObjective(points, negative, e_cfg)
    prim = prim0
    energy = obj.value(prim)
    deltas = []
    converged = -1
    for j in range(a_cfg.max_iterations):
        prev = prim.as_vector()
        prim, _ = _solve_scale_translation(prim, obj, a_cfg.lbfgs, scale_cap)
        prim, energy = _solve_rotation(prim, obj, a_cfg.lbfgs)
        prim = prim.with_params(rotation=wrap_angles(prim.rotation))
        delta = float(np.sum((prim.as_vector() - prev) ** 2))
        deltas.append(delta)
        if delta < a_cfg.delta_tolerance:
            converged = j + 1
            break
    return AlternationResult(prim, float(energy), deltas, converged)
