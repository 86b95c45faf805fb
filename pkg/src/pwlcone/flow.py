"""Event-driven flow of the piecewise-linear system and its Poincare maps.

Inside a region the flow is ``exp(t A) x``. Crossings are located by
marching the exact propagator ``exp(h A)`` on a fine grid, bracketing sign
changes of the switching function and polishing the root with Newton
steps on ``n^T exp(t A) x`` (falling back to Brent's method). The
integrator route through :func:`pwlcone.numerics.integrate_with_events`
is available as ``method="integrate"`` and serves as a cross-check.

Section convention: points of the section ``Sigma-`` are contact exit
points, i.e. zeros of ``n_exit^T x`` falling. For an undamped support this
is ``w^T q = 0`` with ``w^T q' < 0``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .numerics import EventSpec, integrate_with_events, matrix_exponential
from .system import PwlStateSpace, Region, classify_region

__all__ = [
    "FlowError",
    "Crossing",
    "SectionPoint",
    "EventLogEntry",
    "Trajectory",
    "first_crossing",
    "half_map_minus",
    "half_map_plus",
    "poincare_map",
    "poincare_map_k",
    "poincare_jacobian",
    "simulate",
    "return_horizon",
    "write_trajectory_csv",
]


class FlowError(RuntimeError):
    """No crossing within the horizon or an inconsistent crossing sequence."""


@dataclass(frozen=True)
class SectionPoint:
    x: np.ndarray
    side: str  # "minus" (exit / entering V-) or "plus" (entry / entering V+)


@dataclass(frozen=True)
class Crossing:
    t: float
    x: np.ndarray
    rate: float
    grazing: bool


@dataclass(frozen=True)
class EventLogEntry:
    t: float
    boundary: str  # "alpha" or "beta"
    pre: str
    post: str
    grazing: bool


@dataclass
class Trajectory:
    """Sampled solution of the full system.

    ``modes`` holds +1 in contact and -1 otherwise, per sample; samples at
    an event time appear twice (pre and post mode) with ``event_flag`` 1.
    """

    t: np.ndarray
    x: np.ndarray  # shape (m, n)
    modes: np.ndarray
    event_flag: np.ndarray
    events: list[EventLogEntry] = field(default_factory=list)


def _step_size(A: np.ndarray) -> float:
    rho = max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)
    return min(0.05, 0.15 / rho)


@lru_cache(maxsize=64)
def _stepper(key: bytes, shape: tuple, h: float) -> np.ndarray:
    A = np.frombuffer(key).reshape(shape)
    return matrix_exponential(A, h)


def _propagator(A, h):
    A = np.ascontiguousarray(A, dtype=float)
    return _stepper(A.tobytes(), A.shape, h)


def return_horizon(ss: PwlStateSpace) -> float:
    """Default search horizon: 50 periods of the slowest linear oscillation."""
    lam = np.linalg.eigvals(ss.A_minus)
    wmin = np.abs(lam.imag)
    wmin = wmin[wmin > 1e-12]
    if wmin.size == 0:
        return 1e3
    return 50 * 2 * np.pi / wmin.min()


def first_crossing(A, x, normal, direction: int, horizon: float, start_on_boundary: bool = True) -> Crossing:
    """Minimal positive root of ``normal^T exp(tA) x`` with the given direction.

    Parameters
    ----------
    direction : int
        +1 for rising, -1 for falling.
    start_on_boundary : bool
        Treat a tiny initial value as an exact zero so the start point is not
        reported as a crossing.
    """
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    normal = np.asarray(normal, dtype=float)
    h = _step_size(A)
    E = _propagator(A, h)
    scale = np.linalg.norm(x) * np.linalg.norm(normal)
    y = x.copy()
    g0 = float(normal @ y)
    if start_on_boundary and abs(g0) <= 1e-11 * scale:
        g0 = 0.0
    t = 0.0
    nsteps = int(np.ceil(horizon / h))
    for _ in range(nsteps):
        y1 = E @ y
        g1 = float(normal @ y1)
        if (direction > 0 and g0 < 0.0 <= g1) or (direction < 0 and g0 > 0.0 >= g1):
            tr = _polish(A, y, normal, 0.0, h, g0, g1)
            xe = matrix_exponential(A, tr) @ y
            rate = float(normal @ (A @ xe))
            return Crossing(t + tr, xe, rate, abs(rate) < 1e-8 * scale)
        y, g0, t = y1, g1, t + h
    raise FlowError(f"no {'rising' if direction > 0 else 'falling'} crossing within horizon {horizon:.4g}")


def _polish(A, y, normal, a, b, ga, gb):
    def g(s):
        return float(normal @ (matrix_exponential(A, s) @ y))

    # secant start, then Newton on the exact expression
    s = a - ga * (b - a) / (gb - ga)
    for _ in range(8):
        Es = matrix_exponential(A, s) @ y
        gs = float(normal @ Es)
        ds = float(normal @ (A @ Es))
        if ds == 0:
            break
        step = gs / ds
        s_new = s - step
        if not (a <= s_new <= b):
            break
        s = s_new
        if abs(step) <= 2e-15 * max(1.0, b):
            return s
    return brentq(g, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)


def _crossing_integrated(A, x, normal, direction, horizon):
    ev = EventSpec(lambda t, y: float(normal @ y), direction, True, "switch")
    res = integrate_with_events(lambda t, y: A @ y, x, (0.0, horizon), [ev])
    for rec in res.events:
        if not rec.grazing and rec.t > 0:
            return Crossing(rec.t, rec.x, rec.rate, False)
    raise FlowError("no crossing within horizon (integrated)")


def _cross(A, x, normal, direction, horizon, method):
    if method == "expm":
        return first_crossing(A, x, normal, direction, horizon)
    if method == "integrate":
        return _crossing_integrated(A, x, normal, direction, horizon)
    raise ValueError(f"unknown method {method!r}")


def half_map_minus(ss: PwlStateSpace, xi, horizon: float | None = None, method: str = "expm"):
    """Flow with ``A-`` from an exit point until contact starts.

    Returns
    -------
    eta : ndarray
        State on ``Sigma_alpha`` with ``w^T q' > 0``.
    t_minus : float
        Minimal positive entry time.
    """
    horizon = return_horizon(ss) if horizon is None else horizon
    c = _cross(ss.A_minus, xi, ss.n_alpha, +1, horizon, method)
    return c.x, c.t


def half_map_plus(ss: PwlStateSpace, eta, horizon: float | None = None, method: str = "expm"):
    """Flow with ``A+`` from an entry point until the support releases."""
    horizon = return_horizon(ss) if horizon is None else horizon
    c = _cross(ss.A_plus, eta, ss.n_exit, -1, horizon, method)
    return c.x, c.t


def poincare_map(ss: PwlStateSpace, xi, horizon: float | None = None, method: str = "expm"):
    """Elementary return map ``P = P+ o P-``; returns ``(P(xi), t_minus, t_plus)``."""
    eta, tm = half_map_minus(ss, xi, horizon, method)
    xi2, tp = half_map_plus(ss, eta, horizon, method)
    return xi2, tm, tp


def poincare_map_k(ss: PwlStateSpace, xi, k: int, horizon: float | None = None, method: str = "expm"):
    """k-fold composition of ``P``; returns ``(P^k(xi), times)``, ``times`` of length 2k."""
    y = np.asarray(xi, dtype=float)
    times = []
    for _ in range(k):
        y, tm, tp = poincare_map(ss, y, horizon, method)
        times += [tm, tp]
    return y, np.array(times)


def poincare_jacobian(ss: PwlStateSpace, xi, k: int = 1, step: float | None = None, max_reductions: int = 6):
    """Central finite-difference Jacobian of ``P^k`` at ``xi``.

    A perturbed evaluation whose crossing times jump (a different crossing
    was picked up) triggers a step reduction, fatal after six reductions.
    """
    xi = np.asarray(xi, dtype=float)
    n = xi.size
    h = 1e-6 * np.linalg.norm(xi) if step is None else step
    _, t0 = poincare_map_k(ss, xi, k)
    for _ in range(max_reductions + 1):
        J = np.empty((n, n))
        ok = True
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            try:
                yp, tp = poincare_map_k(ss, xi + e, k)
                ym, tm = poincare_map_k(ss, xi - e, k)
            except FlowError:
                ok = False
                break
            tol = 1e-3 * max(1.0, t0.max())
            if np.abs(tp - t0).max() > tol or np.abs(tm - t0).max() > tol:
                ok = False
                break
            J[:, i] = (yp - ym) / (2 * h)
        if ok:
            return J
        h *= 0.1
    raise FlowError("crossing sequence changes under every tested perturbation")


def _mode_of(ss, x):
    reg = classify_region(ss, x)
    if reg is Region.ContactPlus:
        return 1
    if reg is Region.NoContactMinus or reg is Region.Origin:
        return -1
    if reg is Region.SigmaAlpha:
        return 1 if float(ss.n_alpha @ (ss.A_minus @ x)) > 0 else -1
    # Sigma_beta: stays in contact only if the force is growing
    return 1 if float(ss.n_beta @ (ss.A_plus @ x)) > 0 else -1


def simulate(ss: PwlStateSpace, x0, t_end: float, dt: float | None = None, max_events: int = 100000) -> Trajectory:
    """Filippov solution by piecewise exact propagation.

    The state is propagated with ``exp(tA)`` of the active mode and
    switched at located crossings: ``h_alpha`` rising starts contact, the
    exit boundary falling ends it. Samples are taken on the uniform grid
    ``k * dt`` plus the event times.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 has non-finite entries")
    if x.size != ss.n:
        raise ValueError(f"x0 must have {ss.n} entries")
    if dt is None:
        dt = min(_step_size(ss.A_plus), _step_size(ss.A_minus))
    grid = np.arange(0.0, t_end + 0.5 * dt, dt)
    grid = grid[grid <= t_end]
    mode = _mode_of(ss, x)
    ts, xs, ms, flags, log = [], [], [], [], []
    t = 0.0
    gi = 0
    for _ in range(max_events + 1):
        A = ss.A_plus if mode > 0 else ss.A_minus
        if np.linalg.norm(x) == 0:
            tc = np.inf
        else:
            try:
                if mode > 0:
                    c = first_crossing(A, x, ss.n_exit, -1, t_end - t + 1e-9)
                else:
                    c = first_crossing(A, x, ss.n_alpha, +1, t_end - t + 1e-9)
                tc = c.t
            except FlowError:
                tc = np.inf
        t_seg_end = min(t + tc, t_end)
        while gi < grid.size and grid[gi] < t_seg_end - 1e-14 * max(1.0, t_end):
            ts.append(grid[gi])
            xs.append(matrix_exponential(A, grid[gi] - t) @ x)
            ms.append(mode)
            flags.append(0)
            gi += 1
        if not np.isfinite(tc) or t + tc > t_end:
            while gi < grid.size:
                ts.append(grid[gi])
                xs.append(matrix_exponential(A, grid[gi] - t) @ x)
                ms.append(mode)
                flags.append(0)
                gi += 1
            break
        xe = c.x
        t = t + tc
        new_mode = -mode
        boundary = "alpha" if mode < 0 or ss.c_n == 0 else "beta"
        log.append(EventLogEntry(t, boundary, _name(mode), _name(new_mode), c.grazing))
        ts += [t, t]
        xs += [xe, xe]
        ms += [mode, new_mode]
        flags += [1, 1]
        if gi < grid.size and abs(grid[gi] - t) <= 1e-14 * max(1.0, t_end):
            gi += 1
        x = xe
        if c.grazing:
            new_mode = mode
        mode = new_mode
    else:
        raise FlowError(f"more than {max_events} events (possible accumulation)")
    return Trajectory(np.array(ts), np.array(xs).reshape(len(ts), ss.n), np.array(ms, dtype=int), np.array(flags, dtype=int), log)


def _name(mode):
    return "V+" if mode > 0 else "V-"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with header ``t, x1..xn, mode, event_flag`` (17 significant digits)."""
    n = traj.x.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["mode", "event_flag"])
        for t, x, m, f in zip(traj.t, traj.x, traj.modes, traj.event_flag):
            wr.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x] + [int(m), int(f)])
