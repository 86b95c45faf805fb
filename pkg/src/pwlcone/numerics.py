"""Shared numerical kernels.

Matrix exponential, eigendecomposition, damped Newton iteration and an
adaptive Runge-Kutta integrator with event location. Everything else in
the package is built on these four pieces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import DOP853
from scipy.optimize import brentq

__all__ = [
    "as_square_matrix",
    "matrix_exponential",
    "Spectrum",
    "eigen_spectrum",
    "NewtonReport",
    "newton_solve",
    "EventSpec",
    "EventRecord",
    "IntegrationResult",
    "IntegrationError",
    "integrate_with_events",
]

EPS = np.finfo(float).eps


def as_square_matrix(A, name: str = "A") -> np.ndarray:
    """Return ``A`` as a finite 2-D float array, raising ``ValueError`` otherwise."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """Compute ``exp(t A)``.

    Parameters
    ----------
    A : array_like, shape (n, n)
        Finite square matrix.
    t : float
        Finite time scalar.

    Returns
    -------
    ndarray
        The matrix exponential, via scaling and squaring with a Pade
        approximant (``scipy.linalg.expm``).
    """
    A = as_square_matrix(A)
    t = float(t)
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    if t == 0.0:
        return np.eye(A.shape[0])
    return scipy.linalg.expm(t * A)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues (with multiplicity) and optional right eigenvectors.

    ``converged`` is False when LAPACK failed; the arrays are then empty
    and ``message`` holds the reason.
    """

    values: np.ndarray
    vectors: np.ndarray | None
    converged: bool = True
    max_residual: float = 0.0
    message: str = ""


def eigen_spectrum(A, vectors: bool = False) -> Spectrum:
    """Eigenvalues of a real square matrix.

    Convergence failures are returned in the report instead of raised so
    the caller can decide what to do.
    """
    A = as_square_matrix(A)
    try:
        lam, V = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        return Spectrum(np.empty(0, complex), None, False, np.inf, str(exc))
    scale = max(np.linalg.norm(A, 2), EPS)
    res = np.linalg.norm(A @ V - V * lam, axis=0) / scale
    max_res = float(res.max()) if res.size else 0.0
    order = np.lexsort((lam.imag, lam.real))
    lam = lam[order]
    V = V[:, order]
    return Spectrum(lam, V if vectors else None, True, max_res)


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual_norm: float
    step_norms: list[float] = field(default_factory=list)
    message: str = ""
    condition: float = float("nan")


def _fd_jacobian(residual, x, f0, step=None):
    n = x.size
    m = f0.size
    J = np.empty((m, n))
    for i in range(n):
        h = np.sqrt(EPS) * max(1.0, abs(x[i])) if step is None else step
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(residual(xp)) - np.asarray(residual(xm))) / (2 * h)
    return J


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    x0,
    tol: float = 1e-10,
    max_iter: int = 50,
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
    fd_step: float | None = None,
    max_condition: float = 1e14,
    max_halvings: int = 30,
) -> tuple[np.ndarray, NewtonReport]:
    """Damped Newton iteration for ``residual(x) = 0``.

    The Jacobian is a central finite difference with step
    ``sqrt(eps) * max(1, |x_i|)`` unless ``jacobian`` is given. A step
    is halved until the residual norm decreases.

    Returns
    -------
    x : ndarray
        Last iterate.
    report : NewtonReport
        ``converged`` is True only if ``max|residual(x)| <= tol``.
    """
    x = np.array(x0, dtype=float).ravel()
    f = np.asarray(residual(x), dtype=float).ravel()
    if f.size != x.size:
        raise ValueError(f"residual has {f.size} components for {x.size} unknowns")
    fn = np.max(np.abs(f)) if f.size else 0.0
    f2 = np.linalg.norm(f)
    report = NewtonReport(False, 0, float(fn))
    for it in range(max_iter + 1):
        report.iterations = it
        report.residual_norm = float(fn)
        if not np.isfinite(fn):
            report.message = "residual is not finite"
            return x, report
        if fn <= tol:
            report.converged = True
            report.message = "converged"
            return x, report
        if it == max_iter:
            break
        J = jacobian(x) if jacobian is not None else _fd_jacobian(residual, x, f, fd_step)
        cond = np.linalg.cond(J)
        report.condition = float(cond)
        if not np.isfinite(cond) or cond > max_condition:
            report.message = f"singular Jacobian (condition estimate {cond:.3e})"
            return x, report
        dx = -np.linalg.solve(J, f)
        lam = 1.0
        for _ in range(max_halvings):
            xt = x + lam * dx
            try:
                ft = np.asarray(residual(xt), dtype=float).ravel()
                ftn = np.max(np.abs(ft))
                ft2 = np.linalg.norm(ft)
            except (ValueError, ArithmeticError):
                ftn = ft2 = np.inf
            if np.isfinite(ft2) and (ft2 < f2 or ftn < fn):
                break
            lam *= 0.5
        else:
            report.message = "line search failed to reduce the residual"
            return x, report
        report.step_norms.append(float(lam * np.linalg.norm(dx)))
        x, f, fn, f2 = xt, ft, ftn, ft2
    report.message = f"maximum iterations ({max_iter}) exceeded"
    return x, report


@dataclass(frozen=True)
class EventSpec:
    """Scalar event ``g(t, x) = 0``.

    ``direction`` is +1 for rising, -1 for falling, 0 for either.
    """

    function: Callable[[float, np.ndarray], float]
    direction: int = 0
    terminal: bool = False
    name: str = ""


@dataclass(frozen=True)
class EventRecord:
    index: int
    name: str
    t: float
    x: np.ndarray
    rate: float
    grazing: bool


@dataclass
class IntegrationResult:
    t: np.ndarray
    y: np.ndarray
    events: list[EventRecord]
    interpolants: list
    breakpoints: np.ndarray
    terminated: bool

    def __call__(self, t):
        """Dense output at time(s) ``t`` within the integrated span."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, len(self.interpolants) - 1)
        out = np.empty((self.y.shape[0], t.size))
        for k in np.unique(idx):
            sel = idx == k
            out[:, sel] = self.interpolants[k](t[sel])
        return out


class IntegrationError(RuntimeError):
    pass


def integrate_with_events(
    fun: Callable[[float, np.ndarray], np.ndarray],
    x0,
    t_span: Sequence[float],
    events: Sequence[EventSpec] = (),
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_step: float = np.inf,
    grazing_tol: float = 1e-8,
) -> IntegrationResult:
    """Integrate ``x' = fun(t, x)`` with a DOP853 stepper and event location.

    After each accepted step every event function is evaluated on the
    step's dense interpolant; sign changes are bracketed and polished by
    Brent's method to a time tolerance of ``1e-13 * |t_span|``. A terminal
    event ends the run at the event state; a root within ``100 * xtol`` of
    the start is taken as the restart point and ignored. An event whose rate at the root
    is below ``grazing_tol`` (relative to the state scale) is logged with
    ``grazing=True`` and never terminates.
    """
    t0, tf = map(float, t_span)
    x0 = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state has non-finite entries")
    solver = DOP853(fun, t0, x0, tf, rtol=rtol, atol=atol, max_step=max_step)
    ts = [t0]
    ys = [x0.copy()]
    interps = []
    bps = [t0]
    records: list[EventRecord] = []
    xtol = 1e-13 * max(abs(tf - t0), 1.0)
    g_prev = [float(ev.function(t0, x0)) for ev in events]

    def rate(ev, t, x):
        dt = 1e-7 * max(abs(tf - t0), 1.0)
        xp = x + dt * np.asarray(fun(t, x))
        xm = x - dt * np.asarray(fun(t, x))
        return (ev.function(t + dt, xp) - ev.function(t - dt, xm)) / (2 * dt)

    terminated = False
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"integrator failed at t={solver.t:.6g}: {msg}")
        ta, tb = solver.t_old, solver.t
        dense = solver.dense_output()
        scale = max(np.linalg.norm(solver.y), np.linalg.norm(ys[-1]), 1e-300)
        found = []
        for i, ev in enumerate(events):
            gb = float(ev.function(tb, solver.y))
            ga = g_prev[i]
            g_prev[i] = gb
            if abs(ga) <= 1e-14 * scale:
                ga = 0.0
            hit = (ev.direction >= 0 and ga < 0.0 <= gb) or (ev.direction <= 0 and ga > 0.0 >= gb)
            if not hit:
                continue
            if gb == 0.0:
                te = tb
            else:
                try:
                    te = brentq(lambda s: ev.function(s, dense(s)), ta, tb, xtol=xtol, rtol=4 * EPS)
                except ValueError as exc:
                    raise IntegrationError(f"event '{ev.name}' bracketing lost in [{ta}, {tb}]") from exc
            if te - t0 <= 100 * xtol:
                # the root is the restart point of this run, not a new event
                continue
            found.append((te, i))
        found.sort()
        stop_at = None
        for te, i in found:
            ev = events[i]
            xe = dense(te)
            r = rate(ev, te, xe)
            graze = abs(r) < grazing_tol * scale
            records.append(EventRecord(i, ev.name, float(te), xe, float(r), bool(graze)))
            if ev.terminal and not graze:
                stop_at = te
                break
        if stop_at is not None:
            interps.append(dense)
            bps.append(stop_at)
            ts.append(stop_at)
            ys.append(dense(stop_at))
            terminated = True
            break
        interps.append(dense)
        bps.append(tb)
        ts.append(tb)
        ys.append(solver.y.copy())
    if not interps:
        interps.append(lambda s: np.repeat(x0[:, None], np.size(s), axis=1))
    return IntegrationResult(np.array(ts), np.array(ys).T, records, interps, np.array(bps[:-1] if len(bps) > 1 else bps), terminated)
