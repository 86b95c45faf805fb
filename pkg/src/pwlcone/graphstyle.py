"""Graph-style parametrization of a cone over a master coordinate pair.

The master pair ``(u, v) = (x_m, y_m)`` is written in polar form
``u = r cos(theta)``, ``v = r sin(theta)``. On the cone every slave state
is ``r`` times a 2 pi-periodic function of ``theta`` (``P_j`` for
displacements, ``Q_j`` for velocities). Homogeneity removes ``r`` from the
polar rates

    R(theta)     = r'/r   = sin cos + sin * f_m(G(theta))
    Theta(theta) = theta' = -sin^2 + cos * f_m(G(theta))

and the slave functions solve ``Theta S' = F_S(G) - R S`` for every slave
``S``. A truncated Fourier series for ``S`` is found by harmonic balance
and lifted back to ``(u, v)`` with Chebyshev polynomials, which gives a
closed-form one-DOF model ``u' = v``, ``v' = f_m(W(u, v))``.

The construction needs ``theta`` to be a single-valued, monotone
coordinate along the generating curve. Three situations break it and are
reported by :func:`diagnose_failures`: the master projection passing
through the origin (nodal), the curve winding around the master plane
more than once (multi-valued) and ``Theta`` vanishing (fold point).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar

from . import fourier
from .cone import ConeSolution, cone_orbit
from .numerics import EventSpec, IntegrationError, NewtonReport, eigen_spectrum, integrate_with_events, matrix_exponential, newton_solve
from .system import PwlStateSpace, vector_field_batch

__all__ = [
    "GraphStyleError",
    "MasterSelection",
    "ThetaGeneratingCurve",
    "FailureDiagnosis",
    "polar_master_rates",
    "geometry_ode_residual",
    "harmonic_residual",
    "curve_from_linear_mode",
    "curve_from_cone",
    "solve_generating_curve_hbm",
    "evaluate_slaves_uv",
    "lift",
    "rom_rhs",
    "rom_rhs_polar",
    "rom_integrate",
    "log_multiplier",
    "diagnose_failures",
    "integrate_geometry_ode",
    "save_theta_curve",
    "load_theta_curve",
    "write_rom_csv",
]


class GraphStyleError(RuntimeError):
    pass


@dataclass(frozen=True)
class MasterSelection:
    """Master DOF ``m`` of an ``N``-DOF system.

    ``slaves`` lists the state indices of the remaining displacements
    followed by the remaining velocities.
    """

    m: int
    N: int

    def __post_init__(self):
        if not 0 <= self.m < self.N:
            raise ValueError(f"master index {self.m} out of range for N={self.N}")

    @property
    def u_index(self) -> int:
        return self.m

    @property
    def v_index(self) -> int:
        return self.N + self.m

    @property
    def slave_dofs(self) -> list[int]:
        return [j for j in range(self.N) if j != self.m]

    @property
    def slaves(self) -> list[int]:
        d = self.slave_dofs
        return d + [self.N + j for j in d]

    @classmethod
    def switching_dof(cls, ss: PwlStateSpace) -> "MasterSelection":
        """Master on the DOF that carries the support (largest ``|w_j|``)."""
        w = ss.n_alpha[: ss.N]
        nz = np.flatnonzero(w)
        if nz.size != 1:
            raise GraphStyleError("the support must act on a single DOF to use it as master")
        return cls(int(nz[0]), ss.N)


@dataclass
class ThetaGeneratingCurve:
    """Fourier slave functions over the master angle.

    ``coeffs`` has one row per entry of ``selection.slaves`` with layout
    ``[a0, a1..aN, b1..bN]``; displacement rows hold ``P_j``, velocity rows
    ``Q_j``.
    """

    selection: MasterSelection
    n_harmonics: int
    coeffs: np.ndarray
    report: NewtonReport | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return 2 * self.selection.N

    def slaves(self, theta) -> np.ndarray:
        return fourier.evaluate(self.coeffs, theta)

    def slaves_derivative(self, theta) -> np.ndarray:
        return fourier.evaluate(fourier.derivative(self.coeffs), theta)

    def state(self, theta) -> np.ndarray:
        """Point ``G(theta)`` of the generating curve on the unit cylinder, shape (n, m)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        X = np.empty((self.n, theta.size))
        X[self.selection.u_index] = np.cos(theta)
        X[self.selection.v_index] = np.sin(theta)
        X[self.selection.slaves] = self.slaves(theta)
        return X


@dataclass
class FailureDiagnosis:
    """Outcome of the graph-style admissibility check.

    ``kind`` is ``nodal``, ``multi_valued``, ``fold_point`` or ``none``;
    ``evidence`` holds the supporting numbers.
    """

    kind: str
    evidence: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.kind == "none"


def _field_at(ss, sel, X):
    return vector_field_batch(ss, X)


def polar_master_rates(ss: PwlStateSpace, sel: MasterSelection, theta, curve: ThetaGeneratingCurve):
    """``(R(theta), Theta(theta))`` on the curve; independent of ``r``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    X = curve.state(theta)
    F = _field_at(ss, sel, X)
    fm = F[sel.v_index]
    c, s = np.cos(theta), np.sin(theta)
    return s * c + s * fm, -s * s + c * fm


def geometry_ode_residual(ss: PwlStateSpace, sel: MasterSelection, curve: ThetaGeneratingCurve, theta) -> np.ndarray:
    """``Theta S' - (F_S(G) - R S)`` for every slave ``S``, shape (n-2, m)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    X = curve.state(theta)
    F = _field_at(ss, sel, X)
    fm = F[sel.v_index]
    c, s = np.cos(theta), np.sin(theta)
    R = s * c + s * fm
    Th = -s * s + c * fm
    S = X[sel.slaves]
    dS = curve.slaves_derivative(theta)
    return Th * dS - (F[sel.slaves] - R * S)


def _nodes(M):
    return 2 * np.pi * np.arange(M) / M


def default_nodes(n_harmonics: int) -> int:
    return max(4 * n_harmonics + 1, 256)


def harmonic_residual(ss, sel, curve, M=None) -> np.ndarray:
    """Galerkin projection of the geometry residual on harmonics ``0..N_h``."""
    M = default_nodes(curve.n_harmonics) if M is None else M
    r = geometry_ode_residual(ss, sel, curve, _nodes(M))
    return fourier.fit_uniform(r, curve.n_harmonics)


def curve_from_linear_mode(ss: PwlStateSpace, sel: MasterSelection, n_harmonics: int, mode: int = 0) -> ThetaGeneratingCurve:
    """Planar curve of an oscillatory mode of ``(A- + A+)/2``.

    Each slave of a linear mode is a linear combination of ``u`` and
    ``v``, hence ``S(theta) = alpha cos(theta) + beta sin(theta)``.
    """
    Abar = 0.5 * (ss.A_minus + ss.A_plus)
    sp = eigen_spectrum(Abar, vectors=True)
    osc = sorted([i for i, l in enumerate(sp.values) if l.imag > 1e-12], key=lambda i: sp.values[i].imag)
    v = sp.vectors[:, osc[mode]]
    B = np.array([[v.real[sel.u_index], v.imag[sel.u_index]], [v.real[sel.v_index], v.imag[sel.v_index]]])
    S = np.vstack([v.real[sel.slaves], v.imag[sel.slaves]]).T
    L = S @ np.linalg.inv(B)  # slave = L @ (u, v)
    C = np.zeros((len(sel.slaves), 2 * n_harmonics + 1))
    C[:, 1] = L[:, 0]
    C[:, n_harmonics + 1] = L[:, 1]
    return ThetaGeneratingCurve(sel, n_harmonics, C)


def _orbit_polar(ss, sel, X):
    u, v = X[sel.u_index], X[sel.v_index]
    rho = np.hypot(u, v)
    return np.arctan2(v, u), rho


def curve_from_cone(ss: PwlStateSpace, sel: MasterSelection, sol: ConeSolution, n_harmonics: int, per_segment: int = 400) -> ThetaGeneratingCurve:
    """Least-squares Fourier fit of ``x_j / rho`` over ``theta`` along one cycle."""
    _, X, _ = cone_orbit(ss, sol, per_segment)
    # normalize each sample so the cycle closes for mu != 1
    th, rho = _orbit_polar(ss, sel, X)
    vals = X[sel.slaves] / rho
    C = fourier.fit_scattered(th, vals, n_harmonics)
    return ThetaGeneratingCurve(sel, n_harmonics, C)


def solve_generating_curve_hbm(
    ss: PwlStateSpace,
    sel: MasterSelection | None = None,
    n_harmonics: int = 20,
    guess: ThetaGeneratingCurve | ConeSolution | None = None,
    reference: ConeSolution | None = None,
    n_nodes: int | None = None,
    tol: float = 1e-9,
    max_iter: int = 30,
    method: str = "galerkin",
):
    """Harmonic balance for the slave functions.

    The geometry residual is sampled on ``n_nodes`` equispaced angles
    (default ``max(4 N_h + 1, 256)``), where the piecewise-linear field is
    evaluated exactly, and projected on harmonics ``0..N_h``. Newton
    drives the projected residual below ``tol``.

    With ``method="collocation"`` the nodal residual itself is minimized
    in the least-squares sense (Levenberg-Marquardt). That problem always
    has a minimizer, so it also serves low orders where the projected
    equations have no root near the guess.

    Returns
    -------
    ThetaGeneratingCurve or FailureDiagnosis
        A diagnosis is returned instead of a curve when the reference orbit
        (if given) or the converged curve is not graph-style admissible.
    """
    sel = MasterSelection.switching_dof(ss) if sel is None else sel
    w = ss.n_alpha[: ss.N]
    if abs(w[sel.m]) == 0 or np.count_nonzero(w) != 1:
        raise GraphStyleError("only the support DOF is supported as master (linear slave dynamics)")
    if reference is not None:
        diag = diagnose_failures(ss, sel, reference)
        if not diag.ok:
            return diag
    if guess is None:
        guess = curve_from_cone(ss, sel, reference, n_harmonics) if reference is not None else curve_from_linear_mode(ss, sel, n_harmonics)
    elif isinstance(guess, ConeSolution):
        guess = curve_from_cone(ss, sel, guess, n_harmonics)
    C0 = np.zeros((len(sel.slaves), 2 * n_harmonics + 1))
    Ng = min(guess.n_harmonics, n_harmonics)
    idx_src = np.r_[0, 1:Ng + 1, guess.n_harmonics + 1:guess.n_harmonics + Ng + 1]
    idx_dst = np.r_[0, 1:Ng + 1, n_harmonics + 1:n_harmonics + Ng + 1]
    C0[:, idx_dst] = guess.coeffs[:, idx_src]
    M = default_nodes(n_harmonics) if n_nodes is None else n_nodes
    if M < 4 * n_harmonics + 1:
        raise ValueError("n_nodes must be at least 4 N_h + 1")
    shape = C0.shape

    def fun(z):
        cur = ThetaGeneratingCurve(sel, n_harmonics, z.reshape(shape))
        return harmonic_residual(ss, sel, cur, M).ravel()

    if method == "galerkin":
        z, rep = newton_solve(fun, C0.ravel(), tol=tol, max_iter=max_iter)
    elif method == "collocation":
        z, rep = _least_squares_collocation(ss, sel, n_harmonics, C0, M, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    curve = ThetaGeneratingCurve(sel, n_harmonics, z.reshape(shape), rep)
    probe = diagnose_failures(ss, sel, curve)
    if not probe.ok:
        return probe
    if not rep.converged:
        raise GraphStyleError(f"harmonic balance did not converge: {rep.message} (residual {rep.residual_norm:.3e})")
    return curve


def _least_squares_collocation(ss, sel, n_harmonics, C0, M, max_iter):
    shape = C0.shape
    th = _nodes(M)

    def fun(z):
        return geometry_ode_residual(ss, sel, ThetaGeneratingCurve(sel, n_harmonics, z.reshape(shape)), th).ravel()

    res = least_squares(fun, C0.ravel(), method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=100 * (C0.size + 1))
    # a least-squares minimizer is the answer; convergence means the optimizer stopped on a tolerance
    rep = NewtonReport(bool(res.status > 0), int(res.nfev), float(np.abs(res.fun).max()), [], res.message)
    return res.x, rep


def _cheb_TU(c, K):
    """``T_0..T_K`` and ``U_0..U_{K-1}`` at ``c`` by the three-term recurrence."""
    c = np.asarray(c, dtype=float)
    T = np.empty((K + 1,) + c.shape)
    U = np.empty((max(K, 1),) + c.shape)
    T[0] = 1.0
    if K >= 1:
        T[1] = c
        U[0] = 1.0
    if K >= 2:
        U[1] = 2 * c
    for k in range(2, K + 1):
        T[k] = 2 * c * T[k - 1] - T[k - 2]
    for k in range(2, K):
        U[k] = 2 * c * U[k - 1] - U[k - 2]
    return T, U


def evaluate_slaves_uv(curve: ThetaGeneratingCurve, u, v) -> np.ndarray:
    """Slave states at master point ``(u, v)`` through the Chebyshev lift.

    ``cos(k theta) = T_k(u/r)`` and ``sin(k theta) = (v/r) U_{k-1}(u/r)``,
    so no angle is formed. Returns shape (n-2, m); zero at the origin.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    r = np.hypot(u, v)
    safe = np.where(r > 0, r, 1.0)
    c = np.clip(u / safe, -1.0, 1.0)
    s = v / safe
    K = curve.n_harmonics
    T, U = _cheb_TU(c, K)
    C = curve.coeffs
    out = C[:, [0]] * T[0]
    if K:
        out = out + C[:, 1:K + 1] @ T[1:] + C[:, K + 1:] @ (s * U[:K])
    return np.where(r > 0, r * out, 0.0)


def lift(curve: ThetaGeneratingCurve, u, v) -> np.ndarray:
    """Full state ``W(u, v)`` on the cone, shape (n, m)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    sel = curve.selection
    X = np.empty((curve.n, u.size))
    X[sel.u_index] = u
    X[sel.v_index] = v
    X[sel.slaves] = evaluate_slaves_uv(curve, u, v)
    return X


def rom_rhs(ss: PwlStateSpace, curve: ThetaGeneratingCurve, state) -> np.ndarray:
    """``(u', v') = (v, f_m(W(u, v)))``."""
    u, v = float(state[0]), float(state[1])
    X = lift(curve, u, v)
    fm = vector_field_batch(ss, X)[curve.selection.v_index, 0]
    return np.array([v, fm])


def rom_rhs_polar(ss: PwlStateSpace, curve: ThetaGeneratingCurve, r: float, theta: float) -> np.ndarray:
    """``(r', theta') = (r R(theta), Theta(theta))``."""
    R, Th = polar_master_rates(ss, curve.selection, theta, curve)
    return np.array([r * R[0], Th[0]])


def _master_events(ss, curve):
    sel = curve.selection
    wm = ss.n_alpha[sel.m]
    evs = [EventSpec(lambda t, y: wm * y[0], +1, True, "entry")]
    if ss.c_n > 0:
        evs.append(EventSpec(lambda t, y: wm * (ss.k_n * y[0] + ss.c_n * y[1]), -1, True, "exit"))
    else:
        evs.append(EventSpec(lambda t, y: wm * y[0], -1, True, "exit"))
    return evs


def rom_integrate(ss: PwlStateSpace, curve: ThetaGeneratingCurve, u0: float, v0: float, t_end: float, t_eval=None, rtol=1e-11, atol=1e-13):
    """Integrate the one-DOF model, restarting at every switching event.

    Returns
    -------
    t : ndarray
    U : ndarray, shape (2, m)
        ``(u, v)`` at ``t`` (``t_eval`` if given).
    """
    evs = _master_events(ss, curve)
    fun = lambda t, y: rom_rhs(ss, curve, y)
    t, y = 0.0, np.array([u0, v0], dtype=float)
    pieces = []
    while t < t_end:
        res = integrate_with_events(fun, y, (t, t_end), evs, rtol=rtol, atol=atol)
        pieces.append(res)
        t = res.t[-1]
        y = res.y[:, -1]
        if not res.terminated:
            break
    if t_eval is None:
        tt = np.concatenate([p.t if i == 0 else p.t[1:] for i, p in enumerate(pieces)])
        Y = np.hstack([p.y if i == 0 else p.y[:, 1:] for i, p in enumerate(pieces)])
        return tt, Y
    t_eval = np.asarray(t_eval, dtype=float)
    Y = np.empty((2, t_eval.size))
    starts = np.array([p.t[0] for p in pieces])
    idx = np.clip(np.searchsorted(starts, t_eval, side="right") - 1, 0, len(pieces) - 1)
    for k in np.unique(idx):
        sel = idx == k
        Y[:, sel] = pieces[k](t_eval[sel])
    return t_eval, Y


def log_multiplier(ss: PwlStateSpace, curve: ThetaGeneratingCurve, M: int = 4096) -> float:
    """``ln mu = integral of R/|Theta| d theta`` over one revolution.

    Trapezoid rule on the periodic integrand, split at the master-plane
    switching angles.
    """
    sel = curve.selection
    wm = ss.n_alpha[sel.m]
    # switching angles in the master plane (entry at u = 0 rising, exit per support law)
    cuts = [np.pi / 2 if wm > 0 else -np.pi / 2]
    if ss.c_n > 0:
        cuts.append(np.arctan2(-ss.k_n, ss.c_n) if wm > 0 else np.arctan2(ss.k_n, -ss.c_n))
    else:
        cuts.append(-np.pi / 2 if wm > 0 else np.pi / 2)
    cuts = np.sort(np.mod(cuts, 2 * np.pi))
    bounds = np.r_[cuts, cuts[0] + 2 * np.pi]
    xg, wg = np.polynomial.legendre.leggauss(64)
    total = 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a <= 0:
            continue
        nseg = max(1, int(np.ceil(M / 64 * (b - a) / (2 * np.pi))))
        edges = np.linspace(a, b, nseg + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            th = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
            R, Th = polar_master_rates(ss, sel, th, curve)
            total += 0.5 * (hi - lo) * np.sum(wg * R / np.abs(Th))
    return float(total)


def _theta_rate(ss, sel, X):
    F = vector_field_batch(ss, X)
    u, v = X[sel.u_index], X[sel.v_index]
    return (u * F[sel.v_index] - v * F[sel.u_index]) / (u * u + v * v)


def _diagnose_orbit(ss, sel, sol: ConeSolution, per_segment=400, nodal_tol=1e-8, multi_tol=1e-3):
    t, X, modes = cone_orbit(ss, sol, per_segment)
    scale = np.linalg.norm(X, axis=0)
    u, v = X[sel.u_index], X[sel.v_index]
    rho = np.hypot(u, v) / scale
    # nodal: refine the smallest master projection on its segment
    i = int(np.argmin(rho[:-1]))
    seg_starts = np.r_[0, np.cumsum(sol.times)]
    j = int(np.searchsorted(seg_starts, t[i], side="right") - 1)
    A = ss.A_minus if j % 2 == 0 else ss.A_plus
    x_j = _state_at_segment(ss, sol, j)

    def rho_rel(tau):
        x = matrix_exponential(A, tau) @ x_j
        return np.hypot(x[sel.u_index], x[sel.v_index]) / np.linalg.norm(x)

    lo = max(t[i] - (t[1] - t[0]) - seg_starts[j], 0.0)
    hi = min(t[i] + (t[1] - t[0]) - seg_starts[j], sol.times[j])
    ref = minimize_scalar(rho_rel, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    rho_min = min(float(ref.fun), float(rho.min()))
    if rho_min <= nodal_tol:
        return FailureDiagnosis("nodal", {"min_master_projection": rho_min, "t": float(seg_starts[j] + ref.x)})
    theta = np.unwrap(np.arctan2(v, u))
    winding = (theta[-1] - theta[0]) / (2 * np.pi)
    wind_n = int(np.round(winding))
    if abs(wind_n) != 1:
        ev = _shared_theta_evidence(ss, sel, X, multi_tol)
        ev["winding_number"] = float(winding)
        return FailureDiagnosis("multi_valued", ev)
    # fold: sign change of the angular rate along the orbit, located exactly
    rate = _theta_rate(ss, sel, X)
    sgn = np.sign(rate)
    folds = []
    for k in np.flatnonzero(sgn[:-1] * sgn[1:] < 0):
        j = int(np.searchsorted(seg_starts, t[k], side="right") - 1)
        if t[k + 1] > seg_starts[j + 1] + 1e-12:
            continue
        A = ss.A_minus if j % 2 == 0 else ss.A_plus
        x_j = _state_at_segment(ss, sol, j)
        f = lambda tau: float(_theta_rate(ss, sel, (matrix_exponential(A, tau) @ x_j)[:, None])[0])
        a, b = t[k] - seg_starts[j], t[k + 1] - seg_starts[j]
        tau = brentq(f, a, min(b, sol.times[j]), xtol=1e-15, rtol=1e-15)
        x = matrix_exponential(A, tau) @ x_j
        folds.append((float(seg_starts[j] + tau), float(np.arctan2(x[sel.v_index], x[sel.u_index])), abs(f(tau))))
    if folds:
        tf, thf, rf = min(folds, key=lambda z: z[2])
        return FailureDiagnosis("fold_point", {"theta_star": thf, "abs_theta_rate": rf, "t_star": tf, "n_folds": len(folds), "winding_number": float(winding)})
    return FailureDiagnosis("none", {"winding_number": float(winding), "min_master_projection": rho_min, "min_abs_theta_rate": float(np.abs(rate).min())})


def _state_at_segment(ss, sol, j):
    y = sol.xi.copy()
    for i in range(j):
        A = ss.A_minus if i % 2 == 0 else ss.A_plus
        y = matrix_exponential(A, sol.times[i]) @ y
    return y


def _shared_theta_evidence(ss, sel, X, multi_tol):
    u, v = X[sel.u_index], X[sel.v_index]
    rho = np.hypot(u, v)
    th = np.arctan2(v, u)
    S = X[sel.slaves] / rho
    scale = float(np.abs(S).max())
    order = np.argsort(th)
    best = {"theta": None, "slave_difference": 0.0}
    ths = th[order]
    for a in range(len(order) - 1):
        b = a + 1
        while b < len(order) and ths[b] - ths[a] <= 1e-3:
            d = float(np.abs(S[:, order[a]] - S[:, order[b]]).max())
            if d > best["slave_difference"]:
                best = {"theta": float(ths[a]), "slave_difference": d}
            b += 1
    best["relative_difference"] = best["slave_difference"] / scale
    best["exceeds_tolerance"] = best["relative_difference"] > multi_tol
    return best


def _diagnose_curve(ss, sel, curve: ThetaGeneratingCurve, M=4096):
    th = _nodes(M)
    _, Th = polar_master_rates(ss, sel, th, curve)
    sgn = np.sign(Th)
    idx = np.flatnonzero(sgn != np.roll(sgn, -1))
    if idx.size == 0:
        return FailureDiagnosis("none", {"min_abs_theta_rate": float(np.abs(Th).min())})
    f = lambda x: float(polar_master_rates(ss, sel, x, curve)[1][0])
    k = int(idx[0])
    a, b = th[k], th[k] + 2 * np.pi / M
    ts = brentq(f, a, b, xtol=1e-15, rtol=1e-15)
    return FailureDiagnosis("fold_point", {"theta_star": float(np.mod(ts, 2 * np.pi)), "abs_theta_rate": abs(f(ts)), "n_sign_changes": int(idx.size)})


def diagnose_failures(ss: PwlStateSpace, sel: MasterSelection, probe) -> FailureDiagnosis:
    """Check whether the master angle is an admissible curve coordinate.

    Parameters
    ----------
    probe : ConeSolution or ThetaGeneratingCurve
        A reference orbit (the cone's cycle, sampled exactly) or a curve
        candidate from harmonic balance.
    """
    if isinstance(probe, ConeSolution):
        return _diagnose_orbit(ss, sel, probe)
    if isinstance(probe, ThetaGeneratingCurve):
        return _diagnose_curve(ss, sel, probe)
    raise TypeError(f"unsupported probe type {type(probe).__name__}")


def integrate_geometry_ode(ss: PwlStateSpace, sel: MasterSelection, theta0: float, slaves0, dtheta: float, theta_rate_tol: float = 1e-8):
    """March ``dS/dtheta = (F_S - R S)/Theta`` from ``theta0`` over ``dtheta``.

    Integration halts where ``|Theta|`` drops below ``theta_rate_tol``.

    Returns
    -------
    theta : ndarray
    S : ndarray, shape (n-2, m)
    diagnosis : FailureDiagnosis
        ``fold_point`` when halted, ``none`` otherwise.
    """
    n = ss.n

    def state(th, S):
        X = np.empty(n)
        X[sel.u_index] = np.cos(th)
        X[sel.v_index] = np.sin(th)
        X[sel.slaves] = S
        return X

    def rates(th, S):
        X = state(th, S)
        F = vector_field_batch(ss, X[:, None])[:, 0]
        fm = F[sel.v_index]
        c, s = np.cos(th), np.sin(th)
        return s * c + s * fm, -s * s + c * fm, F[sel.slaves]

    def fun(th, S):
        R, Th, FS = rates(th, S)
        return (FS - R * S) / Th

    def near_fold(th, S):
        return abs(rates(th, S)[1]) - theta_rate_tol

    ev = EventSpec(near_fold, -1, True, "fold")
    try:
        res = integrate_with_events(fun, slaves0, (theta0, theta0 + dtheta), [ev], rtol=1e-10, atol=1e-12)
    except IntegrationError as exc:
        # the slope blows up like 1/Theta; the stepper gives up just before the fold
        return np.array([theta0]), np.asarray(slaves0, float)[:, None], FailureDiagnosis("fold_point", {"message": str(exc)})
    if res.terminated:
        th = float(res.t[-1])
        return res.t, res.y, FailureDiagnosis("fold_point", {"theta_star": float(np.mod(th, 2 * np.pi)), "abs_theta_rate": abs(rates(th, res.y[:, -1])[1])})
    return res.t, res.y, FailureDiagnosis("none", {})


def save_theta_curve(curve: ThetaGeneratingCurve, path) -> None:
    sel = curve.selection
    data = {
        "m": sel.m,
        "N": sel.N,
        "N_h": curve.n_harmonics,
        "slaves": [int(i) for i in sel.slaves],
        "coefficients": curve.coeffs.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_theta_curve(path) -> ThetaGeneratingCurve:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    sel = MasterSelection(int(d["m"]), int(d["N"]))
    C = np.asarray(d["coefficients"], dtype=float)
    if C.shape != (len(sel.slaves), 2 * int(d["N_h"]) + 1):
        raise ValueError("coefficient table does not match N and N_h")
    return ThetaGeneratingCurve(sel, int(d["N_h"]), C)


def write_rom_csv(t, U, path) -> None:
    """ROM trajectory CSV ``t, u, v, r, theta``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "u", "v", "r", "theta"])
        for ti, (u, v) in zip(t, U.T):
            wr.writerow([f"{x:.17g}" for x in (ti, u, v, np.hypot(u, v), np.arctan2(v, u))])
