"""Arc-length parametrization of a cone on the unit hypersphere.

The generating curve ``G(s)`` is the intersection of the cone with the
unit sphere, traversed at unit speed. With the projected field
``T(G) = f(G) - (G^T f(G)) G`` the curve solves

    G' = T(G) / |T(G)|

which has no singularity as long as ``G`` is not a real eigendirection of
the active matrix. The cone state ``x = r G(s)`` then obeys the reduced
model ``r' = r G^T f(G)``, ``s' = |T(G)|``, and the multiplier follows
from ``ln mu = integral of G^T f / |T| ds`` over one loop.

Two solvers are provided. ``hbm`` is a Fourier-Galerkin balance of the
geometry ODE with the loop length as an unknown; its curve is evaluated as
``F(s) / |F(s)|`` (``F`` the truncated series) so the sphere constraint
holds exactly. ``shooting`` integrates the geometry ODE piecewise (one
matrix per contact mode, restarted at each switching event) and closes the
loop by Newton iteration; it keeps the dense integrator output as an exact
representation and also fits Fourier coefficients of the requested order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import fourier
from .cone import ConeSolution, cone_orbit
from .numerics import EventSpec, NewtonReport, integrate_with_events, newton_solve
from .system import PwlStateSpace, vector_field, vector_field_batch

__all__ = [
    "SingularTangentError",
    "ArcLengthError",
    "SphericalGeneratingCurve",
    "ReducedState",
    "tangent_field",
    "geometry_rhs",
    "loop_from_cone",
    "solve_generating_curve",
    "integrate_geometry_loop",
    "reduced_rates",
    "rom_integrate",
    "reconstruct_state",
    "nearest_reduced_state",
    "multiplier_line_integral",
    "invariance_distance",
    "save_spherical_curve",
    "load_spherical_curve",
    "write_reduced_csv",
]

T_MIN = 1e-10


class SingularTangentError(ArithmeticError):
    """``|T(G)|`` vanished: ``G`` is a real eigendirection of the active field."""


class ArcLengthError(RuntimeError):
    pass


def _tangent(F, G):
    """Projection of ``F`` on the tangent space of the sphere through ``G`` (columns)."""
    return F - (np.sum(G * F, axis=0) / np.sum(G * G, axis=0)) * G


def tangent_field(ss: PwlStateSpace, G) -> np.ndarray:
    """``T(G) = f(G) - (G^T f(G)) G`` for a unit vector ``G``."""
    G = np.asarray(G, dtype=float)
    nrm = np.linalg.norm(G)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"G must be a unit vector (|G| = {nrm:.12g})")
    f = vector_field(ss, G)
    T = f - (G @ f) * G
    if np.linalg.norm(T) < T_MIN:
        raise SingularTangentError("tangent field vanishes: G is a real eigendirection of the active matrix")
    return T


def geometry_rhs(ss: PwlStateSpace, G) -> np.ndarray:
    """Unit tangent ``T(G)/|T(G)|``."""
    T = tangent_field(ss, G)
    return T / np.linalg.norm(T)


@dataclass
class _DenseLoop:
    """Piecewise dense output of the geometry ODE over ``[0, L]``."""

    starts: np.ndarray
    pieces: list
    L: float

    def __call__(self, s):
        s = np.mod(np.atleast_1d(np.asarray(s, dtype=float)), self.L)
        idx = np.clip(np.searchsorted(self.starts, s, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty((self.pieces[0].y.shape[0], s.size))
        for k in np.unique(idx):
            sel = idx == k
            out[:, sel] = self.pieces[k](s[sel])
        return out


@dataclass
class SphericalGeneratingCurve:
    """Closed unit-speed curve ``G(s)``, ``s`` in ``[0, L)``.

    Attributes
    ----------
    n_harmonics : int
        Fourier order ``N_h``.
    coeffs : ndarray, shape (n, 2 N_h + 1)
        Rows ``[X0_i, Xc_1i..Xc_Ni, Xs_1i..Xs_Ni]`` in the phase
        ``Omega_s s`` with ``Omega_s = 2 pi / L``.
    L : float
        Loop length.
    breakpoints : ndarray
        Arc lengths where the curve crosses a switching boundary.
    dense : callable or None
        Exact representation from shooting. When present, :meth:`__call__`
        evaluates it; otherwise the normalized Fourier series is used.
    """

    n_harmonics: int
    coeffs: np.ndarray
    L: float
    breakpoints: np.ndarray = field(default_factory=lambda: np.empty(0))
    dense: _DenseLoop | None = field(default=None, repr=False)
    method: str = "hbm"
    report: NewtonReport | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def Omega_s(self) -> float:
        return 2 * np.pi / self.L

    @property
    def X0(self) -> np.ndarray:
        return self.coeffs[:, 0]

    @property
    def Xc(self) -> np.ndarray:
        return self.coeffs[:, 1:self.n_harmonics + 1].T

    @property
    def Xs(self) -> np.ndarray:
        return self.coeffs[:, self.n_harmonics + 1:].T

    def fourier_series(self, s) -> np.ndarray:
        """Raw truncated series at ``s``, shape (n, m); not normalized."""
        return fourier.evaluate(self.coeffs, self.Omega_s * np.atleast_1d(s))

    def fourier_curve(self, s) -> np.ndarray:
        """Truncated series projected on the sphere."""
        F = self.fourier_series(s)
        return F / np.linalg.norm(F, axis=0)

    def __call__(self, s) -> np.ndarray:
        """Unit vectors ``G(s)``, shape (n, m)."""
        if self.dense is not None:
            G = self.dense(s)
            return G / np.linalg.norm(G, axis=0)
        return self.fourier_curve(s)

    def without_dense(self) -> "SphericalGeneratingCurve":
        """Copy that evaluates through the Fourier series only."""
        return SphericalGeneratingCurve(self.n_harmonics, self.coeffs, self.L, self.breakpoints, None, self.method, self.report, dict(self.diagnostics))


@dataclass(frozen=True)
class ReducedState:
    r: float
    s: float


# ---------------------------------------------------------------- guesses

def _anchor_index(ss, X):
    """Index after which ``h_alpha`` changes sign falling along the columns of ``X``."""
    h = ss.n_alpha @ X
    idx = np.flatnonzero((h[:-1] > 0) & (h[1:] <= 0))
    if idx.size == 0:
        raise ArcLengthError("guess loop never crosses the position boundary falling")
    return int(idx[0])


def loop_from_cone(ss: PwlStateSpace, sol: ConeSolution, per_segment: int = 2000):
    """Normalized states of one cone cycle, rotated to start at the anchor.

    Returns
    -------
    s : ndarray
        Arc length of the normalized samples (polygonal, from the anchor).
    G : ndarray, shape (n, m)
        Unit vectors, first column on ``h_alpha = 0`` entering ``V-``.
    """
    _, X, _ = cone_orbit(ss, sol, per_segment)
    G = X / np.linalg.norm(X, axis=0)
    return _loop_from_samples(ss, G[:, :-1])


def _loop_from_samples(ss, G):
    G = G / np.linalg.norm(G, axis=0)
    m = G.shape[1]
    Gc = np.hstack([G, G[:, :1]])
    i = _anchor_index(ss, Gc)
    # linear interpolation to the anchor point
    h = ss.n_alpha @ Gc
    a = h[i] / (h[i] - h[i + 1])
    g0 = (1 - a) * Gc[:, i] + a * Gc[:, i + 1]
    g0 /= np.linalg.norm(g0)
    order = np.r_[np.arange(i + 1, m), np.arange(0, i + 1)]
    G2 = np.hstack([g0[:, None], G[:, order], g0[:, None]])
    ds = np.linalg.norm(np.diff(G2, axis=1), axis=0)
    s = np.r_[0.0, np.cumsum(ds)]
    return s, G2


def _fourier_from_loop(s, G, n_harmonics, M=4096):
    L = s[-1]
    su = np.linspace(0.0, L, M, endpoint=False)
    Gu = np.vstack([np.interp(su, s, g) for g in G])
    return fourier.fit_uniform(Gu, n_harmonics), L


# ---------------------------------------------------------------- shooting

def _mode_events(ss, mode):
    if mode < 0:
        return [EventSpec(lambda t, y: float(ss.n_alpha @ y), +1, True, "entry")]
    return [EventSpec(lambda t, y: float(ss.n_exit @ y), -1, True, "exit")]


def _mode_rhs(A):
    def rhs(s, G):
        f = A @ G
        T = f - (G @ f) / (G @ G) * G
        nt = np.linalg.norm(T)
        if nt < T_MIN:
            raise SingularTangentError("tangent field vanishes along the loop")
        return T / nt

    return rhs


def _start_mode(ss, G):
    ha, hb = ss.n_alpha @ G, ss.n_beta @ G
    scale = np.linalg.norm(G)
    if abs(ha) <= 1e-12 * scale:
        return 1 if ss.n_alpha @ (ss.A_minus @ G) > 0 else -1
    if ha > 0 and (ss.c_n == 0 or hb > 0):
        return 1
    return -1


def integrate_geometry_loop(ss: PwlStateSpace, G0, L: float, rtol: float = 1e-12, atol: float = 1e-13):
    """Integrate the geometry ODE from ``G0`` over arc length ``L``.

    The matrix of the current contact mode is held fixed on each piece and
    the integration restarts at each switching event.

    Returns
    -------
    G_end : ndarray
    dense : _DenseLoop
    breakpoints : ndarray
        Arc lengths of the switching events.
    """
    G = np.asarray(G0, dtype=float)
    G = G / np.linalg.norm(G)
    mode = _start_mode(ss, G)
    s = 0.0
    pieces, starts, bps = [], [], []
    for _ in range(10000):
        A = ss.A_plus if mode > 0 else ss.A_minus
        res = integrate_with_events(_mode_rhs(A), G, (s, L), _mode_events(ss, mode), rtol=rtol, atol=atol)
        pieces.append(res)
        starts.append(s)
        s = float(res.t[-1])
        G = res.y[:, -1]
        if not res.terminated:
            break
        bps.append(s)
        mode = -mode
    else:
        raise ArcLengthError("too many switching events along the loop")
    return G, _DenseLoop(np.array(starts), pieces, L), np.array(bps)


def _solve_shooting(ss, G0, L0, n_harmonics, tol=1e-10, rtol=1e-12):
    nrm = ss.n_alpha / np.linalg.norm(ss.n_alpha)

    def fun(z):
        g0, L = z[:-1], z[-1]
        if L <= 0:
            raise ValueError("nonpositive loop length")
        gh = g0 / np.linalg.norm(g0)
        gL, _, _ = integrate_geometry_loop(ss, gh, L, rtol=rtol)
        return np.r_[gL - g0, nrm @ g0]

    z, rep = newton_solve(fun, np.r_[G0, L0], tol=tol, max_iter=30)
    if not rep.converged:
        raise ArcLengthError(f"shooting did not converge: {rep.message} (residual {rep.residual_norm:.3e})")
    g0 = z[:-1] / np.linalg.norm(z[:-1])
    L = float(z[-1])
    gL, dense, bps = integrate_geometry_loop(ss, g0, L, rtol=rtol)
    M = 4096
    su = np.linspace(0.0, L, M, endpoint=False)
    C = fourier.fit_uniform(dense(su), n_harmonics)
    diag = {
        "closure": float(np.linalg.norm(gL - g0)),
        "sphere_drift": float(abs(np.linalg.norm(gL) - 1.0)),
        "anchor": float(nrm @ g0),
    }
    return SphericalGeneratingCurve(n_harmonics, C, L, bps, dense, "shooting", rep, diag)


# ---------------------------------------------------------------- harmonic balance

def _hbm_residual(ss, C, L, n_harmonics, M):
    phi = 2 * np.pi * np.arange(M) / M
    G = fourier.evaluate(C, phi)
    dG = fourier.evaluate(fourier.derivative(C), phi) * (2 * np.pi / L)
    F = vector_field_batch(ss, G)
    T = _tangent(F, G)
    nt = np.linalg.norm(T, axis=0)
    if np.any(nt < T_MIN):
        raise SingularTangentError("tangent field vanishes on the candidate curve")
    r = dG - T / nt + (np.sum(G * G, axis=0) - 1.0) * G
    return fourier.fit_uniform(r, n_harmonics)


def _solve_hbm(ss, C0, L0, n_harmonics, M=None, tol=1e-10, max_iter=40):
    n = ss.n
    M = max(8 * n_harmonics + 8, 512) if M is None else M
    shape = (n, 2 * n_harmonics + 1)
    nrm = ss.n_alpha / np.linalg.norm(ss.n_alpha)

    def fun(z):
        C = z[:-1].reshape(shape)
        L = z[-1]
        res = _hbm_residual(ss, C, L, n_harmonics, M)
        g0 = C[:, :n_harmonics + 1].sum(axis=1)
        return np.r_[res.ravel(), nrm @ g0]

    z, rep = newton_solve(fun, np.r_[C0.ravel(), L0], tol=tol, max_iter=max_iter)
    if not rep.converged:
        raise ArcLengthError(f"harmonic balance did not converge: {rep.message} (residual {rep.residual_norm:.3e})")
    C = z[:-1].reshape(shape)
    curve = SphericalGeneratingCurve(n_harmonics, C, float(z[-1]), np.empty(0), None, "hbm", rep)
    curve.breakpoints = _find_breakpoints(ss, curve)
    su = np.linspace(0, curve.L, 4096, endpoint=False)
    Fs = curve.fourier_series(su)
    curve.diagnostics = {
        "harmonic_residual": rep.residual_norm,
        "closure": 0.0,
        "max_norm_deviation": float(np.abs(np.linalg.norm(Fs, axis=0) - 1).max()),
    }
    return curve


def _find_breakpoints(ss, curve, M=8192):
    s = np.linspace(0.0, curve.L, M, endpoint=False)
    G = curve(s)
    out = []
    for nrm in ((ss.n_alpha, ss.n_exit) if ss.c_n > 0 else (ss.n_alpha,)):
        h = nrm @ G
        hn = np.roll(h, -1)
        for i in np.flatnonzero(np.sign(h) != np.sign(hn)):
            a, b = s[i], s[i] + curve.L / M
            f = lambda x, nrm=nrm: float(nrm @ curve(x)[:, 0])
            fa, fb = f(a), f(b)
            if fa == 0.0:
                out.append(a)
            elif fa * fb < 0:
                out.append(brentq(f, a, b, xtol=1e-14))
    return np.sort(np.mod(out, curve.L))


def solve_generating_curve(
    ss: PwlStateSpace,
    guess,
    method: str = "hbm",
    n_harmonics: int = 12,
    tol: float = 1e-10,
    n_nodes: int | None = None,
) -> SphericalGeneratingCurve:
    """Closed generating curve on the unit sphere.

    Parameters
    ----------
    guess : ConeSolution, SphericalGeneratingCurve or ndarray (n, m)
        A converged cone, a previous curve, or sampled states of one cycle.
    method : {"hbm", "shooting"}
    n_harmonics : int
        Fourier order of the result.

    Notes
    -----
    The phase is anchored at ``h_alpha(G(0)) = 0`` with the curve entering
    ``V-`` there.
    """
    if isinstance(guess, ConeSolution):
        s, G = loop_from_cone(ss, guess)
    elif isinstance(guess, SphericalGeneratingCurve):
        su = np.linspace(0.0, guess.L, 4096)
        s, G = su, guess(su)
    else:
        s, G = _loop_from_samples(ss, np.asarray(guess, dtype=float))
    C0, L0 = _fourier_from_loop(s, G, n_harmonics)
    if method == "hbm":
        return _solve_hbm(ss, C0, L0, n_harmonics, n_nodes, tol)
    if method == "shooting":
        return _solve_shooting(ss, G[:, 0], L0, n_harmonics, tol)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- reduced model

def reduced_rates(ss: PwlStateSpace, curve: SphericalGeneratingCurve, state: ReducedState):
    """``(r', s') = (r G^T f(G), |T(G)|)`` at ``G = G(s)``."""
    if state.r < 0:
        raise ValueError("r must be nonnegative")
    G = curve(state.s)[:, 0]
    f = vector_field(ss, G)
    T = f - (G @ f) * G
    nt = np.linalg.norm(T)
    if nt < T_MIN:
        raise SingularTangentError("tangent field vanishes on the curve")
    return state.r * float(G @ f), float(nt)


def _rates_batch(ss, curve, s):
    G = curve(s)
    F = vector_field_batch(ss, G)
    T = _tangent(F, G)
    return np.sum(G * F, axis=0), np.linalg.norm(T, axis=0)


def rom_integrate(ss: PwlStateSpace, curve: SphericalGeneratingCurve, r0: float, s0: float, t_end: float, t_eval=None, rtol: float = 1e-11, atol: float = 1e-13):
    """Integrate ``(ln r, s)`` and return ``t, r, s`` with ``s`` wrapped into ``[0, L)``.

    The integration restarts at every breakpoint of the curve so each piece
    has a smooth right-hand side.
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    L = curve.L
    bps = np.sort(np.mod(curve.breakpoints, L))

    def rhs(t, y):
        a, b = _rates_batch(ss, curve, y[1])
        return np.array([a[0], b[0]])

    def next_break(s):
        if bps.size == 0:
            return np.inf
        k = np.floor(s / L)
        cand = k * L + bps
        cand = cand[cand > s + 1e-12 * L]
        return cand.min() if cand.size else (k + 1) * L + bps[0]

    t, y = 0.0, np.array([np.log(r0), float(s0)])
    pieces = []
    while t < t_end:
        sb = next_break(y[1])
        ev = [EventSpec(lambda tt, yy, sb=sb: yy[1] - sb, +1, True, "break")] if np.isfinite(sb) else []
        res = integrate_with_events(rhs, y, (t, t_end), ev, rtol=rtol, atol=atol)
        pieces.append(res)
        t, y = float(res.t[-1]), res.y[:, -1].copy()
        if res.terminated:
            y[1] = sb
        else:
            break
    if t_eval is None:
        tt = np.concatenate([p.t if i == 0 else p.t[1:] for i, p in enumerate(pieces)])
        Y = np.hstack([p.y if i == 0 else p.y[:, 1:] for i, p in enumerate(pieces)])
    else:
        tt = np.asarray(t_eval, dtype=float)
        Y = np.empty((2, tt.size))
        starts = np.array([p.t[0] for p in pieces])
        idx = np.clip(np.searchsorted(starts, tt, side="right") - 1, 0, len(pieces) - 1)
        for k in np.unique(idx):
            m = idx == k
            Y[:, m] = pieces[k](tt[m])
    return tt, np.exp(Y[0]), np.mod(Y[1], L)


def reconstruct_state(curve: SphericalGeneratingCurve, state: ReducedState) -> np.ndarray:
    """``r G(s)``."""
    if state.r == 0:
        return np.zeros(curve.n)
    return state.r * curve(state.s)[:, 0]


def _coarse(curve, M=2048):
    s = np.linspace(0.0, curve.L, M, endpoint=False)
    return s, curve(s)


def nearest_reduced_state(curve: SphericalGeneratingCurve, x, _coarse_cache=None) -> ReducedState:
    """``(r, s)`` with ``r = |x|`` and ``s`` minimizing ``|x/|x| - G(s)|``.

    A 2048-sample scan picks the basin; bounded Brent refinement and a
    tangent-orthogonality root polish it.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0:
        return ReducedState(0.0, 0.0)
    xh = x / r
    s, G = _coarse_cache if _coarse_cache is not None else _coarse(curve)
    d = np.linalg.norm(G - xh[:, None], axis=0)
    i = int(np.argmin(d))
    h = s[1] - s[0]
    f = lambda t: float(np.sum((curve(t)[:, 0] - xh) ** 2))
    res = minimize_scalar(f, bounds=(s[i] - h, s[i] + h), method="bounded", options={"xatol": 1e-12})
    best = float(res.x) if res.fun <= d[i] ** 2 else float(s[i])
    # polish: the residual is orthogonal to the curve tangent at the optimum
    g = lambda t: float((xh - curve(t)[:, 0]) @ _unit_tangent(curve, t))
    a, b = best - 1e-4 * h, best + 1e-4 * h
    try:
        if g(a) * g(b) < 0:
            best = brentq(g, a, b, xtol=1e-15)
    except SingularTangentError:
        pass
    return ReducedState(r, float(np.mod(best, curve.L)))


def _unit_tangent(curve, s, h=1e-6):
    """Central-difference unit tangent of the curve."""
    d = curve(np.array([s + h, s - h]))
    t = d[:, 0] - d[:, 1]
    nt = np.linalg.norm(t)
    if nt == 0:
        raise SingularTangentError("curve tangent vanishes")
    return t / nt


def invariance_distance(ss: PwlStateSpace, curve: SphericalGeneratingCurve, trajectory) -> float:
    """Largest distance of the normalized samples from the curve.

    ``trajectory`` is a :class:`~pwlcone.flow.Trajectory` or an array of
    states with shape (m, n).
    """
    X = trajectory.x if hasattr(trajectory, "x") else np.asarray(trajectory, dtype=float)
    cache = _coarse(curve)
    worst = 0.0
    for x in X:
        if np.linalg.norm(x) == 0:
            continue
        st = nearest_reduced_state(curve, x, cache)
        worst = max(worst, float(np.linalg.norm(x / st.r - curve(st.s)[:, 0])))
    return worst


def multiplier_line_integral(ss: PwlStateSpace, curve: SphericalGeneratingCurve, nodes_per_panel: int = 32, min_nodes: int = 2048) -> float:
    """``mu = exp(integral over one loop of G^T f(G) / |T(G)| ds)``.

    Composite Gauss-Legendre quadrature with panels split at the switching
    breakpoints of the curve.
    """
    L = curve.L
    cuts = np.unique(np.r_[0.0, np.mod(curve.breakpoints, L), L])
    xg, wg = np.polynomial.legendre.leggauss(nodes_per_panel)
    npan = max(1, int(np.ceil(min_nodes / nodes_per_panel)))
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 1e-15 * L:
            continue
        k = max(1, int(np.ceil(npan * (b - a) / L)))
        edges = np.linspace(a, b, k + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            s = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
            gf, nt = _rates_batch(ss, curve, s)
            if np.any(nt < T_MIN):
                raise SingularTangentError("integrand singular: tangent field vanishes")
            total += 0.5 * (hi - lo) * float(np.sum(wg * gf / nt))
    return float(np.exp(total))


# ---------------------------------------------------------------- io

def save_spherical_curve(curve: SphericalGeneratingCurve, path) -> None:
    """JSON ``{n, N_h, L, X0, Xc, Xs}`` (plus breakpoints and method)."""
    data = {
        "n": curve.n,
        "N_h": curve.n_harmonics,
        "L": curve.L,
        "X0": curve.X0.tolist(),
        "Xc": curve.Xc.tolist(),
        "Xs": curve.Xs.tolist(),
        "breakpoints": np.asarray(curve.breakpoints).tolist(),
        "method": curve.method,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_spherical_curve(path) -> SphericalGeneratingCurve:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    n, N = int(d["n"]), int(d["N_h"])
    X0 = np.asarray(d["X0"], float)
    Xc = np.asarray(d["Xc"], float).reshape(N, n)
    Xs = np.asarray(d["Xs"], float).reshape(N, n)
    C = np.hstack([X0[:, None], Xc.T, Xs.T])
    return SphericalGeneratingCurve(N, C, float(d["L"]), np.asarray(d.get("breakpoints", []), float), None, d.get("method", "hbm"))


def write_reduced_csv(t, r, s, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "r", "s"])
        for row in zip(t, r, s):
            wr.writerow([f"{v:.17g}" for v in row])
