"""Invariant cones as nonlinear eigenvalue problems of the return map.

A k-crossing cone is generated by a ray ``xi_1`` on the section with
``P^k(xi_1) = mu * xi_1``. The unknowns ``(xi_1, t_1-, t_1+, ..., t_k+, mu)``
solve a square system: closure of the composed linear flows (n equations),
the 2k-1 intermediate crossing conditions, the section condition and the
normalization ``|xi_1| = 1``.

Newton can land on roots of the crossing equations that are not the first
crossing of the actual flow. Every solution is therefore re-checked
against the event-located flow, and :func:`solve_cone` re-poses the
problem with the crossing count the flow actually shows.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flow import FlowError, first_crossing, poincare_map, poincare_map_k, poincare_jacobian, return_horizon
from .numerics import NewtonReport, eigen_spectrum, matrix_exponential, newton_solve
from .system import MechanicalSystem, PwlStateSpace, assemble_state_space

__all__ = [
    "ConeError",
    "ConeGuess",
    "ConeSolution",
    "AttractivityReport",
    "FspPoint",
    "cone_residual",
    "project_to_section",
    "guess_from_ray",
    "guess_from_linear_mode",
    "guess_from_simulation",
    "solve_k_crossing_cone",
    "solve_elementary_cone",
    "solve_cone",
    "solve_ray_fixed_point",
    "cone_orbit",
    "attractivity",
    "continue_cone",
    "fsp_sweep",
    "write_fsp_csv",
    "save_cone_solution",
    "load_cone_solution",
]


class ConeError(RuntimeError):
    """Cone solve failed; ``kind`` is one of nonconvergence, negative_time,
    nonminimal, degenerate, verification."""

    def __init__(self, message, kind="nonconvergence", detail=None):
        super().__init__(message)
        self.kind = kind
        self.detail = detail or {}


@dataclass
class ConeGuess:
    xi: np.ndarray
    times: np.ndarray
    mu: float = 1.0

    @property
    def k(self) -> int:
        return len(self.times) // 2


@dataclass
class ConeSolution:
    """Converged k-crossing cone.

    Attributes
    ----------
    k : int
        Number of contact episodes per cycle.
    xi_rays : ndarray, shape (k, n)
        Unit generating rays on the section, in cycle order.
    times : ndarray, shape (2k,)
        ``t_1-, t_1+, ..., t_k-, t_k+``.
    mu : float
        Characteristic multiplier.
    residual_norm : float
        Max-norm of the defining residual.
    """

    k: int
    xi_rays: np.ndarray
    times: np.ndarray
    mu: float
    residual_norm: float
    report: NewtonReport | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def xi(self) -> np.ndarray:
        return self.xi_rays[0]

    @property
    def T(self) -> float:
        return float(np.sum(self.times))

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.T

    def as_guess(self) -> ConeGuess:
        return ConeGuess(self.xi.copy(), self.times.copy(), self.mu)


@dataclass
class AttractivityReport:
    eigenvalues: np.ndarray
    attractive: bool
    marginal: bool
    ambiguous: bool
    zero_eigenvalue: complex
    mu_eigenvalue: complex
    message: str = ""


def _pack(xi, times, mu):
    return np.concatenate([np.asarray(xi, float), np.asarray(times, float), [float(mu)]])


def _unpack(z, n, k):
    return z[:n], z[n:n + 2 * k], z[-1]


def cone_residual(ss: PwlStateSpace, z, k: int = 1) -> np.ndarray:
    """Residual of the k-crossing cone system, length ``n + 2k + 1``."""
    n = ss.n
    z = np.asarray(z, dtype=float)
    if z.size != n + 2 * k + 1:
        raise ValueError(f"expected {n + 2 * k + 1} unknowns, got {z.size}")
    xi, times, mu = _unpack(z, n, k)
    nex = ss.n_exit
    y = xi
    crossing = []
    for j in range(k):
        y = matrix_exponential(ss.A_minus, times[2 * j]) @ y
        crossing.append(ss.n_alpha @ y)
        y = matrix_exponential(ss.A_plus, times[2 * j + 1]) @ y
        if j < k - 1:
            crossing.append(nex @ y)
    return np.concatenate([y - mu * xi, crossing, [nex @ xi, xi @ xi - 1.0]])


def project_to_section(ss: PwlStateSpace, x) -> np.ndarray:
    """Follow the flow from ``x`` to the next contact exit point."""
    x = np.asarray(x, dtype=float)
    hor = return_horizon(ss)
    ha = ss.n_alpha @ x
    in_contact = ha > 0 and ss.n_beta @ x >= 0 if ss.c_n > 0 else ha > 0
    if not in_contact:
        x = first_crossing(ss.A_minus, x, ss.n_alpha, +1, hor).x
    return first_crossing(ss.A_plus, x, ss.n_exit, -1, hor).x


def guess_from_ray(ss: PwlStateSpace, x, k: int = 1) -> ConeGuess:
    """Times and multiplier obtained by flowing the ray of ``x`` k times."""
    xi = project_to_section(ss, x)
    xi = xi / np.linalg.norm(xi)
    y, times = poincare_map_k(ss, xi, k)
    return ConeGuess(xi, times, float(np.linalg.norm(y)))


def guess_from_linear_mode(ss: PwlStateSpace, mode: int = 0) -> ConeGuess:
    """Seed from an oscillatory mode of the averaged matrix ``(A- + A+)/2``.

    The real part of the complex eigenvector is rotated in phase until it
    lies on the exit boundary. The times are the half periods of the
    same mode of ``A-`` and ``A+``.
    """
    Abar = 0.5 * (ss.A_minus + ss.A_plus)
    sp = eigen_spectrum(Abar, vectors=True)
    osc = [i for i, l in enumerate(sp.values) if l.imag > 1e-12]
    osc.sort(key=lambda i: sp.values[i].imag)
    if mode >= len(osc):
        raise ConeError(f"averaged matrix has only {len(osc)} oscillatory modes")
    lam = sp.values[osc[mode]]
    v = sp.vectors[:, osc[mode]]
    nex = ss.n_exit
    # x(phi) = Re(e^{i phi} v); choose phi with nex.x = 0 and falling
    a, b = nex @ v.real, -(nex @ v.imag)
    phi = np.arctan2(-a, b)
    best = None
    for ph in (phi, phi + np.pi):
        xphi = np.real(np.exp(1j * ph) * v)
        rate = nex @ (Abar @ xphi)
        if rate < 0:
            best = xphi
    xi = best / np.linalg.norm(best)
    # half periods of the same mode in each region (bilinear estimate)
    times, log_mu = [], 0.0
    for A in (ss.A_minus, ss.A_plus):
        lr = eigen_spectrum(A).values
        lr = lr[lr.imag > 1e-12]
        lr = lr[np.argsort(lr.imag)]
        l = lr[mode] if mode < lr.size else lam
        times.append(np.pi / l.imag)
        log_mu += np.pi * l.real / l.imag
    return ConeGuess(xi, np.array(times), float(np.exp(log_mu)))


def guess_from_simulation(ss: PwlStateSpace, x0, k: int | None = None, n_returns: int = 200, period_tol: float = 1e-7, max_k: int = 8) -> ConeGuess:
    """Late-time section ray of the free motion started at ``x0``.

    The ray is iterated under the normalized return map, which converges
    to an attractive cone. With ``k=None`` the crossing count is taken as
    the shortest period of the late ray sequence.
    """
    xi = project_to_section(ss, x0)
    xi /= np.linalg.norm(xi)
    hist = [xi]
    for _ in range(n_returns):
        y, _, _ = poincare_map(ss, xi)
        xi = y / np.linalg.norm(y)
        hist.append(xi)
    if k is None:
        errs = [np.linalg.norm(hist[-1] - hist[-1 - j]) for j in range(1, max_k + 1)]
        ok = [j + 1 for j, e in enumerate(errs) if e < period_tol]
        if not ok:
            raise ConeError(f"ray sequence has not settled (smallest period mismatch {min(errs):.2e})", "nonconvergence")
        k = ok[0]
    return guess_from_ray(ss, xi, k)


def _true_times(ss, xi, k):
    return poincare_map_k(ss, xi, k)


def _count_true_crossings(ss, xi, period):
    """Number of true contact exits on ``(0, period]`` of the flow from ``xi``."""
    hor = return_horizon(ss)
    t = 0.0
    y = xi
    m = 0
    while True:
        y2, tm, tp = poincare_map(ss, y, hor)
        if t + tm + tp > period * (1 + 1e-6):
            return m
        t += tm + tp
        m += 1
        y = y2
        if m > 64:
            return m


def _canonical_start(rays):
    # the ray with the most negative first velocity component
    N = rays.shape[1] // 2
    return int(np.argmin(rays[:, N]))


def solve_k_crossing_cone(
    ss: PwlStateSpace,
    k: int,
    guess: ConeGuess | ConeSolution,
    tol: float = 1e-10,
    max_iter: int = 60,
    min_separation: float = 1e-6,
    cycle_tol: float = 1e-7,
    retries: int = 3,
) -> ConeSolution:
    """Newton solve of the k-crossing system with post-verification.

    Raises
    ------
    ConeError
        ``kind`` tells why: ``nonconvergence``, ``negative_time``,
        ``nonminimal`` (Newton's times are not first crossings of the flow;
        ``detail["true_k"]`` is the crossing count actually observed),
        ``degenerate`` (two rays coincide) or ``verification``.
    """
    if isinstance(guess, ConeSolution):
        guess = guess.as_guess()
    if guess.k != k:
        raise ValueError(f"guess carries {guess.k} crossings, k={k} requested")
    n = ss.n
    z0 = _pack(guess.xi / np.linalg.norm(guess.xi), guess.times, guess.mu)
    rng = np.random.default_rng(12345)
    fun = lambda z: cone_residual(ss, z, k)
    last = None
    for attempt in range(retries + 1):
        z, rep = newton_solve(fun, z0, tol=tol, max_iter=max_iter)
        xi, times, mu = _unpack(z, n, k)
        if rep.converged and np.all(times > 0) and mu > 0:
            break
        last = ConeError(
            f"cone Newton failed: {rep.message}" if not rep.converged else "converged to nonpositive time or multiplier",
            "nonconvergence" if not rep.converged else "negative_time",
            {"report": rep},
        )
        z0 = z0 * (1 + 1e-2 * rng.standard_normal(z0.size))
        z0[n:] = np.abs(z0[n:])
    else:
        raise last
    xi = xi / np.linalg.norm(xi)
    # verification against the event-located flow
    try:
        y, t_flow = _true_times(ss, xi, k)
    except FlowError as exc:
        raise ConeError(f"flow from the solution ray does not return: {exc}", "verification") from exc
    T = float(np.sum(times))
    if np.max(np.abs(t_flow - times)) > 1e-6 * T:
        true_k = _count_true_crossings(ss, xi, T)
        raise ConeError(
            "Newton crossing times are not the first crossings of the flow",
            "nonminimal",
            {"true_k": true_k, "newton_times": times, "flow_times": t_flow, "xi": xi, "mu": mu},
        )
    rays = [xi]
    yj = xi
    for _ in range(k - 1):
        yj, _, _ = poincare_map(ss, yj)
        yj = yj / np.linalg.norm(yj)
        rays.append(yj)
    rays = np.array(rays)
    sep = np.inf
    for i in range(k):
        for j in range(i + 1, k):
            c = np.clip(rays[i] @ rays[j], -1.0, 1.0)
            sep = min(sep, float(np.arccos(c)))
    if k > 1 and sep <= min_separation:
        raise ConeError(f"rays collapse onto a shorter cycle (separation {sep:.3e} rad)", "degenerate", {"separation": sep})
    cyc = 0.0
    for r in rays:
        yk, _ = poincare_map_k(ss, r, k)
        cyc = max(cyc, float(np.linalg.norm(yk - mu * r)))
    if cyc > cycle_tol:
        raise ConeError(f"P^k(xi_j) - mu xi_j = {cyc:.3e} exceeds {cycle_tol:g}", "verification", {"cycle_error": cyc})
    s = _canonical_start(rays) if k > 1 else 0
    rays = np.roll(rays, -s, axis=0)
    times = np.roll(times, -2 * s)
    res = float(np.max(np.abs(cone_residual(ss, _pack(rays[0], times, mu), k))))
    diag = {"ray_separation": sep, "cycle_error": cyc, "flow_times": np.roll(t_flow, -2 * s)}
    return ConeSolution(k, rays, times, float(mu), res, rep, diag)


def solve_elementary_cone(ss: PwlStateSpace, guess: ConeGuess | ConeSolution | None = None, **kw) -> ConeSolution:
    """k = 1 cone; the default guess comes from the first averaged linear mode."""
    if guess is None:
        guess = guess_from_linear_mode(ss, 0)
    sol = solve_k_crossing_cone(ss, 1, guess, **kw)
    y, _, _ = poincare_map(ss, sol.xi)
    err = float(np.linalg.norm(y - sol.mu * sol.xi))
    if err > 1e-8:
        raise ConeError(f"P(xi) - mu xi = {err:.3e}", "verification")
    return sol


def solve_ray_fixed_point(ss: PwlStateSpace, xi0, k: int = 1, tol: float = 1e-12, max_iter: int = 40) -> ConeGuess:
    """Fixed ray of the event-located map ``P^k``.

    Unlike :func:`cone_residual`, every evaluation uses first crossings, so
    the result cannot skip a contact episode. The residual is the
    in-section part of ``P^k(xi) - mu xi`` plus the section and norm
    conditions.
    """
    nex = ss.n_exit
    # orthonormal basis of the section hyperplane
    Q = np.linalg.svd(nex[None, :])[2][1:]
    n = ss.n

    def fun(z):
        xi, mu = z[:n], z[n]
        y, _ = poincare_map_k(ss, xi, k)
        return np.concatenate([Q @ (y - mu * xi), [nex @ xi, xi @ xi - 1.0]])

    xi0 = project_to_section(ss, xi0)
    xi0 = xi0 / np.linalg.norm(xi0)
    y, _ = poincare_map_k(ss, xi0, k)
    z, rep = newton_solve(fun, np.r_[xi0, np.linalg.norm(y)], tol=tol, max_iter=max_iter)
    if not rep.converged:
        raise ConeError(f"ray fixed-point iteration failed: {rep.message}", "nonconvergence", {"report": rep})
    xi = z[:n]
    _, times = poincare_map_k(ss, xi, k)
    return ConeGuess(xi, times, float(z[n]))


def solve_cone(ss: PwlStateSpace, guess: ConeGuess | ConeSolution | None = None, max_k: int = 8, **kw) -> ConeSolution:
    """Solve for a cone, adapting the crossing count to the flow.

    When Newton's crossings turn out not to be first crossings, the ray is
    re-solved as a fixed point of ``P^m`` with ``m`` the number of contact
    episodes the flow shows over one cycle, then polished.
    """
    if guess is None:
        guess = guess_from_linear_mode(ss, 0)
    if isinstance(guess, ConeSolution):
        guess = guess.as_guess()
    try:
        return solve_k_crossing_cone(ss, guess.k, guess, **kw)
    except ConeError as exc:
        if exc.kind != "nonminimal":
            raise
        true_k = int(exc.detail["true_k"])
        if not 1 <= true_k <= max_k:
            raise
        last = exc
        # seeds: the caller's ray, its image under P^m, then Newton's ray
        seeds = [guess.xi]
        try:
            y, _ = poincare_map_k(ss, guess.xi, true_k)
            seeds.append(y / np.linalg.norm(y))
        except FlowError:
            pass
        seeds.append(exc.detail["xi"])
        for seed in seeds:
            try:
                g = solve_ray_fixed_point(ss, seed, true_k)
                return solve_k_crossing_cone(ss, true_k, g, **kw)
            except (ConeError, FlowError) as exc2:
                last = exc2
        raise last


def attractivity(ss: PwlStateSpace, sol: ConeSolution, marginal_tol: float = 1e-6) -> AttractivityReport:
    """Spectrum of ``D P^k`` at ``xi_1`` without the zero and the ``mu`` eigenvalue."""
    J = poincare_jacobian(ss, sol.xi, sol.k)
    sp = eigen_spectrum(J, vectors=True)
    lam, V = sp.values, sp.vectors
    iz = int(np.argmin(np.abs(lam)))
    align = np.abs(V.conj().T @ sol.xi) / np.linalg.norm(V, axis=0)
    align[iz] = -1
    imu = int(np.argmax(align))
    keep = [i for i in range(lam.size) if i not in (iz, imu)]
    rest = lam[keep]
    bound = min(1.0, sol.mu)
    mags = np.abs(rest)
    ambiguous = bool(np.any(np.abs(rest - sol.mu) < 1e-6))
    attractive = bool(np.all(mags < bound)) if rest.size else True
    marginal = bool(np.any(np.abs(mags - bound) <= marginal_tol)) if rest.size else False
    msg = ""
    if ambiguous:
        msg = "a retained eigenvalue lies within 1e-6 of mu; identification is ambiguous"
    elif marginal:
        msg = "spectrum touches min(1, mu); attractivity is marginal"
    return AttractivityReport(rest, attractive, marginal, ambiguous, lam[iz], lam[imu], msg)


def continue_cone(
    make_ss: Callable[[float], PwlStateSpace],
    values: Sequence[float],
    guess: ConeGuess | ConeSolution,
    min_step: float = 1e-6,
    solver: Callable | None = None,
) -> list[tuple[float, ConeSolution]]:
    """Natural-parameter continuation; a failing step is bisected.

    ``values`` are visited in order; intermediate points inserted by the
    bisection are solved but not returned.
    """
    solver = solver or (lambda ss, g: solve_k_crossing_cone(ss, g.k, g))
    out = []
    cur = guess
    a = None
    for target in map(float, values):
        if a is None:
            cur = solver(make_ss(target), cur)
            a = target
            out.append((target, cur))
            continue
        step = target - a
        while True:
            nxt = target if abs(target - a) <= abs(step) else a + step
            try:
                sol = solver(make_ss(nxt), cur)
            except (ConeError, FlowError) as exc:
                if abs(step) < min_step:
                    raise ConeError(f"continuation stalled at {a:.9g} (step {step:.3e}): {exc}") from exc
                step *= 0.5
                continue
            cur, a = sol, nxt
            if nxt == target:
                break
            step *= 2.0
        out.append((target, cur))
    return out


@dataclass
class FspPoint:
    kn_over_k: float
    omega: float
    mu: float
    T: float
    solution: ConeSolution


def fsp_sweep(
    factory: Callable[[float], MechanicalSystem],
    kn_values: Sequence[float],
    guess: ConeGuess | ConeSolution | None = None,
    mu_tol: float = 1e-8,
) -> list[FspPoint]:
    """Frequency of the elementary cone along a sequence of contact stiffnesses.

    The system must be conservative; ``|mu - 1| <= mu_tol`` is checked at
    every point. ``factory`` receives ``k_n/k`` (``k = 1`` in the
    benchmark scaling).
    """
    make_ss = lambda kn: assemble_state_space(factory(kn))
    if guess is None:
        guess = guess_from_linear_mode(make_ss(kn_values[0]), 0)
    branch = continue_cone(make_ss, kn_values, guess)
    pts = []
    for kn, sol in branch:
        if abs(sol.mu - 1) > mu_tol:
            raise ConeError(f"|mu - 1| = {abs(sol.mu - 1):.3e} at k_n = {kn:g}; sweep needs a conservative system")
        pts.append(FspPoint(kn, sol.omega, sol.mu, sol.T, sol))
    return pts


def write_fsp_csv(points: Sequence[FspPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["kn_over_k", "omega", "mu", "T"])
        for p in points:
            wr.writerow([f"{p.kn_over_k:.17g}", f"{p.omega:.17g}", f"{p.mu:.17g}", f"{p.T:.17g}"])


def save_cone_solution(sol: ConeSolution, path) -> None:
    """JSON ``{k, xi1, times, mu, residual}`` plus the derived rays."""
    data = {
        "k": sol.k,
        "xi1": sol.xi.tolist(),
        "times": sol.times.tolist(),
        "mu": sol.mu,
        "residual": sol.residual_norm,
        "T": sol.T,
        "omega": sol.omega,
        "rays": sol.xi_rays.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_cone_solution(path) -> ConeSolution:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    k = int(d["k"])
    rays = np.asarray(d.get("rays", [d["xi1"]]), dtype=float).reshape(-1, len(d["xi1"]))
    return ConeSolution(k, rays, np.asarray(d["times"], float), float(d["mu"]), float(d["residual"]))


def cone_orbit(ss: PwlStateSpace, sol: ConeSolution, per_segment: int = 400):
    """Exact samples of one cycle started at ``xi_1``.

    Returns
    -------
    t : ndarray, shape (m,)
    X : ndarray, shape (n, m)
        States from ``xi_1`` to ``mu * xi_1`` (both ends included).
    modes : ndarray of int
        +1 on contact segments, -1 otherwise.
    """
    y = sol.xi.copy()
    t0 = 0.0
    ts, xs, ms = [], [], []
    for j, tj in enumerate(sol.times):
        A = ss.A_minus if j % 2 == 0 else ss.A_plus
        s = np.linspace(0.0, tj, per_segment, endpoint=False)
        h = tj / per_segment
        E = matrix_exponential(A, h)
        seg = np.empty((ss.n, per_segment))
        z = y.copy()
        for i in range(per_segment):
            seg[:, i] = z
            z = E @ z
        ts.append(t0 + s)
        xs.append(seg)
        ms.append(np.full(per_segment, -1 if j % 2 == 0 else 1))
        y = matrix_exponential(A, tj) @ y
        t0 += tj
    ts.append([t0])
    xs.append(y[:, None])
    ms.append([-1])
    return np.concatenate(ts), np.hstack(xs), np.concatenate(ms)
