"""Homogeneous piecewise-linear oscillators with one unilateral support.

The mechanical model is ``M q'' + C q' + K q = w lam`` with the support
force ``-lam = k_n g + c_n g'`` acting only while the support is engaged,
``g = w^T q`` being the penetration. In first-order form ``x = [q; q']``
the flow is linear on each side of the switching boundaries

* ``h_alpha(x) = w^T q`` (position based, contact starts at ``g = 0``)
* ``h_beta(x) = k_n w^T q + c_n w^T q'`` (force based, contact ends when
  the support would have to pull).
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MechanicalSystem",
    "PwlStateSpace",
    "Region",
    "NoSlidingReport",
    "assemble_state_space",
    "switching_values",
    "classify_region",
    "vector_field",
    "vector_field_batch",
    "no_sliding_diagnostics",
    "load_system",
    "save_system",
    "system_to_dict",
    "system_from_dict",
]

REL_TOL = 1e-12
ABS_FLOOR = 1e-290


def _sym(A, name, tol=1e-12):
    if not np.allclose(A, A.T, rtol=0, atol=tol * max(1.0, np.abs(A).max())):
        raise ValueError(f"{name} must be symmetric")


def _spd(A, name):
    _sym(A, name)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None


@dataclass(frozen=True, eq=False)
class MechanicalSystem:
    """Second-order data of the oscillator.

    Attributes
    ----------
    M, C, K : ndarray, shape (N, N)
        Mass (SPD), damping (symmetric) and stiffness (SPD).
    w : ndarray, shape (N,)
        Direction of the support force, nonzero.
    k_n, c_n : float
        Contact stiffness and damping, both nonnegative.
    """

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    w: np.ndarray
    k_n: float = 0.0
    c_n: float = 0.0

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float)).ravel()
        N = M.shape[0]
        for name, A in (("M", M), ("C", C), ("K", K)):
            if A.shape != (N, N):
                raise ValueError(f"{name} must be {N}x{N}, got {A.shape}")
            if not np.all(np.isfinite(A)):
                raise ValueError(f"{name} has non-finite entries")
        if w.shape != (N,):
            raise ValueError(f"w must have length {N}, got {w.shape[0]}")
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) == 0:
            raise ValueError("w must be finite and nonzero")
        _spd(M, "M")
        _spd(K, "K")
        _sym(C, "C")
        k_n, c_n = float(self.k_n), float(self.c_n)
        if not (np.isfinite(k_n) and k_n >= 0):
            raise ValueError("k_n must be a finite nonnegative number")
        if not (np.isfinite(c_n) and c_n >= 0):
            raise ValueError("c_n must be a finite nonnegative number")
        for name, val in (("M", M), ("C", C), ("K", K), ("w", w), ("k_n", k_n), ("c_n", c_n)):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def N(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True, eq=False)
class PwlStateSpace:
    """First-order matrices and switching normals (state dimension ``n = 2N``)."""

    A_minus: np.ndarray
    A_plus: np.ndarray
    n_alpha: np.ndarray
    n_beta: np.ndarray
    k_n: float
    c_n: float

    @property
    def n(self) -> int:
        return self.A_minus.shape[0]

    @property
    def N(self) -> int:
        return self.n // 2

    @property
    def n_exit(self) -> np.ndarray:
        """Unit normal of the contact exit boundary.

        ``n_beta`` when the support is damped, ``n_alpha`` otherwise (the
        two boundaries coincide for ``c_n = 0``).
        """
        nrm = self.n_beta if self.c_n > 0 else self.n_alpha
        return nrm / np.linalg.norm(nrm)

    @property
    def contact_correction(self) -> np.ndarray:
        return self.A_plus - self.A_minus


class Region(enum.Enum):
    ContactPlus = "V+"
    NoContactMinus = "V-"
    SigmaAlpha = "Sigma_alpha"
    SigmaBeta = "Sigma_beta"
    Origin = "origin"


def assemble_state_space(sys: MechanicalSystem) -> PwlStateSpace:
    """Build ``A-``, ``A+`` and the switching normals."""
    N = sys.N
    try:
        Minv = np.linalg.inv(sys.M)
    except np.linalg.LinAlgError:
        raise ValueError("mass matrix is singular") from None
    ww = np.outer(sys.w, sys.w)
    Z = np.zeros((N, N))
    I = np.eye(N)
    Am = np.block([[Z, I], [-Minv @ sys.K, -Minv @ sys.C]])
    Ap = np.block([[Z, I], [-Minv @ (sys.K + sys.k_n * ww), -Minv @ (sys.C + sys.c_n * ww)]])
    n_alpha = np.concatenate([sys.w, np.zeros(N)])
    n_beta = np.concatenate([sys.k_n * sys.w, sys.c_n * sys.w])
    for a in (Am, Ap, n_alpha, n_beta):
        a.setflags(write=False)
    return PwlStateSpace(Am, Ap, n_alpha, n_beta, sys.k_n, sys.c_n)


def switching_values(ss: PwlStateSpace, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(ss.n_alpha @ x), float(ss.n_beta @ x)


def _tolerances(ss, xnorm):
    tau = REL_TOL * xnorm
    return tau * np.linalg.norm(ss.n_alpha), tau * max(np.linalg.norm(ss.n_beta), 1.0)


def classify_region(ss: PwlStateSpace, x) -> Region:
    """Region of ``x`` with boundary tolerance relative to ``|x|``."""
    x = np.asarray(x, dtype=float)
    xn = np.linalg.norm(x)
    if xn <= ABS_FLOOR:
        return Region.Origin
    ha, hb = switching_values(ss, x)
    ta, tb = _tolerances(ss, xn)
    if ha > ta and hb > tb:
        return Region.ContactPlus
    if ha < -ta or hb < -tb:
        return Region.NoContactMinus
    if abs(ha) <= ta:
        return Region.SigmaAlpha
    return Region.SigmaBeta


def _contact_mask(ss, X):
    """Boolean mask of columns of ``X`` (shape (n, m)) evaluated with ``A+``."""
    xn = np.linalg.norm(X, axis=0)
    ta, tb = _tolerances(ss, xn)
    ha = ss.n_alpha @ X
    hb = ss.n_beta @ X
    plus = (ha > ta) & (hb > tb)
    on_alpha = (np.abs(ha) <= ta) & (hb >= -tb)
    rate = ss.n_alpha @ (ss.A_minus @ X)
    plus |= on_alpha & (rate > 0)
    on_beta = (np.abs(hb) <= tb) & (ha > ta)
    plus |= on_beta
    return plus


def vector_field(ss: PwlStateSpace, x) -> np.ndarray:
    """Piecewise-linear field ``F(x)``.

    On ``Sigma_alpha`` the destination mode is used, selected by the sign
    of ``w^T q'``; on ``Sigma_beta`` the field is continuous.
    """
    x = np.asarray(x, dtype=float)
    use_plus = _contact_mask(ss, x[:, None])[0]
    return (ss.A_plus if use_plus else ss.A_minus) @ x


def vector_field_batch(ss: PwlStateSpace, X) -> np.ndarray:
    """Field at each column of ``X`` (shape (n, m))."""
    X = np.asarray(X, dtype=float)
    mask = _contact_mask(ss, X)
    return np.where(mask, ss.A_plus @ X, ss.A_minus @ X)


@dataclass(frozen=True)
class NoSlidingReport:
    boundary: Region
    projection_minus: float
    projection_plus: float
    field_jump: float
    continuous_across_beta: bool
    grazing: bool


def no_sliding_diagnostics(ss: PwlStateSpace, x, grazing_tol: float = 1e-12) -> NoSlidingReport:
    """Check the crossing structure at a boundary state.

    On ``Sigma_alpha`` both fields have the same normal component
    ``w^T q'``, so trajectories cross and never slide. On ``Sigma_beta``
    the two fields coincide.
    """
    x = np.asarray(x, dtype=float)
    reg = classify_region(ss, x)
    if reg not in (Region.SigmaAlpha, Region.SigmaBeta):
        raise ValueError(f"state is not on a switching boundary (region {reg.value})")
    fm = ss.A_minus @ x
    fp = ss.A_plus @ x
    jump = float(np.linalg.norm(fp - fm))
    xn = np.linalg.norm(x)
    if reg is Region.SigmaAlpha:
        pm, pp = float(ss.n_alpha @ fm), float(ss.n_alpha @ fp)
        nrm = ss.n_beta if ss.c_n > 0 else ss.n_alpha
        cont = bool(abs(nrm @ x) <= REL_TOL * xn * max(np.linalg.norm(nrm), 1.0) and jump <= REL_TOL * xn * max(1.0, np.abs(ss.contact_correction).max()))
        graze = abs(pm) <= grazing_tol * xn
    else:
        pm, pp = float(ss.n_beta @ fm), float(ss.n_beta @ fp)
        cont = jump <= REL_TOL * xn * max(1.0, np.abs(ss.contact_correction).max())
        graze = abs(pm) <= grazing_tol * xn * np.linalg.norm(ss.n_beta)
    return NoSlidingReport(reg, pm, pp, jump, cont, bool(graze))


def system_to_dict(sys: MechanicalSystem) -> dict:
    return {
        "N": sys.N,
        "M": sys.M.tolist(),
        "C": sys.C.tolist(),
        "K": sys.K.tolist(),
        "w": sys.w.tolist(),
        "k_n": sys.k_n,
        "c_n": sys.c_n,
    }


def system_from_dict(d: dict) -> MechanicalSystem:
    missing = {"N", "M", "C", "K", "w", "k_n", "c_n"} - set(d)
    if missing:
        raise ValueError(f"system definition lacks fields: {sorted(missing)}")
    N = int(d["N"])
    if N < 1:
        raise ValueError("N must be a positive integer")

    def mat(key):
        A = np.asarray(d[key], dtype=float)
        if A.size != N * N:
            raise ValueError(f"{key} must hold {N * N} entries, got {A.size}")
        return A.reshape(N, N)

    w = np.asarray(d["w"], dtype=float).ravel()
    if w.size != N:
        raise ValueError(f"w must have length N={N}, got {w.size}")
    return MechanicalSystem(mat("M"), mat("C"), mat("K"), w, float(d["k_n"]), float(d["c_n"]))


def load_system(path) -> MechanicalSystem:
    """Read a JSON system definition ``{N, M, C, K, w, k_n, c_n}``."""
    with open(Path(path), encoding="utf-8") as fh:
        return system_from_dict(json.load(fh))


def save_system(sys: MechanicalSystem, path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(system_to_dict(sys), fh, indent=2)
        fh.write("\n")
