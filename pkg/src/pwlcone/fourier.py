"""Real truncated Fourier series stored as ``[a0, a1..aN, b1..bN]`` rows.

``f(phi) = a0 + sum_k a_k cos(k phi) + b_k sin(k phi)``.
"""
from __future__ import annotations

import numpy as np

__all__ = ["n_coeffs", "basis", "evaluate", "derivative", "fit_uniform", "fit_scattered"]


def n_coeffs(N: int) -> int:
    return 2 * N + 1


def basis(N: int, phi) -> np.ndarray:
    """Trigonometric design matrix, shape ``(len(phi), 2N+1)``."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    k = np.arange(1, N + 1)
    kp = np.outer(phi, k)
    return np.hstack([np.ones((phi.size, 1)), np.cos(kp), np.sin(kp)])


def evaluate(C, phi) -> np.ndarray:
    """Evaluate every row of ``C`` (shape (d, 2N+1)) at ``phi``; returns (d, m)."""
    C = np.atleast_2d(C)
    N = (C.shape[1] - 1) // 2
    return C @ basis(N, phi).T


def derivative(C) -> np.ndarray:
    """Coefficients of ``d/dphi`` of each row."""
    C = np.atleast_2d(C)
    N = (C.shape[1] - 1) // 2
    k = np.arange(1, N + 1)
    D = np.zeros_like(C)
    D[:, 1:N + 1] = C[:, N + 1:] * k
    D[:, N + 1:] = -C[:, 1:N + 1] * k
    return D


def fit_uniform(values, N: int) -> np.ndarray:
    """Project samples on ``phi_i = 2 pi i / M`` onto harmonics ``0..N``.

    ``values`` has shape (d, M) with ``M >= 2N+1``. This is the discrete
    Galerkin projection (exact interpolation when ``M = 2N+1``).
    """
    values = np.atleast_2d(values)
    M = values.shape[1]
    if M < 2 * N + 1:
        raise ValueError(f"need at least {2 * N + 1} samples, got {M}")
    F = np.fft.rfft(values, axis=1) / M
    C = np.zeros((values.shape[0], 2 * N + 1))
    C[:, 0] = F[:, 0].real
    k = np.arange(1, N + 1)
    scale = np.where(2 * k == M, 1.0, 2.0)
    C[:, 1:N + 1] = scale * F[:, k].real
    C[:, N + 1:] = -scale * F[:, k].imag
    return C


def fit_scattered(phi, values, N: int) -> np.ndarray:
    """Least-squares fit of scattered samples, ``values`` shape (d, m)."""
    B = basis(N, phi)
    sol, *_ = np.linalg.lstsq(B, np.atleast_2d(values).T, rcond=None)
    return sol.T
