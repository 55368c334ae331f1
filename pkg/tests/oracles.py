"""Independent closed-form references used by the tests."""

import numpy as np


def blake_stokeslet(x: np.ndarray, h: float) -> np.ndarray:
    """Velocity tensor G[i, j] (..., unit viscosity) of a point force e_j at (0, 0, h) above the no-slip wall z = 0.

    Image system of a Stokeslet, a Stokes doublet and a source dipole; x has shape (3, ...).
    """
    x = np.asarray(x, dtype=float)
    r = x.copy()
    r[2] -= h
    R = x.copy()
    R[2] += h
    rn = np.sqrt((r ** 2).sum(axis=0))
    Rn = np.sqrt((R ** 2).sum(axis=0))
    eye = np.eye(3).reshape(3, 3, *([1] * (x.ndim - 1)))

    def stokeslet(v, n):
        return eye / n + np.einsum("i...,j...->ij...", v, v) / n ** 3

    e3 = np.array([0.0, 0.0, 1.0]).reshape(3, *([1] * (x.ndim - 1)))
    dH = (h * (eye / Rn ** 3 - 3 * np.einsum("i...,k...->ik...", R, R) / Rn ** 5)
          + np.einsum("i...,k...->ik...", e3, R) / Rn ** 3
          - (eye * R[2] + np.einsum("i...,k...->ik...", R, e3)) / Rn ** 3
          + 3 * np.einsum("i...,k...->ik...", R, R) * R[2] / Rn ** 5)
    D = np.diag([1.0, 1.0, -1.0])
    G = stokeslet(r, rn) - stokeslet(R, Rn) + 2 * h * np.einsum("jk,ik...->ij...", D, dH)
    return G / (8 * np.pi)


def blake_pressure(x: np.ndarray, h: float) -> np.ndarray:
    """Pressure P[j] (...) matching :func:`blake_stokeslet`."""
    x = np.asarray(x, dtype=float)
    r = x.copy()
    r[2] -= h
    R = x.copy()
    R[2] += h
    rn = np.sqrt((r ** 2).sum(axis=0))
    Rn = np.sqrt((R ** 2).sum(axis=0))
    e3 = np.array([0.0, 0.0, 1.0]).reshape(3, *([1] * (x.ndim - 1)))
    dq = e3 / Rn ** 3 - 3 * R[2] * R / Rn ** 5
    D = np.array([1.0, 1.0, -1.0]).reshape(3, *([1] * (x.ndim - 1)))
    return (r / rn ** 3 - R / Rn ** 3 - 2 * h * D * dq) / (4 * np.pi)


def periodic_images(fn, x: np.ndarray, h: float, period: float, count: int = 40) -> np.ndarray:
    """Sum of fn(x - image shift) over the lateral lattice period * Z^2, |index| <= count."""
    x = np.asarray(x, dtype=float)
    tot = 0.0
    for a in range(-count, count + 1):
        for b in range(-count, count + 1):
            s = np.array([a * period, b * period, 0.0]).reshape(3, *([1] * (x.ndim - 1)))
            tot = tot + fn(x - s, h)
    return tot
