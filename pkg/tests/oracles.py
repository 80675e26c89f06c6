"""Independent reference computations used only by the tests."""

from __future__ import annotations

import mpmath
import numpy as np


def rk4_survival(hamiltonian: np.ndarray, t_out: np.ndarray, step: float) -> np.ndarray:
    """p(t) from fixed-step RK4 integration of i dpsi/dt = H psi, psi(0) = e_0.

    Each output time is reached with an integer number of equal steps no
    longer than ``step``.
    """
    h = np.asarray(hamiltonian, dtype=complex)
    psi = np.zeros(h.shape[0], dtype=complex)
    psi[0] = 1.0
    out = np.empty(len(t_out))
    t_now = 0.0
    for i, target in enumerate(t_out):
        span = target - t_now
        n = max(int(np.ceil(span / step - 1e-12)), 0)
        if n:
            dt = span / n
            for _ in range(n):
                k1 = -1j * (h @ psi)
                k2 = -1j * (h @ (psi + 0.5 * dt * k1))
                k3 = -1j * (h @ (psi + 0.5 * dt * k2))
                k4 = -1j * (h @ (psi + dt * k3))
                psi = psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_now = target
        out[i] = abs(psi[0]) ** 2
    return out


def bessel_j1_series(x: float, digits: int = 60) -> float:
    """J_1(x) = sum_m (-1)^m (x/2)^(2m+1) / (m! (m+1)!), summed in extended precision."""
    with mpmath.workdps(digits + int(abs(x)) // 2):
        half = mpmath.mpf(x) / 2
        term = half
        total = term
        m = 0
        sq = half * half
        while True:
            m += 1
            term = -term * sq / (m * (m + 1))
            total += term
            if abs(term) < mpmath.mpf(10) ** (-digits) * max(abs(total), mpmath.mpf(10) ** -30) and m > x:
                break
        return float(total)


def uniform_chain_survival(kappa: float, t: np.ndarray) -> np.ndarray:
    """(J_1(2 kappa t) / (kappa t))^2, with the t = 0 limit 1."""
    out = np.empty(len(t))
    for i, ti in enumerate(t):
        if ti == 0:
            out[i] = 1.0
        else:
            out[i] = (bessel_j1_series(2 * kappa * ti) / (kappa * ti)) ** 2
    return out
