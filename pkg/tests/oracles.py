"""Independent reference implementations used to pin test expectations.

Everything here is deliberately written the slow, obvious way and avoids
the package's own code paths: gradients come from finite differences on
forward passes, field arithmetic uses naive power sums and extended
Euclid, mixing weights come from explicit neighbor loops.
"""

from __future__ import annotations

import numpy as np


def fd_gradient(loss_fn, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences; loss_fn maps a flat vector to a scalar."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        step = h * max(1.0, abs(theta[j]))
        up = theta.copy()
        up[j] += step
        down = theta.copy()
        down[j] -= step
        grad[j] = (loss_fn(up) - loss_fn(down)) / (2 * step)
    return grad


def naive_poly_eval(coeffs, x: int, prime: int) -> int:
    """Power-sum evaluation: coeffs[0] + coeffs[1] x + coeffs[2] x^2 + ..."""
    total = 0
    for power, c in enumerate(coeffs):
        total = (total + c * pow(x, power, prime)) % prime
    return total


def egcd_inverse(a: int, prime: int) -> int:
    """Modular inverse via extended Euclid (not Fermat)."""
    r0, r1 = prime, a % prime
    s0, s1 = 0, 1
    while r1:
        q = r0 // r1
        r0, r1 = r1, r0 - q * r1
        s0, s1 = s1, s0 - q * s1
    if r0 != 1:
        raise ValueError("not invertible")
    return s0 % prime


def naive_reconstruct(points, prime: int) -> int:
    """Lagrange interpolation at zero over (index, value) pairs."""
    total = 0
    for i, (xi, yi) in enumerate(points):
        num, den = 1, 1
        for j, (xj, _) in enumerate(points):
            if i == j:
                continue
            num = (num * (-xj)) % prime
            den = (den * (xi - xj)) % prime
        total = (total + yi * num * egcd_inverse(den, prime)) % prime
    return total


def mixing_by_loops(agent_count: int, edges) -> np.ndarray:
    """Closed-neighborhood uniform weights built with explicit loops."""
    neighbors = {i: {i} for i in range(agent_count)}
    for a, b in edges:
        neighbors[a].add(b)
        neighbors[b].add(a)
    weights = np.zeros((agent_count, agent_count))
    for i in range(agent_count):
        for j in neighbors[i]:
            weights[i, j] = 1.0 / len(neighbors[i])
    return weights


def summed_quadratic_optimum(hessians, lin_terms) -> np.ndarray:
    """Minimizer of sum_i (1/2 th' Q_i th + b_i' th), solved directly."""
    total_q = np.sum(np.asarray(hessians, dtype=float), axis=0)
    total_b = np.sum(np.asarray(lin_terms, dtype=float), axis=0)
    return np.linalg.solve(total_q, -total_b)


def scalar_error_recursion(gamma: float, p: float, start: float, rounds: int) -> list[float]:
    """|theta_k - theta*| for 1-D gradient descent with curvature p."""
    errs = [abs(start)]
    for _ in range(rounds):
        errs.append(abs(1 - gamma * p) * errs[-1])
    return errs
