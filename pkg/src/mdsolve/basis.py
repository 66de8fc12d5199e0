"""One-dimensional Gauss-Legendre collocation data for the DGSEM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def legendre(n: int, x):
    """Return (P_n(x), P_n'(x)) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def gauss_legendre(n_points: int, tol: float = 1e-15, max_iter: int = 100):
    """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].

    Newton's method on P_n started from the Chebyshev-like guess
    cos(pi (k - 1/4) / (n + 1/2)).
    """
    if n_points < 1:
        raise ValueError("need at least one quadrature point")
    if n_points == 1:
        return np.zeros(1), np.full(1, 2.0)
    k = np.arange(1, n_points + 1)
    x = np.cos(np.pi * (k - 0.25) / (n_points + 0.5))
    for _ in range(max_iter):
        p, dp = legendre(n_points, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    _, dp = legendre(n_points, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    # ascending order, symmetrized
    x = x[::-1].copy()
    w = w[::-1].copy()
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return x, w


def barycentric_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def lagrange_at(nodes, x):
    """Values ell_i(x) of all Lagrange polynomials at a single point x."""
    nodes = np.asarray(nodes, dtype=float)
    hit = np.isclose(x, nodes, rtol=0.0, atol=1e-15)
    if hit.any():
        out = np.zeros_like(nodes)
        out[np.argmax(hit)] = 1.0
        return out
    bw = barycentric_weights(nodes)
    t = bw / (x - nodes)
    return t / t.sum()


def differentiation_matrix(nodes):
    """Nodal differentiation matrix D with D[i, j] = ell_j'(xi_i)."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    bw = barycentric_weights(nodes)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = bw[j] / bw[i] / (nodes[i] - nodes[j])
        D[i, i] = -D[i].sum()
    return D


@dataclass(frozen=True)
class Basis:
    """Gauss-Legendre collocation basis of polynomial degree N.

    ``dhat`` is the weak-form derivative operator -M^{-1} D^T M and
    ``lhat_left``/``lhat_right`` are ell_i(-1)/w_i and ell_i(+1)/w_i.
    """

    degree: int
    nodes: np.ndarray
    weights: np.ndarray
    dmat: np.ndarray
    dhat: np.ndarray
    l_left: np.ndarray
    l_right: np.ndarray
    lhat_left: np.ndarray
    lhat_right: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.degree + 1


def build_basis(N: int) -> Basis:
    if N < 0:
        raise ValueError(f"polynomial degree must be nonnegative, got {N}")
    x, w = gauss_legendre(N + 1)
    D = differentiation_matrix(x)
    dhat = -(D.T * w[None, :]) / w[:, None]
    l_left = lagrange_at(x, -1.0)
    l_right = lagrange_at(x, 1.0)
    for arr in (x, w, D, dhat, l_left, l_right):
        arr.setflags(write=False)
    lhat_left = l_left / w
    lhat_right = l_right / w
    lhat_left.setflags(write=False)
    lhat_right.setflags(write=False)
    return Basis(N, x, w, D, dhat, l_left, l_right, lhat_left, lhat_right)
