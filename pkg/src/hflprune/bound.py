"""Convergence upper bound for hierarchical training with pruning.

The bound is ``2 (F(w0) - F*) / (Q W eta E T) + H1 + H2 * sum(rho)``, where
the sum runs over every device and edge round of the run.  Only the last
term depends on the pruning ratios, which is why the allocator minimizes
the ratio sum.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BoundParams:
    L: float
    D: float
    phi: float
    sigma_hat: float
    gamma_star: int
    eta: float
    Q: int
    E: int
    T: int
    N: int
    W: int
    F0_minus_Fstar: float

    def __post_init__(self):
        if min(self.L, self.eta, self.Q, self.E, self.T, self.N, self.W) <= 0:
            raise ValueError("L, eta, Q, E, T, N and W must be positive")
        if min(self.D, self.phi, self.sigma_hat, self.F0_minus_Fstar) < 0:
            raise ValueError("D, phi, sigma_hat and F0_minus_Fstar must be nonnegative")
        if not 1 <= self.gamma_star <= self.N:
            raise ValueError(f"gamma_star must lie in [1, N={self.N}], got {self.gamma_star}")

    def to_dict(self) -> dict:
        return asdict(self)


def h1(p: BoundParams) -> float:
    L, eta, T, E, W, N = p.L, p.eta, p.T, p.E, p.W, p.N
    phi2, sig2 = p.phi**2, p.sigma_hat**2
    inner = phi2 * N * eta**2 * T**2 * L**3 + 3 * L * W * eta * E * T * N * sig2 + 3 * W * E * L**3 * T**3 * eta**3 * phi2 * N
    return 3 * L * eta * T * E * W * phi2 + inner / p.gamma_star


def h2(p: BoundParams) -> float:
    return (2 * p.E * p.L**2 + 6 * p.W * p.eta * p.L**3 * p.D**2 * p.T) / p.gamma_star


def initial_gap_term(p: BoundParams) -> float:
    return 2 * p.F0_minus_Fstar / (p.Q * p.W * p.eta * p.E * p.T)


def bound_terms(p: BoundParams, rho_sum: float) -> dict[str, float]:
    if rho_sum < 0:
        raise ValueError("the pruning-ratio sum cannot be negative")
    first, a, b = initial_gap_term(p), h1(p), h2(p)
    return {
        "initial_gap": first,
        "h1": a,
        "h2": b,
        "pruning": b * rho_sum,
        "total": first + a + b * rho_sum,
    }


def bound_value(p: BoundParams, rho_sum: float) -> float:
    return bound_terms(p, rho_sum)["total"]


def gamma_star(min_occurrences: Sequence[int]) -> int:
    """Smallest positive per-round occurrence count over a run."""
    positive = [int(c) for c in min_occurrences if c > 0]
    if not positive:
        raise ValueError("no round recorded a positive occurrence count")
    return min(positive)


def estimate_constants(net, weights, data, masks=(), samples: int = 8, batch_size: int = 32, seed: int = 0) -> dict[str, float]:
    """Rough empirical stand-ins for L, phi, sigma_hat and D.

    Diagnostic only; the bound treats these as analytic constants.

    * ``L``: largest ``|grad(a) - grad(b)| / |a - b|`` over random
      perturbation pairs around each weight vector.
    * ``phi``: root of the largest observed squared minibatch gradient norm.
    * ``sigma_hat``: root of the mean squared deviation of minibatch
      gradients from the full gradient.
    * ``D``: root of the largest ``|w - w*m|^2 / rho`` over the given masks.
    """
    rng = np.random.default_rng(seed)
    L = 0.0
    phi2 = 0.0
    var = []
    for w in weights:
        _, full = net.loss_and_grad(w, data.x, data.y)
        for _ in range(samples):
            idx = rng.choice(len(data), size=min(batch_size, len(data)), replace=False)
            _, g = net.loss_and_grad(w, data.x[idx], data.y[idx])
            phi2 = max(phi2, float(g @ g))
            var.append(float(np.sum((g - full) ** 2)))
            step = rng.normal(scale=1e-3, size=w.values.shape)
            _, g2 = net.loss_and_grad(w.with_values(w.values + step), data.x, data.y)
            L = max(L, float(np.linalg.norm(g2 - full) / np.linalg.norm(step)))
    D2 = 0.0
    for w, m in masks:
        if m.ratio > 0:
            err = w.values - w.values * m.bits
            D2 = max(D2, float(err @ err) / m.ratio)
    return {
        "L": L,
        "phi": float(np.sqrt(phi2)),
        "sigma_hat": float(np.sqrt(np.mean(var))) if var else 0.0,
        "D": float(np.sqrt(D2)),
    }
