"""Polynomial action basis for Q-functionals.

A Q-functional represents Q(s, .) as a fixed basis over the action space
whose coefficients come from a per-state network: Q(s, a) = C(s) . phi(a).
This module owns the feature map phi, its canonical monomial order, and
the sampled argmax used both for bootstrapped targets and greedy action
selection.

Canonical monomial order, used everywhere: total degree ascending, and
within a degree, lexicographic by variable index (the order produced by
itertools.combinations_with_replacement). For order=2, dim=2 the feature
vector reads [1, a1, a2, a1^2, a1*a2, a2^2].

Features are computed on actions normalized to [-1, 1] per dimension for
conditioning; `argmax_sampled` handles the mapping and returns raw
actions. All functions are pure and take caller-owned RNG state.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


def coefficient_count(order: int, action_dim: int) -> int:
    """Number of monomials of total degree <= order in action_dim variables."""
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if action_dim < 1:
        raise ValueError(f"action_dim must be >= 1, got {action_dim}")
    return math.comb(order + action_dim, action_dim)


@lru_cache(maxsize=None)
def monomial_exponents(order: int, action_dim: int) -> tuple[tuple[int, ...], ...]:
    """Exponent tuples of every monomial, in the canonical order.

    The first tuple is all zeros (the constant monomial), so the first
    feature is always exactly 1.
    """
    coefficient_count(order, action_dim)  # validate arguments
    exponents = []
    for degree in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(action_dim), degree):
            exp = [0] * action_dim
            for var in combo:
                exp[var] += 1
            exponents.append(tuple(exp))
    return tuple(exponents)


@dataclass(frozen=True)
class BasisSpec:
    """Basis definition; `k` (the coefficient count) is derived."""

    order: int
    action_dim: int
    family: str = "polynomial"
    k: int = field(init=False)

    def __post_init__(self) -> None:
        if self.family != "polynomial":
            raise ValueError(f"unsupported basis family: {self.family!r}")
        object.__setattr__(self, "k", coefficient_count(self.order, self.action_dim))

    @property
    def exponents(self) -> tuple[tuple[int, ...], ...]:
        return monomial_exponents(self.order, self.action_dim)


def _as_tuple(value) -> tuple[float, ...]:
    if np.isscalar(value):
        return (float(value),)
    return tuple(float(v) for v in value)


@dataclass(frozen=True)
class ActionBounds:
    """Per-dimension action interval, e.g. the raw threshold range [20, 50]."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "low", _as_tuple(self.low))
        object.__setattr__(self, "high", _as_tuple(self.high))
        if len(self.low) != len(self.high):
            raise ValueError("low and high must have the same dimension")
        if not all(lo < hi for lo, hi in zip(self.low, self.high)):
            raise ValueError("bounds require low < high in every dimension")

    @property
    def dim(self) -> int:
        return len(self.low)

    def normalize(self, actions):
        """Affine map of [low, high] onto [-1, 1], elementwise."""
        a = np.asarray(actions, dtype=np.float64)
        lo = np.asarray(self.low)
        hi = np.asarray(self.high)
        return 2.0 * (a - lo) / (hi - lo) - 1.0

    def denormalize(self, unit_actions):
        u = np.asarray(unit_actions, dtype=np.float64)
        lo = np.asarray(self.low)
        hi = np.asarray(self.high)
        return lo + (u + 1.0) * 0.5 * (hi - lo)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """`count` i.i.d. uniform raw actions, shape (count, dim)."""
        if count < 1:
            raise ValueError(f"sample count must be >= 1, got {count}")
        return rng.uniform(self.low, self.high, size=(count, self.dim))


def features_matrix(actions, spec: BasisSpec) -> np.ndarray:
    """Feature rows for a batch of actions: shape (M, k), column j the j-th monomial."""
    a = np.asarray(actions, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != spec.action_dim:
        raise ValueError(
            f"expected actions of shape (M, {spec.action_dim}), got {a.shape}"
        )
    if not np.all(np.isfinite(a)):
        raise ValueError("action entries must be finite")
    exps = np.asarray(spec.exponents, dtype=np.int64)  # (k, dim)
    # 0**0 == 1, so the constant column is exactly 1 regardless of the action.
    return np.prod(a[:, None, :] ** exps[None, :, :], axis=2)


def action_features(action, spec: BasisSpec) -> np.ndarray:
    """Monomials of a single action in canonical order; first entry is exactly 1."""
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (spec.action_dim,):
        raise ValueError(f"expected action of shape ({spec.action_dim},), got {a.shape}")
    return features_matrix(a[None, :], spec)[0]


def evaluate_q(coeffs, features) -> float:
    """Inner product C . phi(a)."""
    c = np.asarray(coeffs, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    if c.shape != f.shape or c.ndim != 1:
        raise ValueError(f"coefficient/feature length mismatch: {c.shape} vs {f.shape}")
    return float(c @ f)


def evaluate_q_batch(coeffs, feature_matrix) -> np.ndarray:
    """Q-values for M feature rows as one matrix-vector product, shape (M,)."""
    c = np.asarray(coeffs, dtype=np.float64)
    fm = np.asarray(feature_matrix, dtype=np.float64)
    if c.ndim != 1 or fm.ndim != 2 or fm.shape[1] != c.shape[0]:
        raise ValueError(f"shape mismatch: coeffs {c.shape}, features {fm.shape}")
    return fm @ c


def argmax_sampled(
    coeffs,
    spec: BasisSpec,
    bounds: ActionBounds,
    sample_count: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Best of `sample_count` uniform actions under the functional.

    Draws raw actions i.i.d. uniform on `bounds`, evaluates all of them in
    one matrix product (on normalized actions), and returns the raw action
    with maximal Q plus that Q-value. Ties go to the lowest sample index,
    so the result is deterministic given the RNG state.
    """
    if bounds.dim != spec.action_dim:
        raise ValueError(f"bounds dim {bounds.dim} != basis dim {spec.action_dim}")
    raw = bounds.sample(sample_count, rng)
    q = evaluate_q_batch(coeffs, features_matrix(bounds.normalize(raw), spec))
    best = int(np.argmax(q))
    return raw[best].copy(), float(q[best])
