"""Proximal maps for the supported regularizers.

The non-smooth term is one of: a weighted l1 norm, the indicator of an
l2 ball, the indicator of a box, or identically zero.  ``prox`` evaluates
the map argmin_u theta*g(u) + 0.5*||omega - u||^2 in closed form;
``reference_prox`` re-solves the same problem by generic 1-D minimization
and exists only as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class L1:
    """g(x) = weight * ||x||_1."""

    weight: float

    def __post_init__(self):
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValueError(f"l1 weight must be finite and nonnegative, got {self.weight}")


@dataclass(frozen=True, eq=False)
class L2Ball:
    """Indicator of the ball {x : ||x - center|| <= radius}."""

    radius: float
    center: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"ball radius must be finite and positive, got {self.radius}")
        center = np.asarray(self.center, dtype=np.float64)
        if not np.all(np.isfinite(center)):
            raise ValueError("ball center must be finite")
        object.__setattr__(self, "center", center)


@dataclass(frozen=True, eq=False)
class Box:
    """Indicator of the box {x : lower <= x <= upper} (componentwise)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        if lower.shape != upper.shape:
            raise ValueError("box bounds must have the same shape")
        if not np.all(lower <= upper):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


@dataclass(frozen=True)
class Zero:
    """g identically zero."""


Regularizer = Union[L1, L2Ball, Box, Zero]


def _check_inputs(theta: float, omega: np.ndarray) -> np.ndarray:
    if not (np.isfinite(theta) and theta >= 0):
        raise ValueError(f"prox parameter must be finite and nonnegative, got {theta}")
    omega = np.asarray(omega, dtype=np.float64)
    if not np.all(np.isfinite(omega)):
        raise ValueError("prox input must be finite")
    return omega


def prox(g: Regularizer, theta: float, omega: np.ndarray) -> np.ndarray:
    """Evaluate argmin_u theta*g(u) + 0.5*||omega - u||^2.

    ``omega`` may be a single vector or a 2-D array of stacked row vectors;
    the map is applied blockwise to each row.  For indicator regularizers the
    result is the Euclidean projection, also when ``theta == 0`` so that the
    output is always feasible.
    """
    omega = _check_inputs(theta, omega)
    if isinstance(g, Zero):
        return omega.copy()
    if isinstance(g, L1):
        tau = theta * g.weight
        return np.sign(omega) * np.maximum(np.abs(omega) - tau, 0.0)
    if isinstance(g, Box):
        return np.clip(omega, g.lower, g.upper)
    if isinstance(g, L2Ball):
        y = omega - g.center
        norms = np.linalg.norm(y, axis=-1, keepdims=True)
        scale = np.ones_like(norms)
        np.divide(g.radius, norms, out=scale, where=norms > g.radius)
        return g.center + y * scale
    raise TypeError(f"unsupported regularizer {type(g).__name__}")


def subgradient_bound(g: Regularizer, dim: int) -> float:
    """Uniform bound on ||s|| over all subgradients s of g, or inf.

    The l1 norm has every subgradient component in [-1, 1], hence the bound
    weight*sqrt(dim).  Indicator functions have unbounded subdifferentials at
    the boundary and return inf.
    """
    if isinstance(g, Zero):
        return 0.0
    if isinstance(g, L1):
        return g.weight * math.sqrt(dim)
    if isinstance(g, (L2Ball, Box)):
        return math.inf
    raise TypeError(f"unsupported regularizer {type(g).__name__}")


def _golden_section(fun, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Vectorized golden-section minimization of a unimodal 1-D objective."""
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a = np.asarray(lo, dtype=np.float64).copy()
    b = np.asarray(hi, dtype=np.float64).copy()
    width = float(np.max(b - a, initial=0.0))
    if width <= tol:
        return (a + b) / 2.0
    iters = min(200, int(math.ceil(math.log(tol / width) / math.log(ratio))) + 1)
    for _ in range(iters):
        c = b - ratio * (b - a)
        d = a + ratio * (b - a)
        keep_left = fun(c) < fun(d)
        b = np.where(keep_left, d, b)
        a = np.where(keep_left, a, c)
    return (a + b) / 2.0


def reference_prox(g: Regularizer, theta: float, omega: np.ndarray) -> np.ndarray:
    """Slow generic evaluation of the prox subproblem (test oracle only).

    Separable variants (l1, box) are solved per coordinate by golden-section
    search to ~1e-9; the ball projection is computed by normalization.
    """
    omega = _check_inputs(theta, omega)
    if omega.ndim != 1:
        raise ValueError("reference_prox expects a single vector")
    if isinstance(g, Zero):
        return omega.copy()
    if isinstance(g, L1):
        tau = theta * g.weight

        def obj(u):
            return tau * np.abs(u) + 0.5 * (omega - u) ** 2

        margin = 1e-3
        lo = np.minimum(omega, 0.0) - margin
        hi = np.maximum(omega, 0.0) + margin
        return _golden_section(obj, lo, hi)
    if isinstance(g, Box):
        # Search the box itself; infinite endpoints get finite stand-ins
        # that still bracket the constrained minimizer of 0.5*(omega-u)^2.
        hi = np.where(np.isfinite(g.upper), g.upper, omega + np.abs(omega) + 1.0)
        lo = np.where(np.isfinite(g.lower), g.lower, np.minimum(omega, hi) - 1.0)
        hi = np.where(np.isfinite(g.upper), hi, np.maximum(omega, lo) + 1.0)

        def obj(u):
            return 0.5 * (omega - u) ** 2

        return _golden_section(obj, lo, hi)
    if isinstance(g, L2Ball):
        y = omega - g.center
        norm = np.linalg.norm(y)
        if norm <= g.radius:
            return omega.copy()
        return g.center + y * (g.radius / norm)
    raise TypeError(f"unsupported regularizer {type(g).__name__}")


def regularizer_value(g: Regularizer, x: np.ndarray) -> float:
    """g(x); inf outside an indicator's set (with a tiny feasibility slack)."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(g, Zero):
        return 0.0
    if isinstance(g, L1):
        return float(g.weight * np.sum(np.abs(x)))
    slack = 1e-9 * (1.0 + float(np.linalg.norm(x)))
    if isinstance(g, L2Ball):
        return 0.0 if np.linalg.norm(x - g.center) <= g.radius + slack else math.inf
    if isinstance(g, Box):
        inside = np.all(x >= g.lower - slack) and np.all(x <= g.upper + slack)
        return 0.0 if inside else math.inf
    raise TypeError(f"unsupported regularizer {type(g).__name__}")
