"""Cylindrical test functionals ``G(gamma) = g(sum_i <gamma(s_i), v_i>)``.

Nodes are times on a uniform grid: offsets in ``[-tau, 0]`` for functionals of
a segment, or times in ``[0, T]`` for functionals of a whole path.  Every kind
except the raw indicator carries an exact derivative of ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import DimensionError, DomainError

KINDS = ("coordinate", "bounded-smooth", "indicator-smoothed", "positive-exp", "indicator",
         "constant")


@dataclass(frozen=True, eq=False)
class TestFunction:
    kind: str
    times: tuple
    directions: np.ndarray
    center: float = 0.0
    width: float = 0.25

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if d.shape[0] != len(self.times):
            raise DimensionError("need one direction per evaluation time")
        if self.width <= 0:
            raise DomainError("width must be positive")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    @classmethod
    def endpoint(cls, kind: str, v, at: float = 0.0, **kw) -> "TestFunction":
        """Functional of one state: offset 0 of a segment, or pass ``at=T`` for a path."""
        return cls(kind, (at,), np.atleast_2d(v), **kw)

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @property
    def differentiable(self) -> bool:
        return self.kind != "indicator"

    @property
    def lower_bound(self) -> float:
        """Infimum of ``g``; ``-inf`` when unbounded below."""
        return {"coordinate": -np.inf, "bounded-smooth": 1.0, "indicator-smoothed": 0.0,
                "positive-exp": np.exp(-1.0), "indicator": 0.0, "constant": 1.0}[self.kind]

    @property
    def nonnegative(self) -> bool:
        return self.lower_bound >= 0

    def g(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "coordinate":
            return z
        if self.kind == "bounded-smooth":
            return 2.0 + np.sin(z)
        if self.kind == "indicator-smoothed":
            return 0.5 * (1.0 + np.tanh((z - self.center) / (2.0 * self.width)))
        if self.kind == "positive-exp":
            return np.exp(np.sin(z))
        if self.kind == "indicator":
            return (z > self.center).astype(float)
        return np.ones_like(z)

    def dg(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "coordinate":
            return np.ones_like(z)
        if self.kind == "bounded-smooth":
            return np.cos(z)
        if self.kind == "indicator-smoothed":
            s = self.g(z)
            return s * (1.0 - s) / self.width
        if self.kind == "positive-exp":
            return np.cos(z) * np.exp(np.sin(z))
        if self.kind == "indicator":
            raise TypeError("the raw indicator has no gradient")
        return np.zeros_like(z)

    def indices(self, step: float, origin: float, count: int) -> np.ndarray:
        """Grid positions of the evaluation times on a grid starting at ``origin``."""
        pos = (np.array(self.times) - origin) / step
        idx = np.rint(pos).astype(int)
        if np.any(np.abs(pos - idx) > 1e-9) or np.any(idx < 0) or np.any(idx >= count):
            raise DomainError("evaluation times are not nodes of the grid")
        return idx

    def project(self, stack: np.ndarray) -> np.ndarray:
        """``z = sum_i <stack[:, i], v_i>`` for ``stack`` of shape ``(P, n_nodes, N)``."""
        if stack.shape[-1] != self.dim:
            raise DimensionError("state dimension differs from the test directions")
        return np.einsum("pin,in->p", stack, self.directions)

    def value(self, stack: np.ndarray) -> np.ndarray:
        return self.g(self.project(stack))

    def directional(self, stack: np.ndarray, shift: np.ndarray) -> np.ndarray:
        """``grad_shift G`` where ``shift`` holds the shift at the nodes, ``(n_nodes, N)``."""
        return self.dg(self.project(stack)) * float(np.sum(shift * self.directions))

    def gradient_norm_sq(self, stack: np.ndarray) -> np.ndarray:
        """``|grad G|^2`` for a single-node functional."""
        return self.dg(self.project(stack)) ** 2 * float(np.sum(self.directions ** 2))


def segment_nodes(fn: TestFunction, segment: np.ndarray, step: float) -> np.ndarray:
    """Pick the functional's nodes out of segments ``(P, m+1, N)`` sampled on ``[-tau, 0]``."""
    m = segment.shape[-2] - 1
    idx = fn.indices(step, -m * step, m + 1)
    return segment[..., idx, :]


def path_nodes(fn: TestFunction, states: np.ndarray, step: float) -> np.ndarray:
    """Pick the nodes out of paths ``(P, n+1, N)`` sampled on ``[0, T]``."""
    idx = fn.indices(step, 0.0, states.shape[-2])
    return states[..., idx, :]


def battery(dim: int, seed: int = 0, harnack: bool = True) -> list:
    """Default mix of endpoint functionals along low modes."""
    rng = np.random.default_rng(seed)
    v = np.zeros(dim)
    v[: min(3, dim)] = rng.uniform(0.5, 1.0, min(3, dim))
    kinds = ["bounded-smooth", "indicator-smoothed", "positive-exp"]
    kinds += ["indicator"] if harnack else ["coordinate"]
    return [TestFunction.endpoint(k, v) for k in kinds]
