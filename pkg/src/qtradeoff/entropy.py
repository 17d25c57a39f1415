"""Finite distributions and smooth max-entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability masses over a finite outcome set.

    ``shape`` gives the radices when outcomes are joint values of several
    registers (flattened row-major); it defaults to a single axis.
    """

    masses: np.ndarray
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if m.size == 0:
            raise ValueError("empty distribution")
        if np.any(m < -MASS_TOL):
            raise ValueError("negative mass")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {m.sum()}, not 1")
        m = np.clip(m, 0.0, None)
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        shape = tuple(self.shape) or (m.size,)
        if math.prod(shape) != m.size:
            raise ValueError(f"shape {shape} does not match {m.size} masses")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point(cls, n: int, x: int) -> "Distribution":
        m = np.zeros(n)
        m[x] = 1.0
        return cls(m)

    def __len__(self) -> int:
        return self.masses.size

    def prob(self, *outcome: int) -> float:
        if len(outcome) == 1 and len(self.shape) == 1:
            return float(self.masses[outcome[0]])
        return float(self.masses[np.ravel_multi_index(outcome, self.shape)])

    def as_dict(self) -> dict[tuple[int, ...], float]:
        """Nonzero masses keyed by outcome tuples."""
        out = {}
        for i in np.flatnonzero(self.masses > MASS_TOL):
            out[tuple(int(v) for v in np.unravel_index(i, self.shape))] = float(self.masses[i])
        return out

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.masses > 0)

    def to_json(self) -> dict:
        return {"masses": [float(v) for v in self.masses]}

    @classmethod
    def from_json(cls, data: dict) -> "Distribution":
        if "masses" not in data:
            raise ValueError("distribution JSON needs a 'masses' list")
        return cls(np.asarray(data["masses"], dtype=float))


def _check_eps(eps: float):
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")


def min_support_set(mu: Distribution, eps: float) -> list[int]:
    """Smallest outcome set with mass at least 1 - eps.

    Greedy by descending mass, ties broken by ascending index. The stopping
    test is ``mass >= 1 - eps - 1e-12``.
    """
    _check_eps(eps)
    order = sorted(range(len(mu)), key=lambda i: (-mu.masses[i], i))
    target = 1.0 - eps - MASS_TOL
    chosen, mass = [], 0.0
    for i in order:
        if chosen and mass >= target:
            break
        chosen.append(i)
        mass += mu.masses[i]
    return chosen


def h_max(mu: Distribution, eps: float) -> float:
    """eps-smooth max-entropy in bits: log2 of the smallest set holding 1 - eps."""
    return math.log2(len(min_support_set(mu, eps)))
