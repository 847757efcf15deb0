"""Bounded open window shapes: balls and boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class Ball:
    radius: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    @property
    def lo(self) -> np.ndarray:
        return -self.radius * np.ones(self.dim)

    @property
    def hi(self) -> np.ndarray:
        return self.radius * np.ones(self.dim)

    @property
    def inradius(self) -> float:
        return self.radius

    @property
    def circumradius(self) -> float:
        return self.radius

    @property
    def volume(self) -> float:
        if self.dim == 1:
            return 2.0 * self.radius
        if self.dim == 2:
            return math.pi * self.radius**2
        return math.pi ** (self.dim / 2) / math.gamma(self.dim / 2 + 1) * self.radius**self.dim

    def margin(self, points) -> np.ndarray:
        """Distance from each point to the complement (negative outside)."""
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return self.radius - np.linalg.norm(points, axis=1)

    def to_json(self) -> dict[str, Any]:
        return {"shape": "ball", "radius": self.radius, "dim": self.dim}


@dataclass(frozen=True)
class Box:
    lo_: tuple[float, ...]
    hi_: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo_) != len(self.hi_) or any(a >= b for a, b in zip(self.lo_, self.hi_)):
            raise ValueError(f"degenerate box {self.lo_} .. {self.hi_}")

    @property
    def dim(self) -> int:
        return len(self.lo_)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lo_, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.hi_, dtype=float)

    @property
    def inradius(self) -> float:
        return float(np.min(self.hi - self.lo)) / 2

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def margin(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.min(np.minimum(points - self.lo, self.hi - points), axis=1)

    def to_json(self) -> dict[str, Any]:
        return {"shape": "box", "lo": list(self.lo_), "hi": list(self.hi_)}


Shape = Ball | Box


def interval(a: float, b: float) -> Shape:
    """Open interval ``(a, b)``; a ball when centred at 0."""
    if a == -b:
        return Ball(b, 1)
    return Box((a,), (b,))


def parse_shape(obj: dict[str, Any], dim: int) -> Shape:
    kind = obj.get("shape", "ball")
    if kind == "ball":
        return Ball(float(obj.get("radius", 1.0)), int(obj.get("dim", dim)))
    if kind == "box":
        return Box(tuple(float(v) for v in obj["lo"]), tuple(float(v) for v in obj["hi"]))
    raise ValueError(f"unknown window shape {kind!r}")


def contains(shape: Shape, points, center=None) -> np.ndarray:
    """Membership of ``points`` in the open set ``center + shape``."""
    points = np.asarray(points, dtype=float).reshape(-1, shape.dim)
    if center is not None:
        points = points - np.asarray(center, dtype=float).reshape(1, shape.dim)
    return shape.margin(points) > 0
