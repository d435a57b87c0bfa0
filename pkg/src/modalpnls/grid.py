"""Uniform symmetric grid on the z line."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Nodes ``z_j = -L + j h`` for ``j = 0..N-1`` with ``h = 2L/(N-1)``.

    ``N`` must be odd so that ``z = 0`` is a node.  Inner products use the
    trapezoid weight ``h`` (the profiles involved vanish at both ends).
    """

    half_width: float = 20.0
    n_nodes: int = 2049

    def __post_init__(self):
        if self.n_nodes < 5 or self.n_nodes % 2 == 0:
            raise ValueError("n_nodes must be odd and >= 5 so that z=0 is a node")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n_nodes - 1)

    @property
    def nodes(self) -> np.ndarray:
        j = np.arange(self.n_nodes) - (self.n_nodes - 1) // 2
        return j * self.h

    @property
    def center(self) -> int:
        return (self.n_nodes - 1) // 2

    def inner(self, u, v):
        return self.h * np.dot(u, v)

    def norm(self, u):
        return float(np.sqrt(self.h * np.dot(u, u)))
