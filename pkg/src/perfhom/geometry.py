"""Perforated reference cell, macroscopic domain, layers, weights and cut-offs.

The macroscopic domain is the unit square (0, 1)^2 tiled by ``n x n`` cells of
side ``eps = 1/n``. Cell ``k = (k1, k2)`` occupies ``eps * (k + [0, 1]^2)`` and
the local cell coordinate is ``y = x/eps - k - 1/2`` in ``Y = [-1/2, 1/2)^2``,
so a hole centred at ``y = c`` sits at ``eps * (k + 1/2 + c)``. With this
half-cell shift no hole meets the outer boundary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeometryError",
    "PerforationSpec",
    "MacroDomain",
    "LayerGeometry",
    "build_macro_domain",
    "cutoff_psi",
    "distance_weight",
    "to_cell_coords",
]


class GeometryError(ValueError):
    """Invalid perforation or domain parameters."""


@dataclass(frozen=True)
class PerforationSpec:
    hole_shape: str = "disk"
    hole_radius: float = 0.25
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.hole_shape not in ("disk", "none"):
            raise GeometryError(f"unknown hole_shape {self.hole_shape!r}")
        if self.hole_shape == "disk":
            r = float(self.hole_radius)
            if not (0.0 < r < 0.5):
                raise GeometryError(f"hole_radius must lie in (0, 1/2), got {r}")
            cx, cy = self.center
            # the hole must stay strictly inside Y so that Y minus the hole is connected
            if max(abs(cx), abs(cy)) + r >= 0.5:
                raise GeometryError("hole touches the cell boundary")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def has_hole(self) -> bool:
        return self.hole_shape == "disk"

    @property
    def gap(self) -> float:
        """Minimal distance between neighbouring holes in cell units."""
        if not self.has_hole:
            return math.inf
        return 1.0 - 2.0 * self.hole_radius

    @property
    def hole_area(self) -> float:
        return math.pi * self.hole_radius**2 if self.has_hole else 0.0

    @property
    def porosity(self) -> float:
        """Exact measure of ``Y`` minus the (round) hole."""
        return 1.0 - self.hole_area

    def in_hole(self, y: np.ndarray) -> np.ndarray:
        """Indicator of the open hole for cell points ``y`` of shape (..., 2)."""
        y = np.asarray(y, dtype=float)
        if not self.has_hole:
            return np.zeros(y.shape[:-1], dtype=bool)
        c = np.asarray(self.center)
        return np.sum((y - c) ** 2, axis=-1) < self.hole_radius**2

    def as_dict(self) -> dict:
        return {
            "hole_shape": self.hole_shape,
            "hole_radius": self.hole_radius if self.has_hole else 0.0,
            "center": list(self.center),
        }


def to_cell_coords(x: np.ndarray, eps: float) -> np.ndarray:
    """Map macroscopic points to the periodic cell ``Y = [-1/2, 1/2)^2``."""
    s = np.asarray(x, dtype=float) / eps - 0.5
    return s - np.floor(s + 0.5)


@dataclass(frozen=True)
class MacroDomain:
    n: int
    perforation: PerforationSpec
    outer: str = "unit_square"

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n

    @property
    def hole_centers(self) -> np.ndarray:
        if not self.perforation.has_hole:
            return np.zeros((0, 2))
        k = np.arange(self.n, dtype=float)
        kx, ky = np.meshgrid(k, k, indexing="xy")
        c = np.asarray(self.perforation.center)
        pts = np.column_stack([kx.ravel() + 0.5 + c[0], ky.ravel() + 0.5 + c[1]])
        return pts * self.epsilon

    @property
    def hole_radius(self) -> float:
        return self.perforation.hole_radius * self.epsilon if self.perforation.has_hole else 0.0

    @property
    def measure(self) -> float:
        """Exact area of the perforated domain (round holes)."""
        return 1.0 - self.n**2 * math.pi * self.hole_radius**2 if self.perforation.has_hole else 1.0

    def cell_coords(self, x: np.ndarray) -> np.ndarray:
        return to_cell_coords(x, self.epsilon)

    def in_material(self, x: np.ndarray) -> np.ndarray:
        """Indicator ``l_eps^+`` of the perforated material."""
        return ~self.perforation.in_hole(self.cell_coords(x))

    def as_dict(self) -> dict:
        d = {"outer": self.outer, "n": self.n}
        d.update(self.perforation.as_dict())
        return d


def build_macro_domain(outer: str, n: int, perforation: PerforationSpec) -> MacroDomain:
    if outer != "unit_square":
        raise GeometryError(f"only the unit square is supported, got {outer!r}")
    if int(n) != n or n < 2:
        raise GeometryError(f"n must be an integer >= 2, got {n}")
    if not isinstance(perforation, PerforationSpec):
        raise GeometryError("perforation must be a PerforationSpec")
    return MacroDomain(n=int(n), perforation=perforation, outer=outer)


def dist_to_boundary(x: np.ndarray) -> np.ndarray:
    """Distance to the boundary of the unit square for points inside it."""
    x = np.asarray(x, dtype=float)
    return np.minimum(np.minimum(x[..., 0], 1.0 - x[..., 0]), np.minimum(x[..., 1], 1.0 - x[..., 1]))


@dataclass(frozen=True)
class LayerGeometry:
    """Layer sets and the distance ``delta`` to the extended square ``Omega_0``.

    ``Omega_0`` is the unit square dilated by ``extended_offset`` on each side.
    """

    domain: MacroDomain
    offset_multiplier: float = 10.0
    extended_offset: float = field(default=float("nan"))

    def __post_init__(self):
        if math.isnan(self.extended_offset):
            object.__setattr__(self, "extended_offset", self.offset_multiplier * self.domain.epsilon)
        if self.extended_offset <= 0:
            raise GeometryError("extended_offset must be positive")

    @property
    def epsilon(self) -> float:
        return self.domain.epsilon

    def delta(self, x: np.ndarray) -> np.ndarray:
        """``dist(x, boundary of Omega_0)``, valid on and inside the extended square."""
        x = np.asarray(x, dtype=float)
        o = self.extended_offset
        return np.minimum(
            np.minimum(x[..., 0] + o, 1.0 + o - x[..., 0]),
            np.minimum(x[..., 1] + o, 1.0 + o - x[..., 1]),
        )

    def dist_boundary(self, x: np.ndarray) -> np.ndarray:
        return dist_to_boundary(x)

    def in_layer(self, x: np.ndarray, m: float) -> np.ndarray:
        """Membership in ``O_{m eps}``."""
        return dist_to_boundary(x) < m * self.epsilon

    def in_colayer(self, x: np.ndarray, m: float) -> np.ndarray:
        """Membership in ``Sigma_{m eps}``."""
        return ~self.in_layer(x, m)

    def layer_measure(self, m: float) -> float:
        """Exact measure of ``O_{m eps}`` in the unit square."""
        w = min(m * self.epsilon, 0.5)
        return 1.0 - (1.0 - 2.0 * w) ** 2


class CutOff:
    """Piecewise linear ramp in ``dist(x, boundary)``: 0 below ``a``, 1 above ``b``."""

    def __init__(self, inner: float, outer: float):
        if not (0.0 < inner < outer):
            raise GeometryError(f"cut-off bands need 0 < a < b, got a={inner}, b={outer}")
        self.inner = float(inner)
        self.outer = float(outer)

    @property
    def lipschitz(self) -> float:
        return 1.0 / (self.outer - self.inner)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        t = (dist_to_boundary(x) - self.inner) / (self.outer - self.inner)
        return np.clip(t, 0.0, 1.0)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """A.e. gradient; zero on the plateaus."""
        x = np.asarray(x, dtype=float)
        d = np.stack([x[..., 0], 1.0 - x[..., 0], x[..., 1], 1.0 - x[..., 1]], axis=-1)
        k = np.argmin(d, axis=-1)
        dist = np.take_along_axis(d, k[..., None], axis=-1)[..., 0]
        dirs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        ramp = (dist > self.inner) & (dist < self.outer)
        return dirs[k] * (ramp * self.lipschitz)[..., None]


def cutoff_psi(layer: LayerGeometry, inner_band: float, outer_band: float) -> CutOff:
    """Cut-off vanishing on ``O_a`` and equal to one off ``O_b`` (bands in absolute units)."""
    return CutOff(inner_band, outer_band)


class DistanceWeight:
    """``rho = delta^beta`` with ``delta = dist(x, boundary of Omega_0)``."""

    def __init__(self, layer: LayerGeometry, beta: float):
        self.layer = layer
        self.beta = float(beta)
        self.is_a2 = -1.0 < self.beta < 1.0
        if not self.is_a2:
            warnings.warn(f"delta^{self.beta} is not a Muckenhoupt A_2 weight", stacklevel=3)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.beta == 0.0:
            return np.ones(np.asarray(x).shape[:-1])
        return self.layer.delta(x) ** self.beta


def distance_weight(layer: LayerGeometry, beta: float) -> DistanceWeight:
    return DistanceWeight(layer, beta)
