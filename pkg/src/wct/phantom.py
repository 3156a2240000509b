"""Ball/disk phantoms with exact ray and hyperplane integrals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

UNIT_TOL = 1e-9


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class Primitive:
    center: tuple[float, ...]
    radius: float
    density: float

    def __post_init__(self):
        if self.radius <= 0:
            raise PhantomError("primitive radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class Phantom:
    """Sum of indicator functions of balls (n=3) or disks (n=2)."""

    dim: int
    primitives: tuple[Primitive, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        for p in self.primitives:
            if len(p.center) != self.dim:
                raise PhantomError("primitive center has wrong dimension")

    @property
    def support_radius(self) -> float:
        if not self.primitives:
            return 0.0
        return max(float(np.linalg.norm(p.center)) + p.radius for p in self.primitives)

    def scaled(self, factor: float) -> "Phantom":
        return Phantom(
            self.dim,
            tuple(Primitive(p.center, p.radius, p.density * factor) for p in self.primitives),
        )

    def translated(self, shift: Sequence[float]) -> "Phantom":
        shift = np.asarray(shift, dtype=float)
        return Phantom(
            self.dim,
            tuple(
                Primitive(tuple(np.asarray(p.center) + shift), p.radius, p.density)
                for p in self.primitives
            ),
        )

    def __add__(self, other: "Phantom") -> "Phantom":
        if other.dim != self.dim:
            raise PhantomError("dimension mismatch")
        return Phantom(self.dim, self.primitives + other.primitives)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "primitives": [
                {"center": list(p.center), "radius": p.radius, "density": p.density}
                for p in self.primitives
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Phantom":
        prims = [Primitive(tuple(p["center"]), p["radius"], p["density"]) for p in d["primitives"]]
        return cls(int(d["dim"]), tuple(prims))

    def arrays(self):
        """(centers, radii, densities) as float arrays, for vectorised kernels."""
        if not self.primitives:
            return np.zeros((0, self.dim)), np.zeros(0), np.zeros(0)
        c = np.array([p.center for p in self.primitives], dtype=float)
        r = np.array([p.radius for p in self.primitives], dtype=float)
        d = np.array([p.density for p in self.primitives], dtype=float)
        return c, r, d


def annulus_phantom() -> Phantom:
    """Concentric disks at (0, 0.4): radius 0.5 with density -0.5, radius 0.25 with density 1."""
    return Phantom(
        2,
        (
            Primitive((0.0, 0.4), 0.5, -0.5),
            Primitive((0.0, 0.4), 0.25, 1.0),
        ),
    )


def ball_phantom() -> Phantom:
    """Unit-density ball of radius 0.5 centred at (0, 0, 0.25)."""
    return Phantom(3, (Primitive((0.0, 0.0, 0.25), 0.5, 1.0),))


PRESETS = {"annulus": annulus_phantom, "ball": ball_phantom}


def _check_unit(direction: np.ndarray) -> None:
    if abs(float(np.linalg.norm(direction)) - 1.0) > UNIT_TOL:
        raise PhantomError("direction must be a unit vector")


def ray_intersect(phantom: Phantom, origin, direction) -> list[tuple[float, float, float]]:
    """Parameter intervals [enter, exit] (enter >= 0) of the ray inside each primitive."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    _check_unit(direction)
    out = []
    for p in phantom.primitives:
        w = origin - np.asarray(p.center)
        b = float(w @ direction)
        disc = b * b - (float(w @ w) - p.radius**2)
        if disc <= 0.0:
            continue
        root = math.sqrt(disc)
        enter, exit_ = -b - root, -b + root
        if exit_ <= 0.0:
            continue
        out.append((max(enter, 0.0), exit_, p.density))
    out.sort(key=lambda iv: iv[0])
    return out


def beam_integral_analytic(phantom: Phantom, u, sigma, k: int) -> float:
    """Integral of f(u + rho*sigma) rho^k over rho >= 0."""
    total = 0.0
    for enter, exit_, dens in ray_intersect(phantom, u, sigma):
        total += dens * (exit_ ** (k + 1) - enter ** (k + 1)) / (k + 1)
    return total


def beam_integrals(phantom: Phantom, u: np.ndarray, sigma: np.ndarray, k: int) -> np.ndarray:
    """Vectorised beam integrals for every (source, direction) pair.

    u: (M, n), sigma: (K, n) -> (M, K).
    """
    u = np.atleast_2d(u)
    sigma = np.atleast_2d(sigma)
    out = np.zeros((u.shape[0], sigma.shape[0]))
    centers, radii, dens = phantom.arrays()
    for c, r, d in zip(centers, radii, dens):
        w = u - c
        b = w @ sigma.T
        disc = b * b - ((w * w).sum(axis=1) - r * r)[:, None]
        np.maximum(disc, 0.0, out=disc)
        root = np.sqrt(disc)
        exit_ = np.maximum(root - b, 0.0)
        enter = np.maximum(-root - b, 0.0)
        out += d * (exit_ ** (k + 1) - enter ** (k + 1)) / (k + 1)
    return out


def _section_measure(dim: int, r2: np.ndarray) -> np.ndarray:
    """Measure of the (dim-1)-ball of squared radius r2 (zero where r2 <= 0)."""
    r2 = np.maximum(r2, 0.0)
    if dim == 2:
        return 2.0 * np.sqrt(r2)
    if dim == 3:
        return math.pi * r2
    raise PhantomError(f"unsupported dimension {dim}")


def radon_analytic(phantom: Phantom, beta, s):
    """Integral of f over the hyperplane x.beta = s (s may be an array)."""
    beta = np.asarray(beta, dtype=float)
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    for p in phantom.primitives:
        d = s - float(np.asarray(p.center) @ beta)
        out = out + p.density * _section_measure(phantom.dim, p.radius**2 - d * d)
    return out if out.ndim else float(out)


def radon_table(phantom: Phantom, betas: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Rf on the (direction, offset) product grid -> (B, S)."""
    centers, radii, dens = phantom.arrays()
    out = np.zeros((len(betas), len(s)))
    for c, r, d in zip(centers, radii, dens):
        off = s[None, :] - (betas @ c)[:, None]
        out += d * _section_measure(phantom.dim, r * r - off * off)
    return out


def total_mass(phantom: Phantom) -> float:
    unit = math.pi if phantom.dim == 2 else 4.0 * math.pi / 3.0
    return sum(p.density * unit * p.radius**phantom.dim for p in phantom.primitives)


@dataclass
class ImageGrid:
    """Cell-centred samples on an axis-aligned box.

    ``fixed`` turns a 2D grid into a planar section of 3D space: it names the
    ambient axis held constant and its value; ``extent`` and ``shape`` then
    describe the two remaining axes in increasing axis order.
    Values are stored with axis 0 first (``values[i, j]`` at ``(a0[i], a1[j])``).
    """

    extent: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    values: np.ndarray | None = None
    fixed: tuple[int, float] | None = None

    def __post_init__(self):
        self.extent = tuple((float(lo), float(hi)) for lo, hi in self.extent)
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.extent) != len(self.shape):
            raise PhantomError("extent and shape disagree")
        if any(s < 2 for s in self.shape):
            raise PhantomError("grid needs at least 2 samples per axis")
        if any(hi <= lo for lo, hi in self.extent):
            raise PhantomError("degenerate grid extent")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float).reshape(self.shape)

    @property
    def dim(self) -> int:
        return len(self.shape) + (1 if self.fixed is not None else 0)

    @property
    def axes(self) -> tuple[int, ...]:
        """Ambient axis index of each grid axis."""
        if self.fixed is None:
            return tuple(range(len(self.shape)))
        return tuple(a for a in range(self.dim) if a != self.fixed[0])

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.extent, self.shape))

    def coords(self) -> list[np.ndarray]:
        return [
            lo + (np.arange(n) + 0.5) * (hi - lo) / n for (lo, hi), n in zip(self.extent, self.shape)
        ]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.coords(), indexing="ij")
        pts = np.zeros((int(np.prod(self.shape)), self.dim))
        for ax, m in zip(self.axes, mesh):
            pts[:, ax] = m.ravel()
        if self.fixed is not None:
            pts[:, self.fixed[0]] = self.fixed[1]
        return pts

    def like(self, values: np.ndarray) -> "ImageGrid":
        return ImageGrid(self.extent, self.shape, values, self.fixed)

    def descriptor(self) -> dict:
        return {
            "extent": [list(e) for e in self.extent],
            "shape": list(self.shape),
            "fixed": list(self.fixed) if self.fixed is not None else None,
        }

    @classmethod
    def from_descriptor(cls, d: dict, values=None) -> "ImageGrid":
        fixed = tuple(d["fixed"]) if d.get("fixed") is not None else None
        if fixed is not None:
            fixed = (int(fixed[0]), float(fixed[1]))
        return cls(tuple(tuple(e) for e in d["extent"]), tuple(d["shape"]), values, fixed)


def evaluate(phantom: Phantom, points: np.ndarray) -> np.ndarray:
    """Point values of f; overlapping primitives add."""
    points = np.atleast_2d(points)
    out = np.zeros(points.shape[0])
    for p in phantom.primitives:
        inside = ((points - np.asarray(p.center)) ** 2).sum(axis=1) < p.radius**2
        out[inside] += p.density
    return out


def rasterize(phantom: Phantom, grid: ImageGrid) -> ImageGrid:
    if grid.dim != phantom.dim:
        raise PhantomError("grid and phantom dimensions differ")
    if grid.fixed is None:
        R = phantom.support_radius
        for lo, hi in grid.extent:
            if lo > -R or hi < R:
                log.warning("raster extent does not cover the phantom support (R=%.3g)", R)
                break
    return grid.like(evaluate(phantom, grid.points()).reshape(grid.shape))


def boundary_distance(phantom: Phantom, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest primitive boundary."""
    points = np.atleast_2d(points)
    out = np.full(points.shape[0], np.inf)
    for p in phantom.primitives:
        d = np.abs(np.linalg.norm(points - np.asarray(p.center), axis=1) - p.radius)
        np.minimum(out, d, out=out)
    return out


def phantom_from_spec(spec: str | dict | Iterable) -> Phantom:
    """Build a phantom from a preset name or a definition block."""
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise PhantomError(f"unknown phantom preset {spec!r}")
        return PRESETS[spec]()
    if isinstance(spec, dict):
        return Phantom.from_dict(spec)
    prims = [Primitive(tuple(p["center"]), p["radius"], p["density"]) for p in spec]
    if not prims:
        raise PhantomError("empty primitive list needs an explicit dimension")
    return Phantom(len(prims[0].center), tuple(prims))
