"""Vertex sets, direction grids on the unit sphere, and a discrete Tuy-condition check."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

VERTEX_KINDS = ("circle", "square", "sphere", "segment")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class VertexSet:
    """Cone vertices (or beam sources) sampled on a curve or surface.

    ``params`` holds the size parameters needed to rebuild the set:
    ``radius`` for circle/sphere, ``side`` for square, ``half_length`` for
    segment, plus the per-angle counts of the sphere mesh.
    """

    kind: str
    points: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def descriptor(self) -> dict:
        return {"kind": self.kind, "count": len(self), **self.params}

    def max_spacing(self) -> float:
        """Largest nearest-neighbour distance in the set."""
        if len(self) < 2:
            return 0.0
        dist, _ = cKDTree(self.points).query(self.points, k=2)
        return float(dist[:, 1].max())

    def tangent_norms(self, thetas: np.ndarray) -> np.ndarray:
        """|P_u theta| for every vertex u (rows) and direction theta (columns)."""
        thetas = np.atleast_2d(thetas)
        pts = self.points
        if self.kind in ("circle", "sphere"):
            radial = pts / np.linalg.norm(pts, axis=1, keepdims=True)
            normal = radial @ thetas.T
            return np.sqrt(np.clip(1.0 - normal**2, 0.0, None))
        if self.kind == "segment":
            axis = np.zeros(self.dim)
            axis[0] = 1.0
            return np.broadcast_to(np.abs(thetas @ axis), (len(self), len(thetas))).copy()
        if self.kind == "square":
            half = self.params["side"] / 2.0
            on_vertical = np.isclose(np.abs(pts[:, 0]), half)
            on_horizontal = np.isclose(np.abs(pts[:, 1]), half)
            # vertical sides have tangent (0, 1), horizontal sides (1, 0);
            # corners take whichever adjacent side gives the better witness
            tv = np.where(on_vertical[:, None], np.abs(thetas[:, 1])[None, :], 0.0)
            th = np.where(on_horizontal[:, None], np.abs(thetas[:, 0])[None, :], 0.0)
            return np.maximum(tv, th)
        raise GeometryError(f"unknown geometry kind {self.kind!r}")


@dataclass(frozen=True)
class DirectionGrid:
    """Quadrature nodes on S^{n-1} with positive weights."""

    nodes: np.ndarray
    weights: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def descriptor(self) -> dict:
        return {"dim": self.dim, "count": len(self), **self.params}


@dataclass(frozen=True)
class TuyReport:
    satisfied: bool
    witness_fraction: float
    tangency_margin: float
    worst_pair: tuple[np.ndarray, np.ndarray]
    plane_tolerance: float
    n_pairs: int

    def worst_plane(self) -> str:
        x, theta = self.worst_pair
        offset = float(theta @ x)
        terms = " + ".join(f"{c:.4g}*x{i}" for i, c in enumerate(theta))
        return f"{terms} = {offset:.4g}"


def sphere_mesh_counts(count: int) -> tuple[int, int]:
    """Split a sphere vertex count into (n_azimuth, n_polar) with n_azimuth = 2 n_polar."""
    m = math.isqrt(count // 2)
    if count % 2 or 2 * m * m != count:
        raise GeometryError(
            f"sphere vertex count {count} is not of the form 2*m^2; pass n_azimuth/n_polar explicitly"
        )
    return 2 * m, m


def _sphere_points(n_azimuth: int, n_polar: int, radius: float = 1.0):
    polar = (np.arange(n_polar) + 0.5) * math.pi / n_polar
    azim = 2.0 * math.pi * np.arange(n_azimuth) / n_azimuth
    th, ph = np.meshgrid(polar, azim, indexing="ij")
    pts = np.stack(
        [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1
    ).reshape(-1, 3)
    return radius * pts, th.ravel(), ph.ravel()


def make_vertex_set(
    kind: str,
    count: int,
    *,
    radius: float = 1.0,
    side: float = 2.0,
    half_length: float = 1.0,
    n_azimuth: int | None = None,
    n_polar: int | None = None,
) -> VertexSet:
    """Uniformly spaced vertices on a circle, square boundary, sphere or segment.

    The sphere uses a uniform azimuth x polar mesh with polar samples at cell
    centres, so the poles themselves are never vertices.
    """
    if kind not in VERTEX_KINDS:
        raise GeometryError(f"unknown geometry kind {kind!r}")
    if count < 4:
        raise GeometryError("need at least 4 vertices")
    if min(radius, side, half_length) <= 0:
        raise GeometryError("size parameters must be positive")

    if kind == "circle":
        ang = 2.0 * math.pi * np.arange(count) / count
        pts = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return VertexSet("circle", pts, {"radius": radius})

    if kind == "square":
        if count % 4:
            raise GeometryError("square vertex count must be divisible by 4")
        per_side = count // 4
        h = side / 2.0
        t = np.arange(per_side) / per_side
        corners = np.array([[h, -h], [h, h], [-h, h], [-h, -h], [h, -h]])
        # each side owns its starting corner only
        sides = [corners[i] + t[:, None] * (corners[i + 1] - corners[i]) for i in range(4)]
        return VertexSet("square", np.concatenate(sides), {"side": side})

    if kind == "sphere":
        if n_azimuth is None or n_polar is None:
            n_azimuth, n_polar = sphere_mesh_counts(count)
        elif n_azimuth * n_polar != count:
            raise GeometryError("n_azimuth * n_polar must equal count")
        pts, _, _ = _sphere_points(n_azimuth, n_polar, radius)
        return VertexSet(
            "sphere", pts, {"radius": radius, "n_azimuth": n_azimuth, "n_polar": n_polar}
        )

    t = np.linspace(-half_length, half_length, count)
    pts = np.zeros((count, 3))
    pts[:, 0] = t
    return VertexSet("segment", pts, {"half_length": half_length})


def vertex_set_from_descriptor(desc: dict) -> VertexSet:
    desc = dict(desc)
    kind = desc.pop("kind")
    count = desc.pop("count")
    return make_vertex_set(kind, count, **desc)


def fibonacci_sphere(count: int) -> np.ndarray:
    """Golden-spiral point set; quasi-uniform with equal-area cells."""
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(1.0 - z * z)
    phi = GOLDEN_ANGLE * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def make_direction_grid(
    n: int, counts: int | Sequence[int], kind: str | None = None
) -> DirectionGrid:
    """Quadrature on S^{n-1}.

    n=2: ``counts`` equispaced angles. n=3: ``kind="product"`` with
    ``counts=(n_azimuth, n_polar)`` (cell-centred polar angles, weights
    sin(theta) dtheta dphi), or ``kind="fibonacci"`` with a single count and
    equal weights 4 pi / count.
    """
    if n == 2:
        count = int(counts if np.isscalar(counts) else counts[0])
        if count <= 0:
            raise GeometryError("counts must be positive")
        ang = 2.0 * math.pi * np.arange(count) / count
        nodes = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return DirectionGrid(nodes, np.full(count, 2.0 * math.pi / count), {"kind": "circle"})
    if n != 3:
        raise GeometryError(f"unsupported dimension {n}")

    if kind is None:
        kind = "fibonacci" if np.isscalar(counts) else "product"
    if kind == "product":
        if np.isscalar(counts):
            n_az, n_pol = sphere_mesh_counts(int(counts))
        else:
            n_az, n_pol = (int(c) for c in counts)
        if n_az <= 0 or n_pol <= 0:
            raise GeometryError("counts must be positive")
        nodes, th, _ = _sphere_points(n_az, n_pol)
        w = np.sin(th) * (math.pi / n_pol) * (2.0 * math.pi / n_az)
        return DirectionGrid(nodes, w, {"kind": "product", "n_azimuth": n_az, "n_polar": n_pol})
    if kind == "fibonacci":
        count = int(counts if np.isscalar(counts) else np.prod(counts))
        if count <= 0:
            raise GeometryError("counts must be positive")
        return DirectionGrid(
            fibonacci_sphere(count),
            np.full(count, 4.0 * math.pi / count),
            {"kind": "fibonacci"},
        )
    raise GeometryError(f"unknown direction grid kind {kind!r}")


def direction_grid_from_descriptor(desc: dict) -> DirectionGrid:
    kind = desc.get("kind")
    if desc["dim"] == 2:
        return make_direction_grid(2, desc["count"])
    if kind == "product":
        return make_direction_grid(3, (desc["n_azimuth"], desc["n_polar"]), "product")
    return make_direction_grid(3, desc["count"], "fibonacci")


def sphere_area(n: int) -> float:
    return 2.0 * math.pi if n == 2 else 4.0 * math.pi


def _sample_region(center, radius, count, rng) -> np.ndarray:
    n = len(center)
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / n)
    pts = center + g * r[:, None]
    return np.vstack([center, pts])


def _sample_directions(n, count) -> np.ndarray:
    if n == 2:
        ang = math.pi * np.arange(count) / count
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        dirs = fibonacci_sphere(count)
    # the coordinate axes are always probed
    return np.vstack([np.eye(n), dirs])


def tuy_check(
    vertex_set: VertexSet,
    center: Sequence[float],
    radius: float,
    *,
    n_points: int = 200,
    n_directions: int = 200,
    margin: float = 0.05,
    plane_tol: float | None = None,
    seed: int = 0,
) -> TuyReport:
    """Check that every sampled plane through the region meets the vertex set transversally.

    For each sampled point x and unit normal theta, a vertex u witnesses the
    plane when |theta.(x - u)| <= plane_tol and |P_u theta| >= margin. The
    default tolerance is twice the largest nearest-neighbour spacing.
    """
    if len(vertex_set) == 0:
        raise GeometryError("empty vertex set")
    if radius <= 0:
        raise GeometryError("region radius must be positive")
    if not 0.0 < margin < 1.0:
        raise GeometryError("margin must lie in (0, 1)")
    center = np.asarray(center, dtype=float)
    if plane_tol is None:
        plane_tol = 2.0 * vertex_set.max_spacing()

    rng = np.random.default_rng(seed)
    xs = _sample_region(center, radius, n_points, rng)
    thetas = _sample_directions(len(center), n_directions)
    tang = vertex_set.tangent_norms(thetas)  # (V, T)
    proj_u = vertex_set.points @ thetas.T  # (V, T)
    proj_x = xs @ thetas.T  # (X, T)

    best = np.zeros((len(xs), len(thetas)))
    hit = np.zeros(best.shape, dtype=bool)
    for t in range(len(thetas)):
        near = np.abs(proj_x[:, t, None] - proj_u[None, :, t]) <= plane_tol
        best[:, t] = np.where(near, tang[None, :, t], 0.0).max(axis=1)
        hit[:, t] = near.any(axis=1)

    ok = best >= margin
    witness_fraction = float(ok.mean())
    # planes missing the vertex set outrank tangential ones as the reported witness
    i, t = np.unravel_index(np.argmin(np.where(hit, best, -1.0)), best.shape)
    margin_found = float(best.min())
    report = TuyReport(
        satisfied=bool(ok.all() and margin_found > margin),
        witness_fraction=witness_fraction,
        tangency_margin=margin_found,
        worst_pair=(xs[i], thetas[t]),
        plane_tolerance=float(plane_tol),
        n_pairs=best.size,
    )
    if not report.satisfied:
        log.info("Tuy condition fails on plane %s", report.worst_plane())
    return report
