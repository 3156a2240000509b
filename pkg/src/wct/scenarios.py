"""Named reproduction scenarios with their published sampling counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .forward import make_psi_grid
from .geometry import make_direction_grid, make_vertex_set
from .phantom import ImageGrid, Phantom, phantom_from_spec
from .recon import ReconConfig


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    title: str
    n: int
    k: int
    kind: str  # cone | beam
    phantom: str = "annulus"
    geometry: str = "circle"
    vertices: int = 256
    axes: int = 400
    psi: int = 90
    directions: int = 0
    noise: float = 0.0
    grid: int = 256
    planes: tuple = ()

    @property
    def counts(self) -> str:
        parts = [f"vertices={self.vertices}"]
        if self.kind == "cone":
            parts += [f"axes={self.axes}", f"psi={self.psi}"]
        else:
            parts += [f"axes={self.axes}", f"directions={self.directions}"]
        if self.noise:
            parts.append(f"noise={self.noise:g}")
        shape = f"{self.grid}x{self.grid}"
        parts.append(f"grid={shape}" + (f" on {len(self.planes)} planes" if self.planes else ""))
        return " ".join(parts)

    def make_phantom(self) -> Phantom:
        return phantom_from_spec(self.phantom)

    def image_grids(self, planes=None, grid: int | None = None) -> list[ImageGrid]:
        size = grid or self.grid
        box = ((-1.0, 1.0), (-1.0, 1.0))
        if self.n == 2:
            return [ImageGrid(box, (size, size))]
        return [ImageGrid(box, (size, size), fixed=p) for p in (planes or self.planes)]

    def config(self, **overrides) -> ReconConfig:
        """ReconConfig at the published counts; keyword overrides replace fields."""
        vs = make_vertex_set(self.geometry, self.vertices)
        axes = (
            make_direction_grid(2, self.axes)
            if self.n == 2
            else make_direction_grid(3, self.axes, "fibonacci")
        )
        cfg = ReconConfig(
            self.n,
            self.k,
            self.kind,
            vertices=vs,
            axes=axes,
            psi=make_psi_grid(self.psi) if self.kind == "cone" else None,
            directions=(
                make_direction_grid(3, self.directions, "fibonacci") if self.kind == "beam" else None
            ),
            grids=self.image_grids(),
            noise=self.noise,
        )
        for key, val in overrides.items():
            if not hasattr(cfg, key):
                raise ScenarioError(f"unknown configuration field {key!r}")
            setattr(cfg, key, val)
        return cfg

    def with_changes(self, **changes) -> "Scenario":
        return replace(self, **changes)


SECTIONS = ((0, 0.0), (1, 0.0), (2, 0.25))  # x=0, y=0, z=0.25

_2D = dict(n=2, k=1, kind="cone", phantom="annulus", vertices=256, axes=400, psi=90, grid=256)
_CONE3 = dict(
    n=3, kind="cone", phantom="ball", geometry="sphere", vertices=1800, axes=1800, psi=200,
    grid=90, planes=SECTIONS,
)
_BEAM3 = dict(
    n=3, kind="beam", phantom="ball", geometry="sphere", vertices=1800, axes=1800,
    directions=30000, psi=0, grid=90, planes=SECTIONS,
)

SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in (
        Scenario("fig3", "2D cones, vertices on the unit circle", **_2D),
        Scenario("fig4", "2D cones, vertices on the square of side 2", geometry="square", **_2D),
        Scenario("fig5", "2D cones on the circle, 5% Gaussian noise", noise=0.05, **_2D),
        Scenario(
            "fig6", "2D cones on the square, 5% Gaussian noise", geometry="square", noise=0.05, **_2D
        ),
        Scenario("fig8", "3D cones k=0, vertices on the unit sphere", k=0, **_CONE3),
        Scenario("fig10", "3D cones k=2, vertices on the unit sphere", k=2, **_CONE3),
        Scenario("fig12", "3D cones k=2, 5% Gaussian noise", k=2, noise=0.05, **_CONE3),
        Scenario("fig13", "3D divergent beams k=1, sources on the unit sphere", k=1, **_BEAM3),
        Scenario("fig15", "3D divergent beams k=2, sources on the unit sphere", k=2, **_BEAM3),
    )
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; see --list-scenarios") from None


def parse_planes(text: str) -> list[tuple[int, float]]:
    """'x=0,y=0,z=0.25' -> [(0, 0.0), (1, 0.0), (2, 0.25)]."""
    out = []
    for item in filter(None, (p.strip() for p in text.split(","))):
        axis, _, value = item.partition("=")
        if axis not in ("x", "y", "z") or not value:
            raise ScenarioError(f"bad plane {item!r}; expected x=, y= or z=<value>")
        v = float(value)
        if not math.isfinite(v):
            raise ScenarioError(f"bad plane value in {item!r}")
        out.append(("xyz".index(axis), v))
    if not out:
        raise ScenarioError("no planes given")
    return out
