"""Verification suites and scenario scoring.

Every check returns a CheckResult (name, measured value, threshold, pass
flag). Reports carry no timings so that repeated runs are bit-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from . import filter as flt
from .fileio import write_container, write_csv
from .forward import cone_block, divergent_beam_forward, radon_forward
from .geometry import DirectionGrid, make_vertex_set, tuy_check
from .phantom import (
    Phantom,
    annulus_phantom,
    ball_phantom,
    beam_integrals,
    boundary_distance,
    evaluate,
    radon_analytic,
)
from .recon import Reconstruction, cone_inner_streaming, profile
from .scenarios import get_scenario

log = logging.getLogger(__name__)

SUITES = ("forward", "remark42", "g-equivalence", "invariance", "tuy")
JUMP_BAND = 0.05  # half-width excluded around density jumps in profile checks
EQUIV_CASES = ((2, 1, "cone"), (3, 0, "cone"), (3, 2, "cone"), (3, 1, "beam"), (3, 2, "beam"))
CONE_AXIS_STRIDE = 9  # 3D cone equivalence uses every 9th axis of the 1800 (runtime)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""

    def row(self):
        return [self.name, self.value, self.threshold, self.passed, self.note]


def at_most(name, value, threshold, note="") -> CheckResult:
    value = float(value)
    return CheckResult(name, value, float(threshold), bool(value <= threshold), note)


# ---------------------------------------------------------------- forward oracle


def _crossings(phantom: Phantom, u, sigma, rho_max: float, n_grid: int = 4001) -> list[float]:
    """Boundary crossings along the ray found by bracketing and root refinement."""
    out = []
    rho = np.linspace(0.0, rho_max, n_grid)
    pts = u[None, :] + rho[:, None] * sigma[None, :]
    for p in phantom.primitives:
        c = np.asarray(p.center)

        def level(r, c=c, p=p):
            d = u + r * sigma - c
            return float(d @ d) - p.radius**2

        vals = ((pts - c) ** 2).sum(axis=1) - p.radius**2
        for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
            out.append(optimize.brentq(level, rho[i], rho[i + 1], xtol=1e-15, rtol=1e-15))
    return sorted(out)


def beam_integral_oracle(phantom: Phantom, u, sigma, k: int) -> tuple[float, float]:
    """Adaptive quadrature of f(u + rho sigma) rho^k between numerically located jumps.

    Returns (integral, integral of |f| rho^k); the second is the scale used
    for relative errors, since signed densities can cancel to zero.
    """
    u = np.asarray(u, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    rho_max = float(np.linalg.norm(u)) + phantom.support_radius + 1.0
    knots = [0.0] + _crossings(phantom, u, sigma, rho_max) + [rho_max]
    total, mag = 0.0, 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        if b - a <= 0:
            continue
        dens = float(evaluate(phantom, (u + 0.5 * (a + b) * sigma)[None, :])[0])
        if dens == 0.0:
            continue
        val, _ = integrate.quad(lambda r: r**k, a, b, epsabs=0.0, epsrel=1e-13)
        total += dens * val
        mag += abs(dens) * val
    return total, mag


def random_rays(phantom: Phantom, count: int, seed: int, source_radius: float = 1.0):
    """Sources on the sphere/circle of ``source_radius`` aimed at random support points."""
    rng = np.random.default_rng(seed)
    n = phantom.dim
    g = rng.standard_normal((count, n))
    u = source_radius * g / np.linalg.norm(g, axis=1, keepdims=True)
    centers, radii, _ = phantom.arrays()
    pick = rng.integers(len(radii), size=count)
    h = rng.standard_normal((count, n))
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    target = centers[pick] + h * (radii[pick] * rng.random(count) ** (1 / n))[:, None]
    sigma = target - u
    sigma /= np.linalg.norm(sigma, axis=1, keepdims=True)
    return u, sigma


def check_forward(seed: int = 0, count: int = 1000) -> list[CheckResult]:
    """Closed-form beam integrals vs the quadrature oracle on random rays."""
    out = []
    per = count // 2
    for name, ph in (("annulus", annulus_phantom()), ("ball", ball_phantom())):
        u, sigma = random_rays(ph, per, seed)
        worst = 0.0
        for k in (0, 1, 2):
            ks = slice(k * per // 3, (k + 1) * per // 3)
            for uu, ss in zip(u[ks], sigma[ks]):
                exact = float(beam_integrals(ph, uu[None], ss[None], k)[0, 0])
                ref, scale = beam_integral_oracle(ph, uu, ss, k)
                scale = max(scale, 1e-12)
                worst = max(worst, abs(exact - ref) / scale)
        out.append(at_most(f"forward/{name}", worst, 1e-8, f"{per} rays, k=0..2"))
    return out


# ---------------------------------------------------------------- plane identity for k=1 cones


def check_remark42(seed: int = 0, count: int = 50, n_phi: int = 360) -> list[CheckResult]:
    """C^1 f(u, beta, pi/2) against R f(beta, u.beta) for the 3D ball."""
    ph = ball_phantom()
    c = np.asarray(ph.primitives[0].center)
    r = ph.primitives[0].radius
    rng = np.random.default_rng(seed)
    us, bs = [], []
    while len(us) < count:
        g = rng.standard_normal((2, 3))
        u = g[0] / np.linalg.norm(g[0])
        b = g[1] / np.linalg.norm(g[1])
        if abs((u - c) @ b) < r:  # the plane through u meets the ball
            us.append(u)
            bs.append(b)
    psi = np.array([math.pi / 2])
    out = []
    radon = np.array([radon_analytic(ph, b, float(u @ b)) for u, b in zip(us, bs)])
    for method in ("trapezoid", "arc"):
        cone = np.array(
            [
                cone_block(ph, u[None], DirectionGrid(b[None], np.ones(1)), psi, 1, method=method, n_phi=n_phi)[0, 0, 0]
                for u, b in zip(us, bs)
            ]
        )
        dev = float(np.abs(cone - radon).max() / radon.max())
        out.append(at_most(f"remark42/{method}", dev, 0.01, f"{count} pairs, n_phi={n_phi}"))
    return out


# ---------------------------------------------------------------- three-path G equivalence


@dataclass
class PathData:
    """Per-vertex inner integrals of one data path plus the Radon oracle on the same s-grid."""

    label: str
    spec: flt.FilterSpec
    vertices: np.ndarray
    axes: DirectionGrid
    inner: np.ndarray
    gtable: flt.GTable
    oracle: flt.GTable
    jumps: np.ndarray | None  # (B, J) s-positions where G jumps


def _radon_oracle(phantom: Phantom, axes: DirectionGrid, spec, s: np.ndarray) -> flt.GTable:
    fine = np.linspace(-2.0, 2.0, 8001)
    g = flt.g_from_radon(radon_forward(phantom, axes, fine), spec)
    vals = np.stack([np.interp(s, fine, row) for row in g.values])
    return flt.GTable(axes, s, vals)


def path_data(n: int, k: int, kind: str) -> PathData:
    """Scenario-sampling data for one (n, k, kind); 3D cones use an axis subset."""
    name = {(2, 1, "cone"): "fig3", (3, 0, "cone"): "fig8", (3, 2, "cone"): "fig10",
            (3, 1, "beam"): "fig13", (3, 2, "beam"): "fig15"}[(n, k, kind)]
    sc = get_scenario(name)
    ph = sc.make_phantom()
    cfg = sc.config()
    spec = flt.weight_h(n, k)
    s = cfg.s_grid()
    if kind == "cone":
        if n == 3:
            idx = np.arange(0, len(cfg.axes), CONE_AXIS_STRIDE)
            cfg.axes = DirectionGrid(cfg.axes.nodes[idx], cfg.axes.weights[idx], cfg.axes.params)
        inner, _, _ = cone_inner_streaming(ph, cfg)
    else:
        beam = divergent_beam_forward(ph, cfg.vertices, cfg.directions, k)
        inner = flt.beam_inner(beam.values, cfg.directions, cfg.axes, spec, interp=cfg.ring_interp)
    g = flt.assemble_g(cfg.vertices.points, cfg.axes, inner, s, cfg.resample_method)
    jumps = None
    if n == 3 and spec.kind == "delta" and spec.order >= 1:
        centers, radii, _ = ph.arrays()
        cb = cfg.axes.nodes @ centers.T  # (B, P)
        jumps = np.concatenate([cb - radii, cb + radii], axis=1)
    return PathData(
        f"{kind}-{n}d-k{k}", spec, cfg.vertices.points, cfg.axes, inner, g,
        _radon_oracle(ph, cfg.axes, spec, s), jumps,
    )


def _jump_mask(data: PathData, s: np.ndarray, half_width: float) -> np.ndarray:
    if data.jumps is None:
        return np.zeros((len(data.axes), len(s)), dtype=bool)
    d = np.abs(s[None, :, None] - data.jumps[:, None, :]).min(axis=2)
    return d <= half_width


def g_deviation(data: PathData, passes: int, s_limit: float = 0.8) -> float:
    """max |G_path - G_oracle| / max |G_oracle| over |s| <= s_limit.

    The same pre-smoothing is applied to both tables, so the comparison
    isolates the data path from the s-regularisation.
    """
    g = flt.binomial_smooth(data.gtable, passes).values if passes else data.gtable.values
    o = flt.binomial_smooth(data.oracle, passes).values if passes else data.oracle.values
    s = data.gtable.s
    keep = (np.abs(s)[None, :] <= s_limit) & ~_jump_mask(data, s, (2 * passes + 1.5) * data.gtable.ds)
    return float(np.abs(g - o)[keep].max() / np.abs(data.oracle.values).max())


def within_bin_std(data: PathData) -> tuple[float, float]:
    """Pooled and worst within-bin std of per-vertex values, after removing the in-bin slope.

    Bins are the s-grid cells; the slope comes from central differences of
    the bin means. Returns values relative to max |G|.
    """
    s = data.gtable.s
    ds = data.gtable.ds
    sv = data.vertices @ data.axes.nodes.T
    binned = flt.assemble_g(data.vertices, data.axes, data.inner, s, "bin")
    slope = np.gradient(binned.values, ds, axis=1)
    idx = np.rint((sv - s[0]) / ds).astype(np.int64)
    ok = (idx >= 0) & (idx < len(s))
    bad = _jump_mask(data, s, 1.5 * ds)
    B = len(data.axes)
    cols = np.broadcast_to(np.arange(B)[None, :], sv.shape)
    ok &= ~bad[cols, np.clip(idx, 0, len(s) - 1)]
    b_i, i_i = cols[ok], idx[ok]
    resid = data.inner[ok] - slope[b_i, i_i] * (sv[ok] - s[i_i])
    flat = b_i * len(s) + i_i
    n = np.bincount(flat, minlength=B * len(s))
    m1 = np.bincount(flat, weights=resid, minlength=B * len(s))
    m2 = np.bincount(flat, weights=resid**2, minlength=B * len(s))
    multi = n >= 2
    ss = m2[multi] - m1[multi] ** 2 / n[multi]
    pooled = math.sqrt(max(ss.sum(), 0.0) / (n[multi] - 1).sum())
    worst = math.sqrt(max((ss / (n[multi] - 1)).max(), 0.0))
    gmax = float(np.abs(data.oracle.values).max())
    return pooled / gmax, worst / gmax


def check_g_equivalence(cases=EQUIV_CASES, cache: dict | None = None) -> list[CheckResult]:
    from .recon import CLEAN_PASSES

    out = []
    for case in cases:
        data = _cached_path(case, cache)
        raw = g_deviation(data, 0)
        smoothed = g_deviation(data, CLEAN_PASSES)
        out.append(at_most(f"g-equivalence/{data.label}", raw, 0.02, f"after {CLEAN_PASSES}-pass smoothing {smoothed:.4g}"))
    return out


def check_invariance(cases=EQUIV_CASES, cache: dict | None = None) -> list[CheckResult]:
    out = []
    for case in cases:
        data = _cached_path(case, cache)
        pooled, worst = within_bin_std(data)
        out.append(at_most(f"invariance/{data.label}", pooled, 0.01, f"worst bin {worst:.4g}"))
    return out


def _cached_path(case, cache):
    if cache is None:
        return path_data(*case)
    if case not in cache:
        cache[case] = path_data(*case)
    return cache[case]


# ---------------------------------------------------------------- Tuy fixtures


def check_tuy(seed: int = 0) -> list[CheckResult]:
    fixtures = (
        ("sphere", make_vertex_set("sphere", 1800), (0.0, 0.0, 0.25), True),
        ("circle", make_vertex_set("circle", 256), (0.0, 0.4), True),
        ("segment", make_vertex_set("segment", 201), (0.0, 0.0, 0.25), False),
    )
    out = []
    for name, vs, center, expected in fixtures:
        rep = tuy_check(vs, center, 0.5, seed=seed)
        note = f"witness fraction {rep.witness_fraction:.4g}"
        if not rep.satisfied:
            note += f"; plane {rep.worst_plane()}"
            log.info("Tuy fixture %s: no transversal witness for plane %s", name, rep.worst_plane())
        out.append(
            CheckResult(
                f"tuy/{name}", float(rep.tangency_margin), 0.05, rep.satisfied == expected,
                f"satisfied={rep.satisfied} expected={expected}; {note}",
            )
        )
    return out


# ---------------------------------------------------------------- suite driver


def run_suite(suite: str, out_dir=None, seed: int = 0) -> list[CheckResult]:
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or all")
    names = SUITES if suite == "all" else (suite,)
    cache: dict = {}
    results: list[CheckResult] = []
    for name in names:
        log.info("running suite %s", name)
        if name == "forward":
            results += check_forward(seed)
        elif name == "remark42":
            results += check_remark42(seed)
        elif name == "g-equivalence":
            results += check_g_equivalence(cache=cache)
        elif name == "invariance":
            results += check_invariance(cache=cache)
        else:
            results += check_tuy(seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report(out_dir / "verify_report.csv", results)
        for case, data in sorted(cache.items()):
            meta = {"n": case[0], "k": case[1], "path": case[2], "seed": seed,
                    "s": [float(data.gtable.s[0]), float(data.gtable.s[-1]), len(data.gtable.s)],
                    "axes": data.axes.descriptor()}
            write_container(out_dir / f"gtable_{data.label}.wct", "gtable", data.gtable.values, meta)
            write_container(out_dir / f"gtable_{data.label}_radon.wct", "gtable", data.oracle.values, meta)
    return results


def write_report(path, results: list[CheckResult]) -> Path:
    return write_csv(path, ["name", "value", "threshold", "passed", "note"], (r.row() for r in results))


# ---------------------------------------------------------------- scenario scoring


def _profile_distance(phantom: Phantom, image, axis: str, offset: float, coords: np.ndarray):
    """Distance from each profile sample to the nearest density jump."""
    pts = np.zeros((len(coords), phantom.dim))
    if axis == "diagonal":
        pts[:, 0] = pts[:, 1] = coords / math.sqrt(2.0)
        return boundary_distance(phantom, pts)
    amb = "xyz".index(axis)
    pts[:, amb] = coords
    other = [a for a in image.axes if a != amb][0]
    pts[:, other] = offset
    if image.fixed is not None:
        pts[:, image.fixed[0]] = image.fixed[1]
    return boundary_distance(phantom, pts)


def profile_lines(rec: Reconstruction):
    """(label, image, reference, axis, offset) for the reported axis profiles."""
    lines = []
    for img, ref in zip(rec.images, rec.references):
        if img.fixed is None:
            lines.append(("y", img, ref, "y", 0.0))
            continue
        for name in "xyz":
            amb = "xyz".index(name)
            if amb == img.fixed[0]:
                continue
            other = [a for a in img.axes if a != amb][0]
            offset = 0.25 if other == 2 else 0.0
            lines.append((f"{'xyz'[img.fixed[0]]}={img.fixed[1]:g}:{name}", img, ref, name, offset))
    return lines


def plateau_means_2d(rec: Reconstruction, phantom: Phantom, band: float = JUMP_BAND) -> dict:
    """Mean y-profile value on each constant-density stretch, keyed by the true density."""
    img, ref = rec.images[0], rec.references[0]
    c, v = profile(img, "y", 0.0)
    _, rv = profile(ref, "y", 0.0)
    far = _profile_distance(phantom, img, "y", 0.0, c) >= band
    out = {}
    for level in np.unique(rv):
        if level == 0:
            continue
        sel = far & (rv == level)
        if sel.any():
            out[float(level)] = float(v[sel].mean())
    return out


def profile_bounds(rec: Reconstruction, phantom: Phantom, band: float = JUMP_BAND) -> dict:
    """Worst pointwise |recon - density| inside and outside the support on every axis profile."""
    inside, outside = 0.0, 0.0
    for _, img, ref, axis, off in profile_lines(rec):
        c, v = profile(img, axis, off)
        _, rv = profile(ref, axis, off)
        far = _profile_distance(phantom, img, axis, off, c) >= band
        d = np.abs(v - rv)
        if (far & (rv != 0)).any():
            inside = max(inside, float(d[far & (rv != 0)].max()))
        if (far & (rv == 0)).any():
            outside = max(outside, float(d[far & (rv == 0)].max()))
    return {"inside": inside, "outside": outside}


def profile_signs_ok(rec: Reconstruction, phantom: Phantom, band: float = JUMP_BAND) -> bool:
    """Reconstructed sign matches the density on every profile sample away from jumps."""
    for _, img, ref, axis, off in profile_lines(rec):
        c, v = profile(img, axis, off)
        _, rv = profile(ref, axis, off)
        sel = (_profile_distance(phantom, img, axis, off, c) >= band) & (rv != 0)
        if np.any(np.sign(v[sel]) != np.sign(rv[sel])):
            return False
    return True


def diagonal_artifact(rec: Reconstruction, phantom: Phantom, band: float = JUMP_BAND) -> float:
    """Largest |recon - density| along the image diagonal, away from jumps."""
    img, ref = rec.images[0], rec.references[0]
    c, v = profile(img, "diagonal")
    _, rv = profile(ref, "diagonal")
    far = _profile_distance(phantom, img, "diagonal", 0.0, c) >= band
    return float(np.abs(v - rv)[far].max())

