"""Command line: ``wct simulate | reconstruct | verify`` and ``wct --list-scenarios``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import verify
from .fileio import (
    ContainerError,
    create_container,
    read_container,
    write_container,
    write_csv,
    write_pgm,
    write_profile_csv,
)
from .filter import FilterError
from .forward import (
    BeamSinogram,
    ConeSinogram,
    ForwardError,
    divergent_beam_forward,
    iter_cone_blocks,
    make_psi_grid,
    noise_rows,
    set_threads_from_env,
)
from .geometry import (
    GeometryError,
    direction_grid_from_descriptor,
    vertex_set_from_descriptor,
)
from .phantom import ImageGrid, Phantom, PhantomError, phantom_from_spec
from .recon import ReconConfig, ReconError, reconstruct
from .scenarios import SCENARIOS, Scenario, ScenarioError, get_scenario, parse_planes

log = logging.getLogger("wct")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 2, 3, 4
CONFIG_ERRORS = (ScenarioError, ReconError, GeometryError, PhantomError, ForwardError, FilterError, ValueError)

# default scenario for a bare (dim, k, kind) request
BASE = {
    (2, 1, "cone"): "fig3",
    (3, 0, "cone"): "fig8",
    (3, 2, "cone"): "fig10",
    (3, 1, "beam"): "fig13",
    (3, 2, "beam"): "fig15",
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


def load_phantom(text: str) -> Phantom:
    """Preset name, or a JSON file holding {dim, primitives: [{center, radius, density}]}."""
    path = Path(text)
    if path.suffix == ".json" or path.exists():
        try:
            return phantom_from_spec(json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read phantom definition {text}: {exc}") from exc
    return phantom_from_spec(text)


def parse_geometry(text: str) -> tuple[str, int | None]:
    kind, _, count = text.partition(":")
    if kind not in ("circle", "square", "sphere", "segment"):
        raise ConfigError(f"unknown geometry {kind!r}")
    try:
        return kind, int(count) if count else None
    except ValueError:
        raise ConfigError(f"bad vertex count in {text!r}") from None


def resolve_scenario(args) -> Scenario:
    """Scenario from --scenario, else from (--dim, --k, --kind), then flag overrides."""
    block = {}
    if getattr(args, "config", None):
        try:
            block = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run configuration: {exc}") from exc
    name = args.scenario or block.get("scenario")
    dim = args.dim or block.get("dim")
    k = args.k if args.k is not None else block.get("k")
    kind = args.kind or block.get("kind")
    if name:
        sc = get_scenario(name)
    else:
        if dim is None or k is None or kind is None:
            raise ConfigError("give --scenario, or all of --dim, --k and --kind")
        key = (int(dim), int(k), kind)
        if key not in BASE:
            raise ConfigError(f"(dim, k, kind) = {key} is not supported")
        sc = get_scenario(BASE[key])
    changes = {}
    for field_name, val in (("n", dim), ("k", k), ("kind", kind)):
        if val is not None and val != getattr(sc, field_name):
            changes[field_name] = int(val) if field_name != "kind" else val
    if changes:
        key = (changes.get("n", sc.n), changes.get("k", sc.k), changes.get("kind", sc.kind))
        if key not in BASE:
            raise ConfigError(f"(dim, k, kind) = {key} is not supported")
        base = get_scenario(BASE[key])
        sc = base.with_changes(name=f"{sc.name}-custom", noise=sc.noise)
    geometry = args.geometry or block.get("geometry")
    if geometry:
        gkind, count = parse_geometry(geometry)
        sc = sc.with_changes(geometry=gkind, vertices=count or sc.vertices)
    noise = args.noise if args.noise is not None else block.get("noise")
    if noise is not None:
        if noise < 0:
            raise ConfigError("noise level must be non-negative")
        sc = sc.with_changes(noise=float(noise))
    return sc


def scenario_phantom(args, sc: Scenario) -> Phantom:
    ph = load_phantom(args.phantom) if args.phantom else sc.make_phantom()
    if ph.dim != sc.n:
        raise ConfigError(f"phantom dimension {ph.dim} does not match n={sc.n}")
    return ph


def sinogram_meta(sc: Scenario, cfg: ReconConfig, phantom: Phantom, seed: int) -> dict:
    meta = {
        "n": sc.n,
        "k": sc.k,
        "scenario": sc.name,
        "phantom": phantom.to_dict(),
        "vertices": cfg.vertices.descriptor(),
        "axes": cfg.axes.descriptor(),
        "noise": sc.noise,
        "seed": seed,
    }
    if sc.kind == "cone":
        meta["psi_count"] = len(cfg.psi)
        meta["index_order"] = ["vertex", "axis", "psi"]
    else:
        meta["directions"] = cfg.directions.descriptor()
        meta["index_order"] = ["vertex", "direction"]
    return meta


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    sc = resolve_scenario(args)
    phantom = scenario_phantom(args, sc)
    cfg = sc.config()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{sc.name}.wct"
    meta = sinogram_meta(sc, cfg, phantom, args.seed)
    t0 = time.perf_counter()
    if sc.kind == "beam":
        beam = divergent_beam_forward(phantom, cfg.vertices, cfg.directions, sc.k)
        vals = beam.values
        if sc.noise:
            vals = vals + sc.noise * float(np.abs(vals).max()) * noise_rows(
                args.seed, 0, vals.shape[0], vals.shape[1:]
            )
        write_container(path, "beam", vals, meta)
    else:
        shape = (len(cfg.vertices), len(cfg.axes), len(cfg.psi))
        out = create_container(path, "cone", shape, meta)
        cmax = 0.0
        for a, b, block in iter_cone_blocks(phantom, cfg.vertices, cfg.axes, cfg.psi, sc.k, chunk=8):
            out[a:b] = block
            cmax = max(cmax, float(np.abs(block).max()))
        log.info("forward projection %.2fs", time.perf_counter() - t0)
        if sc.noise:
            scale = sc.noise * cmax
            for a in range(0, shape[0], 64):
                b = min(a + 64, shape[0])
                out[a:b] += scale * noise_rows(args.seed, a, b, shape[1:])
        out.flush()
        del out
    log.info("simulate %s -> %s (%.2fs)", sc.name, path, time.perf_counter() - t0)
    print(path)
    return EXIT_OK


def _sinogram_from_container(cont, header):
    for key in ("n", "k", "vertices", "axes"):
        if key not in header:
            raise ContainerError(f"container header lacks {key!r}")
    vertices = vertex_set_from_descriptor(header["vertices"])
    axes = direction_grid_from_descriptor(header["axes"])
    if cont.kind == "cone":
        psi = make_psi_grid(int(header["psi_count"]))
        expect = (len(vertices), len(axes), len(psi))
        if tuple(cont.values.shape) != expect:
            raise ContainerError(f"cone payload has dims {cont.values.shape}, expected {expect}")
        return ConeSinogram(header["k"], vertices, axes, psi, cont.values)
    if cont.kind == "beam":
        dirs = direction_grid_from_descriptor(header["directions"])
        expect = (len(vertices), len(dirs))
        if tuple(cont.values.shape) != expect:
            raise ContainerError(f"beam payload has dims {cont.values.shape}, expected {expect}")
        return BeamSinogram(header["k"], vertices, dirs, cont.values)
    raise ContainerError(f"cannot reconstruct from a {cont.kind!r} container")


def cmd_reconstruct(args) -> int:
    cont = read_container(args.input, mmap=True)
    header = cont.header
    sino = _sinogram_from_container(cont, header)
    n, k, kind = int(header["n"]), int(header["k"]), cont.kind
    if args.scenario:
        sc = get_scenario(args.scenario)
        if (sc.n, sc.k, sc.kind) != (n, k, kind):
            raise ContainerError(
                f"container holds ({n}, {k}, {kind}) data but scenario {sc.name} expects "
                f"({sc.n}, {sc.k}, {sc.kind})"
            )
    else:
        if (n, k, kind) not in BASE:
            raise ConfigError(f"(n, k, kind) = ({n}, {k}, {kind}) is not supported")
        sc = get_scenario(header.get("scenario") if header.get("scenario") in SCENARIOS else BASE[(n, k, kind)])
    if args.phantom:
        phantom = load_phantom(args.phantom)
    else:
        phantom = Phantom.from_dict(header["phantom"]) if "phantom" in header else sc.make_phantom()
    planes = parse_planes(args.planes) if args.planes else None
    grids = sc.image_grids(planes, args.grid)
    if args.volume and n == 3:
        size = args.grid or sc.grid
        grids = [ImageGrid(((-1.0, 1.0),) * 3, (size,) * 3)]
    cfg = ReconConfig(
        n, k, kind,
        vertices=sino.vertices,
        axes=direction_grid_from_descriptor(header["axes"]),
        psi=getattr(sino, "psi", None),
        directions=getattr(sino, "directions", None),
        grids=grids,
        noise=args.noise or 0.0,
        seed=args.seed,
        smooth=args.smooth,
        data_noise=float(header.get("noise", 0.0)),
    )
    cfg.validate()
    t0 = time.perf_counter()
    rec = reconstruct(cfg, sino, phantom if phantom.primitives else None)
    log.info("reconstruct %.2fs", time.perf_counter() - t0)
    write_outputs(Path(args.out), Path(args.input).stem, rec, cfg, phantom, header)
    if args.dump_g:
        g = rec.gtable
        meta = {"n": n, "k": k, "s": g.s.tolist(), "axes": header["axes"], "stage": "G"}
        write_container(Path(args.out) / f"{Path(args.input).stem}_gtable.wct", "gtable", g.values, meta)
    return EXIT_OK


def _plane_tag(grid: ImageGrid) -> str:
    if grid.fixed is None:
        return "image" if len(grid.shape) == 2 else "volume"
    return f"{'xyz'[grid.fixed[0]]}{grid.fixed[1]:g}"


def write_outputs(out_dir: Path, stem: str, rec, cfg: ReconConfig, phantom: Phantom, header: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    from .recon import metrics_multi, standard_profiles
    from .phantom import rasterize

    refs = rec.references or [rasterize(phantom, g) for g in cfg.grids]
    for img in rec.images:
        tag = _plane_tag(img)
        meta = {"n": cfg.n, "k": cfg.k, "source": header.get("scenario"), "grid": img.descriptor(),
                "noise": cfg.noise, "seed": cfg.seed, "smooth": cfg.smoothing_passes}
        write_container(out_dir / f"{stem}_{tag}.wct", "image", img.values, meta)
        if img.values.ndim == 2:
            write_pgm(out_dir / f"{stem}_{tag}.pgm", img.values)
            write_csv(
                out_dir / f"{stem}_{tag}_density.csv",
                ["a0", "a1", "value"],
                ((p[0], p[1], v) for p, v in zip(_plane_coords(img), img.values.ravel())),
            )
    if all(img.values.ndim == 2 for img in rec.images):
        profiles = rec.metrics.profiles or standard_profiles(rec.images, refs)
        for name, (c, rv, v) in profiles.items():
            safe = name.replace("=", "").replace(":", "_")
            write_profile_csv(out_dir / f"{stem}_profile_{safe}.csv", c, rv, v)
    if phantom.primitives:
        met = rec.metrics if rec.references else metrics_multi(rec.images, refs, phantom, cfg.jump_band)
        rows = met.rows()
    else:
        rows = [("rel_l2", float("nan"))]
    write_csv(out_dir / f"{stem}_metrics.csv", ["metric", "value"], rows)
    for name, value in rows:
        log.info("%s = %.6g", name, value)


def _plane_coords(img: ImageGrid) -> np.ndarray:
    a0, a1 = img.coords()
    m0, m1 = np.meshgrid(a0, a1, indexing="ij")
    return np.stack([m0.ravel(), m1.ravel()], axis=1)


def cmd_verify(args) -> int:
    results = verify.run_suite(args.suite, args.out, args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        flag = "PASS" if r.passed else "FAIL"
        print(f"{flag}  {r.name:<{width}}  {r.value:.6g}  (threshold {r.threshold:g})  {r.note}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def list_scenarios() -> int:
    for sc in SCENARIOS.values():
        print(f"{sc.name:<6} n={sc.n} k={sc.k} {sc.kind:<4}  {sc.counts}  {sc.title}")
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wct", description="Weighted cone and divergent beam tomography")
    p.add_argument("--list-scenarios", action="store_true", help="list named scenarios and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-stage timings")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--scenario", help="named scenario, see --list-scenarios")
        sp.add_argument("--phantom", help="preset name or JSON definition file")
        sp.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
        sp.add_argument("--noise", type=float, help="Gaussian noise level (fraction of max |data|)")
        sp.add_argument("--out", default=".", help="output directory")

    s = sub.add_parser("simulate", help="write a forward sinogram container")
    common(s)
    s.add_argument("--config", help="JSON run configuration")
    s.add_argument("--geometry", help="vertex geometry, kind[:count]")
    s.add_argument("--dim", type=int, choices=(2, 3))
    s.add_argument("--k", type=int, choices=(0, 1, 2))
    s.add_argument("--kind", choices=("cone", "beam"))
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", help="reconstruct from a sinogram container")
    common(r)
    r.add_argument("input", help="sinogram container")
    r.add_argument("--smooth", type=int, help="binomial pre-smoothing passes")
    r.add_argument("--grid", type=int, help="samples per image axis")
    r.add_argument("--planes", help="3D sections, e.g. x=0,y=0,z=0.25")
    r.add_argument("--volume", action="store_true", help="3D: full volume instead of sections")
    r.add_argument("--dump-g", action="store_true", help="also write the G table container")
    r.set_defaults(func=cmd_reconstruct)

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--suite", default="all", choices=verify.SUITES + ("all",))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None, help="directory for the CSV report and containers")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    set_threads_from_env()
    if args.list_scenarios:
        return list_scenarios()
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ContainerError, OSError) as exc:
        print(f"wct: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, *CONFIG_ERRORS) as exc:
        print(f"wct: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
