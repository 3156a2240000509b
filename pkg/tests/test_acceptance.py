"""Acceptance criteria 1-11 at their stated tolerances.

Every criterion records its measured values; the pass/fail line per criterion
is printed in the pytest terminal summary.
"""

import shutil
import subprocess
import sys
import time
from pathlib import Path

import pytest
from conftest import record

from wct import verify
from wct.verify import diagonal_artifact, plateau_means_2d, profile_bounds, profile_signs_ok

pytestmark = pytest.mark.slow

BAND = 0.025  # half-width of the 0.05-wide jump bands on 3D profiles
MINUTE = 60.0


@pytest.fixture(scope="module")
def path_cache():
    return {}


def test_c01_forward_exactness():
    t0 = time.perf_counter()
    res = verify.check_forward(seed=0, count=1000)
    dt = time.perf_counter() - t0
    ok = record(1, all(r.value <= 1e-8 for r in res) and dt < 10, ", ".join(f"{r.name} {r.value:.2e}" for r in res) + f", {dt:.1f}s")
    assert ok


def test_c02_remark_identity():
    res = verify.check_remark42(seed=0, count=50, n_phi=360)
    ok = record(2, all(r.value <= 0.01 for r in res), ", ".join(f"{r.name} {r.value:.2e}" for r in res))
    assert ok


@pytest.mark.parametrize("case", verify.EQUIV_CASES, ids=lambda c: f"{c[2]}-{c[0]}d-k{c[1]}")
def test_c03_g_equivalence(case, path_cache):
    t0 = time.perf_counter()
    (res,) = verify.check_g_equivalence([case], cache=path_cache)
    dt = time.perf_counter() - t0
    ok = record(3, res.value <= 0.02 and dt < 5 * MINUTE, f"{res.name} {res.value:.4f}, {res.note} ({dt:.0f}s)")
    assert ok


@pytest.mark.parametrize("case", verify.EQUIV_CASES, ids=lambda c: f"{c[2]}-{c[0]}d-k{c[1]}")
def test_c04_vertex_plane_invariance(case, path_cache):
    (res,) = verify.check_invariance([case], cache=path_cache)
    ok = record(4, res.value <= 0.01, f"{res.name} {res.value:.4f}")
    assert ok


def check_2d(criterion, name, run):
    rel = run.rec.metrics.rel_l2
    plateaus = plateau_means_2d(run.rec, run.phantom)
    plateau_ok = set(plateaus) == {0.5, -0.5} and all(abs(m - lvl) <= 0.10 for lvl, m in plateaus.items())
    ok = rel <= 0.20 and plateau_ok and run.seconds <= 10 * MINUTE
    means = ", ".join(f"{m:+.3f}" for _, m in sorted(plateaus.items()))
    return record(criterion, ok, f"{name} rel-L2 {rel:.3f} plateaus [{means}] {run.seconds:.0f}s")


def test_c05_circle_2d(fig3):
    assert check_2d(5, "fig3", fig3)


def test_c06_square_2d(fig4, fig4_beta):
    ok = check_2d(6, "fig4", fig4)
    art = [diagonal_artifact(fig4_beta[m].rec, fig4_beta[m].phantom) for m in (400, 800, 1600)]
    mono = art[0] > art[1] > art[2]
    ok &= record(6, mono, "diagonal artifact beta 400/800/1600: " + " > ".join(f"{a:.4f}" for a in art))
    assert ok


def check_3d(criterion, name, run):
    rel = run.rec.metrics.rel_l2
    pb = profile_bounds(run.rec, run.phantom, BAND)
    ok = rel <= 0.20 and pb["inside"] <= 0.15 and pb["outside"] <= 0.15 and run.seconds <= 60 * MINUTE
    detail = f"{name} rel-L2 {rel:.3f} profile dev in {pb['inside']:.3f} out {pb['outside']:.3f} {run.seconds:.0f}s"
    return record(criterion, ok, detail)


def test_c07_cone_3d_k0(fig8):
    assert check_3d(7, "fig8", fig8)


def test_c07_cone_3d_k2(fig10_fig12):
    assert check_3d(7, "fig10", fig10_fig12[0])


def test_c08_beam_3d_k1(fig13):
    assert check_3d(8, "fig13", fig13)


def test_c08_beam_3d_k2(fig15):
    assert check_3d(8, "fig15", fig15)


def check_noisy(name, run, band):
    rel = run.rec.metrics.rel_l2
    signs = profile_signs_ok(run.rec, run.phantom, band)
    return record(9, rel <= 0.35 and signs, f"{name} rel-L2 {rel:.3f} signs {'ok' if signs else 'WRONG'}")


def test_c09_noise_2d(fig5):
    assert check_noisy("fig5", fig5, 0.05)


def test_c09_noise_2d_square():
    from conftest import run_scenario

    assert check_noisy("fig6", run_scenario("fig6", seed=2024), 0.05)


def test_c09_noise_3d(fig10_fig12):
    assert check_noisy("fig12", fig10_fig12[1], BAND)


def test_c10_tuy():
    res = {r.name: r for r in verify.check_tuy(seed=0)}
    ok = all(r.passed for r in res.values()) and "1*x2 = 0.25" in res["tuy/segment"].note
    record(10, ok, "; ".join(f"{r.name}: {r.note}" for r in res.values()))
    assert ok


def test_c11_determinism(tmp_path):
    exe = shutil.which("wct")
    cmd = [exe] if exe else [sys.executable, "-m", "wct.cli"]
    runs = []
    for d in ("first", "second"):
        out = tmp_path / d
        proc = subprocess.run(cmd + ["verify", "--suite", "all", "--seed", "5", "--out", str(out)], capture_output=True)
        # exit 4 flags a failed check; the outputs must still be reproducible
        assert proc.returncode in (0, 4), proc.stderr.decode()
        runs.append({p.relative_to(out): p.read_bytes() for p in sorted(Path(out).rglob("*")) if p.is_file()})
    same = runs[0].keys() == runs[1].keys() and all(runs[0][k] == runs[1][k] for k in runs[0])
    record(11, same, f"{len(runs[0])} files compared byte for byte")
    assert same
