"""Forward projectors: weighted divergent beam, weighted cone and Radon sinograms.

All values come from exact chord integrals of the ball/disk primitives; the
only quadrature is the azimuthal integral around the cone in 3D.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Iterator

import numba
import numpy as np

from .geometry import DirectionGrid, VertexSet
from .phantom import Phantom, beam_integrals, radon_table

log = logging.getLogger(__name__)

SUPPORTED_K = (0, 1, 2)
CONE_METHODS = ("arc", "trapezoid")


class ForwardError(ValueError):
    pass


@dataclass
class BeamSinogram:
    k: int
    vertices: VertexSet
    directions: DirectionGrid
    values: np.ndarray  # (vertex, direction)


@dataclass
class ConeSinogram:
    k: int
    vertices: VertexSet
    axes: DirectionGrid
    psi: np.ndarray
    values: np.ndarray  # (vertex, axis, psi)


@dataclass
class RadonSinogram:
    axes: DirectionGrid
    s: np.ndarray
    values: np.ndarray  # (axis, s)


def make_psi_grid(count: int) -> np.ndarray:
    """Cell-centred opening angles in (0, pi)."""
    if count < 2:
        raise ForwardError("need at least two opening angles")
    return (np.arange(count) + 0.5) * math.pi / count


def set_threads_from_env() -> None:
    cap = os.environ.get("WCT_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


def _check_k(k: int) -> None:
    if k not in SUPPORTED_K:
        raise ForwardError(f"k must be one of {SUPPORTED_K}, got {k}")


def divergent_beam_forward(
    phantom: Phantom,
    vertices: VertexSet,
    directions: DirectionGrid,
    k: int,
    chunk: int = 64,
) -> BeamSinogram:
    _check_k(k)
    out = np.empty((len(vertices), len(directions)))
    for start in range(0, len(vertices), chunk):
        stop = min(start + chunk, len(vertices))
        out[start:stop] = beam_integrals(phantom, vertices.points[start:stop], directions.nodes, k)
    return BeamSinogram(k, vertices, directions, out)


def radon_forward(phantom: Phantom, axes: DirectionGrid, s: np.ndarray) -> RadonSinogram:
    s = np.asarray(s, dtype=float)
    return RadonSinogram(axes, s, radon_table(phantom, axes.nodes, s))


# ---------------------------------------------------------------- 2D cones


def _cone_block_2d(phantom, u, axes, psi, k):
    phi = np.arctan2(axes.nodes[:, 1], axes.nodes[:, 0])
    ang_p = (phi[:, None] + psi[None, :]).ravel()
    ang_m = (phi[:, None] - psi[None, :]).ravel()
    dirs = np.concatenate(
        [np.stack([np.cos(ang_p), np.sin(ang_p)], 1), np.stack([np.cos(ang_m), np.sin(ang_m)], 1)]
    )
    d = beam_integrals(phantom, u, dirs, k)
    half = len(ang_p)
    # a 2D cone is the pair of rays at +-psi about the axis
    return (d[:, :half] + d[:, half:]).reshape(len(u), len(phi), len(psi))


# ---------------------------------------------------------------- 3D cones


@numba.njit(cache=True, fastmath=False)
def _chord_weight(p, L2, r2, k):
    disc = p * p - L2 + r2
    if disc <= 0.0:
        return 0.0
    root = math.sqrt(disc)
    exit_ = p + root
    if exit_ <= 0.0:
        return 0.0
    enter = p - root
    if enter < 0.0:
        enter = 0.0
    return (exit_ ** (k + 1) - enter ** (k + 1)) / (k + 1)


@numba.njit(cache=True)
def _ring_integral(cA, sR, L2, r2, k, phi0, method, n_phi, gl_t, gl_w):
    """Integral over phi in [0, 2pi) of the chord weight with p = cA + sR cos(phi - phi0)."""
    if L2 >= r2:
        pmin = math.sqrt(L2 - r2)
        if cA + sR <= pmin:
            return 0.0
        full = cA - sR >= pmin
    else:
        full = True
    two_pi = 2.0 * math.pi
    dphi = two_pi / n_phi
    if full:
        acc = 0.0
        for j in range(n_phi):
            acc += _chord_weight(cA + sR * math.cos(j * dphi - phi0), L2, r2, k)
        return acc * dphi
    q = (pmin - cA) / sR
    if q >= 1.0:
        return 0.0
    half = math.acos(q)
    if method == 0:
        # Gauss on the hit arc, x = half * sin(t) absorbs the tangency square root
        acc = 0.0
        for i in range(gl_t.shape[0]):
            t = gl_t[i]
            x = half * math.sin(t)
            acc += gl_w[i] * math.cos(t) * _chord_weight(cA + sR * math.cos(x), L2, r2, k)
        return 2.0 * half * acc
    # trapezoid on the periodic grid phi_j = j*dphi; only nodes inside the arc are nonzero
    j0 = int(math.ceil((phi0 - half) / dphi))
    j1 = int(math.floor((phi0 + half) / dphi))
    acc = 0.0
    for j in range(j0, j1 + 1):
        acc += _chord_weight(cA + sR * math.cos(j * dphi - phi0), L2, r2, k)
    return acc * dphi


@numba.njit(cache=True)
def _cone_block_3d(us, betas, e1s, e2s, psi, centers, radii, dens, k, method, n_phi, gl_t, gl_w):
    M = us.shape[0]
    B = betas.shape[0]
    P = psi.shape[0]
    out = np.zeros((M, B, P))
    cpsi = np.cos(psi)
    spsi = np.sin(psi)
    for m in range(M):
        for b in range(B):
            for c in range(centers.shape[0]):
                w0 = centers[c, 0] - us[m, 0]
                w1 = centers[c, 1] - us[m, 1]
                w2 = centers[c, 2] - us[m, 2]
                L2 = w0 * w0 + w1 * w1 + w2 * w2
                r2 = radii[c] * radii[c]
                A = betas[b, 0] * w0 + betas[b, 1] * w1 + betas[b, 2] * w2
                a = e1s[b, 0] * w0 + e1s[b, 1] * w1 + e1s[b, 2] * w2
                bb = e2s[b, 0] * w0 + e2s[b, 1] * w1 + e2s[b, 2] * w2
                R = math.sqrt(a * a + bb * bb)
                phi0 = math.atan2(bb, a)
                for j in range(P):
                    val = _ring_integral(
                        cpsi[j] * A, spsi[j] * R, L2, r2, k, phi0, method, n_phi, gl_t, gl_w
                    )
                    out[m, b, j] += dens[c] * spsi[j] * val
    return out


def axis_frames(betas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (e1, e2) completing each axis beta to a right-handed frame."""
    ref = np.where(np.abs(betas[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.cross(ref, betas)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(betas, e1)
    return e1, e2


def _gauss_half_pi(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) * math.pi / 4.0, w * math.pi / 4.0


def cone_block(
    phantom: Phantom,
    u: np.ndarray,
    axes: DirectionGrid,
    psi: np.ndarray,
    k: int,
    *,
    method: str = "arc",
    n_phi: int = 360,
    n_gauss: int = 16,
) -> np.ndarray:
    """Cone values for a block of vertices: (len(u), len(axes), len(psi))."""
    _check_k(k)
    psi = np.asarray(psi, dtype=float)
    if psi.size and (psi.min() <= 0.0 or psi.max() >= math.pi):
        raise ForwardError("opening angles must lie strictly inside (0, pi)")
    if phantom.dim == 2:
        return _cone_block_2d(phantom, u, axes, psi, k)
    if method not in CONE_METHODS:
        raise ForwardError(f"unknown cone quadrature {method!r}")
    centers, radii, dens = phantom.arrays()
    e1, e2 = axis_frames(axes.nodes)
    gl_t, gl_w = _gauss_half_pi(n_gauss)
    return _cone_block_3d(
        np.ascontiguousarray(u, dtype=float),
        np.ascontiguousarray(axes.nodes),
        e1,
        e2,
        psi,
        centers,
        radii,
        dens,
        k,
        0 if method == "arc" else 1,
        n_phi,
        gl_t,
        gl_w,
    )


def iter_cone_blocks(
    phantom: Phantom,
    vertices: VertexSet,
    axes: DirectionGrid,
    psi: np.ndarray,
    k: int,
    *,
    chunk: int = 16,
    **quad,
) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield (start, stop, values) over vertex blocks without holding the full sinogram."""
    for start in range(0, len(vertices), chunk):
        stop = min(start + chunk, len(vertices))
        yield start, stop, cone_block(phantom, vertices.points[start:stop], axes, psi, k, **quad)


def cone_forward(
    phantom: Phantom,
    vertices: VertexSet,
    axes: DirectionGrid,
    psi: np.ndarray,
    k: int,
    *,
    out: np.ndarray | None = None,
    chunk: int = 16,
    **quad,
) -> ConeSinogram:
    """Weighted cone transform on the (vertex, axis, psi) grid.

    n=2: sum of the two beam values at axis rotated by +-psi.
    n=3: sin(psi) times the azimuthal integral of beam values around the cone.
    ``out`` may be a preallocated (e.g. memory-mapped) array.
    """
    psi = np.asarray(psi, dtype=float)
    shape = (len(vertices), len(axes), len(psi))
    if out is None:
        out = np.empty(shape)
    elif out.shape != shape:
        raise ForwardError("output array has wrong shape")
    for start, stop, block in iter_cone_blocks(
        phantom, vertices, axes, psi, k, chunk=chunk, **quad
    ):
        out[start:stop] = block
    return ConeSinogram(k, vertices, axes, psi, out)


# ---------------------------------------------------------------- noise


def row_generator(seed: int, row: int) -> np.random.Generator:
    """Independent stream for one vertex row, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(row,)))


def noise_rows(seed: int, start: int, stop: int, row_shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal samples for rows [start, stop), reproducible per row."""
    return np.stack([row_generator(seed, i).standard_normal(row_shape) for i in range(start, stop)])


def add_noise(values: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Add zero-mean Gaussian noise with std = level * max|values|."""
    if level < 0:
        raise ForwardError("noise level must be non-negative")
    values = np.asarray(values, dtype=float)
    if level == 0:
        return values.copy()
    scale = level * float(np.abs(values).max())
    return values + scale * noise_rows(seed, 0, values.shape[0], values.shape[1:])
