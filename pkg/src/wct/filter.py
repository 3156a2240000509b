"""From sinograms to the filtered plane function.

The intermediate function G(s, beta) = (R_beta f * h)(s) is assembled from
cone, beam or Radon data, resampled on a uniform s-grid, differentiated
k+1 times in s and, for even n, Hilbert transformed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.signal import fftconvolve
from scipy.spatial import ConvexHull, cKDTree

from .forward import BeamSinogram, ConeSinogram, RadonSinogram, axis_frames
from .geometry import DirectionGrid, VertexSet

log = logging.getLogger(__name__)

KINDS = ("sign", "abs", "delta")
RING_NODES = 720


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    """Classification of the homogeneous kernel h for a given (n, k).

    sign: h(t) = scale |t|^(k-n+1) sgn t;  abs: h(t) = scale |t|^(k-n+1);
    delta: h = delta^(order) with order = n - k - 2.
    """

    n: int
    k: int
    kind: str
    order: int = 0
    scale: float = 1.0

    @property
    def degree(self) -> int:
        return self.k - self.n + 1

    def h(self, t):
        if self.kind == "delta":
            raise FilterError("delta kernels have no pointwise values")
        t = np.asarray(t, dtype=float)
        mag = np.abs(t) ** self.degree if self.degree else np.ones_like(t)
        if self.kind == "sign":
            return self.scale * mag * np.sign(t)
        return self.scale * mag


def weight_h(n: int, k: int) -> FilterSpec:
    if n not in (2, 3) or k not in (0, 1, 2):
        raise FilterError(f"unsupported (n, k) = ({n}, {k})")
    if k <= n - 2:
        return FilterSpec(n, k, "delta", order=n - k - 2)
    scale = 1.0 / (2.0 * math.factorial(k - n + 1))
    kind = "sign" if (k - n) % 2 else "abs"
    return FilterSpec(n, k, kind, scale=scale)


@dataclass
class GTable:
    axes: DirectionGrid
    s: np.ndarray
    values: np.ndarray  # (axis, s)
    counts: np.ndarray | None = None  # samples per bin
    filled: np.ndarray | None = None  # bins filled by interpolation
    meta: dict = field(default_factory=dict)

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    def with_values(self, values: np.ndarray, s: np.ndarray | None = None) -> "GTable":
        return replace(self, values=values, s=self.s if s is None else s)


# Filtered tables carry the same grid; the alias keeps call sites readable.
FilteredTable = GTable


def make_s_grid(count: int = 129, s_max: float = 1.0) -> np.ndarray:
    if count < 3:
        raise FilterError("s-grid needs at least 3 nodes")
    return np.linspace(-s_max, s_max, count)


def geometry_radius(vertices: VertexSet) -> float:
    """Radius of the largest centred ball enclosed by the vertex geometry."""
    if vertices.kind == "square":
        return vertices.params["side"] / 2.0
    if vertices.kind in ("circle", "sphere"):
        return vertices.params["radius"]
    return float(np.linalg.norm(vertices.points, axis=1).max())


# ---------------------------------------------------------------- finite differences


def fd_weights(offsets, order: int) -> np.ndarray:
    """Weights w with sum_j w_j g(x0 + offsets_j) ~ g^(order)(x0)."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    if n <= order:
        raise FilterError("not enough points for the requested derivative")
    V = np.vander(x, n, increasing=True).T / np.array([math.factorial(p) for p in range(n)])[:, None]
    rhs = np.zeros(n)
    rhs[order] = 1.0
    return np.linalg.solve(V, rhs)


_CENTRAL = {
    1: np.array([-0.5, 0.0, 0.5]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
}


def _derivative(values: np.ndarray, ds: float, order: int) -> np.ndarray:
    S = values.shape[-1]
    if order == 0:
        return values.copy()
    if order not in _CENTRAL:
        raise FilterError("derivative order must be 1, 2 or 3")
    if S < order + 2:
        raise FilterError("s-grid too small for the requested derivative")
    stencil = _CENTRAL[order]
    half = len(stencil) // 2
    out = np.zeros_like(values)
    for j, w in enumerate(stencil):
        if w:
            out[..., half : S - half] += w * values[..., j : S - 2 * half + j]
    npts = order + 2
    for i in range(half):
        out[..., i] = values[..., i : i + npts] @ fd_weights(np.arange(npts) - i, order)
        j = S - 1 - i
        out[..., j] = values[..., S - npts : S] @ fd_weights(np.arange(npts) - (npts - 1 - i), order)
    return out / ds**order


def derivative_s(table: GTable, order: int) -> GTable:
    """Central second-order differences in s, one-sided at the ends."""
    return table.with_values(_derivative(table.values, table.ds, order))


def binomial_smooth(table: GTable, passes: int = 1) -> GTable:
    """5-point binomial smoothing along s, edges held by replication."""
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    v = table.values
    for _ in range(passes):
        p = np.pad(v, [(0, 0)] * (v.ndim - 1) + [(2, 2)], mode="edge")
        v = sum(w * p[..., j : j + v.shape[-1]] for j, w in enumerate(kernel))
    return table.with_values(v)


def hilbert_rows(values: np.ndarray, pad_factor: int = 4) -> np.ndarray:
    """Discrete Hilbert transform along the last axis via the -i sgn(freq) multiplier.

    Rows are zero-padded to at least ``pad_factor`` times their length;
    ``pad_factor=1`` treats rows as periodic.
    """
    S = values.shape[-1]
    n = S if pad_factor <= 1 else 1 << int(math.ceil(math.log2(pad_factor * S)))
    spec = np.fft.rfft(values, n=n, axis=-1)
    mult = -1j * np.ones(spec.shape[-1])
    mult[0] = 0.0
    if n % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(spec * mult, n=n, axis=-1)[..., :S]


def hilbert(table: GTable, pad_factor: int = 4) -> GTable:
    return table.with_values(hilbert_rows(table.values, pad_factor))


# ---------------------------------------------------------------- per-vertex inner integrals


def _t_stencil(psi: np.ndarray, order: int):
    """Indices of the psi samples nearest pi/2 and FD weights for d^order/dt^order at t=0."""
    npts = 2 * math.ceil((order + 1) / 2)
    idx = np.sort(np.argsort(np.abs(psi - math.pi / 2))[:npts])
    t = np.cos(psi[idx])
    return idx, fd_weights(t, order)


def cone_inner(values: np.ndarray, psi: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Inner integral over opening angles for a block of cone data -> (vertex, axis)."""
    if len(psi) == 0:
        raise FilterError("empty psi grid")
    if spec.kind == "delta":
        idx, w = _t_stencil(psi, spec.order)
        # C(t)/sqrt(1-t^2) with t = cos psi; sqrt(1 - t^2) = sin psi
        g = values[..., idx] / np.sin(psi[idx])
        return g @ w
    dpsi = math.pi / len(psi)
    weights = spec.h(-np.cos(psi)) * dpsi
    return values @ weights


def cone_inner_indices(psi: np.ndarray, spec: FilterSpec) -> np.ndarray | None:
    """psi indices the inner integral actually reads (None means all)."""
    if spec.kind == "delta":
        return _t_stencil(psi, spec.order)[0]
    return None


def _interp_matrix(nodes: np.ndarray, query: np.ndarray, method: str) -> sparse.csr_matrix:
    """Sparse (len(query), len(nodes)) matrix interpolating node values at query directions."""
    Q, K = len(query), len(nodes)
    if nodes.shape[1] == 2:
        ang = np.mod(np.arctan2(nodes[:, 1], nodes[:, 0]), 2 * math.pi)
        order = np.argsort(ang)
        a = ang[order]
        qa = np.mod(np.arctan2(query[:, 1], query[:, 0]), 2 * math.pi)
        hi = np.searchsorted(a, qa) % K
        lo = (hi - 1) % K
        gap = np.mod(a[hi] - a[lo], 2 * math.pi)
        frac = np.mod(qa - a[lo], 2 * math.pi) / gap
        rows = np.repeat(np.arange(Q), 2)
        cols = np.stack([order[lo], order[hi]], 1).ravel()
        vals = np.stack([1 - frac, frac], 1).ravel()
        return sparse.csr_matrix((vals, (rows, cols)), shape=(Q, K))
    if method == "idw":
        dist, idx = cKDTree(nodes).query(query, k=4)
        w = 1.0 / np.maximum(dist, 1e-12) ** 2
        w /= w.sum(axis=1, keepdims=True)
        rows = np.repeat(np.arange(Q), 4)
        return sparse.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(Q, K))
    if method == "linear":
        hull = ConvexHull(nodes)
        tri = hull.simplices
        # locate each query ray in a hull facet via the nearest node's incident facets
        _, near = cKDTree(nodes).query(query, k=1)
        incident = [[] for _ in range(K)]
        for f, (a, b, c) in enumerate(tri):
            incident[a].append(f)
            incident[b].append(f)
            incident[c].append(f)
        rows, cols, vals = [], [], []
        for q in range(Q):
            best, best_bc = None, None
            for f in incident[near[q]]:
                bc = np.linalg.solve(nodes[tri[f]].T, query[q])
                if bc.min() >= -1e-12:
                    best, best_bc = f, bc
                    break
                if best is None or bc.min() > best_bc.min():
                    best, best_bc = f, bc
            bc = np.clip(best_bc, 0.0, None)
            bc /= bc.sum()
            rows += [q] * 3
            cols += list(tri[best])
            vals += list(bc)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(Q, K))
    raise FilterError(f"unknown interpolation {method!r}")


def ring_matrix(
    directions: DirectionGrid,
    axes: DirectionGrid,
    t: float = 0.0,
    n_ring: int = RING_NODES,
    interp: str = "idw",
) -> sparse.csr_matrix:
    """(K, B) matrix: column b integrates beam values over {sigma : sigma.beta_b = t}.

    The ring integral is taken w.r.t. dphi (3D) so that
    sum_sigma D(sigma) M[sigma, b] ~ int D(sigma) delta(sigma.beta - t) dsigma.
    """
    n = directions.dim
    B = len(axes)
    if n == 3:
        if len(directions) < 1000:
            raise FilterError("direction grid too coarse for great-circle interpolation")
        e1, e2 = axis_frames(axes.nodes)
        phi = 2 * math.pi * np.arange(n_ring) / n_ring
        st = math.sqrt(max(1.0 - t * t, 0.0))
        pts = (
            t * axes.nodes[:, None, :]
            + st * (np.cos(phi)[None, :, None] * e1[:, None, :] + np.sin(phi)[None, :, None] * e2[:, None, :])
        ).reshape(-1, 3)
        weight = 2 * math.pi / n_ring
    else:
        st = math.sqrt(max(1.0 - t * t, 0.0))
        perp = np.stack([-axes.nodes[:, 1], axes.nodes[:, 0]], 1)
        pts = np.stack([t * axes.nodes + st * perp, t * axes.nodes - st * perp], 1).reshape(-1, 2)
        n_ring = 2
        weight = 1.0 / st
    A = _interp_matrix(directions.nodes, pts, interp)  # (B*n_ring, K)
    col_of_row = np.repeat(np.arange(B), n_ring)
    S = sparse.csr_matrix(
        (np.full(len(col_of_row), weight), (np.arange(len(col_of_row)), col_of_row)),
        shape=(len(col_of_row), B),
    )
    return (A.T @ S).tocsr()


def cell_sign(t: np.ndarray, directions: DirectionGrid) -> np.ndarray:
    """Mean of sgn(sigma'.beta) over the cell of each node, rows = nodes.

    ``t`` holds sigma.beta per (node, axis). Cells are modelled as arcs of
    length w (n=2) or flat disks of area w (n=3) centred on the node.
    """
    w = directions.weights[:, None]
    d = np.arcsin(np.clip(t, -1.0, 1.0))
    if directions.dim == 2:
        return np.clip(d / (0.5 * w), -1.0, 1.0)
    a = np.arccos(np.clip(1.0 - w / (2.0 * math.pi), -1.0, 1.0))
    x = np.clip(d / a, -1.0, 1.0)
    return (2.0 / math.pi) * (np.arcsin(x) + x * np.sqrt(1.0 - x * x))


def beam_weight_matrix(
    directions: DirectionGrid,
    axes: DirectionGrid,
    spec: FilterSpec,
    *,
    interp: str = "idw",
    ring_dt: float = 0.02,
    cell_average: bool = True,
):
    """Matrix W with inner = D @ W for beam data D (vertex, direction).

    A degree-0 sign kernel is averaged over each node's quadrature cell
    instead of sampled at the node; point sampling makes the weights jump
    as nodes cross the plane sigma.beta = 0, which the k+1 derivatives
    amplify into visible noise.
    """
    if spec.kind != "delta":
        t = -(directions.nodes @ axes.nodes.T)
        if spec.kind == "sign" and spec.degree == 0 and cell_average:
            return spec.scale * cell_sign(t, directions) * directions.weights[:, None]
        return spec.h(t) * directions.weights[:, None]
    if spec.order == 0:
        return ring_matrix(directions, axes, 0.0, interp=interp)
    # <delta^(m)(-t), I(t)> = I^(m)(0) for the ring integral I(t)
    npts = 2 * math.ceil((spec.order + 1) / 2)
    ts = (np.arange(npts) - (npts - 1) / 2) * ring_dt
    w = fd_weights(ts, spec.order)
    W = None
    for ti, wi in zip(ts, w):
        M = wi * ring_matrix(directions, axes, float(ti), interp=interp)
        W = M if W is None else W + M
    return W


def beam_inner(
    values: np.ndarray, directions: DirectionGrid, axes: DirectionGrid, spec: FilterSpec, **kw
) -> np.ndarray:
    W = beam_weight_matrix(directions, axes, spec, **kw)
    if sparse.issparse(W):
        return np.asarray((W.T @ values.T).T)
    return values @ W


# ---------------------------------------------------------------- resampling onto the s-grid


def assemble_g(
    vertices: np.ndarray,
    axes: DirectionGrid,
    inner: np.ndarray,
    s: np.ndarray,
    method: str = "bin",
) -> GTable:
    """Resample per-vertex values G(u.beta, beta) onto the uniform s-grid.

    ``bin``: average samples falling into each s-bin, fill empty bins by
    linear interpolation (flagged in ``filled``).
    ``interp``: piecewise-linear interpolation of the sorted samples.
    Outside the sampled range the edge value is held.
    """
    B, S = len(axes), len(s)
    if inner.shape != (len(vertices), B):
        raise FilterError("inner integrals do not match vertices x axes")
    svals = vertices @ axes.nodes.T  # (M, B)
    ds = s[1] - s[0]
    out = np.zeros((B, S))
    counts = np.zeros((B, S), dtype=np.int64)
    filled = np.zeros((B, S), dtype=bool)
    if method == "bin":
        idx = np.rint((svals - s[0]) / ds).astype(np.int64)
        ok = (idx >= 0) & (idx < S)
        flat = (idx + S * np.arange(B)[None, :])[ok]
        sums = np.bincount(flat, weights=inner[ok], minlength=B * S).reshape(B, S)
        counts = np.bincount(flat, minlength=B * S).reshape(B, S)
        for b in range(B):
            have = counts[b] > 0
            if not have.any():
                raise FilterError(f"no vertex samples for axis {b}")
            out[b, have] = sums[b, have] / counts[b, have]
            out[b, ~have] = np.interp(s[~have], s[have], out[b, have])
            filled[b] = ~have
    elif method == "interp":
        for b in range(B):
            order = np.argsort(svals[:, b], kind="stable")
            sv, gv = svals[order, b], inner[order, b]
            uniq, start = np.unique(np.round(sv, 12), return_index=True)
            gm = np.add.reduceat(gv, start) / np.diff(np.append(start, len(sv)))
            out[b] = np.interp(s, uniq, gm)
            counts[b] = np.histogram(sv, bins=S, range=(s[0] - ds / 2, s[-1] + ds / 2))[0]
    else:
        raise FilterError(f"unknown resampling method {method!r}")
    return GTable(axes, s, out, counts, filled)


def _vertex_points(sino) -> np.ndarray:
    return sino.vertices.points


def g_from_cone(
    cone: ConeSinogram, spec: FilterSpec, s: np.ndarray, method: str = "bin", chunk: int = 64
) -> GTable:
    if len(cone.psi) == 0:
        raise FilterError("empty psi grid")
    if spec.n != cone.vertices.dim or spec.k != cone.k:
        raise FilterError("filter spec does not match the sinogram")
    M = len(cone.vertices)
    inner = np.empty((M, len(cone.axes)))
    for a in range(0, M, chunk):
        b = min(a + chunk, M)
        inner[a:b] = cone_inner(np.asarray(cone.values[a:b]), cone.psi, spec)
    return assemble_g(_vertex_points(cone), cone.axes, inner, s, method)


def g_from_beam(
    beam: BeamSinogram,
    spec: FilterSpec,
    s: np.ndarray,
    axes: DirectionGrid,
    method: str = "bin",
    **kw,
) -> GTable:
    if spec.n != beam.vertices.dim or spec.k != beam.k:
        raise FilterError("filter spec does not match the sinogram")
    inner = beam_inner(np.asarray(beam.values), beam.directions, axes, spec, **kw)
    return assemble_g(_vertex_points(beam), axes, inner, s, method)


def g_from_radon(radon: RadonSinogram, spec: FilterSpec, tol: float = 1e-12) -> GTable:
    """G = Rf * h on the sinogram's own s-grid."""
    vals = radon.values
    scale = max(float(np.abs(vals).max()), 1e-300)
    if spec.kind != "delta" and np.abs(vals[:, [0, -1]]).max() > tol * scale:
        raise FilterError("Radon s-grid does not cover the support; pad it")
    s = radon.s
    ds = float(s[1] - s[0])
    table = GTable(radon.axes, s, vals.copy(), np.ones(vals.shape, dtype=np.int64))
    if spec.kind == "delta":
        return derivative_s(table, spec.order) if spec.order else table
    S = len(s)
    kern = spec.h(ds * np.arange(-(S - 1), S)) * ds
    full = fftconvolve(vals, kern[None, :], axes=-1)
    return table.with_values(full[:, S - 1 : 2 * S - 1])


# ---------------------------------------------------------------- full filter chain


def taper(table: GTable, radius: float) -> GTable:
    return table.with_values(np.where(np.abs(table.s) <= radius, table.values, 0.0))


def filter_table(
    g: GTable,
    spec: FilterSpec,
    *,
    smooth: int = 0,
    taper_radius: float | None = None,
    extend: float = 1.5,
    pad_factor: int = 4,
) -> FilteredTable:
    """G -> G^(k+1), tapered, Hilbert transformed for even n.

    For even n the table is first zero-extended to ``extend`` times its
    s-range so the (non-local) Hilbert output covers the whole image.
    """
    if smooth:
        g = binomial_smooth(g, smooth)
    f = derivative_s(g, spec.k + 1)
    if taper_radius is not None:
        f = taper(f, taper_radius)
    if spec.n % 2 == 0:
        ds = f.ds
        extra = int(math.ceil((extend - 1.0) * f.s[-1] / ds)) if extend > 1 else 0
        vals = np.pad(f.values, [(0, 0), (extra, extra)])
        s = f.s[0] + ds * (np.arange(vals.shape[1]) - extra)
        f = f.with_values(hilbert_rows(vals, pad_factor), s=s)
    return f
