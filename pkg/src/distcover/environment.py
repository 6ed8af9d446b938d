"""Obstacle environments, grid discretization and geodesic distances.

Geodesics are shortest paths on an 8-connected grid of fine cell centers.
Off-grid points (samples, robots, query points) join that grid through
straight segments to the free corners of the fine lattice cell they sit in,
and to each other when the straight segment between them is clear. Every
distance is therefore a shortest path in one graph, hence a metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.special import logsumexp

from .graph import IDENTITY, MetricGraph, SensingFunction, triangle_violation

DEFAULT_FINE_FACTOR = 4
_TIE_RTOL = 1e-12


class EnvironmentError_(ValueError):
    """Invalid environment or a discretization that breaks free-space connectivity."""


DiscretizationError = EnvironmentError_


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]

    def log_pdf(self, xy: np.ndarray) -> np.ndarray:
        cov = np.asarray(self.cov, dtype=float)
        diff = xy - np.asarray(self.mean, dtype=float)
        inv = np.linalg.inv(cov)
        maha = np.einsum("ni,ij,nj->n", diff, inv, diff)
        return -0.5 * maha - 0.5 * math.log(np.linalg.det(cov)) - math.log(2 * math.pi)


@dataclass(frozen=True)
class Density:
    """Uniform, or a (mixture of) gaussian(s) truncated to free space.

    Normalization happens on the quadrature grid: the mass outside free
    space is dropped and the rest rescaled to 1.
    """

    kind: str = "uniform"
    components: tuple[GaussianComponent, ...] = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "truncated-gaussian", "mixture"):
            raise EnvironmentError_(f"unknown density kind {self.kind!r}")
        if self.kind != "uniform" and not self.components:
            raise EnvironmentError_("gaussian densities need at least one component")
        for comp in self.components:
            cov = np.asarray(comp.cov, dtype=float)
            if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
                raise EnvironmentError_(f"covariance {comp.cov} is not symmetric positive definite")
            if comp.weight <= 0:
                raise EnvironmentError_("mixture weights must be positive")

    @classmethod
    def uniform(cls) -> "Density":
        return cls("uniform")

    @classmethod
    def gaussian(cls, mean, cov) -> "Density":
        return cls("truncated-gaussian", (_component(1.0, mean, cov),))

    @classmethod
    def mixture(cls, components) -> "Density":
        return cls("mixture", tuple(_component(w, m, c) for w, m, c in components))

    def log_density(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self.kind == "uniform":
            return np.zeros(xy.shape[0])
        total = sum(c.weight for c in self.components)
        logs = np.stack([c.log_pdf(xy) + math.log(c.weight / total) for c in self.components])
        return logsumexp(logs, axis=0)

    def masses(self, xy: np.ndarray) -> np.ndarray:
        """Quadrature masses at ``xy`` (equal-area cells), normalized to sum to 1."""
        logd = self.log_density(xy)
        return np.exp(logd - logsumexp(logd))

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "params": {}}
        comps = [{"weight": c.weight, "mean": list(c.mean), "cov": [list(r) for r in c.cov]} for c in self.components]
        if self.kind == "truncated-gaussian":
            return {"kind": self.kind, "params": {"mean": comps[0]["mean"], "cov": comps[0]["cov"]}}
        return {"kind": self.kind, "params": {"components": comps}}

    @classmethod
    def from_dict(cls, doc: dict) -> "Density":
        kind = doc.get("kind", "uniform")
        params = doc.get("params", {})
        try:
            if kind == "uniform":
                return cls.uniform()
            if kind == "truncated-gaussian":
                return cls.gaussian(params["mean"], params["cov"])
            if kind == "mixture":
                return cls.mixture([(c.get("weight", 1.0), c["mean"], c["cov"]) for c in params["components"]])
        except (KeyError, TypeError) as exc:
            raise EnvironmentError_(f"density.params: missing or malformed field {exc}") from exc
        raise EnvironmentError_(f"unknown density kind {kind!r}")


def _component(weight, mean, cov) -> GaussianComponent:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(2)
    return GaussianComponent(float(weight), (float(mean[0]), float(mean[1])),
                             ((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))))


# ---------------------------------------------------------------------------
# environment


@dataclass(frozen=True, eq=False)
class Environment:
    width: float
    height: float
    obstacles: tuple[tuple[tuple[float, float], ...], ...] = ()
    density: Density = field(default_factory=Density.uniform)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise EnvironmentError_("bounds must be positive")
        obstacles = tuple(tuple((float(x), float(y)) for x, y in ring) for ring in self.obstacles)
        object.__setattr__(self, "obstacles", obstacles)
        box = shapely.box(0, 0, self.width, self.height)
        polys = []
        for ring in obstacles:
            if len(ring) < 3:
                raise EnvironmentError_("obstacle polygons need at least 3 vertices")
            poly = shapely.Polygon(ring)
            if not poly.is_valid or poly.area <= 0:
                raise EnvironmentError_(f"obstacle {ring} is not a simple polygon")
            if not box.buffer(1e-9 * max(self.width, self.height)).contains(poly):
                raise EnvironmentError_(f"obstacle {ring} leaves the bounds")
            polys.append(poly)
        union = shapely.union_all(polys) if polys else None
        if union is not None:
            shapely.prepare(union)
        object.__setattr__(self, "_blocked", union)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.width, self.height

    def is_free(self, xy) -> np.ndarray:
        """True for points inside the bounds and not in an obstacle interior."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        x, y = xy[:, 0], xy[:, 1]
        inside = (x >= 0) & (x <= self.width) & (y >= 0) & (y <= self.height)
        if self._blocked is None:
            return inside
        return inside & ~shapely.contains_xy(self._blocked, x, y)

    def segments_clear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Whether each straight segment a[i]-b[i] avoids every obstacle interior."""
        a, b = np.atleast_2d(a), np.atleast_2d(b)
        if self._blocked is None or a.shape[0] == 0:
            return np.ones(a.shape[0], dtype=bool)
        coords = np.stack([a, b], axis=1)
        lines = shapely.linestrings(coords)
        hit = shapely.intersects(lines, self._blocked)
        out = np.ones(a.shape[0], dtype=bool)
        if hit.any():
            idx = np.flatnonzero(hit)
            out[idx] = shapely.touches(lines[idx], self._blocked)
        return out

    def to_dict(self) -> dict:
        return {
            "bounds": [self.width, self.height],
            "obstacles": [[list(p) for p in ring] for ring in self.obstacles],
            "density": self.density.to_dict(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "Environment":
        try:
            w, h = doc["bounds"]
        except (KeyError, TypeError, ValueError) as exc:
            raise EnvironmentError_("environment.bounds must be [width, height]") from exc
        obstacles = doc.get("obstacles", [])
        density = Density.from_dict(doc.get("density", {"kind": "uniform"}))
        return cls(float(w), float(h), tuple(tuple(tuple(p) for p in ring) for ring in obstacles), density)

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        return cls.from_dict(json.loads(text))


def segment_environment(length: float = 1.0, thickness: float = 1e-6, density: Density | None = None) -> Environment:
    """Degenerate thin rectangle standing in for the interval [0, length]."""
    return Environment(length, thickness, (), density or Density.uniform())


# ---------------------------------------------------------------------------
# fine grid


class FineGrid:
    """Free cell centers of an nx x ny lattice with 8-connected octile edges."""

    def __init__(self, env: Environment, nx: int, ny: int):
        self.env = env
        self.nx, self.ny = int(nx), int(ny)
        self.dx, self.dy = env.width / self.nx, env.height / self.ny
        ii, jj = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        centers = np.column_stack([(ii.ravel() + 0.5) * self.dx, (jj.ravel() + 0.5) * self.dy])
        free = env.is_free(centers)
        self.index = np.full(self.nx * self.ny, -1, dtype=np.int64)
        self.index[free] = np.arange(int(free.sum()))
        self.points = centers[free]
        self.cell_area = self.dx * self.dy
        self.size = self.points.shape[0]
        if self.size == 0:
            raise DiscretizationError("no free fine-grid cells; the environment is fully blocked")
        self._build_edges()

    @classmethod
    def with_step(cls, env: Environment, step: float) -> "FineGrid":
        if not step > 0:
            raise ValueError("fine resolution must be positive")
        return cls(env, max(1, round(env.width / step)), max(1, round(env.height / step)))

    def node(self, i, j):
        return self.index[np.asarray(i) * self.ny + np.asarray(j)]

    def _build_edges(self):
        rows, cols, lens = [], [], []
        diag = math.hypot(self.dx, self.dy)
        for di, dj, length in ((1, 0, self.dx), (0, 1, self.dy), (1, 1, diag), (1, -1, diag)):
            i0 = np.arange(max(0, -di), self.nx - max(0, di))
            j0 = np.arange(max(0, -dj), self.ny - max(0, dj))
            if i0.size == 0 or j0.size == 0:
                continue
            I, J = np.meshgrid(i0, j0, indexing="ij")
            a = self.node(I.ravel(), J.ravel())
            b = self.node(I.ravel() + di, J.ravel() + dj)
            ok = (a >= 0) & (b >= 0)
            a, b = a[ok], b[ok]
            clear = self.env.segments_clear(self.points[a], self.points[b])
            rows.append(a[clear])
            cols.append(b[clear])
            lens.append(np.full(int(clear.sum()), length))
        self.edge_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self.edge_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        self.edge_lens = np.concatenate(lens) if lens else np.zeros(0)

    def components(self) -> int:
        adj = coo_matrix((self.edge_lens, (self.edge_rows, self.edge_cols)), shape=(self.size, self.size))
        n, _ = connected_components(adj, directed=False)
        return n

    def attachments(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Free fine nodes visible from ``p`` around its lattice cell, with straight-line lengths."""
        p = np.asarray(p, dtype=float)
        fi = p[0] / self.dx - 0.5
        fj = p[1] / self.dy - 0.5
        for reach in (1, 2, 3):
            i_lo, j_lo = math.floor(fi) - (reach - 1), math.floor(fj) - (reach - 1)
            I, J = np.meshgrid(np.arange(i_lo, i_lo + 2 * reach), np.arange(j_lo, j_lo + 2 * reach), indexing="ij")
            I, J = I.ravel(), J.ravel()
            ok = (I >= 0) & (I < self.nx) & (J >= 0) & (J < self.ny)
            nodes = np.unique(self.node(I[ok], J[ok]))
            nodes = nodes[nodes >= 0]
            if nodes.size:
                clear = self.env.segments_clear(np.repeat(p[None], nodes.size, axis=0), self.points[nodes])
                nodes = nodes[clear]
            if nodes.size:
                lens = np.linalg.norm(self.points[nodes] - p, axis=1)
                return nodes, np.maximum(lens, 1e-12 * min(self.dx, self.dy))
        raise DiscretizationError(f"point {tuple(p)} cannot reach the fine grid")

    def distances_from(self, sources: Sequence) -> np.ndarray:
        """Geodesic distances from each source point to every fine node and every source.

        Returns an array of shape (len(sources), size + len(sources)); column
        ``size + k`` is the distance to source k.
        """
        sources = np.atleast_2d(np.asarray(sources, dtype=float))
        k = sources.shape[0]
        rows, cols, lens = [self.edge_rows], [self.edge_cols], [self.edge_lens]
        for s, p in enumerate(sources):
            nodes, d = self.attachments(p)
            rows.append(np.full(nodes.size, self.size + s))
            cols.append(nodes)
            lens.append(d)
        # mutually visible sources also get their straight segment
        a, b = np.triu_indices(k, 1)
        if a.size:
            clear = self.env.segments_clear(sources[a], sources[b])
            a, b = a[clear], b[clear]
            rows.append(self.size + a)
            cols.append(self.size + b)
            lens.append(np.maximum(np.linalg.norm(sources[a] - sources[b], axis=1),
                                   1e-12 * min(self.dx, self.dy)))
        n = self.size + k
        adj = coo_matrix((np.concatenate(lens), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
        dist = dijkstra(adj, directed=False, indices=np.arange(self.size, n))
        src_block = dist[:, self.size:]
        np.fill_diagonal(src_block, 0.0)
        dist[:, self.size:] = np.minimum(src_block, src_block.T)
        return dist


def geodesic_distance(env: Environment, p, q, fine_resolution: float) -> float:
    """Shortest free-space path length between p and q on an octile grid."""
    pts = np.asarray([p, q], dtype=float)
    if not env.is_free(pts).all():
        raise ValueError("both endpoints must lie in free space")
    if np.array_equal(pts[0], pts[1]):
        return 0.0
    grid = FineGrid.with_step(env, fine_resolution)
    dist = grid.distances_from(pts)
    d = float(dist[0, grid.size + 1])
    if not np.isfinite(d):
        raise DiscretizationError(f"no free path between {tuple(p)} and {tuple(q)}")
    return d


def continuous_cost(env: Environment, robot_points, f: SensingFunction = IDENTITY,
                    fine_resolution: float = 0.01) -> float:
    """Midpoint quadrature of the expected sensing cost over the fine grid."""
    pts = np.atleast_2d(np.asarray(robot_points, dtype=float))
    if pts.shape[0] == 0 or pts.size == 0:
        raise ValueError("need at least one robot")
    if not env.is_free(pts).all():
        raise ValueError("robot points must lie in free space")
    grid = FineGrid.with_step(env, fine_resolution)
    dist = grid.distances_from(pts)[:, :grid.size]
    masses = env.density.masses(grid.points)
    return float(masses @ f(dist.min(axis=0)))


# ---------------------------------------------------------------------------
# discretization


@dataclass(eq=False)
class Discretization:
    env: Environment
    cell_size: float
    nx: int
    ny: int
    fine_factor: int
    samples: np.ndarray          # S x 2
    fine: FineGrid
    fine_masses: np.ndarray      # per fine node, sums to 1
    sample_to_fine: np.ndarray   # S x F geodesic distances
    sample_dist: np.ndarray      # S x S geodesic distances
    cell_owner: np.ndarray       # fine node -> sample index
    weights: np.ndarray          # per sample, sums to 1
    dispersion: float

    @property
    def sample_count(self) -> int:
        return self.samples.shape[0]

    @property
    def cell_dims(self) -> tuple[float, float]:
        return self.env.width / self.nx, self.env.height / self.ny

    @property
    def nominal_dispersion(self) -> float:
        """Half cell diagonal: the Euclidean dispersion of a full grid of cell centers."""
        dx, dy = self.cell_dims
        return 0.5 * math.hypot(dx, dy)

    def continuous_cost(self, config: Sequence[int], f: SensingFunction = IDENTITY) -> float:
        """Sensing cost of robots placed on samples, by quadrature on this fine grid."""
        q = np.asarray(config, dtype=np.int64)
        if q.size == 0:
            raise ValueError("need at least one robot")
        return float(self.fine_masses @ f(self.sample_to_fine[q].min(axis=0)))

    def corner_config(self, m: int) -> list[int]:
        """The m samples nearest the bottom-left corner (ties by index)."""
        d = np.hypot(self.samples[:, 0], self.samples[:, 1])
        order = np.lexsort((np.arange(d.size), d))
        if m > d.size:
            raise ValueError(f"{m} robots but only {d.size} samples")
        return [int(i) for i in order[:m]]

    def sidecar(self) -> dict:
        return {"dispersion": self.dispersion, "sample_coords": self.samples.tolist()}


def _nearest(dist: np.ndarray) -> np.ndarray:
    """Row index of the column-wise minimum, ties to the smallest index."""
    best = dist.min(axis=0)
    close = dist <= best * (1 + _TIE_RTOL) + _TIE_RTOL * np.finfo(float).tiny
    return np.argmax(close, axis=0)


def vertex_weights(disc: Discretization, env: Environment | None = None) -> np.ndarray:
    """Density mass of each sample's cell (fine nodes go to their geodesically nearest sample)."""
    env = env or disc.env
    masses = env.density.masses(disc.fine.points)
    owner = _nearest(disc.sample_to_fine)
    return np.bincount(owner, weights=masses, minlength=disc.sample_count)


def grid_sample(env: Environment, cell_size: float, fine_factor: int = DEFAULT_FINE_FACTOR) -> Discretization:
    """Sample free cell centers of a cell_size grid and measure the dispersion on a finer grid."""
    if not cell_size > 0:
        raise ValueError("cell size must be positive")
    if fine_factor < 1:
        raise ValueError("fine_factor must be >= 1")
    nx = max(1, round(env.width / cell_size))
    ny = max(1, round(env.height / cell_size))
    dx, dy = env.width / nx, env.height / ny
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = np.column_stack([(ii.ravel() + 0.5) * dx, (jj.ravel() + 0.5) * dy])
    samples = centers[env.is_free(centers)]
    if samples.shape[0] == 0:
        raise DiscretizationError(f"no free cell centers at cell size {cell_size}; use a smaller cell size")
    fine = FineGrid(env, nx * fine_factor, ny * fine_factor)
    if fine.components() > 1:
        raise DiscretizationError(
            f"free space splits into {fine.components()} pieces at cell size {cell_size}; "
            "use a smaller cell size (or the obstacles disconnect the environment)")
    dist = fine.distances_from(samples)
    if not np.all(np.isfinite(dist)):
        raise DiscretizationError(f"some samples are unreachable at cell size {cell_size}; use a smaller cell size")
    to_fine, between = dist[:, :fine.size], dist[:, fine.size:]
    masses = env.density.masses(fine.points)
    owner = _nearest(to_fine)
    weights = np.bincount(owner, weights=masses, minlength=samples.shape[0])
    dispersion = float(to_fine.min(axis=0).max())
    return Discretization(env, float(cell_size), nx, ny, fine_factor, samples, fine, masses, to_fine, between,
                          owner, weights, dispersion)


def build_coverage_graph(disc: Discretization, f: SensingFunction = IDENTITY) -> MetricGraph:
    """Metric graph over the samples with cost f(geodesic distance)."""
    cost = np.asarray(f(disc.sample_dist), dtype=float)
    cost = np.minimum(cost, cost.T)
    np.fill_diagonal(cost, 0.0)
    witness = triangle_violation(cost)
    if witness is not None:
        raise RuntimeError(f"sample costs violate the triangle inequality at {witness}; geodesic computation is broken")
    return MetricGraph(disc.weights, cost)
