"""Structured P1 meshes on intervals and rectangles.

Geometric substrate for everything else: node/cell arrays, exact
distance-to-boundary fields, per-cell P1 gradients, and fixed quadrature
(3-point Gauss per interval cell, edge midpoints per triangle) exposed as
flat arrays so assembly can be fully vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MeshCompatibilityError, NonFiniteFieldError

# 3-point Gauss rule on [-1, 1]; exact for quintics on intervals.
_G3_T = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_G3_W = np.array([5.0, 8.0, 5.0]) / 9.0

# Interior 3-point rule on the reference triangle; exact for quadratics.
# All points are strictly inside the element, so interpolants of
# zero-trace fields stay positive there (boundary-singular powers need
# this; the edge-midpoint variant would sample on the boundary).
_TRI_BARY = np.array([[4, 1, 1], [1, 4, 1], [1, 1, 4]]) / 6.0


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned domain: ``interval(a, b)`` or ``rectangle(ax, bx, ay, by)``."""

    kind: str
    bounds: tuple

    @staticmethod
    def interval(a: float, b: float) -> "DomainSpec":
        if not b > a:
            raise ValueError(f"degenerate interval ({a}, {b})")
        return DomainSpec("interval", (float(a), float(b)))

    @staticmethod
    def rectangle(ax: float, bx: float, ay: float, by: float) -> "DomainSpec":
        if not (bx > ax and by > ay):
            raise ValueError(f"degenerate rectangle ({ax},{bx})x({ay},{by})")
        return DomainSpec("rectangle", (float(ax), float(bx), float(ay), float(by)))

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def measure(self) -> float:
        if self.kind == "interval":
            a, b = self.bounds
            return b - a
        ax, bx, ay, by = self.bounds
        return (bx - ax) * (by - ay)

    @property
    def diameter(self) -> float:
        if self.kind == "interval":
            a, b = self.bounds
            return b - a
        ax, bx, ay, by = self.bounds
        return float(np.hypot(bx - ax, by - ay))

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Exact euclidean distance to the boundary for points inside."""
        pts = np.asarray(points, dtype=float)
        if self.kind == "interval":
            a, b = self.bounds
            x = pts[..., 0] if pts.ndim > 1 else pts
            return np.minimum(x - a, b - x)
        ax, bx, ay, by = self.bounds
        x, y = pts[..., 0], pts[..., 1]
        return np.minimum.reduce([x - ax, bx - x, y - ay, by - y])


class Mesh:
    """Uniform P1 mesh: hat functions on interval cells or on triangles
    obtained by splitting tensor quads along one diagonal.

    Immutable after construction.  Precomputes cell gradients of the P1
    basis, quadrature points/weights with their owning cell, and the
    basis values at quadrature points.
    """

    def __init__(self, domain: DomainSpec, n: int):
        if n < 2:
            raise ValueError("need at least 2 cells per direction")
        self.domain = domain
        self.n = int(n)
        self.dim = domain.dim
        if self.dim == 1:
            self._build_1d()
        else:
            self._build_2d()
        self.h = float(self.cell_diameters.max())
        self.distance = domain.distance(self.nodes)
        self.interior_nodes = np.setdiff1d(
            np.arange(self.nodes.shape[0]), self.boundary_nodes
        )
        for arr in (self.nodes, self.cells, self.qweights, self.qbasis,
                    self.grad_basis, self.distance):
            arr.setflags(write=False)

    def _build_1d(self):
        a, b = self.domain.bounds
        n = self.n
        x = np.linspace(a, b, n + 1)
        self.nodes = x.reshape(-1, 1)
        self.cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        self.boundary_nodes = np.array([0, n])
        h = (b - a) / n
        self.cell_volumes = np.full(n, h)
        self.cell_diameters = self.cell_volumes
        # gradients of the two hats on each cell
        gb = np.empty((n, 2, 1))
        gb[:, 0, 0] = -1.0 / h
        gb[:, 1, 0] = 1.0 / h
        self.grad_basis = gb
        # 3-point Gauss per cell
        left = x[:-1]
        qx = (left[:, None] + (0.5 * h) * (1.0 + _G3_T)[None, :]).ravel()
        self.qpoints = qx.reshape(-1, 1)
        self.qweights = np.tile(_G3_W * 0.5 * h, n)
        self.qcells = np.repeat(np.arange(n), 3)
        lam_r = np.tile((1.0 + _G3_T) / 2.0, n)
        self.qbasis = np.column_stack([1.0 - lam_r, lam_r])

    def _build_2d(self):
        ax, bx, ay, by = self.domain.bounds
        n = self.n
        xs = np.linspace(ax, bx, n + 1)
        ys = np.linspace(ay, by, n + 1)
        X, Y = np.meshgrid(xs, ys)  # Y varies along axis 0
        self.nodes = np.column_stack([X.ravel(), Y.ravel()])
        self.xs, self.ys = xs, ys

        def idx(ix, iy):
            return iy * (n + 1) + ix

        onb = (np.isclose(self.nodes[:, 0], ax) | np.isclose(self.nodes[:, 0], bx)
               | np.isclose(self.nodes[:, 1], ay) | np.isclose(self.nodes[:, 1], by))
        self.boundary_nodes = np.flatnonzero(onb)

        # Split each quad along a diagonal that never creates a triangle
        # with all three vertices on the boundary: zero-trace fields must
        # stay positive at interior quadrature points, and an all-boundary
        # triangle would interpolate to zero throughout.
        tris = []
        for iy in range(n):
            for ix in range(n):
                v00, v10 = idx(ix, iy), idx(ix + 1, iy)
                v01, v11 = idx(ix, iy + 1), idx(ix + 1, iy + 1)
                main = [(v00, v10, v11), (v00, v11, v01)]
                if any(all(onb[v] for v in t) for t in main):
                    tris.extend([(v00, v10, v01), (v10, v11, v01)])
                else:
                    tris.extend(main)
        self.cells = np.array(tris)

        p0 = self.nodes[self.cells[:, 0]]
        p1 = self.nodes[self.cells[:, 1]]
        p2 = self.nodes[self.cells[:, 2]]
        e1, e2 = p1 - p0, p2 - p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        area = 0.5 * np.abs(det)
        self.cell_volumes = area
        self.cell_diameters = np.maximum.reduce([
            np.hypot(*(p1 - p0).T), np.hypot(*(p2 - p1).T), np.hypot(*(p0 - p2).T)
        ])
        # grad(lambda_1), grad(lambda_2) from the inverse edge matrix
        gb = np.empty((len(self.cells), 3, 2))
        gb[:, 1, 0] = e2[:, 1] / det
        gb[:, 1, 1] = -e2[:, 0] / det
        gb[:, 2, 0] = -e1[:, 1] / det
        gb[:, 2, 1] = e1[:, 0] / det
        gb[:, 0, :] = -gb[:, 1, :] - gb[:, 2, :]
        self.grad_basis = gb

        nc = len(self.cells)
        verts = self.nodes[self.cells]  # (nc, 3, 2)
        qp = np.einsum("qk,ckd->cqd", _TRI_BARY, verts).reshape(-1, 2)
        self.qpoints = qp
        self.qweights = np.repeat(area / 3.0, 3)
        self.qcells = np.repeat(np.arange(nc), 3)
        self.qbasis = np.tile(_TRI_BARY, (nc, 1))

    # -- queries ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def max_distance(self) -> float:
        return float(self.distance.max())

    def interpolate(self, nodal_values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the nodal interpolant at arbitrary points inside the
        domain (linear on intervals, bilinear on the tensor grid)."""
        vals = np.asarray(nodal_values, dtype=float)
        pts = np.asarray(points, dtype=float)
        if self.dim == 1:
            x = pts[..., 0] if pts.ndim > 1 else pts
            return np.interp(x, self.nodes[:, 0], vals)
        grid = vals.reshape(self.n + 1, self.n + 1)  # [iy, ix]
        x, y = pts[..., 0], pts[..., 1]
        ix = np.clip(np.searchsorted(self.xs, x) - 1, 0, self.n - 1)
        iy = np.clip(np.searchsorted(self.ys, y) - 1, 0, self.n - 1)
        tx = (x - self.xs[ix]) / (self.xs[ix + 1] - self.xs[ix])
        ty = (y - self.ys[iy]) / (self.ys[iy + 1] - self.ys[iy])
        return ((1 - tx) * (1 - ty) * grid[iy, ix]
                + tx * (1 - ty) * grid[iy, ix + 1]
                + (1 - tx) * ty * grid[iy + 1, ix]
                + tx * ty * grid[iy + 1, ix + 1])


def build_mesh(domain: DomainSpec, n: int) -> Mesh:
    """Uniform mesh with ``n`` cells per direction, boundary marked and
    the distance field computed exactly."""
    return Mesh(domain, n)


@dataclass
class GridFunction:
    """Nodal scalar field on a mesh."""

    mesh: Mesh
    values: np.ndarray
    zero_trace: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise MeshCompatibilityError(
                f"expected {self.mesh.n_nodes} nodal values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteFieldError("grid function has non-finite nodal values")
        if self.zero_trace and np.any(self.values[self.mesh.boundary_nodes] != 0.0):
            raise ValueError("zero-trace field does not vanish on the boundary")

    def copy(self) -> "GridFunction":
        return GridFunction(self.mesh, self.values.copy(), self.zero_trace)

    @staticmethod
    def constant(mesh: Mesh, c: float) -> "GridFunction":
        return GridFunction(mesh, np.full(mesh.n_nodes, float(c)))

    @staticmethod
    def from_callable(mesh: Mesh, fn) -> "GridFunction":
        if mesh.dim == 1:
            vals = fn(mesh.nodes[:, 0])
        else:
            vals = fn(mesh.nodes[:, 0], mesh.nodes[:, 1])
        return GridFunction(mesh, np.broadcast_to(vals, (mesh.n_nodes,)).copy())


@dataclass
class VectorField:
    """Piecewise-constant per-cell vector field (a P1 gradient)."""

    mesh: Mesh
    values: np.ndarray  # (n_cells, dim)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (len(self.mesh.cells), self.mesh.dim)
        if self.values.shape != expected:
            raise MeshCompatibilityError(
                f"expected cell vectors of shape {expected}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteFieldError("vector field has non-finite values")

    @property
    def magnitudes(self) -> np.ndarray:
        return np.sqrt((self.values ** 2).sum(axis=1))

    @property
    def inf_norm(self) -> float:
        return float(self.magnitudes.max())


@dataclass
class QuadField:
    """Values attached to the quadrature points of a mesh.  Used for data
    that is only evaluable strictly inside cells (singular right-hand
    sides that blow up on the boundary)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mesh.qweights.shape:
            raise MeshCompatibilityError("quadrature value array has wrong length")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteFieldError("quadrature field has non-finite values")


def check_same_mesh(mesh: Mesh, *objs):
    for o in objs:
        m = o.mesh if hasattr(o, "mesh") else o
        if m is not mesh:
            raise MeshCompatibilityError("objects live on different meshes")


def at_quad(mesh: Mesh, nodal_values: np.ndarray) -> np.ndarray:
    """Nodal field evaluated at all quadrature points."""
    vals = np.asarray(nodal_values, dtype=float)
    return np.einsum("qk,qk->q", mesh.qbasis, vals[mesh.cells[mesh.qcells]])


def as_quad_values(mesh: Mesh, h) -> np.ndarray:
    """Coerce scalar / nodal / GridFunction / QuadField data to values at
    quadrature points."""
    if isinstance(h, QuadField):
        check_same_mesh(mesh, h)
        return h.values
    if isinstance(h, GridFunction):
        check_same_mesh(mesh, h)
        return at_quad(mesh, h.values)
    if np.isscalar(h):
        return np.full_like(mesh.qweights, float(h))
    arr = np.asarray(h, dtype=float)
    if arr.shape == mesh.qweights.shape:
        return arr
    if arr.shape == (mesh.n_nodes,):
        return at_quad(mesh, arr)
    raise MeshCompatibilityError(f"cannot interpret data of shape {arr.shape}")


def cell_gradients(mesh: Mesh, nodal_values: np.ndarray) -> np.ndarray:
    """Exact per-cell gradient of the P1 interpolant, shape (n_cells, dim)."""
    vals = np.asarray(nodal_values, dtype=float)
    return np.einsum("ckd,ck->cd", mesh.grad_basis, vals[mesh.cells])


def gradient(mesh: Mesh, u: GridFunction) -> VectorField:
    """Gradient of the P1 interpolant; exact for affine nodal data."""
    check_same_mesh(mesh, u)
    return VectorField(mesh, cell_gradients(mesh, u.values))


def integrate(mesh: Mesh, integrand) -> float:
    """Composite quadrature of ``integrand`` (quad-point array, nodal
    array, GridFunction, or callable of the quadrature points)."""
    if callable(integrand):
        vals = np.asarray(integrand(mesh.qpoints), dtype=float)
    else:
        vals = as_quad_values(mesh, integrand)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteFieldError("non-finite integrand at a quadrature point")
    return float(mesh.qweights @ vals)


def load_vector(mesh: Mesh, h) -> np.ndarray:
    """Nodal vector of integrals of ``h`` against every hat function."""
    hq = as_quad_values(mesh, h)
    contrib = (mesh.qweights * hq)[:, None] * mesh.qbasis
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.cells[mesh.qcells], contrib)
    return b


def boundary_strip(mesh: Mesh, delta: float) -> np.ndarray:
    """Indices of nodes with distance(x) < delta (boundary nodes included)."""
    if not 0.0 < delta <= mesh.max_distance:
        raise ValueError(
            f"delta={delta} outside (0, {mesh.max_distance}]")
    return np.flatnonzero(mesh.distance < delta)


def export_csv(path, mesh: Mesh, columns: dict):
    """One row per node: coordinates then the named nodal columns.  The
    header line lists 'x[,y]' followed by the column names."""
    names = list(columns)
    coord_names = ["x"] if mesh.dim == 1 else ["x", "y"]
    with open(path, "w") as f:
        f.write(",".join(coord_names + names) + "\n")
        cols = [mesh.nodes[:, d] for d in range(mesh.dim)]
        cols += [np.asarray(columns[k], dtype=float) for k in names]
        for row in zip(*cols):
            f.write(",".join(repr(float(v)) for v in row) + "\n")
