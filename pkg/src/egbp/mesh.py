"""Conforming triangulations of axis-aligned rectangles.

Meshes are immutable after construction.  Every facet stores a fixed owner
("left") element together with the unit normal pointing out of that owner;
all jump and average formulas elsewhere in the package are expressed
relative to this owner, which removes any sign ambiguity from assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "build_structured",
    "refine_uniform",
    "node_patch_elements",
    "write_mesh",
    "read_mesh",
]


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with full facet and patch connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array of vertex coordinates.
    triangles : (nt, 3) int array, counter-clockwise vertex triples.
    facet_vertices : (nf, 2) int array, endpoint indices of each facet.
    facet_left : (nf,) owner element of each facet.
    facet_right : (nf,) neighbor element, -1 for boundary facets.
    facet_length : (nf,) facet lengths h_F.
    facet_normal : (nf, 2) unit normals, outward with respect to the owner.
    boundary_vertex : (nv,) bool flags.
    node_patches : per-vertex tuple of incident element indices (omega_i).
    element_patches : per-element tuple of vertex-adjacent elements (omega_T).
    h_elem : (nt,) element diameters h_T.
    h_vertex : (nv,) h_i = max h_T over the node patch.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    facet_vertices: np.ndarray = field(repr=False)
    facet_left: np.ndarray = field(repr=False)
    facet_right: np.ndarray = field(repr=False)
    facet_length: np.ndarray = field(repr=False)
    facet_normal: np.ndarray = field(repr=False)
    boundary_vertex: np.ndarray = field(repr=False)
    node_patches: tuple = field(repr=False)
    element_patches: tuple = field(repr=False)
    h_elem: np.ndarray = field(repr=False)
    h_vertex: np.ndarray = field(repr=False)
    h: float = 0.0
    h_min: float = 0.0

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_elements(self):
        return self.triangles.shape[0]

    @property
    def num_facets(self):
        return self.facet_vertices.shape[0]

    def element_areas(self):
        """Signed areas of all elements (positive for CCW triangles)."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
        )


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _build_mesh(vertices, triangles):
    """Derive all connectivity metadata from vertices and CCW triangles."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    nv = vertices.shape[0]
    nt = triangles.shape[0]

    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(areas <= 0.0):
        raise ValueError("mesh contains degenerate or clockwise triangles")

    # Undirected edges keyed by sorted endpoint pair; owner = incident
    # element of smallest index, normal derived from its CCW traversal.
    edge_map = {}
    for t in range(nt):
        tri = triangles[t]
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            edge_map.setdefault(key, []).append((t, a, b))

    keys = sorted(edge_map)
    nf = len(keys)
    facet_vertices = np.empty((nf, 2), dtype=np.int64)
    facet_left = np.empty(nf, dtype=np.int64)
    facet_right = np.full(nf, -1, dtype=np.int64)
    for i, key in enumerate(keys):
        incident = sorted(edge_map[key])
        if len(incident) > 2:
            raise ValueError("facet %s has more than two incident elements" % (key,))
        t, a, b = incident[0]
        facet_vertices[i] = (a, b)
        facet_left[i] = t
        if len(incident) == 2:
            facet_right[i] = incident[1][0]

    tang = vertices[facet_vertices[:, 1]] - vertices[facet_vertices[:, 0]]
    facet_length = np.hypot(tang[:, 0], tang[:, 1])
    facet_normal = np.column_stack((tang[:, 1], -tang[:, 0])) / facet_length[:, None]

    boundary_vertex = np.zeros(nv, dtype=bool)
    bmask = facet_right < 0
    boundary_vertex[facet_vertices[bmask].ravel()] = True

    patches = [[] for _ in range(nv)]
    for t in range(nt):
        for v in triangles[t]:
            patches[int(v)].append(t)
    node_patches = tuple(_freeze(np.array(pl, dtype=np.int64)) for pl in patches)

    element_patches = []
    for t in range(nt):
        adj = np.concatenate([node_patches[int(v)] for v in triangles[t]])
        element_patches.append(_freeze(np.unique(adj)))
    element_patches = tuple(element_patches)

    edges = vertices[triangles[:, [1, 2, 0]]] - vertices[triangles[:, [0, 1, 2]]]
    h_elem = np.hypot(edges[..., 0], edges[..., 1]).max(axis=1)
    h_vertex = np.array([h_elem[node_patches[i]].max() for i in range(nv)])

    return Mesh(
        vertices=_freeze(vertices),
        triangles=_freeze(triangles),
        facet_vertices=_freeze(facet_vertices),
        facet_left=_freeze(facet_left),
        facet_right=_freeze(facet_right),
        facet_length=_freeze(facet_length),
        facet_normal=_freeze(facet_normal),
        boundary_vertex=_freeze(boundary_vertex),
        node_patches=node_patches,
        element_patches=element_patches,
        h_elem=_freeze(h_elem),
        h_vertex=_freeze(h_vertex),
        h=float(h_elem.max()),
        h_min=float(h_elem.min()),
    )


def build_structured(nx, ny, rect=(0.0, 0.0, 1.0, 1.0)):
    """Structured triangulation of a rectangle.

    Each of the nx*ny congruent cells is split by the diagonal running from
    its lower-left to its upper-right corner, giving 2*nx*ny triangles.
    Vertices are numbered lexicographically by (y, x).
    """
    if nx < 1 or ny < 1:
        raise ValueError("subdivision counts must be >= 1, got (%s, %s)" % (nx, ny))
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle %r" % (rect,))

    xs = x0 + (x1 - x0) * np.arange(nx + 1) / nx
    ys = y0 + (y1 - y0) * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack((X.ravel(), Y.ravel()))

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    triangles = []
    for iy in range(ny):
        for ix in range(nx):
            ll = vid(ix, iy)
            lr = vid(ix + 1, iy)
            ul = vid(ix, iy + 1)
            ur = vid(ix + 1, iy + 1)
            triangles.append((ll, lr, ur))
            triangles.append((ll, ur, ul))
    return _build_mesh(vertices, triangles)


def refine_uniform(mesh):
    """Red refinement: split every triangle into four via edge midpoints.

    The parent vertices keep their indices, so nested vertex sets come for
    free; midpoints are appended in sorted-edge order for determinism.
    """
    nv = mesh.num_vertices
    midpoint_id = {}
    new_vertices = [mesh.vertices]
    keys = sorted(
        {tuple(sorted((int(a), int(b)))) for a, b in mesh.facet_vertices}
    )
    mids = np.empty((len(keys), 2))
    for i, (a, b) in enumerate(keys):
        midpoint_id[(a, b)] = nv + i
        mids[i] = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
    new_vertices.append(mids)

    def mid(a, b):
        return midpoint_id[(a, b) if a < b else (b, a)]

    triangles = []
    for a, b, c in mesh.triangles:
        a, b, c = int(a), int(b), int(c)
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        triangles.extend([(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)])
    return _build_mesh(np.vstack(new_vertices), triangles)


def node_patch_elements(mesh, i):
    """Elements of the node patch omega_i, i.e. all elements containing x_i."""
    if not 0 <= i < mesh.num_vertices:
        raise ValueError("vertex index %s out of range [0, %s)" % (i, mesh.num_vertices))
    return np.array(mesh.node_patches[i])


def write_mesh(mesh, path):
    """Write the plain-text mesh format: header "V E T", vertex lines
    "x y boundary_flag", then triangle lines.  Coordinates use 17
    significant digits so the reader round-trips doubles bit-exactly."""
    with open(path, "w") as fh:
        fh.write("%d %d %d\n" % (mesh.num_vertices, mesh.num_facets, mesh.num_elements))
        for (x, y), flag in zip(mesh.vertices, mesh.boundary_vertex):
            fh.write("%.17g %.17g %d\n" % (x, y, int(flag)))
        for a, b, c in mesh.triangles:
            fh.write("%d %d %d\n" % (a, b, c))


def read_mesh(path):
    """Read the plain-text format produced by :func:`write_mesh`.

    Connectivity is recomputed from scratch; the edge count and boundary
    flags from the file are validated against the recomputed values.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 3:
        raise ValueError("truncated mesh file %s" % path)
    nv, ne, nt = int(tokens[0]), int(tokens[1]), int(tokens[2])
    need = 3 + 3 * nv + 3 * nt
    if len(tokens) != need:
        raise ValueError("mesh file %s has %d tokens, expected %d" % (path, len(tokens), need))
    vdata = np.array(tokens[3 : 3 + 3 * nv], dtype=object).reshape(nv, 3)
    vertices = vdata[:, :2].astype(float)
    flags = vdata[:, 2].astype(int).astype(bool)
    triangles = np.array(tokens[3 + 3 * nv :], dtype=np.int64).reshape(nt, 3)
    mesh = _build_mesh(vertices, triangles)
    if mesh.num_facets != ne:
        raise ValueError("facet count mismatch: file says %d, mesh has %d" % (ne, mesh.num_facets))
    if not np.array_equal(mesh.boundary_vertex, flags):
        raise ValueError("boundary flags in %s disagree with recomputed connectivity" % path)
    return mesh
