"""Unstructured triangle meshes with edge/neighbour data and point location.

Element ``e`` has neighbour ``element_neighbors[e, k]`` across the facet
opposite its local vertex ``k`` (``-1`` on the boundary).  This convention
lets the neighbour walk step straight across the facet that carries the most
negative barycentric weight.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "MeshError",
    "BoundaryTag",
    "AnnulusSpec",
    "SimplexMesh",
    "build_edges_and_neighbors",
    "generate_annulus",
    "generate_rectangle",
    "shape_functions",
    "barycentric",
    "locate_point",
    "locate_points",
    "trace_segment",
    "sector_groups",
    "CONTAINMENT_EPS",
]

CONTAINMENT_EPS = 1e-12


class MeshError(ValueError):
    """Invalid mesh input or broken connectivity."""


@dataclass(frozen=True)
class BoundaryTag:
    name: str
    id: int


@dataclass(frozen=True)
class AnnulusSpec:
    """Polar grid annulus.

    With ``slit=True`` the ring is cut along theta = 0: nodes at theta = 0
    and theta = 2*pi are distinct and the two radial cut lines become
    boundaries tagged ``slit_tags`` (start, end).  Used for a gap with an
    inflow and an outflow cross-section.
    """

    inner_radius: float
    outer_radius: float
    n_radial: int
    n_azimuthal: int
    inner_tag: str = "inner"
    outer_tag: str = "outer"
    slit: bool = False
    slit_tags: tuple[str, str] = ("inflow", "outflow")

    def validate(self) -> None:
        problems = []
        if not self.inner_radius > 0:
            problems.append(f"inner_radius must be > 0, got {self.inner_radius}")
        if not self.outer_radius > self.inner_radius:
            problems.append(
                f"outer_radius ({self.outer_radius}) must exceed inner_radius ({self.inner_radius})"
            )
        if int(self.n_radial) != self.n_radial or self.n_radial < 1:
            problems.append(f"n_radial must be an integer >= 1, got {self.n_radial}")
        if int(self.n_azimuthal) != self.n_azimuthal or self.n_azimuthal < 3:
            problems.append(f"n_azimuthal must be an integer >= 3, got {self.n_azimuthal}")
        if problems:
            raise MeshError("invalid annulus: " + "; ".join(problems))


class SimplexMesh:
    """Immutable 2-D triangle mesh (coordinates in cm).

    Parameters
    ----------
    node_coords : (N, 2) array
    elements : (E, 3) int array, counter-clockwise
    boundary_facets : (F, 2) int array
    facet_tags : (F,) int array of tag ids
    tags : dict name -> BoundaryTag
    element_neighbors : (E, 3) int array
    edges : (Ne, 2) int array, each unordered pair once (i < j)
    facet_elements : (F,) owning element of each boundary facet
    """

    def __init__(self, node_coords, elements, boundary_facets, facet_tags, tags,
                 element_neighbors, edges, facet_elements):
        self.node_coords = np.asarray(node_coords, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.boundary_facets = np.asarray(boundary_facets, dtype=np.int64)
        self.facet_tags = np.asarray(facet_tags, dtype=np.int64)
        self.tags = dict(tags)
        self.element_neighbors = np.asarray(element_neighbors, dtype=np.int64)
        self.edges = np.asarray(edges, dtype=np.int64)
        self.facet_elements = np.asarray(facet_elements, dtype=np.int64)
        for arr in (self.node_coords, self.elements, self.boundary_facets, self.facet_tags,
                    self.element_neighbors, self.edges, self.facet_elements):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def __repr__(self):
        return (f"SimplexMesh(nodes={self.n_nodes}, elements={self.n_elements}, "
                f"edges={len(self.edges)}, boundary_facets={len(self.boundary_facets)})")

    # -- geometry -------------------------------------------------------
    @cached_property
    def areas(self) -> np.ndarray:
        p = self.node_coords[self.elements]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(E, 3, 2) constant gradients of the three linear shape functions."""
        p = self.node_coords[self.elements]
        twice_area = 2.0 * self.areas
        grads = np.empty((self.n_elements, 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            # gradient of N_k is the inward normal of the opposite edge / (2A)
            grads[:, k, 0] = (p[:, i, 1] - p[:, j, 1]) / twice_area
            grads[:, k, 1] = (p[:, j, 0] - p[:, i, 0]) / twice_area
        return grads

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Nodal area (one third of each incident element)."""
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.elements, (self.areas / 3.0)[:, None])
        return m

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.node_coords[self.elements].mean(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.node_coords[self.edges[:, 1]] - self.node_coords[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def node_min_edge(self) -> np.ndarray:
        """Shortest incident edge length per node (local mesh size h)."""
        h = np.full(self.n_nodes, np.inf)
        np.minimum.at(h, self.edges[:, 0], self.edge_lengths)
        np.minimum.at(h, self.edges[:, 1], self.edge_lengths)
        return h

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        d = (self.node_coords[self.boundary_facets[:, 1]]
             - self.node_coords[self.boundary_facets[:, 0]])
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary facets."""
        d = (self.node_coords[self.boundary_facets[:, 1]]
             - self.node_coords[self.boundary_facets[:, 0]])
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.facet_lengths[:, None]
        # orient away from the owning element's centroid
        mid = self.node_coords[self.boundary_facets].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, mid - self.centroids[self.facet_elements]) < 0
        n[flip] *= -1.0
        return n

    @cached_property
    def node_elements(self) -> list[np.ndarray]:
        order = np.argsort(self.elements.ravel(), kind="stable")
        counts = np.bincount(self.elements.ravel(), minlength=self.n_nodes)
        elems = order // 3
        return np.split(elems, np.cumsum(counts)[:-1])

    # -- boundary queries -------------------------------------------------
    def tag_id(self, name: str) -> int:
        try:
            return self.tags[name].id
        except KeyError:
            raise MeshError(f"unknown boundary tag {name!r}; have {sorted(self.tags)}") from None

    def facets_with_tag(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.facet_tags == self.tag_id(name))

    def nodes_with_tag(self, name: str) -> np.ndarray:
        return np.unique(self.boundary_facets[self.facets_with_tag(name)])

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_facets)


def build_edges_and_neighbors(node_coords, elements, facet_tags=None, tag_names=None,
                              default_tag="boundary") -> SimplexMesh:
    """Assemble a :class:`SimplexMesh` from nodes and triangles.

    Element orientation is normalised to counter-clockwise.  Boundary facets
    are the facets with a single incident element; ``facet_tags`` maps a
    node pair (any order) to a tag name, unmatched boundary facets get
    ``default_tag``.

    Raises
    ------
    MeshError
        For degenerate elements or a facet shared by more than two elements.
    """
    coords = np.asarray(node_coords, dtype=float)
    elems = np.array(elements, dtype=np.int64).reshape(-1, 3)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise MeshError("node_coords must have shape (N, 2)")
    if elems.size and (elems.min() < 0 or elems.max() >= len(coords)):
        raise MeshError("element references a node index out of range")

    p = coords[elems]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    if np.any(signed == 0.0):
        raise MeshError(f"degenerate (zero-area) elements: {np.flatnonzero(signed == 0.0)[:10]}")
    neg = signed < 0
    elems[neg] = elems[neg][:, [0, 2, 1]]

    n_el = len(elems)
    # facet opposite local vertex k is (k+1, k+2)
    local = np.array([[1, 2], [2, 0], [0, 1]])
    facets = elems[:, local].reshape(-1, 2)
    key = np.sort(facets, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = uniq[counts > 2]
        raise MeshError(f"non-manifold connectivity: facets shared by >2 elements, e.g. {bad[:3].tolist()}")

    owner = np.repeat(np.arange(n_el), 3)
    local_k = np.tile(np.arange(3), n_el)
    neighbors = np.full((n_el, 3), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    inv_sorted = inverse[order]
    pair_start = np.flatnonzero(np.r_[True, inv_sorted[1:] != inv_sorted[:-1]])
    shared = pair_start[counts[inv_sorted[pair_start]] == 2]
    a, b = order[shared], order[shared + 1]
    neighbors[owner[a], local_k[a]] = owner[b]
    neighbors[owner[b], local_k[b]] = owner[a]

    single = pair_start[counts[inv_sorted[pair_start]] == 1]
    bidx = np.sort(order[single])
    boundary = facets[bidx]
    facet_elements = owner[bidx]

    names = list(tag_names or [])
    lookup = {}
    for pair, name in (facet_tags or {}).items():
        i, j = pair
        lookup[(min(i, j), max(i, j))] = name
        if name not in names:
            names.append(name)
    btag_names = [lookup.get((min(i, j), max(i, j)), default_tag) for i, j in boundary]
    if default_tag in btag_names and default_tag not in names:
        names.append(default_tag)
    tags = {name: BoundaryTag(name, tid) for tid, name in enumerate(names)}
    ftags = np.array([tags[n].id for n in btag_names], dtype=np.int64)

    return SimplexMesh(coords, elems, boundary, ftags, tags, neighbors, uniq, facet_elements)


def generate_annulus(spec: AnnulusSpec) -> SimplexMesh:
    """Structured polar triangulation of an annulus.

    A closed ring has ``n_az * (n_rad + 1)`` nodes and ``2 * n_az * n_rad``
    triangles; a slit ring has one extra node column.
    """
    spec.validate()
    n_r, n_t = int(spec.n_radial), int(spec.n_azimuthal)
    n_col = n_t + 1 if spec.slit else n_t
    radii = np.linspace(spec.inner_radius, spec.outer_radius, n_r + 1)
    theta = 2.0 * np.pi * np.arange(n_col) / n_t
    rr, tt = np.meshgrid(radii, theta, indexing="ij")
    coords = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1).reshape(-1, 2)
    if spec.slit:
        # exact closure of the cut so both sides share geometry
        coords[n_t::n_col] = coords[0::n_col]

    def node(i, j):
        return i * n_col + (j % n_col)

    tris = []
    for i in range(n_r):
        for j in range(n_t):
            a, b = node(i, j), node(i, j + 1)
            c, d = node(i + 1, j + 1), node(i + 1, j)
            tris.append((a, b, c))
            tris.append((a, c, d))

    ftags = {}
    for j in range(n_t):
        ftags[(node(0, j), node(0, j + 1))] = spec.inner_tag
        ftags[(node(n_r, j), node(n_r, j + 1))] = spec.outer_tag
    names = [spec.inner_tag, spec.outer_tag]
    if spec.slit:
        for i in range(n_r):
            ftags[(node(i, 0), node(i + 1, 0))] = spec.slit_tags[0]
            ftags[(node(i, n_t), node(i + 1, n_t))] = spec.slit_tags[1]
        names += list(spec.slit_tags)
    return build_edges_and_neighbors(coords, tris, ftags, names)


def generate_rectangle(lx: float, ly: float, nx: int, ny: int, origin=(0.0, 0.0),
                       tags=("bottom", "right", "top", "left")) -> SimplexMesh:
    """Structured triangulation of a rectangle with one tag per side."""
    if nx < 1 or ny < 1 or lx <= 0 or ly <= 0:
        raise MeshError("rectangle needs positive size and at least one cell per direction")
    x = origin[0] + np.linspace(0.0, lx, nx + 1)
    y = origin[1] + np.linspace(0.0, ly, ny + 1)
    xx, yy = np.meshgrid(x, y, indexing="xy")
    coords = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def node(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    bottom, right, top, left = tags
    ftags = {}
    for i in range(nx):
        ftags[(node(i, 0), node(i + 1, 0))] = bottom
        ftags[(node(i, ny), node(i + 1, ny))] = top
    for j in range(ny):
        ftags[(node(0, j), node(0, j + 1))] = left
        ftags[(node(nx, j), node(nx, j + 1))] = right
    return build_edges_and_neighbors(coords, tris, ftags, list(dict.fromkeys(tags)))


# -- shape functions and point location -----------------------------------

def barycentric(mesh: SimplexMesh, elements, points) -> np.ndarray:
    """Vectorised barycentric weights, shape (n, 3)."""
    elements = np.asarray(elements, dtype=np.int64)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    p = mesh.node_coords[mesh.elements[elements]]
    twice_area = 2.0 * mesh.areas[elements]
    w = np.empty((len(elements), 3))
    for k in (1, 2):
        i, j = (k + 1) % 3, (k + 2) % 3
        di = p[:, i] - points
        dj = p[:, j] - points
        w[:, k] = (di[:, 0] * dj[:, 1] - di[:, 1] * dj[:, 0]) / twice_area
    w[:, 0] = 1.0 - w[:, 1] - w[:, 2]
    return w


def shape_functions(mesh: SimplexMesh, element: int, point) -> np.ndarray:
    """The three linear shape-function values of ``element`` at ``point``.

    Points outside the element give a negative component.
    """
    if not 0 <= element < mesh.n_elements:
        raise IndexError(f"element {element} out of range")
    return barycentric(mesh, [element], np.asarray(point, dtype=float)[None, :])[0]


def _brute_force(mesh: SimplexMesh, point, eps=CONTAINMENT_EPS):
    w = barycentric(mesh, np.arange(mesh.n_elements), np.broadcast_to(point, (mesh.n_elements, 2)))
    inside = np.flatnonzero(w.min(axis=1) >= -eps)
    return int(inside[0]) if len(inside) else None


def _lowest_claimant(mesh: SimplexMesh, element, point, eps):
    # points on a shared facet or vertex go to the lowest-index containing element
    cands = np.unique(np.concatenate([mesh.node_elements[n] for n in mesh.elements[element]]))
    cands = cands[cands < element]
    if len(cands) == 0:
        return element
    w = barycentric(mesh, cands, np.broadcast_to(point, (len(cands), 2)))
    inside = cands[w.min(axis=1) >= -eps]
    return int(inside[0]) if len(inside) else element


def locate_point(mesh: SimplexMesh, start_element: int, point, eps=CONTAINMENT_EPS):
    """Find the element containing ``point`` by neighbour-to-neighbour walking.

    Returns the element index, or ``None`` when the point lies outside the
    mesh.  The walk crosses the facet with the most negative weight; if it
    revisits an element or runs into the boundary it falls back to an
    exhaustive scan (the annulus is not convex).
    """
    if not 0 <= start_element < mesh.n_elements:
        raise IndexError(f"start element {start_element} out of range")
    point = np.asarray(point, dtype=float)
    e = int(start_element)
    seen = set()
    while True:
        w = barycentric(mesh, [e], point[None, :])[0]
        k = int(np.argmin(w))
        if w[k] >= -eps:
            if w.min() <= eps:
                return _lowest_claimant(mesh, e, point, eps)
            return e
        seen.add(e)
        nxt = int(mesh.element_neighbors[e, k])
        if nxt < 0 or nxt in seen:
            return _brute_force(mesh, point, eps)
        e = nxt


def locate_points(mesh: SimplexMesh, start_elements, points, eps=CONTAINMENT_EPS,
                  max_walk=64, boundary_stops=False) -> np.ndarray:
    """Vectorised walk for many points; ``-1`` marks points outside the mesh.

    All points walk in lockstep; stragglers (cycled, hit the boundary, or
    exceeded ``max_walk`` hops) are resolved by exhaustive search.  With
    ``boundary_stops`` a walk that runs into the boundary reports ``-1``
    instead; movers use this so that a point beyond a zero-width cut is not
    claimed by the element on the far side of the cut.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    cur = np.array(start_elements, dtype=np.int64).copy()
    result = np.full(len(points), -1, dtype=np.int64)
    active = np.arange(len(points))
    stuck = []
    for _ in range(max_walk):
        if len(active) == 0:
            break
        w = barycentric(mesh, cur[active], points[active])
        k = np.argmin(w, axis=1)
        wmin = w[np.arange(len(active)), k]
        done = wmin >= -eps
        result[active[done]] = cur[active[done]]
        on_facet = active[done][w[done].min(axis=1) <= eps]
        for i in on_facet:
            result[i] = _lowest_claimant(mesh, int(result[i]), points[i], eps)
        active = active[~done]
        k = k[~done]
        nxt = mesh.element_neighbors[cur[active], k]
        hit_wall = nxt < 0
        if not boundary_stops:
            stuck.extend(active[hit_wall].tolist())
        active = active[~hit_wall]
        cur[active] = nxt[~hit_wall]
    stuck.extend(active.tolist())
    for i in stuck:
        found = _brute_force(mesh, points[i], eps)
        result[i] = -1 if found is None else found
    return result


def trace_segment(mesh: SimplexMesh, start_element: int, x0, x1):
    """Follow the straight segment x0 -> x1 through the mesh.

    Returns ``(element, facet)`` where ``facet`` is ``None`` if ``x1`` was
    reached inside ``element``, or the index into ``mesh.boundary_facets``
    through which the segment leaves the domain (``element`` is then the
    last element traversed).
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    e = int(start_element)
    for _ in range(mesh.n_elements + 1):
        w1 = barycentric(mesh, [e], x1[None, :])[0]
        if w1.min() >= -CONTAINMENT_EPS:
            return e, None
        w0 = barycentric(mesh, [e], x0[None, :])[0]
        # parameter t at which each barycentric coordinate reaches zero
        dw = w1 - w0
        t = np.full(3, np.inf)
        leaving = dw < 0
        t[leaving] = -w0[leaving] / dw[leaving]
        k = int(np.argmin(t))
        nxt = int(mesh.element_neighbors[e, k])
        if nxt < 0:
            i, j = mesh.elements[e, (k + 1) % 3], mesh.elements[e, (k + 2) % 3]
            fa = mesh.boundary_facets
            hit = np.flatnonzero(((fa[:, 0] == i) & (fa[:, 1] == j)) | ((fa[:, 0] == j) & (fa[:, 1] == i)))
            return e, int(hit[0])
        e = nxt
    raise MeshError("segment trace did not terminate")


def sector_groups(mesh: SimplexMesh, n_sectors: int, n_bands: int = 1,
                  center=(0.0, 0.0)) -> np.ndarray:
    """Node-to-group map from angular sectors x radial bands about ``center``."""
    rel = mesh.node_coords - np.asarray(center)
    ang = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2.0 * np.pi)
    s = np.minimum((ang / (2.0 * np.pi) * n_sectors).astype(int), n_sectors - 1)
    r = np.hypot(rel[:, 0], rel[:, 1])
    rmin, rmax = r.min(), r.max()
    if n_bands > 1 and rmax > rmin:
        b = np.minimum(((r - rmin) / (rmax - rmin) * n_bands).astype(int), n_bands - 1)
    else:
        b = np.zeros(len(r), dtype=int)
    groups = s * n_bands + b
    # compact labels so that every group is non-empty
    _, groups = np.unique(groups, return_inverse=True)
    return groups.ravel()
