"""Oriented polyhedral meshes: topology, orientation signs and geometry.

Faces are planar polygons given by a vertex loop; the loop winding fixes the
face normal by the right-hand rule.  Edges are derived from the face loops
and oriented from the lower to the higher global vertex index.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PLANARITY_TOL = 1e-10
SLIVER_THRESHOLD = 1e-3


class MeshError(ValueError):
    """Raised for malformed, non-manifold or degenerate meshes."""


@dataclass(frozen=True)
class Frame:
    """Local affine frame of an entity: ``xi = axes @ (x - center) / scale``."""

    center: np.ndarray
    scale: float
    axes: np.ndarray

    def local(self, points):
        return (np.asarray(points) - self.center) @ self.axes.T / self.scale


@dataclass
class PolyMesh:
    vertices: np.ndarray
    face_vertices: list
    element_faces: list

    # derived quantities, filled by ``_build``
    edges: np.ndarray = field(init=False)
    edge_tangents: np.ndarray = field(init=False)
    edge_lengths: np.ndarray = field(init=False)
    edge_midpoints: np.ndarray = field(init=False)
    face_edges: list = field(init=False)
    face_edge_orient: list = field(init=False)
    face_edge_normals: list = field(init=False)
    face_normals: np.ndarray = field(init=False)
    face_centers: np.ndarray = field(init=False)
    face_areas: np.ndarray = field(init=False)
    face_diams: np.ndarray = field(init=False)
    face_elements: list = field(init=False)
    face_frames: list = field(init=False)
    element_face_orient: list = field(init=False)
    element_edges: list = field(init=False)
    element_vertices: list = field(init=False)
    element_centers: np.ndarray = field(init=False)
    element_volumes: np.ndarray = field(init=False)
    element_diams: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.face_vertices = [list(map(int, f)) for f in self.face_vertices]
        self.element_faces = [list(map(int, t)) for t in self.element_faces]
        self._build()

    # ------------------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.face_vertices)

    @property
    def n_elements(self):
        return len(self.element_faces)

    @property
    def h(self):
        return float(self.element_diams.max())

    def counts(self):
        return {"vertices": self.n_vertices, "edges": self.n_edges,
                "faces": self.n_faces, "elements": self.n_elements}

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces - self.n_elements

    def boundary_faces(self):
        return [f for f, els in enumerate(self.face_elements) if len(els) == 1]

    def edge_frame(self, e):
        return Frame(self.edge_midpoints[e], float(self.edge_lengths[e]),
                     self.edge_tangents[e][None, :])

    def element_frame(self, t):
        return Frame(self.element_centers[t], float(self.element_diams[t]), np.eye(3))

    def face_fan(self, f):
        """Triangles covering face ``f`` (a triangle is kept whole)."""
        loop = self.vertices[self.face_vertices[f]]
        if len(loop) == 3:
            return [loop]
        c = self.face_centers[f]
        return [np.array([c, loop[i], loop[(i + 1) % len(loop)]]) for i in range(len(loop))]

    def element_fan(self, t):
        """Tetrahedra covering element ``t`` (a tetrahedron is kept whole)."""
        faces = self.element_faces[t]
        if len(faces) == 4 and all(len(self.face_vertices[f]) == 3 for f in faces):
            verts = sorted({v for f in faces for v in self.face_vertices[f]})
            return [self.vertices[verts]]
        c = self.element_centers[t]
        tets = []
        for f in faces:
            for tri in self.face_fan(f):
                tets.append(np.vstack([c[None, :], tri]))
        return tets

    def signature(self, kind, i):
        """Translation-invariant key of an entity's geometry and local orderings.

        Two entities with equal keys have identical local bases and operator
        matrices (up to roundoff), which lets structured meshes share them.
        """
        cache = self.__dict__.setdefault("_signature_cache", {})
        key = (kind, i)
        if key not in cache:
            V, E = self.vertices, self.edges
            if kind == "edge":
                parts = [V[E[i]]]
                ref = V[E[i][0]]
            elif kind == "face":
                fe = self.face_edges[i]
                parts = [V[self.face_vertices[i]], V[E[fe]].reshape(-1, 3)]
                ref = V[self.face_vertices[i][0]]
            else:
                faces = self.element_faces[i]
                parts = [V[self.element_vertices[i]], V[E[self.element_edges[i]]].reshape(-1, 3)]
                parts += [V[self.face_vertices[f]] for f in faces]
                parts += [V[E[self.face_edges[f]]].reshape(-1, 3) for f in faces]
                ref = V[self.element_vertices[i][0]]
            scale = float(np.abs(parts[0] - ref).max()) or 1.0
            rel = np.round((np.vstack(parts) - ref) / scale, 9) + 0.0
            extra = ()
            if kind == "element":
                extra = tuple(int(s) for s in self.element_face_orient[i])
                extra += tuple(len(self.face_vertices[f]) for f in self.element_faces[i])
            elif kind == "face":
                extra = (len(self.face_vertices[i]),)
            cache[key] = (kind, round(scale, 12), rel.tobytes(), extra)
        return cache[key]

    # ------------------------------------------------------------------
    def _build(self):
        V = self.vertices
        nf = len(self.face_vertices)
        if V.ndim != 2 or V.shape[1] != 3:
            raise MeshError("vertices must be an (N, 3) array")
        for f, loop in enumerate(self.face_vertices):
            if len(loop) < 3 or len(set(loop)) != len(loop):
                raise MeshError(f"face {f} needs at least 3 distinct vertices")
            if min(loop) < 0 or max(loop) >= len(V):
                raise MeshError(f"face {f} references a missing vertex")

        # edges, deduplicated over face loops
        edge_index = {}
        face_edges = []
        for loop in self.face_vertices:
            fe = []
            for a, b in zip(loop, loop[1:] + loop[:1]):
                key = (min(a, b), max(a, b))
                if key not in edge_index:
                    edge_index[key] = len(edge_index)
                fe.append(edge_index[key])
            face_edges.append(fe)
        self.edges = np.array(sorted(edge_index, key=edge_index.get), dtype=int).reshape(-1, 2)
        self.face_edges = face_edges
        d = V[self.edges[:, 1]] - V[self.edges[:, 0]]
        self.edge_lengths = np.linalg.norm(d, axis=1)
        if np.any(self.edge_lengths <= 0):
            raise MeshError("zero-length edge")
        self.edge_tangents = d / self.edge_lengths[:, None]
        self.edge_midpoints = 0.5 * (V[self.edges[:, 0]] + V[self.edges[:, 1]])

        # faces: Newell normal, centroid, planarity, star-shapedness
        self.face_normals = np.zeros((nf, 3))
        self.face_centers = np.zeros((nf, 3))
        self.face_areas = np.zeros(nf)
        self.face_diams = np.zeros(nf)
        self.face_frames = []
        self.face_edge_orient = []
        self.face_edge_normals = []
        for f, loop in enumerate(self.face_vertices):
            P = V[loop]
            nxt = np.roll(P, -1, axis=0)
            newell = 0.5 * np.cross(P, nxt).sum(axis=0)
            area = np.linalg.norm(newell)
            if area <= 0:
                raise MeshError(f"face {f} is degenerate")
            n = newell / area
            hF = _diameter(P)
            if np.max(np.abs((P - P.mean(axis=0)) @ n)) > PLANARITY_TOL * hF:
                raise MeshError(f"face {f} is not planar")
            # area-weighted centroid of the fan from the vertex average
            g = P.mean(axis=0)
            tri_area = 0.5 * np.cross(P - g, nxt - g) @ n
            cF = ((g + P + nxt) / 3.0 * tri_area[:, None]).sum(axis=0) / tri_area.sum()
            fan = 0.5 * np.cross(P - cF, nxt - cF) @ n
            if np.any(fan <= 1e-14 * hF * hF):
                raise MeshError(f"face {f} is not star-shaped with respect to its centroid")
            self.face_normals[f] = n
            self.face_centers[f] = cF
            self.face_areas[f] = fan.sum()
            self.face_diams[f] = hF
            e1 = nxt[0] - P[0]
            e1 = e1 - (e1 @ n) * n
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(n, e1)
            self.face_frames.append(Frame(cF, hF, np.array([e1, e2])))
            orient, nfe = [], []
            for e in face_edges[f]:
                nrm = np.cross(n, self.edge_tangents[e])
                s = 1 if nrm @ (self.edge_midpoints[e] - cF) > 0 else -1
                orient.append(s)
                nfe.append(nrm)
            self.face_edge_orient.append(np.array(orient))
            self.face_edge_normals.append(np.array(nfe))

        # elements
        nt = len(self.element_faces)
        face_elements = [[] for _ in range(nf)]
        for t, faces in enumerate(self.element_faces):
            if len(faces) < 4 or len(set(faces)) != len(faces):
                raise MeshError(f"element {t} needs at least 4 distinct faces")
            for f in faces:
                if f < 0 or f >= nf:
                    raise MeshError(f"element {t} references a missing face")
                face_elements[f].append(t)
        for f, els in enumerate(face_elements):
            if len(els) not in (1, 2):
                raise MeshError(f"face {f} is non-manifold ({len(els)} incident elements)")
        self.face_elements = face_elements

        self.element_centers = np.zeros((nt, 3))
        self.element_volumes = np.zeros(nt)
        self.element_diams = np.zeros(nt)
        self.element_face_orient = []
        self.element_edges = []
        self.element_vertices = []
        for t, faces in enumerate(self.element_faces):
            verts = sorted({v for f in faces for v in self.face_vertices[f]})
            self.element_vertices.append(np.array(verts))
            self.element_edges.append(np.array(sorted({e for f in faces for e in self.face_edges[f]})))
            P = V[verts]
            g = P.mean(axis=0)
            # orientation from the vertex average, robust for star-shaped cells
            signs = []
            for f in faces:
                s = self.face_normals[f] @ (self.face_centers[f] - g)
                if abs(s) < 1e-12 * _diameter(P):
                    s = _signed_volume_fallback(self, f, g)
                signs.append(1 if s > 0 else -1)
            signs = np.array(signs)
            # volume-weighted centroid of the pyramids on g
            vol, mom = 0.0, np.zeros(3)
            for f, s in zip(faces, signs):
                pv = s * self.face_areas[f] * (self.face_normals[f] @ (self.face_centers[f] - g)) / 3.0
                vol += pv
                mom += pv * (0.75 * self.face_centers[f] + 0.25 * g)
            if vol <= 0:
                raise MeshError(f"element {t} has non-positive volume")
            cT = mom / vol
            hT = _diameter(P)
            for f, s in zip(faces, signs):
                for tri in self.face_fan(f):
                    v6 = s * np.linalg.det(np.array([tri[0] - cT, tri[1] - cT, tri[2] - cT]))
                    if v6 <= 1e-14 * hT ** 3:
                        raise MeshError(f"element {t} is not star-shaped with respect to its centroid")
            self.element_centers[t] = cT
            self.element_volumes[t] = vol
            self.element_diams[t] = hT
            self.element_face_orient.append(signs)

        for f, els in enumerate(face_elements):
            if len(els) == 2:
                t0, t1 = els
                s0 = self.element_face_orient[t0][self.element_faces[t0].index(f)]
                s1 = self.element_face_orient[t1][self.element_faces[t1].index(f)]
                if s0 == s1:
                    raise MeshError(f"face {f} has inconsistent orientation in its two elements")

    # ------------------------------------------------------------------
    def reoriented(self, faces=None):
        """Copy of the mesh with the loops of ``faces`` (default: all) reversed."""
        faces = range(self.n_faces) if faces is None else set(faces)
        loops = [list(reversed(l)) if f in faces else list(l) for f, l in enumerate(self.face_vertices)]
        return PolyMesh(self.vertices.copy(), loops, [list(t) for t in self.element_faces])


def _diameter(P):
    P = np.asarray(P)
    d = P[:, None, :] - P[None, :, :]
    return float(np.sqrt((d ** 2).sum(axis=-1)).max())


def _signed_volume_fallback(mesh, f, g):
    loop = mesh.vertices[mesh.face_vertices[f]]
    c = loop.mean(axis=0)
    vol = 0.0
    for a, b in zip(loop, np.roll(loop, -1, axis=0)):
        vol += np.linalg.det(np.array([c - g, a - g, b - g]))
    return vol


# ----------------------------------------------------------------------
# file format and generators
# ----------------------------------------------------------------------
def _tokens(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def load_mesh(path) -> PolyMesh:
    """Read a mesh in the ``vertices``/``faces``/``elements`` text format."""
    lines = list(_tokens(Path(path).read_text(encoding="utf-8")))
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(lines):
            raise MeshError(f"missing '{name}' section")
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"expected '{name} N', got {lines[pos]!r}")
        pos += 1
        try:
            return int(parts[1])
        except ValueError as exc:
            raise MeshError(f"bad count in {lines[pos - 1]!r}") from exc

    def body(count):
        nonlocal pos
        if pos + count > len(lines):
            raise MeshError("unexpected end of file")
        out = lines[pos:pos + count]
        pos += count
        return out

    try:
        nv = header("vertices")
        verts = [list(map(float, l.split())) for l in body(nv)]
        if any(len(v) != 3 for v in verts):
            raise MeshError("vertex lines must have three coordinates")
        nf = header("faces")
        faces = []
        for l in body(nf):
            vals = list(map(int, l.split()))
            if len(vals) < 1 or vals[0] != len(vals) - 1:
                raise MeshError(f"bad face line {l!r}")
            faces.append(vals[1:])
        ne = header("elements")
        elements = []
        for l in body(ne):
            vals = list(map(int, l.split()))
            if len(vals) < 1 or vals[0] != len(vals) - 1:
                raise MeshError(f"bad element line {l!r}")
            elements.append(vals[1:])
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"parse failure: {exc}") from exc
    if pos != len(lines):
        raise MeshError("trailing content after elements section")
    return PolyMesh(np.array(verts, dtype=float).reshape(-1, 3), faces, elements)


def write_mesh(mesh: PolyMesh, path) -> None:
    out = [f"vertices {mesh.n_vertices}"]
    out += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    out.append(f"faces {mesh.n_faces}")
    out += [" ".join(map(str, [len(l)] + list(l))) for l in mesh.face_vertices]
    out.append(f"elements {mesh.n_elements}")
    out += [" ".join(map(str, [len(t)] + list(t))) for t in mesh.element_faces]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def mesh_from_cells(vertices, cells) -> PolyMesh:
    """Build a mesh from cells given as lists of face vertex loops."""
    face_id = {}
    loops = []
    elements = []
    for cell in cells:
        fl = []
        for loop in cell:
            key = frozenset(loop)
            if key not in face_id:
                face_id[key] = len(loops)
                loops.append(list(loop))
            fl.append(face_id[key])
        elements.append(fl)
    return PolyMesh(np.asarray(vertices, dtype=float), loops, elements)


def _grid_vertices(n, coords=None):
    ax = np.linspace(0.0, 1.0, n + 1) if coords is None else np.asarray(coords)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]), (lambda i, j, l: (i * (n + 1) + j) * (n + 1) + l)


def generate_tet_mesh(n: int) -> PolyMesh:
    """Kuhn tetrahedral mesh of the unit cube: ``n**3`` cubes split into 6 tets."""
    if n < 1:
        raise ValueError("n must be >= 1")
    verts, idx = _grid_vertices(n)
    unit = np.eye(3, dtype=int)
    cells = []
    for i, j, l in itertools.product(range(n), repeat=3):
        base = np.array([i, j, l])
        for perm in itertools.permutations(range(3)):
            p = base.copy()
            path = [idx(*p)]
            for ax in perm:
                p = p + unit[ax]
                path.append(idx(*p))
            cells.append([[path[a] for a in tri] for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))])
    return mesh_from_cells(verts, cells)


def _hex_cells(n, idx, i, j, l):
    c = [idx(i + a, j + b, l + d) for a, b, d in itertools.product((0, 1), repeat=3)]
    # c index = 4a + 2b + d; faces x-, x+, y-, y+, z-, z+
    return [[c[0], c[1], c[3], c[2]], [c[4], c[5], c[7], c[6]],
            [c[0], c[1], c[5], c[4]], [c[2], c[3], c[7], c[6]],
            [c[0], c[2], c[6], c[4]], [c[1], c[3], c[7], c[5]]]


def generate_hex_mesh(n: int, coords=None) -> PolyMesh:
    """Structured mesh of boxes; ``coords`` gives the (shared) grid lines per axis."""
    if n < 1:
        raise ValueError("n must be >= 1")
    verts, idx = _grid_vertices(n, coords)
    cells = [_hex_cells(n, idx, i, j, l) for i, j, l in itertools.product(range(n), repeat=3)]
    return mesh_from_cells(verts, cells)


def generate_prism_mesh(n: int, coords=None) -> PolyMesh:
    """Boxes split into two triangular prisms along a vertical diagonal plane."""
    if n < 1:
        raise ValueError("n must be >= 1")
    verts, idx = _grid_vertices(n, coords)
    cells = []
    for i, j, l in itertools.product(range(n), repeat=3):
        v = {(a, b, d): idx(i + a, j + b, l + d) for a, b, d in itertools.product((0, 1), repeat=3)}
        for tri in (((0, 0), (1, 0), (1, 1)), ((0, 0), (1, 1), (0, 1))):
            bot = [v[(a, b, 0)] for a, b in tri]
            top = [v[(a, b, 1)] for a, b in tri]
            sides = [[bot[s], bot[(s + 1) % 3], top[(s + 1) % 3], top[s]] for s in range(3)]
            cells.append([bot, top] + sides)
    return mesh_from_cells(verts, cells)


def generate_mixed_mesh(n: int = 2, seed: int = 0) -> PolyMesh:
    """Polyhedral test mesh: graded boxes, prisms, and merged box pairs.

    Grid lines are randomly graded.  Columns of the grid are filled with
    boxes, with prism pairs, or with stacked box pairs merged into a single
    ten-faced element whose side faces come in coplanar pairs.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    steps = 1.0 + 0.6 * rng.random(n)
    coords = np.concatenate([[0.0], np.cumsum(steps) / steps.sum()])
    verts, idx = _grid_vertices(n, coords)
    cells = []
    for i, j in itertools.product(range(n), repeat=2):
        kind = (i + 2 * j) % 3
        l = 0
        while l < n:
            if kind == 0 and l + 1 < n:
                lower = _hex_cells(n, idx, i, j, l)
                upper = _hex_cells(n, idx, i, j, l + 1)
                # drop the shared z-face, keep the coplanar side faces separate
                cells.append(lower[:5] + upper[:4] + upper[5:])
                l += 2
                continue
            if kind == 1:
                v = {(a, b, d): idx(i + a, j + b, l + d) for a, b, d in itertools.product((0, 1), repeat=3)}
                for tri in (((0, 0), (1, 0), (1, 1)), ((0, 0), (1, 1), (0, 1))):
                    bot = [v[(a, b, 0)] for a, b in tri]
                    top = [v[(a, b, 1)] for a, b in tri]
                    sides = [[bot[s], bot[(s + 1) % 3], top[(s + 1) % 3], top[s]] for s in range(3)]
                    cells.append([bot, top] + sides)
            else:
                cells.append(_hex_cells(n, idx, i, j, l))
            l += 1
    return mesh_from_cells(verts, cells)


def generate_distorted_tet_mesh(n: int, amplitude: float = 0.2, seed: int = 0) -> PolyMesh:
    """Kuhn tet mesh with interior vertices randomly displaced."""
    base = generate_tet_mesh(n)
    rng = np.random.default_rng(seed)
    V = base.vertices.copy()
    interior = np.all((V > 1e-12) & (V < 1 - 1e-12), axis=1)
    V[interior] += amplitude / n * (rng.random((interior.sum(), 3)) - 0.5)
    return PolyMesh(V, base.face_vertices, base.element_faces)


def mesh_from_spec(spec: str) -> PolyMesh:
    """Resolve ``tets:n``, ``hex:n``, ``prisms:n``, ``mixed:n`` or a file path."""
    kinds = {"tets": generate_tet_mesh, "hex": generate_hex_mesh,
             "prisms": generate_prism_mesh, "mixed": generate_mixed_mesh,
             "distorted": generate_distorted_tet_mesh}
    if ":" in spec:
        kind, _, arg = spec.partition(":")
        if kind in kinds:
            return kinds[kind](int(arg))
    return load_mesh(spec)


def mesh_diagnostics(mesh: PolyMesh) -> dict:
    """Meshsize, entity counts and shape-regularity proxies."""
    ratios = []
    for t in range(mesh.n_elements):
        hT = mesh.element_diams[t]
        for tet in mesh.element_fan(t):
            ratios.append(_inradius(tet) / hT)
    ratios = np.array(ratios)
    edge_ratio = min(mesh.edge_lengths[mesh.element_edges[t]].min() / mesh.element_diams[t]
                     for t in range(mesh.n_elements))
    report = {"h": mesh.h, **mesh.counts(),
              "euler": mesh.euler_characteristic(),
              "min_inradius_ratio": float(ratios.min()),
              "min_edge_ratio": float(edge_ratio)}
    report["flagged"] = bool(report["min_inradius_ratio"] < SLIVER_THRESHOLD)
    return report


def _inradius(tet):
    a, b, c, d = tet
    vol = abs(np.linalg.det(np.array([b - a, c - a, d - a]))) / 6.0
    area = sum(0.5 * np.linalg.norm(np.cross(q - p, r - p))
               for p, q, r in ((a, b, c), (a, b, d), (a, c, d), (b, c, d)))
    return 3.0 * vol / area
