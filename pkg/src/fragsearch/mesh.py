"""Triangle mesh data model, PLY/OBJ I/O, validation, clustering decimation.

All coordinates are millimetres. Meshes are immutable after construction:
the backing numpy arrays are marked read-only so instances can be shared
freely across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import MeshFormatError, UnsupportedFormatError

log = logging.getLogger(__name__)

FORMAT_PLY_ASCII = "ply-ascii"
FORMAT_PLY_BINARY = "ply-binary-little-endian"
FORMAT_OBJ = "obj"

_PLY_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _fmt_float(x: float) -> str:
    # repr of a Python float is the shortest string that parses back
    # to the same double, which keeps text round-trips bitwise exact
    return repr(float(x))


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface with optional per-vertex colors and normals.

    Invariants enforced at construction: face indices in range and distinct
    within each face, finite positions/normals, colors (if any) one RGB
    triple per vertex, normals (if any) unit length or exactly zero (the
    zero vector flags vertices whose normal is undefined).
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (M, 3), got {f.shape}")
        if not np.isfinite(v).all():
            raise ValueError("vertex positions contain NaN or infinite values")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError(
                    f"face index out of range [0, {len(v)}): "
                    f"min {f.min()}, max {f.max()}"
                )
            if (
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            ).any():
                raise ValueError("faces with repeated vertex indices are not allowed")

        c = self.colors
        if c is not None:
            c = np.ascontiguousarray(np.asarray(c, dtype=np.uint8))
            if c.shape != (len(v), 3):
                raise ValueError(
                    f"colors must be ({len(v)}, 3) uint8, got {c.shape}"
                )
        n = self.normals
        if n is not None:
            n = np.ascontiguousarray(np.asarray(n, dtype=np.float64))
            if n.shape != (len(v), 3):
                raise ValueError(f"normals must be ({len(v)}, 3), got {n.shape}")
            if not np.isfinite(n).all():
                raise ValueError("normals contain NaN or infinite values")
            norms = np.linalg.norm(n, axis=1)
            bad = ~((np.abs(norms - 1.0) <= 1e-6) | (norms == 0.0))
            if bad.any():
                raise ValueError(
                    f"{bad.sum()} normals are neither unit length (1e-6) nor zero"
                )

        for arr in (v, f, c, n):
            if arr is not None:
                arr.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "colors", c)
        object.__setattr__(self, "normals", n)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    def bounding_extent(self) -> np.ndarray:
        """Axis-aligned bounding box edge lengths (mm)."""
        if not len(self.vertices):
            return np.zeros(3)
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.bounding_extent()))

    def face_corners(self) -> np.ndarray:
        """(M, 3, 3) array of the vertex positions of each face."""
        return self.vertices[self.faces]

    def face_cross(self) -> np.ndarray:
        """Per-face cross product; its norm is twice the face area."""
        c = self.face_corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit face normals from winding order; zero where degenerate."""
        cr = self.face_cross()
        n = np.linalg.norm(cr, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(n > 1e-300, cr / n, 0.0)
        return out

    def edge_face_counts(self):
        """Map undirected edge -> number of incident faces, as arrays.

        Returns (edges (E, 2) sorted pairs, counts (E,)).
        """
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        edges, counts = np.unique(e, axis=0, return_counts=True)
        return edges, counts

    def is_closed(self) -> bool:
        if not len(self.faces):
            return False
        _, counts = self.edge_face_counts()
        return bool((counts >= 2).all())


@dataclass(frozen=True)
class ValidationReport:
    """Defect summary produced by :func:`validate`."""

    vertex_count: int
    face_count: int
    degenerate_face_count: int
    non_manifold_edge_count: int
    has_colors: bool
    bounding_extent: tuple[float, float, float]
    issues: tuple[str, ...] = field(default_factory=tuple)

    @property
    def clean(self) -> bool:
        return not self.issues


DEGENERATE_AREA_TOL = 1e-12  # mm^2


def validate(mesh: TriangleMesh) -> ValidationReport:
    """Count degenerate faces and non-manifold edges; never raises."""
    areas = mesh.face_areas()
    degenerate = int((areas < DEGENERATE_AREA_TOL).sum())
    if len(mesh.faces):
        _, counts = mesh.edge_face_counts()
        non_manifold = int((counts > 2).sum())
    else:
        non_manifold = 0
    issues = []
    if degenerate:
        issues.append(f"degenerate_faces:{degenerate}")
    if non_manifold:
        issues.append(f"non_manifold_edges:{non_manifold}")
    ext = mesh.bounding_extent()
    return ValidationReport(
        vertex_count=mesh.vertex_count,
        face_count=mesh.face_count,
        degenerate_face_count=degenerate,
        non_manifold_edge_count=non_manifold,
        has_colors=mesh.has_colors,
        bounding_extent=(float(ext[0]), float(ext[1]), float(ext[2])),
        issues=tuple(issues),
    )


# ---------------------------------------------------------------------------
# loading


def detect_format(path) -> str:
    """Sniff the on-disk format from extension and header bytes."""
    p = Path(path)
    if p.suffix.lower() == ".obj":
        return FORMAT_OBJ
    with open(p, "rb") as fh:
        head = fh.read(512)
    if not head.startswith(b"ply"):
        if p.suffix.lower() == ".ply":
            raise MeshFormatError("missing 'ply' magic", path=str(p), offset=0)
        return FORMAT_OBJ
    if b"format ascii" in head:
        return FORMAT_PLY_ASCII
    if b"format binary_little_endian" in head:
        return FORMAT_PLY_BINARY
    if b"format binary_big_endian" in head:
        raise UnsupportedFormatError(
            "big-endian PLY is not supported; re-export as "
            "binary_little_endian or ascii",
            path=str(p),
        )
    raise MeshFormatError("unrecognized PLY format line", path=str(p))


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Load a triangle mesh from PLY (ascii / binary LE) or OBJ.

    Colors are populated iff present in the file; face winding is kept
    as stored. Faces with repeated indices are dropped with a warning
    (dirty scan data); NaN geometry and out-of-range indices are errors.
    """
    path = Path(path)
    if not path.exists():
        raise MeshFormatError("file does not exist", path=str(path))
    fmt = format or detect_format(path)
    if fmt in (FORMAT_PLY_ASCII, FORMAT_PLY_BINARY):
        return _load_ply(path)
    if fmt == FORMAT_OBJ:
        return _load_obj(path)
    raise UnsupportedFormatError(f"unknown format {fmt!r}", path=str(path))


class _PlyElement:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.properties = []  # (name, dtype_str) or ("list", count_dt, idx_dt, name)


def _parse_ply_header(fh, path):
    """Parse header lines; returns (is_binary, elements, header_end_offset)."""
    line = fh.readline()
    n_line = 1
    if line.strip() != b"ply":
        raise MeshFormatError("missing 'ply' magic", path=path, line=1)
    is_binary = None
    elements = []
    while True:
        raw = fh.readline()
        n_line += 1
        if not raw:
            raise MeshFormatError("unexpected EOF in header", path=path, line=n_line)
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] == "comment" or tokens[0] == "obj_info":
            continue
        kw = tokens[0]
        if kw == "format":
            if tokens[1] == "ascii":
                is_binary = False
            elif tokens[1] == "binary_little_endian":
                is_binary = True
            elif tokens[1] == "binary_big_endian":
                raise UnsupportedFormatError(
                    "big-endian PLY is not supported", path=path, line=n_line
                )
            else:
                raise MeshFormatError(
                    f"unknown PLY format {tokens[1]!r}", path=path, line=n_line
                )
        elif kw == "element":
            try:
                elements.append(_PlyElement(tokens[1], int(tokens[2])))
            except (IndexError, ValueError):
                raise MeshFormatError("malformed element line", path=path, line=n_line)
        elif kw == "property":
            if not elements:
                raise MeshFormatError(
                    "property before any element", path=path, line=n_line
                )
            if tokens[1] == "list":
                try:
                    cdt = _PLY_SCALAR_TYPES[tokens[2]]
                    idt = _PLY_SCALAR_TYPES[tokens[3]]
                except (KeyError, IndexError):
                    raise MeshFormatError(
                        f"unknown list property types in {raw!r}",
                        path=path, line=n_line,
                    )
                elements[-1].properties.append(("list", cdt, idt, tokens[4]))
            else:
                try:
                    dt = _PLY_SCALAR_TYPES[tokens[1]]
                except KeyError:
                    raise MeshFormatError(
                        f"unknown property type {tokens[1]!r}", path=path, line=n_line
                    )
                elements[-1].properties.append((tokens[2], dt))
        elif kw == "end_header":
            break
        else:
            raise MeshFormatError(
                f"unexpected header keyword {kw!r}", path=path, line=n_line
            )
    if is_binary is None:
        raise MeshFormatError("header missing 'format' line", path=path)
    return is_binary, elements, fh.tell(), n_line


def _finish_mesh(path, verts, faces, colors, normals):
    verts = np.asarray(verts, dtype=np.float64)
    if not len(verts):
        raise MeshFormatError("file contains no vertices", path=path)
    if not np.isfinite(verts).all():
        raise MeshFormatError("vertex positions contain NaN/inf", path=path)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces):
        if faces.min() < 0 or faces.max() >= len(verts):
            raise MeshFormatError(
                f"face index out of range [0, {len(verts)}): "
                f"min {faces.min()}, max {faces.max()}",
                path=path,
            )
        repeated = (
            (faces[:, 0] == faces[:, 1])
            | (faces[:, 1] == faces[:, 2])
            | (faces[:, 0] == faces[:, 2])
        )
        if repeated.any():
            log.warning(
                "%s: dropping %d faces with repeated vertex indices",
                path, int(repeated.sum()),
            )
            faces = faces[~repeated]
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        # renormalize only rows that are off-unit (foreign f4 exports);
        # rows already unit within 1e-6 keep their exact stored bits
        fix = (np.abs(norms - 1.0) > 1e-6) & (norms > 1e-12)
        if fix.any():
            with np.errstate(invalid="ignore", divide="ignore"):
                normals = np.where(fix, normals / norms, normals)
        normals = np.where(norms <= 1e-12, 0.0, normals)
    return TriangleMesh(
        vertices=verts, faces=faces,
        colors=None if colors is None else np.asarray(colors, dtype=np.uint8),
        normals=normals,
    )


def _extract_vertex_fields(rec, path):
    for name in ("x", "y", "z"):
        if name not in rec.dtype.names:
            raise MeshFormatError(f"vertex element lacks property {name!r}", path=path)
    verts = np.column_stack(
        [rec["x"].astype(np.float64), rec["y"].astype(np.float64),
         rec["z"].astype(np.float64)]
    )
    colors = None
    if all(n in rec.dtype.names for n in ("red", "green", "blue")):
        colors = np.column_stack([rec["red"], rec["green"], rec["blue"]])
    normals = None
    if all(n in rec.dtype.names for n in ("nx", "ny", "nz")):
        normals = np.column_stack(
            [rec["nx"].astype(np.float64), rec["ny"].astype(np.float64),
             rec["nz"].astype(np.float64)]
        )
    return verts, colors, normals


def _load_ply(path):
    path = str(path)
    with open(path, "rb") as fh:
        is_binary, elements, data_start, header_lines = _parse_ply_header(fh, path)
        for el in elements:
            if el.name not in ("vertex", "face"):
                # lists of unknown length make skipping unsafe in binary files
                raise UnsupportedFormatError(
                    f"unsupported element {el.name!r}", path=path
                )
        data = fh.read()

    v_el = next((e for e in elements if e.name == "vertex"), None)
    f_el = next((e for e in elements if e.name == "face"), None)
    if v_el is None:
        raise MeshFormatError("no vertex element", path=path)
    if any(p[0] == "list" for p in v_el.properties):
        raise UnsupportedFormatError("list property on vertex element", path=path)

    if is_binary:
        return _load_ply_binary(path, data, data_start, v_el, f_el)
    return _load_ply_ascii(path, data, header_lines, v_el, f_el)


def _load_ply_binary(path, data, data_start, v_el, f_el):
    vdt = np.dtype([(name, "<" + dt) for name, dt in v_el.properties])
    need = vdt.itemsize * v_el.count
    if len(data) < need:
        raise MeshFormatError(
            f"truncated vertex data: need {need} bytes, have {len(data)}",
            path=path, offset=data_start,
        )
    rec = np.frombuffer(data[:need], dtype=vdt)
    verts, colors, normals = _extract_vertex_fields(rec, path)

    faces = np.zeros((0, 3), dtype=np.int64)
    if f_el is not None and f_el.count:
        lists = [p for p in f_el.properties if p[0] == "list"]
        if len(lists) != 1 or len(f_el.properties) != 1:
            raise UnsupportedFormatError(
                "face element must carry exactly one list property", path=path
            )
        _, cdt, idt, _name = lists[0]
        body = data[need:]
        fdt = np.dtype([("n", "<" + cdt), ("idx", "<" + idt, (3,))])
        expect = fdt.itemsize * f_el.count
        if len(body) < expect:
            raise MeshFormatError(
                f"truncated face data: need {expect} bytes, have {len(body)}",
                path=path, offset=data_start + need,
            )
        frec = np.frombuffer(body[:expect], dtype=fdt)
        if (frec["n"] != 3).any():
            bad = int(np.argmax(frec["n"] != 3))
            raise UnsupportedFormatError(
                f"face {bad} has {int(frec['n'][bad])} vertices; "
                "only triangles are supported",
                path=path, offset=data_start + need + bad * fdt.itemsize,
            )
        faces = frec["idx"].astype(np.int64)
    return _finish_mesh(path, verts, faces, colors, normals)


def _load_ply_ascii(path, data, header_lines, v_el, f_el):
    lines = data.split(b"\n")
    # strip trailing blank line from final newline
    pos = 0
    pnames = [p[0] for p in v_el.properties]
    nprops = len(pnames)
    rows = np.empty((v_el.count, nprops), dtype=np.float64)
    for i in range(v_el.count):
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        lineno = header_lines + pos + 1
        if pos >= len(lines):
            raise MeshFormatError("unexpected EOF in vertex data", path=path,
                                  line=lineno)
        parts = lines[pos].split()
        pos += 1
        if len(parts) < nprops:
            raise MeshFormatError(
                f"vertex line has {len(parts)} fields, expected {nprops}",
                path=path, line=lineno,
            )
        try:
            rows[i] = [float(t) for t in parts[:nprops]]
        except ValueError:
            raise MeshFormatError("unparsable vertex line", path=path, line=lineno)
    rec = np.zeros(v_el.count, dtype=[(name, "f8") for name in pnames])
    for j, name in enumerate(pnames):
        rec[name] = rows[:, j]
    verts, colors, normals = _extract_vertex_fields(rec, path)
    if colors is not None:
        colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)

    faces = []
    fcount = f_el.count if f_el is not None else 0
    for i in range(fcount):
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        lineno = header_lines + pos + 1
        if pos >= len(lines):
            raise MeshFormatError("unexpected EOF in face data", path=path,
                                  line=lineno)
        parts = lines[pos].split()
        pos += 1
        try:
            n = int(parts[0])
            idx = [int(t) for t in parts[1:1 + n]]
        except (ValueError, IndexError):
            raise MeshFormatError("unparsable face line", path=path, line=lineno)
        if n != 3:
            raise UnsupportedFormatError(
                f"face has {n} vertices; only triangles are supported",
                path=path, line=lineno,
            )
        if len(idx) != 3:
            raise MeshFormatError("truncated face line", path=path, line=lineno)
        faces.append(idx)
    return _finish_mesh(path, verts, np.array(faces, dtype=np.int64).reshape(-1, 3),
                        colors, normals)


def _load_obj(path):
    path = str(path)
    verts, colors, vnormals, faces = [], [], [], []
    any_color = False
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            kw = parts[0]
            if kw == "v":
                vals = parts[1:]
                if len(vals) not in (3, 6):
                    raise MeshFormatError(
                        f"'v' line has {len(vals)} values (want 3 or 6)",
                        path=path, line=lineno,
                    )
                try:
                    nums = [float(t) for t in vals]
                except ValueError:
                    raise MeshFormatError("unparsable 'v' line", path=path,
                                          line=lineno)
                verts.append(nums[:3])
                if len(nums) == 6:
                    any_color = True
                    colors.append([int(round(c * 255.0)) for c in nums[3:]])
                else:
                    colors.append([0, 0, 0])
            elif kw == "vn":
                try:
                    vnormals.append([float(t) for t in parts[1:4]])
                except ValueError:
                    raise MeshFormatError("unparsable 'vn' line", path=path,
                                          line=lineno)
            elif kw == "f":
                idx = []
                for tok in parts[1:]:
                    s = tok.split("/")[0]
                    try:
                        i = int(s)
                    except ValueError:
                        raise MeshFormatError(
                            f"unparsable face token {tok!r}", path=path, line=lineno
                        )
                    if i < 0:
                        raise UnsupportedFormatError(
                            "negative (relative) OBJ indices are not supported",
                            path=path, line=lineno,
                        )
                    idx.append(i - 1)
                if len(idx) < 3:
                    raise MeshFormatError("face with fewer than 3 vertices",
                                          path=path, line=lineno)
                for k in range(1, len(idx) - 1):  # fan-triangulate, keeps winding
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if any_color:
        carr = np.array(colors)
        if carr.min() < 0 or carr.max() > 255:
            raise MeshFormatError("OBJ color channel outside [0, 1]", path=path)
        colors = carr.astype(np.uint8)
    else:
        colors = None
    normals = None
    if vnormals and len(vnormals) == len(verts):
        normals = np.asarray(vnormals, dtype=np.float64)
    return _finish_mesh(path, verts, np.array(faces, dtype=np.int64).reshape(-1, 3),
                        colors, normals)


# ---------------------------------------------------------------------------
# saving


def save_mesh(mesh: TriangleMesh, path, format: str | None = None) -> None:
    """Write a mesh; PLY defaults to binary little-endian.

    Positions (and normals) are stored in double precision so a
    save/load round-trip is bitwise exact in every supported format.
    """
    path = Path(path)
    if format is None:
        format = FORMAT_OBJ if path.suffix.lower() == ".obj" else FORMAT_PLY_BINARY
    if format == FORMAT_PLY_BINARY:
        _save_ply(mesh, path, binary=True)
    elif format == FORMAT_PLY_ASCII:
        _save_ply(mesh, path, binary=False)
    elif format == FORMAT_OBJ:
        _save_obj(mesh, path)
    else:
        raise UnsupportedFormatError(f"unknown format {format!r}", path=str(path))


def _save_ply(mesh, path, binary):
    has_c = mesh.colors is not None
    has_n = mesh.normals is not None
    header = ["ply"]
    header.append(
        "format binary_little_endian 1.0" if binary else "format ascii 1.0"
    )
    header.append(f"element vertex {mesh.vertex_count}")
    header += ["property double x", "property double y", "property double z"]
    if has_n:
        header += ["property double nx", "property double ny", "property double nz"]
    if has_c:
        header += ["property uchar red", "property uchar green",
                   "property uchar blue"]
    header.append(f"element face {mesh.face_count}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if has_n:
                fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
            if has_c:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            rec = np.zeros(mesh.vertex_count, dtype=np.dtype(fields))
            rec["x"], rec["y"], rec["z"] = mesh.vertices.T
            if has_n:
                rec["nx"], rec["ny"], rec["nz"] = mesh.normals.T
            if has_c:
                rec["red"], rec["green"], rec["blue"] = mesh.colors.T
            fh.write(rec.tobytes())
            fdt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
            frec = np.zeros(mesh.face_count, dtype=fdt)
            frec["n"] = 3
            frec["idx"] = mesh.faces.astype(np.int32)
            fh.write(frec.tobytes())
        else:
            out = []
            for i in range(mesh.vertex_count):
                parts = [_fmt_float(x) for x in mesh.vertices[i]]
                if has_n:
                    parts += [_fmt_float(x) for x in mesh.normals[i]]
                if has_c:
                    parts += [str(int(x)) for x in mesh.colors[i]]
                out.append(" ".join(parts))
            for f in mesh.faces:
                out.append(f"3 {f[0]} {f[1]} {f[2]}")
            fh.write(("\n".join(out) + "\n").encode("ascii"))


def _save_obj(mesh, path):
    has_c = mesh.colors is not None
    has_n = mesh.normals is not None
    lines = []
    for i in range(mesh.vertex_count):
        parts = ["v"] + [_fmt_float(x) for x in mesh.vertices[i]]
        if has_c:
            parts += [_fmt_float(c / 255.0) for c in mesh.colors[i]]
        lines.append(" ".join(parts))
    if has_n:
        for n in mesh.normals:
            lines.append("vn " + " ".join(_fmt_float(x) for x in n))
    for f in mesh.faces:
        if has_n:
            lines.append(f"f {f[0]+1}//{f[0]+1} {f[1]+1}//{f[1]+1} "
                         f"{f[2]+1}//{f[2]+1}")
        else:
            lines.append(f"f {f[0]+1} {f[1]+1} {f[2]+1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# normals and decimation


def compute_vertex_normals(mesh: TriangleMesh) -> TriangleMesh:
    """Area-weighted vertex normals from incident face windings.

    Vertices with no usable incident face (isolated, or all incident
    faces degenerate) get the zero vector, which downstream descriptor
    code treats as "normal undefined".
    """
    if not mesh.face_count:
        raise ValueError("mesh has no faces")
    cross = mesh.face_cross()  # length = 2 * area, so summing is area-weighted
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    norms = np.linalg.norm(acc, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = np.where(norms > 1e-12, acc / norms, 0.0)
    return replace(mesh, normals=normals)


def cluster_cell_size(mesh: TriangleMesh, target_vertex_count: int,
                      max_iter: int = 32) -> float:
    """Binary-search a uniform grid cell size for vertex clustering.

    Picks the smallest cell size whose clustered vertex count is
    <= 1.2 * target, i.e. the largest achievable count under that cap.
    """
    v = mesh.vertices
    extent = mesh.bounding_extent()
    diag = float(np.linalg.norm(extent))
    if diag == 0.0:
        return 1.0
    cap = int(np.floor(1.2 * target_vertex_count))

    def count(cell):
        keys = np.floor((v - v.min(axis=0)) / cell).astype(np.int64)
        return len(np.unique(keys, axis=0))

    # count(lo) ~ N; count(hi) == 1 since every offset lands in cell 0
    lo, hi = diag / 1e4, 2.0 * diag
    best = hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if count(mid) <= cap:
            best = mid
            hi = mid
        else:
            lo = mid
    return best


def decimate(mesh: TriangleMesh, target_vertex_count: int) -> TriangleMesh:
    """Uniform-grid vertex clustering decimation.

    Cluster representative is the centroid; colors average per channel;
    faces collapsing to fewer than three distinct clusters are dropped.
    Normals are not carried over (recompute after decimation).
    """
    if target_vertex_count < 4:
        raise ValueError("target_vertex_count must be >= 4")
    if not mesh.vertex_count:
        raise ValueError("cannot decimate an empty mesh")
    if target_vertex_count >= mesh.vertex_count:
        log.warning(
            "decimate target %d >= vertex count %d; returning input unchanged",
            target_vertex_count, mesh.vertex_count,
        )
        return mesh

    cell = cluster_cell_size(mesh, target_vertex_count)
    origin = mesh.vertices.min(axis=0)
    keys = np.floor((mesh.vertices - origin) / cell).astype(np.int64)
    _, cluster_of, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    cluster_of = cluster_of.ravel()
    n_clusters = len(counts)

    centroids = np.zeros((n_clusters, 3))
    np.add.at(centroids, cluster_of, mesh.vertices)
    centroids /= counts[:, None]

    colors = None
    if mesh.colors is not None:
        csum = np.zeros((n_clusters, 3))
        np.add.at(csum, cluster_of, mesh.colors.astype(np.float64))
        colors = np.clip(np.rint(csum / counts[:, None]), 0, 255).astype(np.uint8)

    new_faces = cluster_of[mesh.faces]
    keep = (
        (new_faces[:, 0] != new_faces[:, 1])
        & (new_faces[:, 1] != new_faces[:, 2])
        & (new_faces[:, 0] != new_faces[:, 2])
    )
    return TriangleMesh(vertices=centroids, faces=new_faces[keep], colors=colors)
