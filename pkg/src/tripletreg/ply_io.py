"""Reading and writing PLY clouds and plain-text transform files."""

from __future__ import annotations

import numpy as np

from .errors import FileFormatError, InvalidInputError
from .geometry import PointCloud

_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_VIEWPOINT_COMMENT = "viewpoint"


class _Element:
    def __init__(self, name: str, count: int) -> None:
        self.name = name
        self.count = count
        self.properties: list[tuple[str, str]] = []  # (name, dtype code)
        self.list_properties: list[tuple[str, str, str]] = []  # (name, count code, item code)

    @property
    def is_fixed(self) -> bool:
        return not self.list_properties


def _parse_header(lines: list[str], path) -> tuple[str, list[_Element], np.ndarray | None, int]:
    """Parse header lines; returns (format, elements, viewpoint, body line index)."""
    if not lines or lines[0].strip() != "ply":
        raise FileFormatError(f"{path}: not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[_Element] = []
    viewpoint = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens:
            continue
        word = tokens[0]
        if word == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise FileFormatError(f"{path}:{lineno}: unsupported format {raw.strip()!r}")
            fmt = tokens[1]
        elif word == "comment":
            if len(tokens) == 5 and tokens[1] == _VIEWPOINT_COMMENT:
                try:
                    viewpoint = np.array([float(t) for t in tokens[2:5]])
                except ValueError:
                    pass  # an ordinary comment that merely starts with the keyword
        elif word == "element":
            if len(tokens) != 3:
                raise FileFormatError(f"{path}:{lineno}: malformed element declaration")
            try:
                count = int(tokens[2])
            except ValueError:
                raise FileFormatError(f"{path}:{lineno}: bad element count {tokens[2]!r}") from None
            if count < 0:
                raise FileFormatError(f"{path}:{lineno}: negative element count")
            elements.append(_Element(tokens[1], count))
        elif word == "property":
            if not elements:
                raise FileFormatError(f"{path}:{lineno}: property before any element")
            if len(tokens) == 3 and tokens[1] in _SCALAR_TYPES:
                elements[-1].properties.append((tokens[2], _SCALAR_TYPES[tokens[1]]))
            elif (
                len(tokens) == 5
                and tokens[1] == "list"
                and tokens[2] in _SCALAR_TYPES
                and tokens[3] in _SCALAR_TYPES
            ):
                elements[-1].list_properties.append(
                    (tokens[4], _SCALAR_TYPES[tokens[2]], _SCALAR_TYPES[tokens[3]])
                )
            else:
                raise FileFormatError(f"{path}:{lineno}: unsupported property {raw.strip()!r}")
        elif word == "end_header":
            if fmt is None:
                raise FileFormatError(f"{path}: header has no format declaration")
            return fmt, elements, viewpoint, lineno
        elif word == "obj_info":
            continue
        else:
            raise FileFormatError(f"{path}:{lineno}: unknown header keyword {word!r}")
    raise FileFormatError(f"{path}: header never ends (missing end_header)")


def _vertex_arrays(element: _Element, table: np.ndarray, path):
    names = [p[0] for p in element.properties]
    for needed in ("x", "y", "z"):
        if needed not in names:
            raise FileFormatError(f"{path}: vertex element lacks required property {needed!r}")
    pts = np.stack([table[n].astype(np.float64) for n in ("x", "y", "z")], axis=1)
    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.stack([table[n].astype(np.float64) for n in ("nx", "ny", "nz")], axis=1)
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(lengths == 0.0):
            normals = None
        else:
            normals = normals / lengths[:, None]
    return pts, normals


def read_ply(path) -> PointCloud:
    """Load a PLY cloud (ASCII or binary little-endian).

    Vertex positions are required; nx/ny/nz normals are loaded when present
    (renormalized, and dropped entirely if any row is zero).  Face elements
    and unknown vertex properties are skipped.  A ``comment viewpoint x y z``
    line restores the cloud's sensor position.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    end_marker = b"end_header\n"
    header_end = blob.find(end_marker)
    if header_end < 0:
        raise FileFormatError(f"{path}: header never ends (missing end_header)")
    header_text = blob[: header_end + len(end_marker)].decode("ascii", errors="replace")
    fmt, elements, viewpoint, _ = _parse_header(header_text.splitlines(), path)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None or vertex.count == 0:
        raise FileFormatError(f"{path}: no vertex element with points")
    if not vertex.is_fixed:
        raise FileFormatError(f"{path}: list-valued vertex properties are not supported")

    body = blob[header_end + len(end_marker):]
    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        cursor = 0
        table = None
        for element in elements:
            if cursor + element.count > len(lines):
                raise FileFormatError(
                    f"{path}: file ends inside element {element.name!r} "
                    f"({len(lines) - cursor} of {element.count} rows present)"
                )
            if element.name == "vertex":
                dtype = np.dtype([(n, "f8") for n, _ in element.properties])
                rows = np.empty(element.count, dtype=dtype)
                width = len(element.properties)
                for r in range(element.count):
                    tokens = lines[cursor + r].split()
                    if len(tokens) < width:
                        raise FileFormatError(
                            f"{path}: vertex row {r} has {len(tokens)} values, expected {width}"
                        )
                    try:
                        rows[r] = tuple(float(t) for t in tokens[:width])
                    except ValueError:
                        raise FileFormatError(f"{path}: bad number in vertex row {r}") from None
                table = rows
                break  # elements after the vertex block are not needed
            else:
                cursor += element.count  # skip via line count; list rows are one line each
        pts, normals = _vertex_arrays(vertex, table, path)
    else:
        offset = 0
        table = None
        for element in elements:
            if element.name == "vertex":
                dtype = np.dtype([(n, "<" + c) for n, c in element.properties])
                need = dtype.itemsize * element.count
                if offset + need > len(body):
                    raise FileFormatError(
                        f"{path}: truncated vertex data at byte {offset} "
                        f"(need {need}, have {len(body) - offset})"
                    )
                table = np.frombuffer(body, dtype=dtype, count=element.count, offset=offset)
                offset += need
            elif element.is_fixed:
                offset += np.dtype([(n, "<" + c) for n, c in element.properties]).itemsize * element.count
            else:
                if element.properties:
                    raise FileFormatError(
                        f"{path}: element {element.name!r} mixes scalar and list properties"
                    )
                if len(element.list_properties) != 1:
                    raise FileFormatError(
                        f"{path}: element {element.name!r} has an unsupported layout"
                    )
                _, count_code, item_code = element.list_properties[0]
                count_dt = np.dtype("<" + count_code)
                item_dt = np.dtype("<" + item_code)
                for r in range(element.count):
                    if offset + count_dt.itemsize > len(body):
                        raise FileFormatError(
                            f"{path}: truncated list element {element.name!r} at byte {offset}"
                        )
                    n_items = int(np.frombuffer(body, dtype=count_dt, count=1, offset=offset)[0])
                    offset += count_dt.itemsize + n_items * item_dt.itemsize
                if offset > len(body):
                    raise FileFormatError(f"{path}: truncated element {element.name!r}")
            if table is not None:
                break  # everything after the vertex element is skippable
        if table is None:
            raise FileFormatError(f"{path}: no vertex element with points")
        pts, normals = _vertex_arrays(vertex, table, path)

    try:
        return PointCloud(points=pts, normals=normals, viewpoint=viewpoint)
    except InvalidInputError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def write_ply(cloud: PointCloud, path) -> None:
    """Write an ASCII PLY with positions (and normals when present).

    Values are printed with 9 significant digits; the cloud viewpoint, when
    set, is preserved in a comment so a reload restores it.
    """
    has_normals = cloud.normals is not None
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        if cloud.viewpoint is not None:
            vx, vy, vz = cloud.viewpoint
            fh.write(f"comment {_VIEWPOINT_COMMENT} {vx:.17g} {vy:.17g} {vz:.17g}\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if has_normals:
            fh.write("property float nx\nproperty float ny\nproperty float nz\n")
        fh.write("end_header\n")
        for i in range(len(cloud)):
            x, y, z = cloud.points[i]
            if has_normals:
                nx, ny, nz = cloud.normals[i]
                fh.write(f"{x:.9g} {y:.9g} {z:.9g} {nx:.9g} {ny:.9g} {nz:.9g}\n")
            else:
                fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_transform(path) -> np.ndarray:
    """Load a 4x4 homogeneous transform from whitespace-separated text.

    The rotation block must be orthonormal with determinant +1 (tolerance
    1e-6) and the bottom row (0, 0, 0, 1).
    """
    try:
        values = np.loadtxt(path, dtype=np.float64)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if values.shape != (4, 4):
        raise FileFormatError(f"{path}: expected a 4x4 matrix, got shape {values.shape}")
    rot = values[:3, :3]
    if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(rot) - 1.0) > 1e-6:
        raise FileFormatError(f"{path}: rotation block is not a proper rotation")
    if np.abs(values[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
        raise FileFormatError(f"{path}: bottom row must be (0, 0, 0, 1)")
    return values


def write_transform(path, matrix) -> None:
    """Write a 4x4 transform as 4 lines of 4 full-precision decimals."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (4, 4):
        raise InvalidInputError(f"expected a 4x4 matrix, got shape {m.shape}")
    with open(path, "w", encoding="ascii") as fh:
        for row in m:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
