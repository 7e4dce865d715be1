"""PLY and XYZ point-cloud files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(points: np.ndarray, path, binary: bool = True) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(pts.astype("<f4").tobytes())
        else:
            fh.write("".join(f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in pts).encode("ascii"))


def read_ply(path) -> np.ndarray:
    """Vertex x/y/z of an ASCII or little-endian binary PLY; other elements must follow the vertices."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii").splitlines()
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ValueError(f"{path}: list properties on vertices are not supported")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if count is None or fmt is None:
        raise ValueError(f"{path}: missing vertex element or format line")
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise ValueError(f"{path}: vertex element lacks x/y/z")
    if fmt == "ascii":
        rows = data[body_start:].decode("ascii").split("\n")[:count]
        table = np.array([[float(v) for v in r.split()[: len(names)]] for r in rows]).reshape(count, len(names))
        cols = [names.index(c) for c in "xyz"]
        return table[:, cols].astype(np.float64)
    if fmt != "binary_little_endian":
        raise ValueError(f"{path}: unsupported PLY format {fmt}")
    dtype = np.dtype([(n, "<" + t) for n, t in props])
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=body_start)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)


def write_xyz(points: np.ndarray, path) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    Path(path).write_text("".join(f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in pts))


def read_xyz(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=2)[:, :3]


def read_cloud(path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix in (".xyz", ".txt"):
        return read_xyz(path)
    raise ValueError(f"{path}: unknown point cloud extension {suffix!r}")


def export_cloud(points: np.ndarray, path, fmt: str = "ply_binary") -> None:
    if fmt == "ply_binary":
        write_ply(points, path, binary=True)
    elif fmt == "ply_ascii":
        write_ply(points, path, binary=False)
    elif fmt == "xyz":
        write_xyz(points, path)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
