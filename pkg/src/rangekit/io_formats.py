"""Readers and writers for every on-disk artifact.

Formats are specified in formats.md at the repo root. All binary payloads
are little-endian; text formats are ASCII-safe UTF-8. Parsers validate
declared lengths before reading and report byte offsets on failure.
"""

from __future__ import annotations

import json
import struct
import warnings

import numpy as np

from .errors import FormatError, InvalidIntrinsics, InvalidPose, TruncatedPayload
from .lidar_model import (MODE_CALIBRATED, MODE_SYNTHETIC, LidarIntrinsics,
                          synthetic_intrinsics)
from .mesh_extract import TriangleMesh
from .range_image import RangeImage
from .sdf_volume import BLOCK_EDGE, VoxelBlock, VoxelBlockGrid
from .se3 import RigidTransform
from .synth import Box, Plane, Sphere

RIMG_MAGIC = b"RIMG"
GRID_MAGIC = b"SDFG"


# ---------------------------------------------------------------- intrinsics

def write_intrinsics(path, intr: LidarIntrinsics) -> None:
    doc = {
        "width": intr.width,
        "height": intr.height,
        "receiver_radius_m": intr.receiver_radius,
        "azimuth_offsets_rad": intr.azimuth_lut.tolist(),
        "elevations_rad": intr.elevation_lut.tolist(),
        "mode": intr.mode,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def read_intrinsics(path) -> LidarIntrinsics:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"intrinsics JSON: {e.msg}", offset=e.pos) from e
    try:
        mode = doc.get("mode", MODE_CALIBRATED)
        width, height = int(doc["width"]), int(doc["height"])
        if mode == MODE_SYNTHETIC and "elevations_rad" not in doc:
            return synthetic_intrinsics(height, width,
                                        float(doc["fov_min_rad"]), float(doc["fov_max_rad"]))
        return LidarIntrinsics(
            width=width,
            height=height,
            receiver_radius=float(doc["receiver_radius_m"]),
            azimuth_lut=np.asarray(doc["azimuth_offsets_rad"], dtype=float),
            elevation_lut=np.asarray(doc["elevations_rad"], dtype=float),
            mode=mode,
        )
    except KeyError as e:
        raise FormatError(f"intrinsics JSON missing key {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        raise FormatError(f"intrinsics JSON: {e}") from e


# ---------------------------------------------------------------- RIMG binary

def write_range_image(path, img: RangeImage) -> None:
    with open(path, "wb") as f:
        f.write(RIMG_MAGIC)
        f.write(struct.pack("<II", img.height, img.width))
        f.write(img.data.astype("<f4").tobytes())


def read_range_image(path, intr: LidarIntrinsics | None = None) -> RangeImage:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != RIMG_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {RIMG_MAGIC!r}", offset=0)
    if len(blob) < 12:
        raise TruncatedPayload("RIMG header incomplete", offset=len(blob))
    h, w = struct.unpack_from("<II", blob, 4)
    need = 12 + 4 * h * w
    if len(blob) < need:
        raise TruncatedPayload(
            f"RIMG declares {h}x{w} pixels ({need} bytes), file has {len(blob)}",
            offset=len(blob))
    if h == 0 or w == 0:
        raise FormatError("RIMG dimensions must be positive", offset=4)
    data = np.frombuffer(blob, dtype="<f4", count=h * w, offset=12).reshape(h, w)
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        bad = int(np.flatnonzero(~np.isfinite(data) | (data < 0))[0])
        raise FormatError("non-finite or negative range value", offset=12 + 4 * bad)
    if intr is not None and (h, w) != (intr.height, intr.width):
        raise InvalidIntrinsics(f"image is {h}x{w}, intrinsics expect "
                                f"{intr.height}x{intr.width}")
    return RangeImage(data.copy(), intr)


# ---------------------------------------------------------------- 16-bit PNG

def write_range_image_png(path, img: RangeImage) -> None:
    """Millimeter-quantized 16-bit grayscale export (0 = invalid, saturates at 65.535 m)."""
    from PIL import Image

    mm = np.clip(np.round(img.data.astype(float) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path, format="PNG")


def read_range_image_png(path, intr: LidarIntrinsics | None = None) -> RangeImage:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2 or arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise FormatError(f"expected 16-bit grayscale PNG, got {arr.dtype} ndim={arr.ndim}")
    data = arr.astype(np.float32) / 1000.0
    if intr is not None and data.shape != (intr.height, intr.width):
        raise InvalidIntrinsics(f"PNG is {data.shape}, intrinsics expect "
                                f"{(intr.height, intr.width)}")
    return RangeImage(data, intr)


# ---------------------------------------------------------------- trajectories

def write_trajectory(path, poses: list[tuple[int, RigidTransform]]) -> None:
    """Lines of "idx r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz" (world-from-frame)."""
    with open(path, "w", encoding="utf-8") as f:
        for idx, pose in poses:
            m = pose.matrix()[:3, :].reshape(-1)
            f.write(str(int(idx)) + " " + " ".join(f"{x:.9f}" for x in m) + "\n")


def read_trajectory(path, on_invalid: str = "raise") -> list[tuple[int, RigidTransform]]:
    """Parse a trajectory file; poses failing orthonormality (1e-6) are rejected
    or re-orthonormalized with a warning depending on on_invalid ("raise"|"fix")."""
    poses = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 13:
                raise FormatError(f"trajectory line {ln}: expected 13 fields, got {len(parts)}")
            try:
                idx = int(parts[0])
                vals = np.array([float(p) for p in parts[1:]]).reshape(3, 4)
            except ValueError as e:
                raise FormatError(f"trajectory line {ln}: {e}") from e
            pose = RigidTransform(vals[:, :3], vals[:, 3])
            if pose.orthonormality_defect() > 1e-6 or np.linalg.det(pose.R) < 0:
                if on_invalid == "fix":
                    warnings.warn(f"trajectory line {ln}: reorthonormalized drifting rotation")
                    pose = pose.reorthonormalized()
                else:
                    raise InvalidPose(f"trajectory line {ln}: rotation fails orthonormality")
            poses.append((idx, pose))
    return poses


# ---------------------------------------------------------------- PLY binary

def write_ply(path, mesh_or_points, normals: np.ndarray | None = None) -> None:
    """Binary little-endian PLY. Accepts a TriangleMesh or an (N, 3) point array."""
    if isinstance(mesh_or_points, TriangleMesh):
        verts = mesh_or_points.vertices
        tris = mesh_or_points.triangles
        normals = mesh_or_points.normals if normals is None else normals
    else:
        verts = np.asarray(mesh_or_points, dtype=float).reshape(-1, 3)
        tris = None

    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {verts.shape[0]}",
              "property float x", "property float y", "property float z"]
    if normals is not None:
        header += ["property float nx", "property float ny", "property float nz"]
    if tris is not None:
        header += [f"element face {tris.shape[0]}",
                   "property list uchar int vertex_indices"]
    header.append("end_header")

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if normals is not None:
            f.write(np.hstack([verts, normals]).astype("<f4").tobytes())
        else:
            f.write(verts.astype("<f4").tobytes())
        if tris is not None and tris.shape[0]:
            rec = np.zeros(tris.shape[0], dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = tris
            f.write(rec.tobytes())


def read_ply(path) -> TriangleMesh:
    """Read the binary little-endian PLY subset written by write_ply."""
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise FormatError("PLY header has no end_header")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    if not header or header[0] != "ply":
        raise FormatError("not a PLY file", offset=0)
    if "format binary_little_endian 1.0" not in header:
        raise FormatError("only binary_little_endian PLY is supported")
    n_vert = n_face = 0
    vert_props: list[str] = []
    element = None
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                n_vert = int(parts[2])
            elif element == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and element == "vertex":
            if parts[1] != "float":
                raise FormatError(f"unsupported vertex property type {parts[1]!r}")
            vert_props.append(parts[-1])

    offset = end + len(b"end_header\n")
    stride = 4 * len(vert_props)
    need = offset + n_vert * stride
    if len(blob) < need:
        raise TruncatedPayload(f"PLY declares {n_vert} vertices", offset=len(blob))
    raw = np.frombuffer(blob, dtype="<f4", count=n_vert * len(vert_props),
                        offset=offset).reshape(n_vert, len(vert_props))
    cols = {name: i for i, name in enumerate(vert_props)}
    try:
        verts = raw[:, [cols["x"], cols["y"], cols["z"]]].astype(float)
    except KeyError as e:
        raise FormatError(f"PLY vertex element missing property {e.args[0]!r}") from e
    normals = None
    if {"nx", "ny", "nz"} <= cols.keys():
        normals = raw[:, [cols["nx"], cols["ny"], cols["nz"]]].astype(float)

    tris = np.zeros((0, 3), dtype=np.int32)
    if n_face:
        pos = need
        face_need = pos + n_face * 13
        if len(blob) < face_need:
            raise TruncatedPayload(f"PLY declares {n_face} faces", offset=len(blob))
        rec = np.frombuffer(blob, dtype=[("n", "u1"), ("idx", "<i4", (3,))],
                            count=n_face, offset=pos)
        if np.any(rec["n"] != 3):
            bad = int(np.flatnonzero(rec["n"] != 3)[0])
            raise FormatError("only triangle faces are supported", offset=pos + 13 * bad)
        tris = rec["idx"].astype(np.int32)
        if tris.size and (tris.min() < 0 or tris.max() >= n_vert):
            raise FormatError("face index out of range")
    return TriangleMesh(verts, tris, normals)


# ---------------------------------------------------------------- grid snapshots

def write_grid(path, grid: VoxelBlockGrid) -> None:
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<ddQ", grid.voxel_size, grid.truncation, len(grid.blocks)))
        for key in sorted(grid.blocks):
            blk = grid.blocks[key]
            f.write(struct.pack("<iii", *key))
            pair = np.empty((BLOCK_EDGE**3, 2), dtype="<f4")
            pair[:, 0] = blk.tsdf.reshape(-1)
            pair[:, 1] = blk.weight.reshape(-1)
            f.write(pair.tobytes())


def read_grid(path) -> VoxelBlockGrid:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != GRID_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {GRID_MAGIC!r}", offset=0)
    if len(blob) < 28:
        raise TruncatedPayload("grid header incomplete", offset=len(blob))
    voxel_size, truncation, n_blocks = struct.unpack_from("<ddQ", blob, 4)
    if not (np.isfinite(voxel_size) and voxel_size > 0 and np.isfinite(truncation)
            and truncation > 0):
        raise FormatError("invalid voxel size or truncation", offset=4)
    block_bytes = 12 + 8 * BLOCK_EDGE**3
    need = 28 + n_blocks * block_bytes
    if len(blob) < need:
        raise TruncatedPayload(f"grid declares {n_blocks} blocks", offset=len(blob))
    grid = VoxelBlockGrid(voxel_size=voxel_size, truncation=truncation)
    pos = 28
    for _ in range(n_blocks):
        key = struct.unpack_from("<iii", blob, pos)
        pair = np.frombuffer(blob, dtype="<f4", count=2 * BLOCK_EDGE**3,
                             offset=pos + 12).reshape(-1, 2)
        blk = VoxelBlock()
        blk.tsdf = pair[:, 0].reshape((BLOCK_EDGE,) * 3).copy()
        blk.weight = pair[:, 1].reshape((BLOCK_EDGE,) * 3).copy()
        if np.any(~np.isfinite(blk.tsdf)) or np.any(blk.weight < 0):
            raise FormatError("non-finite tsdf or negative weight in block", offset=pos + 12)
        grid.blocks[tuple(int(k) for k in key)] = blk
        pos += block_bytes
    return grid


# ---------------------------------------------------------------- scenes

def read_scene(path) -> list:
    """JSON scene description: list of plane / sphere / box primitives."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"scene JSON: {e.msg}", offset=e.pos) from e
    if not isinstance(doc, list):
        raise FormatError("scene JSON must be a list of primitives")
    prims = []
    for i, item in enumerate(doc):
        try:
            kind = item["type"]
            if kind == "plane":
                prims.append(Plane(normal=tuple(item["normal"]), offset=float(item["offset"])))
            elif kind == "sphere":
                prims.append(Sphere(center=tuple(item["center"]), radius=float(item["radius"])))
            elif kind == "box":
                rot = np.eye(3)
                if "rpy" in item:
                    rot = _rpy_matrix(*[float(a) for a in item["rpy"]])
                prims.append(Box(center=tuple(item["center"]), size=tuple(item["size"]),
                                 rotation=rot))
            else:
                raise FormatError(f"scene primitive {i}: unknown type {kind!r}")
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"scene primitive {i}: {e}") from e
    return prims


def write_scene(path, prims: list) -> None:
    doc = []
    for p in prims:
        if isinstance(p, Plane):
            doc.append({"type": "plane", "normal": list(p.normal), "offset": p.offset})
        elif isinstance(p, Sphere):
            doc.append({"type": "sphere", "center": list(p.center), "radius": p.radius})
        elif isinstance(p, Box):
            doc.append({"type": "box", "center": list(p.center), "size": list(p.size)})
        else:
            raise ValueError(f"cannot serialize primitive {p!r}")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def _rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    from .se3 import rotation_exp

    return (rotation_exp([0, 0, yaw]) @ rotation_exp([0, pitch, 0])
            @ rotation_exp([roll, 0, 0]))


# ---------------------------------------------------------------- CSV

REGISTRATION_CSV_HEADER = ("frame_distance,pair_index,rot_err_rad,trans_err_m,"
                           "converged,iters,runtime_ms")
RECONSTRUCTION_CSV_HEADER = "scene,precision,recall,fscore,threshold_m"


def write_registration_csv(path, rows) -> None:
    """rows: iterables matching REGISTRATION_CSV_HEADER."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(REGISTRATION_CSV_HEADER + "\n")
        for r in rows:
            f.write(",".join(str(x) for x in r) + "\n")


def write_reconstruction_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(RECONSTRUCTION_CSV_HEADER + "\n")
        for r in rows:
            f.write(",".join(str(x) for x in r) + "\n")
