"""File formats: ASCII PLY point clouds, scene sidecar JSON, PGM/PNG rasters,
density-map bundles, and Sim2 JSON.

The PLY carries per-vertex x, y, z, confidence, image_id; camera poses and
gravity votes live in a JSON sidecar keyed by image_id. Density maps are
written as 16-bit PGM with a JSON sidecar recording gamma and the
world-to-grid mapping.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .densmap import DensityMap, Floorplan, ImageBlock, ReconstructedScene
from .errors import ParseError
from .geom import CameraPose, Sim2

PLY_PROPS = ("x", "y", "z", "confidence", "image_id")


def write_ply(scene: ReconstructedScene, path) -> None:
    blocks = scene.images
    total = sum(b.points.shape[0] for b in blocks)
    lines = [
        "ply",
        "format ascii 1.0",
        "comment planealign reconstruction",
        f"element vertex {total}",
        "property float x",
        "property float y",
        "property float z",
        "property float confidence",
        "property int image_id",
        "end_header",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for block in blocks:
            img = block.pose.image_id
            for (x, y, z), c in zip(block.points, block.confidence):
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r} {float(c)!r} {img}\n")


def read_ply(path):
    """Returns (points (N,3), confidence (N,), image_ids (N,) int)."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ParseError(f"cannot read PLY file {path}: {err}") from err
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path} is not a PLY file")
    n_vertex = None
    props = []
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ParseError("only ASCII PLY is supported")
        elif tok[0] == "element" and tok[1] == "vertex":
            n_vertex = int(tok[2])
        elif tok[0] == "property" and n_vertex is not None:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_at = i + 1
            break
    if n_vertex is None or body_at is None:
        raise ParseError(f"{path}: malformed PLY header")
    missing = [p for p in PLY_PROPS if p not in props]
    if missing:
        raise ParseError(f"{path}: PLY lacks required properties {missing}")
    cols = {p: props.index(p) for p in PLY_PROPS}
    rows = lines[body_at : body_at + n_vertex]
    if len(rows) < n_vertex:
        raise ParseError(f"{path}: expected {n_vertex} vertices, found {len(rows)}")
    try:
        data = np.array([[float(v) for v in r.split()] for r in rows])
    except ValueError as err:
        raise ParseError(f"{path}: bad vertex row: {err}") from err
    if data.shape[1] < len(props):
        raise ParseError(f"{path}: vertex rows shorter than the declared properties")
    pts = data[:, [cols["x"], cols["y"], cols["z"]]]
    conf = data[:, cols["confidence"]]
    ids = data[:, cols["image_id"]].astype(int)
    return pts, conf, ids


def write_scene_meta(scene: ReconstructedScene, path) -> None:
    doc = {
        "frame": scene.frame,
        "images": [
            {
                "image_id": b.pose.image_id,
                "rotation": b.pose.rotation.tolist(),
                "center": b.pose.center.tolist(),
                "gravity_vote": b.gravity_vote.tolist(),
            }
            for b in scene.images
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def write_scene(scene: ReconstructedScene, ply_path, meta_path) -> None:
    write_ply(scene, ply_path)
    write_scene_meta(scene, meta_path)


def read_scene(ply_path, meta_path) -> ReconstructedScene:
    pts, conf, ids = read_ply(ply_path)
    try:
        doc = json.loads(Path(meta_path).read_text())
        frame = doc["frame"]
        entries = doc["images"]
    except (OSError, KeyError, json.JSONDecodeError) as err:
        raise ParseError(f"cannot read scene meta {meta_path}: {err}") from err
    images = []
    for entry in entries:
        img_id = entry["image_id"]
        mask = ids == int(img_id)
        try:
            pose = CameraPose(
                rotation=np.array(entry["rotation"], dtype=float),
                center=np.array(entry["center"], dtype=float),
                image_id=img_id,
            )
        except (ValueError, KeyError) as err:
            raise ParseError(f"bad camera entry for image {img_id}: {err}") from err
        images.append(
            ImageBlock(
                points=pts[mask],
                confidence=conf[mask],
                pose=pose,
                gravity_vote=np.array(entry["gravity_vote"], dtype=float),
            )
        )
    return ReconstructedScene(images=images, frame=frame)


# ---------------------------------------------------------------------------
# Rasters
# ---------------------------------------------------------------------------


def write_pgm(gray01: np.ndarray, path, maxval: int = 65535) -> None:
    """Binary PGM (P5); 16-bit values are written big-endian per the format."""
    arr = np.clip(np.asarray(gray01, dtype=float), 0.0, 1.0)
    h, w = arr.shape
    quant = np.round(arr * maxval).astype(">u2" if maxval > 255 else "u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        fh.write(quant.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] not in (b"P5", b"P2"):
        raise ParseError(f"{path} is not a PGM file")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as err:
        raise ParseError(f"{path}: bad PGM header: {err}") from err
    if blob[:2] == b"P2":
        vals = np.array(blob[pos:].split(), dtype=float)
    else:
        pos += 1  # single whitespace after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        vals = np.frombuffer(blob, dtype=dtype, offset=pos).astype(float)
    if vals.size < h * w:
        raise ParseError(f"{path}: PGM payload too short")
    return vals[: h * w].reshape(h, w) / maxval


def load_raster(path) -> np.ndarray:
    """Grayscale or RGB raster in [0, 1] from PGM or PNG/JPEG."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"raster {path} does not exist")
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    try:
        img = Image.open(path)
        arr = np.asarray(img, dtype=float)
    except Exception as err:
        raise ParseError(f"cannot decode raster {path}: {err}") from err
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr / 255.0


def save_raster_png(arr01: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(arr01, dtype=float), 0.0, 1.0)
    img = Image.fromarray(np.round(arr * 255).astype(np.uint8))
    img.save(path)


def load_floorplan(path) -> Floorplan:
    return Floorplan(raster=load_raster(path))


# ---------------------------------------------------------------------------
# Density bundles and transforms
# ---------------------------------------------------------------------------


def write_density(dm: DensityMap, pgm_path, meta_path) -> None:
    write_pgm(dm.grid, pgm_path)
    doc = {
        "gamma": dm.gamma,
        "world_to_grid": dm.world_to_grid.to_json_dict(),
        "shape": list(dm.grid.shape),
    }
    Path(meta_path).write_text(json.dumps(doc, indent=1))


def read_density(pgm_path, meta_path) -> DensityMap:
    grid = read_pgm(pgm_path)
    try:
        doc = json.loads(Path(meta_path).read_text())
        return DensityMap(
            grid=grid,
            gamma=float(doc["gamma"]),
            world_to_grid=Sim2.from_json_dict(doc["world_to_grid"]),
        )
    except (OSError, KeyError, json.JSONDecodeError) as err:
        raise ParseError(f"cannot read density meta {meta_path}: {err}") from err


def write_sim2(m: Sim2, path) -> None:
    Path(path).write_text(json.dumps(m.to_json_dict()))


def read_sim2(path) -> Sim2:
    try:
        return Sim2.from_json_dict(json.loads(Path(path).read_text()))
    except (OSError, KeyError, json.JSONDecodeError, ValueError) as err:
        raise ParseError(f"cannot read Sim2 from {path}: {err}") from err


def write_cameras_fp(poses, yaws, path) -> None:
    """Floorplan-frame camera list: position (x, y) pixels plus yaw."""
    doc = [
        {
            "image_id": p.image_id,
            "fp_pos": [float(p.center[0]), float(p.center[2])],
            "fp_yaw": float(yaw),
        }
        for p, yaw in zip(poses, yaws)
    ]
    Path(path).write_text(json.dumps(doc, indent=1))


def read_cameras_fp(path) -> list[dict]:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ParseError(f"cannot read cameras from {path}: {err}") from err
