"""Point filtering and top-down density rasterization.

The filter cascade keeps points that are confidently reconstructed,
horizontally inside the scene, and part of vertical structure (walls rather
than floors/ceilings). Survivors are binned on the horizontal plane and the
counts are normalized and gamma-corrected into a map whose brightest cell
is exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllPointsFiltered, EmptyInput
from .geom import CameraPose, Sim2, gravity_rotation, medoid_direction, sim2_apply

FRAME_REFERENCE = "reference"
FRAME_GRAVITY = "gravity_aligned"


@dataclass
class ImageBlock:
    """Per-image slice of a reconstruction: points, confidences, pose, vote."""

    points: np.ndarray  # (N, 3)
    confidence: np.ndarray  # (N,)
    pose: CameraPose
    gravity_vote: np.ndarray  # (3,) unit

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
        if self.points.shape[0] != self.confidence.shape[0]:
            raise ValueError("point count and confidence count differ")
        if np.any(self.confidence < 0):
            raise ValueError("confidences must be nonnegative")
        self.gravity_vote = np.asarray(self.gravity_vote, dtype=float).reshape(3)


@dataclass
class ReconstructedScene:
    """Multi-image reconstruction with one shared coordinate frame flag."""

    images: list[ImageBlock]
    frame: str = FRAME_REFERENCE

    def __post_init__(self):
        if self.frame not in (FRAME_REFERENCE, FRAME_GRAVITY):
            raise ValueError(f"unknown frame flag {self.frame!r}")

    @property
    def n_images(self) -> int:
        return len(self.images)

    def all_points(self) -> np.ndarray:
        if not self.images:
            return np.zeros((0, 3))
        return np.concatenate([b.points for b in self.images], axis=0)

    def all_confidences(self) -> np.ndarray:
        if not self.images:
            return np.zeros(0)
        return np.concatenate([b.confidence for b in self.images], axis=0)

    def poses(self) -> list[CameraPose]:
        return [b.pose for b in self.images]

    def subset(self, n_or_ids) -> "ReconstructedScene":
        """Scene restricted to the first n images (or to explicit indices)."""
        if isinstance(n_or_ids, int):
            picked = self.images[:n_or_ids]
        else:
            picked = [self.images[i] for i in n_or_ids]
        return ReconstructedScene(images=list(picked), frame=self.frame)


@dataclass(frozen=True)
class FilterParams:
    """Percentile thresholds for the three-stage point filter."""

    rho_conf: float = 45.0
    rho_xz: float = 2.5
    rho_y_min: float = 20.0
    rho_y_max: float = 95.0

    def __post_init__(self):
        if not 0.0 <= self.rho_conf < 100.0:
            raise ValueError("rho_conf must lie in [0, 100)")
        if not 0.0 <= self.rho_xz < 50.0:
            raise ValueError("rho_xz must lie in [0, 50)")
        if not (0.0 <= self.rho_y_min < self.rho_y_max <= 100.0):
            raise ValueError("need 0 <= rho_y_min < rho_y_max <= 100")


@dataclass
class DensityMap:
    """Normalized top-down point density with its world->pixel mapping."""

    grid: np.ndarray  # (H, W) in [0, 1]
    gamma: float
    world_to_grid: Sim2  # theta == 0: uniform scale + translation

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def diagonal(self) -> float:
        h, w = self.grid.shape
        return math.hypot(h, w)


@dataclass
class Floorplan:
    """Rasterized floorplan in [0, 1], grayscale or RGB."""

    raster: np.ndarray  # (H, W) or (H, W, 3)
    diagonal: float = 0.0

    def __post_init__(self):
        self.raster = np.asarray(self.raster, dtype=float)
        if self.raster.size == 0:
            raise ValueError("floorplan raster is empty")
        if self.raster.ndim == 3 and self.raster.shape[2] == 1:
            self.raster = self.raster[:, :, 0]
        if self.raster.ndim not in (2, 3):
            raise ValueError("floorplan raster must be HxW or HxWx3")
        if self.diagonal <= 0.0:
            h, w = self.raster.shape[:2]
            self.diagonal = math.hypot(h, w)

    @property
    def shape(self) -> tuple[int, int]:
        return self.raster.shape[:2]

    def gray(self) -> np.ndarray:
        if self.raster.ndim == 2:
            return self.raster
        return self.raster.mean(axis=2)


def gravity_align_scene(scene: ReconstructedScene):
    """Rotate an entire scene so the medoid gravity vote maps to +y.

    Returns (aligned_scene, rotation). Already-aligned scenes pass through.
    """
    if scene.frame == FRAME_GRAVITY:
        return scene, np.eye(3)
    if not scene.images:
        raise EmptyInput("scene has no images")
    votes = np.stack([b.gravity_vote for b in scene.images])
    g = medoid_direction(votes)
    rot = gravity_rotation(g / np.linalg.norm(g))
    images = []
    for b in scene.images:
        pose = CameraPose(
            rotation=rot @ b.pose.rotation,
            center=rot @ b.pose.center,
            image_id=b.pose.image_id,
        )
        images.append(
            ImageBlock(
                points=b.points @ rot.T,
                confidence=b.confidence.copy(),
                pose=pose,
                gravity_vote=rot @ b.gravity_vote,
            )
        )
    return ReconstructedScene(images=images, frame=FRAME_GRAVITY), rot


def nearest_rank_percentile(values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile: value at rank max(1, ceil(p/100 * N))."""
    values = np.sort(np.asarray(values, dtype=float))
    n = values.shape[0]
    if n == 0:
        raise EmptyInput("percentile of an empty set")
    rank = max(1, math.ceil(p / 100.0 * n))
    return float(values[min(rank, n) - 1])


def filter_points(scene: ReconstructedScene, params: FilterParams) -> np.ndarray:
    """Three-stage percentile filter; thresholds recomputed per stage.

    Stage 1 drops points whose confidence is below the rho_conf percentile;
    stage 2 keeps x and z inside the [rho_xz, 100-rho_xz] band of the stage-1
    survivors; stage 3 keeps y inside [rho_y_min, rho_y_max] of the stage-2
    survivors.
    """
    if scene.frame != FRAME_GRAVITY:
        raise ValueError("scene must be gravity-aligned before filtering")
    pts = scene.all_points()
    conf = scene.all_confidences()
    if pts.shape[0] == 0:
        raise AllPointsFiltered("scene contains no points")

    thr = nearest_rank_percentile(conf, params.rho_conf)
    keep = conf >= thr
    pts = pts[keep]
    if pts.shape[0] == 0:
        raise AllPointsFiltered("confidence filter removed every point")

    for axis in (0, 2):
        vals = pts[:, axis]
        lo = nearest_rank_percentile(vals, params.rho_xz)
        hi = nearest_rank_percentile(vals, 100.0 - params.rho_xz)
        pts = pts[(pts[:, axis] >= lo) & (pts[:, axis] <= hi)]
        if pts.shape[0] == 0:
            raise AllPointsFiltered("horizontal filter removed every point")

    ys = pts[:, 1]
    lo = nearest_rank_percentile(ys, params.rho_y_min)
    hi = nearest_rank_percentile(ys, params.rho_y_max)
    pts = pts[(ys >= lo) & (ys <= hi)]
    if pts.shape[0] == 0:
        raise AllPointsFiltered("vertical filter removed every point")
    return pts


def rasterize(points, out_size, gamma: float = 0.5, margin_frac: float = 0.05) -> DensityMap:
    """Bin points on the (x, z) plane and normalize counts to [0, 1]^gamma.

    The point bounding box, padded by margin_frac per side, is fit into the
    grid with a single uniform scale and centered, so a constant world offset
    leaves the output unchanged.
    """
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise AllPointsFiltered("cannot rasterize an empty point set")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if not 0.0 <= margin_frac <= 0.25:
        raise ValueError("margin_frac must lie in [0, 0.25]")
    h, w = int(out_size[0]), int(out_size[1])
    xz = points[:, [0, 2]]
    lo = xz.min(axis=0)
    hi = xz.max(axis=0)
    extent = hi - lo
    lo = lo - margin_frac * extent
    hi = hi + margin_frac * extent
    extent = hi - lo
    # Degenerate extents (single point / axis-aligned line) fall back to a
    # unit span so the scale stays finite.
    span = np.where(extent > 0, extent, 1.0)
    scale = min(w / span[0], h / span[1])
    center = (lo + hi) / 2.0
    t = (w / 2.0 - scale * center[0], h / 2.0 - scale * center[1])
    world_to_grid = Sim2(scale, 0.0, t)

    gxy = sim2_apply(world_to_grid, xz)
    ix = np.clip(np.floor(gxy[:, 0]).astype(np.int64), 0, w - 1)
    iy = np.clip(np.floor(gxy[:, 1]).astype(np.int64), 0, h - 1)
    counts = np.bincount(iy * w + ix, minlength=h * w).reshape(h, w)
    grid = (counts / counts.max()) ** gamma
    return DensityMap(grid=grid, gamma=gamma, world_to_grid=world_to_grid)


def camera_to_grid(dm: DensityMap, pose: CameraPose) -> np.ndarray:
    """Pixel position of a camera center on the density map."""
    return sim2_apply(dm.world_to_grid, pose.center[[0, 2]])
