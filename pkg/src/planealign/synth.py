"""Synthetic ground-truth scenes: Manhattan layouts, noisy wall clouds,
planted planar similarities, and training corpora.

Everything is seeded through a counter-based PRNG (Philox), so a seed fully
determines a scene. Wall geometry lives on an integer pixel grid; the
"world" frame is the floorplan frame pushed through the inverse of the
planted similarity, and the stored reconstruction applies one more random
rigid motion so gravity alignment has real work to do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .densmap import (
    FilterParams,
    Floorplan,
    ImageBlock,
    ReconstructedScene,
    DensityMap,
    filter_points,
    gravity_align_scene,
    rasterize,
)
from .geom import (
    CameraPose,
    Sim2,
    camera_yaw,
    gravity_rotation,
    make_rng,
    medoid_direction,
    sim2_apply,
    sim2_compose,
    sim2_inverse,
    wrap_angle,
)
from .losses import CorrespondenceBatch

WALL_WIDTH = 2  # pixels


@dataclass
class Layout:
    """Axis-aligned floorplan: raster plus wall center-line segments."""

    raster: np.ndarray  # (H, W) in [0, 1], walls dark
    walls: list  # [((x0, y0), (x1, y1)), ...] center lines
    rooms: list  # [(x0, y0, x1, y1), ...]
    size: tuple[int, int]
    wall_ink: list = field(default_factory=list)  # gray level per wall segment

    def floorplan(self) -> Floorplan:
        return Floorplan(raster=self.raster.copy())


def _paint_wall(raster: np.ndarray, seg, skip=None, ink: float = 0.0) -> None:
    """Draw a 2 px wall band for an axis-aligned center-line segment.

    ``skip`` is an optional (lo, hi) interval along the segment left unpainted
    (a doorway).
    """
    (x0, y0), (x1, y1) = seg
    h, w = raster.shape
    if y0 == y1:  # horizontal: rows y0-1, y0
        lo, hi = int(min(x0, x1)), int(max(x0, x1))
        r0 = int(y0) - 1
        for x in range(max(0, lo), min(w, hi + 1)):
            if skip and skip[0] <= x <= skip[1]:
                continue
            raster[max(0, r0) : min(h, r0 + WALL_WIDTH), x] = ink
    else:  # vertical: cols x0-1, x0
        lo, hi = int(min(y0, y1)), int(max(y0, y1))
        c0 = int(x0) - 1
        for y in range(max(0, lo), min(h, hi + 1)):
            if skip and skip[0] <= y <= skip[1]:
                continue
            raster[y, max(0, c0) : min(w, c0 + WALL_WIDTH)] = ink


def gen_layout(
    seed: int,
    n_rooms: int = 4,
    size: tuple[int, int] = (256, 256),
    ink_variation: float = 0.0,
    room_fills: bool = False,
) -> Layout:
    """Recursive axis-aligned room splits with one doorway per shared wall.

    ``ink_variation`` lightens individual walls by up to that gray level and
    ``room_fills`` tints room interiors, as architectural drawings do; both
    default off.
    """
    if not 2 <= n_rooms <= 8:
        raise ValueError("n_rooms must lie in [2, 8]")
    h, w = int(size[0]), int(size[1])
    rng = make_rng([seed, 101])
    margin = max(4, round(0.16 * min(h, w)))
    min_side = max(18, round(0.12 * min(h, w)))
    rooms = [(margin, margin, w - margin, h - margin)]
    splits = []  # (segment, door interval)

    while len(rooms) < n_rooms:
        order = sorted(
            range(len(rooms)),
            key=lambda i: -(rooms[i][2] - rooms[i][0]) * (rooms[i][3] - rooms[i][1]),
        )
        done = True
        for i in order:
            x0, y0, x1, y1 = rooms[i]
            horiz = (x1 - x0) >= (y1 - y0)  # split across the longer side
            side = (x1 - x0) if horiz else (y1 - y0)
            if side < 2 * min_side:
                continue
            frac = rng.uniform(0.35, 0.65)
            if horiz:
                c = int(round(x0 + frac * (x1 - x0)))
                c = min(max(c, x0 + min_side), x1 - min_side)
                seg = ((c, y0), (c, y1))
                span = y1 - y0
            else:
                c = int(round(y0 + frac * (y1 - y0)))
                c = min(max(c, y0 + min_side), y1 - min_side)
                seg = ((x0, c), (x1, c))
                span = x1 - x0
            door_w = max(8, round(0.12 * span))
            door_at = rng.uniform(0.25, 0.75)
            along0 = (y0 if horiz else x0) + door_at * (span - door_w)
            door = (int(round(along0)), int(round(along0)) + door_w)
            if horiz:
                rooms[i] = (x0, y0, c, y1)
                rooms.append((c, y0, x1, y1))
            else:
                rooms[i] = (x0, y0, x1, c)
                rooms.append((x0, c, x1, y1))
            splits.append((seg, door))
            done = False
            break
        if done:
            break  # nothing splittable left

    raster = np.ones((h, w))
    if room_fills:
        for rx0, ry0, rx1, ry1 in rooms:
            raster[ry0:ry1, rx0:rx1] = 1.0 - rng.uniform(0.0, 0.12)
    x0, y0, x1, y1 = (margin, margin, w - margin, h - margin)
    perimeter = [
        ((x0, y0), (x1, y0)),
        ((x0, y1), (x1, y1)),
        ((x0, y0), (x0, y1)),
        ((x1, y0), (x1, y1)),
    ]
    walls = []
    inks = []

    def draw(seg, door=None):
        ink = rng.uniform(0.0, ink_variation) if ink_variation > 0 else 0.0
        _paint_wall(raster, seg, skip=door, ink=ink)
        return ink

    for seg in perimeter:
        ink = draw(seg)
        walls.append(seg)
        inks.append(ink)
    for seg, door in splits:
        ink = draw(seg, door)
        (sx0, sy0), (sx1, sy1) = seg
        if sy0 == sy1:  # horizontal, door interval along x
            halves = [((sx0, sy0), (door[0], sy0)), ((door[1], sy0), (sx1, sy0))]
        else:
            halves = [((sx0, sy0), (sx0, door[0])), ((sx0, door[1]), (sx0, sy1))]
        for half in halves:
            walls.append(half)
            inks.append(ink)
    keep = [i for i, s in enumerate(walls) if _seg_len(s) > 1.0]
    return Layout(
        raster=raster,
        walls=[walls[i] for i in keep],
        rooms=rooms,
        size=(h, w),
        wall_ink=[inks[i] for i in keep],
    )


def _seg_len(seg) -> float:
    (x0, y0), (x1, y1) = seg
    return math.hypot(x1 - x0, y1 - y0)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    quat = rng.normal(0.0, 1.0, 4)
    quat /= np.linalg.norm(quat)
    qw, qx, qy, qz = quat
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


def _rodrigues(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    return (
        v * math.cos(angle)
        + np.cross(axis, v) * math.sin(angle)
        + axis * (axis @ v) * (1 - math.cos(angle))
    )


@dataclass
class SynthScene:
    """A generated scene with every quantity needed to verify the pipeline."""

    layout: Layout
    scene: ReconstructedScene
    gt_world_sim2: Sim2  # world (x, z) -> floorplan pixels
    recon_rotation: np.ndarray  # world -> stored reference frame
    recon_translation: np.ndarray
    camera_gt: list  # per image: {"image_id", "fp_pos", "fp_yaw"}
    labels: list = field(default_factory=list)  # per image point labels
    wall_height: float = 0.0
    seed: int = 0

    def floorplan(self) -> Floorplan:
        return self.layout.floorplan()

    def restrict(self, n_images: int) -> "SynthScene":
        return SynthScene(
            layout=self.layout,
            scene=self.scene.subset(n_images),
            gt_world_sim2=self.gt_world_sim2,
            recon_rotation=self.recon_rotation,
            recon_translation=self.recon_translation,
            camera_gt=self.camera_gt[:n_images],
            labels=self.labels[:n_images],
            wall_height=self.wall_height,
            seed=self.seed,
        )

    def gt_aligned_sim2(self) -> Sim2:
        """World->floorplan map expressed in the pipeline's gravity-aligned frame.

        Recomputes the exact medoid/rotation the pipeline will use on this
        scene's votes, so with zero gravity jitter the composition is exact.
        """
        votes = np.stack([b.gravity_vote for b in self.scene.images])
        g = medoid_direction(votes)
        rg = gravity_rotation(g / np.linalg.norm(g))
        a = rg @ self.recon_rotation
        psi = math.atan2(a[2, 0], a[0, 0])
        t3 = rg @ self.recon_translation
        world_to_aligned = Sim2(1.0, psi, (t3[0], t3[2]))
        return sim2_compose(self.gt_world_sim2, sim2_inverse(world_to_aligned))

    def gt_density_sim2(self, dm: DensityMap) -> Sim2:
        """Ground-truth density-pixel -> floorplan-pixel similarity for ``dm``."""
        return sim2_compose(self.gt_aligned_sim2(), sim2_inverse(dm.world_to_grid))


def gen_scene(
    layout: Layout,
    seed: int,
    n_images: int = 6,
    noise_sigma: float = 0.0,
    outlier_frac: float = 0.0,
    gravity_jitter_deg: float = 0.0,
    points_per_image: int = 260,
    scale_range: tuple[float, float] = (0.7, 1.5),
    wall_height_frac: float = 0.3,
    floor_frac: float = 0.15,
    ceil_frac: float = 0.05,
    wall_rate_power: float = 0.0,
) -> SynthScene:
    """Extrude a noisy wall point cloud with cameras, votes, and a planted Sim2.

    Each image covers the walls near its camera, so few-image subsets see only
    part of the building. Outliers land far outside the layout with low
    confidence; floor/ceiling points carry normal confidence and are left for
    the vertical filter. ``wall_rate_power`` > 0 samples heavier-drawn (darker)
    walls more densely, coupling point density to the drawing.
    """
    if n_images < 1:
        raise ValueError("need at least one image")
    rng = make_rng([seed, 202])
    h, w = layout.size
    s_gt = math.exp(rng.uniform(math.log(scale_range[0]), math.log(scale_range[1])))
    theta_gt = rng.uniform(-math.pi, math.pi)
    t_gt = rng.uniform(-40.0, 40.0, 2)
    gt = Sim2(s_gt, theta_gt, (t_gt[0], t_gt[1]))
    fp_to_world = sim2_inverse(gt)

    extent = 0.5 * (h + w)
    wall_height = wall_height_frac * extent / s_gt

    r_rec = _random_rotation(make_rng([seed, 203]))
    t_rec = make_rng([seed, 204]).normal(0.0, 10.0, 3)
    true_up_recon = r_rec @ np.array([0.0, 1.0, 0.0])

    seg_mid = np.array([[(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0] for s in layout.walls])
    seg_len = np.array([_seg_len(s) for s in layout.walls])
    ink = np.array(layout.wall_ink) if layout.wall_ink else np.zeros(len(layout.walls))
    seg_rate = seg_len * (1.0 - ink) ** wall_rate_power

    def to_world(fp_xy: np.ndarray, height: np.ndarray) -> np.ndarray:
        xz = sim2_apply(fp_to_world, fp_xy)
        return np.stack([xz[:, 0], height / s_gt, xz[:, 1]], axis=1)

    images = []
    labels = []
    camera_gt = []
    n_out = int(round(points_per_image * outlier_frac))
    n_struct = points_per_image - n_out
    n_floor = int(round(n_struct * floor_frac))
    n_ceil = int(round(n_struct * ceil_frac))
    n_wall = n_struct - n_floor - n_ceil

    room_order = rng.permutation(len(layout.rooms))
    for i in range(n_images):
        room = layout.rooms[room_order[i % len(layout.rooms)]]
        rx0, ry0, rx1, ry1 = room
        cam_fp = np.array(
            [rng.uniform(rx0 + 0.3 * (rx1 - rx0), rx1 - 0.3 * (rx1 - rx0)),
             rng.uniform(ry0 + 0.3 * (ry1 - ry0), ry1 - 0.3 * (ry1 - ry0))]
        )
        radius = 1.3 * math.hypot(rx1 - rx0, ry1 - ry0)
        near = np.nonzero(np.linalg.norm(seg_mid - cam_fp, axis=1) <= radius)[0]
        if near.size == 0:
            near = np.array([int(np.argmin(np.linalg.norm(seg_mid - cam_fp, axis=1)))])
        probs = seg_rate[near] / seg_rate[near].sum()
        picks = rng.choice(near, size=n_wall, p=probs)
        along = rng.random(n_wall)
        fp_pts = np.empty((n_wall, 2))
        for k, si in enumerate(picks):
            (x0, y0), (x1, y1) = layout.walls[si]
            fp_pts[k] = (x0 + along[k] * (x1 - x0), y0 + along[k] * (y1 - y0))
        fp_pts += rng.uniform(-1.0, 1.0, (n_wall, 2)) * 0.5  # inside the 2 px band
        heights = rng.uniform(0.0, wall_height * s_gt, n_wall)
        if noise_sigma > 0:
            fp_pts = fp_pts + rng.normal(0.0, noise_sigma, fp_pts.shape)
            heights = heights + rng.normal(0.0, noise_sigma, n_wall)
        pts = [to_world(fp_pts, heights)]
        lab = ["wall"] * n_wall

        if n_floor:
            fxy = np.stack(
                [rng.uniform(rx0, rx1, n_floor), rng.uniform(ry0, ry1, n_floor)], axis=1
            )
            fh = np.abs(rng.normal(0.0, 0.02 * wall_height * s_gt, n_floor))
            pts.append(to_world(fxy, fh))
            lab += ["floor"] * n_floor
        if n_ceil:
            cxy = np.stack(
                [rng.uniform(rx0, rx1, n_ceil), rng.uniform(ry0, ry1, n_ceil)], axis=1
            )
            ch = wall_height * s_gt - np.abs(rng.normal(0.0, 0.02 * wall_height * s_gt, n_ceil))
            pts.append(to_world(cxy, ch))
            lab += ["ceil"] * n_ceil
        if n_out:
            span = max(h, w)
            oxy = rng.uniform(-1.5 * span, 2.5 * span, (n_out, 2))
            oh = rng.uniform(0.0, 2.0 * wall_height * s_gt, n_out)
            pts.append(to_world(oxy, oh))
            lab += ["outlier"] * n_out

        world_pts = np.concatenate(pts, axis=0)
        conf = np.concatenate(
            [rng.uniform(0.6, 1.0, n_wall + n_floor + n_ceil), rng.uniform(0.0, 0.4, n_out)]
        )

        # Camera pose: eye height, looking at a sampled wall point.
        cam_world = to_world(cam_fp[None, :], np.array([0.5 * wall_height * s_gt]))[0]
        target = world_pts[rng.integers(0, n_wall)]
        fwd = target - cam_world
        fwd[1] *= 0.2  # keep the gaze mostly horizontal
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(up, fwd)
        right /= np.linalg.norm(right)
        up2 = np.cross(fwd, right)
        r_cam_world = np.stack([right, up2, fwd], axis=1)
        fp_yaw = wrap_angle(math.atan2(fwd[2], fwd[0]) + theta_gt)

        recon_pts = world_pts @ r_rec.T + t_rec
        pose = CameraPose(
            rotation=r_rec @ r_cam_world,
            center=r_rec @ cam_world + t_rec,
            image_id=i,
        )
        vote = true_up_recon
        if gravity_jitter_deg > 0:
            axis = np.cross(true_up_recon, rng.normal(0.0, 1.0, 3))
            angle = math.radians(rng.uniform(0.0, gravity_jitter_deg))
            vote = _rodrigues(true_up_recon, axis, angle)
        images.append(
            ImageBlock(points=recon_pts, confidence=conf, pose=pose, gravity_vote=vote)
        )
        labels.append(lab)
        camera_gt.append(
            {
                "image_id": i,
                "fp_pos": sim2_apply(gt, cam_world[[0, 2]]).tolist(),
                "fp_yaw": fp_yaw,
            }
        )

    return SynthScene(
        layout=layout,
        scene=ReconstructedScene(images=images),
        gt_world_sim2=gt,
        recon_rotation=r_rec,
        recon_translation=t_rec,
        camera_gt=camera_gt,
        labels=labels,
        wall_height=wall_height,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Training corpus for the toy encoder
# ---------------------------------------------------------------------------


@dataclass
class CorpusScene:
    """Pre-rendered density/floorplan pair with its exact pixel mapping."""

    density: np.ndarray
    floorplan: np.ndarray
    density_to_fp: Sim2
    dm: DensityMap


def build_corpus_scene(
    seed: int,
    size: int = 512,
    n_rooms: int = 4,
    noise_sigma: float = 0.8,
    filter_params: FilterParams | None = None,
    gamma: float = 0.5,
) -> CorpusScene:
    layout = gen_layout(
        seed, n_rooms=n_rooms, size=(size, size), ink_variation=0.45, room_fills=True
    )
    sc = gen_scene(
        layout,
        seed=seed,
        n_images=6,
        noise_sigma=noise_sigma,
        outlier_frac=0.1,
        gravity_jitter_deg=1.0,
        wall_rate_power=2.0,
    )
    aligned, _ = gravity_align_scene(sc.scene)
    pts = filter_points(aligned, filter_params or FilterParams())
    dm = rasterize(pts, (size, size), gamma=gamma)
    return CorpusScene(
        density=dm.grid,
        floorplan=layout.raster,
        density_to_fp=sc.gt_density_sim2(dm),
        dm=dm,
    )


def sample_density_points(
    density: np.ndarray, n: int, rng: np.random.Generator, temperature: float = 1.0
) -> np.ndarray:
    """Pixels drawn with probability proportional to density^temperature,
    cell-jittered. Temperatures below 1 spread draws across the structure,
    which keeps contrastive pairs from piling onto the brightest walls."""
    h, w = density.shape
    mass = density.ravel() ** temperature if temperature != 1.0 else density.ravel()
    cells = rng.choice(h * w, size=n, p=mass / mass.sum())
    jitter = rng.random((n, 2))
    return np.stack([cells % w + jitter[:, 0], cells // w + jitter[:, 1]], axis=1)


def scene_pairs(cs: CorpusScene, q: int, rng: np.random.Generator) -> CorrespondenceBatch:
    """Q ground-truth pairs on one scene, spread across its structure.

    Draws are thinned to pairwise-separated points first: co-located pairs
    are contrastively indistinguishable and only raise the achievable loss
    floor.
    """
    cand = sample_density_points(cs.density, 4 * q, rng, temperature=0.15)
    grid_key = np.round(cand / 12.0).astype(int)
    _, first = np.unique(grid_key, axis=0, return_index=True)
    pd = cand[np.sort(first)]
    if pd.shape[0] >= q:
        pd = pd[:q]
    else:
        fill = rng.integers(0, pd.shape[0], size=q - pd.shape[0])
        pd = np.vstack([pd, pd[fill]])
    pf = sim2_apply(cs.density_to_fp, pd)
    hf, wf = cs.floorplan.shape[:2]
    ok = (pf[:, 0] >= 0) & (pf[:, 0] <= wf) & (pf[:, 1] >= 0) & (pf[:, 1] <= hf)
    # Pairs that map outside the drawn floorplan are resampled from the
    # valid ones so batches keep exactly q in-bounds pairs.
    if not np.all(ok):
        good = np.nonzero(ok)[0]
        fill = good[rng.integers(0, len(good), size=int((~ok).sum()))]
        pd[~ok] = pd[fill]
        pf[~ok] = pf[fill]
    return CorrespondenceBatch(
        density_image=cs.density, floorplan_image=cs.floorplan, pd=pd, pf=pf
    )


def make_toy_corpus(
    seed: int,
    q: int = 256,
    size: int = 512,
    n_scenes: int = 8,
    n_heldout: int = 2,
    noise_sigma: float = 0.8,
    batch_pairs: int = 4,
):
    """Batch generator over a small scene pool, plus held-out eval scenes.

    Each step yields ``batch_pairs`` scene pairs sharing the Q budget, so
    the contrastive term sees both within-scene and cross-scene negatives.
    Returns (corpus_fn, heldout) where corpus_fn(step, rng) yields a list of
    CorrespondenceBatch and heldout is a list of CorpusScene.
    """
    scenes = [build_corpus_scene(seed * 1000 + i, size=size) for i in range(n_scenes)]
    heldout = [
        build_corpus_scene(seed * 1000 + 500 + i, size=size, noise_sigma=noise_sigma)
        for i in range(n_heldout)
    ]
    per_pair = max(2, q // batch_pairs)

    def corpus(step: int, rng: np.random.Generator) -> list:
        picked = [scenes[(step * batch_pairs + k) % len(scenes)] for k in range(batch_pairs)]
        return [scene_pairs(cs, per_pair, rng) for cs in picked]

    return corpus, heldout
