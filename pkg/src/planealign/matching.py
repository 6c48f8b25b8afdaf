"""Inference-time correspondence extraction and robust Sim(2) estimation.

Queries are drawn from the density map in proportion to its values, matched
into the floorplan with a soft-argmax over patch features, pruned to the
confident + mutually-nearest half, and fed to a RANSAC whose winning
hypothesis is refined by weighted least squares.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .densmap import (
    DensityMap,
    FilterParams,
    Floorplan,
    ReconstructedScene,
    filter_points,
    gravity_align_scene,
    rasterize,
)
from .errors import EmptyDensity, EmptyInput, NoConsensus, PlaneAlignError
from .features import FeatureMap, ToyEncoder, encode, oracle_features, read_features, sample_features
from .geom import (
    EPS_DEG,
    Sim2,
    align_scene,
    make_rng,
    sim2_apply,
    sim2_compose,
    sim2_inverse,
    sim2_umeyama,
)
from .losses import soft_match


@dataclass
class CorrespondenceSet:
    """Query/prediction pairs with confidences and per-pair flags."""

    pd: np.ndarray  # (N, 2) density-map pixels
    pf: np.ndarray  # (N, 2) floorplan pixels
    w: np.ndarray  # (N,) confidences in (0, 1]
    reliable: np.ndarray | None = None  # (N,) bool
    inlier: np.ndarray | None = None  # (N,) bool

    def __post_init__(self):
        self.pd = np.asarray(self.pd, dtype=float).reshape(-1, 2)
        self.pf = np.asarray(self.pf, dtype=float).reshape(-1, 2)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        n = self.pd.shape[0]
        if self.pf.shape[0] != n or self.w.shape[0] != n:
            raise ValueError("pd, pf, w must have matching lengths")
        if self.reliable is None:
            self.reliable = np.zeros(n, dtype=bool)
        else:
            self.reliable = np.asarray(self.reliable, dtype=bool).reshape(-1)
        if self.inlier is not None:
            self.inlier = np.asarray(self.inlier, dtype=bool).reshape(-1)

    def __len__(self) -> int:
        return self.pd.shape[0]

    def take(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(
            pd=self.pd[idx],
            pf=self.pf[idx],
            w=self.w[idx],
            reliable=self.reliable[idx],
            inlier=None if self.inlier is None else self.inlier[idx],
        )

    def to_json_list(self) -> list[dict]:
        out = []
        for i in range(len(self)):
            out.append(
                {
                    "pd": [float(self.pd[i, 0]), float(self.pd[i, 1])],
                    "pf": [float(self.pf[i, 0]), float(self.pf[i, 1])],
                    "w": float(self.w[i]),
                    "reliable": bool(self.reliable[i]),
                    "inlier": bool(self.inlier[i]) if self.inlier is not None else False,
                }
            )
        return out


@dataclass(frozen=True)
class RansacParams:
    """Hypothesis count, inlier gate, and acceptance floor for the Sim2 fit.

    ``inlier_threshold`` of None resolves to 2% of the floorplan diagonal at
    call sites that know the raster.
    """

    iterations: int = 2000
    inlier_threshold: float | None = None
    min_inliers: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold is not None and self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")


def sample_queries(dm: DensityMap, n: int, seed) -> np.ndarray:
    """Draw n density-weighted query points, jittered inside their cells."""
    mass = dm.grid.sum()
    if mass <= 0:
        raise EmptyDensity("density map has zero mass")
    h, w = dm.grid.shape
    rng = make_rng(seed)
    cells = rng.choice(h * w, size=int(n), p=dm.grid.ravel() / mass)
    jitter = rng.random((int(n), 2))
    return np.stack([cells % w + jitter[:, 0], cells // w + jitter[:, 1]], axis=1)


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.where(norms > 0, norms, 1.0)


def _patch_index(points: np.ndarray, fm: FeatureMap) -> np.ndarray:
    hp, wp = fm.grid_shape
    col = np.clip((points[:, 0] // fm.patch).astype(np.int64), 0, wp - 1)
    row = np.clip((points[:, 1] // fm.patch).astype(np.int64), 0, hp - 1)
    return row * wp + col


def reliable_indices(cs: CorrespondenceSet, feat_d: FeatureMap, feat_f: FeatureMap) -> np.ndarray:
    """Indices surviving top-half confidence ranking plus the patch-level
    mutual-nearest-neighbor check (over the full patch grid)."""
    n = len(cs)
    if n == 0:
        raise EmptyInput("empty correspondence set")
    order = np.argsort(-cs.w, kind="stable")  # ties keep lower index first
    keep = order[: max(1, math.ceil(n / 2))]

    flat_d = _unit_rows(feat_d.flat())
    flat_f = _unit_rows(feat_f.flat())
    fp_idx = _patch_index(cs.pf[keep], feat_f)
    dens_idx = _patch_index(cs.pd[keep], feat_d)
    back = np.argmax(flat_f[fp_idx] @ flat_d.T, axis=1)
    mutual = back == dens_idx
    return np.sort(keep[mutual])


def select_reliable(cs: CorrespondenceSet, feat_d: FeatureMap, feat_f: FeatureMap) -> CorrespondenceSet:
    """Confident-and-mutual subset, flagged reliable; coordinates untouched."""
    idx = reliable_indices(cs, feat_d, feat_f)
    out = cs.take(idx)
    out.reliable = np.ones(len(out), dtype=bool)
    return out


def ransac_sim2(cs: CorrespondenceSet, params: RansacParams) -> tuple[Sim2, np.ndarray]:
    """Two-point RANSAC over the pairs in ``cs`` with a least-squares refit.

    Hypotheses are scored by inlier count, ties by total inlier residual.
    The refit is kept only if it does not lose inliers. Deterministic for a
    fixed seed, and invariant to the order pairs are listed in (sampling
    happens over a canonically sorted view).
    """
    n = len(cs)
    if params.inlier_threshold is None:
        raise ValueError("inlier_threshold must be resolved before calling ransac_sim2")
    if n < 2:
        raise NoConsensus(f"need at least 2 pairs, have {n}", best_count=0)
    thr = float(params.inlier_threshold)

    order = np.lexsort((cs.w, cs.pf[:, 1], cs.pf[:, 0], cs.pd[:, 1], cs.pd[:, 0]))
    a = cs.pd[order, 0] + 1j * cs.pd[order, 1]
    b = cs.pf[order, 0] + 1j * cs.pf[order, 1]
    wts = cs.w[order]

    rng = make_rng(params.seed)
    idx = rng.integers(0, n, size=(params.iterations, 2))
    a1, a2 = a[idx[:, 0]], a[idx[:, 1]]
    b1, b2 = b[idx[:, 0]], b[idx[:, 1]]
    da, db = a2 - a1, b2 - b1
    valid = (np.abs(da) > EPS_DEG) & (np.abs(db) > EPS_DEG)
    if not valid.any():
        raise NoConsensus("every sampled hypothesis was degenerate", best_count=0)
    c = np.where(valid, db / np.where(valid, da, 1.0), 0.0)
    t = b1 - c * a1

    resid = np.abs(c[:, None] * a[None, :] + t[:, None] - b[None, :])
    inl = resid <= thr
    counts = np.where(valid, inl.sum(axis=1), -1)
    resid_sums = np.where(inl, resid, 0.0).sum(axis=1)
    best = np.lexsort((resid_sums, -counts))[0]
    best_count = int(counts[best])
    if best_count < 2:
        raise NoConsensus("no valid hypothesis", best_count=max(best_count, 0))
    mask = inl[best]

    m_best = Sim2(abs(c[best]), math.atan2(c[best].imag, c[best].real), (t[best].real, t[best].imag))
    try:
        m_refit = sim2_umeyama(cs.pd[order][mask], cs.pf[order][mask], weights=wts[mask])
        refit_resid = np.abs(
            (m_refit.s * np.exp(1j * m_refit.theta)) * a + (m_refit.t[0] + 1j * m_refit.t[1]) - b
        )
        refit_mask = refit_resid <= thr
        if int(refit_mask.sum()) >= best_count:
            m_best, mask = m_refit, refit_mask
            best_count = int(refit_mask.sum())
    except PlaneAlignError:
        pass  # keep the raw hypothesis if the refit degenerates

    if best_count < params.min_inliers:
        raise NoConsensus(
            f"only {best_count} inliers, need {params.min_inliers}", best_count=best_count
        )
    mask_orig = np.zeros(n, dtype=bool)
    mask_orig[order] = mask
    return m_best, mask_orig


# ---------------------------------------------------------------------------
# Feature backends
# ---------------------------------------------------------------------------


class OracleBackend:
    """Ground-truth features derived from the known aligned-world -> floorplan map."""

    name = "oracle"

    def __init__(self, aligned_world_to_fp: Sim2, channels=192, bandwidth=32.0, patch=16, seed=0):
        self.aligned_world_to_fp = aligned_world_to_fp
        self.channels = channels
        self.bandwidth = bandwidth
        self.patch = patch
        self.seed = seed

    def features(self, dm: DensityMap, floorplan: Floorplan):
        gt_d2f = sim2_compose(self.aligned_world_to_fp, sim2_inverse(dm.world_to_grid))
        return oracle_features(
            gt_d2f,
            dm.grid.shape,
            floorplan.shape,
            channels=self.channels,
            bandwidth=self.bandwidth,
            patch=self.patch,
            seed=self.seed,
        )


class ToyBackend:
    """Shared trainable encoder applied to both rasters."""

    name = "toy"

    def __init__(self, encoder: ToyEncoder):
        self.encoder = encoder

    def features(self, dm: DensityMap, floorplan: Floorplan):
        return encode(self.encoder, dm.grid), encode(self.encoder, floorplan.raster)


class FileBackend:
    """Feature maps loaded from FMAP files (e.g. exported by the bridge)."""

    name = "file"

    def __init__(self, density_path, floorplan_path):
        self.density_path = density_path
        self.floorplan_path = floorplan_path

    def features(self, dm: DensityMap, floorplan: Floorplan):
        return read_features(self.density_path), read_features(self.floorplan_path)


# ---------------------------------------------------------------------------
# End-to-end localization
# ---------------------------------------------------------------------------


@dataclass
class LocalizeParams:
    filter_params: FilterParams = field(default_factory=FilterParams)
    out_size: tuple[int, int] | None = None  # None: match the floorplan raster
    gamma: float = 0.5
    margin_frac: float = 0.05
    n_queries: int = 1024
    tau: float = 0.07
    ransac: RansacParams = field(default_factory=RansacParams)
    chunk_size: int = 150
    seed: int = 0


@dataclass
class LocalizeResult:
    sim2: Sim2  # density pixels -> floorplan pixels (first chunk)
    scene: ReconstructedScene  # floorplan-frame scene (all chunks)
    correspondences: CorrespondenceSet  # first chunk, flags filled
    report: dict
    density: DensityMap  # first chunk


def match_maps(
    dm: DensityMap,
    floorplan: Floorplan,
    backend,
    params: LocalizeParams,
    seed_salt: int = 0,
) -> tuple[Sim2, CorrespondenceSet, dict]:
    """Density-to-floorplan matching on already-built rasters.

    Runs query sampling, soft-argmax matching, reliability filtering, and
    RANSAC; returns the fitted Sim2, the full correspondence set with
    reliable/inlier flags, and a stage-timing report entry.
    """
    entry: dict = {"stages": []}
    tick = time.perf_counter()
    current = "features"

    def stage(done, nxt):
        nonlocal tick, current
        now = time.perf_counter()
        entry["stages"].append({"stage": done, "ms": 1000.0 * (now - tick)})
        tick = now
        current = nxt

    try:
        feat_d, feat_f = backend.features(dm, floorplan)
        stage("features", "match")
        queries = sample_queries(dm, params.n_queries, seed=[params.seed, 11, seed_salt])
        f_dens = sample_features(feat_d, queries)
        sm = soft_match(f_dens, feat_f, params.tau)
        cs = CorrespondenceSet(pd=queries, pf=sm.coords, w=sm.weights)
        stage("match", "reliable")
        rel_idx = reliable_indices(cs, feat_d, feat_f)
        cs.reliable[rel_idx] = True
        rel = cs.take(rel_idx)
        rel.reliable = np.ones(len(rel), dtype=bool)
        stage("reliable", "ransac")
        thr = params.ransac.inlier_threshold
        rp = replace(
            params.ransac,
            inlier_threshold=thr if thr is not None else 0.02 * floorplan.diagonal,
            seed=params.ransac.seed + 7919 * seed_salt,
        )
        m, inl = ransac_sim2(rel, rp)
        stage("ransac", "done")
    except PlaneAlignError as err:
        entry["failed_stage"] = current
        entry["error"] = type(err).__name__
        err.report = entry
        raise

    inlier_full = np.zeros(len(cs), dtype=bool)
    inlier_full[rel_idx] = inl
    cs.inlier = inlier_full
    entry["sim2"] = m.to_json_dict()
    entry["n_queries"] = len(cs)
    entry["n_reliable"] = len(rel)
    entry["n_inliers"] = int(inl.sum())
    entry["inlier_ratio"] = float(inl.mean()) if len(rel) else 0.0
    return m, cs, entry


def localize(
    scene: ReconstructedScene,
    dm: DensityMap | None,
    floorplan: Floorplan,
    backend,
    params: LocalizeParams,
) -> LocalizeResult:
    """Gravity-align, rasterize, match, and fit; chunked for large scenes.

    Scenes beyond ``chunk_size`` images are split into ceil(N/chunk_size)
    chunks that run the whole pipeline independently; per-chunk transforms
    are reported and never fused. A provided ``dm`` is used only when the
    scene fits in a single chunk and is already gravity-aligned.
    """
    if scene.n_images == 0:
        raise EmptyInput("scene has no images")
    n_chunks = max(1, -(-scene.n_images // params.chunk_size))
    bounds = np.linspace(0, scene.n_images, n_chunks + 1).astype(int)

    report: dict = {
        "n_images": scene.n_images,
        "n_chunks": n_chunks,
        "backend": getattr(backend, "name", type(backend).__name__),
        "choices": {
            "mnn": "full patch grid",
            "grayscale": "single-channel rasters replicated to 3 channels",
        },
        "chunks": [],
    }
    out_blocks = []
    first = None

    for ci in range(n_chunks):
        sub = scene.subset(range(bounds[ci], bounds[ci + 1]))
        try:
            aligned, _ = gravity_align_scene(sub)
            if dm is not None and n_chunks == 1 and scene.frame == "gravity_aligned":
                dm_c = dm
            else:
                pts = filter_points(aligned, params.filter_params)
                size = params.out_size or floorplan.shape
                dm_c = rasterize(pts, size, gamma=params.gamma, margin_frac=params.margin_frac)
            m, cs, entry = match_maps(dm_c, floorplan, backend, params, seed_salt=ci)
        except PlaneAlignError as err:
            sub_report = getattr(err, "report", {})
            report["chunks"].append({"chunk": ci, "n_images": sub.n_images, **sub_report})
            err.report = report
            raise

        entry.update({"chunk": ci, "n_images": sub.n_images})
        report["chunks"].append(entry)
        m_scene = sim2_compose(m, dm_c.world_to_grid)
        for block in aligned.images:
            pts_t, poses_t = align_scene(block.points, [block.pose], m_scene)
            out_blocks.append(
                type(block)(
                    points=pts_t,
                    confidence=block.confidence.copy(),
                    pose=poses_t[0],
                    gravity_vote=block.gravity_vote.copy(),
                )
            )
        if first is None:
            first = (m, cs, dm_c)

    m0, cs0, dm0 = first
    return LocalizeResult(
        sim2=m0,
        scene=ReconstructedScene(images=out_blocks, frame="gravity_aligned"),
        correspondences=cs0,
        report=report,
        density=dm0,
    )
