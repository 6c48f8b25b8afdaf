"""Evaluation metrics: pose recalls, keypoint accuracy, set distances, ICP.

Distances that feed PCK/RMSE are normalized by the floorplan raster
diagonal; recall thresholds are inclusive so boundary cases are
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateSample, EmptyInput
from .geom import make_rng

ANGULAR_THRESHOLDS_DEG = (5.0, 10.0, 20.0, 30.0)
POSITIONAL_THRESHOLDS = (0.05, 0.10, 0.20)
PCK_THRESHOLDS = (0.01, 0.03, 0.05, 0.10, 0.15, 0.30)
FSCORE_THRESHOLDS = (0.01, 0.03, 0.05, 0.10)


@dataclass
class PoseEval:
    """Per-image pose error against ground truth."""

    yaw_err_deg: float
    pos_err_frac: float  # fraction of the floorplan diagonal
    pos_err_m: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.yaw_err_deg <= 180.0:
            raise ValueError("yaw error must lie in [0, 180] degrees")


@dataclass
class ReconEval:
    """Chamfer-style set distances plus F-scores per threshold."""

    accuracy: float
    completeness: float
    overall: float
    fscore: dict = field(default_factory=dict)  # threshold -> [0, 100]


def yaw_error_deg(yaw_a: float, yaw_b: float) -> float:
    """Absolute heading difference folded into [0, 180] degrees."""
    d = abs(math.degrees(yaw_a - yaw_b)) % 360.0
    return min(d, 360.0 - d)


def angular_recall(errs, thresholds_deg=ANGULAR_THRESHOLDS_DEG) -> dict:
    """Fraction of yaw errors at or below each threshold (degrees)."""
    errs = np.asarray(errs, dtype=float)
    if errs.size == 0:
        raise EmptyInput("no errors to evaluate")
    if np.any(errs < 0) or np.any(errs > 180):
        raise ValueError("yaw errors must lie in [0, 180]")
    return {float(t): float((errs <= t).mean()) for t in thresholds_deg}


def positional_recall(errs_frac, thresholds=POSITIONAL_THRESHOLDS) -> dict:
    """Fraction of diagonal-normalized position errors within each threshold."""
    errs = np.asarray(errs_frac, dtype=float)
    if errs.size == 0:
        raise EmptyInput("no errors to evaluate")
    return {float(t): float((errs <= t).mean()) for t in thresholds}


def joint_recall(yaw_errs_deg, pos_errs_frac, yaw_thr: float = 30.0, pos_thr: float = 0.20) -> float:
    """Per-image AND of the angular and positional criteria."""
    yaw = np.asarray(yaw_errs_deg, dtype=float)
    pos = np.asarray(pos_errs_frac, dtype=float)
    if yaw.size == 0 or yaw.shape != pos.shape:
        raise EmptyInput("need matching nonempty error lists")
    return float(((yaw <= yaw_thr) & (pos <= pos_thr)).mean())


def pck_rmse(pred, gt, diag: float | None = None, resolution=None) -> tuple[dict, float]:
    """PCK at the standard thresholds plus RMSE over normalized distances.

    ``diag`` is the normalizer; if absent it is computed from ``resolution``
    (H, W) as the raster diagonal.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt, dtype=float).reshape(-1, 2)
    if pred.shape[0] == 0 or pred.shape != gt.shape:
        raise EmptyInput("need matching nonempty point lists")
    if diag is None:
        if resolution is None:
            raise ValueError("provide diag or resolution")
        diag = math.hypot(resolution[0], resolution[1])
    dist = np.linalg.norm(pred - gt, axis=1) / diag
    pck = {float(t): float((dist <= t).mean()) for t in PCK_THRESHOLDS}
    return pck, float(np.sqrt((dist**2).mean()))


def nearest_dists(query: np.ndarray, ref: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Exact nearest-neighbor distance from each query point into ref.

    Chunked brute force; used both by chamfer_fscore and as the oracle the
    tests compare against.
    """
    query = np.asarray(query, dtype=float)
    ref = np.asarray(ref, dtype=float)
    out = np.empty(query.shape[0])
    for i in range(0, query.shape[0], chunk):
        block = query[i : i + chunk]
        d2 = ((block[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        out[i : i + chunk] = np.sqrt(d2.min(axis=1))
    return out


def chamfer_fscore(
    pred_pts,
    gt_pts,
    n_sample: int = 10000,
    thresholds=FSCORE_THRESHOLDS,
    seed: int = 0,
) -> ReconEval:
    """Accuracy/completeness/overall plus F-scores at each threshold.

    Both sets are subsampled to at most ``n_sample`` points with a shared
    seeded stream, so identical inputs draw identical subsets.
    """
    pred_pts = np.asarray(pred_pts, dtype=float)
    gt_pts = np.asarray(gt_pts, dtype=float)
    if pred_pts.shape[0] == 0 or gt_pts.shape[0] == 0:
        raise EmptyInput("both point sets must be nonempty")

    def sample(pts):
        # one fresh stream per set: identical inputs draw identical subsets
        if pts.shape[0] <= n_sample:
            return pts
        rng = make_rng([seed, 31])
        return pts[rng.choice(pts.shape[0], size=n_sample, replace=False)]

    p = sample(pred_pts)
    g = sample(gt_pts)
    d_pg = nearest_dists(p, g)
    d_gp = nearest_dists(g, p)
    accuracy = float(d_pg.mean())
    completeness = float(d_gp.mean())
    fscore = {}
    for t in thresholds:
        precision = 100.0 * float((d_pg <= t).mean())
        recall = 100.0 * float((d_gp <= t).mean())
        fscore[float(t)] = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return ReconEval(
        accuracy=accuracy,
        completeness=completeness,
        overall=(accuracy + completeness) / 2.0,
        fscore=fscore,
    )


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------


def _rigid_fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation + translation taking src onto dst (Kabsch)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, mu_d - r @ mu_s


def icp_align(src, dst, max_iters: int = 50, tol: float = 1e-6):
    """Point-to-point ICP from identity, with bbox pre-normalization.

    Both clouds are centered and scaled by the destination bounding box
    before iterating; the returned (R, t) maps original src coordinates onto
    original dst coordinates. Also returns the RMS history of the pairing.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape[0] < 3 or dst.shape[0] < 3:
        raise DegenerateSample("ICP needs at least 3 points per set")
    for pts in (src, dst):
        centered = pts - pts.mean(axis=0)
        if np.linalg.matrix_rank(centered.T @ centered, tol=1e-12) < 2:
            raise DegenerateSample("point set is collinear")

    center = 0.5 * (dst.min(axis=0) + dst.max(axis=0))
    extent = float((dst.max(axis=0) - dst.min(axis=0)).max())
    if extent <= 0:
        raise DegenerateSample("destination bounding box has no extent")
    s_n = (src - center) / extent
    d_n = (dst - center) / extent

    tree = cKDTree(d_n)
    r_cur = np.eye(3)
    t_cur = np.zeros(3)
    rms_history = []
    prev = None
    for _ in range(max_iters):
        moved = s_n @ r_cur.T + t_cur
        dist, nn = tree.query(moved)
        r_cur, t_cur = _rigid_fit(s_n, d_n[nn])
        moved = s_n @ r_cur.T + t_cur
        rms = float(np.sqrt(((moved - d_n[nn]) ** 2).sum(axis=1).mean()))
        rms_history.append(rms)
        if prev is not None and abs(prev - rms) < tol:
            break
        prev = rms

    # Undo the normalization: x -> R x + (extent * t + center - R center).
    t_final = extent * t_cur + center - r_cur @ center
    return r_cur, t_final, rms_history


def report_dict(yaw_errs_deg, pos_errs_frac, pck=None, rmse=None) -> dict:
    """Metrics report mirroring the evaluation tables."""
    out = {
        "angular": angular_recall(yaw_errs_deg),
        "positional": positional_recall(pos_errs_frac),
        "joint_30deg_20pct": joint_recall(yaw_errs_deg, pos_errs_frac),
    }
    if pck is not None:
        out["pck"] = pck
        out["rmse"] = rmse
        out["rmse_normalizer"] = "floorplan diagonal"
    return out
