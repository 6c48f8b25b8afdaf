"""Training objectives for cross-modal density/floorplan matching.

Four terms: a symmetric InfoNCE over sampled correspondence features, a
confidence-weighted Huber regression on soft-argmax coordinates, an angular
(triplet) consistency penalty, and a log-distance-ratio penalty whose
weighted mean is stop-gradiented. A curriculum activates the regression term
at 10% of training and the two structural terms at 20%.

Loss cores operate on autodiff ``Var`` nodes; the public functions accept
plain arrays and return floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import DegenerateSample, DegenerateWeights, NonFiniteLoss, TooFewPairs
from .features import FeatureMap, ToyEncoder, encode_grid_var, image_patches, sample_features_var
from .geom import EPS_DEG, make_rng

_TINY = 1e-300
# Predicted points can coincide to machine precision once the row softmax
# saturates; angles and log-ratios of collapsed triangles have unbounded
# derivatives, so predicted distances are floored well below pixel scale.
EPS_COLLAPSE = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Loss coefficients and sampling budgets.

    ``huber_delta`` applies to the coordinate regression (in patch units);
    ``huber_delta_struct`` to the two structural terms. Budgets of None mean
    one draw per correspondence (n = Q).
    """

    lambda_feat: float = 1.0
    lambda_regr: float = 50.0
    lambda_topo: float = 10.0
    lambda_geo: float = 10.0
    tau: float = 0.07
    huber_delta: float = 1.0
    huber_delta_struct: float = 0.1
    n_triplets: int | None = None
    n_pairs: int | None = None

    def __post_init__(self):
        if self.tau <= 0 or self.huber_delta <= 0 or self.huber_delta_struct <= 0:
            raise ValueError("tau and huber deltas must be positive")
        if min(self.lambda_feat, self.lambda_regr, self.lambda_topo, self.lambda_geo) < 0:
            raise ValueError("loss coefficients must be nonnegative")


@dataclass
class SoftMatchResult:
    """Soft-argmax output: predicted floorplan coords and row confidences."""

    coords: np.ndarray  # (Q, 2) floorplan pixels
    weights: np.ndarray  # (Q,) max row softmax probability

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.coords.shape[0] != self.weights.shape[0]:
            raise ValueError("coords and weights must pair up")


@dataclass
class CorrespondenceBatch:
    """One training step: two rasters plus Q ground-truth pixel pairs."""

    density_image: np.ndarray
    floorplan_image: np.ndarray
    pd: np.ndarray  # (Q, 2) density-map pixels
    pf: np.ndarray  # (Q, 2) floorplan pixels

    def __post_init__(self):
        self.pd = np.asarray(self.pd, dtype=float).reshape(-1, 2)
        self.pf = np.asarray(self.pf, dtype=float).reshape(-1, 2)
        if self.pd.shape[0] != self.pf.shape[0] or self.pd.shape[0] < 2:
            raise ValueError("need at least two matching pairs")


def huber_var(r: ad.Var, delta: float) -> ad.Var:
    """H(r) = r^2/2 inside |r| <= delta, linear delta*(|r| - delta/2) outside."""
    absr = ad.vabs(r)
    quad = r * r * 0.5
    lin = absr * delta - 0.5 * delta * delta
    return ad.where(absr.value <= delta, quad, lin)


# ---------------------------------------------------------------------------
# Feature matching (symmetric InfoNCE)
# ---------------------------------------------------------------------------


def loss_feat_var(f_dens: ad.Var, f_floor: ad.Var, tau: float) -> ad.Var:
    q = f_dens.value.shape[0]
    if q < 2:
        raise TooFewPairs("InfoNCE needs at least two pairs")
    sims = f_dens @ ad.transpose(f_floor)
    eye = np.eye(q)
    row_term = ad.vsum(ad.log_softmax_rows(sims, tau) * eye)
    col_term = ad.vsum(ad.log_softmax_rows(ad.transpose(sims), tau) * eye)
    return (row_term + col_term) * (-0.5 / q)


def loss_feat(f_dens: np.ndarray, f_floor: np.ndarray, tau: float = 0.07) -> float:
    """Symmetric contrastive loss over Q matched unit feature vectors."""
    f_dens = np.asarray(f_dens, dtype=float)
    f_floor = np.asarray(f_floor, dtype=float)
    for f in (f_dens, f_floor):
        if np.abs(np.linalg.norm(f, axis=1) - 1.0).max() > 1e-6:
            raise ValueError("feature rows must be unit-norm")
    return float(loss_feat_var(ad.Var(f_dens), ad.Var(f_floor), tau).value)


# ---------------------------------------------------------------------------
# Soft-argmax matching
# ---------------------------------------------------------------------------


def soft_match_var(
    f_dens: ad.Var, floor_flat_unit: ad.Var, centroids: np.ndarray, tau: float
) -> tuple[ad.Var, ad.Var]:
    sims = f_dens @ ad.transpose(floor_flat_unit)
    probs = ad.softmax_rows(sims, tau)
    coords = probs @ ad.Var(centroids)
    weights = ad.rowmax(probs)
    return coords, weights


def soft_match(f_dens: np.ndarray, floorplan_features: FeatureMap, tau: float = 0.07) -> SoftMatchResult:
    """Expected floorplan coordinate per query under the row softmax.

    Floorplan patch features are flattened, l2-normalized, and compared to
    each query row; the prediction is the probability-weighted mean of patch
    centroids, with the max row probability kept as confidence.
    """
    flat = floorplan_features.flat()
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    flat_unit = flat / np.where(norms > 0, norms, 1.0)
    coords, weights = soft_match_var(
        ad.Var(np.asarray(f_dens, dtype=float)),
        ad.Var(flat_unit),
        floorplan_features.centroids(),
        tau,
    )
    return SoftMatchResult(coords=coords.value, weights=weights.value)


# ---------------------------------------------------------------------------
# Coordinate regression
# ---------------------------------------------------------------------------


def loss_regr_var(
    coords: ad.Var, weights: ad.Var, gt: np.ndarray, huber_delta: float, unit_px: float = 1.0
) -> ad.Var:
    if weights.value.sum() <= 0:
        raise DegenerateWeights("confidence weights sum to zero")
    resid = (coords - ad.Var(gt)) * (1.0 / unit_px)
    dist = ad.sqrt(ad.maximum_c(ad.vsum(resid * resid, axis=1), _TINY))
    return ad.vsum(weights * huber_var(dist, huber_delta)) / ad.vsum(weights)


def loss_regr(
    pred: SoftMatchResult, gt: np.ndarray, huber_delta: float = 1.0, unit_px: float = 1.0
) -> float:
    """Confidence-weighted Huber distance between predicted and true coords.

    ``unit_px`` rescales residuals (e.g. to patch units) before the Huber.
    """
    return float(
        loss_regr_var(
            ad.Var(pred.coords), ad.Var(pred.weights), np.asarray(gt, dtype=float), huber_delta, unit_px
        ).value
    )


# ---------------------------------------------------------------------------
# Structural consistency
# ---------------------------------------------------------------------------


def sample_triplets(src: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Index triples (i, j, k), distinct and with pairwise src spread > eps."""
    src = np.asarray(src, dtype=float)
    q = src.shape[0]
    if q < 3:
        raise TooFewPairs("triplet sampling needs Q >= 3")
    cand = rng.integers(0, q, size=(max(1, n) * 16, 3))
    distinct = (cand[:, 0] != cand[:, 1]) & (cand[:, 0] != cand[:, 2]) & (cand[:, 1] != cand[:, 2])
    cand = cand[distinct]
    d01 = np.linalg.norm(src[cand[:, 0]] - src[cand[:, 1]], axis=1)
    d02 = np.linalg.norm(src[cand[:, 0]] - src[cand[:, 2]], axis=1)
    d12 = np.linalg.norm(src[cand[:, 1]] - src[cand[:, 2]], axis=1)
    cand = cand[(d01 > EPS_DEG) & (d02 > EPS_DEG) & (d12 > EPS_DEG)]
    if cand.shape[0] == 0:
        raise DegenerateSample("no non-degenerate triplets available")
    return cand[:n]


def sample_pairs(src: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Index pairs (i, j), distinct with src distance > eps."""
    src = np.asarray(src, dtype=float)
    q = src.shape[0]
    if q < 2:
        raise TooFewPairs("pair sampling needs Q >= 2")
    cand = rng.integers(0, q, size=(max(1, n) * 16, 2))
    cand = cand[cand[:, 0] != cand[:, 1]]
    dist = np.linalg.norm(src[cand[:, 0]] - src[cand[:, 1]], axis=1)
    cand = cand[dist > EPS_DEG]
    if cand.shape[0] == 0:
        raise DegenerateSample("no non-degenerate pairs available")
    return cand[:n]


# Signed 2D cross product u x v as a bilinear form: u . (M v) with rows
# v -> (v_y, -v_x); applied as v @ M.T below.
_CROSS_2D = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _angles_np(pts: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin of the interior angle at vertex i of each (i, j, k) triangle."""
    u = pts[tri[:, 1]] - pts[tri[:, 0]]
    v = pts[tri[:, 2]] - pts[tri[:, 0]]
    denom = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    cos = (u * v).sum(axis=1) / denom
    sin = (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / denom
    return cos, sin


def _topo_terms(
    coords: ad.Var,
    weights: ad.Var,
    src: np.ndarray,
    triplets: np.ndarray,
    huber_delta: float,
) -> tuple[ad.Var, ad.Var]:
    """Weighted numerator and weight mass of the triplet-angle penalty."""
    cos_src, sin_src = _angles_np(np.asarray(src, dtype=float), triplets)
    pi = ad.gather_rows(coords, triplets[:, 0])
    pj = ad.gather_rows(coords, triplets[:, 1])
    pk = ad.gather_rows(coords, triplets[:, 2])
    u = pj - pi
    v = pk - pi
    dot = ad.vsum(u * v, axis=1)
    cross = ad.vsum(u * (v @ ad.Var(_CROSS_2D.T)), axis=1)
    nu = ad.sqrt(ad.maximum_c(ad.vsum(u * u, axis=1), EPS_COLLAPSE**2))
    nv = ad.sqrt(ad.maximum_c(ad.vsum(v * v, axis=1), EPS_COLLAPSE**2))
    denom = nu * nv
    resid_cos = dot / denom - ad.Var(cos_src)
    resid_sin = cross / denom - ad.Var(sin_src)
    w = (
        ad.gather_rows(weights, triplets[:, 0])
        * ad.gather_rows(weights, triplets[:, 1])
        * ad.gather_rows(weights, triplets[:, 2])
    )
    penalty = huber_var(resid_cos, huber_delta) + huber_var(resid_sin, huber_delta)
    return ad.vsum(w * penalty), ad.vsum(w)


def loss_topo_var(
    coords: ad.Var,
    weights: ad.Var,
    src: np.ndarray,
    triplets: np.ndarray,
    huber_delta: float,
) -> ad.Var:
    num, den = _topo_terms(coords, weights, src, triplets, huber_delta)
    return num / den


def loss_topo(
    pred: SoftMatchResult,
    src: np.ndarray,
    n_triplets: int,
    huber_delta: float = 0.1,
    rng: np.random.Generator | None = None,
) -> float:
    """Angular consistency between predicted and source triangles.

    Signed sines keep the penalty sensitive to reflections, which a Sim(2)
    cannot produce.
    """
    rng = rng if rng is not None else make_rng(0)
    triplets = sample_triplets(src, n_triplets, rng)
    return float(
        loss_topo_var(ad.Var(pred.coords), ad.Var(pred.weights), src, triplets, huber_delta).value
    )


def _geo_terms(
    coords: ad.Var,
    weights: ad.Var,
    src: np.ndarray,
    pairs: np.ndarray,
    huber_delta: float,
    frozen_mean: float | None = None,
) -> tuple[ad.Var, ad.Var]:
    """Weighted numerator and weight mass of the log-ratio penalty."""
    src = np.asarray(src, dtype=float)
    log_dsrc = np.log(np.linalg.norm(src[pairs[:, 0]] - src[pairs[:, 1]], axis=1))
    u = ad.gather_rows(coords, pairs[:, 0]) - ad.gather_rows(coords, pairs[:, 1])
    dpred = ad.sqrt(ad.maximum_c(ad.vsum(u * u, axis=1), EPS_COLLAPSE**2))
    delta_ij = ad.log(dpred) - ad.Var(log_dsrc)
    w = ad.gather_rows(weights, pairs[:, 0]) * ad.gather_rows(weights, pairs[:, 1])
    if frozen_mean is None:
        mean = ad.detach(ad.vsum(w * delta_ij) / ad.vsum(w))
    else:
        mean = ad.Var(frozen_mean)
    return ad.vsum(w * huber_var(delta_ij - mean, huber_delta)), ad.vsum(w)


def loss_geo_var(
    coords: ad.Var,
    weights: ad.Var,
    src: np.ndarray,
    pairs: np.ndarray,
    huber_delta: float,
    frozen_mean: float | None = None,
) -> ad.Var:
    """Log-ratio deviation loss; the weighted mean is stop-gradiented.

    ``frozen_mean`` substitutes a fixed mean, which finite-difference checks
    need in order to probe the same function the stop-gradient defines.
    """
    num, den = _geo_terms(coords, weights, src, pairs, huber_delta, frozen_mean)
    return num / den


def geo_log_ratio_mean(coords: np.ndarray, weights: np.ndarray, src: np.ndarray, pairs) -> float:
    """The weighted mean log-distance ratio (the quantity the loss freezes)."""
    src = np.asarray(src, dtype=float)
    coords = np.asarray(coords, dtype=float)
    dpred = np.maximum(
        np.linalg.norm(coords[pairs[:, 0]] - coords[pairs[:, 1]], axis=1), EPS_COLLAPSE
    )
    dsrc = np.linalg.norm(src[pairs[:, 0]] - src[pairs[:, 1]], axis=1)
    delta = np.log(dpred) - np.log(dsrc)
    w = np.asarray(weights)[pairs[:, 0]] * np.asarray(weights)[pairs[:, 1]]
    return float((w * delta).sum() / w.sum())


def loss_geo(
    pred: SoftMatchResult,
    src: np.ndarray,
    n_pairs: int,
    huber_delta: float = 0.1,
    rng: np.random.Generator | None = None,
) -> float:
    """Spread of pairwise log-distance ratios around their (frozen) mean."""
    rng = rng if rng is not None else make_rng(0)
    pairs = sample_pairs(src, n_pairs, rng)
    return float(
        loss_geo_var(ad.Var(pred.coords), ad.Var(pred.weights), src, pairs, huber_delta).value
    )


# ---------------------------------------------------------------------------
# Curriculum combination
# ---------------------------------------------------------------------------


def total_loss(step_frac: float, parts: dict, cfg: LossConfig):
    """Coefficient-weighted sum with staged activation.

    Below 10% of training only the feature term contributes; from 10% the
    regression joins; from 20% all four are active. Accepts Vars or floats.
    """
    if not 0.0 <= step_frac <= 1.0:
        raise ValueError("step_frac must lie in [0, 1]")
    total = cfg.lambda_feat * parts["feat"]
    if step_frac >= 0.10:
        total = total + cfg.lambda_regr * parts["regr"]
    if step_frac >= 0.20:
        total = total + cfg.lambda_topo * parts["topo"] + cfg.lambda_geo * parts["geo"]
    return total


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


def training_step_loss(
    param_vars: dict,
    enc: ToyEncoder,
    batch,
    cfg: LossConfig,
    step_frac: float,
    rng: np.random.Generator,
    geo_frozen_mean: float | None = None,
):
    """Full differentiable forward pass for one training step.

    ``batch`` is a CorrespondenceBatch or a list of them (the paper trains
    with several scene pairs per step). The contrastive term runs over the
    union of all pairs, so negatives include easy cross-scene contrasts;
    regression and the structural terms pool weighted sums per scene, since
    angles and distance ratios across different floorplans are meaningless.

    Returns (total, parts, aux): the curriculum total, the four loss Vars,
    and the sampled indices / soft-match outputs / frozen geo means.
    ``geo_frozen_mean`` is only for finite-difference probing of the
    stop-gradient term.
    """
    items = batch if isinstance(batch, (list, tuple)) else [batch]
    patch = enc.patch

    def feature_grid(image):
        patches, hp, wp = image_patches(image, patch)
        grid = encode_grid_var(param_vars, patches, hp, wp)
        meta = FeatureMap(
            grid=grid.value.reshape(hp, wp, enc.channels),
            patch=patch,
            source_size=(image.shape[0], image.shape[1]),
        )
        return grid, meta

    f_dens_parts = []
    f_floor_parts = []
    coords_parts = []
    weights_parts = []
    gt_parts = []
    topo_num = topo_den = None
    geo_num = geo_den = None
    aux = {"coords": [], "weights": [], "triplets": [], "pairs": [], "geo_mean": []}

    for item in items:
        q = item.pd.shape[0]
        grid_d, meta_d = feature_grid(item.density_image)
        grid_f, meta_f = feature_grid(item.floorplan_image)
        f_dens = sample_features_var(grid_d, meta_d, item.pd)
        f_floor = sample_features_var(grid_f, meta_f, item.pf)
        f_dens_parts.append(f_dens)
        f_floor_parts.append(f_floor)

        floor_unit = ad.l2norm_rows(grid_f, floor=_TINY)
        coords, weights = soft_match_var(f_dens, floor_unit, meta_f.centroids(), cfg.tau)
        coords_parts.append(coords)
        weights_parts.append(weights)
        gt_parts.append(item.pf)

        triplets = sample_triplets(item.pd, cfg.n_triplets or q, rng)
        t_num, t_den = _topo_terms(coords, weights, item.pd, triplets, cfg.huber_delta_struct)
        topo_num = t_num if topo_num is None else topo_num + t_num
        topo_den = t_den if topo_den is None else topo_den + t_den

        pairs = sample_pairs(item.pd, cfg.n_pairs or q, rng)
        g_num, g_den = _geo_terms(
            coords, weights, item.pd, pairs, cfg.huber_delta_struct, frozen_mean=geo_frozen_mean
        )
        geo_num = g_num if geo_num is None else geo_num + g_num
        geo_den = g_den if geo_den is None else geo_den + g_den

        aux["coords"].append(coords)
        aux["weights"].append(weights)
        aux["triplets"].append(triplets)
        aux["pairs"].append(pairs)
        aux["geo_mean"].append(
            geo_log_ratio_mean(coords.value, weights.value, item.pd, pairs)
        )

    feat = loss_feat_var(ad.concat(f_dens_parts), ad.concat(f_floor_parts), cfg.tau)
    regr = loss_regr_var(
        ad.concat(coords_parts),
        ad.concat(weights_parts),
        np.concatenate(gt_parts, axis=0),
        cfg.huber_delta,
        unit_px=patch,
    )
    parts = {
        "feat": feat,
        "regr": regr,
        "topo": topo_num / topo_den,
        "geo": geo_num / geo_den,
    }
    if not isinstance(batch, (list, tuple)):
        aux = {k: v[0] for k, v in aux.items()}
    return total_loss(step_frac, parts, cfg), parts, aux


def global_grad_norm(grads: dict) -> float:
    sq = 0.0
    for g in grads.values():
        sq += float((g * g).sum())
    return sq**0.5


def train_toy(
    corpus: Callable[[int, np.random.Generator], CorrespondenceBatch],
    cfg: LossConfig,
    steps: int,
    seed: int,
    lr: float = 1e-4,
    clip_norm: float = 1.0,
    weight_decay: float = 0.01,
    encoder: ToyEncoder | None = None,
    log_path=None,
) -> tuple[ToyEncoder, list[dict]]:
    """AdamW curriculum training of the toy encoder.

    Deterministic for a fixed seed. Aborts with ``NonFiniteLoss`` (carrying
    the last finite-state encoder) if any loss turns NaN/inf. Returns the
    trained encoder and the per-step log.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    enc = (encoder or ToyEncoder.init(seed=seed)).copy()
    param_vars = {k: ad.Var(v) for k, v in enc.params.items()}
    m_state = {k: np.zeros_like(v) for k, v in enc.params.items()}
    v_state = {k: np.zeros_like(v) for k, v in enc.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    rng_batch = make_rng([seed, 1])
    rng_loss = make_rng([seed, 2])

    log: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for step in range(steps):
            frac = step / steps
            batch = corpus(step, rng_batch)
            total, parts, _ = training_step_loss(param_vars, enc, batch, cfg, frac, rng_loss)
            if not np.isfinite(total.value):
                last_good = ToyEncoder(
                    patch=enc.patch,
                    hidden=enc.hidden,
                    channels=enc.channels,
                    params={k: v.value.copy() for k, v in param_vars.items()},
                )
                raise NonFiniteLoss(
                    f"loss became non-finite at step {step}", last_good=last_good, step=step
                )
            ad.backward(total)
            grads = {
                k: (v.grad if v.grad is not None else np.zeros_like(v.value))
                for k, v in param_vars.items()
            }
            gnorm = global_grad_norm(grads)
            scale = min(1.0, clip_norm / (gnorm + 1e-12))
            t = step + 1
            for k, pv in param_vars.items():
                g = grads[k] * scale
                m_state[k] = beta1 * m_state[k] + (1 - beta1) * g
                v_state[k] = beta2 * v_state[k] + (1 - beta2) * g * g
                mhat = m_state[k] / (1 - beta1**t)
                vhat = v_state[k] / (1 - beta2**t)
                pv.value = pv.value * (1 - lr * weight_decay) - lr * mhat / (np.sqrt(vhat) + eps)
            entry = {
                "step": step,
                "frac": frac,
                "feat": float(parts["feat"].value),
                "regr": float(parts["regr"].value),
                "topo": float(parts["topo"].value),
                "geo": float(parts["geo"].value),
                "total": float(total.value),
                "grad_norm": gnorm,
            }
            log.append(entry)
            if log_fh:
                import json

                log_fh.write(json.dumps(entry) + "\n")
    finally:
        if log_fh:
            log_fh.close()

    trained = ToyEncoder(
        patch=enc.patch,
        hidden=enc.hidden,
        channels=enc.channels,
        params={k: v.value.copy() for k, v in param_vars.items()},
    )
    return trained, log
