"""Patch feature maps, bilinear sampling, and the pluggable feature sources.

A feature map covers its source raster at one vector per ``patch`` x
``patch`` block. Sampling interpolates the four surrounding patch vectors
(patch centers sit at (index + 0.5) * patch) and l2-normalizes the result;
nothing is normalized at encode time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import BadMagic, DimOverflow, OutOfBounds, TruncatedFile
from .geom import Sim2, make_rng, sim2_apply

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
_FMAP_HEADER = struct.Struct("<4sHHIII")
# Caps the payload at 1 GiB of float32s; larger headers are treated as corrupt.
_MAX_CELLS = 1 << 28


@dataclass
class FeatureMap:
    """H' x W' x C patch features over a source raster."""

    grid: np.ndarray
    patch: int = 16
    source_size: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 3 or self.grid.shape[2] < 2:
            raise ValueError("feature grid must be H' x W' x C with C >= 2")
        h, w = self.source_size
        hp, wp = self.grid.shape[:2]
        if hp != -(-h // self.patch) or wp != -(-w // self.patch):
            raise ValueError(
                f"grid {hp}x{wp} does not cover source {h}x{w} at patch {self.patch}"
            )

    @property
    def channels(self) -> int:
        return self.grid.shape[2]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.grid.shape[:2]

    def flat(self) -> np.ndarray:
        """Row-major (H'W', C) view of the grid."""
        return self.grid.reshape(-1, self.grid.shape[2])

    def centroids(self) -> np.ndarray:
        """(H'W', 2) patch centers in source pixels, (x, y) order."""
        hp, wp = self.grid.shape[:2]
        return patch_centroids(hp, wp, self.patch)


def patch_centroids(hp: int, wp: int, patch: int) -> np.ndarray:
    xs = (np.arange(wp) + 0.5) * patch
    ys = (np.arange(hp) + 0.5) * patch
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def bilinear_taps(fm: FeatureMap, pts: np.ndarray):
    """Flat grid indices and weights of the 4 patch cells around each point.

    Points must lie inside the source raster bounds. Taps clamp at the grid
    border, so the weights always sum to 1.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    h, w = fm.source_size
    if (
        not np.all(np.isfinite(pts))
        or np.any(pts[:, 0] < 0)
        or np.any(pts[:, 0] > w)
        or np.any(pts[:, 1] < 0)
        or np.any(pts[:, 1] > h)
    ):
        raise OutOfBounds("sample point outside the source raster")
    hp, wp = fm.grid.shape[:2]

    def axis_taps(coord, n):
        u = coord / fm.patch - 0.5
        u = np.clip(u, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(u), n - 2).astype(np.int64) if n > 1 else np.zeros(len(u), np.int64)
        frac = u - i0 if n > 1 else np.zeros(len(u))
        return i0, i0 + 1 if n > 1 else i0, frac

    j0, j1, fu = axis_taps(pts[:, 0], wp)
    i0, i1, fv = axis_taps(pts[:, 1], hp)
    idx = np.stack([i0 * wp + j0, i0 * wp + j1, i1 * wp + j0, i1 * wp + j1], axis=1)
    wts = np.stack(
        [(1 - fv) * (1 - fu), (1 - fv) * fu, fv * (1 - fu), fv * fu], axis=1
    )
    return idx, wts


def sample_feature(fm: FeatureMap, p) -> np.ndarray:
    """Bilinear patch-feature lookup at source-pixel location ``p``, l2-normalized.

    A zero interpolated vector (degenerate) is returned as all zeros rather
    than raising; callers can detect it by its zero norm.
    """
    return sample_features(fm, np.atleast_2d(np.asarray(p, dtype=float)))[0]


def sample_features(fm: FeatureMap, pts: np.ndarray) -> np.ndarray:
    """Vectorized ``sample_feature`` over (N, 2) points; returns (N, C)."""
    idx, wts = bilinear_taps(fm, pts)
    flat = fm.flat()
    mixed = np.einsum("nk,nkc->nc", wts, flat[idx])
    norms = np.linalg.norm(mixed, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return mixed / safe[:, None]


def sample_features_var(grid_flat: ad.Var, fm: FeatureMap, pts: np.ndarray) -> ad.Var:
    """Differentiable twin of ``sample_features`` on a flat (H'W', C) Var."""
    idx, wts = bilinear_taps(fm, pts)
    taps = [ad.gather_rows(grid_flat, idx[:, k]) * wts[:, k : k + 1] for k in range(4)]
    mixed = taps[0] + taps[1] + taps[2] + taps[3]
    return ad.l2norm_rows(mixed, floor=1e-300)


# ---------------------------------------------------------------------------
# Trainable patch encoder
# ---------------------------------------------------------------------------


@dataclass
class ToyEncoder:
    """Small patch-grid network shared by both modalities.

    A per-patch linear embed feeds two tanh hidden layers with 3x3
    patch-grid connectivity (so features see roughly five patches of
    context), then a per-patch projection to C channels. Single-channel
    rasters are replicated to three channels so one weight set serves
    density maps and floorplans alike (recorded in run reports).
    """

    patch: int = 16
    hidden: int = 48
    channels: int = 64
    params: dict = field(default_factory=dict)

    PARAM_KEYS = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")

    @classmethod
    def init(cls, seed: int = 0, patch: int = 16, hidden: int = 48, channels: int = 64):
        """Variance-preserving random initialization."""
        rng = make_rng(seed)
        d_in = patch * patch * 3
        mix = (9 * hidden) ** -0.5
        params = {
            "w1": rng.normal(0.0, d_in**-0.5, (d_in, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, mix, (9, hidden, hidden)),
            "b2": np.zeros(hidden),
            "w3": rng.normal(0.0, mix, (9, hidden, hidden)),
            "b3": np.zeros(hidden),
            "w4": rng.normal(0.0, hidden**-0.5, (hidden, channels)),
            "b4": np.zeros(channels),
        }
        enc = cls(patch=patch, hidden=hidden, channels=channels, params=params)
        if enc.n_params() > 100_000:
            raise ValueError("toy encoder exceeds the 1e5 parameter budget")
        return enc

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(
            patch=self.patch,
            hidden=self.hidden,
            channels=self.channels,
            params={k: v.copy() for k, v in self.params.items()},
        )

    def save(self, path) -> None:
        np.savez(
            path,
            patch=self.patch,
            hidden=self.hidden,
            channels=self.channels,
            **self.params,
        )

    @classmethod
    def load(cls, path) -> "ToyEncoder":
        data = np.load(path)
        params = {k: data[k] for k in cls.PARAM_KEYS}
        return cls(
            patch=int(data["patch"]),
            hidden=int(data["hidden"]),
            channels=int(data["channels"]),
            params=params,
        )


def image_patches(image: np.ndarray, patch: int) -> tuple[np.ndarray, int, int]:
    """Zero-padded, row-major (H'W', patch*patch*3) patch matrix."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    elif image.ndim == 3 and image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be HxW or HxWx{1,3}")
    h, w, _ = image.shape
    hp, wp = -(-h // patch), -(-w // patch)
    padded = np.zeros((hp * patch, wp * patch, 3))
    padded[:h, :w] = image
    tiles = padded.reshape(hp, patch, wp, patch, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(hp * wp, patch * patch * 3), hp, wp


def _grid_shift_index(hp: int, wp: int):
    """Flat row indices and validity masks for the 3x3 patch-grid offsets."""
    rows, cols = np.mgrid[0:hp, 0:wp]
    out = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            r = rows + dy
            c = cols + dx
            valid = (r >= 0) & (r < hp) & (c >= 0) & (c < wp)
            idx = np.clip(r, 0, hp - 1) * wp + np.clip(c, 0, wp - 1)
            out.append((idx.ravel(), valid.ravel().astype(float)[:, None]))
    return out


def _mix_layer(h: ad.Var, w: ad.Var, b: ad.Var, shifts) -> ad.Var:
    """3x3 patch-grid convolution expressed as nine shifted matmuls."""
    n = w.value.shape[1]
    terms = None
    for k, (idx, valid) in enumerate(shifts):
        wk = ad.reshape(ad.gather_rows(w, np.array([k])), (n, n))
        part = (ad.gather_rows(h, idx) * valid) @ wk
        terms = part if terms is None else terms + part
    return ad.tanh(terms + b)


def encode_grid_var(params: dict, patches: np.ndarray, hp: int, wp: int) -> ad.Var:
    """Network forward over a patch matrix; returns a flat (hp*wp, C) Var.

    ``params`` values may be Vars or plain arrays.
    """
    p = {k: ad.as_var(v) for k, v in params.items()}
    x = ad.as_var(patches)
    h1 = ad.tanh(x @ p["w1"] + p["b1"])
    shifts = _grid_shift_index(hp, wp)
    h2 = _mix_layer(h1, p["w2"], p["b2"], shifts)
    h3 = _mix_layer(h2, p["w3"], p["b3"], shifts)
    return h3 @ p["w4"] + p["b4"]


def encode(enc: ToyEncoder, image: np.ndarray) -> FeatureMap:
    """Deterministic feature map of a raster; no normalization applied here."""
    image = np.asarray(image, dtype=np.float64)
    patches, hp, wp = image_patches(image, enc.patch)
    out = encode_grid_var(enc.params, patches, hp, wp).value
    return FeatureMap(
        grid=out.reshape(hp, wp, enc.channels),
        patch=enc.patch,
        source_size=(image.shape[0], image.shape[1]),
    )


# ---------------------------------------------------------------------------
# Ground-truth oracle features
# ---------------------------------------------------------------------------


def oracle_features(
    gt_density_to_floorplan: Sim2,
    density_size: tuple[int, int],
    floorplan_size: tuple[int, int],
    channels: int = 192,
    bandwidth: float = 32.0,
    patch: int = 16,
    seed: int = 0,
) -> tuple[FeatureMap, FeatureMap]:
    """Feature pair that encodes ground-truth floorplan position.

    Both maps embed floorplan coordinates through one random Fourier feature
    set, so corresponding locations receive identical vectors and similarity
    decays with distance at the given bandwidth (in floorplan pixels).
    """
    rng = make_rng(seed)
    omega = rng.normal(0.0, 1.0 / bandwidth, (channels, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, channels)

    def embed(q: np.ndarray) -> np.ndarray:
        return np.cos(q @ omega.T + phase)

    hd, wd = density_size
    hf, wf = floorplan_size
    hp_d, wp_d = -(-hd // patch), -(-wd // patch)
    hp_f, wp_f = -(-hf // patch), -(-wf // patch)
    dens_q = sim2_apply(gt_density_to_floorplan, patch_centroids(hp_d, wp_d, patch))
    fd = FeatureMap(
        grid=embed(dens_q).reshape(hp_d, wp_d, channels),
        patch=patch,
        source_size=(hd, wd),
    )
    ff = FeatureMap(
        grid=embed(patch_centroids(hp_f, wp_f, patch)).reshape(hp_f, wp_f, channels),
        patch=patch,
        source_size=(hf, wf),
    )
    return fd, ff


# ---------------------------------------------------------------------------
# FMAP binary format
# ---------------------------------------------------------------------------


def write_features(fm: FeatureMap, path) -> None:
    """Serialize to FMAP: magic, version/patch u16, H' W' C u32, f32 payload."""
    hp, wp, c = fm.grid.shape
    header = _FMAP_HEADER.pack(FMAP_MAGIC, FMAP_VERSION, fm.patch, hp, wp, c)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(fm.grid, dtype="<f4").tobytes())


def read_features(path) -> FeatureMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _FMAP_HEADER.size:
        raise TruncatedFile(f"file is {len(blob)} bytes, shorter than the header")
    magic, version, patch, hp, wp, c = _FMAP_HEADER.unpack_from(blob)
    if magic != FMAP_MAGIC:
        raise BadMagic(f"expected {FMAP_MAGIC!r}, found {magic!r}")
    if version != FMAP_VERSION:
        raise BadMagic(f"unsupported FMAP version {version}")
    if min(hp, wp, c) == 0 or hp * wp * c > _MAX_CELLS:
        raise DimOverflow(f"implausible dimensions {hp}x{wp}x{c}")
    expect = _FMAP_HEADER.size + 4 * hp * wp * c
    if len(blob) < expect:
        raise TruncatedFile(f"payload needs {expect} bytes, file has {len(blob)}")
    if len(blob) > expect:
        raise TruncatedFile(f"unexpected trailing bytes ({len(blob) - expect})")
    grid = np.frombuffer(blob, dtype="<f4", offset=_FMAP_HEADER.size).reshape(hp, wp, c)
    return FeatureMap(
        grid=grid.astype(np.float64),
        patch=int(patch),
        source_size=(hp * patch, wp * patch),
    )
