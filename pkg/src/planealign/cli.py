"""Command-line front end.

Subcommands cover the whole pipeline: synth, density, train, match, align,
eval, sweep. Configuration comes from built-in defaults, an optional JSON
config file, and flags (flags win). PLANEALIGN_SEED provides a global seed
fallback. Report paths write JSON plus CSV tables and matplotlib figures.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import sceneio, viz
from .densmap import (
    FilterParams,
    Floorplan,
    filter_points,
    gravity_align_scene,
    rasterize,
)
from .errors import (
    ConfigError,
    FeatureFileError,
    NoConsensus,
    ParseError,
    PlaneAlignError,
)
from .features import ToyEncoder
from .geom import Sim2, camera_yaw, make_rng, sim2_apply
from .losses import LossConfig, train_toy
from .matching import (
    FileBackend,
    LocalizeParams,
    OracleBackend,
    RansacParams,
    ToyBackend,
    localize,
    match_maps,
)
from .metrics import joint_recall, pck_rmse, report_dict, yaw_error_deg
from .synth import gen_layout, gen_scene, make_toy_corpus

DEFAULT_CONFIG = {
    "seed": 0,
    "grid_size": 0,  # density raster size; 0 means match the floorplan
    "chunk_size": 150,
    "n_queries": 1024,
    "tau": 0.07,
    "filter": {"rho_conf": 45.0, "rho_xz": 2.5, "rho_y_min": 20.0, "rho_y_max": 95.0},
    "density": {"gamma": 0.5, "margin_frac": 0.05},
    "ransac": {"iterations": 2000, "inlier_threshold_frac": 0.02, "min_inliers": 6},
    "loss": {
        "lambda_feat": 1.0,
        "lambda_regr": 50.0,
        "lambda_topo": 10.0,
        "lambda_geo": 10.0,
        "tau": 0.07,
        "huber_delta": 1.0,
        "huber_delta_struct": 0.1,
    },
    "train": {
        "lr": 1e-4,
        "clip_norm": 1.0,
        "weight_decay": 0.01,
        "steps": 500,
        "q": 256,
        "size": 512,
        "n_scenes": 4,
        "hidden": 64,
        "channels": 32,
    },
    "oracle": {"channels": 192, "bandwidth": 32.0},
    "synth": {
        "size": 256,
        "n_rooms": 4,
        "n_images": 6,
        "noise_sigma": 0.0,
        "outlier_frac": 0.0,
        "gravity_jitter_deg": 0.0,
        "points_per_image": 260,
    },
}


def _merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge_config(base[key], val, where)
        else:
            if isinstance(base[key], bool) != isinstance(val, bool) or not isinstance(
                val, (type(base[key]), int, float) if isinstance(base[key], (int, float)) else type(base[key])
            ):
                raise ConfigError(f"{where} has wrong type: {type(val).__name__}")
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge_config(DEFAULT_CONFIG, raw)


def resolve_seed(args, cfg) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("PLANEALIGN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as err:
            raise ConfigError(f"PLANEALIGN_SEED is not an integer: {env!r}") from err
    return cfg["seed"]


def _filter_params(cfg, args=None) -> FilterParams:
    f = dict(cfg["filter"])
    if args is not None:
        for flag, key in (
            ("rho_conf", "rho_conf"),
            ("rho_xz", "rho_xz"),
            ("rho_y_min", "rho_y_min"),
            ("rho_y_max", "rho_y_max"),
        ):
            val = getattr(args, flag, None)
            if val is not None:
                f[key] = val
    return FilterParams(**f)


def _localize_params(cfg, args, seed: int, filter_params=None) -> LocalizeParams:
    gamma = getattr(args, "gamma", None)
    size = getattr(args, "size", None) or cfg["grid_size"]
    return LocalizeParams(
        filter_params=filter_params or _filter_params(cfg, args),
        out_size=(size, size) if size else None,
        gamma=gamma if gamma is not None else cfg["density"]["gamma"],
        margin_frac=cfg["density"]["margin_frac"],
        n_queries=getattr(args, "queries", None) or cfg["n_queries"],
        tau=cfg["tau"],
        ransac=RansacParams(
            iterations=getattr(args, "ransac_iters", None) or cfg["ransac"]["iterations"],
            inlier_threshold=None,
            min_inliers=cfg["ransac"]["min_inliers"],
            seed=seed,
        ),
        chunk_size=getattr(args, "chunk_size", None) or cfg["chunk_size"],
        seed=seed,
    )


def build_backend(args, cfg):
    kind = args.backend
    if kind == "oracle":
        if not getattr(args, "gt_corr", None):
            raise ConfigError("oracle backend needs --gt-corr")
        doc = json.loads(Path(args.gt_corr).read_text())
        return OracleBackend(
            Sim2.from_json_dict(doc["aligned_world_to_floorplan"]),
            channels=cfg["oracle"]["channels"],
            bandwidth=cfg["oracle"]["bandwidth"],
        )
    if kind == "toy":
        if not getattr(args, "encoder", None):
            raise ConfigError("toy backend needs --encoder")
        return ToyBackend(ToyEncoder.load(args.encoder))
    if kind == "files":
        if not (getattr(args, "feat_density", None) and getattr(args, "feat_floorplan", None)):
            raise ConfigError("files backend needs --feat-density and --feat-floorplan")
        return FileBackend(args.feat_density, args.feat_floorplan)
    raise ConfigError(f"unknown backend {kind}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg) -> int:
    seed = resolve_seed(args, cfg)
    s = cfg["synth"]
    size = args.size or s["size"]
    layout = gen_layout(seed, n_rooms=args.n_rooms or s["n_rooms"], size=(size, size))
    sc = gen_scene(
        layout,
        seed=seed,
        n_images=args.n_images or s["n_images"],
        noise_sigma=args.noise_sigma if args.noise_sigma is not None else s["noise_sigma"],
        outlier_frac=args.outlier_frac if args.outlier_frac is not None else s["outlier_frac"],
        gravity_jitter_deg=(
            args.gravity_jitter if args.gravity_jitter is not None else s["gravity_jitter_deg"]
        ),
        points_per_image=s["points_per_image"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sceneio.write_scene(sc.scene, out / "scene.ply", out / "scene.json")
    sceneio.write_pgm(layout.raster, out / "floorplan.pgm", maxval=255)
    (out / "gt_corr.json").write_text(
        json.dumps(
            {
                "aligned_world_to_floorplan": sc.gt_aligned_sim2().to_json_dict(),
                "world_to_floorplan": sc.gt_world_sim2.to_json_dict(),
                "cameras": sc.camera_gt,
            },
            indent=1,
        )
    )
    # gt Sim2 for a density map built with the current config defaults.
    aligned, _ = gravity_align_scene(sc.scene)
    pts = filter_points(aligned, _filter_params(cfg))
    grid = cfg["grid_size"] or size
    dm = rasterize(pts, (grid, grid), gamma=cfg["density"]["gamma"], margin_frac=cfg["density"]["margin_frac"])
    sceneio.write_sim2(sc.gt_density_sim2(dm), out / "gt_sim2.json")
    print(f"wrote synthetic scene (seed {seed}, {sc.scene.n_images} images) to {out}")
    return 0


def cmd_density(args, cfg) -> int:
    scene = sceneio.read_scene(args.scene, args.meta)
    aligned, _ = gravity_align_scene(scene)
    pts = filter_points(aligned, _filter_params(cfg, args))
    fp_size = args.size or cfg["grid_size"]
    if not fp_size:
        raise ConfigError("density needs --size (or grid_size in the config)")
    gamma = args.gamma if args.gamma is not None else cfg["density"]["gamma"]
    dm = rasterize(pts, (fp_size, fp_size), gamma=gamma, margin_frac=cfg["density"]["margin_frac"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sceneio.write_density(dm, out, out.with_suffix(".json"))
    if args.fig:
        viz.save_density_figure(dm, args.fig)
    print(f"density map {dm.grid.shape} from {pts.shape[0]} filtered points -> {out}")
    return 0


def cmd_train(args, cfg) -> int:
    seed = resolve_seed(args, cfg)
    t = cfg["train"]
    corpus, _ = make_toy_corpus(
        seed,
        q=args.q or t["q"],
        size=args.size or t["size"],
        n_scenes=t["n_scenes"],
    )
    loss_cfg = LossConfig(**cfg["loss"])
    enc = ToyEncoder.init(seed=seed, hidden=t["hidden"], channels=t["channels"])
    steps = args.steps or t["steps"]
    log_path = args.log or (Path(args.out).with_suffix(".log.jsonl"))
    trained, log = train_toy(
        corpus,
        loss_cfg,
        steps=steps,
        seed=seed,
        lr=t["lr"],
        clip_norm=t["clip_norm"],
        weight_decay=t["weight_decay"],
        encoder=enc,
        log_path=log_path,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    trained.save(args.out)
    print(
        f"trained {steps} steps: feat {log[0]['feat']:.4f} -> {log[-1]['feat']:.4f}, "
        f"log at {log_path}"
    )
    return 0


def cmd_match(args, cfg) -> int:
    seed = resolve_seed(args, cfg)
    dm = sceneio.read_density(args.density, args.density_meta)
    floorplan = sceneio.load_floorplan(args.floorplan)
    backend = build_backend(args, cfg)
    params = _localize_params(cfg, args, seed)
    m, cs, entry = match_maps(dm, floorplan, backend, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(cs.to_json_list()))
    sceneio.write_sim2(m, out.with_name(out.stem + "_sim2.json"))
    if args.report:
        Path(args.report).write_text(json.dumps(entry, indent=1))
    if args.svg_out:
        viz.save_overlay(floorplan, dm, m, correspondences=cs, path=args.svg_out)
    print(
        f"matched: {entry['n_reliable']} reliable of {entry['n_queries']} queries, "
        f"{entry['n_inliers']} inliers; s={m.s:.4f} theta={math.degrees(m.theta):.2f}deg"
    )
    return 0


def _align_one(scene, floorplan, backend, params, out, tag, svg_out=None):
    res = localize(scene, None, floorplan, backend, params)
    sceneio.write_scene(res.scene, out / f"aligned{tag}.ply", out / f"aligned{tag}.json")
    yaws = [camera_yaw(p) for p in res.scene.poses()]
    sceneio.write_cameras_fp(res.scene.poses(), yaws, out / f"cameras{tag}.json")
    sceneio.write_sim2(res.sim2, out / f"sim2{tag}.json")
    (out / f"corr{tag}.json").write_text(json.dumps(res.correspondences.to_json_list()))
    (out / f"report{tag}.json").write_text(json.dumps(res.report, indent=1))
    sceneio.write_density(res.density, out / f"density{tag}.pgm", out / f"density{tag}.json")
    cams = [
        {"fp_pos": [p.center[0], p.center[2]], "fp_yaw": y}
        for p, y in zip(res.scene.poses(), yaws)
    ]
    fig_path = svg_out or (out / f"overlay{tag}.svg")
    viz.save_overlay(
        floorplan,
        res.density,
        res.sim2,
        correspondences=res.correspondences,
        cameras_fp=cams,
        path=fig_path,
    )
    return res


def cmd_align(args, cfg) -> int:
    seed = resolve_seed(args, cfg)
    floorplan = sceneio.load_floorplan(args.floorplan)
    backend = build_backend(args, cfg)
    params = _localize_params(cfg, args, seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = sceneio.read_scene(args.scene, args.meta)
    if args.scene2:
        # Two independent reconstructions registered to one floorplan share
        # its coordinate frame afterwards.
        res_a = _align_one(scene, floorplan, backend, params, out, "_a", args.svg_out)
        scene_b = sceneio.read_scene(args.scene2, args.meta2)
        res_b = _align_one(scene_b, floorplan, backend, params, out, "_b")
        print(
            f"aligned two scenes to {args.floorplan}: "
            f"s_a={res_a.sim2.s:.4f}, s_b={res_b.sim2.s:.4f} -> {out}"
        )
    else:
        res = _align_one(scene, floorplan, backend, params, out, "", args.svg_out)
        inl = res.report["chunks"][0]["n_inliers"]
        print(f"aligned scene ({inl} inliers) -> {out}")
    return 0


def cmd_eval(args, cfg) -> int:
    pred = sceneio.read_cameras_fp(args.cameras)
    gt_doc = json.loads(Path(args.gt_corr).read_text())
    gt = {c["image_id"]: c for c in gt_doc["cameras"]}
    floorplan = sceneio.load_floorplan(args.floorplan)
    diag = floorplan.diagonal
    yaw_errs, pos_errs = [], []
    for cam in pred:
        ref = gt.get(cam["image_id"])
        if ref is None:
            raise ParseError(f"no ground truth for image {cam['image_id']}")
        yaw_errs.append(yaw_error_deg(cam["fp_yaw"], ref["fp_yaw"]))
        pos_errs.append(
            float(np.linalg.norm(np.asarray(cam["fp_pos"]) - np.asarray(ref["fp_pos"]))) / diag
        )
    pck = rmse = None
    if args.corr and args.gt_sim2:
        pairs = json.loads(Path(args.corr).read_text())
        gt_m = sceneio.read_sim2(args.gt_sim2)
        used = [p for p in pairs if p["reliable"]] or pairs
        pd = np.array([p["pd"] for p in used])
        pf = np.array([p["pf"] for p in used])
        pck, rmse = pck_rmse(pf, sim2_apply(gt_m, pd), diag=diag)
    report = report_dict(yaw_errs, pos_errs, pck=pck, rmse=rmse)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report, indent=1))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "threshold", "value"])
        for t, v in report["angular"].items():
            writer.writerow(["angular_recall", t, v])
        for t, v in report["positional"].items():
            writer.writerow(["positional_recall", t, v])
        writer.writerow(["joint_recall", "(30,0.2)", report["joint_30deg_20pct"]])
        if pck is not None:
            for t, v in pck.items():
                writer.writerow(["pck", t, v])
            writer.writerow(["rmse", "", rmse])
    viz.save_recall_chart(report, out / "recalls.svg")
    print(
        f"joint recall @(30deg,20%): {report['joint_30deg_20pct']:.3f} "
        f"({len(pred)} cameras) -> {out}"
    )
    return 0


SWEEP_RHO_CONF = (30.0, 45.0, 60.0, 75.0, 90.0)
SWEEP_RHO_XZ = (0.0, 2.5, 5.0)
SWEEP_GAMMA = (0.25, 0.5, 0.75, 1.0)


def _sweep_cell(cell, scenes, cfg, seed, queries, ransac_iters):
    """Joint-recall success pooled over all images of all scenes for one cell."""
    rho_conf, rho_xz, gamma = cell
    yaw_errs, pos_errs, n_fail = [], [], 0
    for sc in scenes:
        diag = sc["floorplan"].diagonal
        params = LocalizeParams(
            filter_params=FilterParams(
                rho_conf=rho_conf,
                rho_xz=rho_xz,
                rho_y_min=cfg["filter"]["rho_y_min"],
                rho_y_max=cfg["filter"]["rho_y_max"],
            ),
            out_size=None,
            gamma=gamma,
            margin_frac=cfg["density"]["margin_frac"],
            n_queries=queries,
            tau=cfg["tau"],
            ransac=RansacParams(
                iterations=ransac_iters, min_inliers=cfg["ransac"]["min_inliers"], seed=seed
            ),
            chunk_size=cfg["chunk_size"],
            seed=seed,
        )
        backend = OracleBackend(
            sc["gt_aligned"], channels=cfg["oracle"]["channels"], bandwidth=cfg["oracle"]["bandwidth"]
        )
        try:
            res = localize(sc["scene"], None, sc["floorplan"], backend, params)
        except PlaneAlignError:
            n_fail += 1
            for _ in sc["gt_cameras"]:
                yaw_errs.append(180.0)
                pos_errs.append(1.0)
            continue
        gt = {c["image_id"]: c for c in sc["gt_cameras"]}
        for pose in res.scene.poses():
            ref = gt[pose.image_id]
            yaw_errs.append(yaw_error_deg(camera_yaw(pose), ref["fp_yaw"]))
            pos_errs.append(
                float(np.linalg.norm(pose.center[[0, 2]] - np.asarray(ref["fp_pos"]))) / diag
            )
    return {
        "rho_conf": rho_conf,
        "rho_xz": rho_xz,
        "gamma": gamma,
        "success_rate": joint_recall(yaw_errs, pos_errs),
        "mean_yaw_err_deg": float(np.mean(yaw_errs)),
        "mean_pos_err_frac": float(np.mean(pos_errs)),
        "n_fail": n_fail,
    }


def _load_sweep_scenes(scenes_dir: Path) -> list[dict]:
    scenes = []
    for sub in sorted(p for p in scenes_dir.iterdir() if p.is_dir()):
        gt_doc = json.loads((sub / "gt_corr.json").read_text())
        scenes.append(
            {
                "scene": sceneio.read_scene(sub / "scene.ply", sub / "scene.json"),
                "floorplan": sceneio.load_floorplan(sub / "floorplan.pgm"),
                "gt_aligned": Sim2.from_json_dict(gt_doc["aligned_world_to_floorplan"]),
                "gt_cameras": gt_doc["cameras"],
            }
        )
    if not scenes:
        raise ParseError(f"no scene directories under {scenes_dir}")
    return scenes


def cmd_sweep(args, cfg) -> int:
    seed = resolve_seed(args, cfg)
    scenes = _load_sweep_scenes(Path(args.scenes_dir))
    queries = args.queries or cfg["n_queries"]
    iters = args.ransac_iters or cfg["ransac"]["iterations"]
    cells = [(c, x, g) for c in SWEEP_RHO_CONF for x in SWEEP_RHO_XZ for g in SWEEP_GAMMA]
    rows = []
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_sweep_cell, cell, scenes, cfg, seed, queries, iters)
                for cell in cells
            ]
            rows = [f.result() for f in futures]
    else:
        for cell in cells:
            rows.append(_sweep_cell(cell, scenes, cfg, seed, queries, iters))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(rows, indent=1))
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    viz.save_sweep_heatmap(rows, out / "sweep.svg")
    rates = [r["success_rate"] for r in rows]
    print(
        f"sweep over {len(rows)} cells x {len(scenes)} scenes: "
        f"success {min(rates):.3f}..{max(rates):.3f} -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planealign",
        description="Align reconstructed 3D scenes to rasterized floorplans.",
    )
    parser.add_argument("--config", help="JSON config file (defaults + overrides)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--n-rooms", type=int, dest="n_rooms")
    p.add_argument("--n-images", type=int, dest="n_images")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--outlier-frac", type=float, dest="outlier_frac")
    p.add_argument("--gravity-jitter-deg", type=float, dest="gravity_jitter")

    p = sub.add_parser("density", help="filter a scene and rasterize the density map")
    p.add_argument("--scene", required=True, help="PLY point cloud")
    p.add_argument("--meta", required=True, help="scene sidecar JSON")
    p.add_argument("--out", required=True, help="output PGM path (sidecar JSON alongside)")
    p.add_argument("--size", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--rho-conf", type=float, dest="rho_conf")
    p.add_argument("--rho-xz", type=float, dest="rho_xz")
    p.add_argument("--rho-y-min", type=float, dest="rho_y_min")
    p.add_argument("--rho-y-max", type=float, dest="rho_y_max")
    p.add_argument("--fig", help="optional density figure output")

    p = sub.add_parser("train", help="train the toy encoder on a synthetic corpus")
    p.add_argument("--out", required=True, help="encoder .npz output")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--log", help="JSONL training log path")

    def add_backend_flags(p):
        p.add_argument("--backend", choices=("oracle", "toy", "files"), default="oracle")
        p.add_argument("--gt-corr", dest="gt_corr", help="gt_corr.json (oracle backend)")
        p.add_argument("--encoder", help="encoder .npz (toy backend)")
        p.add_argument("--feat-density", dest="feat_density", help="FMAP file (files backend)")
        p.add_argument("--feat-floorplan", dest="feat_floorplan", help="FMAP file (files backend)")
        p.add_argument("--queries", type=int)
        p.add_argument("--ransac-iters", type=int, dest="ransac_iters")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("match", help="match a density map to a floorplan")
    p.add_argument("--density", required=True, help="density PGM")
    p.add_argument("--density-meta", dest="density_meta", required=True)
    p.add_argument("--floorplan", required=True)
    p.add_argument("--out", required=True, help="correspondence JSON output")
    p.add_argument("--report", help="report JSON output")
    p.add_argument("--svg-out", dest="svg_out", help="overlay figure output")
    add_backend_flags(p)

    p = sub.add_parser("align", help="full localization of one or two scenes")
    p.add_argument("--scene", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--scene2", help="second scene PLY (disjoint/interior-exterior)")
    p.add_argument("--meta2", help="second scene sidecar JSON")
    p.add_argument("--floorplan", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--size", type=int, help="density raster size")
    p.add_argument("--gamma", type=float)
    p.add_argument("--chunk-size", type=int, dest="chunk_size")
    p.add_argument("--svg-out", dest="svg_out")
    add_backend_flags(p)

    p = sub.add_parser("eval", help="score aligned cameras (and correspondences)")
    p.add_argument("--cameras", required=True, help="cameras_fp.json from align")
    p.add_argument("--gt-corr", dest="gt_corr", required=True)
    p.add_argument("--floorplan", required=True)
    p.add_argument("--corr", help="correspondence JSON for PCK/RMSE")
    p.add_argument("--gt-sim2", dest="gt_sim2", help="gt density->floorplan Sim2 JSON")
    p.add_argument("--out-dir", dest="out_dir", required=True)

    p = sub.add_parser("sweep", help="density-map hyperparameter grid evaluation")
    p.add_argument("--scenes-dir", dest="scenes_dir", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--queries", type=int)
    p.add_argument("--ransac-iters", type=int, dest="ransac_iters")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "density": cmd_density,
    "train": cmd_train,
    "match": cmd_match,
    "align": cmd_align,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ParseError, FeatureFileError, FileNotFoundError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return 3
    except NoConsensus as err:
        print(f"alignment failed: {err} (best inlier count {err.best_count})", file=sys.stderr)
        return 4
    except PlaneAlignError as err:
        print(f"pipeline error: {type(err).__name__}: {err}", file=sys.stderr)
        return 5
    except Exception:
        traceback.print_exc()
        return 5


if __name__ == "__main__":
    sys.exit(main())
