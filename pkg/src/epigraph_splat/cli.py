"""Command-line interface.

Commands write their artifacts into ``--out`` (default ``out``) and echo the
JSON report on stdout.  Failures exit nonzero with a single stderr line
``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import attention, graph, io, kernels, losses, synthetic
from .config import RunConfig, load_config
from .epipolar import TriangulatedPoint, build_point_cloud
from .errors import EmptyCloudError, EpigraphError

ANGLE_BINS = 18
PERCENTILES = (50, 90, 99)

PLY_NAME = "points.ply"
TRIANGULATE_JSON = "triangulate.json"
GRAPH_JSON = "graph_stats.json"
FEATURES_BIN = "features.bin"
REFINE_JSON = "refine_features.json"
LOSS_JSON = "loss.json"


def _percentiles(values) -> dict[str, float | None]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {f"p{p}": None for p in PERCENTILES}
    return {f"p{p}": float(np.percentile(values, p)) for p in PERCENTILES}


@dataclass
class TriangulationResult:
    points: list[TriangulatedPoint]
    report: dict

    @property
    def inliers(self) -> list[TriangulatedPoint]:
        return [p for p in self.points if p.inlier]


def cmd_triangulate(bundle: io.SceneBundle, config: RunConfig, out_dir=None) -> TriangulationResult:
    if len(bundle.views) < 2:
        raise EpigraphError("triangulation needs at least two views")
    points = build_point_cloud(bundle.correspondences, bundle.view_table, config.sampson_threshold)
    inl = [p for p in points if p.inlier]
    pos = np.array([p.position for p in inl]).reshape(-1, 3)
    rmse = np.array([p.reprojection_rmse for p in inl])
    report = {
        "correspondences": len(points),
        "inliers": len(inl),
        "outliers": len(points) - len(inl),
        "sampson_threshold": config.sampson_threshold,
        "residual_percentiles": _percentiles(rmse),
        "sampson_percentiles": _percentiles([p.sampson_residual for p in points]),
        "ply": PLY_NAME,
    }
    if out_dir is not None:
        io.write_ply(Path(out_dir) / PLY_NAME, pos, rmse)
    return TriangulationResult(points, report)


def auto_voxel_size(points) -> float:
    """Four times the median nearest-neighbor spacing of the inlier points."""
    pos = np.array([p.position for p in points if p.inlier]).reshape(-1, 3)
    if len(pos) < 2:
        raise EmptyCloudError("need at least two inlier points to pick a voxel size")
    nn = kernels.knn_bruteforce(pos, 1)[:, 0]
    spacing = float(np.median(np.linalg.norm(pos[nn] - pos, axis=1)))
    if spacing <= 0:
        raise EmptyCloudError("inlier points coincide; cannot pick a voxel size")
    return 4.0 * spacing


@dataclass
class GraphResult:
    anchors: list[graph.Anchor]
    graph: graph.AnchorGraph
    voxel_size: float
    report: dict


def build_graph(points, config: RunConfig) -> GraphResult:
    eps = config.voxel_size if config.voxel_size is not None else auto_voxel_size(points)
    vcfg = graph.VoxelConfig(eps)
    anchors = graph.voxelize(points, vcfg, config.feature_dim, config.seed)
    g = graph.build_anchor_graph(anchors, config.k)
    pos = g.positions
    dist = np.linalg.norm(pos[g.neighbor_index] - pos[:, None, :], axis=-1)
    counts, edges = np.histogram(g.angles, bins=ANGLE_BINS, range=(0.0, np.pi))
    occupancy = graph.voxel_occupancy(points, vcfg)
    report = {
        "anchor_count": len(anchors),
        "k": config.k,
        "voxel_size": eps,
        "neighbor_distance": {"mean": float(dist.mean()), "max": float(dist.max())},
        "nearest_neighbor_distance": {
            "min": float(dist[:, 0].min()),
            "median": float(np.median(dist[:, 0])),
            "max": float(dist[:, 0].max()),
        },
        "angle_histogram": {"bin_edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
        "voxel_occupancy": {
            "occupied_voxels": int(len(occupancy)),
            "points": int(occupancy.sum()),
            "min": int(occupancy.min()),
            "mean": float(occupancy.mean()),
            "max": int(occupancy.max()),
        },
    }
    return GraphResult(anchors, g, eps, report)


def cmd_graph_stats(bundle: io.SceneBundle, config: RunConfig) -> GraphResult:
    tri = cmd_triangulate(bundle, config)
    return build_graph(tri.points, config)


def refine_features(gres: GraphResult, config: RunConfig, check_grads: bool = False):
    g = gres.graph
    agg = graph.aggregate_features(g.features, g.neighbor_index)
    enc = graph.encode_angles(g.angles, config.L_encoding)
    acfg = attention.AttentionConfig(
        heads=config.heads,
        model_dim=config.model_dim,
        input_dim=agg.values.shape[-1],
        encoding_dim=enc.values.shape[-1],
        seed=config.seed,
    )
    params = attention.init_params(acfg)
    refined = attention.attention_forward(agg, enc, params)
    M, D = refined.values.shape
    report = {
        "anchors": M,
        "model_dim": D,
        "heads": config.heads,
        "feature_dim": config.feature_dim,
        "encoding_frequencies": config.L_encoding,
        "k": g.k,
        "dump": FEATURES_BIN,
        "dump_bytes": io.DUMP_HEADER.size + M * D * 8,
    }
    if check_grads:
        rng = np.random.default_rng(config.seed)
        upstream = rng.standard_normal((M, D))
        # non-zero angular weights so the w_theta path is exercised
        probe = params.replace(w_theta=0.1 * rng.standard_normal(params.w_theta.shape))
        errs = attention.gradient_check(agg, enc, probe, upstream)
        report["grad_check"] = {"max_relative_error": errs.pop("max"), "per_tensor": errs, "step": 1e-5}
    return refined, report


def cmd_refine_features(bundle: io.SceneBundle, config: RunConfig, out_dir=None, check_grads=False):
    gres = cmd_graph_stats(bundle, config)
    refined, report = refine_features(gres, config, check_grads)
    if out_dir is not None:
        io.atomic_write(Path(out_dir) / FEATURES_BIN, io.encode_feature_dump(refined.values))
    return refined, report


def cmd_loss(image1_path, image2_path, config: RunConfig, scales_path=None, scales=None) -> dict:
    a = io.load_image(image1_path)
    b = io.load_image(image2_path)
    if scales_path is not None:
        scales = io.read_scales(scales_path)
    if scales is None:
        scales = np.zeros((0, 3))
    rep = losses.total_loss(
        losses.Image(a),
        losses.Image(b),
        scales,
        config.loss_weights,
        ncc_window=config.ncc_window,
        pyramid_levels=config.pyramid_levels,
    )
    out = rep.as_dict()
    out["weights"] = {
        "lambda_ssim": config.lambda_ssim,
        "lambda_vol": config.lambda_vol,
        "lambda_laplacian": config.lambda_laplacian,
        "lambda_ncc": config.lambda_ncc,
    }
    out["scale_count"] = int(len(scales))
    return out


def write_synthetic_scene(out_dir) -> dict[str, str]:
    """Write the bundled grid scene (cameras, matches, config, two images)."""
    out = Path(out_dir)
    views, matches, _ = synthetic.grid_scene()
    io.atomic_write(out / "cameras.txt", io.format_cameras(views))
    io.atomic_write(out / "matches.txt", io.format_matches(matches))
    io.write_json(out / "config.json", {"voxel_size": 0.5, "k": 10, "seed": 42})
    rng = np.random.default_rng(7)
    img = synthetic.texture_image(rng)
    io.save_image(out / "image_a.ppm", img)
    io.save_image(out / "image_b.ppm", 0.5 * img)
    return {name: str(out / name) for name in ("cameras.txt", "matches.txt", "config.json", "image_a.ppm", "image_b.ppm")}


def bundled_scene_dir() -> Path:
    return Path(str(resources.files("epigraph_splat") / "data" / "grid27"))


# ---------------------------------------------------------------- argparse


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file with RunConfig keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--sampson-threshold", type=float)
    p.add_argument("--voxel-size", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--timing", action="store_true", help="add wall-clock runtime to the JSON reports")


def _add_scene(p):
    p.add_argument("cameras", type=Path)
    p.add_argument("matches", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epigraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("triangulate", help="triangulate matches into an ASCII PLY")
    _add_scene(p)
    _add_common(p)

    p = sub.add_parser("graph-stats", help="voxel anchors and k-NN graph statistics")
    _add_scene(p)
    _add_common(p)

    p = sub.add_parser("refine-features", help="run angle-biased attention and dump features")
    _add_scene(p)
    _add_common(p)
    p.add_argument("--check-grads", action="store_true")

    p = sub.add_parser("loss", help="evaluate the loss suite on an image pair")
    p.add_argument("image1", type=Path)
    p.add_argument("image2", type=Path)
    p.add_argument("--scales", type=Path, help="text file with one 'sx sy sz' per line")
    _add_common(p)

    p = sub.add_parser("pipeline", help="all stages in sequence")
    _add_scene(p)
    _add_common(p)
    p.add_argument("--check-grads", action="store_true")
    p.add_argument("--image1", type=Path)
    p.add_argument("--image2", type=Path)

    p = sub.add_parser("synth", help="write the bundled 27-point grid scene")
    p.add_argument("--out", type=Path, default=Path("scene"))
    return parser


def _config_from_args(args) -> RunConfig:
    return load_config(
        args.config,
        seed=args.seed,
        sampson_threshold=args.sampson_threshold,
        voxel_size=args.voxel_size,
        k=args.k,
    )


def _emit(out_dir: Path, name: str, report: dict, started: float | None, echo: dict):
    if started is not None:
        report = {**report, "runtime_s": time.perf_counter() - started}
    io.write_json(out_dir / name, report)
    echo[name] = report


def run(args) -> dict:
    if args.command == "synth":
        return write_synthetic_scene(args.out)

    config = _config_from_args(args)
    out = args.out
    echo: dict = {}

    def clock():
        return time.perf_counter() if args.timing else None

    if args.command == "loss":
        t0 = clock()
        _emit(out, LOSS_JSON, cmd_loss(args.image1, args.image2, config, args.scales), t0, echo)
        return echo

    bundle = io.parse_scene(args.cameras, args.matches)
    t0 = clock()
    tri = cmd_triangulate(bundle, config, out if args.command in ("triangulate", "pipeline") else None)
    if args.command == "triangulate":
        _emit(out, TRIANGULATE_JSON, tri.report, t0, echo)
        return echo
    t1 = clock()
    gres = build_graph(tri.points, config)
    if args.command == "graph-stats":
        _emit(out, GRAPH_JSON, gres.report, t0, echo)
        return echo
    if args.command == "pipeline":
        _emit(out, TRIANGULATE_JSON, tri.report, t0, echo)
        _emit(out, GRAPH_JSON, gres.report, t1, echo)
    t2 = clock()
    refined, rep = refine_features(gres, config, args.check_grads)
    io.atomic_write(out / FEATURES_BIN, io.encode_feature_dump(refined.values))
    _emit(out, REFINE_JSON, rep, t2 if args.command == "pipeline" else t0, echo)
    if args.command == "pipeline" and args.image1 is not None and args.image2 is not None:
        t3 = clock()
        scales = np.stack([a.scale for a in gres.anchors])
        _emit(out, LOSS_JSON, cmd_loss(args.image1, args.image2, config, scales=scales), t3, echo)
    return echo


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = run(args)
    except EpigraphError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {exc.category}: {msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    sys.stdout.write(io.dumps_json(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
