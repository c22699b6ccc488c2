# "cli.py" from libRDGSPy by NinjaCheetah & Contributors
#
# The rdgs command line: scene generation, fitting, compression and the size/quality reports.

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .codec import CompressedScene, decode, encode_model
from .crypto import bitstream_digest
from .errors import UsageError
from .gaussians import GaussianCloud, PARAMS_PER_GAUSSIAN, load_ply, save_ply
from .image import write_image
from .pruning import prune_ratios
from .renderer import render
from .report import composition_rows, ladder_rows, rd_svg, write_csv
from .scene import Dataset, make_desk_scene, orbit_cameras
from .trainer import (SWEEP_PRESETS, TrainConfig, TrainingLog, evaluate, load_checkpoint, load_config, pretrain,
                      rd_train, save_checkpoint, sizes_shrink_with_lambda)
from .types import Camera

log = logging.getLogger(__name__)

COMPRESS_COLUMNS = ["input", "output", "gaussians_in", "gaussians_out", "input_bytes", "size_bytes", "ratio",
                    "bits_per_gaussian", "psnr", "ssim", "gaussian_prune_ratio", "sh_prune_ratio", "digest",
                    "offset_x", "offset_y", "offset_z"]
SWEEP_COLUMNS = ["lambda_gs_prune", "lambda_sh_prune", "size_bytes", "rate_mb", "psnr", "ssim", "gaussians",
                 "gaussian_prune_ratio", "sh_prune_ratio", "bits_per_gaussian", "digest"]
REPORT_COLUMNS = ["section", "category", "bytes", "proportion"]
EVAL_COLUMNS = ["model", "views", "psnr", "ssim", "l1"]


def _require_file(path: str, what: str) -> None:
    if not path:
        raise UsageError("No " + what + " given.")
    if not os.path.exists(path):
        raise UsageError("The " + what + " '" + path + "' does not exist.")


def _make_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _config(args) -> TrainConfig:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    for key in ("pretrain_iters", "rd_iters", "lambda_gs_prune", "lambda_sh_prune"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return dataclasses.replace(config, **overrides) if overrides else config


def _load_model(path: str) -> GaussianCloud:
    _require_file(path, "model")
    if path.lower().endswith(".grdo"):
        with open(path, "rb") as grdo_file:
            return decode(grdo_file.read())
    return load_ply(path)


def _load_scene(path: str) -> tuple[bytes, CompressedScene]:
    _require_file(path, "bitstream")
    with open(path, "rb") as grdo_file:
        data = grdo_file.read()
    scene = CompressedScene()
    scene.load(data)
    return data, scene


def _load_dataset(path: str) -> Dataset:
    _require_file(path, "dataset")
    return Dataset.load(path)


def _compress_model(cloud: GaussianCloud, masks, bank, dataset: Dataset, config: TrainConfig, recenter: bool) -> dict:
    cloud, masks, bank = rd_train(cloud, dataset, config, masks, bank)
    result = encode_model(cloud, masks, bank, config.position_tolerance, recenter, config.raster_settings().threads)
    decoded = decode(result.data)
    scores = evaluate(decoded, dataset.test_views(), settings=config.raster_settings())
    gaussian_ratio, sh_ratio = prune_ratios(masks)
    return {"result": result, "masks": masks, "bank": bank, "cloud": cloud, "psnr": scores["psnr"],
            "ssim": scores["ssim"], "gaussian_prune_ratio": gaussian_ratio, "sh_prune_ratio": sh_ratio,
            "digest": bitstream_digest(result.data)}


def _parse_grid(text: str) -> list[tuple[float, float]]:
    grid = []
    for point in text.split(","):
        point = point.strip()
        if not point:
            continue
        try:
            lambda_gs, lambda_sh = (float(value) for value in point.split(":"))
        except ValueError:
            raise UsageError("Grid points are written 'lambda_gs:lambda_sh', got '" + point + "'.")
        grid.append((lambda_gs, lambda_sh))
    return grid


def cmd_gen_scene(args) -> None:
    config = _config(args)
    if not args.out:
        raise UsageError("gen-scene needs --out.")
    cloud = make_desk_scene(args.clusters, args.per_cluster, config.seed)
    cameras = orbit_cameras(config.views, args.radius, config.width, config.height, seed=config.seed)
    dataset = Dataset.from_cloud(cloud, cameras, config.raster_settings())
    os.makedirs(args.out, exist_ok=True)
    save_ply(cloud.astype(np.float32), os.path.join(args.out, "scene.ply"))
    dataset.save(os.path.join(args.out, "dataset"))
    log.info("Wrote a %d-Gaussian scene and %d views to %s", cloud.count, len(dataset), args.out)


def cmd_fit(args) -> None:
    config = _config(args)
    dataset = _load_dataset(args.dataset)
    init = None
    if args.init:
        _require_file(args.init, "initial model")
        init = load_ply(args.init)
    if not args.out:
        raise UsageError("fit needs --out.")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as config_file:
        config_file.write(config.dump())
    training_log = TrainingLog(os.path.join(args.out, "train_log.csv"))
    try:
        cloud = pretrain(dataset, config, init, training_log, progress=not args.quiet)
    finally:
        training_log.close()
    save_ply(cloud.astype(np.float32), os.path.join(args.out, "model.ply"))
    scores = evaluate(cloud, dataset.test_views(), settings=config.raster_settings())
    log.info("Fitted model: PSNR %.3f dB, SSIM %.4f", scores["psnr"], scores["ssim"])


def cmd_compress(args) -> None:
    config = _config(args)
    _require_file(args.input, "input model")
    dataset = _load_dataset(args.dataset)
    if not args.out:
        raise UsageError("compress needs --out.")
    prefix = os.path.splitext(args.input)[0]
    cloud, masks, bank = load_checkpoint(prefix) if args.input.lower().endswith(".ply") else \
        (load_ply(args.input), None, None)
    input_bytes = os.path.getsize(args.input)
    _make_parent(args.out)
    outcome = _compress_model(cloud, masks, bank, dataset, config, args.recenter)
    result = outcome["result"]
    with open(args.out, "wb") as grdo_file:
        grdo_file.write(result.data)
    if args.checkpoint:
        save_checkpoint(os.path.splitext(args.out)[0] + "_rd", outcome["cloud"], outcome["masks"], outcome["bank"])
    row = {"input": args.input, "output": args.out, "gaussians_in": cloud.count, "gaussians_out": result.scene.count,
           "input_bytes": input_bytes, "size_bytes": len(result.data),
           "ratio": input_bytes / len(result.data), "bits_per_gaussian": result.scene.bits_per_gaussian(),
           "psnr": outcome["psnr"], "ssim": outcome["ssim"],
           "gaussian_prune_ratio": outcome["gaussian_prune_ratio"], "sh_prune_ratio": outcome["sh_prune_ratio"],
           "digest": outcome["digest"], "offset_x": float(result.offset[0]), "offset_y": float(result.offset[1]),
           "offset_z": float(result.offset[2])}
    write_csv(os.path.splitext(args.out)[0] + ".csv", COMPRESS_COLUMNS, [row])
    log.info("Compressed %s to %d bytes (%.1fx), PSNR %.3f dB", args.input, len(result.data), row["ratio"],
             outcome["psnr"])


def cmd_decompress(args) -> None:
    data, scene = _load_scene(args.input)
    if not args.out:
        raise UsageError("decompress needs --out.")
    cloud = scene.to_cloud()
    _make_parent(args.out)
    save_ply(cloud, args.out)
    log.info("Decoded %d Gaussians from %s", cloud.count, args.input)


def cmd_render(args) -> None:
    config = _config(args)
    cloud = _load_model(args.model)
    _require_file(args.camera, "camera file")
    with open(args.camera) as camera_file:
        try:
            data = json.load(camera_file)
        except json.JSONDecodeError as e:
            raise ValueError("The camera file is not valid JSON: " + str(e)) from e
    if "views" in data:
        if not 0 <= args.view < len(data["views"]):
            raise UsageError("View " + str(args.view) + " is out of range for a dataset of " +
                             str(len(data["views"])) + " views.")
        data = data["views"][args.view]["camera"]
    camera = Camera.from_dict(data)
    if not args.out:
        raise UsageError("render needs --out.")
    image, _ = render(cloud.astype(np.float64), camera, settings=config.raster_settings())
    _make_parent(args.out)
    write_image(image.clamped(), args.out)


def cmd_eval(args) -> None:
    config = _config(args)
    cloud = _load_model(args.model)
    dataset = _load_dataset(args.dataset)
    views = {"test": dataset.test_views(), "train": dataset.train_views(), "all": dataset.views}[args.split]
    scores = evaluate(cloud, views, settings=config.raster_settings())
    row = {"model": args.model, "views": len(views), **scores}
    if args.out:
        _make_parent(args.out)
    print(write_csv(args.out, EVAL_COLUMNS, [row]), end="")


def cmd_sweep(args) -> None:
    config = _config(args)
    grid = SWEEP_PRESETS[args.preset] if args.preset else _parse_grid(args.grid or "")
    if len(grid) < 2:
        raise UsageError("A sweep needs at least two grid points, got " + str(len(grid)) + ".")
    _require_file(args.input, "input model")
    dataset = _load_dataset(args.dataset)
    if not args.out:
        raise UsageError("sweep needs --out.")
    prefix = os.path.splitext(args.input)[0]
    cloud, masks, bank = load_checkpoint(prefix) if args.input.lower().endswith(".ply") else \
        (load_ply(args.input), None, None)
    _make_parent(args.out)
    points = []
    # Rows are flushed as they complete so a failing point leaves the finished ones on disk.
    with open(args.out, "w", newline="") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        csv_file.flush()
        for lambda_gs, lambda_sh in grid:
            log.info("Sweep point lambda_gs=%g lambda_sh=%g", lambda_gs, lambda_sh)
            point_config = dataclasses.replace(config, lambda_gs_prune=lambda_gs, lambda_sh_prune=lambda_sh)
            outcome = _compress_model(cloud.copy(), masks.copy() if masks else None, bank.copy() if bank else None,
                                      dataset, point_config, args.recenter)
            result = outcome["result"]
            writer.writerow({"lambda_gs_prune": lambda_gs, "lambda_sh_prune": lambda_sh,
                             "size_bytes": len(result.data), "rate_mb": len(result.data) / 1e6,
                             "psnr": outcome["psnr"], "ssim": outcome["ssim"], "gaussians": result.scene.count,
                             "gaussian_prune_ratio": outcome["gaussian_prune_ratio"],
                             "sh_prune_ratio": outcome["sh_prune_ratio"],
                             "bits_per_gaussian": result.scene.bits_per_gaussian(), "digest": outcome["digest"]})
            csv_file.flush()
            points.append((len(result.data) / 1e6, outcome["psnr"]))
    sizes = [point[0] for point in points]
    if not sizes_shrink_with_lambda(grid, sizes):
        log.warning("Sweep sizes do not shrink strictly as the lambdas grow: %s", sizes)
    if args.svg:
        _make_parent(args.svg)
        rd_svg(points, args.svg)


def cmd_report(args) -> None:
    data, scene = _load_scene(args.input)
    rows = composition_rows(scene.composition(), "composition")
    rows += composition_rows(scene.index_composition(), "indexes")
    if scene.size() != len(data):
        raise ValueError("Composition adds up to " + str(scene.size()) + " bytes but the file has " +
                         str(len(data)) + ".")
    if args.savings:
        original_count = args.original_count
        if args.original:
            _require_file(args.original, "original model")
            original_count = load_ply(args.original).count
        if original_count is None:
            raise UsageError("report --savings needs --original or --original-count.")
        rows += ladder_rows(scene.bitrate_ladder(original_count))
        log.debug("Raw model: %d bytes", original_count * PARAMS_PER_GAUSSIAN * 4)
    if args.out:
        _make_parent(args.out)
    print(write_csv(args.out, REPORT_COLUMNS, rows), end="")
    log.info("%d Gaussians, %.2f bits per Gaussian", scene.count, scene.bits_per_gaussian())


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat 'key = value' training config")
    shared.add_argument("--seed", type=int, help="overrides the config seed")
    shared.add_argument("--out", help="output path")
    shared.add_argument("--threads", type=int, help="worker threads (defaults to RDGS_THREADS or 1)")
    shared.add_argument("-d", "--debug", action="store_true")

    ap = argparse.ArgumentParser(prog="rdgs", description="Rate-distortion optimized Gaussian splat compression")
    commands = ap.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-scene", parents=[shared], help="generate a synthetic desk scene and its views")
    p.add_argument("--clusters", type=int, default=6)
    p.add_argument("--per-cluster", type=int, default=40)
    p.add_argument("--radius", type=float, default=3.0)
    p.set_defaults(func=cmd_gen_scene)

    p = commands.add_parser("fit", parents=[shared], help="fit Gaussians to a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--init", help="initial PLY (random when omitted)")
    p.add_argument("--pretrain-iters", dest="pretrain_iters", type=int)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_fit)

    for name, func, help_text in (("compress", cmd_compress, "RD-train a fitted model and encode it"),
                                  ("sweep", cmd_sweep, "compress at several rate points")):
        p = commands.add_parser(name, parents=[shared], help=help_text)
        p.add_argument("--input", required=True, help="fitted PLY; a .npz sidecar with masks and codebooks is used "
                                                      "when present")
        p.add_argument("--dataset", required=True)
        p.add_argument("--rd-iters", dest="rd_iters", type=int)
        p.add_argument("--recenter", action="store_true", help="subtract the mean position before the f16 cast")
        p.set_defaults(func=func)
    commands.choices["compress"].add_argument("--lambda-gs", dest="lambda_gs_prune", type=float)
    commands.choices["compress"].add_argument("--lambda-sh", dest="lambda_sh_prune", type=float)
    commands.choices["compress"].add_argument("--checkpoint", action="store_true",
                                              help="also save the RD-trained model, masks and codebooks")
    grid = commands.choices["sweep"].add_mutually_exclusive_group(required=True)
    grid.add_argument("--preset", choices=sorted(SWEEP_PRESETS))
    grid.add_argument("--grid", help="comma separated lambda_gs:lambda_sh pairs")
    commands.choices["sweep"].add_argument("--svg", help="also plot the RD curve")

    p = commands.add_parser("decompress", parents=[shared], help="decode a bitstream into a PLY")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_decompress)

    p = commands.add_parser("render", parents=[shared], help="render a model from a camera")
    p.add_argument("--model", required=True, help="PLY or GRDO")
    p.add_argument("--camera", required=True, help="camera JSON, or a dataset cameras.json")
    p.add_argument("--view", type=int, default=0, help="view index when --camera is a dataset")
    p.set_defaults(func=cmd_render)

    p = commands.add_parser("eval", parents=[shared], help="measure PSNR/SSIM of a model")
    p.add_argument("--model", required=True, help="PLY or GRDO")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("report", parents=[shared], help="break a bitstream down by size")
    p.add_argument("--input", required=True)
    p.add_argument("--savings", action="store_true", help="also print the per-stage bitrate ladder")
    p.add_argument("--original", help="the uncompressed PLY, for --savings")
    p.add_argument("--original-count", dest="original_count", type=int)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    """
    Runs one rdgs command.

    Returns
    -------
    int
        0 on success, 1 on a runtime error, 2 on a usage error.
    """
    logging.basicConfig()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
    else:
        logging.getLogger().setLevel(logging.INFO)
    try:
        args.func(args)
    except UsageError as e:
        print("rdgs " + args.command + ": " + str(e), file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        log.debug("Command failed", exc_info=True)
        print("rdgs " + args.command + ": " + str(e), file=sys.stderr)
        return 1
    return 0
