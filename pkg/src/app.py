"""
bevlift - command-line front end for the image-to-BEV toolkit.

Every numeric flag defaults from `Settings`, so values resolve as
flags > environment > config file > defaults.
"""

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence
import logging

import numpy as np
from pydantic import ValidationError

from src.config.settings import Settings, configure_logging, load_settings
from src.services.depth_labels import (
    foreground_mask,
    generate_labels,
    read_boxes_csv,
    read_velodyne,
    write_velodyne,
)
from src.services.diagnostics import entropy_report, run_gradcheck_suite
from src.services.discretization import DiscretizationSpec, describe, discretization_table
from src.services.frustum_lift import (
    argmax_one_hot,
    drop_overflow_bin,
    lift_with_mode,
    softmax_normalize,
)
from src.services.geometry import (
    CameraCalibration,
    GridSpec,
    canonical_calibration,
    format_kitti_calibration,
    load_kitti_calibration,
    load_rigid_transform,
    sensor_to_camera_axes,
)
from src.services.grid_transform import channel_reduce, collapse_to_bev, frustum_to_voxel
from src.services.losses import LossWeights, depth_loss
from src.services.pipeline import run_pipeline, uniform_reduce_weights
from src.services.synthetic import random_scene, synth_scene
from src.utils.cache import SamplingCache
from src.utils.constants import (
    DISCRETIZE_CSV_HEADER,
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_SUCCESS,
    LiftMode,
    SamplingMode,
    get_grid_ranges,
)
from src.utils.tensor_io import read_tensor, write_tensor
from src.utils.validators import (
    BevLiftError,
    ConfigurationError,
    GradientCheckFailed,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Settings], int]


# ---------------------------------------------------------------------------
# Settings-backed builders
# ---------------------------------------------------------------------------

def build_discretization(cfg: Settings, num_bins: Optional[int] = None) -> DiscretizationSpec:
    """Discretization spec from settings, optionally overriding D."""
    return DiscretizationSpec(
        mode=cfg.discretization_mode.upper(),
        d_min=cfg.d_min,
        d_max=cfg.d_max,
        num_bins=num_bins or cfg.num_bins,
        overflow_bin=cfg.overflow_bin,
    )


def build_grid(cfg: Settings, preset: Optional[str] = None) -> GridSpec:
    """Grid from a named preset or from the configured ranges."""
    try:
        ranges = get_grid_ranges(preset) if preset else cfg.get_ranges()
    except KeyError as e:
        raise ConfigurationError(str(e)) from None
    x_range, y_range, z_range = ranges
    return GridSpec(
        x_range=x_range,
        y_range=y_range,
        z_range=z_range,
        voxel_size=cfg.get_voxel_size(),
    )


def build_calibration(args: argparse.Namespace, cfg: Settings) -> CameraCalibration:
    """Calibration from a KITTI file, or a canonical pinhole camera."""
    if getattr(args, "calib", None):
        return load_kitti_calibration(
            args.calib,
            image_width=cfg.image_width,
            image_height=cfg.image_height,
            feature_downsample=cfg.feature_downsample,
            key=cfg.calib_key,
            sensor_frame=args.sensor_frame,
        )
    extrinsic = sensor_to_camera_axes() if args.sensor_frame else None
    return canonical_calibration(
        args.focal,
        cfg.image_width,
        cfg.image_height,
        cfg.feature_downsample,
        extrinsic=extrinsic,
    )


def build_cache(cfg: Settings) -> SamplingCache:
    return SamplingCache(max_size=cfg.cache_max_size, enabled=cfg.cache_enabled)


def loss_weights(cfg: Settings) -> LossWeights:
    return LossWeights(
        alpha_fg=cfg.alpha_fg,
        alpha_bg=cfg.alpha_bg,
        gamma=cfg.gamma,
        lambda_depth=cfg.lambda_depth,
        lambda_cls=cfg.lambda_cls,
        lambda_reg=cfg.lambda_reg,
        lambda_dir=cfg.lambda_dir,
    )


def _write_text(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text)
        logger.info(f"Wrote {output}")
    else:
        sys.stdout.write(text)


def _depth_distribution(logits: np.ndarray, cfg: Settings, lift_mode: LiftMode) -> np.ndarray:
    """Softmax, optional argmax, then the overflow bin is dropped."""
    dist = softmax_normalize(logits)
    if lift_mode == LiftMode.ARGMAX:
        dist = argmax_one_hot(dist)
    if cfg.overflow_bin:
        dist = drop_overflow_bin(dist, dist.shape[-1] - 1)
    return dist


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_discretize(args: argparse.Namespace, cfg: Settings) -> int:
    """Emit the bin table as CSV."""
    spec = build_discretization(cfg)
    logger.info(f"Discretization: {describe(spec)}")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(DISCRETIZE_CSV_HEADER)
    for row in discretization_table(spec):
        writer.writerow(
            [row["index"], f"{row['edge']:.12g}", f"{row['center']:.12g}", f"{row['width']:.12g}"]
        )
    _write_text(buffer.getvalue(), args.output)
    return EXIT_SUCCESS


def cmd_lift(args: argparse.Namespace, cfg: Settings) -> int:
    """Logits + features -> frustum tensor."""
    logits = read_tensor(args.logits)
    features = read_tensor(args.features)
    lift_mode = LiftMode(args.lift_mode)
    dist = _depth_distribution(logits, cfg, lift_mode)
    if lift_mode == LiftMode.ARGMAX:
        lift_mode = LiftMode.DISTRIBUTION
    frustum = lift_with_mode(dist, features, lift_mode)
    write_tensor(args.output, frustum)
    logger.info(f"Wrote frustum {frustum.shape} to {args.output}")
    return EXIT_SUCCESS


def cmd_transform(args: argparse.Namespace, cfg: Settings) -> int:
    """Frustum tensor -> voxel, BEV or reduced BEV tensor."""
    frustum = read_tensor(args.frustum)
    if frustum.ndim != 4:
        raise ShapeMismatch(f"Frustum tensor must have 4 dims, got {frustum.shape}")
    disc = build_discretization(cfg, num_bins=frustum.shape[2])
    calib = build_calibration(args, cfg)
    grid = build_grid(cfg, args.grid_preset)

    voxels = frustum_to_voxel(
        frustum,
        calib,
        disc,
        grid,
        mode=SamplingMode(args.sampling_mode),
        workers=cfg.num_workers,
        cache=build_cache(cfg),
    )
    output = voxels.values
    if args.collapse or args.reduce:
        bev = collapse_to_bev(voxels)
        if args.reduce:
            bias = read_tensor(args.bias) if args.bias else None
            bev = channel_reduce(bev, read_tensor(args.reduce), bias)
        output = bev.values
    write_tensor(args.output, output)
    logger.info(f"Wrote {output.shape} to {args.output}")
    return EXIT_SUCCESS


def cmd_labels(args: argparse.Namespace, cfg: Settings) -> int:
    """Point cloud (+ boxes) -> one-hot depth labels (+ foreground mask)."""
    calib = build_calibration(args, cfg)
    disc = build_discretization(cfg)
    cloud = read_velodyne(args.cloud)
    if args.transform:
        cloud = cloud.transformed(load_rigid_transform(args.transform))
    if args.sensor_frame:
        cloud = cloud.transformed(calib.extrinsic)
    labels = generate_labels(calib, cloud, disc)
    write_tensor(args.output, labels)
    logger.info(f"Wrote labels {labels.shape} to {args.output}")

    if args.boxes:
        mask = foreground_mask(
            read_boxes_csv(args.boxes), calib.image_width, calib.image_height, calib.feature_downsample
        )
        target = args.mask_output or str(Path(args.output).with_suffix(".mask.tensor"))
        write_tensor(target, mask)
        logger.info(f"Wrote foreground mask ({int(mask.sum())} pixels) to {target}")
    return EXIT_SUCCESS


def _load_distribution_inputs(args: argparse.Namespace) -> tuple:
    dist = read_tensor(args.dist)
    if args.from_logits:
        dist = softmax_normalize(dist)
    labels = read_tensor(args.labels)
    if args.mask:
        fg = read_tensor(args.mask) > 0.5
    else:
        fg = np.zeros(dist.shape[:-1], dtype=bool)
    return dist, labels, fg


def cmd_loss(args: argparse.Namespace, cfg: Settings) -> int:
    """Print the depth loss with 9 significant digits."""
    dist, labels, fg = _load_distribution_inputs(args)
    value = depth_loss(dist, labels, fg, loss_weights(cfg))
    print(f"{value:.9g}")
    return EXIT_SUCCESS


def cmd_entropy(args: argparse.Namespace, cfg: Settings) -> int:
    """Write the entropy report CSV."""
    dist, labels, fg = _load_distribution_inputs(args)
    report = entropy_report(dist, labels, fg)
    _write_text(report.to_csv(), args.output)
    return EXIT_SUCCESS


def cmd_gradcheck(args: argparse.Namespace, cfg: Settings) -> int:
    """Run the gradient-check suite; exit 4 when any check fails."""
    results = run_gradcheck_suite(
        seed=args.seed, eps=cfg.gradcheck_eps, tolerance=cfg.gradcheck_tolerance
    )
    width = max(len(result.name) for result in results)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{result.name:<{width}}  {result.max_relative_error:.3e}  {status}")
    failed = [result.name for result in results if not result.passed]
    if failed:
        raise GradientCheckFailed(f"Gradient check failed: {', '.join(failed)}")
    return EXIT_SUCCESS


def cmd_synth(args: argparse.Namespace, cfg: Settings) -> int:
    """Render a random single-box scene into tensors, a cloud and a calibration file."""
    args.sensor_frame = True
    calib = build_calibration(args, cfg)
    disc = build_discretization(cfg)
    grid = build_grid(cfg, args.grid_preset)
    rng = np.random.default_rng(args.seed)

    scene = random_scene(rng, calib, disc, grid, channels=cfg.feature_channels, sigma=args.sigma)
    result = synth_scene(scene, disc)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "features.tensor", result.features)
    write_tensor(out / "logits.tensor", result.logits)
    write_tensor(out / "depth.tensor", result.depth.values)
    write_tensor(out / "mask.tensor", result.fg_mask)
    write_velodyne(out / "cloud.bin", result.cloud)
    (out / "calib.txt").write_text(
        format_kitti_calibration(
            {
                cfg.calib_key: calib.P,
                "R0_rect": np.eye(3),
                "Tr_velo_to_cam": calib.extrinsic[:3, :],
            }
        )
    )
    logger.info(f"Synthetic scene written to {out}: {result.to_dict()}")
    return EXIT_SUCCESS


def cmd_pipeline(args: argparse.Namespace, cfg: Settings) -> int:
    """Features + logits -> BEV tensor, with optional stage dumps."""
    features = read_tensor(args.features)
    logits = read_tensor(args.logits)
    bins = logits.shape[-1] - 1 if cfg.overflow_bin else logits.shape[-1]
    disc = build_discretization(cfg, num_bins=bins)
    calib = build_calibration(args, cfg)
    grid = build_grid(cfg, args.grid_preset)

    in_channels = grid.dims[2] * features.shape[-1]
    weights = read_tensor(args.reduce) if args.reduce else uniform_reduce_weights(in_channels)
    bias = read_tensor(args.bias) if args.bias else None

    result = run_pipeline(
        features,
        logits,
        calib,
        disc,
        grid,
        weights,
        bias,
        lift_mode=LiftMode(args.lift_mode),
        sampling_mode=SamplingMode(args.sampling_mode),
        workers=cfg.num_workers,
        cache=build_cache(cfg),
        dump_dir=args.dump_dir,
    )
    write_tensor(args.output, result.bev.values)
    logger.info(f"Wrote BEV {result.bev.values.shape} to {args.output}")
    return EXIT_SUCCESS


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_discretization_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("discretization")
    group.add_argument("--mode", dest="discretization_mode", choices=["UD", "SID", "LID"])
    group.add_argument("--d-min", dest="d_min", type=float)
    group.add_argument("--d-max", dest="d_max", type=float)
    group.add_argument("--bins", dest="num_bins", type=int, help="Depth bins D")
    group.add_argument(
        "--no-overflow", dest="overflow_bin", action="store_const", const=False,
        help="Disable the overflow bin",
    )


def _add_camera_flags(parser: argparse.ArgumentParser, calib_file: bool = True) -> None:
    group = parser.add_argument_group("camera")
    if calib_file:
        group.add_argument("--calib", help="KITTI calibration file (canonical camera when omitted)")
        group.add_argument("--calib-key", dest="calib_key")
    group.add_argument("--focal", type=float, default=200.0, help="Focal length of the canonical camera")
    group.add_argument("--image-width", dest="image_width", type=int)
    group.add_argument("--image-height", dest="image_height", type=int)
    group.add_argument("--downsample", dest="feature_downsample", type=int)
    group.add_argument(
        "--sensor-frame", action="store_true",
        help="Grid/cloud coordinates are in the sensor frame (x forward, y left, z up)",
    )


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("grid")
    group.add_argument("--grid-preset", choices=["kitti", "waymo"])
    for axis in "xyz":
        group.add_argument(f"--{axis}-min", dest=f"{axis}_min", type=float)
        group.add_argument(f"--{axis}-max", dest=f"{axis}_max", type=float)
    group.add_argument("--voxel-size", dest="voxel_size", type=float)


def _add_loss_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("loss weights")
    for name in ("alpha_fg", "alpha_bg", "gamma"):
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)


def _add_distribution_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dist", required=True, help="Distribution tensor W_F x H_F x K")
    parser.add_argument("--labels", required=True, help="One-hot label tensor W_F x H_F x K")
    parser.add_argument("--mask", help="Foreground mask tensor W_F x H_F (all background when omitted)")
    parser.add_argument("--from-logits", action="store_true", help="Apply softmax to --dist first")


def build_parser() -> argparse.ArgumentParser:
    """Create the `bevlift` argument parser."""
    parser = argparse.ArgumentParser(
        prog="bevlift",
        description="Categorical depth distributions to bird's-eye-view features.",
    )
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--workers", dest="num_workers", type=int, help="Sampling worker threads")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("discretize", help="Depth bin table as CSV")
    _add_discretization_flags(p)
    p.add_argument("--output", help="CSV path (stdout when omitted)")
    p.set_defaults(handler=cmd_discretize)

    p = subparsers.add_parser("lift", help="Lift features into a frustum grid")
    p.add_argument("--logits", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lift-mode", choices=[m.value for m in LiftMode], default=LiftMode.DISTRIBUTION.value)
    p.add_argument(
        "--no-overflow", dest="overflow_bin", action="store_const", const=False,
        help="Logits carry no overflow bin",
    )
    p.set_defaults(handler=cmd_lift)

    p = subparsers.add_parser("transform", help="Frustum grid to voxel or BEV features")
    p.add_argument("--frustum", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--collapse", action="store_true", help="Collapse to BEV")
    p.add_argument("--reduce", help="Reduce weights tensor (implies --collapse)")
    p.add_argument("--bias", help="Reduce bias tensor")
    p.add_argument("--sampling-mode", choices=[m.value for m in SamplingMode], default=SamplingMode.TRILINEAR.value)
    _add_discretization_flags(p)
    _add_camera_flags(p)
    _add_grid_flags(p)
    p.set_defaults(handler=cmd_transform)

    p = subparsers.add_parser("labels", help="Depth labels from a point cloud")
    p.add_argument("--cloud", required=True, help="Velodyne .bin point cloud")
    p.add_argument("--boxes", help="2D boxes CSV for the foreground mask")
    p.add_argument("--transform", help="Row-major 4x4 rigid transform applied to the cloud before projection")
    p.add_argument("--output", required=True)
    p.add_argument("--mask-output")
    _add_discretization_flags(p)
    _add_camera_flags(p)
    p.set_defaults(handler=cmd_labels)

    p = subparsers.add_parser("loss", help="Depth focal loss")
    _add_distribution_inputs(p)
    _add_loss_flags(p)
    p.set_defaults(handler=cmd_loss)

    p = subparsers.add_parser("entropy", help="Entropy report CSV")
    _add_distribution_inputs(p)
    p.add_argument("--output", help="CSV path (stdout when omitted)")
    p.set_defaults(handler=cmd_entropy)

    p = subparsers.add_parser("gradcheck", help="Finite-difference checks of every backward op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", dest="gradcheck_eps", type=float)
    p.add_argument("--tolerance", dest="gradcheck_tolerance", type=float)
    p.set_defaults(handler=cmd_gradcheck)

    p = subparsers.add_parser("synth", help="Render a random synthetic scene")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0, help="Distribution sharpness parameter")
    p.add_argument("--channels", dest="feature_channels", type=int)
    _add_discretization_flags(p)
    _add_camera_flags(p, calib_file=False)
    _add_grid_flags(p)
    p.set_defaults(handler=cmd_synth)

    p = subparsers.add_parser("pipeline", help="Features and logits to BEV features")
    p.add_argument("--features", required=True)
    p.add_argument("--logits", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--reduce", help="Reduce weights tensor (uniform average when omitted)")
    p.add_argument("--bias", help="Reduce bias tensor")
    p.add_argument("--dump-dir", help="Write frustum/voxel/BEV intermediates here")
    p.add_argument("--lift-mode", choices=[m.value for m in LiftMode], default=LiftMode.DISTRIBUTION.value)
    p.add_argument("--sampling-mode", choices=[m.value for m in SamplingMode], default=SamplingMode.TRILINEAR.value)
    _add_discretization_flags(p)
    _add_camera_flags(p)
    _add_grid_flags(p)
    p.set_defaults(handler=cmd_pipeline)

    return parser


def _settings_overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        key: value
        for key, value in vars(args).items()
        if key in Settings.model_fields and value is not None
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI.

    Args:
        argv: Arguments (default: sys.argv[1:])

    Returns:
        Exit code: 0 success, 2 configuration error, 3 data error, 4 numeric failure
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        cfg = load_settings(args.config, **_settings_overrides(args))
    except (ValidationError, ConfigurationError) as e:
        configure_logging(force=True)
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG_ERROR
    configure_logging(cfg.log_level, force=True)
    logger.debug(f"Running {args.command}")

    handler: Handler = args.handler
    try:
        return handler(args, cfg)
    except BevLiftError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command} failed: invalid configuration: {e}")
        return EXIT_CONFIG_ERROR
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
