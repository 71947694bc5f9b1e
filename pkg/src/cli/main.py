"""
Command-line entry point: `python -m src.cli.main <subcommand> ...`
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from src.cli.pipeline import fit_config_from_dict, load_pipeline_config, run_pipeline
from src.cli.synthetic import (box_on_plane_scene, generate_synthetic, orbit_cameras, scene_from_dict,
                               sphere_on_plane_scene, sphere_scene)
from src.composer.insertion import CompositeField, SegmentedSamplerConfig, load_pose, render_composite
from src.field_core.camera import load_camera, save_camera
from src.field_core.field import load_field, save_field
from src.field_core.rendering import SamplerConfig, load_gbuffer, render_view, save_gbuffer
from src.intrinsic_fit.batching import load_posed_images, write_manifest
from src.intrinsic_fit.trainer import IntrinsicTrainer
from src.lighting.envmap import load_envmap, save_envmap
from src.lighting.hybrid import HybridLighting, fit_hybrid, load_lighting, save_lighting
from src.lighting.sg import sg_to_panorama
from src.lighting.sh import sh_to_panorama
from src.renderer.deferred import load_material, render_relit, tonemap
from src.renderer.point_lights import FalloffConfig
from src.reporting.metrics import visibility_stats
from src.reporting.visualizer import RunVisualizer
from src.shading_replace.replacer import ReplaceConfig, extract_surface_points, replace_shading
from src.shadow.oracle import benchmark_shadow, oracle_visibility_map
from src.shadow.vsm import ShadowConfig, shadow_pass
from src.utils.errors import ConfigError, IrcError
from src.utils.image_io import write_pfm, write_png
from src.utils.logger import get_logger, setup_logging
from src.utils.settings import load_settings

logger = get_logger(__name__)

SYNTHETIC_SCENES = {
    "sphere": sphere_scene,
    "sphere-on-plane": sphere_on_plane_scene,
    "box-on-plane": box_on_plane_scene,
}


INPUT_ARGS = ("data", "config", "scene", "object", "pose", "camera", "hdr", "gbuffer", "light", "material",
              "scene_file")


def _check_inputs(args) -> None:
    """Every input path named on the command line must exist"""
    names = ("scene_file",) if args.command == "synth" else INPUT_ARGS
    for name in names:
        value = getattr(args, name, None)
        if isinstance(value, str) and not Path(value).exists():
            raise ConfigError(f"--{name.replace('_', '-')} not found: {value}")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")


def _load_lighting(path, positional: bool) -> HybridLighting:
    lighting = load_lighting(path)
    if positional:
        missing = [i for i, sg in enumerate(lighting.sgs) if sg.position is None]
        if missing:
            raise ConfigError(f"--positional needs a position on every SG; SGs {missing} have none")
        return lighting
    return HybridLighting(lighting.sh, [replace(sg, position=None) for sg in lighting.sgs])


def _shadow_evaluator(args):
    scene = load_field(args.scene)
    if getattr(args, "object", None):
        if not args.pose:
            raise ConfigError("--object needs --pose")
        return CompositeField(scene, load_field(args.object), load_pose(args.pose))
    return scene


# =============================================================================
# Subcommands

def cmd_fit(args, settings) -> None:
    raw = _read_json(args.config) if args.config else {}
    if args.iterations is not None:
        raw["iterations"] = args.iterations
    config = fit_config_from_dict(raw, "fit", args.seed)
    trainer = IntrinsicTrainer(load_posed_images(args.data), config)
    field = trainer.train()
    save_field(args.out, field)
    if args.history:
        trainer.save_history(args.history)
    logger.info(f"✓ Field written to {args.out}")


def cmd_compose(args, settings) -> None:
    scene, obj = load_field(args.scene), load_field(args.object)
    config = SegmentedSamplerConfig(args.n_scene, args.boost, args.threads)
    gbuffer = render_composite(scene, obj, load_pose(args.pose), load_camera(args.camera), config)
    save_gbuffer(args.out, gbuffer)
    logger.info(f"✓ Composite GBuffer written to {args.out}")


def cmd_reshade(args, settings) -> None:
    scene = load_field(args.scene)
    config = ReplaceConfig(p=args.p, d0=args.d0, aggregation=args.aggregation,
                           density_threshold=args.threshold, candidates=args.candidates, seed=args.seed)
    points = extract_surface_points(scene, config.density_threshold, config.max_scene_points, args.seed)
    result = replace_shading(load_field(args.object), points, load_pose(args.pose), config,
                             args.beta_s, args.beta_o, scene.diagonal)
    save_field(args.out, result.field)
    logger.info(f"✓ Reshaded object written to {args.out} ({len(result.warnings)} warnings)")


def cmd_fit_light(args, settings) -> None:
    env = load_envmap(args.hdr)
    lighting, residual = fit_hybrid(env, args.k, args.rho)
    save_lighting(args.out, lighting)
    if args.panoramas:
        out = Path(args.panoramas)
        save_envmap(out / "sg.pfm", sg_to_panorama(lighting.sgs, env.width, env.height))
        save_envmap(out / "sh.pfm", sh_to_panorama(lighting.sh, env.width, env.height))
        save_envmap(out / "residual.pfm", residual)
    logger.info(f"✓ Lighting written to {args.out}")


def cmd_relight(args, settings) -> None:
    gbuffer = load_gbuffer(args.gbuffer)
    lighting = _load_lighting(args.light, args.positional)
    material = load_material(args.material) if args.material else None

    visibilities = None
    if args.scene and lighting.sgs:
        config = ShadowConfig(k=args.k, threads=args.threads)
        config.validate()
        visibilities = shadow_pass(gbuffer, _shadow_evaluator(args), lighting.sgs, config).visibilities

    result = render_relit(gbuffer, lighting, material, visibilities=visibilities,
                          falloff=FalloffConfig(args.falloff_gamma), seed=args.seed)
    out = Path(args.out)
    write_png(out, tonemap(result.image, args.exposure, args.gamma))
    write_pfm(out.with_suffix(".pfm"), result.image)
    for warning in result.warnings:
        logger.warning(f"⚠ {warning}")
    logger.info(f"✓ Relit image written to {out}")


def cmd_shadow_compare(args, settings) -> None:
    evaluator = _shadow_evaluator(args)
    lighting = load_lighting(args.light)
    if not lighting.sgs:
        raise ConfigError(f"lighting file {args.light} holds no SG lights to shadow")
    camera = load_camera(args.camera)
    config = ShadowConfig(k=args.k, resolution=args.resolution, threads=args.threads)
    config.validate()

    gbuffer = render_view(evaluator, camera, SamplerConfig(threads=args.threads))
    result = shadow_pass(gbuffer, evaluator, lighting.sgs, config)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.report).parent
    fg = gbuffer.foreground()

    rows = []
    for i, (v_vsm, light_cam) in enumerate(zip(result.visibilities, result.light_cameras)):
        v_oracle = oracle_visibility_map(gbuffer, evaluator, light_cam.center, n_samples=args.oracle_samples)
        write_pfm(out_dir / f"vsm_sg{i}.pfm", v_vsm)
        write_pfm(out_dir / f"oracle_sg{i}.pfm", v_oracle)
        RunVisualizer(out_dir).plot_visibility_comparison(v_vsm, v_oracle, f"visibility_sg{i}.png")
        stats = visibility_stats(v_vsm, v_oracle, fg)
        bench = benchmark_shadow(gbuffer, evaluator, lighting.sgs[i], config, args.oracle_samples)
        rows.append({"sg": i, **stats, **bench.to_frame().iloc[0].to_dict()})

    report = pd.DataFrame(rows)
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report.to_string(index=False) + "\n")
    logger.info(f"✓ Shadow comparison report written to {args.report}")


def cmd_synth(args, settings) -> None:
    if args.scene_file:
        scene = scene_from_dict(_read_json(args.scene_file))
    else:
        scene = SYNTHETIC_SCENES[args.scene]()
    center = 0.5 * (scene.bbox_min + scene.bbox_max)
    radius = 1.6 * float(np.linalg.norm(scene.bbox_max - scene.bbox_min))
    cameras = orbit_cameras(center, radius, args.views, args.size, args.size)
    result = generate_synthetic(scene, (args.resolution,) * 3, cameras,
                                SamplerConfig(n_samples=2 * args.resolution, threads=args.threads))

    out = Path(args.out)
    save_field(out / "field.ircf", result.field)
    for view, gbuffer in zip(result.views, result.gbuffers):
        write_pfm(out / "images" / view.name, view.image)
        save_gbuffer(out / "gbuffers" / view.name, gbuffer)
        save_camera(out / "cameras" / view.name.replace(".pfm", ".txt"), view.camera)
    write_manifest(out / "images", [(v.name, v.camera) for v in result.views])
    logger.info(f"✓ Synthetic dataset written to {out}")


def cmd_pipeline(args, settings) -> None:
    config = load_pipeline_config(args.config)
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    summary = run_pipeline(config)
    logger.info(f"✓ Summary: {len(summary['stages'])} stages, written to {config.output_dir / 'summary.json'}")


# =============================================================================
# Parser

def build_parser(settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irc", description="Intrinsic radiance field compositing and relighting")
    parser.add_argument("--seed", type=int, default=settings.seed, help="random seed (env IRC_SEED)")
    parser.add_argument("--threads", type=int, default=settings.threads, help="worker threads (env IRC_THREADS)")
    parser.add_argument("--verbose", action="store_true", help="debug logging and progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an intrinsic field to posed images")
    p.add_argument("--data", required=True, help="directory holding images and manifest.txt")
    p.add_argument("--out", required=True, help="output .ircf file")
    p.add_argument("--config", help="JSON with FitConfig keys and an optional 'weights' object")
    p.add_argument("--iterations", type=int)
    p.add_argument("--history", help="write the per-iteration loss table to this CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compose", help="render a composite GBuffer")
    for name in ("scene", "object", "pose", "camera", "out"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--n-scene", type=int, default=128)
    p.add_argument("--boost", type=float, default=4.0)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("reshade", help="transfer scene shading onto an inserted object")
    for name in ("scene", "object", "pose", "out"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--p", type=int, default=32)
    p.add_argument("--d0", type=float)
    p.add_argument("--aggregation", choices=("mean", "max"), default="mean")
    p.add_argument("--threshold", type=float, default=10.0, help="shell density threshold")
    p.add_argument("--candidates", type=int, help="pre-select this many nearest scene points")
    p.add_argument("--beta-s", type=float, default=0.6)
    p.add_argument("--beta-o", type=float, default=0.6)
    p.set_defaults(func=cmd_reshade)

    p = sub.add_parser("fit-light", help="fit SH + SG lighting to an HDR panorama")
    p.add_argument("--hdr", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--rho", type=float, default=10.0, help="suppression radius in degrees")
    p.add_argument("--panoramas", help="directory for SG / SH / residual reconstructions")
    p.set_defaults(func=cmd_fit_light)

    p = sub.add_parser("relight", help="relight a GBuffer")
    p.add_argument("--gbuffer", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--out", required=True, help="PNG path; the linear image goes next to it as .pfm")
    p.add_argument("--material")
    p.add_argument("--positional", action="store_true", help="shade SGs as positional lights")
    p.add_argument("--scene", help="field to cast shadows from")
    p.add_argument("--object")
    p.add_argument("--pose")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--exposure", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--falloff-gamma", type=float, default=1.0)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("shadow-compare", help="VSM visibility against shadow rays")
    for name in ("scene", "light", "camera", "report"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--object")
    p.add_argument("--pose")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--oracle-samples", type=int, default=64)
    p.add_argument("--out-dir", help="directory for V maps (defaults to the report's directory)")
    p.set_defaults(func=cmd_shadow_compare)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--scene", choices=sorted(SYNTHETIC_SCENES), default="sphere-on-plane")
    p.add_argument("--scene-file", help="JSON scene description instead of a ready-made scene")
    p.add_argument("--resolution", type=int, default=48)
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--size", type=int, default=64, help="image width and height")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run the staged pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    """Main execution function"""
    settings = load_settings()
    args = build_parser(settings).parse_args(argv)
    setup_logging(args.verbose, settings.log_level)
    try:
        _check_inputs(args)
        args.func(args, settings)
    except IrcError as e:
        logger.error(f"✗ {args.command}: {e}")
        return e.exit_code
    except OSError as e:
        error = ConfigError(f"cannot read or write {e.filename}: {e.strerror}")
        logger.error(f"✗ {args.command}: {error}")
        return error.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
