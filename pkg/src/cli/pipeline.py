"""
End-to-end pipeline: fit -> compose -> reshade -> fit-light -> relight -> shadow-compare,
driven by a JSON config.

Stages whose inputs hash to the value recorded in the output directory's
stage manifest are skipped. Outputs follow the layout documented in README.md.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.cli.artifacts import ArtifactStore, content_hash
from src.composer.insertion import CompositeField, InsertionPose, SegmentedSamplerConfig, load_pose, render_composite
from src.field_core.camera import load_camera
from src.field_core.field import load_field, save_field
from src.field_core.rendering import GBuffer, SamplerConfig, load_gbuffer, render_view, save_gbuffer
from src.intrinsic_fit.batching import MANIFEST_NAME, load_posed_images
from src.intrinsic_fit.trainer import FitConfig, IntrinsicTrainer, LossWeights
from src.lighting.envmap import load_envmap, save_envmap
from src.lighting.hybrid import fit_hybrid, load_lighting, save_lighting
from src.lighting.sg import sg_to_panorama
from src.lighting.sh import sh_to_panorama
from src.renderer.deferred import load_material, render_relit, tonemap
from src.renderer.point_lights import FalloffConfig
from src.reporting.metrics import visibility_stats
from src.reporting.summary import write_summary
from src.reporting.visualizer import RunVisualizer
from src.shading_replace.replacer import ReplaceConfig, extract_surface_points, replace_shading
from src.shadow.oracle import benchmark_shadow, oracle_visibility_map
from src.shadow.vsm import ShadowConfig, shadow_pass
from src.utils.errors import ConfigError, IrcError, StageError
from src.utils.image_io import write_pfm, write_png
from src.utils.logger import get_logger

logger = get_logger(__name__)

TOP_LEVEL_KEYS = {"dataset", "fields", "fit", "insertion", "lighting", "material", "cameras",
                  "shadow", "shadow_compare", "reshade", "render", "output_dir", "seed"}
ROLES = ("scene", "object")


@dataclass
class RenderSettings:
    n_scene: int = 128
    boost: float = 4.0
    exposure: float = 1.0
    gamma: float = 2.2
    n_point_lights: int = 5
    spread: float = 1.0
    falloff_gamma: float = 1.0
    threads: int = 1


@dataclass
class ReshadeSettings:
    p: int = 32
    d0: Optional[float] = None
    aggregation: str = "mean"
    density_threshold: float = 10.0
    max_scene_points: int = 20000
    candidates: Optional[int] = None
    beta_s: float = 0.6
    beta_o: float = 0.6

    def replace_config(self, seed: int) -> ReplaceConfig:
        return ReplaceConfig(self.p, self.d0, self.aggregation, self.density_threshold,
                             self.max_scene_points, self.candidates, seed=seed)


@dataclass
class LightingSettings:
    hdr: Optional[Path] = None
    file: Optional[Path] = None
    k: int = 3
    rho_deg: float = 10.0


@dataclass
class ShadowCompareSettings:
    oracle_samples: int = 64
    threshold: float = 0.5
    benchmark: bool = True

    def validate(self) -> None:
        if self.oracle_samples < 2:
            raise ConfigError(f"oracle_samples must be >= 2, got {self.oracle_samples}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class PipelineConfig:
    output_dir: Path
    cameras: List[Path]
    lighting: LightingSettings
    seed: int = 0
    dataset: Dict[str, Path] = field(default_factory=dict)
    fields: Dict[str, Path] = field(default_factory=dict)
    fit: Dict[str, FitConfig] = field(default_factory=dict)
    insertion: Optional[InsertionPose] = None
    material: Optional[Path] = None
    shadow: Optional[ShadowConfig] = None
    shadow_compare: Optional[ShadowCompareSettings] = None
    reshade: Optional[ReshadeSettings] = None
    render: RenderSettings = field(default_factory=RenderSettings)
    raw: dict = field(default_factory=dict)


def _build(cls, section, name: str, **overrides):
    """Instantiate a dataclass from a dict, rejecting keys it does not declare"""
    if not isinstance(section, dict):
        raise ConfigError(f"section '{name}' must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    values = dict(section)
    values.update(overrides)
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{name}' section: {e}")


def _existing(base: Path, value, what: str) -> Path:
    path = Path(value)
    path = path if path.is_absolute() else base / path
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _role_paths(section, name: str, base: Path, what: str) -> Dict[str, Path]:
    if not isinstance(section, dict):
        raise ConfigError(f"section '{name}' must be an object")
    unknown = set(section) - set(ROLES)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return {role: _existing(base, value, f"{role} {what}") for role, value in section.items()}


def fit_config_from_dict(section: dict, name: str, seed: int) -> FitConfig:
    section = dict(section)
    weights = _build(LossWeights, section.pop("weights", {}), f"{name}.weights")
    for key in ("resolution", "bbox_min", "bbox_max"):
        if key in section:
            section[key] = tuple(section[key])
    cfg = _build(FitConfig, section, name, weights=weights, **({} if "seed" in section else {"seed": seed}))
    try:
        cfg.validate()
        weights.validate()
    except IrcError as e:
        raise ConfigError(f"invalid '{name}' section: {e}")
    return cfg


def parse_pipeline_config(raw: dict, base_dir=".") -> PipelineConfig:
    base = Path(base_dir)
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))

    dataset = _role_paths(raw.get("dataset", {}), "dataset", base, "dataset directory")
    for role, path in dataset.items():
        _existing(path, MANIFEST_NAME, f"{role} dataset manifest")
    field_paths = _role_paths(raw.get("fields", {}), "fields", base, "field file")
    if "scene" not in dataset and "scene" not in field_paths:
        raise ConfigError("config needs a scene dataset or a precomputed scene field")

    fit_section = raw.get("fit", {})
    if not isinstance(fit_section, dict) or set(fit_section) - set(ROLES):
        raise ConfigError("section 'fit' may only hold 'scene' and 'object' sub-sections")
    fit = {role: fit_config_from_dict(fit_section.get(role, {}), f"fit.{role}", seed) for role in dataset}

    insertion = None
    if "insertion" in raw:
        section = dict(raw["insertion"])
        if "pose_file" in section:
            if set(section) != {"pose_file"}:
                raise ConfigError("insertion takes either 'pose_file' or inline rotation/translation/scale")
            insertion = load_pose(_existing(base, section["pose_file"], "pose file"))
        else:
            insertion = _build(InsertionPose, section, "insertion")
            try:
                insertion.validate()
            except IrcError as e:
                raise ConfigError(f"invalid insertion pose: {e}")
    if insertion is not None and "object" not in dataset and "object" not in field_paths:
        raise ConfigError("an insertion pose needs an object dataset or field")

    lighting = _build(LightingSettings, raw.get("lighting", {}), "lighting")
    if (lighting.hdr is None) == (lighting.file is None):
        raise ConfigError("lighting needs exactly one of 'hdr' or 'file'")
    if lighting.hdr is not None:
        lighting.hdr = _existing(base, lighting.hdr, "HDR environment map")
    else:
        lighting.file = _existing(base, lighting.file, "lighting file")

    cameras = [_existing(base, c, "camera file") for c in raw.get("cameras", [])]
    if not cameras:
        raise ConfigError("config lists no cameras")

    shadow = None
    if "shadow" in raw:
        shadow = _build(ShadowConfig, raw["shadow"], "shadow")
        try:
            shadow.validate()
        except IrcError as e:
            raise ConfigError(str(e))
    reshade = _build(ReshadeSettings, raw["reshade"], "reshade") if "reshade" in raw else None
    shadow_compare = None
    if "shadow_compare" in raw:
        shadow_compare = _build(ShadowCompareSettings, raw["shadow_compare"], "shadow_compare")
        shadow_compare.validate()

    output_dir = Path(raw.get("output_dir", "outputs"))
    return PipelineConfig(
        output_dir=output_dir if output_dir.is_absolute() else base / output_dir,
        cameras=cameras,
        lighting=lighting,
        seed=seed,
        dataset=dataset,
        fields=field_paths,
        fit=fit,
        insertion=insertion,
        material=_existing(base, raw["material"], "material map") if raw.get("material") else None,
        shadow=shadow,
        shadow_compare=shadow_compare,
        reshade=reshade,
        render=_build(RenderSettings, raw.get("render", {}), "render"),
        raw=raw,
    )


def load_pipeline_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return parse_pipeline_config(raw, path.parent)


class Pipeline:
    """Runs the configured stages in order against one output directory"""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.store = ArtifactStore(self.out)
        self.field_paths: Dict[str, Path] = dict(config.fields)
        self.lighting_path: Optional[Path] = config.lighting.file
        self.composed = False
        self.summary = {"stages": {}}

    # -------------------------------------------------------------------------
    def _run_stage(self, name: str, input_hash: str, action) -> None:
        if self.store.is_fresh(name, input_hash):
            logger.info(f"✓ [{name}] up to date, skipped")
            self.summary["stages"][name] = {"status": "cached", "metrics": self.store.metrics(name)}
            return
        logger.info(f"[{name}] running")
        try:
            outputs, metrics = action()
        except Exception as e:
            raise StageError(name, e)
        self.store.record(name, input_hash, outputs, metrics)
        self.summary["stages"][name] = {"status": "ran", "metrics": metrics}
        logger.info(f"✓ [{name}] done")

    def _settings(self, obj) -> dict:
        return json.loads(json.dumps(asdict(obj), default=str))

    def _has_object(self) -> bool:
        return self.config.insertion is not None and "object" in self.field_paths

    def _evaluator(self, scene):
        if self._has_object():
            return CompositeField(scene, load_field(self.field_paths["object"]), self.config.insertion)
        return scene

    def _gbuffer_paths(self) -> List[Path]:
        return [self.out / "gbuffers" / f"view_{i:03d}.pfm" for i in range(len(self.config.cameras))]

    def _save_gbuffer(self, path: Path, gbuffer: GBuffer) -> List[Path]:
        save_gbuffer(path, gbuffer)
        return [path.with_name(f"{path.stem}{suffix}") for suffix in
                (".pfm", ".depth.pfm", ".normal.pfm", ".reflectance.pfm", ".shading.pfm", ".alpha.pfm",
                 ".camera.txt")]

    # -------------------------------------------------------------------------
    def fit_stage(self, role: str):
        data_dir = self.config.dataset[role]
        cfg = self.config.fit[role]
        files = sorted(p for p in Path(data_dir).iterdir() if p.is_file())
        input_hash = content_hash({"fit": self._settings(cfg)}, files)
        field_path = self.out / "fields" / f"{role}.ircf"
        history_path = self.out / "fit" / f"{role}_history.csv"

        def action():
            images = load_posed_images(data_dir)
            trainer = IntrinsicTrainer(images, cfg)
            fitted = trainer.train()
            save_field(field_path, fitted)
            history_path.parent.mkdir(parents=True, exist_ok=True)
            trainer.save_history(history_path)
            figure = RunVisualizer(self.out / "figures").plot_loss_curves(trainer.history, f"{role}_loss.png")
            return [field_path, history_path, figure], {"final_loss": trainer.stats["final_loss"],
                                                        "iterations": cfg.iterations}

        self._run_stage(f"fit_{role}", input_hash, action)
        self.field_paths[role] = field_path

    def compose_stage(self):
        cfg = self.config
        render = cfg.render
        inputs = [self.field_paths["scene"], self.field_paths["object"], *cfg.cameras]
        input_hash = content_hash({"n_scene": render.n_scene, "boost": render.boost,
                                   "pose": self._settings(cfg.insertion)}, inputs)

        def action():
            scene = load_field(self.field_paths["scene"])
            obj = load_field(self.field_paths["object"])
            sampler = SegmentedSamplerConfig(render.n_scene, render.boost, render.threads)
            outputs, views = [], []
            for cam_path, gb_path in zip(cfg.cameras, self._gbuffer_paths()):
                gbuffer = render_composite(scene, obj, cfg.insertion, load_camera(cam_path), sampler)
                outputs += self._save_gbuffer(gb_path, gbuffer)
                views.append({"view": gb_path.stem, "foreground": int(gbuffer.foreground().sum()),
                              "mean_alpha": float(gbuffer.alpha.mean())})
            return outputs, {"views": views}

        self._run_stage("compose", input_hash, action)
        self.composed = True

    def reshade_stage(self):
        settings = self.config.reshade
        pose = self.config.insertion
        scene_path, object_path = self.field_paths["scene"], self.field_paths["object"]
        input_hash = content_hash({"reshade": self._settings(settings), "pose": self._settings(pose),
                                   "seed": self.config.seed}, [scene_path, object_path])
        out_path = self.out / "fields" / "object_reshaded.ircf"

        def action():
            scene = load_field(scene_path)
            scene_points = extract_surface_points(scene, settings.density_threshold,
                                                  settings.max_scene_points, self.config.seed)
            result = replace_shading(load_field(object_path), scene_points, pose,
                                     settings.replace_config(self.config.seed),
                                     settings.beta_s, settings.beta_o, scene.diagonal)
            save_field(out_path, result.field)
            return [out_path], {**result.stats, "warnings": result.warnings}

        self._run_stage("reshade", input_hash, action)
        self.field_paths["object"] = out_path

    def fit_light_stage(self):
        settings = self.config.lighting
        input_hash = content_hash({"k": settings.k, "rho_deg": settings.rho_deg}, [settings.hdr])
        light_dir = self.out / "lighting"
        lighting_path = light_dir / "lighting.txt"

        def action():
            env = load_envmap(settings.hdr)
            lighting, residual = fit_hybrid(env, settings.k, settings.rho_deg)
            save_lighting(lighting_path, lighting)
            sg_pano = sg_to_panorama(lighting.sgs, env.width, env.height)
            sh_pano = sh_to_panorama(lighting.sh, env.width, env.height)
            paths = [lighting_path, light_dir / "sg.pfm", light_dir / "sh.pfm", light_dir / "residual.pfm"]
            for path, pano in zip(paths[1:], (sg_pano, sh_pano, residual)):
                save_envmap(path, pano)
            figure = RunVisualizer(self.out / "figures").plot_lighting(env.radiance, sg_pano.radiance,
                                                                       sh_pano.radiance)
            energy = env.energy().sum()
            recon = sg_pano.energy().sum() + sh_pano.energy().sum()
            return paths + [figure], {"sg_count": len(lighting.sgs),
                                      "energy_ratio": float(recon / energy) if energy > 0 else 1.0}

        self._run_stage("fit_light", input_hash, action)
        self.lighting_path = lighting_path

    def relight_stage(self):
        cfg = self.config
        inputs = [self.field_paths["scene"], self.lighting_path, *cfg.cameras]
        if self._has_object():
            inputs.append(self.field_paths["object"])
        if cfg.material is not None:
            inputs.append(cfg.material)
        settings = {"render": self._settings(cfg.render),
                    "shadow": self._settings(cfg.shadow) if cfg.shadow else None,
                    "pose": self._settings(cfg.insertion) if cfg.insertion else None,
                    "gbuffers": self.store.output_hash("compose") if self.composed else None,
                    "seed": cfg.seed}
        input_hash = content_hash(settings, inputs)

        def action():
            scene = load_field(self.field_paths["scene"])
            lighting = load_lighting(self.lighting_path)
            material = load_material(cfg.material) if cfg.material else None
            render = cfg.render
            evaluator = self._evaluator(scene)

            outputs, metrics = [], {"views": []}
            for cam_path, gb_path in zip(cfg.cameras, self._gbuffer_paths()):
                if self.composed:
                    gbuffer = load_gbuffer(gb_path)
                else:
                    gbuffer = render_view(scene, load_camera(cam_path),
                                          SamplerConfig(n_samples=render.n_scene, threads=render.threads))
                    outputs += self._save_gbuffer(gb_path, gbuffer)
                stem = gb_path.stem

                visibilities = None
                view_metrics = {"view": stem, "foreground": int(gbuffer.foreground().sum())}
                if cfg.shadow is not None and lighting.sgs:
                    shadows = shadow_pass(gbuffer, evaluator, lighting.sgs, cfg.shadow)
                    visibilities = shadows.visibilities
                    for j, v in enumerate(visibilities):
                        v_path = self.out / "shadow" / f"{stem}_sg{j}.pfm"
                        write_pfm(v_path, v)
                        outputs.append(v_path)
                    fg = gbuffer.foreground()
                    view_metrics["mean_visibility"] = float(shadows.combined[fg].mean()) if fg.any() else 1.0

                relit = render_relit(gbuffer, lighting, material, visibilities=visibilities,
                                     falloff=FalloffConfig(render.falloff_gamma),
                                     n_point_lights=render.n_point_lights, seed=cfg.seed, spread=render.spread)
                linear_path = self.out / "renders" / f"{stem}.pfm"
                png_path = self.out / "renders" / f"{stem}.png"
                write_pfm(linear_path, relit.image)
                write_png(png_path, tonemap(relit.image, render.exposure, render.gamma))
                outputs += [linear_path, png_path]
                view_metrics["warnings"] = relit.warnings
                metrics["views"].append(view_metrics)
            return outputs, metrics

        self._run_stage("relight", input_hash, action)

    def shadow_compare_stage(self):
        """VSM visibility against per-pixel shadow rays on every view's G-buffer"""
        cfg = self.config
        settings = cfg.shadow_compare
        shadow = cfg.shadow or ShadowConfig()
        inputs = [self.field_paths["scene"], self.lighting_path]
        if self._has_object():
            inputs.append(self.field_paths["object"])
        gbuffer_stage = "compose" if self.composed else "relight"
        input_hash = content_hash({"compare": self._settings(settings), "shadow": self._settings(shadow),
                                   "pose": self._settings(cfg.insertion) if cfg.insertion else None,
                                   "gbuffers": self.store.output_hash(gbuffer_stage)}, inputs)
        out_dir = self.out / "shadow_compare"

        def action():
            lighting = load_lighting(self.lighting_path)
            if not lighting.sgs:
                raise ConfigError("shadow comparison needs at least one SG light")
            evaluator = self._evaluator(load_field(self.field_paths["scene"]))
            viz = RunVisualizer(self.out / "figures")
            rows, timings, outputs = [], [], []
            for gb_path in self._gbuffer_paths():
                gbuffer = load_gbuffer(gb_path)
                fg = gbuffer.foreground()
                result = shadow_pass(gbuffer, evaluator, lighting.sgs, shadow)
                for j, (v_vsm, light_cam) in enumerate(zip(result.visibilities, result.light_cameras)):
                    stem = f"{gb_path.stem}_sg{j}"
                    v_oracle = oracle_visibility_map(gbuffer, evaluator, light_cam.center,
                                                     n_samples=settings.oracle_samples)
                    for name, v in (("vsm", v_vsm), ("oracle", v_oracle)):
                        path = out_dir / f"{stem}_{name}.pfm"
                        write_pfm(path, v)
                        outputs.append(path)
                    outputs.append(viz.plot_visibility_comparison(v_vsm, v_oracle, f"shadow_{stem}.png"))
                    rows.append({"view": gb_path.stem, "sg": j,
                                 **visibility_stats(v_vsm, v_oracle, fg, settings.threshold)})
                    if settings.benchmark:
                        bench = benchmark_shadow(gbuffer, evaluator, lighting.sgs[j], shadow,
                                                 settings.oracle_samples)
                        timings.append({"view": gb_path.stem, "sg": j, "vsm_seconds": bench.vsm_seconds,
                                        "oracle_seconds": bench.oracle_seconds, "speedup": bench.speedup})

            report = pd.DataFrame(rows)
            report_path = out_dir / "report.csv"
            report.to_csv(report_path, index=False)
            metrics = {"mean_abs_diff": float(report["mean_abs_diff"].mean()),
                       "agreement": float(report["agreement"].mean()),
                       "rows": rows}
            if timings:
                metrics["timings"] = timings
                metrics["speedup"] = float(np.median([t["speedup"] for t in timings]))
            return outputs + [report_path], metrics

        self._run_stage("shadow_compare", input_hash, action)

    # -------------------------------------------------------------------------
    def run(self) -> dict:
        logger.info(f"Starting pipeline into {self.out}")
        with self.store:
            for role in ROLES:
                if role in self.config.dataset and role not in self.config.fields:
                    self.fit_stage(role)
            if self._has_object():
                self.compose_stage()
            if self.config.reshade is not None and self.config.insertion is not None:
                self.reshade_stage()
            if self.config.lighting.hdr is not None:
                self.fit_light_stage()
            self.relight_stage()
            if self.config.shadow_compare is not None:
                self.shadow_compare_stage()
            self.summary["outputs"] = {stage: self.store.output_hash(stage) for stage in self.summary["stages"]}
        self.summary["seed"] = self.config.seed
        write_summary(self.out / "summary.json", self.summary)
        ran = [s for s, v in self.summary["stages"].items() if v["status"] == "ran"]
        logger.info(f"✓ Pipeline complete; ran: {', '.join(ran) or 'nothing'}")
        return self.summary


def run_pipeline(config: PipelineConfig) -> dict:
    return Pipeline(config).run()
