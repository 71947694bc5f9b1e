"""
Hybrid SH + SG lighting: decomposition of an environment map and its text format.

File format: the first line holds the 27 SH coefficients (9 basis functions x
RGB, basis-major); each further line is one SG:
    mu_x mu_y mu_z v A_r A_g A_b [p_x p_y p_z]
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from src.lighting.envmap import EnvironmentMap
from src.lighting.sg import DEFAULT_SUPPRESSION_DEG, SphericalGaussianLight, fit_sgs
from src.lighting.sh import SHLighting, fit_sh
from src.utils.errors import ConfigError
from src.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class HybridLighting:
    sh: SHLighting = field(default_factory=SHLighting.zeros)
    sgs: List[SphericalGaussianLight] = field(default_factory=list)

    def validate(self) -> None:
        self.sh.validate()
        for sg in self.sgs:
            sg.validate()

    def sh_only(self) -> "HybridLighting":
        return HybridLighting(self.sh, [])

    def sg_only(self) -> "HybridLighting":
        return HybridLighting(SHLighting.zeros(), list(self.sgs))


def fit_hybrid(env: EnvironmentMap, k: int = 3, rho_deg: float = DEFAULT_SUPPRESSION_DEG):
    """SGs for the brightest sources, SH for the clamped residual; returns (lighting, residual map)"""
    env.validate()
    sg_fit = fit_sgs(env, k, rho_deg)
    lighting = HybridLighting(fit_sh(sg_fit.residual), sg_fit.sgs)
    logger.info(f"✓ Fitted {len(sg_fit.sgs)} SGs + 27 SH coefficients")
    return lighting, sg_fit.residual


def save_lighting(path, lighting: HybridLighting) -> None:
    lines = [" ".join(repr(float(c)) for c in lighting.sh.coeffs.ravel())]
    for sg in lighting.sgs:
        values = list(sg.mean) + [sg.variance] + list(sg.amplitude)
        if sg.position is not None:
            values += list(sg.position)
        lines.append(" ".join(repr(float(v)) for v in values))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def load_lighting(path) -> HybridLighting:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ConfigError(f"lighting file {path} is empty")
    try:
        rows = [[float(x) for x in ln.split()] for ln in lines]
    except ValueError:
        raise ConfigError(f"lighting file {path} holds non-numeric values")
    if len(rows[0]) != 27:
        raise ConfigError(f"lighting file {path}: first line needs 27 SH coefficients, got {len(rows[0])}")

    sgs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) not in (7, 10):
            raise ConfigError(f"lighting file {path}: SG line {lineno} needs 7 or 10 numbers")
        mean = np.asarray(row[:3])
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ConfigError(f"lighting file {path}: SG line {lineno} has a zero direction")
        sgs.append(SphericalGaussianLight(mean / norm, row[4:7], row[3], row[7:10] if len(row) == 10 else None))
    lighting = HybridLighting(SHLighting(np.asarray(rows[0])), sgs)
    try:
        lighting.validate()
    except Exception as e:
        raise ConfigError(f"invalid lighting in {path}: {e}")
    return lighting
