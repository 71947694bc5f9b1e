"""
Figures for fit histories, lighting decompositions and shadow comparisons.
"""

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from src.utils.logger import get_logger

logger = get_logger(__name__)


class RunVisualizer:
    """Writes PNG figures into one directory"""

    def __init__(self, output_dir="reports/figures"):
        self.output_dir = Path(output_dir)
        os.makedirs(self.output_dir, exist_ok=True)
        sns.set_theme(style="whitegrid", palette="colorblind")

    def _save(self, fig, name: str) -> Path:
        path = self.output_dir / name
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        logger.debug(f"✓ Saved figure {path}")
        return path

    def plot_loss_curves(self, history: pd.DataFrame, name: str = "loss_curves.png", window: int = 50) -> Path:
        """Rolling mean of the total loss and of every non-zero term"""
        fig, axes = plt.subplots(1, 2, figsize=(13, 4.5))
        smooth = history.set_index("iteration").rolling(window, min_periods=1).mean()

        sns.lineplot(data=smooth["total"], ax=axes[0])
        axes[0].set_title("Total loss")
        axes[0].set_yscale("log")

        terms = [c for c in smooth.columns if c not in ("total", "lr") and smooth[c].abs().sum() > 0]
        if terms:
            sns.lineplot(data=smooth[terms], ax=axes[1], dashes=False)
            axes[1].set_yscale("log")
        axes[1].set_title("Loss terms")
        fig.tight_layout()
        return self._save(fig, name)

    def plot_visibility_comparison(self, v_vsm: np.ndarray, v_oracle: np.ndarray,
                                   name: str = "visibility.png") -> Path:
        fig, axes = plt.subplots(1, 3, figsize=(13, 4))
        for ax, image, title in zip(axes, (v_vsm, v_oracle, np.abs(v_vsm - v_oracle)),
                                    ("VSM", "Shadow rays", "|difference|")):
            shown = ax.imshow(image, vmin=0.0, vmax=1.0, cmap="magma")
            ax.set_title(title)
            ax.axis("off")
        fig.colorbar(shown, ax=axes, shrink=0.8)
        return self._save(fig, name)

    def plot_lighting(self, env: np.ndarray, sg: np.ndarray, sh: np.ndarray, name: str = "lighting.png") -> Path:
        """Tone-mapped panoramas: input, SG part, SH part"""
        fig, axes = plt.subplots(3, 1, figsize=(8, 10))
        for ax, image, title in zip(axes, (env, sg, sh), ("Environment", "Spherical Gaussians", "SH residual")):
            ax.imshow(np.clip(image / (1.0 + image), 0.0, 1.0) ** (1 / 2.2))
            ax.set_title(title)
            ax.axis("off")
        fig.tight_layout()
        return self._save(fig, name)
