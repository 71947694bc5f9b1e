"""
Unit tests for metrics, run summaries and figures
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.reporting.metrics import (chroma_saturation, highlight_area, mse, pearson_after_scale, psnr,
                                   scale_align, total_variation, visibility_stats)
from src.reporting.summary import read_summary, to_builtin, write_summary
from src.reporting.visualizer import RunVisualizer


class TestMetrics:
    """Test image comparison metrics"""

    def test_mse_and_psnr(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 0.1)
        assert mse(a, b) == pytest.approx(0.01)
        assert psnr(a, b) == pytest.approx(20.0)
        assert psnr(a, a) == float("inf")

    def test_masked_mse(self):
        a = np.array([0.0, 0.0, 5.0])
        b = np.zeros(3)
        assert mse(a, b, mask=np.array([True, True, False])) == 0.0

    def test_scale_alignment(self):
        target = np.array([1.0, 2.0, 3.0])
        assert np.allclose(scale_align(0.5 * target, target), target)
        assert pearson_after_scale(0.5 * target, target) == pytest.approx(1.0)

    def test_pearson_of_constant_is_zero(self):
        assert pearson_after_scale(np.ones(5), np.arange(5.0)) == 0.0

    def test_chroma_saturation(self):
        grey = np.full((2, 2, 3), 0.4)
        assert chroma_saturation(grey) == 0.0
        red = np.zeros((2, 2, 3))
        red[..., 0] = 1.0
        assert chroma_saturation(red) == 1.0

    def test_total_variation(self):
        image = np.zeros((3, 3))
        image[:, 2] = 1.0
        assert total_variation(image) == 3.0

    def test_highlight_area(self):
        image = np.zeros((4, 4))
        image[0, 0], image[0, 1] = 1.0, 0.6
        assert highlight_area(image) == 2
        assert highlight_area(np.zeros((3, 3))) == 0

    def test_visibility_stats(self):
        stats = visibility_stats(np.array([1.0, 0.2, 0.8]), np.array([1.0, 0.9, 0.7]))
        assert stats["pixels"] == 3
        assert stats["agreement"] == pytest.approx(2.0 / 3.0)
        assert stats["mean_abs_diff"] == pytest.approx(0.8 / 3.0)
        empty = visibility_stats(np.ones(2), np.ones(2), mask=np.zeros(2, dtype=bool))
        assert empty["pixels"] == 0


class TestSummary:
    """Test JSON summaries"""

    def test_numpy_values_converted(self):
        value = to_builtin({"a": np.float32(1.5), "b": np.arange(3), "c": Path("x/y"), "d": float("nan")})
        assert value == {"a": 1.5, "b": [0, 1, 2], "c": "x/y", "d": None}

    def test_round_trip(self, tmp_path):
        path = write_summary(tmp_path / "nested" / "summary.json", {"stages": {"relight": {"status": "ran"}},
                                                                    "seed": np.int64(3)})
        assert read_summary(path) == {"stages": {"relight": {"status": "ran"}}, "seed": 3}


class TestRunVisualizer:
    """Test that figures are written"""

    def test_figures(self, tmp_path):
        viz = RunVisualizer(tmp_path / "figures")
        history = pd.DataFrame({"iteration": np.arange(5), "total": np.linspace(1.0, 0.5, 5),
                                "rgb": np.linspace(0.8, 0.4, 5), "sparsity": np.zeros(5), "lr": np.full(5, 1e-3)})
        paths = [
            viz.plot_loss_curves(history, "loss.png"),
            viz.plot_visibility_comparison(np.ones((4, 4)), np.full((4, 4), 0.5), "vis.png"),
            viz.plot_lighting(np.ones((4, 8, 3)), np.zeros((4, 8, 3)), np.full((4, 8, 3), 0.3), "light.png"),
        ]
        for path in paths:
            assert path.exists()
            assert path.stat().st_size > 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
