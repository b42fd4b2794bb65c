"""Tests for OpenCV figure panels and grid composition."""

import cv2
import numpy as np
import pytest

from orpco import compose_grid, histogram_plot, line_plot
from orpco.plotting import create_placeholder, hconcat_resize, save_panels, vconcat_resize


def panel(h, w, value=0):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[:] = value
    return img


class TestConcat:
    def test_placeholder_color(self):
        img = create_placeholder(10, 20, (1, 2, 3))
        assert img.shape == (10, 20, 3)
        assert tuple(img[5, 5]) == (1, 2, 3)

    def test_hconcat_scales_taller_image(self):
        out = hconcat_resize(panel(100, 50), panel(50, 40))
        assert out.shape == (50, 25 + 40, 3)

    def test_vconcat_scales_wider_image(self):
        out = vconcat_resize(panel(40, 100), panel(30, 50))
        assert out.shape == (20 + 30, 50, 3)


class TestComposeGrid:
    def test_pads_last_row(self):
        grid = compose_grid([panel(10, 20, v) for v in (10, 20, 30)], columns=2)
        assert grid.shape == (20, 40, 3)
        # the padding panel is white
        assert tuple(grid[15, 30]) == (255, 255, 255)
        assert tuple(grid[15, 5]) == (30, 30, 30)

    def test_single_column(self):
        assert compose_grid([panel(10, 20)] * 3, columns=1).shape == (30, 20, 3)

    def test_empty(self):
        with pytest.raises(ValueError, match="at least one panel"):
            compose_grid([], columns=2)

    def test_bad_columns(self):
        with pytest.raises(ValueError, match="columns"):
            compose_grid([panel(5, 5)], columns=0)


class TestPlots:
    def test_line_plot_size_and_ink(self):
        img = line_plot(
            {"rp": ([1, 2, 3], [0.1, 0.5, 0.4]), "f1": ([1, 2, 3], [0.2, 0.1, np.nan])},
            title="returns",
            size=(200, 300),
            bands={"rp": [0.05, 0.05, 0.05]},
        )
        assert img.shape == (200, 300, 3)
        assert img.dtype == np.uint8
        assert (img != 255).any()

    def test_line_plot_constant_series(self):
        img = line_plot({"flat": ([0, 1], [2.0, 2.0])}, size=(120, 200))
        assert img.shape == (120, 200, 3)

    def test_histogram(self):
        rng = np.random.default_rng(0)
        img = histogram_plot({"logged": rng.normal(size=200), "random": rng.normal(1.0, size=200)}, bins=10)
        assert img.shape == (360, 480, 3)

    def test_histogram_all_non_finite(self):
        img = histogram_plot({"empty": [np.nan, np.inf]}, size=(100, 160))
        assert img.shape == (100, 160, 3)


class TestSavePanels:
    def test_writes_png(self, tmp_path):
        path = save_panels([panel(30, 40, 100), panel(30, 40, 200)], tmp_path / "figs" / "grid.png")
        img = cv2.imread(str(path))
        assert img.shape == (30, 80, 3)
