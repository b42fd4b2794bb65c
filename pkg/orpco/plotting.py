"""Figure panels rendered with OpenCV and composed into grids.

Panels are BGR uint8 images. Plots are intentionally plain: axes box, min/max
tick labels, one colored polyline or bar set per series, and a legend box.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from .errors import DataError
from .logging_config import get_logger


logger = get_logger("plotting")

PALETTE: Tuple[Tuple[int, int, int], ...] = (
    (180, 119, 31),
    (14, 127, 255),
    (44, 160, 44),
    (40, 39, 214),
    (189, 103, 148),
    (75, 86, 140),
    (194, 119, 227),
)


@dataclass
class PlotStyle:
    """Fonts, colors and margins shared by all panels."""

    font: int = cv2.FONT_HERSHEY_SIMPLEX
    font_scale: float = 0.45
    thickness: int = 1
    line_thickness: int = 2
    background: Tuple[int, int, int] = (255, 255, 255)
    foreground: Tuple[int, int, int] = (40, 40, 40)
    margin_left: int = 70
    margin_right: int = 20
    margin_top: int = 36
    margin_bottom: int = 44


def create_placeholder(height: int, width: int, color: Tuple[int, int, int] = (255, 255, 255)) -> np.ndarray:
    """Blank panel used to fill incomplete grid rows."""
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = color
    return img


def vconcat_resize(img1: np.ndarray, img2: np.ndarray) -> np.ndarray:
    """Stack vertically; the wider image is scaled down to the narrower width."""
    h1, w1 = img1.shape[:2]
    h2, w2 = img2.shape[:2]
    if w1 > w2:
        img1 = cv2.resize(img1, (w2, int(h1 * w2 / w1)), interpolation=cv2.INTER_AREA)
    elif w2 > w1:
        img2 = cv2.resize(img2, (w1, int(h2 * w1 / w2)), interpolation=cv2.INTER_AREA)
    return cv2.vconcat([img1, img2])


def hconcat_resize(img1: np.ndarray, img2: np.ndarray) -> np.ndarray:
    """Place side by side; the taller image is scaled down to the shorter height."""
    h1, w1 = img1.shape[:2]
    h2, w2 = img2.shape[:2]
    if h1 > h2:
        img1 = cv2.resize(img1, (int(w1 * h2 / h1), h2), interpolation=cv2.INTER_AREA)
    elif h2 > h1:
        img2 = cv2.resize(img2, (int(w2 * h1 / h2), h1), interpolation=cv2.INTER_AREA)
    return cv2.hconcat([img1, img2])


def compose_grid(panels: Sequence[np.ndarray], columns: int) -> np.ndarray:
    """
    Arrange panels row-major into a grid of ``columns`` columns.

    The last row is padded with placeholders of the first panel's size.
    """
    if not panels:
        raise ValueError("compose_grid needs at least one panel")
    if columns < 1:
        raise ValueError(f"columns must be >= 1, got {columns}")
    h, w = panels[0].shape[:2]
    padded = list(panels)
    while len(padded) % columns:
        padded.append(create_placeholder(h, w))
    rows = []
    for start in range(0, len(padded), columns):
        row = padded[start]
        for panel in padded[start + 1 : start + columns]:
            row = hconcat_resize(row, panel)
        rows.append(row)
    grid = rows[0]
    for row in rows[1:]:
        grid = vconcat_resize(grid, row)
    return grid


class _Axes:
    """Maps data coordinates into the plotting box of one panel."""

    def __init__(self, size: Tuple[int, int], xlim, ylim, style: PlotStyle):
        self.height, self.width = size
        self.style = style
        self.x0, self.x1 = _padded_limits(*xlim)
        self.y0, self.y1 = _padded_limits(*ylim)
        self.left = style.margin_left
        self.right = self.width - style.margin_right
        self.top = style.margin_top
        self.bottom = self.height - style.margin_bottom

    def to_pixels(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        px = self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)
        py = self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)
        return np.stack([px, py], axis=-1).round().astype(np.int32)

    def draw_frame(self, img: np.ndarray, title: str, xlabel: str, ylabel: str) -> None:
        s = self.style
        cv2.rectangle(img, (self.left, self.top), (self.right, self.bottom), s.foreground, s.thickness)

        def put(text: str, org: Tuple[int, int]) -> None:
            cv2.putText(img, text, org, s.font, s.font_scale, s.foreground, s.thickness, cv2.LINE_AA)

        put(title, (self.left, self.top - 14))
        put(f"{self.x0:.3g}", (self.left, self.bottom + 16))
        put(f"{self.x1:.3g}", (self.right - 40, self.bottom + 16))
        put(xlabel, ((self.left + self.right) // 2 - 4 * len(xlabel), self.bottom + 34))
        put(f"{self.y1:.3g}", (4, self.top + 10))
        put(f"{self.y0:.3g}", (4, self.bottom))
        put(ylabel, (4, (self.top + self.bottom) // 2))

    def draw_legend(self, img: np.ndarray, labels: Sequence[str]) -> None:
        s = self.style
        for i, label in enumerate(labels):
            y = self.top + 16 + 16 * i
            color = PALETTE[i % len(PALETTE)]
            cv2.line(img, (self.right - 110, y - 4), (self.right - 90, y - 4), color, s.line_thickness)
            cv2.putText(
                img, label[:14], (self.right - 84, y), s.font, s.font_scale, s.foreground,
                s.thickness, cv2.LINE_AA,
            )


def _padded_limits(lo: float, hi: float) -> Tuple[float, float]:
    lo, hi = float(lo), float(hi)
    if not np.isfinite(lo) or not np.isfinite(hi):
        return 0.0, 1.0
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_plot(
    series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    size: Tuple[int, int] = (360, 480),
    bands: Optional[Dict[str, Sequence[float]]] = None,
    style: Optional[PlotStyle] = None,
) -> np.ndarray:
    """
    One polyline per named ``(x, y)`` series.

    ``bands`` maps a series name to per-point half-widths drawn as vertical
    error bars.
    """
    style = style or PlotStyle()
    bands = bands or {}
    arrays = [(np.asarray(x, float), np.asarray(y, float)) for x, y in series.values()]
    xs = np.concatenate([x for x, _ in arrays]) if arrays else np.zeros(1)
    ys = [y for _, y in arrays]
    for name, (_, y) in series.items():
        if name in bands:
            half = np.asarray(bands[name], float)
            ys += [np.asarray(y, float) - half, np.asarray(y, float) + half]
    ys = np.concatenate(ys) if ys else np.zeros(1)
    ys = ys[np.isfinite(ys)]
    axes = _Axes(
        size,
        (xs.min(), xs.max()),
        (ys.min() if ys.size else 0.0, ys.max() if ys.size else 1.0),
        style,
    )
    img = create_placeholder(*size, color=style.background)
    for i, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        points = axes.to_pixels(x, y)
        keep = np.isfinite(np.asarray(y, float))
        cv2.polylines(img, [points[keep].reshape(-1, 1, 2)], False, color, style.line_thickness, cv2.LINE_AA)
        if name in bands:
            half = np.asarray(bands[name], float)
            lows = axes.to_pixels(x, np.asarray(y, float) - half)
            highs = axes.to_pixels(x, np.asarray(y, float) + half)
            for lo, hi in zip(lows[keep], highs[keep]):
                cv2.line(img, tuple(int(v) for v in lo), tuple(int(v) for v in hi), color, 1)
    axes.draw_frame(img, title, xlabel, ylabel)
    axes.draw_legend(img, list(series))
    return img


def histogram_plot(
    samples: Dict[str, Sequence[float]],
    bins: int = 30,
    title: str = "",
    xlabel: str = "",
    size: Tuple[int, int] = (360, 480),
    style: Optional[PlotStyle] = None,
) -> np.ndarray:
    """Overlaid density histograms on shared bins, drawn as step outlines."""
    style = style or PlotStyle()
    values = [np.asarray(v, float)[np.isfinite(v)] for v in samples.values()]
    pooled = np.concatenate(values) if values else np.zeros(1)
    if pooled.size == 0:
        pooled = np.zeros(1)
    edges = np.histogram_bin_edges(pooled, bins=bins)
    densities = [np.histogram(v, bins=edges, density=v.size > 0)[0] for v in values]
    top = max((d.max() for d in densities if d.size), default=1.0)
    axes = _Axes(size, (edges[0], edges[-1]), (0.0, top), style)
    img = create_placeholder(*size, color=style.background)
    for i, density in enumerate(densities):
        color = PALETTE[i % len(PALETTE)]
        xs = np.repeat(edges, 2)[1:-1]
        ys = np.repeat(density, 2)
        points = axes.to_pixels(xs, ys)
        cv2.polylines(img, [points.reshape(-1, 1, 2)], False, color, style.line_thickness, cv2.LINE_AA)
    axes.draw_frame(img, title, xlabel, "density")
    axes.draw_legend(img, list(samples))
    return img


def save_png(image: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), image):
        raise DataError(f"could not write image {path}")
    logger.info(f"Wrote figure {path} ({image.shape[1]}x{image.shape[0]})")
    return path


def save_panels(
    panels: List[np.ndarray], path: Union[str, Path], columns: int = 2
) -> Path:
    """Compose ``panels`` into a grid and write it as PNG."""
    return save_png(compose_grid(panels, columns), path)
