"""Top-down raster of an overlap estimate: kept points gray, downweighted points red."""
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from ..errors import GeometryError

BACKGROUND = (255, 255, 255)
INSIDE_COLOR = (110, 110, 110)
OUTSIDE_COLOR = (220, 30, 30)
MARGIN = 16


def render_weights_preview(output_path: Path, layers: Sequence[Tuple[np.ndarray, np.ndarray]],
                           size: int = 800, point_radius: int = 1) -> Path:
    """
    Draw each (points, weights) layer projected onto the x-y plane.

    Args:
        output_path: PNG to write
        layers: (N×3 points, N weights) pairs, all in one common frame
        size: Image width and height in pixels
        point_radius: Dot radius in pixels

    Returns:
        Path to the saved image
    """
    if not layers or all(len(points) == 0 for points, _ in layers):
        raise GeometryError('nothing to draw: every layer is empty')

    stacked = np.concatenate([np.asarray(points)[:, :2] for points, _ in layers if len(points)])
    low = stacked.min(axis=0)
    span = float((stacked.max(axis=0) - low).max()) or 1.0
    scale = (size - 2 * MARGIN) / span

    img = Image.new('RGB', (size, size), BACKGROUND)
    draw = ImageDraw.Draw(img)

    for points, weights in layers:
        weights = np.asarray(weights)
        pixels = (np.asarray(points)[:, :2] - low) * scale + MARGIN
        # Kept points first so the red ones stay visible on top
        for mask, color in ((weights >= 1.0, INSIDE_COLOR), (weights < 1.0, OUTSIDE_COLOR)):
            for x, y in pixels[mask]:
                # Image rows grow downward
                row = size - y
                draw.ellipse([x - point_radius, row - point_radius, x + point_radius, row + point_radius],
                             fill=color)

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    img.save(output_path, 'PNG')
    return output_path
