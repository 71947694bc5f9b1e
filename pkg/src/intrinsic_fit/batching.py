"""
Posed-image datasets and pixel batch sampling for the intrinsic fit.

Dataset layout: a directory of PNG/PFM images plus `manifest.txt`, one line
per image: file name, 3x3 intrinsics (row-major), 3x4 camera-to-world
matrix (row-major). Resolution is taken from the image itself.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from src.field_core.camera import CameraModel
from src.utils.errors import ConfigError, DataError, InvalidArgumentError
from src.utils.image_io import read_image
from src.utils.logger import get_logger

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.txt"
FAR_MIN_DISTANCE = 8
_NEIGHBOURS = np.array([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)])


@dataclass
class PosedImage:
    name: str
    image: np.ndarray
    camera: CameraModel


@dataclass
class PixelBatch:
    """Main rays with one adjacent and one far partner each, all from one image"""

    image_index: int
    rows: np.ndarray
    cols: np.ndarray
    adj_rows: np.ndarray
    adj_cols: np.ndarray
    far_rows: np.ndarray
    far_cols: np.ndarray
    colors: np.ndarray
    colors_adj: np.ndarray
    colors_far: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def validate(self) -> None:
        if len(self) < 2:
            raise InvalidArgumentError("a pixel batch needs at least 2 rays")
        adj = np.maximum(np.abs(self.adj_rows - self.rows), np.abs(self.adj_cols - self.cols))
        far = np.maximum(np.abs(self.far_rows - self.rows), np.abs(self.far_cols - self.cols))
        if np.any(adj != 1) or np.any(far < FAR_MIN_DISTANCE):
            raise InvalidArgumentError("adjacent/far partners violate the pixel distance rules")

    def all_pixels(self):
        """(rows, cols) of main, adjacent and far rays concatenated in that order"""
        return (np.concatenate([self.rows, self.adj_rows, self.far_rows]),
                np.concatenate([self.cols, self.adj_cols, self.far_cols]))


class PosedImageLoader:
    """Loads a posed image directory and reports what it found"""

    def __init__(self, data_dir, manifest_name: str = MANIFEST_NAME):
        self.data_dir = Path(data_dir)
        self.manifest_path = self.data_dir / manifest_name
        self.entries = None
        self.images: List[PosedImage] = []
        self.stats = {}

    def read_manifest(self) -> pd.DataFrame:
        """[1/3] Parse the manifest into a table of file names and 21 camera numbers"""
        if not self.manifest_path.exists():
            raise ConfigError(f"manifest not found: {self.manifest_path}")
        rows = []
        for lineno, line in enumerate(self.manifest_path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 22:
                raise ConfigError(f"{self.manifest_path.name}:{lineno}: expected name + 21 numbers, "
                                  f"got {len(tokens)} tokens")
            try:
                numbers = [float(t) for t in tokens[1:]]
            except ValueError:
                raise ConfigError(f"{self.manifest_path.name}:{lineno}: non-numeric camera values")
            rows.append([tokens[0]] + numbers)
        if not rows:
            raise ConfigError(f"manifest {self.manifest_path} lists no images")
        self.entries = pd.DataFrame(rows, columns=["file"] + [f"c{i}" for i in range(21)])
        self.stats["manifest_entries"] = len(self.entries)
        logger.info(f"✓ Read {len(self.entries)} manifest entries")
        return self.entries

    def load_images(self) -> List[PosedImage]:
        """[2/3] Decode every listed image and attach its camera"""
        self.images = []
        for record in self.entries.itertuples(index=False):
            path = self.data_dir / record.file
            if not path.exists():
                raise ConfigError(f"image listed in manifest is missing: {path}")
            image = read_image(path).astype(np.float64)
            height, width = image.shape[:2]
            camera = CameraModel.from_numbers(width, height, list(record)[1:])
            self.images.append(PosedImage(record.file, image, camera))
        self.stats["images_loaded"] = len(self.images)
        return self.images

    def validate(self) -> None:
        """[3/3] Require two or more views large enough for far-pixel pairing"""
        if len(self.images) < 2:
            raise ConfigError(f"need at least 2 posed images, found {len(self.images)}")
        for posed in self.images:
            h, w = posed.image.shape[:2]
            if max(h, w) - 1 < FAR_MIN_DISTANCE or min(h, w) < 2:
                raise DataError(f"image {posed.name} ({w}x{h}) is too small for pixel pairing")
        self.stats["pixels"] = int(sum(p.image.shape[0] * p.image.shape[1] for p in self.images))

    def load(self) -> List[PosedImage]:
        logger.info(f"Loading posed images from {self.data_dir}")
        self.read_manifest()
        self.load_images()
        self.validate()
        logger.info(f"✓ Loaded {self.stats['images_loaded']} views, {self.stats['pixels']} pixels")
        return self.images


def load_posed_images(data_dir) -> List[PosedImage]:
    return PosedImageLoader(data_dir).load()


def write_manifest(data_dir, entries) -> Path:
    """Write (file name, camera) pairs as a manifest"""
    lines = []
    for name, camera in entries:
        numbers = camera.to_line().split()[2:]
        lines.append(" ".join([name] + numbers))
    path = Path(data_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


# =============================================================================
# Pixel sampling

def _reflect(index: np.ndarray, step: np.ndarray, size: int) -> np.ndarray:
    moved = index + step
    return np.where((moved < 0) | (moved >= size), index - step, moved)


def _chebyshev(r0, c0, r1, c1):
    return np.maximum(np.abs(r1 - r0), np.abs(c1 - c0))


def sample_pixel_batch(image: np.ndarray, batch_size: int, rng: np.random.Generator,
                       image_index: int = 0, far_min: int = FAR_MIN_DISTANCE,
                       max_rounds: int = 64) -> PixelBatch:
    """Uniform main pixels; adjacent partner uniform among the 8 neighbours
    (reflected at borders); far partner uniform at Chebyshev distance >= far_min."""
    if batch_size < 2:
        raise InvalidArgumentError(f"batch_size must be >= 2, got {batch_size}")
    height, width = image.shape[:2]

    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    reach = np.maximum.reduce([rr, height - 1 - rr, cc, width - 1 - cc])
    candidates = np.flatnonzero(reach >= far_min)
    if candidates.size == 0:
        raise DataError(f"no pixel of a {width}x{height} image has a partner at distance >= {far_min}")

    flat = candidates[rng.integers(0, candidates.size, batch_size)]
    rows, cols = np.divmod(flat, width)

    step = _NEIGHBOURS[rng.integers(0, len(_NEIGHBOURS), batch_size)]
    adj_rows = _reflect(rows, step[:, 0], height)
    adj_cols = _reflect(cols, step[:, 1], width)

    far_rows = np.empty_like(rows)
    far_cols = np.empty_like(cols)
    pending = np.ones(batch_size, dtype=bool)
    for _ in range(max_rounds):
        n = pending.sum()
        if n == 0:
            break
        r = rng.integers(0, height, n)
        c = rng.integers(0, width, n)
        ok = _chebyshev(rows[pending], cols[pending], r, c) >= far_min
        idx = np.flatnonzero(pending)[ok]
        far_rows[idx], far_cols[idx] = r[ok], c[ok]
        pending[idx] = False
    if pending.any():
        # farthest corner always qualifies for a candidate pixel
        corner_rows = np.where(rows[pending] < height / 2, height - 1, 0)
        corner_cols = np.where(cols[pending] < width / 2, width - 1, 0)
        far_rows[pending], far_cols[pending] = corner_rows, corner_cols

    return PixelBatch(image_index, rows, cols, adj_rows, adj_cols, far_rows, far_cols,
                      colors=image[rows, cols, :3].astype(np.float64),
                      colors_adj=image[adj_rows, adj_cols, :3].astype(np.float64),
                      colors_far=image[far_rows, far_cols, :3].astype(np.float64))
