'''Deterministic moving-shapes videos with exact per-pixel labels.

Every clip has a smooth textured background (class 0) and
`shapes_per_video` rectangles and disks of classes 1..classes-1 moving with
constant velocities and bouncing off the borders. Shape positions are
analytic functions of the frame index, so any frame can be re-rendered on
its own. Labels are rasterized on pixel centers without anti-aliasing;
later shapes are painted over earlier ones. Noise is added to the frames
only.

Each clip draws from its own stream `default_rng([seed, clip_index])`, so
clips do not depend on each other and the output is byte-identical for a
fixed config.
'''

import colorsys
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from tqdm import tqdm

from ..errors import DataIOError
from ..framework.config import GenConfig
from .manifest import MANIFEST_NAME
from .netpbm import write_pgm, write_ppm

__all__ = ['Shape', 'generate_synthetic', 'render_clip', 'draw_shapes',
           'rasterize_labels', 'reflect', 'clip_id']

logger = logging.getLogger(__name__)


@dataclass
class Shape:
    '''One moving object.

    Attributes:
      kind: 'rect' or 'disk'.
      cls: class id painted into the label map.
      center: (y, x) center at frame 0, in pixels.
      extent: (half height, half width) of a rect; (radius, radius) of a disk.
      velocity: (vy, vx) in pixels per frame.
      color: RGB fill.
    '''
    kind: str
    cls: int
    center: Tuple[float, float]
    extent: Tuple[float, float]
    velocity: Tuple[float, float]
    color: Tuple[float, float, float]

    def position(self, t: int, height: int, width: int) -> Tuple[float, float]:
        '''Center at frame t, reflected so the shape stays inside the frame.'''
        cy = reflect(self.center[0] + self.velocity[0] * t,
                     self.extent[0], height - self.extent[0])
        cx = reflect(self.center[1] + self.velocity[1] * t,
                     self.extent[1], width - self.extent[1])
        return cy, cx

    def mask(self, t: int, height: int, width: int) -> np.ndarray:
        cy, cx = self.position(t, height, width)
        yy = np.arange(height)[:, None] + 0.5
        xx = np.arange(width)[None, :] + 0.5
        if self.kind == 'rect':
            return (np.abs(yy - cy) <= self.extent[0]) \
                & (np.abs(xx - cx) <= self.extent[1])
        r = self.extent[0]
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def reflect(p: float, lo: float, hi: float) -> float:
    '''Folds p back into [lo, hi] like a ball bouncing between two walls.'''
    span = hi - lo
    if span <= 0:
        return lo
    x = (p - lo) % (2 * span)
    if x > span:
        x = 2 * span - x
    return lo + x


def clip_id(index: int) -> str:
    return f"clip_{index:03d}"


def _class_color(cls: int, classes: int) -> np.ndarray:
    # saturated hues, well apart from the gray background
    hue = (cls - 1) / max(1, classes - 1)
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95)) * 255.


def _background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    field = rng.normal(size=(height, width))
    field = gaussian_filter(field, sigma=3., mode='wrap')
    field = field / max(field.std(), 1e-8)
    level = rng.uniform(80., 140.)
    tint = rng.uniform(-10., 10., size=3)
    return level + 20. * field[..., None] + tint


def _sample_shapes(cfg: GenConfig, rng: np.random.Generator) -> List[Shape]:
    h, w = cfg.height, cfg.width
    shapes = []
    for s in range(cfg.shapes_per_video):
        cls = 1 + s % (cfg.classes - 1)
        kind = 'rect' if rng.random() < 0.5 else 'disk'
        if kind == 'rect':
            extent = (rng.uniform(h / 10, h / 5), rng.uniform(w / 10, w / 5))
        else:
            r = rng.uniform(min(h, w) / 10, min(h, w) / 5)
            extent = (r, r)
        center = (rng.uniform(extent[0], h - extent[0]),
                  rng.uniform(extent[1], w - extent[1]))
        speed = rng.uniform(0., cfg.max_speed)
        angle = rng.uniform(0., 2 * np.pi)
        velocity = (speed * np.sin(angle), speed * np.cos(angle))
        jitter = rng.uniform(-15., 15., size=3)
        color = tuple(np.clip(_class_color(cls, cfg.classes) + jitter, 0, 255))
        shapes.append(Shape(kind, cls, center, extent, velocity, color))
    return shapes


def rasterize_labels(shapes: List[Shape], t: int, height: int,
                     width: int) -> np.ndarray:
    '''uint8 (H, W) label map of frame t, painter's order.'''
    label = np.zeros((height, width), dtype=np.uint8)
    for shape in shapes:
        label[shape.mask(t, height, width)] = shape.cls
    return label


def draw_shapes(shapes: List[Shape], background: np.ndarray, t: int) \
        -> np.ndarray:
    '''Noise-free float RGB frame t.'''
    height, width = background.shape[:2]
    frame = background.copy()
    for shape in shapes:
        frame[shape.mask(t, height, width)] = shape.color
    return frame


def render_clip(cfg: GenConfig, index: int) \
        -> Tuple[List[np.ndarray], List[np.ndarray], List[Shape]]:
    '''Renders clip `index` in memory.

    Returns uint8 frames (H, W, 3), dense uint8 label maps (H, W) and the
    shapes they were drawn from.'''
    rng = np.random.default_rng([cfg.seed, index])
    background = _background(rng, cfg.height, cfg.width)
    shapes = _sample_shapes(cfg, rng)

    frames, labels = [], []
    for t in range(cfg.frames_per_video):
        frame = draw_shapes(shapes, background, t)
        if cfg.noise_sigma > 0:
            frame = frame + rng.normal(0., cfg.noise_sigma, size=frame.shape)
        frames.append(np.clip(np.round(frame), 0, 255).astype(np.uint8))
        labels.append(rasterize_labels(shapes, t, cfg.height, cfg.width))
    return frames, labels, shapes


def _labeled_indices(cfg: GenConfig) -> List[int]:
    if cfg.label_mode == 'sparse':
        return [cfg.frames_per_video // 2]
    return list(range(cfg.frames_per_video))


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"Cannot create directory {path}: {e}") from e


def generate_synthetic(cfg: GenConfig, out_dir, progress: bool = True) -> Dict:
    '''Writes a generated set below `out_dir` and returns its manifest.

    Layout: `manifest.json`, `<clip>/frames/NNNNN.ppm`,
    `<clip>/labels/NNNNN.pgm`. Sparse sets label the middle frame only.
    '''
    _makedirs(out_dir)
    videos = []
    for index in tqdm(range(cfg.videos), desc='Generating clips',
                      disable=not progress):
        name = clip_id(index)
        frames, labels, _ = render_clip(cfg, index)
        _makedirs(os.path.join(out_dir, name, 'frames'))
        _makedirs(os.path.join(out_dir, name, 'labels'))

        frame_paths = []
        for t, frame in enumerate(frames):
            rel = f"{name}/frames/{t:05d}.ppm"
            write_ppm(os.path.join(out_dir, rel), frame)
            frame_paths.append(rel)
        label_paths = {}
        for t in _labeled_indices(cfg):
            rel = f"{name}/labels/{t:05d}.pgm"
            write_pgm(os.path.join(out_dir, rel), labels[t])
            label_paths[str(t)] = rel
        videos.append({'id': name, 'frames': frame_paths,
                       'labels': label_paths})

    manifest = {'num_classes': cfg.classes, 'height': cfg.height,
                'width': cfg.width, 'videos': videos,
                'generator': cfg.to_dict()}
    path = os.path.join(out_dir, MANIFEST_NAME)
    try:
        with open(path, 'w') as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write('\n')
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e
    logger.info("Generated %d clips of %d frames in %s", cfg.videos,
                cfg.frames_per_video, out_dir)
    return manifest
