'''Video clips, datasets and the manifest that describes them on disk.

manifest.json schema:

```
{"num_classes": 4, "height": 48, "width": 64,
 "videos": [{"id": "clip_000",
             "frames": ["clip_000/frames/00000.ppm", ...],
             "labels": {"0": "clip_000/labels/00000.pgm", ...}}]}
```

Paths are relative to the manifest's directory. Extra top-level keys (the
generator records its config under "generator") are ignored.
'''

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import torch
from torch import Tensor

from ..errors import DataIOError, ManifestError
from ..modules.functional import IGNORE_LABEL
from .netpbm import read_pgm, read_ppm

__all__ = ['VideoClip', 'VideoDataset', 'load_manifest', 'load_clip_dir',
           'frame_to_tensor', 'MANIFEST_NAME']

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def frame_to_tensor(rgb: np.ndarray) -> Tensor:
    '''(H, W, 3) uint8 -> (3, H, W) float32 with values in [0, 255].'''
    return torch.from_numpy(np.ascontiguousarray(rgb.transpose(2, 0, 1))).float()


@dataclass
class VideoClip:
    '''Ordered frames plus dense or sparse label maps.

    Attributes:
      id: clip name.
      frames: (3, H, W) float32 tensors with values in [0, 255].
      labels: frame index -> (H, W) uint8 label map, 255 = ignore.
    '''
    id: str
    frames: List[Tensor]
    labels: Dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    @property
    def size(self) -> Tuple[int, int]:
        return tuple(self.frames[0].shape[1:])

    def stacked(self) -> Tensor:
        return torch.stack(self.frames)


@dataclass
class VideoDataset:
    num_classes: int
    height: int
    width: int
    clips: List[VideoClip]

    def __len__(self):
        return len(self.clips)

    def __getitem__(self, idx) -> VideoClip:
        return self.clips[idx]

    def labeled_frames(self) -> List[Tuple[int, int]]:
        '''All (clip index, frame index) pairs that carry a label map.'''
        return [(c, i) for c, clip in enumerate(self.clips)
                for i in sorted(clip.labels)]


def _check_label(label: np.ndarray, num_classes: int, where: str):
    bad = (label >= num_classes) & (label != IGNORE_LABEL)
    if bad.any():
        raise ManifestError(f"{where}: label value {int(label[bad][0])} is "
                            f">= num_classes={num_classes}")


def _require(ok: bool, message: str):
    if not ok:
        raise ManifestError(message)


def load_manifest(path) -> VideoDataset:
    '''Loads and validates a dataset. `path` is the manifest file or the
    directory holding manifest.json.'''
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    root = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, 'r') as fh:
            manifest = json.load(fh)
    except OSError as e:
        raise DataIOError(f"Cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"Manifest {path} is not valid JSON: {e}") from e

    _require(isinstance(manifest, dict), f"{path}: top level must be an object")
    for key in ('num_classes', 'height', 'width', 'videos'):
        _require(key in manifest, f"{path}: missing key '{key}'")
    num_classes, height, width = (manifest['num_classes'], manifest['height'],
                                  manifest['width'])
    for key in ('num_classes', 'height', 'width'):
        _require(isinstance(manifest[key], int) and manifest[key] > 0,
                 f"{path}: '{key}' must be a positive integer")
    _require(isinstance(manifest['videos'], list),
             f"{path}: 'videos' must be a list")

    clips = []
    for v, video in enumerate(manifest['videos']):
        where = f"{path}: videos[{v}]"
        _require(isinstance(video, dict), f"{where} must be an object")
        _require(isinstance(video.get('id'), str), f"{where}: missing 'id'")
        where = f"{path}: video '{video['id']}'"
        frame_paths = video.get('frames')
        _require(isinstance(frame_paths, list) and len(frame_paths) > 0,
                 f"{where}: 'frames' must be a non-empty list")
        label_paths = video.get('labels', {})
        _require(isinstance(label_paths, dict),
                 f"{where}: 'labels' must be an object")

        frames = []
        for rel in frame_paths:
            frame_path = os.path.join(root, rel)
            _require(os.path.isfile(frame_path),
                     f"{where}: missing frame file {frame_path}")
            rgb = read_ppm(frame_path)
            _require(rgb.shape[:2] == (height, width),
                     f"{where}: frame {frame_path} is {rgb.shape[0]}x"
                     f"{rgb.shape[1]}, manifest says {height}x{width}")
            frames.append(frame_to_tensor(rgb))

        labels = {}
        for key, rel in label_paths.items():
            _require(str(key).isdigit(),
                     f"{where}: label index {key!r} is not an integer")
            index = int(key)
            _require(index < len(frames),
                     f"{where}: label index {index} is outside the "
                     f"{len(frames)} frames")
            label_path = os.path.join(root, rel)
            _require(os.path.isfile(label_path),
                     f"{where}: missing label file {label_path}")
            label = read_pgm(label_path)
            _require(label.shape == (height, width),
                     f"{where}: label {label_path} is {label.shape[0]}x"
                     f"{label.shape[1]}, manifest says {height}x{width}")
            _check_label(label, num_classes, label_path)
            labels[index] = label

        clips.append(VideoClip(video['id'], frames, labels))

    logger.debug("Loaded %d clips from %s", len(clips), path)
    return VideoDataset(num_classes, height, width, clips)


def _sorted_files(directory, suffix):
    return sorted(f for f in os.listdir(directory) if f.endswith(suffix))


def load_clip_dir(directory, num_classes: int = None) -> VideoClip:
    '''Loads a single clip directory: frames from `frames/` (or `*.ppm`
    directly inside it), labels from `labels/` when present. Frame indices
    follow the sorted file names; a label belongs to the frame with the
    same file stem.'''
    if not os.path.isdir(directory):
        raise DataIOError(f"Clip directory {directory} does not exist")
    frame_dir = os.path.join(directory, 'frames')
    if not os.path.isdir(frame_dir):
        frame_dir = directory
    names = _sorted_files(frame_dir, '.ppm')
    if not names:
        raise ManifestError(f"{directory}: no .ppm frames found")
    frames = [frame_to_tensor(read_ppm(os.path.join(frame_dir, n)))
              for n in names]
    size = tuple(frames[0].shape[1:])
    for n, frame in zip(names, frames):
        _require(tuple(frame.shape[1:]) == size,
                 f"{directory}: frame {n} differs in size from {names[0]}")

    labels = {}
    label_dir = os.path.join(directory, 'labels')
    if os.path.isdir(label_dir):
        stems = {os.path.splitext(n)[0]: i for i, n in enumerate(names)}
        for n in _sorted_files(label_dir, '.pgm'):
            stem = os.path.splitext(n)[0]
            _require(stem in stems,
                     f"{directory}: label {n} has no matching frame")
            label = read_pgm(os.path.join(label_dir, n))
            _require(label.shape == size,
                     f"{directory}: label {n} differs in size from the frames")
            if num_classes is not None:
                _check_label(label, num_classes, os.path.join(label_dir, n))
            labels[stems[stem]] = label

    clip_id = os.path.basename(os.path.normpath(directory))
    return VideoClip(clip_id, frames, labels)
