"""
Everything that touches disk: netpbm frames and label maps, dataset
manifests, the synthetic moving-shapes generator and model files.
"""

from .netpbm import *
from .manifest import *
from .synthetic import *
from .serialization import *

__all__ = [
    'read_ppm',
    'write_ppm',
    'read_pgm',
    'write_pgm',
    'read_netpbm',
    'VideoClip',
    'VideoDataset',
    'load_manifest',
    'load_clip_dir',
    'frame_to_tensor',
    'generate_synthetic',
    'render_clip',
    'rasterize_labels',
    'save_model',
    'load_model',
]
