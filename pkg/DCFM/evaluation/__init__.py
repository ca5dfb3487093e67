"""
Accuracy (mIoU, wIoU, pixel accuracy), temporal consistency (VC_l, mVC_l)
and the feature-coherence diagnostic of fused features.
"""

from .metrics import *

__all__ = [
    'ConfusionMatrix',
    'MetricsReport',
    'miou',
    'wiou',
    'per_class_iou',
    'video_consistency',
    'mvc',
    'cosine_similarity_map',
    'mean_coherence',
    'evaluate_clips',
    'evaluate_directories',
]
