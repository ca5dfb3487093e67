''' segmentation accuracy and temporal consistency '''

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor

from DCFM.errors import ConfigError, DataIOError, LabelError, MetricError, ShapeError
from DCFM.modules.functional import IGNORE_LABEL
from DCFM.data.netpbm import read_pgm

__all__ = ['ConfusionMatrix', 'MetricsReport', 'miou', 'wiou',
           'per_class_iou', 'video_consistency', 'mvc',
           'cosine_similarity_map', 'mean_coherence', 'evaluate_clips',
           'evaluate_directories']

logger = logging.getLogger(__name__)


class ConfusionMatrix(object):
    '''Pixel counts, rows = ground truth, columns = prediction. Pixels with
    the ignore label in the ground truth are not counted.'''

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred, gt):
        ''' add one (pred, gt) pair of label maps '''
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction {pred.shape} and ground truth "
                             f"{gt.shape} differ in shape")
        valid = gt != IGNORE_LABEL
        p = pred[valid].astype(np.int64)
        g = gt[valid].astype(np.int64)
        n = self.num_classes
        if p.size and (p.min() < 0 or p.max() >= n):
            bad = p[(p < 0) | (p >= n)][0]
            raise LabelError(f"predicted class {bad} outside [0, {n})")
        if g.size and (g.min() < 0 or g.max() >= n):
            bad = g[(g < 0) | (g >= n)][0]
            raise LabelError(f"ground-truth class {bad} outside [0, {n}) and "
                             f"not the ignore label")
        self.counts += np.bincount(n * g + p, minlength=n * n).reshape(n, n)

    def reset(self):
        self.counts[:] = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _check(self):
        if self.total == 0:
            raise MetricError("Confusion matrix is empty, no pixel was scored")

    def per_class_iou(self) -> List[Optional[float]]:
        '''TP / (TP + FP + FN) per class; None where the class appears in
        neither ground truth nor prediction.'''
        self._check()
        tp = np.diag(self.counts).astype(np.float64)
        denominator = self.counts.sum(0) + self.counts.sum(1) - tp
        return [float(t / d) if d > 0 else None for t, d in zip(tp, denominator)]

    def miou(self) -> float:
        '''mean IoU over the classes present in the ground truth'''
        iou = self.per_class_iou()
        present = self.counts.sum(1) > 0
        return float(np.mean([iou[c] for c in np.flatnonzero(present)]))

    def wiou(self) -> float:
        '''IoU weighted by each class's share of ground-truth pixels'''
        iou = self.per_class_iou()
        freq = self.counts.sum(1) / self.total
        return float(sum(f * iou[c] for c, f in enumerate(freq) if f > 0))

    def pixel_accuracy(self) -> float:
        self._check()
        return float(np.trace(self.counts) / self.total)


def miou(cm: ConfusionMatrix) -> float:
    return cm.miou()


def wiou(cm: ConfusionMatrix) -> float:
    return cm.wiou()


def per_class_iou(cm: ConfusionMatrix) -> List[Optional[float]]:
    return cm.per_class_iou()


def video_consistency(preds: Sequence, gts: Sequence, l: int) -> float:
    '''
    VC_l of one video.

    For every window of l adjacent frames, G is the set of pixels whose
    ground truth keeps one label through the window, and A the subset of
    G where the prediction also keeps that same label in every frame. The
    window scores |A| / |G|; windows with empty G are skipped. Returns the
    mean over scored windows, 0.0 (with a warning) if none was scored.

    Args:
      preds, gts: per-frame (H, W) label maps, equal counts.
      l: window length, 1 <= l <= number of frames.
    '''
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions for {len(gts)} ground "
                         f"truth frames")
    n = len(gts)
    if l < 1 or l > n:
        raise ConfigError(f"window length {l} must lie in [1, {n}]")
    pred = np.stack([np.asarray(p) for p in preds])
    gt = np.stack([np.asarray(g) for g in gts])
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction maps {pred.shape[1:]} and ground truth "
                         f"maps {gt.shape[1:]} differ in shape")

    scores = []
    for i in range(n - l + 1):
        g = gt[i:i + l]
        p = pred[i:i + l]
        stable = (g == g[0]).all(0) & (g[0] != IGNORE_LABEL)
        if not stable.any():
            logger.debug("VC_%d: window %d has no stable ground truth, "
                         "skipped", l, i)
            continue
        correct = (p == g[0]).all(0) & stable
        scores.append(correct.sum() / stable.sum())
    if not scores:
        logger.warning("VC_%d: no window had stable ground truth, reporting 0",
                       l)
        return 0.
    return float(np.mean(scores))


def mvc(per_video_vc: Sequence[float]) -> float:
    '''Unweighted mean of per-video VC values.'''
    if len(per_video_vc) == 0:
        raise MetricError("mVC needs at least one video")
    return float(np.mean(per_video_vc))


_NEIGHBORS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
              if (dy, dx) != (0, 0)]


def cosine_similarity_map(fused: Tensor) -> Tensor:
    '''
    Mean cosine similarity of every pixel's channel vector with its
    in-bounds 8-neighbors.

    Args:
      fused: (C, h, w) feature map with h, w >= 3. A zero vector has
        similarity 0 with everything.

    Returns:
      (h, w) map.
    '''
    if fused.dim() != 3:
        raise ShapeError(f"expected (C, h, w), got {tuple(fused.shape)}")
    c, h, w = fused.shape
    if h < 3 or w < 3:
        raise ShapeError(f"cosine_similarity_map needs h, w >= 3, got {h}x{w}")
    x = fused.detach()
    norm = x.norm(dim=0)
    padded = torch.nn.functional.pad(x, (1, 1, 1, 1))
    padded_norm = torch.nn.functional.pad(norm, (1, 1, 1, 1))
    inside = torch.nn.functional.pad(torch.ones_like(norm), (1, 1, 1, 1))

    total = torch.zeros_like(norm)
    count = torch.zeros_like(norm)
    for dy, dx in _NEIGHBORS:
        ys = slice(1 + dy, 1 + dy + h)
        xs = slice(1 + dx, 1 + dx + w)
        dot = (x * padded[:, ys, xs]).sum(0)
        denominator = norm * padded_norm[ys, xs]
        sim = torch.where(denominator > 0, dot / denominator.clamp_min(1e-30),
                          torch.zeros_like(dot))
        total += sim * inside[ys, xs]
        count += inside[ys, xs]
    return total / count


def mean_coherence(fused: Tensor) -> float:
    '''Spatial mean of `cosine_similarity_map`, averaged over a batch if
    `fused` is (N, C, h, w).'''
    if fused.dim() == 4:
        return float(np.mean([mean_coherence(f) for f in fused]))
    return float(cosine_similarity_map(fused).mean())


@dataclass
class MetricsReport:
    miou: float = 0.
    wiou: float = 0.
    per_class_iou: List[Optional[float]] = field(default_factory=list)
    mvc: Dict[str, Optional[float]] = field(default_factory=dict)
    frames_scored: int = 0
    pixel_accuracy: float = 0.

    def to_dict(self) -> Dict:
        return asdict(self)


def evaluate_clips(clips: Sequence[Sequence], num_classes: int,
                   vc_lengths: Sequence[int] = (8, 16),
                   adjacent: Sequence[bool] = None) -> MetricsReport:
    '''
    Scores a set of videos.

    Args:
      clips: per video a list of (pred, gt) label-map pairs in frame order.
      num_classes: size of the confusion matrix.
      vc_lengths: window lengths l of the reported mVC_l. Videos with fewer
        than l frames are left out of mVC_l; if no video qualifies the
        value is None.
      adjacent: per video, whether consecutive entries are consecutive
        frames. Videos marked False count towards IoU only.
    '''
    cm = ConfusionMatrix(num_classes)
    per_l = {l: [] for l in vc_lengths}
    frames = 0
    if adjacent is None:
        adjacent = [True] * len(clips)
    if len(adjacent) != len(clips):
        raise ConfigError(f"{len(adjacent)} adjacency flags for {len(clips)} "
                          f"videos")
    for video, consecutive in zip(clips, adjacent):
        preds = [p for p, _ in video]
        gts = [g for _, g in video]
        for p, g in video:
            cm.accumulate(p, g)
        frames += len(video)
        if not consecutive:
            continue
        for l in vc_lengths:
            if len(video) >= l:
                per_l[l].append(video_consistency(preds, gts, l))
            else:
                logger.debug("Video of %d frames is too short for VC_%d",
                             len(video), l)

    mvc_values = {}
    for l, values in per_l.items():
        if values:
            mvc_values[str(l)] = mvc(values)
        else:
            logger.warning("No video has %d adjacent frames, mVC_%d is "
                           "undefined", l, l)
            mvc_values[str(l)] = None
    return MetricsReport(miou=cm.miou(), wiou=cm.wiou(),
                         per_class_iou=cm.per_class_iou(), mvc=mvc_values,
                         frames_scored=frames,
                         pixel_accuracy=cm.pixel_accuracy())


def _label_files(directory) -> Dict[str, str]:
    '''stem -> path of the label maps of one clip directory'''
    for candidate in (directory, os.path.join(directory, 'labels')):
        if os.path.isdir(candidate):
            names = sorted(f for f in os.listdir(candidate) if f.endswith('.pgm'))
            if names:
                return {os.path.splitext(n)[0]: os.path.join(candidate, n)
                        for n in names}
    return {}


def _clip_dirs(root) -> Dict[str, Dict[str, str]]:
    '''clip name -> label files; `root` is a clip itself or holds clips'''
    if not os.path.isdir(root):
        raise DataIOError(f"Directory {root} does not exist")
    own = _label_files(root)
    if own:
        return {'': own}
    clips = {}
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isdir(path):
            files = _label_files(path)
            if files:
                clips[name] = files
    if not clips:
        raise DataIOError(f"No .pgm label maps found under {root}")
    return clips


def _frame_order(stems) -> Tuple[List[str], bool]:
    '''
    Stems in frame order and whether they are consecutive frames.

    All-numeric stems are ordered by value and are consecutive only
    without gaps; other stems are taken in sorted order as adjacent.
    '''
    stems = list(stems)
    if not all(s.isdigit() for s in stems):
        return sorted(stems), True
    stems.sort(key=int)
    numbers = [int(s) for s in stems]
    return stems, all(b - a == 1 for a, b in zip(numbers, numbers[1:]))


def evaluate_directories(pred_dir, gt_dir, vc_lengths: Sequence[int] = (8, 16),
                         num_classes: int = None) -> MetricsReport:
    '''
    Scores predicted label maps against ground truth on disk.

    Both directories are either one clip (PGMs directly inside or under
    `labels/`) or a set of clip subdirectories matched by name. Frames are
    matched by file stem; ground-truth frames without a prediction are an
    error, predictions without ground truth are ignored. Numeric stems
    with gaps (sparse ground truth) are scored for IoU but left out of
    mVC. `num_classes` defaults to the largest class id seen plus one.
    '''
    preds = _clip_dirs(pred_dir)
    gts = _clip_dirs(gt_dir)
    if set(preds) == {''} or set(gts) == {''}:
        if len(preds) != 1 or len(gts) != 1:
            raise DataIOError(f"Cannot match a single clip in {pred_dir} "
                              f"against a clip set in {gt_dir}")
        pairs = [(next(iter(preds.values())), next(iter(gts.values())))]
    else:
        missing = sorted(set(gts) - set(preds))
        if missing:
            raise DataIOError(f"No predictions for clips {missing} in {pred_dir}")
        pairs = [(preds[name], gts[name]) for name in sorted(gts)]

    clips = []
    adjacent = []
    seen = 0
    for pred_files, gt_files in pairs:
        video = []
        stems, consecutive = _frame_order(gt_files)
        if not consecutive:
            logger.warning("Ground truth %s skips frames, its clip is left "
                           "out of mVC", os.path.dirname(gt_files[stems[0]]))
        adjacent.append(consecutive)
        for stem in stems:
            if stem not in pred_files:
                raise DataIOError(f"No prediction for ground truth "
                                  f"{gt_files[stem]}")
            p = read_pgm(pred_files[stem])
            g = read_pgm(gt_files[stem])
            seen = max(seen, int(p.max()), int(g[g != IGNORE_LABEL].max(initial=0)))
            video.append((p, g))
        clips.append(video)

    if num_classes is None:
        num_classes = seen + 1
    logger.info("Scoring %d clips, %d classes", len(clips), num_classes)
    return evaluate_clips(clips, num_classes, vc_lengths, adjacent)
