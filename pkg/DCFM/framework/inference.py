'''Video inference with cached common features.

Keyframes run the full network and publish their common feature into a
two-slot cache (previous / next keyframe). Every other frame only runs the
shallow stage and is decoded against the cached features:

* mode 'P': the latest keyframe at or before the frame.
* mode 'B': the keyframes on both sides, merged as 0.5 * (a + b). The
  frames in between have to wait until the next keyframe is computed.

Frames before the first keyframe use the first keyframe only, frames after
the last keyframe the last keyframe only, in both modes.
'''

import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor

from DCFM.errors import ConfigError, ShapeError

from .config import ScheduleConfig
from .dcfm_net import DCFMNet

__all__ = ['frame_score', 'next_keyframe_index', 'schedule_keyframes',
           'keyframe_sources', 'merge_predictions', 'KeyframeCache',
           'FrameTiming', 'FramePrediction', 'EngineReport', 'run_video',
           'latency_report', 'benchmark_video', 'sweep_keyframe_interval']

logger = logging.getLogger(__name__)


def frame_score(x_i: Tensor, x_j: Tensor) -> float:
    '''mean(|x_i - x_j|) over all channels and pixels, on the [0, 255] scale.'''
    if x_i.shape != x_j.shape:
        raise ShapeError(f"cannot score frames of shapes {tuple(x_i.shape)} "
                         f"and {tuple(x_j.shape)}")
    return float((x_i.double() - x_j.double()).abs().mean())


def next_keyframe_index(frames: Sequence[Tensor], t_p: int,
                        cfg: ScheduleConfig) -> Optional[int]:
    '''
    Adaptive keyframe scheduling: the first frame at least `min_k` after
    t_p whose score against keyframe t_p exceeds the threshold, or the last
    frame if none does. None once t_p is the last frame.
    '''
    n = len(frames)
    if t_p >= n - 1:
        return None
    t_s = min(t_p + cfg.min_k, n - 1)
    while t_s < n - 1 and frame_score(frames[t_s], frames[t_p]) <= cfg.threshold:
        t_s += 1
    return t_s


def schedule_keyframes(frames: Sequence[Tensor], cfg: ScheduleConfig) -> List[int]:
    '''All keyframe indices of a clip under `cfg.policy`.'''
    n = len(frames)
    cfg.check_clip(n)
    if cfg.policy == 'fixed':
        return list(range(cfg.first_key, n, cfg.K))
    keys = [cfg.first_key]
    while True:
        t_s = next_keyframe_index(frames, keys[-1], cfg)
        if t_s is None:
            return keys
        logger.debug("adaptive schedule: keyframe %d after %d", t_s, keys[-1])
        keys.append(t_s)


def keyframe_sources(j: int, keys: Sequence[int], mode: str) -> Tuple[int, ...]:
    '''Keyframes whose common features a frame j is decoded against.'''
    if j in keys:
        return (j,)
    prev = [k for k in keys if k < j]
    nxt = [k for k in keys if k > j]
    if not prev:
        return (nxt[0],)
    if mode == 'P' or not nxt:
        return (prev[-1],)
    return (prev[-1], nxt[0])


def merge_predictions(logits_a: Tensor, logits_b: Tensor) -> Tensor:
    '''Average of two logit maps with weights exactly 1/2.'''
    if logits_a.shape != logits_b.shape:
        raise ShapeError(f"cannot merge logits of shapes "
                         f"{tuple(logits_a.shape)} and {tuple(logits_b.shape)}")
    return 0.5 * (logits_a + logits_b)


@dataclass
class KeyframeCache:
    '''Common features of the previous (p) and the newest (s) keyframe.

    Stored features are never modified; `publish` shifts s into p.'''
    t_p: Optional[int] = None
    f_p: Optional[Tensor] = None
    t_s: Optional[int] = None
    f_s: Optional[Tensor] = None

    def publish(self, t: int, feature: Tensor):
        assert self.t_s is None or t > self.t_s, \
            f"keyframe {t} published after keyframe {self.t_s}"
        self.t_p, self.f_p = self.t_s, self.f_s
        self.t_s, self.f_s = t, feature

    def features(self, indices: Sequence[int]) -> List[Tensor]:
        slots = {self.t_p: self.f_p, self.t_s: self.f_s}
        assert all(i in slots and slots[i] is not None for i in indices), \
            f"keyframes {list(indices)} are not cached (have {self.t_p}, {self.t_s})"
        return [slots[i] for i in indices]


@dataclass
class FrameTiming:
    '''Wall time of one frame in milliseconds, split by stage. `head_ms`
    covers fusion and decoding (twice for a merged B-mode frame).'''
    index: int
    is_key: bool
    enc_lo_ms: float = 0.
    enc_hi_ms: float = 0.
    head_ms: float = 0.

    @property
    def total_ms(self) -> float:
        return self.enc_lo_ms + self.enc_hi_ms + self.head_ms


@dataclass
class FramePrediction:
    '''
    Attributes:
      index: frame index.
      label: (H, W) uint8 argmax of `logits`.
      logits: (Cls, H, W) full-resolution logits, cropped to the frame.
      sources: keyframes the frame was decoded against.
      common: for keyframes run with `keep_features`, the cached common
        feature the non-key frames were decoded with (padded resolution).
    '''
    index: int
    label: np.ndarray
    logits: Optional[Tensor]
    sources: Tuple[int, ...]
    common: Optional[Tensor] = None

    @property
    def is_key(self) -> bool:
        return self.sources == (self.index,)


@dataclass
class EngineReport:
    keyframe_indices: List[int] = field(default_factory=list)
    timings: List[FrameTiming] = field(default_factory=list)
    t_k_mean: float = 0.
    t_n_mean: float = 0.
    avg_ms_per_frame: float = 0.
    latency_ms: float = 0.
    policy: str = 'fixed'
    K: int = 2
    min_k: int = 1
    S: float = 0.
    mode: str = 'B'

    def to_dict(self, with_timings: bool = True) -> Dict:
        out = asdict(self)
        if with_timings:
            out['timings'] = [dict(asdict(t), total_ms=t.total_ms)
                              for t in self.timings]
        else:
            del out['timings']
        return out


def latency_report(timings: Sequence[FrameTiming], cfg: ScheduleConfig) -> Dict:
    '''
    Summary timings of a run.

    t_k_mean and t_n_mean are the mean totals of key and non-key frames
    (t_n_mean is 0 without non-key frames). Under the fixed policy
    avg_ms_per_frame = ((K - 1) t_n + t_k) / K; under the adaptive policy
    it is the empirical mean, and K below is the mean keyframe interval.
    Latency is t_k in mode P and t_k + (K - 1) t_n in mode B, which has to
    wait for the next keyframe and the frames queued before it.
    '''
    keys = [t.total_ms for t in timings if t.is_key]
    nonkeys = [t.total_ms for t in timings if not t.is_key]
    if not keys:
        raise ConfigError("latency_report needs at least one keyframe timing")
    t_k = float(np.mean(keys))
    t_n = float(np.mean(nonkeys)) if nonkeys else 0.

    if cfg.policy == 'fixed':
        k = cfg.K
        avg = ((k - 1) * t_n + t_k) / k
    else:
        k = len(timings) / len(keys)
        avg = float(np.mean([t.total_ms for t in timings]))
    latency = t_k if cfg.mode == 'P' else t_k + (k - 1) * t_n
    return {'t_k_mean': t_k, 't_n_mean': t_n, 'avg_ms_per_frame': avg,
            'latency_ms': latency}


class _Clock:
    '''Accumulates perf_counter intervals into the fields of a FrameTiming.'''

    def __init__(self, timing: FrameTiming):
        self.timing = timing
        self.t = time.perf_counter()

    def lap(self, name: str):
        now = time.perf_counter()
        setattr(self.timing, name,
                getattr(self.timing, name) + 1000. * (now - self.t))
        self.t = now


def _prepare(frames) -> Tuple[List[Tensor], Tuple[int, int]]:
    frames = list(frames.frames if hasattr(frames, 'frames') else frames)
    if not frames:
        raise ConfigError("cannot run inference on an empty clip")
    size = tuple(frames[0].shape)
    for i, frame in enumerate(frames):
        if frame.dim() != 3 or tuple(frame.shape) != size:
            raise ShapeError(f"frame {i} has shape {tuple(frame.shape)}, "
                             f"expected {size}")
    return frames, size[1:]


class _Runner:
    '''Runs the network stage by stage on padded frames and crops the
    full-resolution logits back to the frame size.'''

    def __init__(self, model: DCFMNet, frames: List[Tensor], size, keep_logits,
                 keep_features=False):
        self.model = model
        self.dtype = next(model.parameters()).dtype
        self.frames = frames
        self.size = size
        self.keep_logits = keep_logits
        self.keep_features = keep_features

    def _frame(self, j):
        padded, _ = self.model.pad_frame(self.frames[j].to(self.dtype))
        return padded

    def _emit(self, j, full, sources) -> FramePrediction:
        full = self.model.crop(full, self.size)
        label = full.argmax(dim=0).to(torch.uint8).numpy()
        return FramePrediction(j, label, full if self.keep_logits else None,
                               tuple(sources))

    def keyframe(self, j) -> Tuple[FramePrediction, FrameTiming, Tensor]:
        model = self.model
        timing = FrameTiming(j, True)
        clock = _Clock(timing)
        x = self._frame(j)
        raw = model.enc_lo_forward(x)
        clock.lap('enc_lo_ms')
        common = model.extract_common(raw)
        clock.lap('enc_hi_ms')
        _, full = model.decode(model.fuse(common, model.normalize_indep(raw)))
        clock.lap('head_ms')
        pred = self._emit(j, full, (j,))
        if self.keep_features:
            pred.common = common
        return pred, timing, common

    def nonkey(self, j, sources, commons) -> Tuple[FramePrediction, FrameTiming]:
        model = self.model
        timing = FrameTiming(j, False)
        clock = _Clock(timing)
        x = self._frame(j)
        indep = model.normalize_indep(model.enc_lo_forward(x))
        clock.lap('enc_lo_ms')
        logits = [model.decode(model.fuse(c, indep))[1] for c in commons]
        full = logits[0] if len(logits) == 1 else merge_predictions(*logits)
        clock.lap('head_ms')
        return self._emit(j, full, sources), timing


def _run_reference(runner: _Runner, n: int, keys: List[int], mode: str):
    '''Streams through the clip in order with a two-slot cache.'''
    keyset = set(keys)
    cache = KeyframeCache()
    out = {}
    pending = []

    def flush(frames):
        for j in frames:
            # before the first keyframe or after the newest one
            if cache.t_p is None or j > cache.t_s:
                sources = (cache.t_s,)
            elif mode == 'P':
                sources = (cache.t_p,)
            else:
                sources = (cache.t_p, cache.t_s)
            out[j] = runner.nonkey(j, sources, cache.features(sources))

    for j in range(n):
        if j in keyset:
            pred, timing, common = runner.keyframe(j)
            cache.publish(j, common)
            out[j] = (pred, timing)
            flush(pending)
            pending = []
        elif mode == 'P' and cache.t_s is not None:
            flush([j])
        else:
            pending.append(j)
    flush(pending)
    return [out[j] for j in range(n)]


def _run_pipelined(runner: _Runner, n: int, keys: List[int], mode: str,
                   workers: int):
    '''Keyframes first, in order; then all non-key frames on a thread pool.
    The cached features are only read by the workers.'''
    commons = {}
    out = {}
    for k in keys:
        pred, timing, common = runner.keyframe(k)
        commons[k] = common
        out[k] = (pred, timing)

    def work(j):
        sources = keyframe_sources(j, keys, mode)
        # grad mode is thread-local
        with torch.inference_mode():
            return j, runner.nonkey(j, sources, [commons[s] for s in sources])

    nonkeys = [j for j in range(n) if j not in commons]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for j, result in pool.map(work, nonkeys):
            out[j] = result
    return [out[j] for j in range(n)]


def run_video(model: DCFMNet, frames, cfg: ScheduleConfig, workers: int = 0,
              keep_logits: bool = True, keep_features: bool = False) \
        -> Tuple[List[FramePrediction], EngineReport]:
    '''
    Segments every frame of a clip.

    Args:
      model: trained network.
      frames: a VideoClip or a list of (3, H, W) frames with values in
        [0, 255]. Sizes that are not multiples of 16 are padded and the
        outputs cropped back.
      cfg: keyframe policy and mode.
      workers: if > 0, non-key frames run on a thread pool of this size
        after all keyframes are computed. The outputs are identical to the
        sequential path.
      keep_logits: also return the full-resolution logits.
      keep_features: attach each keyframe's cached common feature to its
        prediction.

    Returns:
      per-frame predictions in frame order and the run report.
    '''
    frames, size = _prepare(frames)
    keys = schedule_keyframes(frames, cfg)
    model.eval()
    runner = _Runner(model, frames, size, keep_logits, keep_features)
    with torch.inference_mode():
        if workers > 0:
            results = _run_pipelined(runner, len(frames), keys, cfg.mode, workers)
        else:
            results = _run_reference(runner, len(frames), keys, cfg.mode)

    predictions = [p for p, _ in results]
    timings = [t for _, t in results]
    report = EngineReport(keyframe_indices=keys, timings=timings,
                          policy=cfg.policy, K=cfg.K, min_k=cfg.min_k,
                          S=cfg.threshold, mode=cfg.mode,
                          **latency_report(timings, cfg))
    logger.debug("run_video: %d frames, keyframes %s, %.2f ms/frame",
                 len(frames), keys, report.avg_ms_per_frame)
    return predictions, report


def benchmark_video(model: DCFMNet, frames, cfg: ScheduleConfig,
                    reps: int = 3, warmup: int = 1) -> EngineReport:
    '''
    Runs `run_video` `warmup + reps` times and reports, per frame and
    stage, the median over the last `reps` runs.
    '''
    if reps < 3:
        raise ConfigError(f"benchmarking needs reps >= 3, got {reps}")
    runs = []
    for r in range(warmup + reps):
        _, report = run_video(model, frames, cfg, keep_logits=False)
        if r >= warmup:
            runs.append(report)

    timings = []
    for per_frame in zip(*(run.timings for run in runs)):
        first = per_frame[0]
        timings.append(FrameTiming(
            first.index, first.is_key,
            statistics.median(t.enc_lo_ms for t in per_frame),
            statistics.median(t.enc_hi_ms for t in per_frame),
            statistics.median(t.head_ms for t in per_frame)))
    base = runs[0]
    return EngineReport(keyframe_indices=base.keyframe_indices,
                        timings=timings, policy=cfg.policy, K=cfg.K,
                        min_k=cfg.min_k, S=cfg.threshold, mode=cfg.mode,
                        **latency_report(timings, cfg))


def sweep_keyframe_interval(model: DCFMNet, clip, cfg: ScheduleConfig,
                            intervals: Sequence[int], reps: int = 3,
                            num_classes: int = None) -> List[Dict]:
    '''
    Speed and, for labeled clips, accuracy of the fixed policy for every
    keyframe interval in `intervals`.

    Each entry holds K, the timing summary and, when `clip` has labels,
    `key_miou` / `nonkey_miou` over the labeled key and non-key frames
    (None if a group has no labeled frame).
    '''
    from DCFM.evaluation.metrics import ConfusionMatrix

    labels = getattr(clip, 'labels', {}) or {}
    if num_classes is None:
        num_classes = model.config.num_classes
    rows = []
    for k in intervals:
        run_cfg = ScheduleConfig(**dict(cfg.to_dict(), policy='fixed', K=k))
        report = benchmark_video(model, clip, run_cfg, reps)
        row = {'K': k, **report.to_dict(with_timings=False)}
        if labels:
            predictions, _ = run_video(model, clip, run_cfg, keep_logits=False)
            groups = {True: ConfusionMatrix(num_classes),
                      False: ConfusionMatrix(num_classes)}
            for j, gt in labels.items():
                groups[predictions[j].is_key].accumulate(predictions[j].label, gt)
            row['key_miou'] = groups[True].miou() if groups[True].total else None
            row['nonkey_miou'] = groups[False].miou() if groups[False].total else None
        logger.info("K=%d: %.3f ms/frame", k, report.avg_ms_per_frame)
        rows.append(row)
    return rows
