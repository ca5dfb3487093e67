'''Symmetric training.

Every iteration draws pairs (x_l, y_l, x_u) of a labeled frame and one of
its temporal neighbors. x_l is used twice: as a keyframe supervised by

    l_i = CE(decode(fuse(common_l, indep_l)), y_l)

and as a non-key frame that borrows the neighbor's common feature,

    l_b = CE(decode(fuse(common_u, indep_l)), y_l).

The consistency term pulls the neighbor's fused feature toward the labeled
frame's fused feature wherever both keyframe predictions agree:

    l_c = mse_masked(fused_u, fused_l, argmax(coarse_u) == argmax(coarse_l))

and the objective is l_i + lambda_b * l_b + lambda_c * l_c.
'''

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor
from tqdm import tqdm

from DCFM.errors import ConfigError, DataIOError, NonFiniteError, ShapeError
from DCFM.modules import functional as fn
from DCFM.modules.optim import make_optimizer, poly_lr, sgd_step
from DCFM.data.manifest import VideoDataset

from .config import TrainConfig
from .dcfm_net import DCFMNet

__all__ = ['LossBreakdown', 'TrainingPair', 'TrainingResult',
           'trainable_frames', 'sample_pair_indices', 'sample_training_pair',
           'compute_mask', 'compute_joint_loss', 'make_param_groups',
           'train_step', 'train']

logger = logging.getLogger(__name__)

# iterations between INFO progress lines, independent of the JSON log
_INFO_EVERY = 100


@dataclass
class LossBreakdown:
    '''Scalar values of one evaluation of the joint loss. Disabled terms
    are reported as 0.'''
    l_i: float = 0.
    l_b: float = 0.
    l_c: float = 0.
    total: float = 0.
    mask_fraction: float = 0.

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class TrainingPair:
    '''x_l and x_u are (3, H, W) float frames, y_l an (H, W) long label map.'''
    x_l: Tensor
    y_l: Tensor
    x_u: Tensor
    clip_index: int = 0
    l: int = 0
    u: int = 0


@dataclass
class TrainingResult:
    records: List[Dict] = field(default_factory=list)
    final: LossBreakdown = field(default_factory=LossBreakdown)
    iterations: int = 0


def trainable_frames(dataset: VideoDataset) -> List[Tuple[int, int]]:
    '''Labeled (clip, frame) pairs that have at least one neighbor. Labeled
    frames of single-frame clips are dropped with a warning.'''
    candidates = []
    for c, l in dataset.labeled_frames():
        if len(dataset[c]) < 2:
            logger.warning("Skipping labeled frame %d of clip '%s': the clip "
                           "has no second frame to pair it with",
                           l, dataset[c].id)
            continue
        candidates.append((c, l))
    return candidates


def sample_pair_indices(dataset: VideoDataset, rng: np.random.Generator,
                        candidates: Sequence[Tuple[int, int]] = None) \
        -> Tuple[int, int, int]:
    '''
    Draws (clip index, l, u): a labeled frame l uniformly over the dataset,
    then u = l - 1 or l + 1 uniformly among the neighbors inside the clip.

    Args:
      dataset: the training set.
      rng: the single sampling stream of a training run.
      candidates: precomputed `trainable_frames(dataset)`.
    '''
    if candidates is None:
        candidates = trainable_frames(dataset)
    if not candidates:
        raise ConfigError("The dataset has no labeled frame with a temporal "
                          "neighbor to train on")
    c, l = candidates[int(rng.integers(len(candidates)))]
    n = len(dataset[c])
    neighbors = [i for i in (l - 1, l + 1) if 0 <= i < n]
    if len(neighbors) == 1:
        return c, l, neighbors[0]
    return c, l, neighbors[int(rng.integers(2))]


def sample_training_pair(dataset: VideoDataset, rng: np.random.Generator,
                         flip: bool = False,
                         candidates: Sequence[Tuple[int, int]] = None) \
        -> TrainingPair:
    '''Samples a pair and, if `flip`, mirrors all three tensors
    horizontally with probability 1/2 (drawn from the same stream).'''
    c, l, u = sample_pair_indices(dataset, rng, candidates)
    clip = dataset[c]
    x_l, x_u = clip.frames[l], clip.frames[u]
    y_l = torch.from_numpy(clip.labels[l].astype(np.int64))
    if flip and rng.random() < 0.5:
        x_l, y_l, x_u = (torch.flip(t, dims=[-1]) for t in (x_l, y_l, x_u))
    return TrainingPair(x_l, y_l, x_u, c, l, u)


def compute_mask(coarse_u: Tensor, coarse_l: Tensor) -> Tensor:
    '''1 where both coarse predictions pick the same class, else 0.

    Works on (Cls, h, w) or (N, Cls, h, w); ties go to the lowest class
    index. The mask carries no gradient.'''
    if coarse_u.shape != coarse_l.shape:
        raise ShapeError(f"compute_mask operands differ: "
                         f"{tuple(coarse_u.shape)} vs {tuple(coarse_l.shape)}")
    with torch.no_grad():
        agree = coarse_u.argmax(dim=-3) == coarse_l.argmax(dim=-3)
    return agree.to(coarse_u.dtype)


def _pair_mean(values: List[Tensor]) -> Tensor:
    return torch.stack(values).mean()


def compute_joint_loss(model: DCFMNet, x_l: Tensor, y_l: Tensor, x_u: Tensor,
                       cfg: TrainConfig) -> Tuple[LossBreakdown, Tensor]:
    '''
    Joint loss of a pair, or of a batch of pairs stacked along dim 0.

    Returns the breakdown and the total as a differentiable scalar. Both
    frames run a full keyframe pass; the neighbor x_u receives no direct
    supervision. Its pass is skipped when neither l_b nor l_c is enabled.
    Over a batch every term is evaluated per pair and then averaged, so
    each pair weighs the same whatever its ignored pixels or mask size.
    '''
    if x_l.dim() == 3:
        x_l, y_l, x_u = x_l.unsqueeze(0), y_l.unsqueeze(0), x_u.unsqueeze(0)
    n = x_l.shape[0]
    if y_l.dim() != 3 or y_l.shape[0] != n or x_u.shape != x_l.shape:
        raise ShapeError(f"A batch of pairs needs matching leading dims, got "
                         f"x_l {tuple(x_l.shape)}, y_l {tuple(y_l.shape)}, "
                         f"x_u {tuple(x_u.shape)}")

    pair_l, coarse_l, full_l = model.keyframe_forward(x_l)
    zero = full_l.sum() * 0.
    terms = {'l_i': zero, 'l_b': zero, 'l_c': zero}
    mask_fraction = 0.

    if cfg.use_li:
        terms['l_i'] = _pair_mean([fn.softmax_cross_entropy(full_l[i], y_l[i])
                                   for i in range(n)])

    if cfg.use_lb or cfg.use_lc:
        pair_u, coarse_u, _ = model.keyframe_forward(x_u)
        mask = compute_mask(coarse_u, coarse_l)
        mask_fraction = mask.mean().item()
        if cfg.use_lb:
            # x_l as a non-key frame of the keyframe x_u
            _, full_b = model.decode(model.fuse(pair_u.common, pair_l.indep))
            terms['l_b'] = _pair_mean(
                [fn.softmax_cross_entropy(full_b[i], y_l[i]) for i in range(n)])
        if cfg.use_lc:
            terms['l_c'] = _pair_mean(
                [fn.mse_masked(pair_u.fused[i], pair_l.fused[i], mask[i])
                 for i in range(n)])

    total = terms['l_i'] + cfg.lambda_b * terms['l_b'] \
        + cfg.lambda_c * terms['l_c']
    values = [t.detach().item() for t in (terms['l_i'], terms['l_b'],
                                          terms['l_c'], total)]
    return LossBreakdown(*values, mask_fraction), total


def make_param_groups(model: DCFMNet, cfg: TrainConfig) -> List[Dict]:
    '''Encoder parameters at the base rate, fusion and decoder at
    `decoder_lr_mult` times it.'''
    return [{'params': model.encoder_parameters(), 'lr_mult': 1.},
            {'params': model.head_parameters(),
             'lr_mult': cfg.decoder_lr_mult}]


def _stack(pairs: Sequence[TrainingPair]) -> Tuple[Tensor, Tensor, Tensor]:
    return (torch.stack([p.x_l for p in pairs]),
            torch.stack([p.y_l for p in pairs]),
            torch.stack([p.x_u for p in pairs]))


def train_step(model: DCFMNet, optimizer: torch.optim.Optimizer,
               pairs: Sequence[TrainingPair], cfg: TrainConfig,
               iteration: int) -> LossBreakdown:
    '''One optimizer update on a batch of pairs at poly_lr(iteration).

    Raises NonFiniteError with the iteration, learning rate and loss terms
    if the loss or its gradient turns NaN/Inf; the parameters are left
    untouched in that case.'''
    lr = poly_lr(iteration, cfg.iters, cfg.base_lr, cfg.poly_power)
    x_l, y_l, x_u = _stack(pairs)
    dtype = next(model.parameters()).dtype
    x_l, x_u = x_l.to(dtype), x_u.to(dtype)

    breakdown = None
    try:
        breakdown, total = compute_joint_loss(model, x_l, y_l, x_u, cfg)
        fn.backward(total)
        for name, param in model.named_parameters():
            if param.grad is not None:
                fn.check_finite(param.grad, f"gradient of {name}")
    except NonFiniteError as e:
        optimizer.zero_grad(set_to_none=True)
        values = breakdown.to_dict() if breakdown is not None else 'n/a'
        raise NonFiniteError(f"Training diverged at iteration {iteration} "
                             f"(lr={lr:.6g}, losses={values}): {e}") from e

    sgd_step(optimizer, lr)
    return breakdown


def train(model: DCFMNet, dataset: VideoDataset, cfg: TrainConfig,
          log_path: Optional[str] = None, progress: bool = True) \
        -> TrainingResult:
    '''
    Runs `cfg.iters` steps of symmetric training in place on `model`.

    Pair sampling and flips come from one stream seeded with `cfg.seed`;
    parameter initialization is seeded by the model config, so the
    trained parameters are a deterministic function of both configs and
    the data.

    Args:
      model: network to train, float32 or float64.
      dataset: labeled clips.
      cfg: training settings.
      log_path: if given, one JSON object per logged iteration is written
        there: {iter, lr, l_i, l_b, l_c, total, mask_fraction}.
      progress: show a tqdm progress bar.
    '''
    if len(dataset) == 0:
        raise ConfigError("Cannot train on an empty dataset")
    candidates = trainable_frames(dataset)
    if not candidates:
        raise ConfigError("The dataset has no labeled frame with a temporal "
                          "neighbor to train on")

    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(make_param_groups(model, cfg), cfg.momentum,
                               cfg.optimizer, cfg.weight_decay)
    model.train()
    result = TrainingResult()

    log_file = None
    if log_path is not None:
        try:
            log_file = open(log_path, 'w')
        except OSError as e:
            raise DataIOError(f"Cannot write training log {log_path}: {e}") from e

    logger.info("Training for %d iterations, batch %d, %d labeled frames",
                cfg.iters, cfg.batch, len(candidates))
    try:
        bar = tqdm(range(cfg.iters), desc='Training', disable=not progress)
        for it in bar:
            pairs = [sample_training_pair(dataset, rng, cfg.flip, candidates)
                     for _ in range(cfg.batch)]
            breakdown = train_step(model, optimizer, pairs, cfg, it)
            result.final = breakdown
            result.iterations = it + 1

            last = it == cfg.iters - 1
            if it % cfg.log_every == 0 or last:
                lr = poly_lr(it, cfg.iters, cfg.base_lr, cfg.poly_power)
                record = {'iter': it, 'lr': lr, **breakdown.to_dict()}
                result.records.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record, sort_keys=True) + '\n')
                bar.set_postfix(total=f"{breakdown.total:.4f}")
            if it % _INFO_EVERY == 0 or last:
                logger.info("iter %d/%d  total %.4f  l_i %.4f  l_b %.4f  "
                            "l_c %.5f  mask %.3f", it, cfg.iters,
                            breakdown.total, breakdown.l_i, breakdown.l_b,
                            breakdown.l_c, breakdown.mask_fraction)
    finally:
        if log_file is not None:
            log_file.close()

    model.eval()
    if not math.isfinite(result.final.total):
        raise NonFiniteError(f"Final loss is not finite: {result.final}")
    return result
