'''Finite-difference checks of the analytic gradients.

`loss_gradcheck` compares the gradient of the full joint loss with central
differences on a sample of individual parameters, in float64.
`check_operators` runs torch.autograd.gradcheck on the numeric operations
the network is written with.
'''

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import torch

from DCFM.errors import ConfigError
from DCFM.modules import functional as fn

from .config import ModelConfig, TrainConfig
from .dcfm_net import DCFMNet
from .training import compute_joint_loss

__all__ = ['GradcheckEntry', 'GradcheckReport', 'relative_error',
           'sample_parameters', 'loss_gradcheck', 'check_operators']

logger = logging.getLogger(__name__)


@dataclass
class GradcheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    entries: List[GradcheckEntry] = field(default_factory=list)
    tolerance: float = 1e-4
    # tensors left out because their whole gradient vanishes
    zero_grad: List[str] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def per_parameter(self) -> Dict[str, float]:
        worst = {}
        for e in self.entries:
            worst[e.name] = max(worst.get(e.name, 0.), e.rel_error)
        return worst

    def to_dict(self) -> Dict:
        return {'max_rel_error': self.max_rel_error, 'passed': self.passed,
                'tolerance': self.tolerance, 'samples': len(self.entries),
                'per_parameter': self.per_parameter(),
                'zero_grad': self.zero_grad}


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    '''|a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients
    from turning round-off into large relative errors.'''
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def sample_parameters(model: torch.nn.Module, samples: int,
                      rng: np.random.Generator, min_grad: float = None) \
        -> List[Tuple[str, int]]:
    '''
    (parameter name, flat index) pairs, visiting the parameter tensors
    round-robin so every layer is covered once samples >= #tensors.

    With `min_grad` set, only entries whose `.grad` exceeds it in magnitude
    are drawn, and tensors without such an entry are left out.
    '''
    pool = []
    for name, p in fn.param_store(model):
        if min_grad is None:
            pool.append((name, None, p.numel()))
        elif p.grad is not None:
            live = torch.nonzero(p.grad.view(-1).abs() > min_grad).view(-1)
            if len(live):
                pool.append((name, live, len(live)))
    if not pool:
        raise ConfigError("No parameter has a gradient above "
                         f"{min_grad} to check")
    picks = []
    for s in range(samples):
        name, live, n = pool[s % len(pool)]
        index = int(rng.integers(n))
        picks.append((name, index if live is None else int(live[index])))
    return picks


def loss_gradcheck(seed: int = 1, size: Tuple[int, int] = (16, 16),
                   classes: int = 3, samples: int = 100, eps: float = 1e-5,
                   tolerance: float = 1e-4, train_cfg: TrainConfig = None,
                   min_grad: float = 1e-10) -> GradcheckReport:
    '''
    Joint-loss gradient check on a random pair of frames.

    Only entries with an analytic gradient above `min_grad` are sampled.
    At 16x16 the common feature is 1x1, channel_norm maps it to exactly 0
    and the whole deep stage has a vanishing gradient; such tensors are
    listed in `report.zero_grad` instead of being compared 0 against 0.

    Args:
      seed: seeds the network, the frames, the labels and the sampled
        parameters.
      size: (H, W) of the frames, multiples of 16.
      classes: number of classes.
      samples: number of scalar parameters checked.
      eps: finite-difference step.
      tolerance: pass threshold on the maximum relative error.
      train_cfg: loss weights and switches, defaults to TrainConfig().
      min_grad: smallest analytic gradient magnitude worth checking.
    '''
    cfg = train_cfg if train_cfg is not None else TrainConfig()
    model = DCFMNet(ModelConfig(num_classes=classes, seed=seed)).double()
    h, w = size

    gen = torch.Generator().manual_seed(seed)
    x_l = torch.rand(3, h, w, generator=gen, dtype=torch.float64) * 255.
    x_u = (x_l + 20. * torch.randn(3, h, w, generator=gen,
                                   dtype=torch.float64)).clamp(0., 255.)
    y_l = torch.randint(0, classes, (h, w), generator=gen)

    _, total = compute_joint_loss(model, x_l, y_l, x_u, cfg)
    model.zero_grad(set_to_none=True)
    fn.backward(total)

    params = dict(fn.param_store(model))
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance=tolerance)
    report.zero_grad = [n for n, p in params.items()
                        if p.grad is None or not (p.grad.abs() > min_grad).any()]
    if report.zero_grad:
        logger.warning("gradcheck: %d parameter tensors have no gradient "
                       "above %g at %dx%d and are skipped",
                       len(report.zero_grad), min_grad, h, w)
    with torch.no_grad():
        for name, index in sample_parameters(model, samples, rng, min_grad):
            p = params[name]
            flat = p.view(-1)
            grad = p.grad.view(-1)[index] if p.grad is not None else 0.
            original = flat[index].item()
            flat[index] = original + eps
            upper = compute_joint_loss(model, x_l, y_l, x_u, cfg)[1].item()
            flat[index] = original - eps
            lower = compute_joint_loss(model, x_l, y_l, x_u, cfg)[1].item()
            flat[index] = original
            numeric = (upper - lower) / (2 * eps)
            analytic = float(grad)
            report.entries.append(GradcheckEntry(
                name, index, analytic, numeric, relative_error(analytic, numeric)))

    logger.info("gradcheck: %d samples, max relative error %.3e",
                len(report.entries), report.max_rel_error)
    for name, err in report.per_parameter().items():
        logger.debug("  %-40s %.3e", name, err)
    return report


def check_operators(seed: int = 0) -> Dict[str, bool]:
    '''torch.autograd.gradcheck of each differentiable operation on small
    float64 inputs. Returns op name -> passed.'''
    gen = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.randn(*shape, generator=gen, dtype=torch.float64,
                           requires_grad=True)

    labels = torch.randint(0, 3, (4, 4), generator=gen)
    labels[0, 0] = fn.IGNORE_LABEL
    mask = (torch.rand(4, 4, generator=gen) < 0.5).double()
    target = torch.randn(2, 4, 4, generator=gen, dtype=torch.float64)

    cases = {
        'conv2d': (lambda x, wt, b: fn.conv2d(x, wt, b, stride=2, pad=1),
                   (rand(2, 5, 5), rand(3, 2, 3, 3), rand(3))),
        'bilinear_resize': (lambda x: fn.bilinear_resize(x, 7, 5),
                            (rand(2, 3, 4),)),
        'channel_norm': (lambda x: fn.channel_norm(x, 1e-5), (rand(2, 3, 3),)),
        'concat_channels': (fn.concat_channels, (rand(2, 3, 3), rand(1, 3, 3))),
        'softmax_cross_entropy': (lambda x: fn.softmax_cross_entropy(x, labels),
                                  (rand(3, 4, 4),)),
        'mse_masked': (lambda a: fn.mse_masked(a, target, mask),
                       (rand(2, 4, 4),)),
    }
    results = {}
    for name, (op, inputs) in cases.items():
        results[name] = bool(torch.autograd.gradcheck(
            op, inputs, eps=1e-6, atol=1e-5, raise_exception=False))
        logger.debug("gradcheck %s: %s", name, results[name])
    return results
