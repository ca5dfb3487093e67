from typing import Dict, Iterable, List, Union

import torch
from torch import Tensor

from ..errors import ConfigError

__all__ = ['poly_lr', 'make_optimizer', 'sgd_step']


def poly_lr(iteration: int, total: int, base: float, power: float) -> float:
    '''Polynomial decay, base * (1 - iteration / total) ** power.'''
    if total < 1 or not 0 <= iteration <= total:
        raise ConfigError(f"poly_lr needs 0 <= iteration <= total and total >= 1, "
                          f"got iteration={iteration}, total={total}")
    return base * (1. - iteration / total) ** power


def make_optimizer(params: Union[Iterable[Tensor], List[Dict]],
                   momentum: float = 0.9, kind: str = 'sgd',
                   weight_decay: float = 0.) -> torch.optim.Optimizer:
    '''Optimizer holding one velocity buffer per parameter.

    `params` may be plain tensors or torch parameter groups. A group may
    carry an `lr_mult` entry that scales the rate passed to `sgd_step`.
    The rate itself is set on every step, so it starts at 0 here.

    For 'sgd' the update is v <- momentum * v + grad; p <- p - lr * v
    (torch's SGD with dampening 0).
    '''
    if kind == 'sgd':
        return torch.optim.SGD(params, lr=0., momentum=momentum,
                               weight_decay=weight_decay)
    elif kind == 'adamw':
        return torch.optim.AdamW(params, lr=0., weight_decay=weight_decay)
    raise ConfigError(f'Unknown optimizer "{kind}", use "sgd" or "adamw"')


def sgd_step(optimizer: torch.optim.Optimizer, lr: float):
    '''Apply one update with learning rate `lr` (times each group's
    `lr_mult`), then clear the gradients.'''
    for group in optimizer.param_groups:
        group['lr'] = lr * group.get('lr_mult', 1.)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
