'''Static cost counting.

Counts the multiply-accumulates of every convolution a call goes through,
by hooking `ConvBlock.forward`. Normalization, resizing and activations are
cheap elementwise work and are not counted. Deterministic, so it stands in
for wall-clock timing wherever timing noise is not acceptable.
'''

from contextlib import contextmanager
from typing import Callable

import torch
import torch.nn as nn

from DCFM.modules import ConvBlock

__all__ = ['count_macs', 'count_flops', 'keyframe_flops', 'nonkey_flops']


@contextmanager
def _conv_hooks(model: nn.Module, tally: list):

    def hook(module, inputs, outputs):
        y = outputs[0]
        tally.append(y.shape[0] * module.macs(tuple(y.shape[1:])))

    handles = [m.register_forward_hook(hook) for m in model.modules()
               if isinstance(m, ConvBlock)]
    try:
        yield
    finally:
        for h in handles:
            h.remove()


def count_macs(model: nn.Module, fn: Callable, *args, **kwargs) -> int:
    '''Multiply-accumulates of all convolutions executed by
    `fn(*args, **kwargs)`, summed over the batch.'''
    tally = []
    with _conv_hooks(model, tally), torch.no_grad():
        fn(*args, **kwargs)
    return int(sum(tally))


def count_flops(model: nn.Module, fn: Callable, *args, **kwargs) -> int:
    '''FLOPs as two per multiply-accumulate.'''
    return 2 * count_macs(model, fn, *args, **kwargs)


def keyframe_flops(model, height: int = 48, width: int = 64) -> int:
    dtype = next(model.parameters()).dtype
    frame = torch.zeros(model.config.in_channels, height, width, dtype=dtype)
    return count_flops(model, model.keyframe_forward, frame)


def nonkey_flops(model, height: int = 48, width: int = 64) -> int:
    dtype = next(model.parameters()).dtype
    frame = torch.zeros(model.config.in_channels, height, width, dtype=dtype)
    common = torch.zeros(model.output_shapes(height, width)['common'],
                         dtype=dtype)
    return count_flops(model, model.nonkey_forward, frame, common)
