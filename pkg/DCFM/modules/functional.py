'''Numeric operations the DCFM network is built from.

All operations are thin, validating wrappers around torch, so gradients
come from torch autograd. Each accepts an unbatched `(C, H, W)` tensor or
a batched `(N, C, H, W)` one and returns the same rank it was given.
Every result is checked for NaN/Inf, a non-finite value raises
`NonFiniteError` instead of propagating silently.

Precision is whatever dtype the inputs carry: float32 at runtime, float64
(`model.double()`) for finite-difference gradient checks.
'''

from typing import Iterable, List, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor

from ..errors import LabelError, NonFiniteError, ShapeError

__all__ = [
    'IGNORE_LABEL',
    'check_finite',
    'conv2d',
    'bilinear_resize',
    'channel_norm',
    'concat_channels',
    'channel_slice',
    'relu',
    'softmax_cross_entropy',
    'mse_masked',
    'backward',
    'param_store',
]

IGNORE_LABEL = 255


def _batched(x: Tensor, name: str = 'input') -> Tuple[Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ShapeError(f"{name} must be (C, H, W) or (N, C, H, W), "
                     f"got shape {tuple(x.shape)}")


def _restore(x: Tensor, squeeze: bool) -> Tensor:
    return x.squeeze(0) if squeeze else x


def check_finite(x: Tensor, what: str) -> Tensor:
    '''Raise NonFiniteError if `x` contains NaN or Inf, otherwise return it.'''
    if not torch.isfinite(x).all():
        n_bad = int((~torch.isfinite(x)).sum())
        raise NonFiniteError(f"{what} produced {n_bad} non-finite values "
                             f"(shape {tuple(x.shape)})")
    return x


def conv2d(input: Tensor, weight: Tensor, bias: Tensor = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    '''2D cross-correlation with zero padding.

    Args:
      input: (C_in, H, W) or (N, C_in, H, W).
      weight: (C_out, C_in, kh, kw) with odd kh, kw.
      bias: (C_out,) or None.
      stride: >= 1.
      pad: zero padding added on every border, >= 0.

    Output spatial size is floor((H + 2*pad - kh) / stride) + 1.
    '''
    x, squeeze = _batched(input)
    if weight.dim() != 4:
        raise ShapeError(f"conv2d weight must be (C_out, C_in, kh, kw), "
                         f"got {tuple(weight.shape)}")
    c_out, c_in, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel must be odd-sized, got {kh}x{kw}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeError(f"conv2d padding must be >= 0, got {pad}")
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels but the "
                         f"weight expects {c_in}")
    if bias is not None and tuple(bias.shape) != (c_out,):
        raise ShapeError(f"conv2d bias must be ({c_out},), "
                         f"got {tuple(bias.shape)}")
    h_out = (x.shape[2] + 2 * pad - kh) // stride + 1
    w_out = (x.shape[3] + 2 * pad - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d output would be empty ({h_out}x{w_out}) for "
                         f"input {tuple(x.shape[2:])}, kernel {kh}x{kw}, "
                         f"stride {stride}, padding {pad}")

    y = F.conv2d(x, weight, bias, stride=stride, padding=pad)
    return _restore(check_finite(y, 'conv2d'), squeeze)


def bilinear_resize(input: Tensor, out_h: int, out_w: int) -> Tensor:
    '''Bilinear interpolation, align-corners-false convention.

    The source coordinate of output row i is (i + 0.5) * H / out_h - 0.5,
    clamped to the valid range, likewise for columns.
    '''
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize target must be at least 1x1, "
                         f"got {out_h}x{out_w}")
    x, squeeze = _batched(input)
    if x.shape[2] == out_h and x.shape[3] == out_w:
        return input
    y = F.interpolate(x, size=(out_h, out_w), mode='bilinear',
                      align_corners=False)
    return _restore(check_finite(y, 'bilinear_resize'), squeeze)


def channel_norm(input: Tensor, eps: float = 1e-5) -> Tensor:
    '''Standardize every channel of every sample over its spatial positions,
    (x - mean_c) / sqrt(var_c + eps), with the biased variance. No learned
    affine parameters.'''
    x, squeeze = _batched(input)
    mean = x.mean(dim=(2, 3), keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=(2, 3), keepdim=True)
    y = centered / torch.sqrt(var + eps)
    return _restore(check_finite(y, 'channel_norm'), squeeze)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    '''Stack `b`'s channels after `a`'s. `b` may have zero channels.'''
    xa, squeeze = _batched(a, 'a')
    xb, _ = _batched(b, 'b')
    if xa.shape[0] != xb.shape[0] or xa.shape[2:] != xb.shape[2:]:
        raise ShapeError(f"concat_channels needs equal batch and spatial "
                         f"dims, got {tuple(a.shape)} and {tuple(b.shape)}")
    return _restore(torch.cat([xa, xb], dim=1), squeeze)


def channel_slice(input: Tensor, start: int, stop: int) -> Tensor:
    '''Channels [start, stop) of `input`; the inverse of concat_channels.'''
    x, squeeze = _batched(input)
    if not 0 <= start <= stop <= x.shape[1]:
        raise ShapeError(f"channel range [{start}, {stop}) out of bounds for "
                         f"{x.shape[1]} channels")
    return _restore(x[:, start:stop], squeeze)


def relu(x: Tensor) -> Tensor:
    '''max(x, 0); the gradient at exactly 0 is 0.'''
    return F.relu(x)


def softmax_cross_entropy(logits: Tensor, labels: Tensor,
                          ignore: int = IGNORE_LABEL) -> Tensor:
    '''Mean of -log softmax(logits)[label] over non-ignored pixels.

    Args:
      logits: (Cls, H, W) or (N, Cls, H, W).
      labels: integer map (H, W) or (N, H, W), values in [0, Cls) or `ignore`.

    Returns a scalar. If every pixel is ignored the loss is 0 and so is
    its gradient.
    '''
    x, squeeze = _batched(logits, 'logits')
    y = labels.unsqueeze(0) if squeeze else labels
    if y.dim() != 3 or y.shape[0] != x.shape[0] or y.shape[1:] != x.shape[2:]:
        raise ShapeError(f"labels of shape {tuple(labels.shape)} do not match "
                         f"logits of shape {tuple(logits.shape)}")
    y = y.long()
    n_classes = x.shape[1]
    valid = y != ignore
    bad = valid & ((y < 0) | (y >= n_classes))
    if bad.any():
        value = int(y[bad][0])
        raise LabelError(f"label {value} outside [0, {n_classes}) and not the "
                         f"ignore label {ignore}")
    if not valid.any():
        return (x * 0.).sum()

    loss = F.cross_entropy(x, y, ignore_index=ignore, reduction='mean')
    return check_finite(loss, 'softmax_cross_entropy')


def mse_masked(a: Tensor, b: Tensor, mask: Tensor) -> Tensor:
    '''Masked mean squared error between feature maps.

    sum over masked positions and channels of (a - b)^2, divided by
    C * max(1, number of masked positions). `b` and `mask` are constants:
    gradient only reaches `a`.

    Args:
      a, b: (C, H, W) or (N, C, H, W).
      mask: {0, 1} map (H, W) or (N, H, W).
    '''
    if a.shape != b.shape:
        raise ShapeError(f"mse_masked operands differ: {tuple(a.shape)} vs "
                         f"{tuple(b.shape)}")
    xa, squeeze = _batched(a, 'a')
    xb, _ = _batched(b.detach(), 'b')
    m = mask.detach()
    m = m.unsqueeze(0) if squeeze else m
    if m.dim() != 3 or m.shape[0] != xa.shape[0] or m.shape[1:] != xa.shape[2:]:
        raise ShapeError(f"mask of shape {tuple(mask.shape)} does not match "
                         f"features of shape {tuple(a.shape)}")
    if not ((m == 0) | (m == 1)).all():
        raise ShapeError("mse_masked mask must be binary (0/1)")
    m = m.to(xa.dtype).unsqueeze(1)

    diff = xa - xb
    count = torch.clamp(m.sum(), min=1.)
    loss = (diff * diff * m).sum() / (xa.shape[1] * count)
    return check_finite(loss, 'mse_masked')


def backward(loss: Tensor):
    '''Populate `.grad` of every leaf reachable from the scalar `loss`.
    Repeated calls without clearing accumulate.'''
    if loss.numel() != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape "
                         f"{tuple(loss.shape)}")
    check_finite(loss.detach(), 'loss')
    loss.reshape(()).backward()


def param_store(module: torch.nn.Module) -> List[Tuple[str, Tensor]]:
    '''Named parameters in their fixed construction order.'''
    return list(module.named_parameters())
