from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from DCFM.errors import ShapeError
from DCFM.modules import (ChannelNorm, ConvBlock, FeatureFusion, InputScaling,
                          SegmentationHead)

from .config import ModelConfig
from .sequence_stage import SequenceStage

__all__ = ['DCFMNet', 'FeaturePair', 'STRIDE']

# total subsampling of the deep stage; frames must be a multiple of it
STRIDE = 16
# the shallow stage subsamples by 4, the decoder upsamples by the same
SHALLOW_STRIDE = 4
# spatial size the stages are laid out with; any multiple of STRIDE works
_NOMINAL_HW = (48, 64)


@dataclass
class FeaturePair:
    '''The two decoupled features of one frame.

    Attributes:
      common: normalized deep feature, (C_F, H/16, W/16) (batched: N first).
      indep: normalized shallow feature, (C_f, H/4, W/4).
      frame_index: index of the frame in its clip.
      fused: fusion output of `common` with `indep`, (C_F, H/4, W/4), when
        the pair came out of a full keyframe pass.
    '''
    common: Tensor
    indep: Tensor
    frame_index: int = 0
    fused: Optional[Tensor] = None


class DCFMNet(nn.Module):
    '''
    Deep common feature mining network.

    The encoder is split into a shallow stage `enc_lo` (two stride-2
    blocks) and a deep stage `enc_hi` (two stride-2 blocks, each followed
    by `hi_depth` stride-1 layers, a 1x1 projection to C_F and channel
    normalization). A keyframe runs both; its normalized deep output is
    the common feature that neighboring non-key frames reuse verbatim,
    so for them only `enc_lo`, the fusion module and the decoder run:

    ```
    net = DCFMNet(ModelConfig(num_classes=4))
    pair, coarse, full = net.keyframe_forward(key_frame)
    coarse_j, full_j = net.nonkey_forward(frame_j, pair.common)
    ```

    All forwards accept a single frame (3, H, W) or a batch (N, 3, H, W)
    with H and W multiples of 16 (see `pad_frame`) and return tensors of
    matching rank.
    '''

    def __init__(self, config: ModelConfig = None):
        super().__init__()
        if config is None:
            config = ModelConfig()
        self.config = config
        c = config

        # parameter initialization must not depend on the global RNG state
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(c.seed)

            self.enc_lo = SequenceStage(c.in_channels, *_NOMINAL_HW)
            self.enc_lo.append(InputScaling)
            self.enc_lo.append(ConvBlock, channels_out=c.c_f_indep, stride=2)
            self.enc_lo.append(ConvBlock, channels_out=c.c_f_indep, stride=2)
            indep_dims = self.enc_lo.shapes[-1]

            self.enc_hi = SequenceStage(*indep_dims)
            for _ in range(2):
                self.enc_hi.append(ConvBlock, channels_out=c.c_hi, stride=2)
                for _ in range(c.hi_depth):
                    self.enc_hi.append(ConvBlock, channels_out=c.c_hi)
            if c.project_common:
                self.enc_hi.append(ConvBlock, channels_out=c.c_common,
                                   kernel_size=1, activation=False)
            self.enc_hi.append(ChannelNorm, eps=c.norm_eps)
            common_dims = self.enc_hi.shapes[-1]

            self.indep_norm = ChannelNorm([indep_dims], eps=c.norm_eps)
            self.ffm = FeatureFusion([common_dims, indep_dims],
                                     indep_half=c.indep_half,
                                     use_common=c.use_common,
                                     use_indep=c.use_indep)
            fused_dims = self.ffm.output_dims([common_dims, indep_dims])
            self.decoder = SegmentationHead(fused_dims,
                                            num_classes=c.num_classes,
                                            upsample=SHALLOW_STRIDE)

    # ------------------------------------------------------------------
    # stages

    def enc_lo_forward(self, frame: Tensor) -> Tensor:
        '''Raw (un-normalized) independent feature of a frame, (C_f, H/4, W/4).'''
        x, squeeze = self._batched(frame)
        self.check_frame_size(x)
        out = self.enc_lo([x])[0]
        return out.squeeze(0) if squeeze else out

    def extract_common(self, raw_indep: Tensor) -> Tensor:
        '''Normalized common feature (C_F, H/16, W/16) from a raw
        `enc_lo_forward` output, i.e. Norm(Conv(Enc_hi(Enc_lo(x)))).'''
        x, squeeze = self._batched(raw_indep)
        out = self.enc_hi([x])[0]
        return out.squeeze(0) if squeeze else out

    def normalize_indep(self, raw_indep: Tensor) -> Tensor:
        x, squeeze = self._batched(raw_indep)
        out = self.indep_norm([x])[0]
        return out.squeeze(0) if squeeze else out

    def fuse(self, common: Tensor, indep: Tensor) -> Tensor:
        '''Fused feature at the independent feature's resolution. Both inputs
        must already be normalized.'''
        c, squeeze = self._batched(common)
        f, _ = self._batched(indep)
        out = self.ffm([c, f])[0]
        return out.squeeze(0) if squeeze else out

    def decode(self, fused: Tensor) -> Tuple[Tensor, Tensor]:
        '''(coarse_logits at fused resolution, full_logits at 4x that).'''
        x, squeeze = self._batched(fused)
        coarse, full = self.decoder([x])
        if squeeze:
            return coarse.squeeze(0), full.squeeze(0)
        return coarse, full

    # ------------------------------------------------------------------
    # frame-level passes

    def keyframe_forward(self, frame: Tensor, frame_index: int = 0) \
            -> Tuple[FeaturePair, Tensor, Tensor]:
        '''Full pass over a keyframe. `enc_lo` runs once and feeds both the
        deep stage and the fusion module.'''
        raw = self.enc_lo_forward(frame)
        common = self.extract_common(raw)
        indep = self.normalize_indep(raw)
        fused = self.fuse(common, indep)
        coarse, full = self.decode(fused)
        return FeaturePair(common, indep, frame_index, fused), coarse, full

    def nonkey_forward(self, frame: Tensor, key_common: Tensor) \
            -> Tuple[Tensor, Tensor]:
        '''Shallow pass over a non-key frame, reusing a cached common feature.
        Never touches the deep stage.'''
        indep = self.normalize_indep(self.enc_lo_forward(frame))
        return self.decode(self.fuse(key_common, indep))

    # ------------------------------------------------------------------
    # helpers

    @staticmethod
    def _batched(x: Tensor) -> Tuple[Tensor, bool]:
        if x.dim() == 3:
            return x.unsqueeze(0), True
        if x.dim() == 4:
            return x, False
        raise ShapeError(f"expected (C, H, W) or (N, C, H, W), "
                         f"got {tuple(x.shape)}")

    @staticmethod
    def check_frame_size(frame: Tensor):
        h, w = frame.shape[-2:]
        if h % STRIDE or w % STRIDE:
            raise ShapeError(f"frame size {h}x{w} is not a multiple of "
                             f"{STRIDE}; pad it first with DCFMNet.pad_frame")

    @staticmethod
    def pad_frame(frame: Tensor) -> Tuple[Tensor, Tuple[int, int]]:
        '''Reflect-pad H and W up to multiples of 16 (bottom/right).

        Returns the padded frame and the original (H, W) for `crop`. Falls
        back to replicate padding when a side is too short to reflect.'''
        x, squeeze = DCFMNet._batched(frame)
        h, w = x.shape[-2:]
        pad_h = (-h) % STRIDE
        pad_w = (-w) % STRIDE
        if pad_h or pad_w:
            mode = 'reflect' if pad_h < h and pad_w < w else 'replicate'
            x = F.pad(x, (0, pad_w, 0, pad_h), mode=mode)
        return (x.squeeze(0) if squeeze else x), (h, w)

    @staticmethod
    def crop(x: Tensor, size: Tuple[int, int]) -> Tensor:
        h, w = size
        return x[..., :h, :w]

    def output_shapes(self, height: int, width: int) -> Dict[str, Tuple[int, ...]]:
        '''Non-batch shapes of every intermediate for a height x width frame,
        derived without running the network.'''
        frame = (self.config.in_channels, height, width)
        indep = self.enc_lo.output_dims([frame])[0]
        common = self.enc_hi.output_dims([indep])[0]
        fused = self.ffm.output_dims([common, indep])[0]
        coarse, full = self.decoder.output_dims([fused])
        return {'indep': indep, 'common': common, 'fused': fused,
                'coarse_logits': coarse, 'full_logits': full}

    def call_counts(self) -> Dict[str, int]:
        return {'enc_lo': self.enc_lo.calls, 'enc_hi': self.enc_hi.calls,
                'fuse': self.ffm.calls, 'decode': self.decoder.calls}

    def reset_counters(self):
        for module in self.modules():
            if hasattr(module, 'reset_calls'):
                module.reset_calls()

    def encoder_parameters(self):
        return list(self.enc_lo.parameters()) + list(self.enc_hi.parameters())

    def head_parameters(self):
        return list(self.ffm.parameters()) + list(self.decoder.parameters())
