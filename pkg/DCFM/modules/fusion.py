from . import DCFMModule
from . import functional as Fd
from .layers import ConvBlock

import torch

__all__ = ['FeatureFusion']


class FeatureFusion(DCFMModule):
    '''Lightweight fusion of a deep common feature with a shallow independent
    feature.

    The common feature is bilinearly resized to the independent feature's
    resolution, the first `indep_half` channels of the independent feature
    are appended, and a single 3x3 convolution + ReLU maps the result back
    to the common width. Both inputs are expected to be channel-normalized
    already.

    The two `use_*` switches replace one input with zeros, for ablations of
    the decoupled representation. The convolution keeps its full input width
    either way, so a trained model can be evaluated with a branch removed.
    '''

    def __init__(self, dims_in, indep_half: int = None,
                 use_common: bool = True, use_indep: bool = True):
        '''
        Additional args in docstring of base class.
        Args:
          indep_half: number of leading independent channels passed on.
            Defaults to half of them (rounded down).
          use_common: if False, the common input is replaced by zeros.
          use_indep: if False, the independent slice is replaced by zeros.
        '''
        super().__init__(dims_in)
        assert len(dims_in) == 2, "FeatureFusion takes (common, independent)"

        self.common_channels = self.dims_in[0][0]
        self.indep_channels = self.dims_in[1][0]
        if indep_half is None:
            indep_half = self.indep_channels // 2
        assert 0 <= indep_half <= self.indep_channels, \
            f"indep_half={indep_half} exceeds {self.indep_channels} channels"
        self.indep_half = indep_half
        self.use_common = use_common
        self.use_indep = use_indep

        conv_in = (self.common_channels + self.indep_half,) + self.dims_in[1][1:]
        self.conv = ConvBlock([conv_in], channels_out=self.common_channels,
                              kernel_size=3)

    def forward(self, x):
        self.calls += 1
        common, indep = x
        self._check_channels(common, 0)
        self._check_channels(indep, 1)

        common = Fd.bilinear_resize(common, indep.shape[2], indep.shape[3])
        half = Fd.channel_slice(indep, 0, self.indep_half)
        if not self.use_common:
            common = torch.zeros_like(common)
        if not self.use_indep:
            half = torch.zeros_like(half)

        return self.conv([Fd.concat_channels(common, half)])

    def output_dims(self, input_dims):
        assert len(input_dims) == 2, "FeatureFusion takes (common, independent)"
        return [(self.common_channels,) + tuple(input_dims[1][1:])]
