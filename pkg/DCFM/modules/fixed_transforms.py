from . import DCFMModule
from . import functional as Fd

__all__ = ['InputScaling', 'ChannelNorm']


class InputScaling(DCFMModule):
    '''Multiplies frames by a constant, mapping [0, 255] pixels to [0, 1].
    Linear, so a black frame stays exactly zero.'''

    def __init__(self, dims_in, scale: float = 1. / 255.):
        super().__init__(dims_in)
        self.scale = scale

    def forward(self, x):
        self.calls += 1
        self._check_channels(x[0])
        return (x[0] * self.scale,)

    def output_dims(self, input_dims):
        assert len(input_dims) == 1, "Can only use 1 input"
        return input_dims


class ChannelNorm(DCFMModule):
    '''Affine-free per-sample, per-channel standardization over the spatial
    positions. See `functional.channel_norm`.'''

    def __init__(self, dims_in, eps: float = 1e-5):
        super().__init__(dims_in)
        self.eps = eps

    def forward(self, x):
        self.calls += 1
        return (Fd.channel_norm(x[0], self.eps),)

    def output_dims(self, input_dims):
        assert len(input_dims) == 1, "Can only use 1 input"
        return input_dims
