from . import DCFMModule
from . import functional as Fd

import torch
import torch.nn as nn

__all__ = ['ConvBlock']


class ConvBlock(DCFMModule):
    '''Convolution with 'same'-style zero padding (kernel_size // 2),
    optionally followed by a ReLU.

    Weights get a Kaiming-uniform initialization and biases start at zero,
    so an all-zero input maps to an all-zero output.'''

    def __init__(self, dims_in, channels_out: int, kernel_size: int = 3,
                 stride: int = 1, activation: bool = True):
        '''
        Additional args in docstring of base class.
        Args:
          channels_out: number of output channels.
          kernel_size: odd spatial size of the square kernel.
          stride: subsampling factor of the convolution.
          activation: apply a ReLU after the convolution.
        '''
        super().__init__(dims_in)
        assert len(dims_in) == 1, "ConvBlock takes exactly one input tensor"
        assert kernel_size % 2 == 1, "ConvBlock needs an odd kernel size"

        self.channels_in = self.dims_in[0][0]
        self.channels_out = channels_out
        self.kernel_size = kernel_size
        self.stride = stride
        self.pad = kernel_size // 2
        self.activation = activation

        self.weight = nn.Parameter(torch.empty(channels_out, self.channels_in,
                                               kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(channels_out))
        nn.init.kaiming_uniform_(self.weight, nonlinearity='relu')

    def forward(self, x):
        self.calls += 1
        self._check_channels(x[0])
        y = Fd.conv2d(x[0], self.weight, self.bias, self.stride, self.pad)
        if self.activation:
            y = Fd.relu(y)
        return (y,)

    def output_dims(self, input_dims):
        assert len(input_dims) == 1, "Can only use 1 input"
        c, h, w = input_dims[0]
        k, s, p = self.kernel_size, self.stride, self.pad
        return [(self.channels_out, (h + 2 * p - k) // s + 1,
                 (w + 2 * p - k) // s + 1)]

    def macs(self, output_shape) -> int:
        '''Multiply-accumulates spent on one sample whose output has the
        given (C_out, H, W) shape.'''
        c_out, h, w = output_shape
        return c_out * h * w * self.channels_in * self.kernel_size ** 2
