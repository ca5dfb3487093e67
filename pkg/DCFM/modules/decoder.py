from . import DCFMModule
from . import functional as Fd
from .layers import ConvBlock

__all__ = ['SegmentationHead']


class SegmentationHead(DCFMModule):
    '''Decoder: 3x3 conv + ReLU, 1x1 conv to class logits, then bilinear
    upsampling by `upsample` to input resolution.

    Returns `(coarse_logits, full_logits)`. The coarse logits live at the
    fused-feature resolution and are what the consistency mask is built
    from; the full logits are their resized copy.'''

    def __init__(self, dims_in, num_classes: int, upsample: int = 4):
        super().__init__(dims_in)
        assert len(dims_in) == 1, "SegmentationHead takes exactly one input"
        self.num_classes = num_classes
        self.upsample = upsample

        channels = self.dims_in[0][0]
        self.conv = ConvBlock(self.dims_in, channels_out=channels, kernel_size=3)
        self.classifier = ConvBlock(self.dims_in, channels_out=num_classes,
                                    kernel_size=1, activation=False)

    def forward(self, x):
        self.calls += 1
        self._check_channels(x[0])
        h = self.conv(x)
        coarse = self.classifier(h)[0]
        full = Fd.bilinear_resize(coarse, coarse.shape[2] * self.upsample,
                                  coarse.shape[3] * self.upsample)
        return coarse, full

    def output_dims(self, input_dims):
        assert len(input_dims) == 1, "Can only use 1 input"
        _, h, w = input_dims[0]
        return [(self.num_classes, h, w),
                (self.num_classes, h * self.upsample, w * self.upsample)]
