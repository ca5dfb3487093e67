'''Subclasses of torch.nn.Module that the DCFM network is assembled from,
plus the numeric operations they are written with. Every stage declares
`output_dims`, so the network can be laid out before it is run.

Abstract template:

* DCFMModule

Learned layers:

* ConvBlock
* FeatureFusion
* SegmentationHead

Fixed (non-learned) transforms:

* InputScaling
* ChannelNorm

Numeric operations live in `DCFM.modules.functional`, optimizer helpers in
`DCFM.modules.optim`.
'''

# Import the base class first
from .base import *

# Then all inheriting modules
from .layers import *
from .fixed_transforms import *
from .fusion import *
from .decoder import *

from . import functional
from . import optim

__all__ = [
            'DCFMModule',
            'ConvBlock',
            'FeatureFusion',
            'SegmentationHead',
            'InputScaling',
            'ChannelNorm',
            'functional',
            'optim',
            ]
