from typing import Iterable, List, Tuple

import torch.nn as nn
import torch
from torch import Tensor

from DCFM.modules import DCFMModule

__all__ = ['SequenceStage']


class SequenceStage(DCFMModule):
    """
    A sequential series of single-input, single-output modules, used for the
    two encoder stages. Has an append() method that builds each module from
    the shape the previous one produces, for example:

    ```
    enc_lo = SequenceStage(3, 48, 64)
    enc_lo.append(InputScaling)
    for _ in range(2):
        enc_lo.append(ConvBlock, channels_out=16, stride=2)
    enc_lo.shapes[-1]   # (16, 12, 16)
    ```

    `calls` counts invocations of the whole stage, independently of the
    counters of the modules inside it.
    """

    def __init__(self, *dims: int):
        super().__init__([dims])

        self.shapes = [tuple(dims)]
        self.module_list = nn.ModuleList()

    def append(self, module_class, **kwargs):
        """
        Append a module from DCFM.modules to the stage.
        module_class: Class from DCFM.modules.
        **kwargs: Further keyword arguments that are passed to the constructor
                  of module_class (see example).
        """
        dims_in = [self.shapes[-1]]
        module = module_class(dims_in, **kwargs)
        self.module_list.append(module)
        output_dims = module.output_dims(dims_in)
        assert len(output_dims) == 1, "Module has more than one output"
        self.shapes.append(tuple(output_dims[0]))

    def output_dims(self, input_dims: List[Tuple[int]]) -> List[Tuple[int]]:
        dims = list(input_dims)
        for module in self.module_list:
            dims = module.output_dims(dims)
        return dims

    def forward(self, x: Iterable[Tensor]) -> Tuple[Tensor]:
        """
        Runs the modules in order.

        Arguments:
            x: input tensor or a one-element list of it.

        Returns:
            A one-element tuple with the stage output.
        """
        self.calls += 1
        if torch.is_tensor(x):
            x = (x,)
        for module in self.module_list:
            x = module(x)
        return x
