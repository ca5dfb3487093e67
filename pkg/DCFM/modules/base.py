from typing import Tuple, Iterable, List

import torch.nn as nn
from torch import Tensor

from ..errors import ShapeError

__all__ = ['DCFMModule']


class DCFMModule(nn.Module):
    """
    Base class for all network stages in DCFM.

    A stage is built from the non-batch shapes of its inputs and can report
    the shapes of its outputs without being run, so that a whole network can
    be laid out (and its cost counted) before any frame is seen:
    ```
    block = ConvBlock([(3, 48, 64)], channels_out=16, stride=2)
    block.output_dims([(3, 48, 64)])    # [(16, 24, 32)]

    feat = block([frame])[0]            # frame: (N, 3, 48, 64)
    ```
    Inputs are always passed as a list of tensors and the outputs are
    returned as a tuple, even for single-input single-output stages.

    Only the channel dimension of `dims_in` is binding. Spatial sizes are
    free, a stage built for (3, 48, 64) also accepts (3, 96, 128) frames.
    """

    def __init__(self, dims_in: Iterable[Tuple[int]]):
        """
        Parameters:
            dims_in: list of tuples specifying the shape of the inputs to this
                     stage: dims_in = [shape_x_0, shape_x_1, ...]
        """
        super().__init__()
        self.dims_in = [tuple(d) for d in dims_in]
        self.calls = 0

    def forward(self, x: Iterable[Tensor]) -> Tuple[Tensor, ...]:
        """
        Run the stage.

        *Note to implementers:*
        - Subclasses MUST increment `self.calls` once per invocation, the
          inference engine relies on the counters to prove which stages a
          frame went through.
        - Subclasses MUST return a tuple of tensors.

        Parameters:
            x: input data (array-like of one or more batched tensors)
        """
        raise NotImplementedError(
            f"{self.__class__.__name__} does not provide forward(...) method")

    def output_dims(self, input_dims: List[Tuple[int]]) -> List[Tuple[int]]:
        raise NotImplementedError(
            f"{self.__class__.__name__} does not provide output_dims(...)")

    def reset_calls(self):
        self.calls = 0

    def _check_channels(self, x: Tensor, idx: int = 0):
        expected = self.dims_in[idx][0]
        if x.dim() != 4 or x.shape[1] != expected:
            raise ShapeError(
                f"{self.__class__.__name__} expects input {idx} of shape "
                f"(N, {expected}, H, W), got {tuple(x.shape)}")
