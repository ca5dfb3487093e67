"""
Deep common feature mining for video semantic segmentation.
Keyframes run a deep encoder whose normalized output, the common feature,
is reused verbatim by neighboring frames that only run a shallow encoder.
"""
from . import errors
from . import modules
from . import framework
from . import data
from . import evaluation

__all__ = ["errors", "modules", "framework", "data", "evaluation"]
