"""boostprop: generic object-proposal pipeline.

Filter-bank channel features, boosted depth-two-tree window scoring over
a scale/aspect pyramid, two-stage greedy NMS, ridge-regression box
refinement, and recall-vs-IoU evaluation.
"""

__version__ = "0.1.0"

from .boost import BoostedModel, DepthTwoTree, WeightedSet, adaboost_train
from .channels import (
    ChannelStack,
    FilterBank,
    ImagePlanes,
    PyramidLevel,
    build_pyramid,
    synth_filter_bank,
)
from .detector import DetectorConfig, propose
from .errors import BoostpropError
from .evaluation import EvalReport, evaluate
from .geometry import Box, ScoredBox, iou, nms_greedy
from .regress import BoxRegressor, RegressionPair
from .sampler import SampleSpec

__all__ = [
    "__version__",
    "BoostedModel",
    "BoostpropError",
    "Box",
    "BoxRegressor",
    "ChannelStack",
    "DepthTwoTree",
    "DetectorConfig",
    "EvalReport",
    "FilterBank",
    "ImagePlanes",
    "PyramidLevel",
    "RegressionPair",
    "SampleSpec",
    "ScoredBox",
    "WeightedSet",
    "adaboost_train",
    "build_pyramid",
    "evaluate",
    "iou",
    "nms_greedy",
    "propose",
    "synth_filter_bank",
]
