"""Floorplan alignment for gravity-aligned 3D reconstructions.

The pipeline: rotate a reconstructed point cloud so gravity points down,
project it to a top-down density map, match the map against a rasterized
floorplan with patch features, and solve a robust planar similarity that
drops the cameras into floorplan coordinates.
"""

from .errors import (
    AllPointsFiltered,
    BadMagic,
    DegenerateSample,
    DegenerateWeights,
    DimOverflow,
    EmptyDensity,
    EmptyInput,
    NoConsensus,
    NonFiniteLoss,
    NotUnit,
    OutOfBounds,
    PlaneAlignError,
    TooFewPairs,
    TruncatedFile,
)
from .geom import (
    CameraPose,
    Sim2,
    align_scene,
    camera_yaw,
    gravity_rotation,
    medoid_direction,
    sim2_apply,
    sim2_compose,
    sim2_from_two_pairs,
    sim2_inverse,
    sim2_umeyama,
)
from .densmap import (
    DensityMap,
    FilterParams,
    Floorplan,
    ReconstructedScene,
    camera_to_grid,
    filter_points,
    gravity_align_scene,
    rasterize,
)
from .features import (
    FeatureMap,
    ToyEncoder,
    encode,
    oracle_features,
    read_features,
    sample_feature,
    write_features,
)

__all__ = [
    "AllPointsFiltered",
    "BadMagic",
    "CameraPose",
    "DegenerateSample",
    "DegenerateWeights",
    "DensityMap",
    "DimOverflow",
    "EmptyDensity",
    "EmptyInput",
    "FeatureMap",
    "FilterParams",
    "Floorplan",
    "NoConsensus",
    "NonFiniteLoss",
    "NotUnit",
    "OutOfBounds",
    "PlaneAlignError",
    "ReconstructedScene",
    "Sim2",
    "TooFewPairs",
    "ToyEncoder",
    "TruncatedFile",
    "align_scene",
    "camera_to_grid",
    "camera_yaw",
    "encode",
    "filter_points",
    "gravity_align_scene",
    "gravity_rotation",
    "medoid_direction",
    "oracle_features",
    "rasterize",
    "read_features",
    "sample_feature",
    "sim2_apply",
    "sim2_compose",
    "sim2_from_two_pairs",
    "sim2_inverse",
    "sim2_umeyama",
    "write_features",
]

__version__ = "0.1.0"
