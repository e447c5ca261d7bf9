"""Facial landmark geometry on radiance fields: bilinear landmark model, TPS
expression warping, oriented-box volume sampling, wing-loss fitting and DLT
triangulation."""
from .errors import (BadMagicError, DimensionError, DimensionOverflowError, FaceLMError,
                     FormatError, NumericalError, TruncatedFileError)
from .face_model import (BilinearCore, apply_transform, compose_transforms, generate_landmarks,
                         identity_transform, load_core, save_core, synth_core)
from .fields import (ConstantField, FieldSample, RadianceField, SphereField, SyntheticHeadField,
                     VoxelGridField, bake_to_grid, load_grid, make_synthetic_head,
                     query_voxel_grid, save_grid)
from .fitting import (FitProblem, FitResult, WingParams, evaluate, fit_landmarks, wing_gradient,
                      wing_loss)
from .sampling import (AugmentTransform, BoxConstants, FeatureVolume, OrientedBox, apply_augment,
                       fine_boxes, position_encoding, random_augment, sample_volume)
from .tps import TpsWarp, fit_tps, kernel_u, warp_point, warp_points, warp_sample
from .triangulation import project, triangulate, triangulate_landmarks

__version__ = "0.1.0"
