"""rangekit: cylindrical LiDAR range-image geometry.

Projection model with per-row intrinsic tables, projective multi-scale
point-to-plane registration, sparse voxel-block TSDF integration, and
zero-crossing mesh extraction, plus the synthetic-scene oracle and metrics
used to verify all of it.
"""

from .errors import (DegenerateGeometry, DegenerateRange, EmptyInput, FormatError,
                     InvalidIntrinsics, InvalidPose, MissingNormals, OutOfFov,
                     RangekitError, TruncatedPayload)
from .lidar_model import (LidarIntrinsics, PixelRay, build_inverse_elevation_lut,
                          project, project_many, synthetic_intrinsics, unproject,
                          unproject_many)
from .mesh_extract import TriangleMesh, extract_mesh
from .range_image import (NormalImage, RangeImage, StridedView, compute_normal_map,
                          from_point_cloud, to_point_cloud)
from .registration import (RegistrationConfig, RegistrationResult,
                           gauss_newton_step, initial_translation_by_centroids,
                           projective_correspondences, register, robust_weight)
from .sdf_volume import (VoxelBlock, VoxelBlockGrid, activate_blocks, integrate,
                         integrate_cloud_frame, query_sdf, query_sdf_many)
from .se3 import RigidTransform
from .synth import Box, Plane, Sphere, render_scene

__version__ = "0.1.0"

__all__ = [
    "Box", "DegenerateGeometry", "DegenerateRange", "EmptyInput", "FormatError",
    "InvalidIntrinsics", "InvalidPose", "LidarIntrinsics", "MissingNormals",
    "NormalImage", "OutOfFov", "PixelRay", "Plane", "RangeImage", "RangekitError",
    "RegistrationConfig", "RegistrationResult", "RigidTransform", "Sphere",
    "StridedView", "TriangleMesh", "TruncatedPayload", "VoxelBlock", "VoxelBlockGrid",
    "activate_blocks", "build_inverse_elevation_lut", "compute_normal_map",
    "extract_mesh", "from_point_cloud", "gauss_newton_step",
    "initial_translation_by_centroids", "integrate", "integrate_cloud_frame",
    "project", "project_many", "projective_correspondences", "query_sdf",
    "query_sdf_many", "register", "render_scene", "robust_weight",
    "synthetic_intrinsics", "to_point_cloud", "unproject", "unproject_many",
]
