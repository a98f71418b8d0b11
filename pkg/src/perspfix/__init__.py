"""Close-range portrait perspective rectification by depth-image-based rendering."""

from .camgeom import (
    CameraIntrinsics,
    Pixel,
    Point3,
    RigidTransform,
    compose_camera_move,
    compute_theta,
    make_hzt_transform,
    project,
    reproject_pixel,
    scaled_focal,
    select_anchor_pixel,
    unproject,
)
from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    EmptyForegroundError,
    FrustumError,
    InvalidInputError,
    PerspfixError,
    PerspfixIOError,
)
from .warp import AttributedPointCloud, DepthMap, WarpedBundle, build_point_cloud, splat, warp_frame

__version__ = "0.1.0"
