"""Direct sparse stereo visual odometry.

Inverse-compositional frame-to-window tracking over a sliding keyframe
window, stereo photometric bundle adjustment with Schur elimination, and
marginalization with first-estimate Jacobians.
"""

from .config import OdometryConfig, load_config
from .geometry import Pinhole, Pose, StereoRig
from .image import StereoFrame, build_pyramid
from .trajectory import EvalReport, Trajectory, evaluate
from .window import Odometry

__all__ = [
    "OdometryConfig",
    "load_config",
    "Pinhole",
    "Pose",
    "StereoRig",
    "StereoFrame",
    "build_pyramid",
    "EvalReport",
    "Trajectory",
    "evaluate",
    "Odometry",
]

__version__ = "0.1.0"
