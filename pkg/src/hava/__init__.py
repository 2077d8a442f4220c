"""hava: audio-driven 3D facial animation with head-pose augmentation.

Two-stage pipeline over a template mesh. Stage 1 maps windowed speech
features to per-vertex displacements through hierarchical audio
encoders and a residual graph-convolution network; stage 2 maps mel
spectrogram patches to per-frame head-pose rotation vectors through a
convolutional LSTM. Training runs on a self-contained float64
reverse-mode autodiff core; tensors interchange through the bit-exact
HAVA container format.

The compiled kernel extension is optional: ``hava.kernels.BACKEND``
names the active implementation ("cython" or "numpy"), switchable via
the ``HAVA_KERNELS`` environment variable.
"""

__version__ = "0.1.0"

from .anim_model import AnimationConfig, AnimationModel, predict_frame
from .augment import attach_poses, gaussian_kernel, gaussian_smooth
from .container import read_container, write_container
from .data import (Dataset, PoseTrack, generate_synthetic_dataset,
                   load_dataset, read_pose_csv, save_dataset, write_pose_csv)
from .evaluate import per_vertex_error, regional_metric
from .mesh import (TemplateMesh, apply_pose, build_adjacency, load_obj,
                   vertex_embedding, write_obj)
from .pose_model import PoseConfig, PoseModel, predict_pose_track
from .train import (load_checkpoint, pose_loss, reconstruction_loss,
                    save_checkpoint, stage1_loss, train_stage1, train_stage2,
                    velocity_loss)

__all__ = [
    "AnimationConfig", "AnimationModel", "Dataset", "PoseConfig", "PoseModel",
    "PoseTrack", "TemplateMesh", "apply_pose", "attach_poses",
    "build_adjacency", "gaussian_kernel", "gaussian_smooth",
    "generate_synthetic_dataset", "load_checkpoint", "load_dataset",
    "load_obj", "per_vertex_error", "pose_loss", "predict_frame",
    "predict_pose_track", "read_container", "read_pose_csv",
    "reconstruction_loss", "regional_metric", "save_checkpoint",
    "save_dataset", "stage1_loss", "train_stage1", "train_stage2",
    "velocity_loss", "vertex_embedding", "write_container", "write_obj",
    "write_pose_csv",
]
