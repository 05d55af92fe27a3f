"""Monocular depth through view synthesis and stereo matching, in plain numpy."""
from .core import KITTI_RIG, CameraRig, MonoStereoError, StereoPair
from .data import DESK_SCENE, SceneSpec, gen_scene, make_synthetic_dataset
from .evaluate import MetricsReport, apply_cap, compute_metrics, infer_depth, mae
from .losses import LossReport, LossWeights, total_loss
from .net import Checkpoint, NetworkSpec, forward, backward, init_network, load_checkpoint, preset_spec, save_checkpoint
from .sampler import WarpDirection, disparity_to_depth, warp, warp_backward
from .train import StereoInputMode, TrainConfig, lr_at, synthesize_right, train_stereo_matching, train_view_synthesis

__version__ = "0.1.0"
