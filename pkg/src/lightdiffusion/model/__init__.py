"""U-Net cascade (maps network g, diffusion network h, tint regressor) and training."""

from .gradcheck import grad_check
from .nets import DIFFUSION_CONFIG, SPECSHADOW_CONFIG, NetConfig, build_net
from .params import ModelParams, load_params, save_params
from .training import (
    TrainConfig,
    TrainingArrays,
    TrainingExample,
    iterated_albedo,
    predict_diffused,
    train,
    untint,
)
