"""CRISPnet: residual-bottleneck UNet with white-balance and global-semantics conditioning."""
from .config import DESK, FULL, VARIANTS, ConfigError, ModelConfig, parse_kv, variant_config
from .inference import frame_inputs, infer_full, seam_discontinuity
from .network import (
    CheckpointMismatchError,
    Model,
    StructuralError,
    build,
    forward,
    global_branch_cnn,
    global_branch_xcit,
    global_feature,
    reconstruct,
    wb_branch,
    xca,
)

__all__ = [
    "ModelConfig", "ConfigError", "DESK", "FULL", "VARIANTS", "variant_config", "parse_kv",
    "Model", "build", "forward", "reconstruct", "wb_branch", "xca", "global_branch_xcit",
    "global_branch_cnn", "global_feature", "infer_full", "frame_inputs", "seam_discontinuity",
    "StructuralError", "CheckpointMismatchError",
]
