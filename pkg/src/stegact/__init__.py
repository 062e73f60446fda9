"""stegact: hide an action clip inside a cover clip and classify the action
directly in the wavelet stego domain."""

from .backbone import BackboneConfig, Branch, BranchFeatures, build_branch
from .data import ClipSpec, DatasetIndex, SyntheticSpec, generate_clip, load_manifest
from .errors import ConfigError, DataError, DimensionError, NumericsError
from .hiding import HiderConfig, IdentityHider, StegoPair, WaveletAdditiveHider, psnr
from .network import (
    ForwardOutput,
    NetworkConfig,
    SubBandNet,
    build_network,
    group_branches,
    load_network,
    save_network,
)
from .promotion import PromotionTargets, build_targets, promotion_loss
from .training import TrainConfig, TrainResult, ablate, evaluate, train
from .wavelet import (
    SubBandSet,
    TemporalBands,
    dwt_spatial,
    dwt_temporal,
    idwt_spatial,
    idwt_temporal,
    multilevel_dwt,
)

__version__ = "0.1.0"
