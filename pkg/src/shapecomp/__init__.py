"""Point-cloud shape completion with an attention encoder and a multi-surface decoder."""

from .decoder import Decoder, DecoderSpec, SeedDistribution, decode, generate_seeds, surface_of
from .encoder import Encoder, EncoderSpec, MultiHeadSelfAttention, encode, mhsa_block
from .geometry import CameraIntrinsics, EmptyCloudError, PointCloud
from .metrics import AssignmentPlan, MetricReport, chamfer, emd_approx, emd_exact
from .training import CompletionModel, TrainConfig, build_model

__version__ = "0.1.0"
