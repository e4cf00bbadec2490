"""Deterministic P-frame video codec with learned-style transforms.

A target frame is coded against a decoded reference: block-matched flow
and both frames feed a convolutional encoder whose quantized latent is
entropy-coded under a Laplacian field, itself derived from a small
hyperprior bottleneck. Reconstruction warps the reference with per-pixel
separable kernels, adds a residual, and runs an enhancement stack.
Everything is integer or float32 with fixed operation order, so encode
and decode agree bit for bit across machines.
"""

from .codec import (
    DecodeResult,
    EncodeResult,
    FrameStats,
    decode_pframe,
    encode_pframe,
    parse_container,
)
from .entropy import (
    FactorizedPrior,
    LatentGrid,
    SoftQuantizer,
    laplace_pmf,
    quantize_round,
    rate_bits,
)
from .errors import (
    CapacityError,
    ChecksumError,
    DomainError,
    FormatError,
    InfeasibleBudgetError,
    MvrError,
    RateError,
    ShapeError,
    TruncatedError,
    VersionError,
)
from .frames import (
    Frame420,
    Frame444,
    downsample_444_to_420,
    frame_to_tensor,
    read_yuv420,
    read_yuv420_file,
    tensor_to_frame,
    upsample_420_to_444,
    write_yuv420,
)
from .model import (
    ArchitectureConfig,
    default_config,
    generate_weights,
)
from .motion import block_matching_flow, read_flo, sdc_warp, sdc_warp_vjp, write_flo
from .nn import ModelWeights, load_weights, save_weights
from .postproc import ms_ssim, psnr
from .rangecoder import RangeDecoder, RangeEncoder, build_cdf
from .ratecontrol import (
    AllocationPlan,
    ConfigPoint,
    allocate,
    evaluate_loss,
    lambda_for_quality,
)

__version__ = "0.1.0"
