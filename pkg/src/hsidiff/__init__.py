"""Self-supervised diffusion restoration for hyperspectral image cubes."""

from .cube import (
    CubeHeader,
    HSICube,
    format_header,
    parse_header,
    RANGE_SIGNED11,
    RANGE_UNIT01,
    export_band_png,
    load_cube,
    save_cube,
    scale_to_signed,
    scale_to_unit,
    vec_index,
)
from .errors import (
    ContractError,
    CubeFormatError,
    FeasibilityError,
    FitDivergedError,
    StepError,
)
from .metrics import MetricReport, evaluate, psnr_band, ssim_band
from .mixture import (
    FitConfig,
    MixtureModel,
    SpatialNet,
    SpectralNet,
    compose,
    compose_terms,
    fit,
    gradient,
    init_model,
    loss_value,
)
from .operators import (
    DegradationOperator,
    NoiseSpec,
    add_noise,
    make_completion,
    make_denoise,
    make_mask,
    make_sr_block,
    materialize_dense,
)
from .sampler import (
    SamplerConfig,
    SamplerState,
    case_select,
    init_state,
    restore,
    restore_no_diffusion,
    restore_with_state,
    reverse_step,
)
from .schedule import (
    DiffusionSchedule,
    SIGMA_POSTERIOR,
    SIGMA_SNR,
    forward_perturb,
    make_linear_schedule,
    sigma_t,
)
from .synth import SynthSpec, make_synthetic

__version__ = "0.1.0"
