"""Simulation-based denoising benchmark for shot-noise-limited atomic images."""

from .denoise import (
    AdaptiveWienerFilter,
    ExternalDenoiser,
    IdentityDenoiser,
    LowPassFilter,
    TilingSpec,
    VstNlmDenoiser,
    anscombe,
    denoise_tiled,
    external_denoise,
    inv_anscombe,
    lowpass,
    make_denoiser,
    nlm,
    vst_nlm,
    wiener_adaptive,
)
from .detect import (
    AtomDetection,
    BlobDetector,
    Matching,
    blob_defaults,
    detect_blobs,
    match_atoms,
    median_nn_distance,
    read_atoms,
    surface_partition,
    write_atoms,
)
from .errors import (
    CalibrationError,
    DomainError,
    ExternalDenoiserError,
    ExternalTimeoutError,
    FormatError,
    ParameterError,
    ProtocolError,
    SbdError,
    TruncationError,
    ValidationError,
)
from .harness import (
    BenchmarkReport,
    DatasetManifest,
    GenerationConfig,
    ManifestEntry,
    evaluate_llr_distribution,
    generate_dataset,
    grid_search,
    load_report,
    run_benchmark,
    sweep_geometry,
    write_report,
)
from .image import Image, export_view, read_image, write_image
from .likelihood import (
    LikelihoodMap,
    Region,
    disk_region,
    estimate_vacuum,
    fit_region,
    llr_map,
    llr_per_pixel,
    poisson_loglik,
)
from .metrics import MetricsReport, detection_metrics, psnr, ssim
from .noise import (
    NoiseStatsReport,
    noise_stats,
    poisson_calibration,
    poisson_corrupt,
    scale_to_dose,
    vacuum_heuristic,
)
from .probe import GradientMap, gradient_map, gradient_summary
from .synth import (
    AtomColumn,
    GeometryConfig,
    ImagingParams,
    StructureModel,
    build_structure,
    model_from_json,
    model_to_json,
    render,
    transform,
    transform_points,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
