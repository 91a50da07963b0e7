from .calibration import calibrate_attenuation
from .color import ColorAffine, RankDeficientError, apply_color_correction, fit_color_affine
from .metrics import angular_error_deg, psnr, score_textures, ssim
from .scene import ManifestError, Scene, load_scene, write_manifest
from .stages import (
    FitConfig,
    PhotometricObjective,
    StageResult,
    backproject_kd,
    evaluate_holdout,
    init_specular,
    observed_texels,
    prepare_views,
    render_view,
    stage1_fit,
    stage2_fit,
)

__all__ = [
    "ColorAffine",
    "FitConfig",
    "ManifestError",
    "PhotometricObjective",
    "RankDeficientError",
    "Scene",
    "StageResult",
    "angular_error_deg",
    "apply_color_correction",
    "backproject_kd",
    "calibrate_attenuation",
    "evaluate_holdout",
    "fit_color_affine",
    "init_specular",
    "load_scene",
    "observed_texels",
    "prepare_views",
    "psnr",
    "render_view",
    "score_textures",
    "ssim",
    "stage1_fit",
    "stage2_fit",
    "write_manifest",
]
