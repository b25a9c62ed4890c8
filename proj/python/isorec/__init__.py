"""Reference-free axial super-resolution toolkit (C++ core bindings)."""

from ._isorec import (  # noqa: F401
    InrModel,
    build_schedule,
    degrade_volume,
    evaluate_volumes,
    gaussian_kernel_1d,
    linear_interp_volume,
    load_volume,
    make_phantom,
    psnr,
    run_evaluate,
    run_reconstruct,
    run_simulate,
    run_train_prior,
    sample_prior,
    save_volume,
    simulate_anisotropic,
    ssim,
)

__all__ = [
    "InrModel",
    "build_schedule",
    "degrade_volume",
    "evaluate_volumes",
    "gaussian_kernel_1d",
    "linear_interp_volume",
    "load_volume",
    "make_phantom",
    "psnr",
    "run_evaluate",
    "run_reconstruct",
    "run_simulate",
    "run_train_prior",
    "sample_prior",
    "save_volume",
    "simulate_anisotropic",
    "ssim",
]
