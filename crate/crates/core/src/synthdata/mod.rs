//! Seeded synthetic tampering data.
//!
//! Authentic scenes carry a faint 2×2 acquisition pattern aligned with the
//! image origin. Splices bring in content whose pattern is shifted, copy-moves
//! translate content by an offset with an odd component, and inpainting
//! replaces a region with a smooth harmonic fill, so every manipulation leaves
//! a local trace alongside its semantic inconsistency.

mod dataset;
mod perturb;
mod scene;
mod tamper;

pub use dataset::{
    generate_sample, generate_splits, load_image_png, load_mask_png, load_probability_png, read_dataset, sample_host,
    save_gray_png, save_image_png, save_probability_png,
    save_mask_png, write_dataset, Dataset, DatasetManifest, LoadedSample, SampleRecord, Split, SplitFractions,
    DATASET_VERSION,
};
pub use perturb::{
    blur_sigma, gauss_blur, gauss_noise, gaussian_kernel, jpeg_round_trip, perturb, PerturbKind, PerturbSpec,
    BLUR_LEVELS, JPEG_LEVELS, NOISE_LEVELS,
};
pub use scene::{gen_base_image, gen_scene, trace_value, GridPhase, Scene};
pub use tamper::{
    seam_jump, diffuse_fill, gen_copy_move, gen_inpaint, gen_splice, TamperSample, TamperType, DIFFUSION_MIN_ITERS, MAX_AREA,
    MIN_AREA, OBJECT_ALIGNED_RATE,
};
