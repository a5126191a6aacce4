//! Image quality measures and the report that collects them.
//!
//! Full-reference: PSNR and SSIM against a paired ground truth. No-reference:
//! pixel entropy, PNG bits per pixel, a learned fave rater and an optional
//! external scorer.

mod ffs;
mod fullref;
mod noref;
mod report;

pub use ffs::{
    accuracy, crop_rects, ffs_score, label_faves, parse_fave_records, read_fave_records, train_ffs, train_ffs_from,
    FaveEvidence, FaveRecord, FfsConfig, FfsEpoch, FfsScorer, FfsTrainReport, LabeledImage, PatchClassifier, FFS_PATCH,
    FFS_THRESHOLD,
};
pub use fullref::{gaussian_window, psnr, ssim, PSNR_IDENTICAL, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use noref::{bpp, entropy, png_size, BPP_COMPRESSION, BPP_FILTER};
pub use report::{evaluate, Aggregates, EvaluateOptions, ExternalScorer, QualityReport, ReportMeta, ReportRow};
