//! Attention-head offset scans.
//!
//! Per-day mean activations are pushed through each head's query and key
//! projections; the query-key score matrix is averaged along its diagonals
//! to give a profile over day offsets. Heads are ranked by peak |z|,
//! calibrated against day-label permutations and selected by BH-FDR.
//! Offsets of selected heads are summarized as Gaussian-mixture modes.

mod modes;
mod profile;
mod scan;

pub use modes::{
    fit_mixture, matched_modes, mode_coincidence_test, offset_modes, BicRow, CoincidenceTest, Mixture, ModeFit,
    EM_RESTARTS, MAX_MODE_OFFSET, VARIANCE_FLOOR,
};
pub use profile::{offset_profile, HeadTensors, OffsetProfile, MAX_OFFSET};
pub use scan::{
    bh_adjust, scan_heads, write_scan_csv, HeadScanResult, ScanConfig, DEFAULT_FDR_LEVEL, DEFAULT_PERMUTATIONS,
};
