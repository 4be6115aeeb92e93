//! Selective state-space kernels and the layer built from them.

pub mod conv;
pub mod discretize;
pub mod layer;
pub mod scan;

pub use conv::{causal_conv, causal_conv1d, causal_conv_silu};
pub use discretize::{discretize, zoh_exact, MIN_LOG_DECAY};
pub use layer::{MambaDims, MambaLayer, SelectiveParams, SelectiveSource};
pub use scan::{
    selective_scan, selective_scan_chunked, selective_scan_sequential, ScanDims, ScanElement, ScanInputs,
};
