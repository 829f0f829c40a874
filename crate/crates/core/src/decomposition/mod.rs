//! Trend/seasonal/residual decomposition and spectral residual denoising.

mod loess;
mod spectral;
mod stl;

pub use loess::loess_smooth;
pub use spectral::{
    causal_denoise, denoise_residual, fft_forward, fft_inverse, fft_inverse_complex, low_pass,
    normalized_frequency, DenoiseConfig, Spectrum,
};
pub use stl::{stl_decompose, Decomposition, StlConfig};
