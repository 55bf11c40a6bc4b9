//! Time-frequency analysis and resynthesis.

mod cache;
mod griffin_lim;
mod image;
mod mel;
mod stft;

pub use cache::{read_mel_cache, write_mel_cache, CACHE_MAGIC, CACHE_VERSION};
pub use griffin_lim::{fast_griffin_lim, spectral_convergence, GriffinLimConfig, GriffinLimOutput};
pub use image::write_image;
pub use mel::{hz_to_mel, invert_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MelSpectrogram, NormStats, LOG_FLOOR};
pub(crate) use stft::magnitude_with;
pub use stft::{stft_magnitude, Spectrogram, StftConfig, StftEngine};
