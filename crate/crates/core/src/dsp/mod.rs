//! Deterministic signal-processing substrate: audio clips and WAV files,
//! resampling, STFT/iSTFT, RMS levels and chunk overlap-add.

mod audio;
mod mel;
mod ola;
mod resample;
mod stft;
mod wav;
mod window;

pub use audio::{downmix_mono, rms_dbfs, AudioClip, Dbfs};
pub use mel::{hz_to_mel, mel_power_frames, mel_to_hz, MelFilterbank};
pub use ola::overlap_add_chunks;
pub use resample::resample;
pub use stft::{istft, stft, Spectrogram, StftConfig};
pub(crate) use stft::StftKernel;
pub use wav::{load_audio, save_audio};
pub use window::WindowKind;
