//! Time/frequency representations, STFT analysis-synthesis and WAV file I/O.

mod stft;
mod wav;
mod waveform;

pub use stft::{
    istft, istft_adjoint, stft, stft_adjoint, Spectrogram, Stft, StftConfig, WindowKind,
};
pub use wav::{read_wav, write_wav, write_wav_pcm16};
pub use waveform::{MultichannelWaveform, Waveform};
