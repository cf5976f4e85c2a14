use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel time-domain signal.
///
/// Samples are dimensionless amplitudes, nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, enforcing non-emptiness and finiteness.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite {
                context: "waveform samples",
            });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }

    /// Validates the type invariants at an API boundary.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite {
                context: "waveform samples",
            });
        }
        Ok(())
    }
}

/// An ordered set of equal-length, equal-rate channels.
///
/// Channel 0 is the reference channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    channels: Vec<Waveform>,
}

impl MultichannelWaveform {
    pub fn new(channels: Vec<Waveform>) -> Result<Self> {
        let first = channels.first().ok_or(Error::Empty("channel list"))?;
        let (len, rate) = (first.len(), first.sample_rate);
        for (index, ch) in channels.iter().enumerate() {
            ch.validate()?;
            if ch.sample_rate != rate {
                return Err(Error::SampleRateMismatch {
                    a: rate,
                    b: ch.sample_rate,
                });
            }
            if ch.len() != len {
                return Err(Error::ChannelMismatch {
                    index,
                    len: ch.len(),
                    expected: len,
                });
            }
        }
        Ok(Self { channels })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.channels[0].sample_rate
    }

    pub fn channel(&self, c: usize) -> &Waveform {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Waveform] {
        &self.channels
    }

    /// The reference channel (index 0).
    pub fn reference(&self) -> &Waveform {
        &self.channels[0]
    }

    pub fn into_channels(self) -> Vec<Waveform> {
        self.channels
    }
}
