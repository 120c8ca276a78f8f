//! Multichannel time-domain signals and their file I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// A sample-indexed block of `C` channels sharing one sample clock.
///
/// Samples are stored channel-major: `samples[c][n]` is channel `c` at
/// sample index `n`. All channels have identical length and the block is
/// never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    samples: Vec<Vec<f64>>,
    sample_rate: f64,
    channel_labels: Vec<String>,
}

impl MultichannelSignal {
    /// Build a signal from channel-major sample data.
    ///
    /// Labels default to `ch1`, `ch2`, ... when `labels` is `None`.
    pub fn new(
        samples: Vec<Vec<f64>>,
        sample_rate: f64,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("samples", "at least one channel required"));
        }
        let n = samples[0].len();
        if n == 0 {
            return Err(Error::config("samples", "channels must be non-empty"));
        }
        for ch in &samples {
            if ch.len() != n {
                return Err(Error::LengthMismatch {
                    context: "channel lengths differ",
                    left: n,
                    right: ch.len(),
                });
            }
        }
        if !(sample_rate > 0.0) {
            return Err(Error::config("sample_rate", "must be > 0"));
        }
        let channel_labels = match labels {
            Some(l) => {
                if l.len() != samples.len() {
                    return Err(Error::LengthMismatch {
                        context: "channel labels vs channels",
                        left: l.len(),
                        right: samples.len(),
                    });
                }
                l
            }
            None => (1..=samples.len()).map(|i| format!("ch{i}")).collect(),
        };
        Ok(Self {
            samples,
            sample_rate,
            channel_labels,
        })
    }

    /// All-zero signal with default labels.
    pub fn zeros(n_channels: usize, n_samples: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![vec![0.0; n_samples]; n_channels], sample_rate, None)
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples[0].len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Extract the sample range `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_samples() {
            return Err(Error::IndexOutOfRange {
                context: "signal slice",
                index: end,
                limit: self.n_samples(),
            });
        }
        let samples = self
            .samples
            .iter()
            .map(|ch| ch[start..end].to_vec())
            .collect();
        Self::new(samples, self.sample_rate, Some(self.channel_labels.clone()))
    }

    /// Keep a subset of channels, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &c in indices {
            if c >= self.n_channels() {
                return Err(Error::IndexOutOfRange {
                    context: "channel select",
                    index: c,
                    limit: self.n_channels(),
                });
            }
            samples.push(self.samples[c].clone());
            labels.push(self.channel_labels[c].clone());
        }
        Self::new(samples, self.sample_rate, Some(labels))
    }
}

/// Sample encoding for WAV export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Pcm24,
    Float32,
}

/// Read a multichannel WAV file (PCM 16/24-bit or 32-bit float).
///
/// Integer samples are scaled to `[-1, 1)` by the type's full-scale value.
pub fn read_wav(path: &Path) -> Result<MultichannelSignal> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::format("WAV", format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); n_ch];

    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            for (i, s) in reader.samples::<i16>().enumerate() {
                let s = s.map_err(|e| Error::format("WAV", e.to_string()))?;
                channels[i % n_ch].push(f64::from(s) / 32768.0);
            }
        }
        (hound::SampleFormat::Int, 24) => {
            for (i, s) in reader.samples::<i32>().enumerate() {
                let s = s.map_err(|e| Error::format("WAV", e.to_string()))?;
                channels[i % n_ch].push(f64::from(s) / 8_388_608.0);
            }
        }
        (hound::SampleFormat::Float, 32) => {
            for (i, s) in reader.samples::<f32>().enumerate() {
                let s = s.map_err(|e| Error::format("WAV", e.to_string()))?;
                channels[i % n_ch].push(f64::from(s));
            }
        }
        (fmt, bits) => {
            return Err(Error::format(
                "WAV",
                format!("unsupported sample format {fmt:?}/{bits}-bit"),
            ))
        }
    }

    MultichannelSignal::new(channels, f64::from(spec.sample_rate), None)
}

/// Write a multichannel WAV file with the requested encoding.
///
/// For integer encodings, samples are clamped to `[-1, 1]` before scaling.
pub fn write_wav(sig: &MultichannelSignal, path: &Path, encoding: WavEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: sig.n_channels() as u16,
        sample_rate: sig.sample_rate().round() as u32,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Pcm24 => 24,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Float32 => hound::SampleFormat::Float,
            _ => hound::SampleFormat::Int,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::format("WAV", format!("{}: {e}", path.display())))?;
    for n in 0..sig.n_samples() {
        for c in 0..sig.n_channels() {
            let x = sig.channel(c)[n];
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    writer
                        .write_sample(v)
                        .map_err(|e| Error::format("WAV", e.to_string()))?;
                }
                WavEncoding::Pcm24 => {
                    let v = (x.clamp(-1.0, 1.0) * 8_388_607.0).round() as i32;
                    writer
                        .write_sample(v)
                        .map_err(|e| Error::format("WAV", e.to_string()))?;
                }
                WavEncoding::Float32 => {
                    writer
                        .write_sample(x as f32)
                        .map_err(|e| Error::format("WAV", e.to_string()))?;
                }
            }
        }
    }
    writer
        .finalize()
        .map_err(|e| Error::format("WAV", e.to_string()))?;
    Ok(())
}

/// Read a signal from CSV: one column per channel, header row of labels.
///
/// The sample rate is not part of the CSV format and must be supplied.
pub fn read_csv(path: &Path, sample_rate: f64) -> Result<MultichannelSignal> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::format("CSV", format!("{}: {e}", path.display())))?;
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format("CSV", e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if labels.is_empty() {
        return Err(Error::format("CSV", "missing header row".to_string()));
    }
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format("CSV", e.to_string()))?;
        if record.len() != labels.len() {
            return Err(Error::format(
                "CSV",
                format!(
                    "row {} has {} fields, expected {}",
                    row + 2,
                    record.len(),
                    labels.len()
                ),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(
                    "CSV",
                    format!("row {}, column {}: not a number: {field:?}", row + 2, c + 1),
                )
            })?;
            channels[c].push(v);
        }
    }
    MultichannelSignal::new(channels, sample_rate, Some(labels))
}

/// Write a signal to CSV: one column per channel, header row of labels,
/// trailing newline.
pub fn write_csv(sig: &MultichannelSignal, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::format("CSV", format!("{}: {e}", path.display())))?;
    writer
        .write_record(sig.channel_labels())
        .map_err(|e| Error::format("CSV", e.to_string()))?;
    for n in 0..sig.n_samples() {
        let row: Vec<String> = (0..sig.n_channels())
            .map(|c| sig.channel(c)[n].to_string())
            .collect();
        writer
            .write_record(&row)
            .map_err(|e| Error::format("CSV", e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::format("CSV", e.to_string()))?;
    Ok(())
}
