//! PCM WAV input and output. 16/24-bit integer and 32-bit float are accepted;
//! everything written is 32-bit float.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use super::AudioClip;
use crate::error::{Error, Result};

pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let unsupported = |detail: String| Error::UnsupportedEncoding {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(unsupported("zero channels".into()));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        (SampleFormat::Int, 24) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f32 / 8_388_608.0))
            .collect::<Result<_, _>>(),
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>(),
        (fmt, bits) => return Err(unsupported(format!("{fmt:?} with {bits} bits"))),
    }
    .map_err(|e| unsupported(e.to_string()))?;

    let frames = interleaved.len() / channels;
    let mut samples = Array2::zeros((channels, frames));
    for (i, frame) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in frame.iter().enumerate() {
            samples[[c, i]] = v;
        }
    }
    AudioClip::new(samples, spec.sample_rate).map_err(|e| unsupported(e.to_string()))
}

pub fn save_audio(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let spec = WavSpec {
        channels: clip.channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_err)?;
    let samples = clip.samples();
    for i in 0..clip.len() {
        for c in 0..clip.channels() {
            writer.write_sample(samples[[c, i]]).map_err(to_err)?;
        }
    }
    writer.finalize().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        save_audio(&path, &AudioClip::zeros(2, 44100, 44100)).unwrap();
        let clip = load_audio(&path).unwrap();
        assert_eq!(clip.channels(), 2);
        assert_eq!(clip.len(), 44100);
        assert_eq!(clip.sample_rate(), 44100);
        assert!(clip.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn int16_full_scale_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm16.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let clip = load_audio(&path).unwrap();
        assert_eq!(clip.channel(0)[0], 32767.0 / 32768.0);
        assert_eq!(clip.channel(0)[1], -1.0);
    }

    #[test]
    fn int24_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm24.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(4_194_304i32).unwrap();
        w.write_sample(-4_194_304i32).unwrap();
        w.finalize().unwrap();
        let clip = load_audio(&path).unwrap();
        assert_eq!(clip.channel(0)[0], 0.5);
        assert_eq!(clip.channel(1)[0], -0.5);
    }

    #[test]
    fn distinct_errors_for_missing_and_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_audio(dir.path().join("nope.wav")).unwrap_err();
        assert_eq!(missing.code(), "not_found");

        let path = dir.path().join("pcm8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert_eq!(load_audio(&path).unwrap_err().code(), "unsupported_encoding");

        let garbage = dir.path().join("garbage.wav");
        std::fs::write(&garbage, b"definitely not a riff file").unwrap();
        assert_eq!(load_audio(&garbage).unwrap_err().code(), "unsupported_encoding");
    }
}
