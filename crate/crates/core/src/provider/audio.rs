//! Audio payloads exchanged with providers.

use std::fmt;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Capture rate for learner uploads.
pub const CAPTURE_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioFormat {
    Wav,
    Mp3,
    Ogg,
    Webm,
    Flac,
}

impl AudioFormat {
    pub fn mime(self) -> &'static str {
        match self {
            AudioFormat::Wav => "audio/wav",
            AudioFormat::Mp3 => "audio/mpeg",
            AudioFormat::Ogg => "audio/ogg",
            AudioFormat::Webm => "audio/webm",
            AudioFormat::Flac => "audio/flac",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            AudioFormat::Wav => "wav",
            AudioFormat::Mp3 => "mp3",
            AudioFormat::Ogg => "ogg",
            AudioFormat::Webm => "webm",
            AudioFormat::Flac => "flac",
        }
    }

    /// Identifies the container from its leading bytes.
    pub fn sniff(bytes: &[u8]) -> Option<AudioFormat> {
        if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WAVE" {
            Some(AudioFormat::Wav)
        } else if bytes.starts_with(b"ID3") || (bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] & 0xE0 == 0xE0) {
            Some(AudioFormat::Mp3)
        } else if bytes.starts_with(b"OggS") {
            Some(AudioFormat::Ogg)
        } else if bytes.starts_with(&[0x1A, 0x45, 0xDF, 0xA3]) {
            Some(AudioFormat::Webm)
        } else if bytes.starts_with(b"fLaC") {
            Some(AudioFormat::Flac)
        } else {
            None
        }
    }
}

impl fmt::Display for AudioFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AudioClip {
    bytes: Vec<u8>,
    format: AudioFormat,
}

impl AudioClip {
    /// Wraps bytes after checking they are a recognised container.
    /// WAV input must additionally parse as PCM.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, GatewayError> {
        if bytes.is_empty() {
            return Err(GatewayError::UnsupportedAudioFormat("empty audio".into()));
        }
        let format = AudioFormat::sniff(&bytes)
            .ok_or_else(|| GatewayError::UnsupportedAudioFormat("unrecognised container".into()))?;
        if format == AudioFormat::Wav {
            hound::WavReader::new(Cursor::new(&bytes))
                .map_err(|e| GatewayError::UnsupportedAudioFormat(format!("bad WAV: {e}")))?;
        }
        Ok(Self { bytes, format })
    }

    /// Encodes 16-bit mono PCM as WAV.
    pub fn wav_pcm16(samples: &[i16], sample_rate: u32) -> Self {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
        {
            let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV writer");
            for &s in samples {
                writer.write_sample(s).expect("in-memory WAV write");
            }
            writer.finalize().expect("in-memory WAV finalize");
        }
        Self {
            bytes: cursor.into_inner(),
            format: AudioFormat::Wav,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn format(&self) -> AudioFormat {
        self.format
    }

    /// Hex SHA-256 of the raw bytes.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    /// Duration in seconds, available for WAV only.
    pub fn duration_secs(&self) -> Option<f64> {
        let reader = self.wav_reader()?;
        let spec = reader.spec();
        let frames = reader.duration() as f64;
        Some(frames / spec.sample_rate as f64)
    }

    /// True when every WAV sample is within `threshold` of zero.
    /// `None` for compressed formats.
    pub fn is_silent(&self, threshold: i32) -> Option<bool> {
        let mut reader = self.wav_reader()?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int {
            return None;
        }
        Some(
            reader
                .samples::<i32>()
                .all(|s| s.map(|v| v.abs() <= threshold).unwrap_or(false)),
        )
    }

    fn wav_reader(&self) -> Option<hound::WavReader<Cursor<&[u8]>>> {
        if self.format != AudioFormat::Wav {
            return None;
        }
        hound::WavReader::new(Cursor::new(self.bytes.as_slice())).ok()
    }
}

impl fmt::Debug for AudioClip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AudioClip")
            .field("format", &self.format)
            .field("len", &self.bytes.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_length_is_unsupported() {
        assert!(matches!(
            AudioClip::from_bytes(vec![]),
            Err(GatewayError::UnsupportedAudioFormat(_))
        ));
        assert!(matches!(
            AudioClip::from_bytes(b"not audio at all".to_vec()),
            Err(GatewayError::UnsupportedAudioFormat(_))
        ));
    }

    #[test]
    fn wav_round_trip_and_duration() {
        let clip = AudioClip::wav_pcm16(&vec![0i16; 32_000], CAPTURE_SAMPLE_RATE);
        let parsed = AudioClip::from_bytes(clip.bytes().to_vec()).unwrap();
        assert_eq!(parsed.format(), AudioFormat::Wav);
        assert_eq!(parsed.duration_secs(), Some(2.0));
        assert_eq!(parsed.is_silent(0), Some(true));
        let loud = AudioClip::wav_pcm16(&[0, 1000, -1000], CAPTURE_SAMPLE_RATE);
        assert_eq!(loud.is_silent(10), Some(false));
    }

    #[test]
    fn sniffing() {
        assert_eq!(AudioFormat::sniff(b"ID3\x04rest"), Some(AudioFormat::Mp3));
        assert_eq!(AudioFormat::sniff(b"OggS...."), Some(AudioFormat::Ogg));
        assert_eq!(
            AudioFormat::sniff(&[0x1A, 0x45, 0xDF, 0xA3, 0]),
            Some(AudioFormat::Webm)
        );
        let mp3 = AudioClip::from_bytes(b"ID3\x04rest".to_vec()).unwrap();
        assert_eq!(mp3.duration_secs(), None);
    }
}
