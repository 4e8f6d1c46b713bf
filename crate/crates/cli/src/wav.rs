//! Minimal RIFF/WAVE reader and writer: 16-bit PCM, mono.

use std::fs;
use std::io::Write;
use std::path::Path;

use wavespk_core::Waveform;

use crate::CliError;

/// Write a waveform as 16-bit PCM mono. Samples are clamped to [-1, 1] and
/// rounded; generation keeps peaks at 0.5, so clipping never engages on the
/// synthetic corpus.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), CliError> {
    let n = wave.samples.len();
    let data_bytes = (n * 2) as u32;
    let sr = wave.sample_rate;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_bytes).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sr.to_le_bytes());
    out.extend_from_slice(&(sr * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_bytes.to_le_bytes());
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    f.write_all(&out)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Read a 16-bit PCM mono WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let fail = |msg: &str| CliError::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < 44 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file"));
    }
    let mut pos = 12usize;
    let mut sample_rate = 0u32;
    let mut bits = 0u16;
    let mut channels = 0u16;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(fail("truncated fmt chunk"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return Err(fail("only PCM is supported"));
                }
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size % 2);
    }
    if channels != 1 || bits != 16 {
        return Err(fail("expected 16-bit mono PCM"));
    }
    let body = data.ok_or_else(|| fail("missing data chunk"))?;
    let samples: Vec<f64> = body
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Waveform::new(samples, sample_rate).map_err(CliError::data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let wave = Waveform::new(
            (0..500).map(|i| 0.5 * ((i as f64) * 0.05).sin()).collect(),
            16_000,
        )
        .unwrap();
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.len(), wave.len());
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn write_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let wave = Waveform::new(vec![0.25; 100], 16_000).unwrap();
        let p1 = dir.path().join("a.wav");
        let p2 = dir.path().join("b.wav");
        write_wav(&p1, &wave).unwrap();
        write_wav(&p2, &wave).unwrap();
        assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        fs::write(&path, b"not audio").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
