//! Raw IQ recordings: interleaved little-endian `f32` pairs (I then Q) with a
//! UTF-8 `key=value` sidecar next to the data file.
//!
//! ```text
//! capture.iq        I0 Q0 I1 Q1 ...        (8 bytes per sample)
//! capture.iq.meta   sample_rate_hz=60000000
//!                   duration_s=0.04
//!                   t0_s=0
//!                   seed=1234
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::waveform::IqFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct IqMetadata {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub t0_s: f64,
    pub seed: u64,
}

pub fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

pub fn write_iq(data_path: &Path, frame: &IqFrame, seed: u64) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(data_path)?);
    for s in &frame.samples {
        out.write_all(&(s.re as f32).to_le_bytes())?;
        out.write_all(&(s.im as f32).to_le_bytes())?;
    }
    out.flush()?;

    let meta = format!(
        "sample_rate_hz={}\nduration_s={}\nt0_s={}\nseed={}\n",
        frame.sample_rate_hz,
        frame.duration_s(),
        frame.t0_s,
        seed
    );
    fs::write(sidecar_path(data_path), meta)
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_metadata(data_path: &Path) -> io::Result<IqMetadata> {
    let text = fs::read_to_string(sidecar_path(data_path))?;
    let fields: BTreeMap<&str, &str> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| invalid(format!("sidecar is missing `{key}`")))
    };
    let real = |key: &str| -> io::Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| invalid(format!("bad `{key}` in sidecar")))
    };
    Ok(IqMetadata {
        sample_rate_hz: real("sample_rate_hz")?,
        duration_s: real("duration_s")?,
        t0_s: real("t0_s")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| invalid("bad `seed` in sidecar"))?,
    })
}

pub fn read_iq(data_path: &Path) -> io::Result<(IqFrame, IqMetadata)> {
    let meta = read_metadata(data_path)?;
    let bytes = fs::read(data_path)?;
    if bytes.len() % 8 != 0 {
        return Err(invalid("IQ file length is not a multiple of 8 bytes"));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let frame = IqFrame {
        samples,
        sample_rate_hz: meta.sample_rate_hz,
        t0_s: meta.t0_s,
    };
    Ok((frame, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_interleaved_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.iq");
        let frame = IqFrame {
            samples: vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.25)],
            sample_rate_hz: 4.0,
            t0_s: 0.0,
        };
        write_iq(&path, &frame, 42).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &(-2.0f32).to_le_bytes());

        let (back, meta) = read_iq(&path).unwrap();
        assert_eq!(back, frame);
        assert_eq!(
            meta,
            IqMetadata {
                sample_rate_hz: 4.0,
                duration_s: 0.5,
                t0_s: 0.0,
                seed: 42
            }
        );
    }

    #[test]
    fn missing_sidecar_key_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.iq");
        fs::write(&path, [0u8; 8]).unwrap();
        fs::write(sidecar_path(&path), "sample_rate_hz=1\n").unwrap();
        let err = read_iq(&path).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }
}
