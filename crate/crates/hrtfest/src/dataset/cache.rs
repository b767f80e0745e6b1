//! Binary feature cache.
//!
//! Layout (little-endian):
//!   magic   4 bytes  "HFC1"
//!   u32     subject id byte length, then utf-8 subject id
//!   u32     n_doa
//!   u32 x2  dims (2, 128)
//!   u8      normalized flag
//!   per DoA row: f64 azimuth_deg, f64 elevation_deg,
//!                then the 2x128 feature values row-major as f64

use super::{AlignedHrtfFeature, Doa, N_BINS, N_CHANNELS};
use crate::error::{Error, Result};
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"HFC1";

pub fn write_feature_cache(
    path: &Path,
    subject_id: &str,
    features: &[AlignedHrtfFeature],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let sid = subject_id.as_bytes();
    buf.extend_from_slice(&(sid.len() as u32).to_le_bytes());
    buf.extend_from_slice(sid);
    buf.extend_from_slice(&(features.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(N_CHANNELS as u32).to_le_bytes());
    buf.extend_from_slice(&(N_BINS as u32).to_le_bytes());
    let normalized = features.first().map(|f| f.normalized).unwrap_or(false);
    buf.push(normalized as u8);
    for f in features {
        f.validate()?;
        if f.normalized != normalized {
            return Err(Error::InvalidData(
                "mixed normalized/unnormalized features in one cache".into(),
            ));
        }
        buf.extend_from_slice(&f.doa.azimuth_deg.to_le_bytes());
        buf.extend_from_slice(&f.doa.elevation_deg.to_le_bytes());
        for v in f.values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    file.write_all(&buf).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<(String, Vec<AlignedHrtfFeature>)> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > data.len() {
            return Err(Error::InvalidData("truncated feature cache".into()));
        }
        let s = &data[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::InvalidData("bad feature cache magic".into()));
    }
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let sid_len = read_u32(&mut pos)? as usize;
    let subject = String::from_utf8(take(&mut pos, sid_len)?.to_vec())
        .map_err(|_| Error::InvalidData("invalid subject id".into()))?;
    let n_doa = read_u32(&mut pos)? as usize;
    let d0 = read_u32(&mut pos)? as usize;
    let d1 = read_u32(&mut pos)? as usize;
    if (d0, d1) != (N_CHANNELS, N_BINS) {
        return Err(Error::InvalidData(format!("unexpected dims ({d0}, {d1})")));
    }
    let normalized = take(&mut pos, 1)?[0] != 0;
    let read_f64 = |pos: &mut usize| -> Result<f64> {
        let b = take(pos, 8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    };
    let mut feats = Vec::with_capacity(n_doa);
    for _ in 0..n_doa {
        let az = read_f64(&mut pos)?;
        let el = read_f64(&mut pos)?;
        let mut values = Array2::zeros((N_CHANNELS, N_BINS));
        for ch in 0..N_CHANNELS {
            for b in 0..N_BINS {
                values[[ch, b]] = read_f64(&mut pos)?;
            }
        }
        feats.push(AlignedHrtfFeature {
            doa: Doa::new(az, el),
            values,
            normalized,
        });
    }
    Ok((subject, feats))
}
