//! Minimal AES69 (SOFA) reader: pulls Data.IR, Data.SamplingRate and
//! SourcePosition out of the HDF5 container.

use super::{conform_hrir_set, Doa, HrirSet};
use crate::error::{Error, Result};
use std::path::Path;

pub fn load_sofa(path: &Path) -> Result<HrirSet> {
    let file = hdf5::File::open(path).map_err(|e| Error::Sofa(format!(
        "cannot open {}: {e}",
        path.display()
    )))?;
    let ir = file
        .dataset("Data.IR")
        .map_err(|e| Error::Sofa(format!("missing Data.IR: {e}")))?;
    let ir_shape = ir.shape();
    if ir_shape.len() != 3 {
        return Err(Error::Sofa(format!("Data.IR rank {} != 3", ir_shape.len())));
    }
    let (n_meas, n_recv, n_samp) = (ir_shape[0], ir_shape[1], ir_shape[2]);
    let ir: Vec<f64> = ir
        .read_raw()
        .map_err(|e| Error::Sofa(format!("Data.IR read: {e}")))?;
    if n_recv != 2 {
        return Err(Error::NonStereo(n_recv));
    }
    let sr = file
        .dataset("Data.SamplingRate")
        .map_err(|e| Error::Sofa(format!("missing Data.SamplingRate: {e}")))?;
    let sr: Vec<f64> = sr
        .read_raw()
        .map_err(|e| Error::Sofa(format!("Data.SamplingRate read: {e}")))?;
    let sample_rate = *sr.first().ok_or_else(|| {
        Error::Sofa("empty Data.SamplingRate".into())
    })? as u32;
    let sp = file
        .dataset("SourcePosition")
        .map_err(|e| Error::Sofa(format!("missing SourcePosition (DoA metadata): {e}")))?;
    let sp_shape = sp.shape();
    if sp_shape.len() != 2 || sp_shape[0] != n_meas || sp_shape[1] < 2 {
        return Err(Error::Sofa(format!(
            "SourcePosition shape {sp_shape:?} inconsistent with {n_meas} measurements"
        )));
    }
    let sp_cols = sp_shape[1];
    let sp: Vec<f64> = sp
        .read_raw()
        .map_err(|e| Error::Sofa(format!("SourcePosition read: {e}")))?;
    let subject_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unknown")
        .to_string();
    let mut grid = Vec::with_capacity(n_meas);
    let mut hrirs = Vec::with_capacity(n_meas);
    for m in 0..n_meas {
        grid.push(Doa::new(sp[m * sp_cols], sp[m * sp_cols + 1]));
        let base = m * n_recv * n_samp;
        let left = ir[base..base + n_samp].to_vec();
        let right = ir[base + n_samp..base + 2 * n_samp].to_vec();
        hrirs.push([left, right]);
    }
    conform_hrir_set(HrirSet {
        subject_id,
        sample_rate,
        grid,
        hrirs,
    })
}
