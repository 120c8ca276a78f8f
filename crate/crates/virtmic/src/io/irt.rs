//! IRT1 impulse-response tensor container.

use std::path::Path;

use super::Reader;
use crate::error::{Error, Result};
use crate::sim::IrTensor;

pub fn write_irt(ir: &IrTensor, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"IRT1");
    bytes.extend_from_slice(&(ir.n_sources() as u32).to_le_bytes());
    bytes.extend_from_slice(&(ir.n_mics() as u32).to_le_bytes());
    bytes.extend_from_slice(&(ir.n_taps() as u32).to_le_bytes());
    bytes.extend_from_slice(&ir.sample_rate().to_le_bytes());
    for s in 0..ir.n_sources() {
        for m in 0..ir.n_mics() {
            for t in 0..ir.n_taps() {
                bytes.extend_from_slice(&ir.tap(s, m, t).to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_irt(path: &Path) -> Result<IrTensor> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::format("IRT1", format!("{}: {e}", path.display()))
    })?;
    let mut r = Reader::new(&bytes, "IRT1");
    r.magic(b"IRT1")?;
    let n_sources = r.u32()? as usize;
    let n_mics = r.u32()? as usize;
    let n_taps = r.u32()? as usize;
    let fs = r.f64()?;
    let mut taps = vec![vec![vec![0.0; n_taps]; n_mics]; n_sources];
    for src in taps.iter_mut() {
        for mic in src.iter_mut() {
            for t in mic.iter_mut() {
                *t = r.f64()?;
            }
        }
    }
    r.finish()?;
    IrTensor::new(taps, fs)
}
