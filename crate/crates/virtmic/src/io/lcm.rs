//! LCM1 correlation-matrix container.

use std::path::Path;

use nalgebra::DMatrix;

use super::Reader;
use crate::corr::{CorrKind, LaggedCorrMatrix};
use crate::error::{Error, Result};

pub fn write_lcm(m: &LaggedCorrMatrix, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(17 + 8 * m.data().len());
    bytes.extend_from_slice(b"LCM1");
    bytes.extend_from_slice(&(m.n_mics() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.filter_len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.n_targets() as u32).to_le_bytes());
    bytes.push(match m.kind() {
        CorrKind::MonitorAuto => 0,
        CorrKind::MonitorCross => 1,
    });
    let data = m.data();
    for r in 0..data.nrows() {
        for c in 0..data.ncols() {
            bytes.extend_from_slice(&data[(r, c)].to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_lcm(path: &Path) -> Result<LaggedCorrMatrix> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, "LCM1");
    r.magic(b"LCM1")?;
    let m = r.u32()? as usize;
    let i = r.u32()? as usize;
    let e = r.u32()? as usize;
    let kind = match r.u8()? {
        0 => CorrKind::MonitorAuto,
        1 => CorrKind::MonitorCross,
        k => return Err(Error::format("LCM1", format!("unknown kind byte {k}"))),
    };
    let mi = m.checked_mul(i).ok_or_else(|| {
        Error::format("LCM1", format!("dimension overflow: M={m}, I={i}"))
    })?;
    let (rows, cols) = match kind {
        CorrKind::MonitorAuto => (mi, mi),
        CorrKind::MonitorCross => (mi, e),
    };
    let mut data = DMatrix::zeros(rows, cols);
    for row in 0..rows {
        for col in 0..cols {
            data[(row, col)] = r.f64()?;
        }
    }
    r.finish()?;
    LaggedCorrMatrix::from_matrix(data, m, i, if kind == CorrKind::MonitorAuto { 0 } else { e }, kind, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_auto_and_cross() {
        let dir = tempfile::tempdir().unwrap();
        let auto = LaggedCorrMatrix::from_matrix(
            DMatrix::from_fn(6, 6, |r, c| (r * 6 + c) as f64 * 0.25),
            3,
            2,
            0,
            CorrKind::MonitorAuto,
            400,
        )
        .unwrap();
        let p = dir.path().join("a.lcm");
        write_lcm(&auto, &p).unwrap();
        let back = read_lcm(&p).unwrap();
        assert_eq!(back.data(), auto.data());
        assert_eq!(back.kind(), CorrKind::MonitorAuto);
        assert_eq!(back.n_mics(), 3);
        assert_eq!(back.filter_len(), 2);
        // Window length is not stored in the container.
        assert_eq!(back.window_len(), 0);

        let cross = LaggedCorrMatrix::from_matrix(
            DMatrix::from_fn(6, 4, |r, c| (r as f64) - (c as f64) * 0.5),
            3,
            2,
            4,
            CorrKind::MonitorCross,
            400,
        )
        .unwrap();
        let p = dir.path().join("c.lcm");
        write_lcm(&cross, &p).unwrap();
        let back = read_lcm(&p).unwrap();
        assert_eq!(back.data(), cross.data());
        assert_eq!(back.n_targets(), 4);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.lcm");
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(matches!(read_lcm(&p), Err(Error::Format { .. })));

        let auto = LaggedCorrMatrix::from_matrix(
            DMatrix::identity(4, 4),
            2,
            2,
            0,
            CorrKind::MonitorAuto,
            0,
        )
        .unwrap();
        let p2 = dir.path().join("trunc.lcm");
        write_lcm(&auto, &p2).unwrap();
        let mut bytes = std::fs::read(&p2).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p2, bytes).unwrap();
        assert!(matches!(read_lcm(&p2), Err(Error::Format { .. })));
    }
}
