//! OBF1 observation-filter container.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::Reader;
use crate::error::{Error, Result};
use crate::filter::{FrequencyFilter, ObservationFilter, TimeFirFilter};

pub fn write_obf(of: &ObservationFilter, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"OBF1");
    match of {
        ObservationFilter::TimeFir(f) => {
            bytes.push(0u8);
            bytes.extend_from_slice(&(f.n_mics() as u32).to_le_bytes());
            bytes.extend_from_slice(&(f.filter_len() as u32).to_le_bytes());
            bytes.extend_from_slice(&(f.n_targets() as u32).to_le_bytes());
            bytes.extend_from_slice(&f.sample_rate().to_le_bytes());
            let c = f.coeffs();
            for r in 0..c.nrows() {
                for col in 0..c.ncols() {
                    bytes.extend_from_slice(&c[(r, col)].to_le_bytes());
                }
            }
        }
        ObservationFilter::Frequency(f) => {
            bytes.push(1u8);
            bytes.extend_from_slice(&(f.n_mics() as u32).to_le_bytes());
            bytes.extend_from_slice(&(f.n_targets() as u32).to_le_bytes());
            bytes.extend_from_slice(&(f.bins().len() as u32).to_le_bytes());
            bytes.extend_from_slice(&f.sample_rate().to_le_bytes());
            for b in f.bins() {
                bytes.extend_from_slice(&b.to_le_bytes());
            }
            for resp in f.responses() {
                for r in 0..resp.nrows() {
                    for c in 0..resp.ncols() {
                        bytes.extend_from_slice(&resp[(r, c)].re.to_le_bytes());
                        bytes.extend_from_slice(&resp[(r, c)].im.to_le_bytes());
                    }
                }
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_obf(path: &Path) -> Result<ObservationFilter> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, "OBF1");
    r.magic(b"OBF1")?;
    match r.u8()? {
        0 => {
            let m = r.u32()? as usize;
            let i = r.u32()? as usize;
            let e = r.u32()? as usize;
            let fs = r.f64()?;
            let mi = m * i;
            let mut coeffs = DMatrix::zeros(e, mi);
            for row in 0..e {
                for col in 0..mi {
                    coeffs[(row, col)] = r.f64()?;
                }
            }
            r.finish()?;
            Ok(ObservationFilter::TimeFir(TimeFirFilter::new(
                coeffs, m, i, fs,
            )?))
        }
        1 => {
            let m = r.u32()? as usize;
            let e = r.u32()? as usize;
            let nb = r.u32()? as usize;
            let fs = r.f64()?;
            let mut bins = Vec::with_capacity(nb);
            for _ in 0..nb {
                bins.push(r.f64()?);
            }
            let mut responses = Vec::with_capacity(nb);
            for _ in 0..nb {
                let mut resp = DMatrix::zeros(e, m);
                for row in 0..e {
                    for col in 0..m {
                        let re = r.f64()?;
                        let im = r.f64()?;
                        resp[(row, col)] = Complex64::new(re, im);
                    }
                }
                responses.push(resp);
            }
            r.finish()?;
            Ok(ObservationFilter::Frequency(FrequencyFilter::new(
                bins, responses, fs,
            )?))
        }
        d => Err(Error::format("OBF1", format!("unknown domain byte {d}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let coeffs = DMatrix::from_fn(2, 6, |r, c| (r as f64) * 10.0 + c as f64);
        let f = TimeFirFilter::new(coeffs, 3, 2, 10_000.0).unwrap();
        let p = dir.path().join("t.obf");
        write_obf(&ObservationFilter::TimeFir(f.clone()), &p).unwrap();
        match read_obf(&p).unwrap() {
            ObservationFilter::TimeFir(back) => {
                assert_eq!(back.coeffs(), f.coeffs());
                assert_eq!(back.sample_rate(), 10_000.0);
            }
            _ => panic!("wrong domain"),
        }
    }

    #[test]
    fn freq_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bins = vec![0.0, 250.0, 500.0];
        let resp: Vec<DMatrix<Complex64>> = (0..3)
            .map(|b| {
                DMatrix::from_fn(2, 3, |r, c| {
                    Complex64::new(b as f64 + r as f64, c as f64 - 0.5)
                })
            })
            .collect();
        let f = FrequencyFilter::new(bins.clone(), resp.clone(), 1000.0).unwrap();
        let p = dir.path().join("f.obf");
        write_obf(&ObservationFilter::Frequency(f), &p).unwrap();
        match read_obf(&p).unwrap() {
            ObservationFilter::Frequency(back) => {
                assert_eq!(back.bins(), &bins[..]);
                for (a, b) in back.responses().iter().zip(&resp) {
                    assert_eq!(a, b);
                }
            }
            _ => panic!("wrong domain"),
        }
    }
}
