//! Binary container formats and CSV exports.
//!
//! All containers are little-endian with a four-byte magic:
//!
//! * `LCM1` — lagged correlation matrix: `u32` M, `u32` I, `u32` E,
//!   `u8` kind (0 auto, 1 cross), then the `f64` row-major payload
//!   (`MI x MI` for auto, `MI x E` for cross). The estimation window is not
//!   part of the container; loaders set it to 0 (unknown).
//! * `OBF1` — observation filter: `u8` domain (0 time, 1 frequency).
//!   Time: `u32` M, `u32` I, `u32` E, `f64` sample rate, `E x MI` row-major
//!   `f64` coefficients. Frequency: `u32` M, `u32` E, `u32` n_bins,
//!   `f64` sample rate, `n_bins` bin frequencies, then per bin the `E x M`
//!   row-major response as interleaved re/im `f64` pairs.
//! * `IRT1` — impulse-response tensor: `u32` sources, `u32` mics,
//!   `u32` taps, `f64` sample rate, `f64` payload in source-major,
//!   mic-then-tap order.

mod caldir;
mod csv_export;
mod irt;
mod lcm;
mod obf;

pub use caldir::{load_calibration_dir, save_calibration_dir, CalibrationDirMeta};
pub use csv_export::{
    write_filter_csv, write_history_csv, write_matrix_csv, write_spectra_csv,
};
pub use irt::{read_irt, write_irt};
pub use lcm::{read_lcm, write_lcm};
pub use obf::{read_obf, write_obf};

use crate::error::{Error, Result};

/// Little-endian byte cursor shared by the container readers.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            format,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.format,
                format!(
                    "truncated: need {} bytes at offset {}, have {}",
                    n,
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(Error::format(
                self.format,
                format!("bad magic {got:?}, expected {expect:?}"),
            ));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.format,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
