//! Cross-spectral density estimation and spectral matrix sets.
//!
//! The estimator is a Hann-windowed averaged periodogram with configurable
//! overlap, returning one-sided density-scaled matrices so that summing a
//! channel's auto-spectrum times the bin width recovers its time-domain
//! power. Segment partials accumulate in fixed-size groups merged in order,
//! so the `parallel` feature changes wall time but not the result bits.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::MultichannelSignal;

/// Segments per accumulation group; fixed so the merge order is independent
/// of thread count.
const SEG_CHUNK: usize = 16;

/// Relative Frobenius tolerance for the per-bin Hermitian invariant.
pub const HERMITIAN_REL_TOL: f64 = 1e-10;

/// Full cross-spectral density of a multichannel signal.
///
/// `matrix(b)[(i, j)]` estimates `E[X_i(w_b) * conj(X_j(w_b))]` with
/// one-sided density scaling, so each per-bin matrix is Hermitian with a
/// real nonnegative diagonal.
#[derive(Debug, Clone)]
pub struct CrossSpectralDensity {
    bins: Vec<f64>,
    matrices: Vec<DMatrix<Complex64>>,
    sample_rate: f64,
    fft_len: usize,
    n_segments: usize,
}

impl CrossSpectralDensity {
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn matrix(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.matrices[bin]
    }

    pub fn matrices(&self) -> &[DMatrix<Complex64>] {
        &self.matrices
    }

    pub fn n_channels(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    /// Bin spacing in Hz.
    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.fft_len as f64
    }

    /// One-sided auto-spectrum of channel `c` (real part of the diagonal).
    pub fn auto_spectrum(&self, c: usize) -> Vec<f64> {
        self.matrices.iter().map(|m| m[(c, c)].re).collect()
    }

    /// Magnitude-squared coherence between channels `i` and `j` per bin.
    ///
    /// Bins where either auto-spectrum is zero report zero coherence.
    pub fn coherence(&self, i: usize, j: usize) -> Vec<f64> {
        self.matrices
            .iter()
            .map(|m| {
                let sii = m[(i, i)].re;
                let sjj = m[(j, j)].re;
                if sii <= 0.0 || sjj <= 0.0 {
                    0.0
                } else {
                    m[(i, j)].norm_sqr() / (sii * sjj)
                }
            })
            .collect()
    }

    /// Largest relative Hermitian deviation over all bins,
    /// `max_b ||S_b - S_b^H||_F / ||S_b||_F` (zero-norm bins skipped).
    pub fn max_hermitian_deviation(&self) -> f64 {
        self.matrices
            .iter()
            .filter_map(|m| {
                let norm = m.norm();
                if norm == 0.0 {
                    None
                } else {
                    Some((m - m.adjoint()).norm() / norm)
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

struct SegmentPlan {
    starts: Vec<usize>,
    window: Vec<f64>,
    n_bins: usize,
}

fn plan_segments(n_samples: usize, fft_len: usize, overlap_frac: f64) -> Result<SegmentPlan> {
    if fft_len == 0 {
        return Err(Error::config("fft_len", "must be >= 1"));
    }
    if fft_len > n_samples {
        return Err(Error::InsufficientSamples {
            context: "signal shorter than FFT length",
            needed: fft_len,
            available: n_samples,
        });
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::config("overlap_frac", "must be in [0, 1)"));
    }
    let hop = ((fft_len as f64) * (1.0 - overlap_frac)).round().max(1.0) as usize;
    let mut starts = Vec::new();
    let mut s = 0;
    while s + fft_len <= n_samples {
        starts.push(s);
        s += hop;
    }
    Ok(SegmentPlan {
        starts,
        window: hann(fft_len),
        n_bins: fft_len / 2 + 1,
    })
}

/// Accumulated per-bin outer products for one group of segments.
fn segment_group_partial(
    sig: &MultichannelSignal,
    plan: &SegmentPlan,
    fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    group: &[usize],
) -> Vec<DMatrix<Complex64>> {
    let c = sig.n_channels();
    let fft_len = plan.window.len();
    let mut acc: Vec<DMatrix<Complex64>> = vec![DMatrix::zeros(c, c); plan.n_bins];
    let mut buf = vec![Complex64::default(); fft_len];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // spectra[ch][bin]
    let mut spectra = vec![vec![Complex64::default(); plan.n_bins]; c];
    for &start in group {
        for ch in 0..c {
            let samples = &sig.channel(ch)[start..start + fft_len];
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(samples[n] * plan.window[n], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            spectra[ch][..plan.n_bins].copy_from_slice(&buf[..plan.n_bins]);
        }
        for (bin, m) in acc.iter_mut().enumerate() {
            for j in 0..c {
                let xj = spectra[j][bin].conj();
                for i in 0..c {
                    m[(i, j)] += spectra[i][bin] * xj;
                }
            }
        }
    }
    acc
}

/// Estimate the full cross-spectral density matrix of a multichannel signal
/// via a Hann-windowed averaged periodogram.
///
/// One-sided density scaling: for long unit-variance white noise, each
/// channel's auto-spectrum is flat and sums (times the bin width) to the
/// channel variance.
pub fn estimate_csd(
    sig: &MultichannelSignal,
    fft_len: usize,
    overlap_frac: f64,
) -> Result<CrossSpectralDensity> {
    #[cfg(feature = "parallel")]
    {
        estimate_csd_impl(sig, fft_len, overlap_frac, true)
    }
    #[cfg(not(feature = "parallel"))]
    {
        estimate_csd_impl(sig, fft_len, overlap_frac, false)
    }
}

/// Always-sequential variant of [`estimate_csd`]; used by the bench suite
/// and the parallel-equivalence tests.
pub fn estimate_csd_seq(
    sig: &MultichannelSignal,
    fft_len: usize,
    overlap_frac: f64,
) -> Result<CrossSpectralDensity> {
    estimate_csd_impl(sig, fft_len, overlap_frac, false)
}

fn estimate_csd_impl(
    sig: &MultichannelSignal,
    fft_len: usize,
    overlap_frac: f64,
    parallel: bool,
) -> Result<CrossSpectralDensity> {
    let plan = plan_segments(sig.n_samples(), fft_len, overlap_frac)?;
    let c = sig.n_channels();
    let fft = FftPlanner::new().plan_fft_forward(fft_len);
    let groups: Vec<&[usize]> = plan.starts.chunks(SEG_CHUNK).collect();

    let partials: Vec<Vec<DMatrix<Complex64>>> = if parallel {
        #[cfg(feature = "parallel")]
        {
            groups
                .par_iter()
                .map(|g| segment_group_partial(sig, &plan, &fft, g))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            unreachable!("parallel path requested without the parallel feature")
        }
    } else {
        groups
            .iter()
            .map(|g| segment_group_partial(sig, &plan, &fft, g))
            .collect()
    };

    let n_segments = plan.starts.len();
    let mut totals: Vec<DMatrix<Complex64>> = vec![DMatrix::zeros(c, c); plan.n_bins];
    for p in partials {
        for (t, m) in totals.iter_mut().zip(p) {
            *t += m;
        }
    }

    // Density scaling with one-sided doubling (DC and Nyquist excluded).
    let u: f64 = plan.window.iter().map(|w| w * w).sum();
    let base_scale = 1.0 / (sig.sample_rate() * u * n_segments as f64);
    let nyquist_bin = if fft_len % 2 == 0 {
        Some(fft_len / 2)
    } else {
        None
    };
    for (bin, m) in totals.iter_mut().enumerate() {
        let one_sided = if bin == 0 || Some(bin) == nyquist_bin {
            1.0
        } else {
            2.0
        };
        *m *= Complex64::new(base_scale * one_sided, 0.0);
    }

    let df = sig.sample_rate() / fft_len as f64;
    let bins = (0..plan.n_bins).map(|b| b as f64 * df).collect();
    Ok(CrossSpectralDensity {
        bins,
        matrices: totals,
        sample_rate: sig.sample_rate(),
        fft_len,
        n_segments,
    })
}

/// Per-bin spectral matrices partitioned into monitoring and target blocks.
///
/// `s_mm` is `M x M`, `s_me` is `E x M` (target rows against monitoring
/// columns), `s_ee` is `E x E`. `s_vv` carries modelled source spectra for
/// the model-based filter path when available.
#[derive(Debug, Clone)]
pub struct SpectralMatrixSet {
    bins: Vec<f64>,
    s_mm: Vec<DMatrix<Complex64>>,
    s_me: Vec<DMatrix<Complex64>>,
    s_ee: Vec<DMatrix<Complex64>>,
    s_vv: Option<Vec<DMatrix<Complex64>>>,
    sample_rate: f64,
}

impl SpectralMatrixSet {
    pub fn new(
        bins: Vec<f64>,
        s_mm: Vec<DMatrix<Complex64>>,
        s_me: Vec<DMatrix<Complex64>>,
        s_ee: Vec<DMatrix<Complex64>>,
        s_vv: Option<Vec<DMatrix<Complex64>>>,
        sample_rate: f64,
    ) -> Result<Self> {
        let nb = bins.len();
        if s_mm.len() != nb || s_me.len() != nb || s_ee.len() != nb {
            return Err(Error::dims(
                "spectral set bin counts",
                format!("{nb} per block"),
                format!("mm={}, me={}, ee={}", s_mm.len(), s_me.len(), s_ee.len()),
            ));
        }
        if let Some(vv) = &s_vv {
            if vv.len() != nb {
                return Err(Error::dims(
                    "spectral set bin counts",
                    format!("{nb}"),
                    format!("vv={}", vv.len()),
                ));
            }
        }
        if nb == 0 {
            return Err(Error::config("bins", "at least one bin required"));
        }
        let m = s_mm[0].nrows();
        let e = s_ee[0].nrows();
        for b in 0..nb {
            if s_mm[b].shape() != (m, m) || s_me[b].shape() != (e, m) || s_ee[b].shape() != (e, e)
            {
                return Err(Error::dims(
                    "spectral set per-bin shapes",
                    format!("mm {m}x{m}, me {e}x{m}, ee {e}x{e}"),
                    format!(
                        "bin {b}: mm {:?}, me {:?}, ee {:?}",
                        s_mm[b].shape(),
                        s_me[b].shape(),
                        s_ee[b].shape()
                    ),
                ));
            }
        }
        Ok(Self {
            bins,
            s_mm,
            s_me,
            s_ee,
            s_vv,
            sample_rate,
        })
    }

    /// Partition a joint monitoring + target capture into spectral blocks.
    pub fn from_signals(
        mon: &MultichannelSignal,
        err: &MultichannelSignal,
        fft_len: usize,
        overlap_frac: f64,
    ) -> Result<Self> {
        if mon.n_samples() != err.n_samples() {
            return Err(Error::LengthMismatch {
                context: "monitoring vs target signal length",
                left: mon.n_samples(),
                right: err.n_samples(),
            });
        }
        if mon.sample_rate() != err.sample_rate() {
            return Err(Error::config(
                "sample_rate",
                "monitoring and target sample rates differ",
            ));
        }
        let m = mon.n_channels();
        let e = err.n_channels();
        let mut channels = Vec::with_capacity(m + e);
        channels.extend(mon.channels().iter().cloned());
        channels.extend(err.channels().iter().cloned());
        let joint = MultichannelSignal::new(channels, mon.sample_rate(), None)?;
        let csd = estimate_csd(&joint, fft_len, overlap_frac)?;

        let mut s_mm = Vec::with_capacity(csd.n_bins());
        let mut s_me = Vec::with_capacity(csd.n_bins());
        let mut s_ee = Vec::with_capacity(csd.n_bins());
        for g in csd.matrices() {
            s_mm.push(g.view((0, 0), (m, m)).into_owned());
            s_me.push(g.view((m, 0), (e, m)).into_owned());
            s_ee.push(g.view((m, m), (e, e)).into_owned());
        }
        Self::new(csd.bins().to_vec(), s_mm, s_me, s_ee, None, mon.sample_rate())
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn n_monitor(&self) -> usize {
        self.s_mm[0].nrows()
    }

    pub fn n_target(&self) -> usize {
        self.s_ee[0].nrows()
    }

    pub fn s_mm(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.s_mm[bin]
    }

    pub fn s_me(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.s_me[bin]
    }

    pub fn s_ee(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.s_ee[bin]
    }

    pub fn s_vv(&self) -> Option<&[DMatrix<Complex64>]> {
        self.s_vv.as_deref()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// Maximum magnitude-squared coherence between channels of different groups.
///
/// All groups must share sample rate and length. Used as an incoherence
/// diagnostic for calibration signals; values near zero support superposing
/// per-source correlation matrices.
pub fn max_intergroup_coherence(
    groups: &[MultichannelSignal],
    fft_len: usize,
    overlap_frac: f64,
) -> Result<f64> {
    if groups.len() < 2 {
        return Ok(0.0);
    }
    let n = groups[0].n_samples();
    let fs = groups[0].sample_rate();
    let mut channels = Vec::new();
    let mut group_of = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        if g.n_samples() != n {
            return Err(Error::LengthMismatch {
                context: "coherence group lengths",
                left: n,
                right: g.n_samples(),
            });
        }
        if g.sample_rate() != fs {
            return Err(Error::config("sample_rate", "coherence group rates differ"));
        }
        for ch in g.channels() {
            channels.push(ch.clone());
            group_of.push(gi);
        }
    }
    let joint = MultichannelSignal::new(channels, fs, None)?;
    let csd = estimate_csd(&joint, fft_len, overlap_frac)?;
    let c = joint.n_channels();
    let mut max_msc = 0.0f64;
    for i in 0..c {
        for j in (i + 1)..c {
            if group_of[i] == group_of[j] {
                continue;
            }
            let msc = csd.coherence(i, j);
            max_msc = msc.iter().fold(max_msc, |a, &v| a.max(v));
        }
    }
    Ok(max_msc)
}
