//! Lagged correlation matrix estimation from multichannel signals.
//!
//! Monitoring signals are stacked channel-major over the filter length `I`,
//! so an `M`-channel signal yields `MI`-dimensional snapshot vectors. The
//! auto form averages outer self-products (`MI x MI`), the cross form
//! averages products against target-channel samples (`MI x E`).
//!
//! Estimation is chunked: the averaging window is split into fixed-size
//! chunks, each chunk accumulates sequentially in sample order, and chunk
//! partials are merged in ascending chunk order. The `parallel` feature
//! distributes chunks across threads; because the chunk structure and merge
//! order are fixed, parallel output is bit-identical to the sequential path.

use nalgebra::{DMatrix, DVector};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::MultichannelSignal;

/// Samples per accumulation chunk. Fixed so thread count cannot change the
/// merge order.
const CHUNK: usize = 4096;

/// Relative Frobenius tolerance for the symmetry invariant.
pub const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Eigenvalue tolerance factor for the positive-semidefinite invariant:
/// the minimum eigenvalue must be `>= -PSD_EIG_TOL * spectral_norm`.
pub const PSD_EIG_TOL: f64 = 1e-8;

/// Which correlation form a matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrKind {
    /// Auto form over the stacked monitoring snapshots, `MI x MI`.
    MonitorAuto,
    /// Cross form between stacked monitoring snapshots and target samples,
    /// `MI x E`.
    MonitorCross,
}

/// A stacked-tap correlation matrix with its estimation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedCorrMatrix {
    data: DMatrix<f64>,
    n_mics: usize,
    filter_len: usize,
    n_targets: usize,
    kind: CorrKind,
    window_len: usize,
}

impl LaggedCorrMatrix {
    /// Wrap an existing matrix, checking dimensions against the metadata.
    ///
    /// For `MonitorAuto` the matrix must be `MI x MI` and `n_targets` must
    /// be 0; for `MonitorCross` it must be `MI x E`.
    pub fn from_matrix(
        data: DMatrix<f64>,
        n_mics: usize,
        filter_len: usize,
        n_targets: usize,
        kind: CorrKind,
        window_len: usize,
    ) -> Result<Self> {
        let mi = n_mics * filter_len;
        let expected = match kind {
            CorrKind::MonitorAuto => {
                if n_targets != 0 {
                    return Err(Error::dims(
                        "auto correlation matrix",
                        "n_targets = 0",
                        format!("n_targets = {n_targets}"),
                    ));
                }
                (mi, mi)
            }
            CorrKind::MonitorCross => (mi, n_targets),
        };
        if data.shape() != expected {
            return Err(Error::dims(
                "correlation matrix shape",
                format!("{}x{}", expected.0, expected.1),
                format!("{}x{}", data.nrows(), data.ncols()),
            ));
        }
        Ok(Self {
            data,
            n_mics,
            filter_len,
            n_targets,
            kind,
            window_len,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n_mics(&self) -> usize {
        self.n_mics
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn kind(&self) -> CorrKind {
        self.kind
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Stacked dimension `M * I`.
    pub fn stacked_dim(&self) -> usize {
        self.n_mics * self.filter_len
    }

    /// True when metadata (M, I, E, kind) matches `other`.
    pub fn same_dims(&self, other: &Self) -> bool {
        self.n_mics == other.n_mics
            && self.filter_len == other.filter_len
            && self.n_targets == other.n_targets
            && self.kind == other.kind
    }

    /// Frobenius inner product `tr{self * other^T}`.
    pub fn frobenius_dot(&self, other: &Self) -> f64 {
        self.data.dot(&other.data)
    }

    /// Check the structural invariants: symmetry within
    /// [`SYMMETRY_REL_TOL`] and positive semidefiniteness within
    /// [`PSD_EIG_TOL`] for the auto form.
    pub fn validate(&self) -> Result<()> {
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(
                "correlation matrix contains non-finite entries".into(),
            ));
        }
        if self.kind == CorrKind::MonitorAuto {
            let norm = self.data.norm();
            let asym = (&self.data - self.data.transpose()).norm();
            if asym > SYMMETRY_REL_TOL * norm {
                return Err(Error::NumericalFailure(format!(
                    "auto correlation matrix asymmetric: rel {:.3e}",
                    asym / norm
                )));
            }
            let eig = self.data.clone().symmetric_eigen();
            let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let min = eig.eigenvalues.min();
            if min < -PSD_EIG_TOL * max_abs {
                return Err(Error::NumericalFailure(format!(
                    "auto correlation matrix not PSD: min eigenvalue {min:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// Build the stacked snapshot vector at sample `n`: per channel, the taps
/// `[x_c[n], x_c[n-1], ..., x_c[n-I+1]]`, channels concatenated in order.
pub fn stack_taps(sig: &MultichannelSignal, filter_len: usize, n: usize) -> Result<DVector<f64>> {
    if filter_len == 0 {
        return Err(Error::config("filter_len", "must be >= 1"));
    }
    if n + 1 < filter_len {
        return Err(Error::IndexOutOfRange {
            context: "stack_taps needs n >= I-1",
            index: n,
            limit: filter_len - 1,
        });
    }
    if n >= sig.n_samples() {
        return Err(Error::IndexOutOfRange {
            context: "stack_taps sample index",
            index: n,
            limit: sig.n_samples(),
        });
    }
    let m = sig.n_channels();
    let mut out = DVector::zeros(m * filter_len);
    fill_stack(sig, filter_len, n, out.as_mut_slice());
    Ok(out)
}

#[inline]
fn fill_stack(sig: &MultichannelSignal, filter_len: usize, n: usize, out: &mut [f64]) {
    for (c, ch) in sig.channels().iter().enumerate() {
        let base = c * filter_len;
        for tap in 0..filter_len {
            out[base + tap] = ch[n - tap];
        }
    }
}

/// Valid snapshot index range `[lo, hi)` for a window, after checking the
/// preconditions shared by both estimators.
fn window_range(
    n_samples: usize,
    filter_len: usize,
    start: usize,
    window_len: usize,
) -> Result<(usize, usize)> {
    if filter_len == 0 {
        return Err(Error::config("filter_len", "must be >= 1"));
    }
    if window_len < filter_len {
        return Err(Error::InsufficientSamples {
            context: "window shorter than filter length",
            needed: filter_len,
            available: window_len,
        });
    }
    if start + window_len > n_samples {
        return Err(Error::InsufficientSamples {
            context: "window exceeds signal length",
            needed: start + window_len,
            available: n_samples,
        });
    }
    let lo = start.max(filter_len - 1);
    let hi = start + window_len;
    Ok((lo, hi))
}

/// Split `[lo, hi)` into fixed-size chunk ranges.
fn chunk_ranges(lo: usize, hi: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut a = lo;
    while a < hi {
        let b = (a + CHUNK).min(hi);
        out.push((a, b));
        a = b;
    }
    out
}

fn auto_chunk_partial(
    sig: &MultichannelSignal,
    filter_len: usize,
    range: (usize, usize),
) -> DMatrix<f64> {
    let mi = sig.n_channels() * filter_len;
    let mut acc = DMatrix::zeros(mi, mi);
    let mut phi = vec![0.0; mi];
    for n in range.0..range.1 {
        fill_stack(sig, filter_len, n, &mut phi);
        for k in 0..mi {
            let v = phi[k];
            if v == 0.0 {
                continue;
            }
            let col = acc.column_mut(k);
            let col = col.data.into_slice_mut();
            for (j, c) in col.iter_mut().enumerate() {
                *c += phi[j] * v;
            }
        }
    }
    acc
}

fn cross_chunk_partial(
    mon: &MultichannelSignal,
    err: &MultichannelSignal,
    filter_len: usize,
    range: (usize, usize),
) -> DMatrix<f64> {
    let mi = mon.n_channels() * filter_len;
    let e = err.n_channels();
    let mut acc = DMatrix::zeros(mi, e);
    let mut phi = vec![0.0; mi];
    for n in range.0..range.1 {
        fill_stack(mon, filter_len, n, &mut phi);
        for t in 0..e {
            let v = err.channel(t)[n];
            if v == 0.0 {
                continue;
            }
            let col = acc.column_mut(t);
            let col = col.data.into_slice_mut();
            for (j, c) in col.iter_mut().enumerate() {
                *c += phi[j] * v;
            }
        }
    }
    acc
}

/// Merge chunk partials in ascending chunk order and divide by the snapshot
/// count.
fn merge_partials(partials: Vec<DMatrix<f64>>, count: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut total = DMatrix::zeros(rows, cols);
    for p in partials {
        total += p;
    }
    total / count as f64
}

/// Estimate the auto correlation matrix of the stacked monitoring snapshots
/// over `[start, start + window_len)`.
///
/// Snapshots before index `I-1` cannot be stacked and are skipped; the
/// average divides by the count of valid snapshots. The result is symmetric
/// by construction.
pub fn estimate_corr_auto(
    sig: &MultichannelSignal,
    filter_len: usize,
    start: usize,
    window_len: usize,
) -> Result<LaggedCorrMatrix> {
    #[cfg(feature = "parallel")]
    {
        estimate_corr_auto_impl(sig, filter_len, start, window_len, true)
    }
    #[cfg(not(feature = "parallel"))]
    {
        estimate_corr_auto_impl(sig, filter_len, start, window_len, false)
    }
}

/// Always-sequential variant of [`estimate_corr_auto`]; used by the bench
/// suite and the parallel-equivalence tests.
pub fn estimate_corr_auto_seq(
    sig: &MultichannelSignal,
    filter_len: usize,
    start: usize,
    window_len: usize,
) -> Result<LaggedCorrMatrix> {
    estimate_corr_auto_impl(sig, filter_len, start, window_len, false)
}

fn estimate_corr_auto_impl(
    sig: &MultichannelSignal,
    filter_len: usize,
    start: usize,
    window_len: usize,
    parallel: bool,
) -> Result<LaggedCorrMatrix> {
    let (lo, hi) = window_range(sig.n_samples(), filter_len, start, window_len)?;
    let mi = sig.n_channels() * filter_len;
    let ranges = chunk_ranges(lo, hi);
    let partials: Vec<DMatrix<f64>> = if parallel {
        #[cfg(feature = "parallel")]
        {
            ranges
                .par_iter()
                .map(|&r| auto_chunk_partial(sig, filter_len, r))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            unreachable!("parallel path requested without the parallel feature")
        }
    } else {
        ranges
            .iter()
            .map(|&r| auto_chunk_partial(sig, filter_len, r))
            .collect()
    };
    let data = merge_partials(partials, hi - lo, mi, mi);
    LaggedCorrMatrix::from_matrix(data, sig.n_channels(), filter_len, 0, CorrKind::MonitorAuto, window_len)
}

/// Estimate the cross correlation matrix between stacked monitoring
/// snapshots and target (error-channel) samples over the same window.
pub fn estimate_corr_cross(
    mon: &MultichannelSignal,
    err: &MultichannelSignal,
    filter_len: usize,
    start: usize,
    window_len: usize,
) -> Result<LaggedCorrMatrix> {
    #[cfg(feature = "parallel")]
    {
        estimate_corr_cross_impl(mon, err, filter_len, start, window_len, true)
    }
    #[cfg(not(feature = "parallel"))]
    {
        estimate_corr_cross_impl(mon, err, filter_len, start, window_len, false)
    }
}

/// Always-sequential variant of [`estimate_corr_cross`].
pub fn estimate_corr_cross_seq(
    mon: &MultichannelSignal,
    err: &MultichannelSignal,
    filter_len: usize,
    start: usize,
    window_len: usize,
) -> Result<LaggedCorrMatrix> {
    estimate_corr_cross_impl(mon, err, filter_len, start, window_len, false)
}

fn estimate_corr_cross_impl(
    mon: &MultichannelSignal,
    err: &MultichannelSignal,
    filter_len: usize,
    start: usize,
    window_len: usize,
    parallel: bool,
) -> Result<LaggedCorrMatrix> {
    if mon.n_samples() != err.n_samples() {
        return Err(Error::LengthMismatch {
            context: "monitoring vs target signal length",
            left: mon.n_samples(),
            right: err.n_samples(),
        });
    }
    let (lo, hi) = window_range(mon.n_samples(), filter_len, start, window_len)?;
    let mi = mon.n_channels() * filter_len;
    let e = err.n_channels();
    let ranges = chunk_ranges(lo, hi);
    let partials: Vec<DMatrix<f64>> = if parallel {
        #[cfg(feature = "parallel")]
        {
            ranges
                .par_iter()
                .map(|&r| cross_chunk_partial(mon, err, filter_len, r))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            unreachable!("parallel path requested without the parallel feature")
        }
    } else {
        ranges
            .iter()
            .map(|&r| cross_chunk_partial(mon, err, filter_len, r))
            .collect()
    };
    let data = merge_partials(partials, hi - lo, mi, e);
    LaggedCorrMatrix::from_matrix(data, mon.n_channels(), filter_len, e, CorrKind::MonitorCross, window_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, channels: usize, n: usize) -> MultichannelSignal {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let samples = (0..channels)
            .map(|_| {
                (0..n)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect::<Vec<f64>>()
            })
            .collect();
        MultichannelSignal::new(samples, 10_000.0, None).unwrap()
    }

    /// Independent index-arithmetic reference for stack_taps.
    fn stack_taps_oracle(sig: &MultichannelSignal, i: usize, n: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for c in 0..sig.n_channels() {
            for back in 0..i {
                out.push(sig.channel(c)[n - back]);
            }
        }
        out
    }

    /// Direct double-loop average of outer self-products.
    fn corr_auto_oracle(sig: &MultichannelSignal, i: usize, start: usize, window: usize) -> DMatrix<f64> {
        let mi = sig.n_channels() * i;
        let lo = start.max(i - 1);
        let hi = start + window;
        let mut acc = DMatrix::zeros(mi, mi);
        for n in lo..hi {
            let phi = stack_taps_oracle(sig, i, n);
            for r in 0..mi {
                for c in 0..mi {
                    acc[(r, c)] += phi[r] * phi[c];
                }
            }
        }
        acc / (hi - lo) as f64
    }

    fn corr_cross_oracle(
        mon: &MultichannelSignal,
        err: &MultichannelSignal,
        i: usize,
        start: usize,
        window: usize,
    ) -> DMatrix<f64> {
        let mi = mon.n_channels() * i;
        let e = err.n_channels();
        let lo = start.max(i - 1);
        let hi = start + window;
        let mut acc = DMatrix::zeros(mi, e);
        for n in lo..hi {
            let phi = stack_taps_oracle(mon, i, n);
            for r in 0..mi {
                for c in 0..e {
                    acc[(r, c)] += phi[r] * err.channel(c)[n];
                }
            }
        }
        acc / (hi - lo) as f64
    }

    #[test]
    fn stack_taps_identity_case() {
        let sig = MultichannelSignal::new(vec![vec![5.0]], 1.0, None).unwrap();
        let v = stack_taps(&sig, 1, 0).unwrap();
        assert_eq!(v.as_slice(), &[5.0]);
    }

    #[test]
    fn stack_taps_channel_major_layout() {
        let sig =
            MultichannelSignal::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 1.0, None).unwrap();
        let v = stack_taps(&sig, 2, 1).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn stack_taps_matches_index_oracle() {
        let sig = noise(101, 3, 64);
        for n in [3, 10, 63] {
            let v = stack_taps(&sig, 4, n).unwrap();
            assert_eq!(v.as_slice(), stack_taps_oracle(&sig, 4, n).as_slice());
        }
    }

    #[test]
    fn stack_taps_rejects_early_index() {
        let sig = noise(1, 2, 16);
        assert!(matches!(
            stack_taps(&sig, 4, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(stack_taps(&sig, 4, 3).is_ok());
        assert!(stack_taps(&sig, 4, 16).is_err());
    }

    #[test]
    fn corr_auto_zero_signal() {
        let sig = MultichannelSignal::zeros(2, 32, 1.0).unwrap();
        let r = estimate_corr_auto(&sig, 3, 0, 32).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert_eq!(r.data().shape(), (6, 6));
    }

    #[test]
    fn corr_auto_unit_power() {
        let sig =
            MultichannelSignal::new(vec![vec![1.0, -1.0, 1.0, -1.0]], 1.0, None).unwrap();
        let r = estimate_corr_auto(&sig, 1, 0, 4).unwrap();
        assert_eq!(r.data().shape(), (1, 1));
        assert_eq!(r.data()[(0, 0)], 1.0);
    }

    #[test]
    fn corr_auto_matches_double_loop_oracle() {
        let sig = noise(77, 2, 500);
        let r = estimate_corr_auto(&sig, 3, 0, 400).unwrap();
        let oracle = corr_auto_oracle(&sig, 3, 0, 400);
        let diff = (r.data() - &oracle).norm();
        assert!(diff <= 1e-12 * oracle.norm().max(1.0), "diff = {diff:e}");
        assert_eq!(r.window_len(), 400);
    }

    #[test]
    fn corr_auto_symmetric_exactly() {
        let sig = noise(5, 3, 900);
        let r = estimate_corr_auto(&sig, 4, 10, 800).unwrap();
        assert_eq!(r.data().as_slice(), r.data().transpose().as_slice());
        r.validate().unwrap();
    }

    #[test]
    fn corr_auto_insufficient_samples() {
        let sig = noise(2, 2, 32);
        assert!(matches!(
            estimate_corr_auto(&sig, 8, 0, 4),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            estimate_corr_auto(&sig, 2, 20, 16),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn corr_cross_row_equals_auto_row() {
        let sig = noise(11, 3, 256);
        let err = sig.select_channels(&[0]).unwrap();
        let auto = estimate_corr_auto(&sig, 1, 0, 256).unwrap();
        let cross = estimate_corr_cross(&sig, &err, 1, 0, 256).unwrap();
        for j in 0..3 {
            assert!((cross.data()[(j, 0)] - auto.data()[(j, 0)]).abs() < 1e-15);
        }
    }

    #[test]
    fn corr_cross_zero_target() {
        let mon = noise(3, 2, 64);
        let err = MultichannelSignal::zeros(4, 64, 10_000.0).unwrap();
        let r = estimate_corr_cross(&mon, &err, 2, 0, 64).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert_eq!(r.data().shape(), (4, 4));
    }

    #[test]
    fn corr_cross_matches_double_loop_oracle() {
        let mon = noise(13, 3, 600);
        let err = noise(14, 5, 600);
        let r = estimate_corr_cross(&mon, &err, 8, 0, 600).unwrap();
        let oracle = corr_cross_oracle(&mon, &err, 8, 0, 600);
        let diff = (r.data() - &oracle).norm();
        assert!(diff <= 1e-12 * oracle.norm().max(1.0), "diff = {diff:e}");
        assert_eq!(r.data().shape(), (24, 5));
    }

    #[test]
    fn corr_cross_length_mismatch() {
        let mon = noise(1, 2, 64);
        let err = noise(2, 1, 65);
        assert!(matches!(
            estimate_corr_cross(&mon, &err, 2, 0, 64),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn chunked_merge_spans_chunk_boundaries() {
        // Window longer than one chunk exercises the ordered merge.
        let sig = noise(21, 2, 3 * CHUNK + 100);
        let r = estimate_corr_auto(&sig, 2, 0, 3 * CHUNK).unwrap();
        let oracle = corr_auto_oracle(&sig, 2, 0, 3 * CHUNK);
        let rel = (r.data() - &oracle).norm() / oracle.norm();
        assert!(rel <= 1e-12, "rel = {rel:e}");
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_bit_identical_to_sequential() {
        let sig = noise(31, 3, 2 * CHUNK + 513);
        let err = noise(32, 2, 2 * CHUNK + 513);
        let a_par = estimate_corr_auto(&sig, 4, 7, 2 * CHUNK + 500).unwrap();
        let a_seq = estimate_corr_auto_seq(&sig, 4, 7, 2 * CHUNK + 500).unwrap();
        assert_eq!(a_par.data().as_slice(), a_seq.data().as_slice());
        let c_par = estimate_corr_cross(&sig, &err, 4, 7, 2 * CHUNK + 500).unwrap();
        let c_seq = estimate_corr_cross_seq(&sig, &err, 4, 7, 2 * CHUNK + 500).unwrap();
        assert_eq!(c_par.data().as_slice(), c_seq.data().as_slice());
    }

    #[test]
    fn window_doubling_improves_consistency() {
        // Two disjoint estimates of the same stationary process should agree
        // better as the window doubles: one-sided comparison over 24 trials.
        let short = 300;
        let mut wins = 0;
        let mut dev_short_sum = 0.0;
        let mut dev_long_sum = 0.0;
        for trial in 0..24u64 {
            let sig = noise(1000 + trial, 2, 4 * short + 8);
            let i = 2;
            let dev = |w: usize| {
                let a = estimate_corr_auto(&sig, i, 1, w).unwrap();
                let b = estimate_corr_auto(&sig, i, 2 * short + 4, w).unwrap();
                (a.data() - b.data()).norm()
            };
            let d_short = dev(short);
            let d_long = dev(2 * short);
            dev_short_sum += d_short;
            dev_long_sum += d_long;
            if d_long < d_short {
                wins += 1;
            }
        }
        assert!(dev_long_sum < dev_short_sum);
        assert!(wins >= 16, "only {wins} of 24 trials improved");
    }

    #[test]
    fn from_matrix_validates_dims() {
        let bad = DMatrix::zeros(3, 4);
        assert!(LaggedCorrMatrix::from_matrix(bad, 2, 2, 0, CorrKind::MonitorAuto, 10).is_err());
        let ok = DMatrix::zeros(4, 4);
        assert!(LaggedCorrMatrix::from_matrix(ok, 2, 2, 0, CorrKind::MonitorAuto, 10).is_ok());
        let cross = DMatrix::zeros(4, 3);
        assert!(
            LaggedCorrMatrix::from_matrix(cross, 2, 2, 3, CorrKind::MonitorCross, 10).is_ok()
        );
    }
}
