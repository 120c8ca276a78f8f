//! Optimal observation filters: computation, application, and scoring.
//!
//! The time-domain filter maps stacked monitoring snapshots to target
//! estimates through an `E x MI` coefficient matrix obtained from the
//! regularized normal equations. The frequency-domain filter solves the
//! analogous Hermitian system per bin. Systems are solved by Cholesky
//! factorization with an SVD minimum-norm fallback for singular cases
//! (singular values below `1e-12` of the largest are truncated); an
//! explicit inverse is never formed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::corr::{CorrKind, LaggedCorrMatrix};
use crate::error::{Error, Result};
use crate::signal::MultichannelSignal;
use crate::spectral::{estimate_csd, SpectralMatrixSet};

/// Singular values below this fraction of the largest are truncated in the
/// minimum-norm fallback.
pub const SV_CUTOFF_REL: f64 = 1e-12;

/// Sentinel reported when an error ratio is exactly zero (perfect estimate).
pub const PERFECT_DB: f64 = -300.0;

/// Output samples per application chunk (fixed; see the corr module for the
/// bit-identical parallel convention).
const APPLY_CHUNK: usize = 4096;

/// Causally-constrained FIR observation filter, coefficients `E x MI`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFirFilter {
    coeffs: DMatrix<f64>,
    n_mics: usize,
    filter_len: usize,
    n_targets: usize,
    sample_rate: f64,
}

impl TimeFirFilter {
    pub fn new(
        coeffs: DMatrix<f64>,
        n_mics: usize,
        filter_len: usize,
        sample_rate: f64,
    ) -> Result<Self> {
        let mi = n_mics * filter_len;
        if coeffs.ncols() != mi {
            return Err(Error::dims(
                "FIR filter coefficient columns",
                format!("{mi}"),
                format!("{}", coeffs.ncols()),
            ));
        }
        if !coeffs.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(
                "FIR filter coefficients contain non-finite values".into(),
            ));
        }
        let n_targets = coeffs.nrows();
        Ok(Self {
            coeffs,
            n_mics,
            filter_len,
            n_targets,
            sample_rate,
        })
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
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

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// All-zero filter of the given dimensions.
    pub fn zero(n_mics: usize, filter_len: usize, n_targets: usize, sample_rate: f64) -> Self {
        Self {
            coeffs: DMatrix::zeros(n_targets, n_mics * filter_len),
            n_mics,
            filter_len,
            n_targets,
            sample_rate,
        }
    }

    /// Same filter with the sample-rate metadata replaced.
    pub fn with_sample_rate(mut self, sample_rate: f64) -> Self {
        self.sample_rate = sample_rate;
        self
    }
}

/// Per-bin complex observation filter, `E x M` response per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFilter {
    bins: Vec<f64>,
    response: Vec<DMatrix<Complex64>>,
    n_mics: usize,
    n_targets: usize,
    sample_rate: f64,
}

impl FrequencyFilter {
    pub fn new(
        bins: Vec<f64>,
        response: Vec<DMatrix<Complex64>>,
        sample_rate: f64,
    ) -> Result<Self> {
        if bins.is_empty() || bins.len() != response.len() {
            return Err(Error::dims(
                "frequency filter bins",
                format!("{} responses", bins.len()),
                format!("{}", response.len()),
            ));
        }
        let (e, m) = response[0].shape();
        for r in &response {
            if r.shape() != (e, m) {
                return Err(Error::dims(
                    "frequency filter per-bin shape",
                    format!("{e}x{m}"),
                    format!("{}x{}", r.nrows(), r.ncols()),
                ));
            }
        }
        Ok(Self {
            bins,
            response,
            n_mics: m,
            n_targets: e,
            sample_rate,
        })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn response(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.response[bin]
    }

    pub fn responses(&self) -> &[DMatrix<Complex64>] {
        &self.response
    }

    pub fn n_mics(&self) -> usize {
        self.n_mics
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// Either filter domain, as stored in the OBF1 container.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationFilter {
    TimeFir(TimeFirFilter),
    Frequency(FrequencyFilter),
}

/// Frequency responses of modelled source-to-microphone paths.
///
/// `p_m` is `M x N_v` and `p_e` is `E x N_v` per bin.
#[derive(Debug, Clone)]
pub struct TransferMatrixSet {
    bins: Vec<f64>,
    p_m: Vec<DMatrix<Complex64>>,
    p_e: Vec<DMatrix<Complex64>>,
    sample_rate: f64,
}

impl TransferMatrixSet {
    pub fn new(
        bins: Vec<f64>,
        p_m: Vec<DMatrix<Complex64>>,
        p_e: Vec<DMatrix<Complex64>>,
        sample_rate: f64,
    ) -> Result<Self> {
        if bins.is_empty() || p_m.len() != bins.len() || p_e.len() != bins.len() {
            return Err(Error::dims(
                "transfer set bin counts",
                format!("{}", bins.len()),
                format!("p_m={}, p_e={}", p_m.len(), p_e.len()),
            ));
        }
        let nv = p_m[0].ncols();
        let m = p_m[0].nrows();
        let e = p_e[0].nrows();
        for b in 0..bins.len() {
            if p_m[b].shape() != (m, nv) || p_e[b].shape() != (e, nv) {
                return Err(Error::dims(
                    "transfer set per-bin shapes",
                    format!("p_m {m}x{nv}, p_e {e}x{nv}"),
                    format!("bin {b}: p_m {:?}, p_e {:?}", p_m[b].shape(), p_e[b].shape()),
                ));
            }
        }
        Ok(Self {
            bins,
            p_m,
            p_e,
            sample_rate,
        })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn p_m(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.p_m[bin]
    }

    pub fn p_e(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.p_e[bin]
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// Solve `(A + beta I) X = B` for symmetric `A` without forming an inverse:
/// Cholesky first, SVD minimum-norm fallback for singular systems.
fn solve_sym_real(a: &DMatrix<f64>, beta: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut lhs = a.clone();
    for d in 0..lhs.nrows() {
        lhs[(d, d)] += beta;
    }
    if let Some(chol) = lhs.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let svd = lhs
        .svd_unordered(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    if sigma_max == 0.0 {
        // Zero system: minimum-norm solution is zero.
        return Ok(DMatrix::zeros(a.nrows(), b.ncols()));
    }
    svd.solve(b, SV_CUTOFF_REL * sigma_max)
        .map_err(|e| Error::NumericalFailure(format!("SVD solve failed: {e}")))
}

/// Complex Hermitian analogue of [`solve_sym_real`].
fn solve_herm_complex(
    a: &DMatrix<Complex64>,
    beta: f64,
    b: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let mut lhs = a.clone();
    for d in 0..lhs.nrows() {
        lhs[(d, d)] += Complex64::new(beta, 0.0);
    }
    if let Some(chol) = lhs.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let svd = lhs.svd_unordered(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    if sigma_max == 0.0 {
        return Ok(DMatrix::zeros(a.nrows(), b.ncols()));
    }
    svd.solve(b, SV_CUTOFF_REL * sigma_max)
        .map_err(|e| Error::NumericalFailure(format!("SVD solve failed: {e}")))
}

/// Optimal time-domain observation filter from lagged correlation matrices:
/// the coefficient matrix satisfying `O (R_mm + beta I) = R_me^T`.
pub fn of_time_optimal(
    r_mm: &LaggedCorrMatrix,
    r_me: &LaggedCorrMatrix,
    beta: f64,
) -> Result<TimeFirFilter> {
    if r_mm.kind() != CorrKind::MonitorAuto {
        return Err(Error::dims("of_time_optimal r_mm", "MonitorAuto", "MonitorCross"));
    }
    if r_me.kind() != CorrKind::MonitorCross {
        return Err(Error::dims("of_time_optimal r_me", "MonitorCross", "MonitorAuto"));
    }
    if r_mm.n_mics() != r_me.n_mics() || r_mm.filter_len() != r_me.filter_len() {
        return Err(Error::dims(
            "of_time_optimal stacking",
            format!("M={}, I={}", r_mm.n_mics(), r_mm.filter_len()),
            format!("M={}, I={}", r_me.n_mics(), r_me.filter_len()),
        ));
    }
    if beta < 0.0 {
        return Err(Error::config("beta", "must be >= 0"));
    }
    // (R_mm + beta I) X = R_me, O = X^T; symmetry makes the transpose solve exact.
    let x = solve_sym_real(r_mm.data(), beta, r_me.data())?;
    // Correlation matrices carry no sample rate; 0.0 marks it unspecified
    // until a caller attaches one.
    TimeFirFilter::new(x.transpose(), r_mm.n_mics(), r_mm.filter_len(), 0.0)
}

/// Per-bin optimal frequency-domain observation filter:
/// `O_b (S_mm_b + beta I) = S_me_b`.
pub fn of_freq_optimal(s: &SpectralMatrixSet, beta: f64) -> Result<FrequencyFilter> {
    if beta < 0.0 {
        return Err(Error::config("beta", "must be >= 0"));
    }
    let nb = s.n_bins();
    let solve_bin = |b: usize| -> Result<DMatrix<Complex64>> {
        // Solve (S_mm + beta I) X = S_me^H, then O = X^H.
        let rhs = s.s_me(b).adjoint();
        let x = solve_herm_complex(s.s_mm(b), beta, &rhs)?;
        Ok(x.adjoint())
    };
    let response = solve_bins(nb, solve_bin)?;
    FrequencyFilter::new(s.bins().to_vec(), response, s.sample_rate())
}

/// Model-based frequency-domain filter from transfer matrices and modelled
/// source spectra: `O_b = P_e S_vv P_m^H (P_m S_vv P_m^H + beta I)^{-1}`.
pub fn of_freq_model(
    t: &TransferMatrixSet,
    s_vv: &[DMatrix<Complex64>],
    beta: f64,
) -> Result<FrequencyFilter> {
    if beta < 0.0 {
        return Err(Error::config("beta", "must be >= 0"));
    }
    if s_vv.len() != t.bins().len() {
        return Err(Error::dims(
            "of_freq_model source spectra bins",
            format!("{}", t.bins().len()),
            format!("{}", s_vv.len()),
        ));
    }
    let nv = t.p_m(0).ncols();
    for (b, vv) in s_vv.iter().enumerate() {
        if vv.shape() != (nv, nv) {
            return Err(Error::dims(
                "of_freq_model S_vv shape",
                format!("{nv}x{nv}"),
                format!("bin {b}: {}x{}", vv.nrows(), vv.ncols()),
            ));
        }
    }
    let solve_bin = |b: usize| -> Result<DMatrix<Complex64>> {
        let pm = t.p_m(b);
        let pe = t.p_e(b);
        let vv = &s_vv[b];
        let s_mm = pm * vv * pm.adjoint();
        let s_me = pe * vv * pm.adjoint();
        let x = solve_herm_complex(&s_mm, beta, &s_me.adjoint())?;
        Ok(x.adjoint())
    };
    let response = solve_bins(t.bins().len(), solve_bin)?;
    FrequencyFilter::new(t.bins().to_vec(), response, t.sample_rate())
}

/// Run independent per-bin solves, in parallel when enabled, merging in bin
/// order.
fn solve_bins<F>(n_bins: usize, solve_bin: F) -> Result<Vec<DMatrix<Complex64>>>
where
    F: Fn(usize) -> Result<DMatrix<Complex64>> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n_bins)
            .into_par_iter()
            .map(solve_bin)
            .collect::<Result<Vec<_>>>()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_bins).map(solve_bin).collect::<Result<Vec<_>>>()
    }
}

/// Apply a time-domain observation filter to monitoring signals.
///
/// Output sample `k` (for `k = 0 .. N-I`) uses monitoring samples up to
/// index `k + I - 1` only, so the estimate is strictly causal. The output
/// has `E` channels and length `N - I + 1`.
pub fn apply_of(of: &TimeFirFilter, mon: &MultichannelSignal) -> Result<MultichannelSignal> {
    #[cfg(feature = "parallel")]
    {
        apply_of_impl(of, mon, true)
    }
    #[cfg(not(feature = "parallel"))]
    {
        apply_of_impl(of, mon, false)
    }
}

/// Always-sequential variant of [`apply_of`].
pub fn apply_of_seq(of: &TimeFirFilter, mon: &MultichannelSignal) -> Result<MultichannelSignal> {
    apply_of_impl(of, mon, false)
}

fn apply_of_impl(
    of: &TimeFirFilter,
    mon: &MultichannelSignal,
    parallel: bool,
) -> Result<MultichannelSignal> {
    if mon.n_channels() != of.n_mics() {
        return Err(Error::dims(
            "apply_of monitoring channels",
            format!("{}", of.n_mics()),
            format!("{}", mon.n_channels()),
        ));
    }
    let i = of.filter_len();
    let n = mon.n_samples();
    if n < i {
        return Err(Error::InsufficientSamples {
            context: "signal shorter than filter",
            needed: i,
            available: n,
        });
    }
    let out_len = n - i + 1;
    let e = of.n_targets();

    let ranges: Vec<(usize, usize)> = {
        let mut v = Vec::new();
        let mut a = 0;
        while a < out_len {
            let b = (a + APPLY_CHUNK).min(out_len);
            v.push((a, b));
            a = b;
        }
        v
    };

    let run_chunk = |&(a, b): &(usize, usize)| -> DMatrix<f64> {
        let mi = of.n_mics() * i;
        let mut phi = DVector::zeros(mi);
        let mut block = DMatrix::zeros(e, b - a);
        for k in a..b {
            let sample = k + i - 1;
            for (c, ch) in mon.channels().iter().enumerate() {
                let base = c * i;
                for tap in 0..i {
                    phi[base + tap] = ch[sample - tap];
                }
            }
            let y = of.coeffs() * &phi;
            block.set_column(k - a, &y);
        }
        block
    };

    let blocks: Vec<DMatrix<f64>> = if parallel {
        #[cfg(feature = "parallel")]
        {
            ranges.par_iter().map(run_chunk).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            unreachable!("parallel path requested without the parallel feature")
        }
    } else {
        ranges.iter().map(run_chunk).collect()
    };

    let mut channels = vec![Vec::with_capacity(out_len); e];
    for block in &blocks {
        for t in 0..e {
            channels[t].extend(block.row(t).iter().copied());
        }
    }
    MultichannelSignal::new(channels, mon.sample_rate(), None)
}

/// Per-bin and broadband estimation error in dB.
#[derive(Debug, Clone)]
pub struct ErrorSpectrum {
    pub bins: Vec<f64>,
    pub l_eps_db: Vec<f64>,
    pub broadband_db: f64,
}

/// Estimation-error spectrum: the dB ratio of residual power to reference
/// power, per bin and summed across bins.
///
/// Bins with zero reference power report `+inf`; an exactly zero ratio
/// reports the [`PERFECT_DB`] sentinel.
pub fn estimation_error_spectrum(
    d_e: &MultichannelSignal,
    d_e_hat: &MultichannelSignal,
    fft_len: usize,
) -> Result<ErrorSpectrum> {
    if d_e.n_channels() != d_e_hat.n_channels() {
        return Err(Error::dims(
            "error spectrum channels",
            format!("{}", d_e.n_channels()),
            format!("{}", d_e_hat.n_channels()),
        ));
    }
    if d_e.n_samples() != d_e_hat.n_samples() {
        return Err(Error::LengthMismatch {
            context: "error spectrum signal lengths",
            left: d_e.n_samples(),
            right: d_e_hat.n_samples(),
        });
    }
    let eps_channels: Vec<Vec<f64>> = d_e
        .channels()
        .iter()
        .zip(d_e_hat.channels())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let eps = MultichannelSignal::new(eps_channels, d_e.sample_rate(), None)?;

    let csd_eps = estimate_csd(&eps, fft_len, 0.5)?;
    let csd_ref = estimate_csd(d_e, fft_len, 0.5)?;

    let trace = |csd: &crate::spectral::CrossSpectralDensity, b: usize| -> f64 {
        (0..csd.n_channels()).map(|c| csd.matrix(b)[(c, c)].re).sum()
    };

    let n_bins = csd_ref.n_bins();
    let mut l_eps_db = Vec::with_capacity(n_bins);
    let mut total_eps = 0.0;
    let mut total_ref = 0.0;
    for b in 0..n_bins {
        let te = trace(&csd_eps, b);
        let tr = trace(&csd_ref, b);
        total_eps += te;
        total_ref += tr;
        l_eps_db.push(db_ratio(te, tr));
    }
    let broadband_db = db_ratio(total_eps, total_ref);
    Ok(ErrorSpectrum {
        bins: csd_ref.bins().to_vec(),
        l_eps_db,
        broadband_db,
    })
}

fn db_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else if num == 0.0 {
        PERFECT_DB
    } else {
        10.0 * (num / den).abs().log10()
    }
}
