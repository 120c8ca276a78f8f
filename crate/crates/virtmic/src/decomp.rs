//! Per-source calibration sets and superposed reconstruction.
//!
//! During calibration each source plays alone, yielding one auto and one
//! cross correlation matrix per source. Under the incoherence assumption
//! the operating matrices are weighted sums of these, with the squared
//! source ratios as weights, and the observation filter can be rebuilt for
//! any ratio vector without re-measuring.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::corr::{estimate_corr_auto, estimate_corr_cross, CorrKind, LaggedCorrMatrix};
use crate::error::{Error, Result};
use crate::filter::{of_freq_optimal, of_time_optimal, FrequencyFilter, TimeFirFilter};
use crate::signal::MultichannelSignal;
use crate::spectral::{max_intergroup_coherence, SpectralMatrixSet};

/// Calibration signals whose inter-source coherence exceeds this value
/// undermine the superposition assumption and should be flagged.
pub const COHERENCE_WARN_THRESHOLD: f64 = 0.2;

/// Squared source-ratio vector with the nonnegativity invariant enforced.
///
/// Reconstruction functions also accept raw slices, since tracking iterates
/// can transiently leave the nonnegative orthant.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRatioVector(Vec<f64>);

impl SourceRatioVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::config("z", "must have at least one entry"));
        }
        for (i, &v) in z.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(
                    "z",
                    format!("entry {i} must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(Self(z))
    }

    /// Squared ratios from linear source-strength ratios: `z = r^2`.
    pub fn from_ratios(r: &[f64]) -> Result<Self> {
        Self::new(r.iter().map(|v| v * v).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-source correlation matrices measured with one source active at a
/// time, all sharing dimensions and estimation window.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    per_source_auto: Vec<LaggedCorrMatrix>,
    per_source_cross: Vec<LaggedCorrMatrix>,
    reference_strengths: String,
}

impl CalibrationSet {
    /// Assemble a set from prepared matrices, checking cross-source
    /// dimension consistency.
    pub fn new(
        per_source_auto: Vec<LaggedCorrMatrix>,
        per_source_cross: Vec<LaggedCorrMatrix>,
        reference_strengths: String,
    ) -> Result<Self> {
        if per_source_auto.is_empty() || per_source_auto.len() != per_source_cross.len() {
            return Err(Error::dims(
                "calibration set sizes",
                "equal nonzero auto/cross counts",
                format!(
                    "auto={}, cross={}",
                    per_source_auto.len(),
                    per_source_cross.len()
                ),
            ));
        }
        let a0 = &per_source_auto[0];
        let c0 = &per_source_cross[0];
        if a0.kind() != CorrKind::MonitorAuto || c0.kind() != CorrKind::MonitorCross {
            return Err(Error::dims(
                "calibration set kinds",
                "auto then cross",
                "mismatched matrix kinds",
            ));
        }
        if a0.n_mics() != c0.n_mics() || a0.filter_len() != c0.filter_len() {
            return Err(Error::dims(
                "calibration stacking",
                format!("M={}, I={}", a0.n_mics(), a0.filter_len()),
                format!("M={}, I={}", c0.n_mics(), c0.filter_len()),
            ));
        }
        for m in per_source_auto.iter().skip(1) {
            if !m.same_dims(a0) {
                return Err(Error::dims(
                    "calibration auto dims",
                    format!("{}x{}", a0.data().nrows(), a0.data().ncols()),
                    format!("{}x{}", m.data().nrows(), m.data().ncols()),
                ));
            }
        }
        for m in per_source_cross.iter().skip(1) {
            if !m.same_dims(c0) {
                return Err(Error::dims(
                    "calibration cross dims",
                    format!("{}x{}", c0.data().nrows(), c0.data().ncols()),
                    format!("{}x{}", m.data().nrows(), m.data().ncols()),
                ));
            }
        }
        Ok(Self {
            per_source_auto,
            per_source_cross,
            reference_strengths,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.per_source_auto.len()
    }

    pub fn n_mics(&self) -> usize {
        self.per_source_auto[0].n_mics()
    }

    pub fn filter_len(&self) -> usize {
        self.per_source_auto[0].filter_len()
    }

    pub fn n_targets(&self) -> usize {
        self.per_source_cross[0].n_targets()
    }

    pub fn auto(&self, source: usize) -> &LaggedCorrMatrix {
        &self.per_source_auto[source]
    }

    pub fn cross(&self, source: usize) -> &LaggedCorrMatrix {
        &self.per_source_cross[source]
    }

    pub fn autos(&self) -> &[LaggedCorrMatrix] {
        &self.per_source_auto
    }

    pub fn crosses(&self) -> &[LaggedCorrMatrix] {
        &self.per_source_cross
    }

    pub fn reference_strengths(&self) -> &str {
        &self.reference_strengths
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.n_sources() {
            return Err(Error::LengthMismatch {
                context: "ratio vector vs calibration sources",
                left: z.len(),
                right: self.n_sources(),
            });
        }
        Ok(())
    }
}

/// Estimate per-source calibration matrices from solo-capture pairs.
///
/// Each pair is (monitoring, target) with exactly one source active;
/// all pairs must share channel counts, sample rate, and at least
/// `window` samples. Estimation starts at sample 0.
pub fn calibrate(
    per_source_signals: &[(MultichannelSignal, MultichannelSignal)],
    filter_len: usize,
    window: usize,
) -> Result<CalibrationSet> {
    if per_source_signals.is_empty() {
        return Err(Error::config("per_source_signals", "at least one source required"));
    }
    let (m0, e0) = (
        per_source_signals[0].0.n_channels(),
        per_source_signals[0].1.n_channels(),
    );
    let fs = per_source_signals[0].0.sample_rate();
    let mut autos = Vec::with_capacity(per_source_signals.len());
    let mut crosses = Vec::with_capacity(per_source_signals.len());
    for (mon, err) in per_source_signals {
        if mon.n_channels() != m0 || err.n_channels() != e0 {
            return Err(Error::dims(
                "calibration pair channels",
                format!("M={m0}, E={e0}"),
                format!("M={}, E={}", mon.n_channels(), err.n_channels()),
            ));
        }
        if mon.sample_rate() != fs || err.sample_rate() != fs {
            return Err(Error::config("sample_rate", "calibration pairs disagree"));
        }
        autos.push(estimate_corr_auto(mon, filter_len, 0, window)?);
        crosses.push(estimate_corr_cross(mon, err, filter_len, 0, window)?);
    }
    CalibrationSet::new(autos, crosses, "unit-variance white noise".to_string())
}

/// Maximum inter-source magnitude-squared coherence of the calibration
/// monitoring captures. Values above [`COHERENCE_WARN_THRESHOLD`] weaken the
/// incoherent-superposition premise.
pub fn calibration_coherence(
    per_source_signals: &[(MultichannelSignal, MultichannelSignal)],
    fft_len: usize,
) -> Result<f64> {
    let groups: Vec<MultichannelSignal> = per_source_signals
        .iter()
        .map(|(mon, _)| mon.clone())
        .collect();
    max_intergroup_coherence(&groups, fft_len, 0.5)
}

/// Weighted sum helper with index-ascending accumulation order.
fn weighted_sum(matrices: &[LaggedCorrMatrix], z: &[f64]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(matrices[0].data().nrows(), matrices[0].data().ncols());
    for (w, m) in z.iter().zip(matrices) {
        acc.zip_apply(m.data(), |a, b| *a += w * b);
    }
    acc
}

/// Superpose per-source auto matrices: `sum_nv z_nv R_mm^(nv)`.
pub fn reconstruct_auto(cal: &CalibrationSet, z: &[f64]) -> Result<LaggedCorrMatrix> {
    cal.check_z(z)?;
    let data = weighted_sum(&cal.per_source_auto, z);
    LaggedCorrMatrix::from_matrix(
        data,
        cal.n_mics(),
        cal.filter_len(),
        0,
        CorrKind::MonitorAuto,
        cal.per_source_auto[0].window_len(),
    )
}

/// Superpose per-source cross matrices: `sum_nv z_nv R_me^(nv)`.
pub fn reconstruct_cross(cal: &CalibrationSet, z: &[f64]) -> Result<LaggedCorrMatrix> {
    cal.check_z(z)?;
    let data = weighted_sum(&cal.per_source_cross, z);
    LaggedCorrMatrix::from_matrix(
        data,
        cal.n_mics(),
        cal.filter_len(),
        cal.n_targets(),
        CorrKind::MonitorCross,
        cal.per_source_cross[0].window_len(),
    )
}

/// Observation filter reconstructed for a ratio vector:
/// the optimal filter of the superposed matrices.
pub fn of_decomposed(cal: &CalibrationSet, z: &[f64], beta: f64) -> Result<TimeFirFilter> {
    let r_mm = reconstruct_auto(cal, z)?;
    let r_me = reconstruct_cross(cal, z)?;
    of_time_optimal(&r_mm, &r_me, beta)
}

/// Frequency-domain analogue of [`of_decomposed`] over per-source spectral
/// sets sharing one bin grid.
pub fn of_decomposed_freq(
    per_source: &[SpectralMatrixSet],
    z: &[f64],
    beta: f64,
) -> Result<FrequencyFilter> {
    let superposed = superpose_spectral(per_source, z)?;
    of_freq_optimal(&superposed, beta)
}

/// Superpose per-source spectral sets with the given weights.
pub fn superpose_spectral(per_source: &[SpectralMatrixSet], z: &[f64]) -> Result<SpectralMatrixSet> {
    if per_source.is_empty() {
        return Err(Error::config("per_source", "at least one source required"));
    }
    if z.len() != per_source.len() {
        return Err(Error::LengthMismatch {
            context: "ratio vector vs spectral sets",
            left: z.len(),
            right: per_source.len(),
        });
    }
    let first = &per_source[0];
    let nb = first.n_bins();
    for s in per_source.iter().skip(1) {
        if s.n_bins() != nb || s.n_monitor() != first.n_monitor() || s.n_target() != first.n_target()
        {
            return Err(Error::dims(
                "spectral set shapes",
                format!(
                    "bins={nb}, M={}, E={}",
                    first.n_monitor(),
                    first.n_target()
                ),
                format!("bins={}, M={}, E={}", s.n_bins(), s.n_monitor(), s.n_target()),
            ));
        }
    }
    let m = first.n_monitor();
    let e = first.n_target();
    let mut s_mm = vec![DMatrix::<Complex64>::zeros(m, m); nb];
    let mut s_me = vec![DMatrix::<Complex64>::zeros(e, m); nb];
    let mut s_ee = vec![DMatrix::<Complex64>::zeros(e, e); nb];
    for (w, s) in z.iter().zip(per_source) {
        let wc = Complex64::new(*w, 0.0);
        for b in 0..nb {
            s_mm[b] += s.s_mm(b) * wc;
            s_me[b] += s.s_me(b) * wc;
            s_ee[b] += s.s_ee(b) * wc;
        }
    }
    SpectralMatrixSet::new(
        first.bins().to_vec(),
        s_mm,
        s_me,
        s_ee,
        None,
        first.sample_rate(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
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

    fn pairs(n_sources: usize, seed0: u64, len: usize) -> Vec<(MultichannelSignal, MultichannelSignal)> {
        (0..n_sources)
            .map(|s| {
                (
                    noise(seed0 + 2 * s as u64, 3, len),
                    noise(seed0 + 2 * s as u64 + 1, 2, len),
                )
            })
            .collect()
    }

    #[test]
    fn ratio_vector_validation() {
        assert!(SourceRatioVector::new(vec![0.0, 1.5]).is_ok());
        assert!(SourceRatioVector::new(vec![-0.1]).is_err());
        assert!(SourceRatioVector::new(vec![f64::NAN]).is_err());
        assert!(SourceRatioVector::new(vec![]).is_err());
        let z = SourceRatioVector::from_ratios(&[1.2, 0.8]).unwrap();
        assert!((z.as_slice()[0] - 1.44).abs() < 1e-15);
        assert!((z.as_slice()[1] - 0.64).abs() < 1e-15);
    }

    #[test]
    fn calibrate_single_source_is_passthrough() {
        let p = pairs(1, 10, 600);
        let cal = calibrate(&p, 3, 600).unwrap();
        let auto = estimate_corr_auto(&p[0].0, 3, 0, 600).unwrap();
        let cross = estimate_corr_cross(&p[0].0, &p[0].1, 3, 0, 600).unwrap();
        assert_eq!(cal.auto(0).data(), auto.data());
        assert_eq!(cal.cross(0).data(), cross.data());
    }

    #[test]
    fn calibrate_duplicated_source_identical() {
        let mon = noise(20, 2, 500);
        let err = noise(21, 2, 500);
        let p = vec![(mon.clone(), err.clone()), (mon, err)];
        let cal = calibrate(&p, 2, 500).unwrap();
        assert_eq!(cal.auto(0).data(), cal.auto(1).data());
        assert_eq!(cal.cross(0).data(), cal.cross(1).data());
    }

    #[test]
    fn calibrate_matches_manual_pipeline() {
        let p = pairs(4, 30, 800);
        let cal = calibrate(&p, 4, 800).unwrap();
        for (s, (mon, err)) in p.iter().enumerate() {
            let auto = estimate_corr_auto(mon, 4, 0, 800).unwrap();
            let cross = estimate_corr_cross(mon, err, 4, 0, 800).unwrap();
            assert_eq!(cal.auto(s).data(), auto.data());
            assert_eq!(cal.cross(s).data(), cross.data());
        }
    }

    #[test]
    fn calibrate_rejects_inconsistent_dims() {
        let p = vec![
            (noise(1, 3, 400), noise(2, 2, 400)),
            (noise(3, 2, 400), noise(4, 2, 400)),
        ];
        assert!(calibrate(&p, 2, 400).is_err());
    }

    #[test]
    fn reconstruct_one_hot_selects_source() {
        let p = pairs(3, 40, 500);
        let cal = calibrate(&p, 2, 500).unwrap();
        let z = [0.0, 1.0, 0.0];
        let r = reconstruct_auto(&cal, &z).unwrap();
        assert_eq!(r.data(), cal.auto(1).data());
        let c = reconstruct_cross(&cal, &z).unwrap();
        assert_eq!(c.data(), cal.cross(1).data());
    }

    #[test]
    fn reconstruct_zero_vector() {
        let p = pairs(2, 50, 400);
        let cal = calibrate(&p, 2, 400).unwrap();
        let r = reconstruct_auto(&cal, &[0.0, 0.0]).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        let c = reconstruct_cross(&cal, &[0.0, 0.0]).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_length_mismatch() {
        let p = pairs(2, 60, 400);
        let cal = calibrate(&p, 2, 400).unwrap();
        assert!(reconstruct_auto(&cal, &[1.0]).is_err());
        assert!(reconstruct_cross(&cal, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn reconstruct_linear_and_scale_equivariant() {
        let p = pairs(3, 70, 600);
        let cal = calibrate(&p, 3, 600).unwrap();
        let z1 = [0.3, 1.2, 0.05];
        let z2 = [0.7, 0.1, 2.0];
        let zsum: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
        let r_sum = reconstruct_auto(&cal, &zsum).unwrap();
        let r_split = reconstruct_auto(&cal, &z1).unwrap().data()
            + reconstruct_auto(&cal, &z2).unwrap().data();
        let rel = (r_sum.data() - &r_split).norm() / r_split.norm();
        assert!(rel <= 1e-14, "rel = {rel:e}");

        let c = 3.25;
        let zc: Vec<f64> = z1.iter().map(|v| c * v).collect();
        let r_c = reconstruct_auto(&cal, &zc).unwrap();
        let r_scaled = reconstruct_auto(&cal, &z1).unwrap().data() * c;
        let rel = (r_c.data() - &r_scaled).norm() / r_scaled.norm();
        assert!(rel <= 1e-14, "rel = {rel:e}");
    }

    #[test]
    fn reconstruct_psd_closure() {
        let p = pairs(4, 80, 700);
        let cal = calibrate(&p, 3, 700).unwrap();
        let z = [0.5, 2.0, 0.0, 1.3];
        let r = reconstruct_auto(&cal, &z).unwrap();
        r.validate().unwrap();
    }

    #[test]
    fn of_decomposed_one_hot_matches_direct() {
        let p = pairs(3, 90, 900);
        let cal = calibrate(&p, 2, 900).unwrap();
        let of = of_decomposed(&cal, &[0.0, 0.0, 1.0], 0.0).unwrap();
        let direct = of_time_optimal(cal.auto(2), cal.cross(2), 0.0).unwrap();
        let rel = (of.coeffs() - direct.coeffs()).norm() / direct.coeffs().norm();
        assert!(rel <= 1e-12, "rel = {rel:e}");
    }

    #[test]
    fn superpose_spectral_one_hot() {
        let mon = noise(95, 2, 8192);
        let err = noise(96, 1, 8192);
        let s0 = SpectralMatrixSet::from_signals(&mon, &err, 256, 0.5).unwrap();
        let mon1 = noise(97, 2, 8192);
        let err1 = noise(98, 1, 8192);
        let s1 = SpectralMatrixSet::from_signals(&mon1, &err1, 256, 0.5).unwrap();
        let sup = superpose_spectral(&[s0.clone(), s1], &[1.0, 0.0]).unwrap();
        for b in [0, 64, 128] {
            assert_eq!(sup.s_mm(b), s0.s_mm(b));
            assert_eq!(sup.s_me(b), s0.s_me(b));
        }
    }

    #[test]
    fn low_coherence_between_independent_sources() {
        let p = pairs(3, 500, 40_000);
        let msc = calibration_coherence(&p, 512).unwrap();
        assert!(msc < COHERENCE_WARN_THRESHOLD, "msc = {msc}");
    }
}
