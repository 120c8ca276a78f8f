//! Source-ratio tracking by constrained correlation-matrix fitting.
//!
//! The squared source-ratio vector `z` is recovered from a measured
//! monitoring auto-correlation matrix by minimizing the squared Frobenius
//! misfit between the measurement and the calibration superposition,
//! plus quadratic penalties outside the box `[a, b]`. The module provides
//! the penalized objective, its analytic gradient, the closed-form
//! unconstrained solution through the Gram system, and the streaming
//! gradient-descent tracker.

use nalgebra::{DMatrix, DVector};

use crate::corr::{CorrKind, LaggedCorrMatrix};
use crate::decomp::{reconstruct_auto, reconstruct_cross, CalibrationSet};
use crate::error::{Error, Result};
use crate::filter::PERFECT_DB;

/// Tracking halts once the iterate norm exceeds this guard.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Relative z change below this value counts toward convergence.
pub const CONVERGENCE_REL_TOL: f64 = 1e-3;

/// Consecutive frames under [`CONVERGENCE_REL_TOL`] required to flag
/// convergence.
pub const CONVERGENCE_FRAMES: usize = 10;

/// User-facing tracker settings; broadcastable per-source vectors.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Per-source step sizes (raw, unnormalized).
    pub alpha: Vec<f64>,
    /// Elementwise lower bounds `a`.
    pub lower: Vec<f64>,
    /// Elementwise upper bounds `b`.
    pub upper: Vec<f64>,
    /// Penalty weights; `None` resolves to ten times the largest Gram
    /// diagonal of the calibration set.
    pub sigma: Option<Vec<f64>>,
    /// Gradient-descent updates per incoming frame.
    pub iters_per_frame: usize,
    /// Initial ratio vector.
    pub z_init: Vec<f64>,
    /// Use the full analytic gradient for the update instead of the
    /// half-gradient literal update form.
    pub use_eq10_gradient: bool,
}

impl TrackerConfig {
    /// Defaults for `n` sources: alpha 5, box [0, 5], one iteration per
    /// frame, z_init 0.5.
    pub fn default_for(n: usize) -> Self {
        Self {
            alpha: vec![5.0; n],
            lower: vec![0.0; n],
            upper: vec![5.0; n],
            sigma: None,
            iters_per_frame: 1,
            z_init: vec![0.5; n],
            use_eq10_gradient: false,
        }
    }

    /// Validate and resolve against a calibration set, producing the
    /// parameter block used by the numeric routines.
    pub fn resolve(&self, cal: &CalibrationSet) -> Result<TrackerParams> {
        let n = cal.n_sources();
        let check_len = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != n {
                return Err(Error::config(
                    name,
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
            Ok(())
        };
        check_len("alpha", &self.alpha)?;
        check_len("lower", &self.lower)?;
        check_len("upper", &self.upper)?;
        check_len("z_init", &self.z_init)?;
        if self.iters_per_frame == 0 {
            return Err(Error::config("iters_per_frame", "must be >= 1"));
        }
        for (i, &a) in self.alpha.iter().enumerate() {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::config("alpha", format!("entry {i} must be > 0")));
            }
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(Error::config(
                    "lower/upper",
                    format!("entry {i}: lower {} > upper {}", self.lower[i], self.upper[i]),
                ));
            }
        }
        if !self.z_init.iter().all(|v| v.is_finite()) {
            return Err(Error::config("z_init", "entries must be finite"));
        }
        let sigma = match &self.sigma {
            Some(s) => {
                check_len("sigma", s)?;
                for (i, &v) in s.iter().enumerate() {
                    if !(v > 0.0) {
                        return Err(Error::config("sigma", format!("entry {i} must be > 0")));
                    }
                }
                s.clone()
            }
            None => {
                let a = gram_matrix(cal);
                let max_diag = (0..n).map(|i| a[(i, i)]).fold(f64::MIN, f64::max);
                let w = if max_diag > 0.0 { 10.0 * max_diag } else { 1.0 };
                vec![w; n]
            }
        };
        Ok(TrackerParams {
            alpha: self.alpha.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            sigma,
            iters_per_frame: self.iters_per_frame,
            z_init: self.z_init.clone(),
            use_eq10_gradient: self.use_eq10_gradient,
        })
    }
}

/// Fully resolved tracker parameters (sigma defaulted, lengths checked).
#[derive(Debug, Clone)]
pub struct TrackerParams {
    pub alpha: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sigma: Vec<f64>,
    pub iters_per_frame: usize,
    pub z_init: Vec<f64>,
    pub use_eq10_gradient: bool,
}

/// One recorded tracking step.
#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub frame_index: usize,
    pub time_s: f64,
    pub z: Vec<f64>,
    pub objective: f64,
    pub l_mm_db: f64,
    pub l_me_db: Option<f64>,
}

/// Convergence bookkeeping attached to a finished run.
#[derive(Debug, Clone)]
pub struct ConvergenceInfo {
    pub at_frame: usize,
    pub criterion: String,
}

/// Mutable tracker state: the current iterate plus append-only history.
#[derive(Debug, Clone)]
pub struct TrackerState {
    z: Vec<f64>,
    frame_index: usize,
    history: Vec<HistoryEntry>,
    converged: Option<ConvergenceInfo>,
    diverged: bool,
    stable_frames: usize,
}

impl TrackerState {
    pub fn new(params: &TrackerParams) -> Self {
        Self {
            z: params.z_init.clone(),
            frame_index: 0,
            history: Vec::new(),
            converged: None,
            diverged: false,
            stable_frames: 0,
        }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn converged(&self) -> Option<&ConvergenceInfo> {
        self.converged.as_ref()
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }
}

/// One measured frame: the monitoring auto matrix, optionally a measured
/// cross matrix for evaluation, and the frame-boundary time.
#[derive(Debug, Clone)]
pub struct TrackFrame {
    pub r_mm: LaggedCorrMatrix,
    pub r_me: Option<LaggedCorrMatrix>,
    pub time_s: f64,
}

/// Heaviside-style penalty switches: `h` marks entries below the lower
/// bound, `g` entries above the upper bound.
pub fn penalty_switches(z: &[f64], lower: &[f64], upper: &[f64]) -> (Vec<bool>, Vec<bool>) {
    let h = z.iter().zip(lower).map(|(&zi, &ai)| zi < ai).collect();
    let g = z.iter().zip(upper).map(|(&zi, &bi)| zi > bi).collect();
    (h, g)
}

fn check_meas(cal: &CalibrationSet, r_meas: &LaggedCorrMatrix) -> Result<()> {
    if r_meas.kind() != CorrKind::MonitorAuto
        || r_meas.n_mics() != cal.n_mics()
        || r_meas.filter_len() != cal.filter_len()
    {
        return Err(Error::dims(
            "measured matrix vs calibration",
            format!("auto M={}, I={}", cal.n_mics(), cal.filter_len()),
            format!(
                "{:?} M={}, I={}",
                r_meas.kind(),
                r_meas.n_mics(),
                r_meas.filter_len()
            ),
        ));
    }
    Ok(())
}

/// Penalized fitting objective: squared Frobenius misfit plus quadratic
/// box penalties with the switch vectors evaluated at `z`.
pub fn objective(
    r_meas: &LaggedCorrMatrix,
    cal: &CalibrationSet,
    z: &[f64],
    params: &TrackerParams,
) -> Result<f64> {
    check_meas(cal, r_meas)?;
    let r_hat = reconstruct_auto(cal, z)?;
    let misfit = (r_meas.data() - r_hat.data()).norm_squared();
    let (h, g) = penalty_switches(z, &params.lower, &params.upper);
    let mut penalty = 0.0;
    for i in 0..z.len() {
        let mut p = 0.0;
        if h[i] {
            p += (z[i] - params.lower[i]).powi(2);
        }
        if g[i] {
            p += (z[i] - params.upper[i]).powi(2);
        }
        penalty += params.sigma[i] * p;
    }
    Ok(misfit + penalty)
}

/// Analytic gradient of [`objective`]:
/// `dQ/dz_i = 2 tr{-R R_i^T + R_i Rhat^T} + 2 sigma_i [(z_i-a_i)h_i + (z_i-b_i)g_i]`.
pub fn gradient(
    r_meas: &LaggedCorrMatrix,
    cal: &CalibrationSet,
    z: &[f64],
    params: &TrackerParams,
) -> Result<Vec<f64>> {
    check_meas(cal, r_meas)?;
    let r_hat = reconstruct_auto(cal, z)?;
    let (h, g) = penalty_switches(z, &params.lower, &params.upper);
    let mut grad = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let tr = cal.auto(i).frobenius_dot(&r_hat) - r_meas.frobenius_dot(cal.auto(i));
        let mut pen = 0.0;
        if h[i] {
            pen += z[i] - params.lower[i];
        }
        if g[i] {
            pen += z[i] - params.upper[i];
        }
        grad.push(2.0 * tr + 2.0 * params.sigma[i] * pen);
    }
    Ok(grad)
}

/// Gram matrix of the calibration auto matrices under the trace inner
/// product: `A_ij = tr{R_i R_j^T}`. Symmetric PSD by construction.
pub fn gram_matrix(cal: &CalibrationSet) -> DMatrix<f64> {
    let n = cal.n_sources();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = cal.auto(i).frobenius_dot(cal.auto(j));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Right-hand side of the closed-form system: `c_i = tr{R_meas R_i^T}`.
pub fn cross_vector(r_meas: &LaggedCorrMatrix, cal: &CalibrationSet) -> DVector<f64> {
    DVector::from_iterator(
        cal.n_sources(),
        (0..cal.n_sources()).map(|i| r_meas.frobenius_dot(cal.auto(i))),
    )
}

/// Result of the closed-form solve, with the Gram condition number for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ClosedFormSolution {
    pub z: Vec<f64>,
    pub condition: f64,
}

/// Condition-number ceiling for the closed-form path; beyond it the system
/// is reported singular and the gradient path is the suggested fallback.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Unconstrained minimizer of the misfit through the Gram system
/// `A z = c`, solved symmetrically.
pub fn solve_closed_form(
    r_meas: &LaggedCorrMatrix,
    cal: &CalibrationSet,
) -> Result<ClosedFormSolution> {
    check_meas(cal, r_meas)?;
    let a = gram_matrix(cal);
    let c = cross_vector(r_meas, cal);
    let eig = a.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min_ev = eig.eigenvalues.iter().fold(f64::MAX, |m, &v| m.min(v.abs()));
    let condition = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };
    let chol = a.clone().cholesky().filter(|_| condition <= CONDITION_LIMIT);
    match chol {
        Some(chol) => Ok(ClosedFormSolution {
            z: chol.solve(&c).iter().copied().collect(),
            condition,
        }),
        None => Err(Error::Singular {
            context: "closed-form Gram system (use the gradient path)",
            condition,
        }),
    }
}

/// One gradient-descent update against a measured frame.
///
/// The literal update uses the braced trace-plus-penalty term (half the
/// analytic gradient); `use_eq10_gradient` switches to the full gradient.
/// Appends a history entry with the objective, `L_mm`, and `L_me` when a
/// reference cross matrix is supplied. On divergence the iterate keeps its
/// last stable value, the state is flagged, and an error is returned.
pub fn gd_step(
    state: &mut TrackerState,
    frame: &TrackFrame,
    cal: &CalibrationSet,
    params: &TrackerParams,
) -> Result<()> {
    check_meas(cal, &frame.r_mm)?;
    let z = state.z.clone();
    let (h, g) = penalty_switches(&z, &params.lower, &params.upper);
    let r_hat = reconstruct_auto(cal, &z)?;
    let mut z_new = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let tr = cal.auto(i).frobenius_dot(&r_hat) - frame.r_mm.frobenius_dot(cal.auto(i));
        let mut pen = 0.0;
        if h[i] {
            pen += z[i] - params.lower[i];
        }
        if g[i] {
            pen += z[i] - params.upper[i];
        }
        let braced = tr + params.sigma[i] * pen;
        let step = if params.use_eq10_gradient {
            2.0 * braced
        } else {
            braced
        };
        z_new.push(z[i] - params.alpha[i] * step);
    }
    let norm = z_new.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_GUARD {
        state.diverged = true;
        return Err(Error::Divergence {
            norm,
            guard: DIVERGENCE_GUARD,
        });
    }
    state.z = z_new;

    let q = objective(&frame.r_mm, cal, &state.z, params)?;
    let r_hat_new = reconstruct_auto(cal, &state.z)?;
    let l_mm_db = normalized_error(&frame.r_mm, &r_hat_new)?;
    let l_me_db = match &frame.r_me {
        Some(r_me_ref) => {
            let c_hat = reconstruct_cross(cal, &state.z)?;
            Some(normalized_error(r_me_ref, &c_hat)?)
        }
        None => None,
    };
    state.history.push(HistoryEntry {
        frame_index: state.frame_index,
        time_s: frame.time_s,
        z: state.z.clone(),
        objective: q,
        l_mm_db,
        l_me_db,
    });
    Ok(())
}

/// Normalized correlation misfit in dB:
/// `10 log10(||R_true - R_hat||_F^2 / ||R_true||_F^2)`.
///
/// An exactly zero misfit reports the [`PERFECT_DB`] sentinel; a zero-norm
/// reference is an error.
pub fn normalized_error(r_true: &LaggedCorrMatrix, r_hat: &LaggedCorrMatrix) -> Result<f64> {
    if r_true.data().shape() != r_hat.data().shape() {
        return Err(Error::dims(
            "normalized error shapes",
            format!("{:?}", r_true.data().shape()),
            format!("{:?}", r_hat.data().shape()),
        ));
    }
    let denom = r_true.data().norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroNormReference);
    }
    let num = (r_true.data() - r_hat.data()).norm_squared();
    if num == 0.0 {
        return Ok(PERFECT_DB);
    }
    Ok(10.0 * (num / denom).log10())
}

/// Run the streaming tracker over measured frames.
///
/// Each frame receives `iters_per_frame` gradient updates; every update
/// appends a history entry. Divergence stops the run with the flag set and
/// the last stable iterate retained. Convergence is flagged once the
/// relative z change stays below [`CONVERGENCE_REL_TOL`] for
/// [`CONVERGENCE_FRAMES`] consecutive frames.
pub fn track(
    frames: &[TrackFrame],
    cal: &CalibrationSet,
    config: &TrackerConfig,
) -> Result<TrackerState> {
    let params = config.resolve(cal)?;
    let mut state = TrackerState::new(&params);
    for (k, frame) in frames.iter().enumerate() {
        state.frame_index = k;
        let z_before = state.z.clone();
        let mut halted = false;
        for _ in 0..params.iters_per_frame {
            match gd_step(&mut state, frame, cal, &params) {
                Ok(()) => {}
                Err(Error::Divergence { .. }) => {
                    halted = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if halted {
            break;
        }
        // Convergence bookkeeping on the per-frame change.
        let scale = state
            .z
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(1e-12);
        let delta = state
            .z
            .iter()
            .zip(&z_before)
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        if delta / scale < CONVERGENCE_REL_TOL {
            state.stable_frames += 1;
            if state.stable_frames >= CONVERGENCE_FRAMES && state.converged.is_none() {
                state.converged = Some(ConvergenceInfo {
                    at_frame: k,
                    criterion: format!(
                        "relative z change < {CONVERGENCE_REL_TOL} for {CONVERGENCE_FRAMES} frames"
                    ),
                });
            }
        } else {
            state.stable_frames = 0;
        }
    }
    Ok(state)
}

/// Largest Gram eigenvalue's reciprocal: the quadratic-stability reference
/// bound printed next to the configured step size.
pub fn stability_bound(cal: &CalibrationSet) -> f64 {
    let a = gram_matrix(cal);
    let eig = a.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    if max_ev > 0.0 {
        1.0 / max_ev
    } else {
        f64::INFINITY
    }
}
