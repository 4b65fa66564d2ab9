//! Small-gain certificate for the adapted loop.
//!
//! If the plant satisfies `‖x_a‖ ≤ γ‖u_a‖ + β` (truncated l2 signal norms)
//! and the network is `L`-Lipschitz with `T(0) = 0`, the loop from `u` to
//! `x_a` is finite-gain stable whenever `L < 1/γ`, with
//! `‖x_a‖ ≤ (γ(1+L)‖u‖ + γL‖x_m‖ + β) / (1 − γL)`.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adaptation::SimTrace;
use crate::sysmodel::SystemModel;

pub const DEFAULT_MARGIN: f64 = 1.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("unexcited data: every trajectory has zero input energy")]
    Unexcited,
    #[error("no trajectories supplied")]
    Empty,
    #[error("configuration violates the small-gain condition (L = {lipschitz}, γ = {gamma}); the state bound is undefined")]
    NotCertified { lipschitz: f64, gamma: f64 },
    #[error("trace diverged; the state bound applies to complete traces only")]
    Diverged,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainProvenance {
    UserSupplied,
    DataEstimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEstimate {
    pub gamma: f64,
    pub beta: f64,
    pub provenance: GainProvenance,
    pub margin: f64,
}

impl GainEstimate {
    pub fn user(gamma: f64, beta: f64) -> Self {
        Self { gamma, beta, provenance: GainProvenance::UserSupplied, margin: 1.0 }
    }
}

/// Truncated l2 norm of a scalar signal.
pub fn signal_norm(s: &[f64]) -> f64 {
    s.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Truncated l2 norm of a vector signal, `(Σ_k ‖v_k‖²)^{1/2}`.
pub fn vector_signal_norm<'a, I>(s: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    s.into_iter().flat_map(|v| v.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Input and state sequences of one plant experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Simulates `plant` from `x0`; `states[k]` is the state after `k` steps,
    /// so `states` has one more entry than `inputs`.
    pub fn simulate(plant: &SystemModel, x0: &DVector<f64>, inputs: &[f64]) -> Self {
        let mut x = x0.clone();
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x.as_slice().to_vec());
        for &u in inputs {
            x = plant.step_raw(&x, u);
            states.push(x.as_slice().to_vec());
        }
        Self { inputs: inputs.to_vec(), states }
    }

    pub fn input_norm(&self) -> f64 {
        signal_norm(&self.inputs)
    }
    pub fn state_norm(&self) -> f64 {
        vector_signal_norm(self.states.iter().map(|s| s.as_slice()))
    }
}

/// `β̂` = largest state norm over zero-input runs; `γ̂` = `margin` × largest
/// `(‖x‖ − β̂)/‖u‖` over excited runs.
pub fn estimate_gain(trajectories: &[Trajectory], margin: f64) -> Result<GainEstimate, StabilityError> {
    if trajectories.is_empty() {
        return Err(StabilityError::Empty);
    }
    if !(margin >= 1.0) {
        return Err(StabilityError::Invalid(format!("margin {margin} < 1")));
    }
    let beta = trajectories
        .iter()
        .filter(|t| t.input_norm() == 0.0)
        .map(Trajectory::state_norm)
        .fold(0.0, f64::max);
    let ratio = trajectories
        .iter()
        .filter(|t| t.input_norm() > 0.0)
        .map(|t| ((t.state_norm() - beta) / t.input_norm()).max(0.0))
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
        .ok_or(StabilityError::Unexcited)?;
    Ok(GainEstimate { gamma: margin * ratio, beta, provenance: GainProvenance::DataEstimated, margin })
}

/// Sinusoids at five log-spaced frequencies (rad/sample) in
/// `[omega_lo, omega_hi]` plus one ±1 PRBS sequence.
pub fn excitation_battery(horizon: usize, omega_lo: f64, omega_hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            let w = omega_lo * (omega_hi / omega_lo).powf(i as f64 / 4.0);
            (0..horizon).map(|k| (w * k as f64).sin()).collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // hold each level for a few samples so the sequence has low-frequency content
    let hold = ((PI / omega_hi).round() as usize).max(1);
    let mut level = 1.0;
    out.push(
        (0..horizon)
            .map(|k| {
                if k % hold == 0 && rng.random_bool(0.5) {
                    level = -level;
                }
                level
            })
            .collect(),
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateStatus {
    Certified,
    Violated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub status: CertificateStatus,
    /// `1/γ − L`.
    pub slack: f64,
    pub lipschitz: f64,
    pub gamma: f64,
}

impl Certificate {
    pub fn certified(&self) -> bool {
        self.status == CertificateStatus::Certified
    }
}

/// Certified iff `L < 1/γ`.
pub fn small_gain_check(lipschitz: f64, gamma: f64) -> Certificate {
    let slack = 1.0 / gamma - lipschitz;
    // compare as L·γ < 1 so the boundary case is decided without the reciprocal's rounding
    let status = if lipschitz * gamma < 1.0 { CertificateStatus::Certified } else { CertificateStatus::Violated };
    Certificate { status, slack, lipschitz, gamma }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBoundReport {
    pub state_norm: f64,
    pub input_norm: f64,
    pub reference_norm: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Checks the closed-loop state bound on a complete trace.
pub fn verify_state_bound(trace: &SimTrace, gain: &GainEstimate, lipschitz: f64) -> Result<StateBoundReport, StabilityError> {
    let gl = gain.gamma * lipschitz;
    if !(gl < 1.0) {
        return Err(StabilityError::NotCertified { lipschitz, gamma: gain.gamma });
    }
    if trace.diverged() {
        return Err(StabilityError::Diverged);
    }
    let state_norm = vector_signal_norm(trace.rows.iter().map(|r| r.x_a.as_slice()));
    let input_norm = vector_signal_norm(trace.rows.iter().map(|r| r.u.as_slice()));
    let reference_norm = vector_signal_norm(trace.rows.iter().map(|r| r.x_m.as_slice()));
    let bound =
        (gain.gamma * (1.0 + lipschitz) * input_norm + gl * reference_norm + gain.beta) / (1.0 - gl);
    Ok(StateBoundReport { state_norm, input_norm, reference_norm, bound, passed: state_norm <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{AdaptDiagnostics, TraceRow, TraceStatus};
    use crate::sysmodel::{sinusoidal_drift_plant, LinearSystem};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn trace(states: &[f64]) -> SimTrace {
        SimTrace {
            sample_time: 0.01,
            axes: 1,
            aux_names: Vec::new(),
            rows: states
                .iter()
                .enumerate()
                .map(|(k, &x)| TraceRow {
                    k,
                    t: k as f64 * 0.01,
                    x_a: vec![x],
                    x_m: vec![0.0],
                    u: vec![0.1],
                    du: vec![0.0],
                    u_a: vec![0.1],
                    y_a: vec![x],
                    y_m: vec![0.0],
                    e: vec![-x],
                    aux: Vec::new(),
                })
                .collect(),
            status: TraceStatus::Complete,
            diagnostics: AdaptDiagnostics::default(),
            networks: Vec::new(),
        }
    }

    #[test]
    fn certificate_examples() {
        let c = small_gain_check(0.89, 1.12);
        assert!(c.certified());
        assert_relative_eq!(c.slack, 1.0 / 1.12 - 0.89, epsilon = 1e-15);
        assert!((c.slack - 0.00286).abs() < 1e-5);
        assert!(small_gain_check(0.8, 0.68).certified());
        assert_eq!(small_gain_check(1.0, 1.12).status, CertificateStatus::Violated);
    }

    #[test]
    fn static_gain_estimate() {
        let plant = SystemModel::new(
            "static",
            Arc::new(
                LinearSystem::new(
                    DMatrix::zeros(1, 1),
                    DVector::from_element(1, 0.5),
                    DVector::from_element(1, 1.0),
                )
                .unwrap(),
            ),
            1,
        )
        .unwrap();
        let trajs: Vec<_> = excitation_battery(2000, 0.01, 1.0, 3)
            .iter()
            .map(|u| Trajectory::simulate(&plant, &DVector::zeros(1), u))
            .collect();
        let g = estimate_gain(&trajs, 1.2).unwrap();
        assert!(g.gamma <= 0.5 * 1.2 + 1e-12);
        assert!(g.gamma > 0.5 * 1.2 * 0.99);
        assert_eq!(g.beta, 0.0);
        assert_eq!(g.provenance, GainProvenance::DataEstimated);
    }

    #[test]
    fn zero_input_contributes_to_offset_only() {
        let p = sinusoidal_drift_plant(0.01);
        let free = Trajectory::simulate(&p, &DVector::from_row_slice(&[0.5, 0.0]), &vec![0.0; 300]);
        let excited = Trajectory::simulate(&p, &DVector::zeros(2), &vec![1.0; 300]);
        let g = estimate_gain(&[free.clone(), excited.clone()], 1.0).unwrap();
        assert_relative_eq!(g.beta, free.state_norm());
        assert_relative_eq!(g.gamma, ((excited.state_norm() - g.beta) / excited.input_norm()).max(0.0));
        assert_eq!(estimate_gain(&[free], 1.2), Err(StabilityError::Unexcited));
        assert_eq!(estimate_gain(&[], 1.2), Err(StabilityError::Empty));
    }

    #[test]
    fn state_bound_checks() {
        let g = GainEstimate::user(1.12, 0.0);
        let zero = trace(&[0.0; 10]);
        let mut zero_input = zero.clone();
        zero_input.rows.iter_mut().for_each(|r| r.u = vec![0.0]);
        let rep = verify_state_bound(&zero_input, &g, 0.89).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.bound, 0.0);
        let inflated = trace(&[1e6; 10]);
        assert!(!verify_state_bound(&inflated, &g, 0.89).unwrap().passed);
        assert!(matches!(verify_state_bound(&zero, &g, 1.0), Err(StabilityError::NotCertified { .. })));
        let mut div = zero.clone();
        div.status = TraceStatus::Diverged { step: 3 };
        assert_eq!(verify_state_bound(&div, &g, 0.89), Err(StabilityError::Diverged));
    }
}
