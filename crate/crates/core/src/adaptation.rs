//! The model-reference adaptation engine.
//!
//! At each step the network maps `ξ = [x_a; x_m; u]` to an input adjustment
//! `δu`, the plant receives `u + δu` and the reference receives `u`. The
//! network is trained online on `J = ½ E²` with `E = y_m − y_a` taken `r`
//! steps ahead, using `Δθ = λ H G E` where `G = ∂δu/∂θ` and `H = ∂y_a/∂u_a`
//! comes from the forward model.

use std::collections::VecDeque;

use nalgebra::DVector;
use thiserror::Error;

use crate::fwdmodel::{ForwardModel, Prediction, Query};
use crate::lipnet::{AdaptiveNet, NetError};
use crate::sysmodel::{io_map_coefficients, Interconnection, IoMapOptions, ModelError, SystemModel};

pub const DEFAULT_BLOWUP_BOUND: f64 = 1e6;
pub const DEFAULT_BASELINE_CLAMP: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("control-direction singularity: |G_a(x)| = {0:e}")]
    ControlSingularity(f64),
    #[error("invalid run: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Update immediately from the forward model's prediction of `y_{a,k+r}`;
    /// falls back to `Delayed` for steps where the model is low-confidence.
    Predictive,
    /// Update `r` steps later from the measured output.
    Delayed,
}

/// Where `H` in `Δθ = λ H G E` comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainSource {
    Estimated,
    /// Constant gain, e.g. `1.0` when `H` is folded into the learning rate.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationConfig {
    pub learning_rate: f64,
    pub mode: UpdateMode,
    pub gain: GainSource,
    /// `H` used for delayed updates queued while the forward model is
    /// low-confidence.
    pub fallback_gain: f64,
    /// Norm cap on a single update of the unconstrained network.
    pub baseline_clamp: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            mode: UpdateMode::Predictive,
            gain: GainSource::Estimated,
            fallback_gain: 1.0,
            baseline_clamp: DEFAULT_BASELINE_CLAMP,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdaptDiagnostics {
    pub predictive_updates: usize,
    pub delayed_updates: usize,
    pub skipped_updates: usize,
    pub clamped_updates: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    step: usize,
    gradient: Vec<f64>,
    gain: f64,
}

#[derive(Debug, Clone)]
struct Sample {
    y: f64,
    x: Vec<f64>,
    u: f64,
}

#[derive(Debug, Clone)]
struct LastEval {
    gradient: Vec<f64>,
    u_a: f64,
}

/// Network, forward model and bookkeeping for one controlled axis.
#[derive(Debug, Clone)]
pub struct AdaptationEngine {
    net: AdaptiveNet,
    forward: Box<dyn ForwardModel>,
    cfg: AdaptationConfig,
    relative_degree: usize,
    step: usize,
    history: VecDeque<Sample>,
    pending: VecDeque<Pending>,
    last: Option<LastEval>,
    diag: AdaptDiagnostics,
}

impl AdaptationEngine {
    pub fn new(
        net: AdaptiveNet,
        forward: Box<dyn ForwardModel>,
        cfg: AdaptationConfig,
        relative_degree: usize,
    ) -> Result<Self, AdaptError> {
        if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
            return Err(AdaptError::Invalid(format!("learning rate {}", cfg.learning_rate)));
        }
        if relative_degree == 0 {
            return Err(ModelError::ZeroRelativeDegree.into());
        }
        Ok(Self {
            net,
            forward,
            cfg,
            relative_degree,
            step: 0,
            history: VecDeque::new(),
            pending: VecDeque::new(),
            last: None,
            diag: AdaptDiagnostics::default(),
        })
    }

    pub fn net(&self) -> &AdaptiveNet {
        &self.net
    }
    pub fn config(&self) -> &AdaptationConfig {
        &self.cfg
    }
    pub fn diagnostics(&self) -> AdaptDiagnostics {
        self.diag
    }
    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Feeds the measurement of step `k`: trains the forward model on the
    /// sample from `k − r` and applies any delayed update that is due.
    pub fn observe(&mut self, y_a: f64, y_m: f64) -> Result<(), AdaptError> {
        if self.history.len() == self.relative_degree {
            let past = self.history.pop_front().expect("non-empty");
            self.forward.observe(Query { y: past.y, x: &past.x, u: past.u }, y_a);
        }
        while let Some(p) = self.pending.front() {
            if p.step + self.relative_degree > self.step {
                break;
            }
            let p = self.pending.pop_front().expect("non-empty");
            if p.step + self.relative_degree == self.step {
                self.apply(&p.gradient, p.gain, y_m - y_a)?;
                self.diag.delayed_updates += 1;
            }
        }
        Ok(())
    }

    /// `ξ = [x_a; x_m; u]`, `δu = T(ξ)`, `u_a = u + δu`. Records `G` for the
    /// learning step.
    pub fn compute_input(&mut self, x_a: &[f64], x_m: &[f64], u: f64) -> Result<(f64, f64), AdaptError> {
        let xi = network_input(x_a, x_m, u);
        let ev = self.net.evaluate(&xi)?;
        let du = ev.output;
        let u_a = u + du;
        self.history.push_back(Sample { y: f64::NAN, x: x_a.to_vec(), u: u_a });
        self.last = Some(LastEval { gradient: ev.gradient, u_a });
        Ok((du, u_a))
    }

    /// Learning step for the input just computed. `y_m_future` is the
    /// reference output `r` steps ahead.
    pub fn learn(&mut self, x_a: &[f64], y_a: f64, y_m_future: f64) -> Result<(), AdaptError> {
        let last = self
            .last
            .take()
            .ok_or_else(|| AdaptError::Invalid("learn called before compute_input".into()))?;
        if let Some(s) = self.history.back_mut() {
            s.y = y_a;
        }
        let pred = self.forward.predict(Query { y: y_a, x: x_a, u: last.u_a });
        let gain = self.select_gain(&pred);
        match (self.cfg.mode, pred.low_confidence) {
            (UpdateMode::Predictive, false) => {
                self.apply(&last.gradient, gain, y_m_future - pred.output)?;
                self.diag.predictive_updates += 1;
            }
            _ => self.pending.push_back(Pending { step: self.step, gradient: last.gradient, gain }),
        }
        self.step += 1;
        Ok(())
    }

    /// Advances the step counter without learning (used when the caller
    /// keeps the parameters frozen).
    pub fn skip_learning(&mut self, y_a: f64) {
        self.last = None;
        if let Some(s) = self.history.back_mut() {
            s.y = y_a;
        }
        while self.history.len() > self.relative_degree {
            self.history.pop_front();
        }
        self.step += 1;
    }

    fn select_gain(&self, pred: &Prediction) -> f64 {
        match self.cfg.gain {
            GainSource::Fixed(h) => h,
            GainSource::Estimated if pred.low_confidence => self.cfg.fallback_gain,
            GainSource::Estimated => pred.gain,
        }
    }

    fn apply(&mut self, gradient: &[f64], gain: f64, error: f64) -> Result<(), AdaptError> {
        if !(gain.is_finite() && error.is_finite()) {
            self.diag.skipped_updates += 1;
            return Ok(());
        }
        let Some(delta) = self.update_vector(gradient, gain, error) else {
            return Ok(());
        };
        self.net.apply_update(&delta)?;
        Ok(())
    }

    /// `Δθ = λ H G E`, clamped in norm for the unconstrained network.
    fn update_vector(&mut self, gradient: &[f64], gain: f64, error: f64) -> Option<Vec<f64>> {
        let coef = self.cfg.learning_rate * gain * error;
        if coef == 0.0 {
            return None;
        }
        let mut delta: Vec<f64> = gradient.iter().map(|g| coef * g).collect();
        if delta.iter().any(|v| !v.is_finite()) {
            self.diag.skipped_updates += 1;
            return None;
        }
        if !self.net.is_lipschitz() {
            let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > self.cfg.baseline_clamp {
                let s = self.cfg.baseline_clamp / norm;
                delta.iter_mut().for_each(|v| *v *= s);
                self.diag.clamped_updates += 1;
            }
        }
        Some(delta)
    }

    /// Applies one update with explicit `H` and `E` to the most recently
    /// recorded gradient.
    pub fn learn_step(&mut self, gain: f64, error: f64) -> Result<(), AdaptError> {
        let last = self
            .last
            .take()
            .ok_or_else(|| AdaptError::Invalid("learn_step called before compute_input".into()))?;
        self.apply(&last.gradient, gain, error)?;
        self.step += 1;
        Ok(())
    }
}

pub fn network_input(x_a: &[f64], x_m: &[f64], u: f64) -> Vec<f64> {
    let mut xi = Vec::with_capacity(x_a.len() + x_m.len() + 1);
    xi.extend_from_slice(x_a);
    xi.extend_from_slice(x_m);
    xi.push(u);
    xi
}

/// White-box adjustment that makes `y_{a,k+r}` equal `y_{m,k+r}`:
/// `δu = (F_m(x_m) − F_a(x_a) + G_m(x_m) u) / G_a(x_a) − u`.
pub fn ideal_adjustment(
    plant: &SystemModel,
    reference: &SystemModel,
    x_a: &DVector<f64>,
    x_m: &DVector<f64>,
    u: f64,
    opts: &IoMapOptions,
) -> Result<f64, AdaptError> {
    let pa = io_map_coefficients(plant, x_a, opts).map_err(|e| match e {
        ModelError::IllDefinedRelativeDegree(g) => AdaptError::ControlSingularity(g),
        other => other.into(),
    })?;
    let pm = io_map_coefficients(reference, x_m, &IoMapOptions { g_min: 0.0, ..*opts })?;
    Ok((pm.free - pa.free + pm.gain * u) / pa.gain - u)
}

/// Reference output `r` steps after applying `u` at `x_m`.
pub fn reference_lookahead(reference: &SystemModel, x_m: &DVector<f64>, u: f64) -> f64 {
    let mut z = reference.step_raw(x_m, u);
    for _ in 1..reference.relative_degree() {
        z = reference.step_raw(&z, u);
    }
    reference.output(&z)
}

/// How `δu` is produced in a closed-loop run.
#[derive(Debug, Clone)]
pub enum Adjustment {
    /// `δu ≡ 0`.
    None,
    /// Known-dynamics law, for testing.
    Ideal(IoMapOptions),
    /// Online-trained network.
    Adaptive(Box<AdaptationEngine>),
    /// Network evaluated with its parameters held fixed.
    Frozen(Box<AdaptationEngine>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub t: f64,
    pub x_a: Vec<f64>,
    pub x_m: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub u_a: Vec<f64>,
    pub y_a: Vec<f64>,
    pub y_m: Vec<f64>,
    pub e: Vec<f64>,
    /// Scenario-specific extra columns, named by `SimTrace::aux_names`.
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceStatus {
    Complete,
    /// State left the blow-up bound (or became non-finite) at this step.
    Diverged { step: usize },
}

/// Time-indexed record of a run. Vector-valued columns carry one entry per
/// controlled axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub sample_time: f64,
    pub axes: usize,
    pub aux_names: Vec<String>,
    pub rows: Vec<TraceRow>,
    pub status: TraceStatus,
    pub diagnostics: AdaptDiagnostics,
    /// Networks as they stood at the end of the run, one per axis (empty
    /// without a network).
    pub networks: Vec<AdaptiveNet>,
}

impl SimTrace {
    pub fn diverged(&self) -> bool {
        matches!(self.status, TraceStatus::Diverged { .. })
    }

    /// RMS of `y_a − y_m` over all rows and axes.
    pub fn rms_error(&self) -> f64 {
        self.rms_error_range(0, self.rows.len())
    }

    pub fn rms_error_range(&self, from: usize, to: usize) -> f64 {
        let rows = &self.rows[from.min(self.rows.len())..to.min(self.rows.len())];
        let n: usize = rows.iter().map(|r| r.e.len()).sum();
        if n == 0 {
            return 0.0;
        }
        (rows.iter().flat_map(|r| r.e.iter()).map(|e| e * e).sum::<f64>() / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub sample_time: f64,
    pub blowup_bound: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { sample_time: 0.01, blowup_bound: DEFAULT_BLOWUP_BOUND }
    }
}

/// Simulates the interconnection for `horizon` steps from the given initial
/// states under the open-loop command `inputs`.
pub fn run_closed_loop(
    ic: &Interconnection,
    adjustment: &mut Adjustment,
    inputs: &[f64],
    horizon: usize,
    x_a0: &DVector<f64>,
    x_m0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<SimTrace, AdaptError> {
    let r = ic.relative_degree();
    if horizon < r {
        return Err(AdaptError::Invalid(format!("horizon {horizon} shorter than relative degree {r}")));
    }
    if inputs.len() < horizon {
        return Err(AdaptError::Invalid(format!("{} inputs for horizon {horizon}", inputs.len())));
    }
    if x_a0.len() != ic.plant.state_dim() || x_m0.len() != ic.reference.state_dim() {
        return Err(AdaptError::Invalid("initial state dimension".into()));
    }
    let mut x_a = x_a0.clone();
    let mut x_m = x_m0.clone();
    let mut rows = Vec::with_capacity(horizon);
    let mut status = TraceStatus::Complete;
    for (k, &u) in inputs.iter().enumerate().take(horizon) {
        let t = k as f64 * opts.sample_time;
        let y_a = ic.plant.output(&x_a);
        let y_m = ic.reference.output(&x_m);
        let du = match adjustment {
            Adjustment::None => 0.0,
            Adjustment::Ideal(io) => ideal_adjustment(&ic.plant, &ic.reference, &x_a, &x_m, u, io)?,
            Adjustment::Adaptive(engine) => {
                engine.observe(y_a, y_m)?;
                engine.compute_input(x_a.as_slice(), x_m.as_slice(), u)?.0
            }
            Adjustment::Frozen(engine) => engine.compute_input(x_a.as_slice(), x_m.as_slice(), u)?.0,
        };
        let (u_a, u_m) = Interconnection::route(u, du);
        rows.push(TraceRow {
            k,
            t,
            x_a: x_a.as_slice().to_vec(),
            x_m: x_m.as_slice().to_vec(),
            u: vec![u],
            du: vec![du],
            u_a: vec![u_a],
            y_a: vec![y_a],
            y_m: vec![y_m],
            e: vec![y_m - y_a],
            aux: Vec::new(),
        });
        match adjustment {
            Adjustment::Adaptive(engine) => {
                let y_m_future = reference_lookahead(&ic.reference, &x_m, u_m);
                engine.learn(x_a.as_slice(), y_a, y_m_future)?;
            }
            Adjustment::Frozen(engine) => engine.skip_learning(y_a),
            _ => {}
        }
        x_m = ic.reference.step_raw(&x_m, u_m);
        x_a = ic.plant.step_raw(&x_a, u_a + ic.disturbances.input_at(t));
        ic.disturbances.perturb_state(t, &mut x_a);
        if !x_a.iter().all(|v| v.is_finite()) || x_a.norm() > opts.blowup_bound {
            status = TraceStatus::Diverged { step: k + 1 };
            break;
        }
    }
    let (diagnostics, networks) = match adjustment {
        Adjustment::Adaptive(e) | Adjustment::Frozen(e) => (e.diagnostics(), vec![e.net().clone()]),
        _ => (AdaptDiagnostics::default(), Vec::new()),
    };
    Ok(SimTrace { sample_time: opts.sample_time, axes: 1, aux_names: Vec::new(), rows, status, diagnostics, networks })
}
