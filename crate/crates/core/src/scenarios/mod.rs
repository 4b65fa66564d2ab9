//! Named experiments: the numerical example and its learning-rate sweep,
//! the open-loop acceleration response study, and the flying inverted
//! pendulum tasks.
//!
//! A [`Scenario`] is plain data. Every field can be overridden by a dotted
//! key (see [`Scenario::set`]), and [`Scenario::run`] refuses to simulate a
//! Lipschitz configuration that fails the small-gain check.

pub mod pendulum;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adaptation::{
    run_closed_loop, AdaptError, AdaptationConfig, AdaptationEngine, Adjustment, GainSource, RunOptions,
    SimTrace, UpdateMode, DEFAULT_BLOWUP_BOUND,
};
use crate::control::ControlError;
use crate::fwdmodel::{BlrConfig, BlrModel, FeatureMap};
use crate::lipnet::{AdaptiveNet, BaselineNet, GroupSize, LipNet, NetError};
use crate::stability::{small_gain_check, verify_state_bound, Certificate, GainEstimate, StabilityError, StateBoundReport};
use crate::sysmodel::{
    damped_reference, first_order_reference, sinusoidal_drift_plant, Disturbance, DisturbanceSchedule,
    DisturbanceShape, DisturbanceTarget, Interconnection, LaggedAccelPlant, ModelError, SystemModel,
};

pub use pendulum::{pendulum_metrics, AccelReference, LqrWeights, PendulumMetrics, PendulumSpec, Task};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{key}: {message}")]
    Key { key: String, message: String },
    #[error("not certified: L = {lipschitz} with γ = {gamma} gives L·γ = {product} ≥ 1")]
    NotCertified { lipschitz: f64, gamma: f64, product: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

fn key_error(key: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Key { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    LipNet,
    Baseline,
    /// No adjustment: the plant receives the command unchanged.
    None,
}

impl NetworkKind {
    pub fn label(&self) -> &'static str {
        match self {
            NetworkKind::LipNet => "lipnet",
            NetworkKind::Baseline => "baseline",
            NetworkKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationSpec {
    pub network: NetworkKind,
    pub lipschitz: f64,
    pub learning_rate: f64,
    pub width: usize,
    pub depth: usize,
    pub group: GroupSize,
    pub mode: UpdateMode,
    pub gain: GainSource,
    pub fallback_gain: f64,
    pub forward: BlrConfig,
}

impl AdaptationSpec {
    pub fn lipnet(lipschitz: f64, learning_rate: f64) -> Self {
        let defaults = AdaptationConfig::default();
        Self {
            network: NetworkKind::LipNet,
            lipschitz,
            learning_rate,
            width: 20,
            depth: 3,
            group: GroupSize::Full,
            mode: defaults.mode,
            gain: defaults.gain,
            fallback_gain: defaults.fallback_gain,
            forward: BlrConfig::default(),
        }
    }

    fn config(&self) -> AdaptationConfig {
        AdaptationConfig {
            learning_rate: self.learning_rate,
            mode: self.mode,
            gain: self.gain,
            fallback_gain: self.fallback_gain,
            ..AdaptationConfig::default()
        }
    }
}

/// Network drawn from `rng`, a fresh forward model and the engine around them.
pub fn build_engine<R: Rng + ?Sized>(
    spec: &AdaptationSpec,
    input_dim: usize,
    state_dim: usize,
    rng: &mut R,
) -> Result<AdaptationEngine, ScenarioError> {
    let net = match spec.network {
        NetworkKind::LipNet => {
            AdaptiveNet::Lipschitz(LipNet::random(input_dim, spec.width, spec.depth, spec.group, spec.lipschitz, rng)?)
        }
        NetworkKind::Baseline => AdaptiveNet::Baseline(BaselineNet::random(input_dim, spec.width, spec.depth, rng)?),
        NetworkKind::None => return Err(key_error("adaptation.network", "no network configured")),
    };
    let forward = Box::new(BlrModel::new(spec.forward, state_dim));
    Ok(AdaptationEngine::new(net, forward, spec.config(), 1)?)
}

/// The command of the numerical example,
/// `u_k = sin(2π/5·kT) + 5 cos(2π/3·kT) − 5`.
pub fn example_input(k: usize, sample_time: f64) -> f64 {
    let t = k as f64 * sample_time;
    (2.0 * PI / 5.0 * t).sin() + 5.0 * (2.0 * PI / 3.0 * t).cos() - 5.0
}

/// Open-loop acceleration command for the response study (m/s²).
pub fn accel_test_input(k: usize, sample_time: f64) -> f64 {
    let t = k as f64 * sample_time;
    0.6 * (2.0 * PI * 0.3 * t).sin() + 0.4 * (2.0 * PI * 0.8 * t + 1.0).sin() + 0.2 * (2.0 * PI * 1.7 * t).sin()
}

/// Surrogate acceleration dynamics of the simulated vehicle.
pub fn default_surrogate() -> LaggedAccelPlant {
    LaggedAccelPlant { pole: 0.9, gain: 0.06, softening: 0.05 }
}

/// Acceleration reference `(α_x, β_x, α_y, β_y)` used by the pendulum tasks.
pub const DEFAULT_TAU: (f64, f64, f64, f64) = (0.35, 0.65, 0.35, 0.65);

#[derive(Debug, Clone, PartialEq)]
pub enum Setup {
    /// Sinusoidal-drift plant against the damped linear reference.
    SimExample { sample_time: f64 },
    /// One axis of the surrogate acceleration plant against `a⁺ = β a + α u`,
    /// driven open loop.
    AccelResponse { sample_time: f64, surrogate: LaggedAccelPlant, alpha: f64, beta: f64 },
    Pendulum(PendulumSpec),
}

/// Flat description of at most one disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceSpec {
    pub target: Option<DisturbanceTarget>,
    pub sine: bool,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub start: f64,
    pub end: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self { target: None, sine: false, amplitude: 0.0, frequency: 0.0, phase: 0.0, start: 0.0, end: f64::INFINITY }
    }
}

impl DisturbanceSpec {
    pub fn schedule(&self) -> DisturbanceSchedule {
        let Some(target) = self.target else {
            return DisturbanceSchedule::default();
        };
        let shape = if self.sine {
            DisturbanceShape::Sine { amplitude: self.amplitude, frequency: self.frequency, phase: self.phase }
        } else {
            DisturbanceShape::Constant { value: self.amplitude }
        };
        DisturbanceSchedule { entries: vec![Disturbance { target, shape, start: self.start, end: self.end }] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub setup: Setup,
    pub adaptation: AdaptationSpec,
    /// Plant gain bound used by the certificate and the state-bound check.
    pub gain: GainEstimate,
    pub horizon: usize,
    pub seeds: usize,
    pub blowup_bound: f64,
    pub disturbance: DisturbanceSpec,
}

/// Result of one seeded run.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trace: SimTrace,
    /// RMS output mismatch of the same scenario without adjustment.
    pub unadapted_rms: f64,
    pub certificate: Option<Certificate>,
    /// Present for complete traces of certified configurations.
    pub state_bound: Option<StateBoundReport>,
    pub pendulum: Option<PendulumMetrics>,
}

/// Width of the final window (s) used for terminal pendulum errors.
pub const TERMINAL_WINDOW: f64 = 5.0;

impl Scenario {
    pub fn sample_time(&self) -> f64 {
        match &self.setup {
            Setup::SimExample { sample_time } | Setup::AccelResponse { sample_time, .. } => *sample_time,
            Setup::Pendulum(p) => p.sample_time,
        }
    }

    /// Small-gain certificate, for Lipschitz networks only.
    pub fn certificate(&self) -> Option<Certificate> {
        (self.adaptation.network == NetworkKind::LipNet)
            .then(|| small_gain_check(self.adaptation.lipschitz, self.gain.gamma))
    }

    /// Fails for a Lipschitz network that does not satisfy `L·γ < 1`.
    pub fn check_certified(&self) -> Result<(), ScenarioError> {
        match self.certificate() {
            Some(c) if !c.certified() => Err(ScenarioError::NotCertified {
                lipschitz: c.lipschitz,
                gamma: c.gamma,
                product: c.lipschitz * c.gamma,
            }),
            _ => Ok(()),
        }
    }

    /// Runs one trial. The certificate gate is evaluated before any step.
    pub fn run(&self, seed: u64) -> Result<TrialOutcome, ScenarioError> {
        self.check_certified()?;
        let disturbances = self.disturbance.schedule();
        let trace = self.simulate(&self.adaptation, seed, &disturbances)?;
        let mut off = self.adaptation.clone();
        off.network = NetworkKind::None;
        let unadapted = if self.adaptation.network == NetworkKind::None {
            trace.clone()
        } else {
            self.simulate(&off, seed, &disturbances)?
        };
        let certificate = self.certificate();
        let state_bound = match certificate {
            Some(c) if c.certified() && !trace.diverged() => {
                Some(verify_state_bound(&trace, &self.gain, self.adaptation.lipschitz)?)
            }
            _ => None,
        };
        let pendulum = matches!(self.setup, Setup::Pendulum(_)).then(|| pendulum_metrics(&trace, TERMINAL_WINDOW));
        Ok(TrialOutcome { unadapted_rms: unadapted.rms_error(), trace, certificate, state_bound, pendulum })
    }

    /// Simulates with the given adaptation, bypassing the certificate gate.
    pub fn simulate(
        &self,
        adaptation: &AdaptationSpec,
        seed: u64,
        disturbances: &DisturbanceSchedule,
    ) -> Result<SimTrace, ScenarioError> {
        let opts = RunOptions { sample_time: self.sample_time(), blowup_bound: self.blowup_bound };
        match &self.setup {
            Setup::SimExample { sample_time } => {
                let ic = Interconnection::new(sinusoidal_drift_plant(*sample_time), damped_reference(*sample_time))?
                    .with_disturbances(disturbances.clone());
                let inputs: Vec<f64> = (0..self.horizon).map(|k| example_input(k, *sample_time)).collect();
                self.open_loop(&ic, adaptation, &inputs, seed, &opts)
            }
            Setup::AccelResponse { sample_time, surrogate, alpha, beta } => {
                let plant = SystemModel::new("lagged-accel", Arc::new(surrogate.clone()), 1)?;
                let ic = Interconnection::new(plant, first_order_reference(*alpha, *beta)?)?
                    .with_disturbances(disturbances.clone());
                let inputs: Vec<f64> = (0..self.horizon).map(|k| accel_test_input(k, *sample_time)).collect();
                self.open_loop(&ic, adaptation, &inputs, seed, &opts)
            }
            Setup::Pendulum(spec) => pendulum::run_pendulum(spec, adaptation, self.horizon, disturbances, seed),
        }
    }

    fn open_loop(
        &self,
        ic: &Interconnection,
        adaptation: &AdaptationSpec,
        inputs: &[f64],
        seed: u64,
        opts: &RunOptions,
    ) -> Result<SimTrace, ScenarioError> {
        let mut adjustment = match adaptation.network {
            NetworkKind::None => Adjustment::None,
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let engine = build_engine(adaptation, ic.plant.state_dim() + ic.reference.state_dim() + 1, ic.plant.state_dim(), &mut rng)?;
                Adjustment::Adaptive(Box::new(engine))
            }
        };
        let zero_a = DVector::zeros(ic.plant.state_dim());
        let zero_m = DVector::zeros(ic.reference.state_dim());
        Ok(run_closed_loop(ic, &mut adjustment, inputs, self.horizon, &zero_a, &zero_m, opts)?)
    }

    /// Applies one dotted-key override. Keys that do not exist for this
    /// scenario's setup are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let num = || parse_f64(key, value);
        let count = || parse_usize(key, value);
        let a = &mut self.adaptation;
        match key {
            "adaptation.network" => {
                a.network = match value {
                    "lipnet" => NetworkKind::LipNet,
                    "baseline" => NetworkKind::Baseline,
                    "none" => NetworkKind::None,
                    _ => return Err(key_error(key, format!("expected lipnet, baseline or none, got `{value}`"))),
                }
            }
            "adaptation.lipschitz" => a.lipschitz = positive(key, num()?)?,
            "adaptation.learning_rate" => {
                let v = num()?;
                if v < 0.0 {
                    return Err(key_error(key, "must be nonnegative"));
                }
                a.learning_rate = v;
            }
            "adaptation.width" => a.width = nonzero(key, count()?)?,
            "adaptation.depth" => a.depth = nonzero(key, count()?)?,
            "adaptation.group" => {
                a.group = match value {
                    "full" => GroupSize::Full,
                    _ => GroupSize::Size(nonzero(key, count()?)?),
                }
            }
            "adaptation.mode" => {
                a.mode = match value {
                    "predictive" => UpdateMode::Predictive,
                    "delayed" => UpdateMode::Delayed,
                    _ => return Err(key_error(key, format!("expected predictive or delayed, got `{value}`"))),
                }
            }
            "adaptation.gain" => {
                a.gain = match value {
                    "estimated" => GainSource::Estimated,
                    _ => GainSource::Fixed(num()?),
                }
            }
            "adaptation.fallback_gain" => a.fallback_gain = num()?,
            "forward.window" => a.forward.window = nonzero(key, count()?)?,
            "forward.prior_precision" => a.forward.prior_precision = positive(key, num()?)?,
            "forward.noise_precision" => a.forward.noise_precision = positive(key, num()?)?,
            "forward.min_samples" => a.forward.min_samples = count()?,
            "forward.features" => {
                a.forward.features = match value {
                    "output" => FeatureMap::OutputInput,
                    "state" => FeatureMap::StateInput,
                    _ => return Err(key_error(key, format!("expected output or state, got `{value}`"))),
                }
            }
            "stability.gamma" => self.gain = GainEstimate::user(positive(key, num()?)?, self.gain.beta),
            "stability.offset" => {
                let b = num()?;
                if b < 0.0 {
                    return Err(key_error(key, "must be nonnegative"));
                }
                self.gain = GainEstimate::user(self.gain.gamma, b);
            }
            "run.horizon" => self.horizon = nonzero(key, count()?)?,
            "run.seeds" => self.seeds = nonzero(key, count()?)?,
            "run.blowup_bound" => self.blowup_bound = positive(key, num()?)?,
            "run.sample_time" => {
                let t = positive(key, num()?)?;
                match &mut self.setup {
                    Setup::SimExample { sample_time } | Setup::AccelResponse { sample_time, .. } => *sample_time = t,
                    Setup::Pendulum(p) => p.sample_time = t,
                }
            }
            _ if key.starts_with("disturbance.") => self.set_disturbance(key, value)?,
            _ => self.set_setup(key, value)?,
        }
        Ok(())
    }

    fn set_disturbance(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let d = &mut self.disturbance;
        match key {
            "disturbance.target" => {
                d.target = match value {
                    "none" => None,
                    "input" => Some(DisturbanceTarget::Input),
                    _ => match value.strip_prefix("state:").map(str::parse::<usize>) {
                        Some(Ok(i)) => Some(DisturbanceTarget::State(i)),
                        _ => return Err(key_error(key, format!("expected none, input or state:<index>, got `{value}`"))),
                    },
                }
            }
            "disturbance.shape" => {
                d.sine = match value {
                    "constant" => false,
                    "sine" => true,
                    _ => return Err(key_error(key, format!("expected constant or sine, got `{value}`"))),
                }
            }
            "disturbance.amplitude" => d.amplitude = parse_f64(key, value)?,
            "disturbance.frequency" => d.frequency = parse_f64(key, value)?,
            "disturbance.phase" => d.phase = parse_f64(key, value)?,
            "disturbance.start" => d.start = parse_f64(key, value)?,
            "disturbance.end" => d.end = parse_f64(key, value)?,
            _ => return Err(key_error(key, "unknown key")),
        }
        Ok(())
    }

    fn set_setup(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let num = || parse_f64(key, value);
        match &mut self.setup {
            Setup::SimExample { .. } => return Err(key_error(key, "unknown key")),
            Setup::AccelResponse { surrogate, alpha, beta, .. } => match key {
                "reference.alpha" => *alpha = positive(key, num()?)?,
                "reference.beta" => *beta = num()?,
                _ => set_surrogate(surrogate, key, value)?,
            },
            Setup::Pendulum(p) => match key {
                "reference.alpha_x" => p.reference.alpha_x = positive(key, num()?)?,
                "reference.beta_x" => p.reference.beta_x = num()?,
                "reference.alpha_y" => p.reference.alpha_y = positive(key, num()?)?,
                "reference.beta_y" => p.reference.beta_y = num()?,
                "pendulum.length" => p.length = positive(key, num()?)?,
                "pendulum.gravity" => p.gravity = positive(key, num()?)?,
                "pendulum.offset_r" => p.initial_offset.0 = num()?,
                "pendulum.offset_s" => p.initial_offset.1 = num()?,
                "pendulum.substeps" => p.substeps = nonzero(key, parse_usize(key, value)?)?,
                "task.kind" => {
                    p.task = match (value, p.task) {
                        ("hover", _) => Task::Hover,
                        ("circle", Task::Circle { .. }) => p.task,
                        ("circle", Task::Hover) => Task::circle(),
                        _ => return Err(key_error(key, format!("expected hover or circle, got `{value}`"))),
                    }
                }
                "task.radius" | "task.rate" => {
                    let v = num()?;
                    let Task::Circle { radius, rate } = &mut p.task else {
                        return Err(key_error(key, "only valid for the circle task"));
                    };
                    if key == "task.radius" {
                        *radius = v;
                    } else {
                        *rate = v;
                    }
                }
                "lqr.position" => p.weights.position = nonneg(key, num()?)?,
                "lqr.velocity" => p.weights.velocity = nonneg(key, num()?)?,
                "lqr.pendulum" => p.weights.pendulum = nonneg(key, num()?)?,
                "lqr.pendulum_rate" => p.weights.pendulum_rate = nonneg(key, num()?)?,
                "lqr.accel" => p.weights.accel = nonneg(key, num()?)?,
                "lqr.input" => p.weights.input = positive(key, num()?)?,
                _ => set_surrogate(&mut p.surrogate, key, value)?,
            },
        }
        Ok(())
    }
}

fn set_surrogate(s: &mut LaggedAccelPlant, key: &str, value: &str) -> Result<(), ScenarioError> {
    let v = parse_f64(key, value)?;
    match key {
        "surrogate.pole" => s.pole = v,
        "surrogate.gain" => s.gain = v,
        "surrogate.softening" => s.softening = nonneg(key, v)?,
        _ => return Err(key_error(key, "unknown key")),
    }
    Ok(())
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ScenarioError> {
    match value.trim().parse::<f64>() {
        Ok(v) if v.is_finite() || v == f64::INFINITY => Ok(v),
        _ => Err(key_error(key, format!("expected a number, got `{value}`"))),
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ScenarioError> {
    value.trim().parse::<usize>().map_err(|_| key_error(key, format!("expected a nonnegative integer, got `{value}`")))
}

fn positive(key: &str, v: f64) -> Result<f64, ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(key_error(key, format!("must be positive, got {v}")))
    }
}

fn nonneg(key: &str, v: f64) -> Result<f64, ScenarioError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(key_error(key, format!("must be nonnegative, got {v}")))
    }
}

fn nonzero(key: &str, v: usize) -> Result<usize, ScenarioError> {
    if v > 0 {
        Ok(v)
    } else {
        Err(key_error(key, "must be at least 1"))
    }
}

/// The numerical example: `L = 0.89`, `λ = 33`, 1000 steps at `T = 0.01`,
/// user-supplied `γ = 1.12`.
pub fn sim_example() -> Scenario {
    Scenario {
        name: "sim-example".into(),
        setup: Setup::SimExample { sample_time: 0.01 },
        adaptation: AdaptationSpec::lipnet(0.89, 33.0),
        gain: GainEstimate::user(1.12, 0.0),
        horizon: 1000,
        seeds: 10,
        blowup_bound: DEFAULT_BLOWUP_BOUND,
        disturbance: DisturbanceSpec::default(),
    }
}

pub const SWEEP_RATES: [f64; 7] = [1.0, 3.3, 10.0, 33.0, 100.0, 330.0, 1000.0];

/// Cross product of `rates` × `kinds` over the numerical example.
pub fn learning_rate_sweep(base: &Scenario, rates: &[f64], kinds: &[NetworkKind]) -> Vec<Scenario> {
    let mut out = Vec::with_capacity(rates.len() * kinds.len());
    for &rate in rates {
        for &kind in kinds {
            let mut s = base.clone();
            s.adaptation.learning_rate = rate;
            s.adaptation.network = kind;
            s.name = format!("{}/{}/{}", base.name, kind.label(), rate);
            out.push(s);
        }
    }
    out
}

/// One axis of the simulated vehicle's acceleration loop against a
/// first-order reference, `T = 0.02`, 30 s.
pub fn accel_response(alpha: f64, beta: f64) -> Scenario {
    Scenario {
        name: "accel-response".into(),
        setup: Setup::AccelResponse { sample_time: 0.02, surrogate: default_surrogate(), alpha, beta },
        adaptation: AdaptationSpec::lipnet(0.8, 0.8),
        gain: GainEstimate::user(0.68, 0.0),
        horizon: 1500,
        seeds: 10,
        blowup_bound: DEFAULT_BLOWUP_BOUND,
        disturbance: DisturbanceSpec::default(),
    }
}

pub const SAMPLED_ALPHA: (f64, f64) = (0.2, 0.5);
pub const SAMPLED_BETA: (f64, f64) = (0.4, 0.8);

/// `count` acceleration references with `α` and `β` drawn uniformly from
/// [`SAMPLED_ALPHA`] and [`SAMPLED_BETA`].
pub fn reference_sampling(base: &Scenario, count: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let alpha = rng.random_range(SAMPLED_ALPHA.0..SAMPLED_ALPHA.1);
            let beta = rng.random_range(SAMPLED_BETA.0..SAMPLED_BETA.1);
            let mut s = base.clone();
            if let Setup::AccelResponse { alpha: a, beta: b, .. } = &mut s.setup {
                *a = alpha;
                *b = beta;
            }
            s.name = format!("{}/{}", base.name, i);
            s
        })
        .collect()
}

/// Pendulum task with the default controller settings: `τ_m = (0.35, 0.65,
/// 0.35, 0.65)`, `L = 0.8`, `λ = 0.8`, `γ = 0.68`, 50 Hz, 20 s.
pub fn flying_pendulum(task: Task) -> Scenario {
    let name = match task {
        Task::Hover => "pendulum-hover",
        Task::Circle { .. } => "pendulum-circle",
    };
    Scenario {
        name: name.into(),
        setup: Setup::Pendulum(PendulumSpec {
            task,
            length: 0.5,
            gravity: 9.81,
            sample_time: 0.02,
            substeps: 4,
            surrogate: default_surrogate(),
            reference: AccelReference::from_tuple(DEFAULT_TAU),
            weights: LqrWeights::default(),
            initial_offset: (0.05, 0.05),
        }),
        adaptation: AdaptationSpec::lipnet(0.8, 0.8),
        gain: GainEstimate::user(0.68, 0.0),
        horizon: 1000,
        seeds: 10,
        blowup_bound: DEFAULT_BLOWUP_BOUND,
        disturbance: DisturbanceSpec::default(),
    }
}

/// Names accepted by [`by_name`], with one-line descriptions.
pub const CATALOG: [(&str, &str); 6] = [
    ("sim-example", "nonlinear example plant matched to a damped linear reference"),
    ("lr-sweep", "learning-rate sweep over the example, Lipschitz vs tanh network"),
    ("accel-response", "open-loop acceleration response against tau_m = (0.35, 0.65)"),
    ("reference-sampling", "acceleration response against randomly sampled references"),
    ("pendulum-hover", "flying inverted pendulum, hover from an offset start"),
    ("pendulum-circle", "flying inverted pendulum, circle tracking"),
];

/// Base scenario of a catalog entry. Families that expand into several
/// variants (`lr-sweep`, `reference-sampling`) return their base.
pub fn by_name(name: &str) -> Result<Scenario, ScenarioError> {
    let mut s = match name {
        "sim-example" | "lr-sweep" => sim_example(),
        "accel-response" | "reference-sampling" => accel_response(DEFAULT_TAU.0, DEFAULT_TAU.1),
        "pendulum-hover" => flying_pendulum(Task::Hover),
        "pendulum-circle" => flying_pendulum(Task::circle()),
        _ => return Err(ScenarioError::UnknownScenario(name.to_string())),
    };
    s.name = name.to_string();
    Ok(s)
}
