//! Discrete-time control-affine plants and reference models.
//!
//! A system is `x⁺ = f(x) + g(x)·u`, `y = h(x)` with scalar input and output.
//! The output is always read from the pre-step state, so a simulation step
//! at time `k` yields `(x_{k+1}, y_k)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default probe step for finite-difference input gains.
pub const DEFAULT_PROBE: f64 = 1e-6;
/// Default lower bound on `|G(x)|` before the input-output map is declared singular.
pub const DEFAULT_G_MIN: f64 = 1e-9;
/// Horizon used by [`estimate_relative_degree`].
pub const RELATIVE_DEGREE_HORIZON: usize = 100;
/// Default noise floor used by [`estimate_relative_degree`].
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite state entry at index {0}")]
    NonFiniteState(usize),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("ill-defined relative degree at x: |G(x)| = {0:e}")]
    IllDefinedRelativeDegree(f64),
    #[error("relative degree undetectable within {0} steps")]
    RelativeDegreeUndetectable(usize),
    #[error("reference model is unstable (spectral radius {0})")]
    UnstableReference(f64),
    #[error("relative degree must be at least 1")]
    ZeroRelativeDegree,
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Drift, input gain and output map of a control-affine system.
pub trait ControlAffine: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_gain(&self, x: &DVector<f64>) -> DVector<f64>;
    fn output(&self, x: &DVector<f64>) -> f64;

    /// Exact gradient of the output map, when it is known in closed form.
    fn output_gradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    fn as_linear(&self) -> Option<&LinearSystem> {
        None
    }

    fn step(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        self.drift(x) + self.input_gain(x) * u
    }
}

/// `x⁺ = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self, ModelError> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n {
            return Err(ModelError::Invalid(format!(
                "inconsistent shapes A {}x{}, B {}, C {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c })
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Markov parameter `C A^{i} B`.
    pub fn markov(&self, i: usize) -> f64 {
        let mut v = self.b.clone();
        for _ in 0..i {
            v = &self.a * v;
        }
        self.c.dot(&v)
    }

    /// Smallest `r ≥ 1` with `C A^{r-1} B ≠ 0`.
    pub fn analytic_relative_degree(&self) -> Option<usize> {
        (0..self.a.nrows().max(1)).find(|&i| self.markov(i) != 0.0).map(|i| i + 1)
    }
}

impl ControlAffine for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn input_gain(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.b.clone()
    }
    fn output(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x)
    }
    fn output_gradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.c.clone())
    }
    fn as_linear(&self) -> Option<&LinearSystem> {
        Some(self)
    }
}

/// Second-order plant with a sinusoidal state nonlinearity on the first
/// coordinate:
///
/// ```text
/// x⁺ = [[1, T], [-T, 1-T]] x + 0.1 T [x₁ sin x₁, 0]ᵀ + [0, 0.6 T]ᵀ u
/// y  = x₁ + x₂
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidalDriftPlant {
    pub sample_time: f64,
}

impl SinusoidalDriftPlant {
    pub fn new(sample_time: f64) -> Self {
        Self { sample_time }
    }

    pub fn linear_part(&self) -> LinearSystem {
        let t = self.sample_time;
        LinearSystem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, t, -t, 1.0 - t]),
            b: DVector::from_row_slice(&[0.0, 0.6 * t]),
            c: DVector::from_row_slice(&[1.0, 1.0]),
        }
    }
}

impl ControlAffine for SinusoidalDriftPlant {
    fn state_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = self.sample_time;
        let x1 = x[0];
        let x2 = x[1];
        DVector::from_row_slice(&[x1 + t * x2 + 0.1 * t * x1 * x1.sin(), -t * x1 + (1.0 - t) * x2])
    }
    fn input_gain(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_row_slice(&[0.0, 0.6 * self.sample_time])
    }
    fn output(&self, x: &DVector<f64>) -> f64 {
        x[0] + x[1]
    }
    fn output_gradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::from_row_slice(&[1.0, 1.0]))
    }
}

/// Scalar first-order acceleration response with a state-dependent input
/// effectiveness: `a⁺ = pole·a + gain·u / (1 + softening·a²)`, `y = a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedAccelPlant {
    pub pole: f64,
    pub gain: f64,
    pub softening: f64,
}

impl ControlAffine for LaggedAccelPlant {
    fn state_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.pole * x[0])
    }
    fn input_gain(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.gain / (1.0 + self.softening * x[0] * x[0]))
    }
    fn output(&self, x: &DVector<f64>) -> f64 {
        x[0]
    }
    fn output_gradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::from_element(1, 1.0))
    }
}

/// A named control-affine system with a declared relative degree. Used both
/// for plants and for reference models.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: String,
    dynamics: Arc<dyn ControlAffine>,
    relative_degree: usize,
}

/// The system being adapted.
pub type Plant = SystemModel;
/// The dynamics the adapted plant should reproduce.
pub type ReferenceModel = SystemModel;

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn ControlAffine>,
        relative_degree: usize,
    ) -> Result<Self, ModelError> {
        if relative_degree == 0 {
            return Err(ModelError::ZeroRelativeDegree);
        }
        Ok(Self { name: name.into(), dynamics, relative_degree })
    }

    /// Linear reference model; rejected unless `A` is Schur stable.
    pub fn linear_reference(
        name: impl Into<String>,
        sys: LinearSystem,
        relative_degree: usize,
    ) -> Result<Self, ModelError> {
        let rho = sys.spectral_radius();
        if rho >= 1.0 {
            return Err(ModelError::UnstableReference(rho));
        }
        Self::new(name, Arc::new(sys), relative_degree)
    }

    pub fn dynamics(&self) -> &dyn ControlAffine {
        self.dynamics.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn relative_degree(&self) -> usize {
        self.relative_degree
    }

    pub fn linear(&self) -> Option<&LinearSystem> {
        self.dynamics.as_linear()
    }

    pub fn output(&self, x: &DVector<f64>) -> f64 {
        self.dynamics.output(x)
    }

    /// Unchecked step, for inner loops that already validated their inputs.
    pub fn step_raw(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        self.dynamics.step(x, u)
    }
}

fn check_state(sys: &SystemModel, x: &DVector<f64>) -> Result<(), ModelError> {
    if x.len() != sys.state_dim() {
        return Err(ModelError::Dimension { expected: sys.state_dim(), got: x.len() });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteState(i));
    }
    Ok(())
}

/// One simulation step. Returns the next state and the output at the
/// current state.
pub fn plant_step(
    plant: &SystemModel,
    x: &DVector<f64>,
    u: f64,
) -> Result<(DVector<f64>, f64), ModelError> {
    check_state(plant, x)?;
    if !u.is_finite() {
        return Err(ModelError::NonFiniteInput);
    }
    let y = plant.output(x);
    Ok((plant.step_raw(x, u), y))
}

/// Coefficients of `y_{k+r} = F(x_k) + G(x_k)·u_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoMap {
    pub free: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IoMapMethod {
    /// Closed form for linear systems, exact output gradient for `r = 1`
    /// when available, finite differences otherwise.
    Auto,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoMapOptions {
    pub method: IoMapMethod,
    pub probe: f64,
    pub g_min: f64,
}

impl Default for IoMapOptions {
    fn default() -> Self {
        Self { method: IoMapMethod::Auto, probe: DEFAULT_PROBE, g_min: DEFAULT_G_MIN }
    }
}

/// Output `r` steps ahead when `u` is applied at the first step and the
/// input is held at zero afterwards.
fn lookahead_output(sys: &SystemModel, x: &DVector<f64>, u: f64) -> f64 {
    let dyns = sys.dynamics();
    let mut z = dyns.step(x, u);
    for _ in 1..sys.relative_degree() {
        z = dyns.drift(&z);
    }
    dyns.output(&z)
}

pub fn io_map_coefficients(
    sys: &SystemModel,
    x: &DVector<f64>,
    opts: &IoMapOptions,
) -> Result<IoMap, ModelError> {
    check_state(sys, x)?;
    let r = sys.relative_degree();
    let map = match (opts.method, sys.linear()) {
        (IoMapMethod::Auto, Some(lin)) => {
            let mut ar_x = x.clone();
            for _ in 0..r {
                ar_x = &lin.a * ar_x;
            }
            IoMap { free: lin.c.dot(&ar_x), gain: lin.markov(r - 1) }
        }
        (IoMapMethod::Auto, None) if r == 1 && sys.dynamics().output_gradient(x).is_some() => {
            let dyns = sys.dynamics();
            let fx = dyns.drift(x);
            let grad = dyns.output_gradient(&fx).expect("checked above");
            IoMap { free: dyns.output(&fx), gain: grad.dot(&dyns.input_gain(x)) }
        }
        _ => {
            let h = opts.probe;
            let free = lookahead_output(sys, x, 0.0);
            let gain = (lookahead_output(sys, x, h) - lookahead_output(sys, x, -h)) / (2.0 * h);
            IoMap { free, gain }
        }
    };
    if !(map.gain.abs() >= opts.g_min) {
        return Err(ModelError::IllDefinedRelativeDegree(map.gain.abs()));
    }
    Ok(map)
}

/// Applies a unit input step from `x0` and reports the first sample at which
/// the output departs from the zero-input run by more than `noise_floor`.
pub fn estimate_relative_degree(
    sys: &SystemModel,
    x0: &DVector<f64>,
    noise_floor: f64,
) -> Result<usize, ModelError> {
    check_state(sys, x0)?;
    let mut base = x0.clone();
    let mut excited = x0.clone();
    for k in 0..=RELATIVE_DEGREE_HORIZON {
        if (sys.output(&excited) - sys.output(&base)).abs() > noise_floor {
            return Ok(k);
        }
        base = sys.step_raw(&base, 0.0);
        excited = sys.step_raw(&excited, 1.0);
    }
    Err(ModelError::RelativeDegreeUndetectable(RELATIVE_DEGREE_HORIZON))
}

/// Where an additive disturbance enters the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceTarget {
    Input,
    State(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceShape {
    Constant { value: f64 },
    Sine { amplitude: f64, frequency: f64, phase: f64 },
}

/// Additive perturbation active on `start ≤ t < end` (seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub target: DisturbanceTarget,
    pub shape: DisturbanceShape,
    pub start: f64,
    pub end: f64,
}

impl Disturbance {
    pub fn value_at(&self, t: f64) -> f64 {
        if t < self.start || t >= self.end {
            return 0.0;
        }
        match self.shape {
            DisturbanceShape::Constant { value } => value,
            DisturbanceShape::Sine { amplitude, frequency, phase } => {
                amplitude * (2.0 * std::f64::consts::PI * frequency * (t - self.start) + phase).sin()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DisturbanceSchedule {
    pub entries: Vec<Disturbance>,
}

impl DisturbanceSchedule {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn input_at(&self, t: f64) -> f64 {
        self.entries
            .iter()
            .filter(|d| d.target == DisturbanceTarget::Input)
            .map(|d| d.value_at(t))
            .sum()
    }

    /// Adds the state perturbations active at `t` to `x` in place.
    pub fn perturb_state(&self, t: f64, x: &mut DVector<f64>) {
        for d in &self.entries {
            if let DisturbanceTarget::State(i) = d.target {
                if i < x.len() {
                    x[i] += d.value_at(t);
                }
            }
        }
    }
}

/// Plant and reference wired so that the plant receives `u + δu` and the
/// reference receives `u`.
#[derive(Debug, Clone)]
pub struct Interconnection {
    pub plant: Plant,
    pub reference: ReferenceModel,
    pub disturbances: DisturbanceSchedule,
}

impl Interconnection {
    pub fn new(plant: Plant, reference: ReferenceModel) -> Result<Self, ModelError> {
        if plant.relative_degree() != reference.relative_degree() {
            return Err(ModelError::Invalid(format!(
                "plant relative degree {} differs from reference {}",
                plant.relative_degree(),
                reference.relative_degree()
            )));
        }
        Ok(Self { plant, reference, disturbances: DisturbanceSchedule::default() })
    }

    pub fn with_disturbances(mut self, disturbances: DisturbanceSchedule) -> Self {
        self.disturbances = disturbances;
        self
    }

    pub fn relative_degree(&self) -> usize {
        self.plant.relative_degree()
    }

    /// Input routing: `(u_a, u_m)`.
    pub fn route(u: f64, du: f64) -> (f64, f64) {
        (u + du, u)
    }
}

pub(crate) fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Plant of the numerical example, sample time `t`.
pub fn sinusoidal_drift_plant(t: f64) -> Plant {
    SystemModel::new("sinusoidal-drift", Arc::new(SinusoidalDriftPlant::new(t)), 1)
        .expect("relative degree 1")
}

/// Linear reference of the numerical example:
/// `A = [[1, T], [-0.25T, 1-T]]`, `B = [0, T]ᵀ`, `C = [0.25, 0.25]`.
pub fn damped_reference(t: f64) -> ReferenceModel {
    let sys = LinearSystem {
        a: DMatrix::from_row_slice(2, 2, &[1.0, t, -0.25 * t, 1.0 - t]),
        b: DVector::from_row_slice(&[0.0, t]),
        c: DVector::from_row_slice(&[0.25, 0.25]),
    };
    SystemModel::linear_reference("damped-linear", sys, 1).expect("stable for 0 < T < 1")
}

/// First-order acceleration reference `a⁺ = pole·a + gain·u`.
pub fn first_order_reference(gain: f64, pole: f64) -> Result<ReferenceModel, ModelError> {
    let sys = LinearSystem::new(
        DMatrix::from_element(1, 1, pole),
        DVector::from_element(1, gain),
        DVector::from_element(1, 1.0),
    )?;
    SystemModel::linear_reference("first-order-accel", sys, 1)
}
