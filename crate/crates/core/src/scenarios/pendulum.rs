//! Planar flying inverted pendulum.
//!
//! Each horizontal axis carries `[p, v, r, ṙ]`: vehicle position and
//! velocity, and the horizontal offset of the pendulum mass from the vehicle
//! centre together with its rate. With rod length `l`, `ζ = √(l² − r²)` and
//! vehicle acceleration `a`, a point mass on a massless rod obeys
//!
//! ```text
//! p̈ = a
//! r̈ = ζ (g r − a ζ) / l² − r ṙ² / ζ²
//! ```
//!
//! which follows from `l φ̈ = g sin φ − a cos φ` with `r = l sin φ`. The two
//! axes are integrated independently. The vehicle acceleration itself is not
//! commanded directly: it responds to the command through the surrogate
//! acceleration plant, and per-axis MRAC engines reshape that response
//! towards the first-order reference the LQR was designed against.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{
    reference_lookahead, AdaptDiagnostics, AdaptationEngine, SimTrace, TraceRow, TraceStatus,
};
use crate::control::{build_extended_model, linearize, lqr_design, ControlError, ExtendedModel, LqrDesign};
use crate::sysmodel::{first_order_reference, DisturbanceSchedule, LaggedAccelPlant, ModelError, SystemModel};

use super::{build_engine, AdaptationSpec, NetworkKind, ScenarioError};

/// Pendulum counts as fallen once `|r|` reaches this fraction of `l`.
pub const FALLEN_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    Hover,
    /// Horizontal circle of `radius` metres at `rate` rad/s, centred on the origin.
    Circle { radius: f64, rate: f64 },
}

impl Task {
    pub const CIRCLE_RADIUS: f64 = 0.25;
    pub const CIRCLE_RATE: f64 = 1.25;

    pub fn circle() -> Self {
        Task::Circle { radius: Self::CIRCLE_RADIUS, rate: Self::CIRCLE_RATE }
    }
}

/// Per-axis first-order acceleration reference `a⁺ = β a + α u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelReference {
    pub alpha_x: f64,
    pub beta_x: f64,
    pub alpha_y: f64,
    pub beta_y: f64,
}

impl AccelReference {
    /// `(α_x, β_x, α_y, β_y)`.
    pub fn from_tuple(tau: (f64, f64, f64, f64)) -> Self {
        Self { alpha_x: tau.0, beta_x: tau.1, alpha_y: tau.2, beta_y: tau.3 }
    }

    pub fn axis(&self, i: usize) -> (f64, f64) {
        if i == 0 {
            (self.alpha_x, self.beta_x)
        } else {
            (self.alpha_y, self.beta_y)
        }
    }

    pub fn models(&self) -> Result<[SystemModel; 2], ModelError> {
        Ok([first_order_reference(self.alpha_x, self.beta_x)?, first_order_reference(self.alpha_y, self.beta_y)?])
    }
}

/// Diagonal LQR weights, shared by both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrWeights {
    pub position: f64,
    pub velocity: f64,
    pub pendulum: f64,
    pub pendulum_rate: f64,
    pub accel: f64,
    pub input: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self { position: 1.0, velocity: 1.0, pendulum: 1.0, pendulum_rate: 1.0, accel: 1.0, input: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumSpec {
    pub task: Task,
    pub length: f64,
    pub gravity: f64,
    pub sample_time: f64,
    /// RK4 substeps per sample.
    pub substeps: usize,
    pub surrogate: LaggedAccelPlant,
    pub reference: AccelReference,
    pub weights: LqrWeights,
    /// Initial pendulum offsets `(r, s)` in metres.
    pub initial_offset: (f64, f64),
}

impl PendulumSpec {
    pub fn state_step(&self, x: &DVector<f64>, accel: &[f64; 2]) -> DVector<f64> {
        let mut out = x.clone();
        for (axis, &a) in accel.iter().enumerate() {
            let s = [x[4 * axis], x[4 * axis + 1], x[4 * axis + 2], x[4 * axis + 3]];
            let next = self.axis_step(s, a);
            out.rows_mut(4 * axis, 4).copy_from_slice(&next);
        }
        out
    }

    /// One sample of one axis with the acceleration held.
    pub fn axis_step(&self, s: [f64; 4], accel: f64) -> [f64; 4] {
        let h = self.sample_time / self.substeps as f64;
        let f = |s: [f64; 4]| axis_derivative(s, accel, self.length, self.gravity);
        let add = |s: [f64; 4], d: [f64; 4], c: f64| [s[0] + c * d[0], s[1] + c * d[1], s[2] + c * d[2], s[3] + c * d[3]];
        let mut s = s;
        for _ in 0..self.substeps {
            let k1 = f(s);
            let k2 = f(add(s, k1, 0.5 * h));
            let k3 = f(add(s, k2, 0.5 * h));
            let k4 = f(add(s, k3, h));
            for i in 0..4 {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        s
    }

    /// Extended model about hover: mechanics linearized by central differences,
    /// stacked with the acceleration reference.
    pub fn extended_model(&self) -> Result<ExtendedModel, ControlError> {
        let lin = linearize(
            |x, a| self.state_step(x, &[a[0], a[1]]),
            &DVector::zeros(8),
            &DVector::zeros(2),
            1e-6,
        );
        let r = &self.reference;
        let ref_a = DMatrix::from_diagonal(&DVector::from_row_slice(&[r.beta_x, r.beta_y]));
        let ref_b = DMatrix::from_diagonal(&DVector::from_row_slice(&[r.alpha_x, r.alpha_y]));
        build_extended_model(&lin, &ref_a, &ref_b)
    }

    pub fn lqr(&self) -> Result<LqrDesign, ControlError> {
        let ext = self.extended_model()?;
        let w = &self.weights;
        let axis = [w.position, w.velocity, w.pendulum, w.pendulum_rate];
        let mut q = Vec::with_capacity(10);
        q.extend_from_slice(&axis);
        q.extend_from_slice(&axis);
        q.extend_from_slice(&[w.accel, w.accel]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(q));
        let r = DMatrix::from_diagonal_element(2, 2, w.input);
        lqr_design(&ext.a, &ext.b, &q, &r)
    }

    /// Desired extended state `[x, ẋ, r, ṙ, y, ẏ, s, ṡ, a_x, a_y]` at time `t`.
    /// For the circle the pendulum target is the quasi-static tilt `r = l a / g`
    /// that balances the centripetal acceleration.
    pub fn desired(&self, t: f64) -> DVector<f64> {
        match self.task {
            Task::Hover => DVector::zeros(10),
            Task::Circle { radius, rate } => {
                let (s, c) = (rate * t).sin_cos();
                let w2 = rate * rate;
                let (ax, ay) = (-radius * w2 * c, -radius * w2 * s);
                let (jx, jy) = (radius * w2 * rate * s, -radius * w2 * rate * c);
                let tilt = self.length / self.gravity;
                DVector::from_row_slice(&[
                    radius * c,
                    -radius * rate * s,
                    tilt * ax,
                    tilt * jx,
                    radius * s,
                    radius * rate * c,
                    tilt * ay,
                    tilt * jy,
                    ax,
                    ay,
                ])
            }
        }
    }

    pub fn initial_state(&self) -> DVector<f64> {
        let mut x = DVector::zeros(8);
        if let Task::Circle { radius, rate } = self.task {
            x[0] = radius;
            x[5] = radius * rate;
        }
        x[2] = self.initial_offset.0;
        x[6] = self.initial_offset.1;
        x
    }
}

fn axis_derivative(s: [f64; 4], accel: f64, length: f64, gravity: f64) -> [f64; 4] {
    let [_, v, r, rd] = s;
    let l2 = length * length;
    let z2 = (l2 - r * r).max(1e-12);
    let z = z2.sqrt();
    [v, accel, rd, z * (gravity * r - accel * z) / l2 - r * rd * rd / z2]
}

pub const AUX_NAMES: [&str; 12] = ["x", "vx", "r", "vr", "y", "vy", "s", "vs", "x_des", "y_des", "r_des", "s_des"];

/// Position and pendulum tracking summary of a pendulum trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumMetrics {
    /// RMS of the horizontal vehicle position error.
    pub rms_position: f64,
    /// RMS of the pendulum offset error `(r − r_des, s − s_des)`.
    pub rms_pendulum: f64,
    /// Largest `|r − r_des|`, `|s − s_des|` over the final window.
    pub terminal_pendulum: f64,
    pub fallen: bool,
}

/// Metrics over a trace; `final_window` is in seconds.
pub fn pendulum_metrics(trace: &SimTrace, final_window: f64) -> PendulumMetrics {
    let n = trace.rows.len().max(1) as f64;
    let mut pos = 0.0;
    let mut pend = 0.0;
    for row in &trace.rows {
        let a = &row.aux;
        pos += (a[0] - a[8]).powi(2) + (a[4] - a[9]).powi(2);
        pend += (a[2] - a[10]).powi(2) + (a[6] - a[11]).powi(2);
    }
    let fallen = trace.diverged();
    let horizon = trace.rows.len() as f64 * trace.sample_time;
    let terminal = if fallen {
        f64::INFINITY
    } else {
        trace
            .rows
            .iter()
            .filter(|r| r.t >= horizon - final_window - 1e-12)
            .map(|r| (r.aux[2] - r.aux[10]).abs().max((r.aux[6] - r.aux[11]).abs()))
            .fold(0.0, f64::max)
    };
    PendulumMetrics { rms_position: (pos / n).sqrt(), rms_pendulum: (pend / n).sqrt(), terminal_pendulum: terminal, fallen }
}

/// Closed-loop pendulum run: LQR on the extended state, commands routed
/// through per-axis MRAC engines (or passed straight through when the
/// adaptation is disabled) into the surrogate acceleration plant.
pub fn run_pendulum(
    spec: &PendulumSpec,
    adaptation: &AdaptationSpec,
    horizon: usize,
    disturbances: &DisturbanceSchedule,
    seed: u64,
) -> Result<SimTrace, ScenarioError> {
    let lqr = spec.lqr()?;
    let references = spec.reference.models()?;
    let plant = SystemModel::new("lagged-accel", std::sync::Arc::new(spec.surrogate.clone()), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut engines: Vec<AdaptationEngine> = match adaptation.network {
        NetworkKind::None => Vec::new(),
        _ => vec![build_engine(adaptation, 3, 1, &mut rng)?, build_engine(adaptation, 3, 1, &mut rng)?],
    };

    let mut x = spec.initial_state();
    let mut accel = [DVector::zeros(1), DVector::zeros(1)];
    let mut accel_ref = [DVector::zeros(1), DVector::zeros(1)];
    let mut rows = Vec::with_capacity(horizon);
    let mut status = TraceStatus::Complete;
    let limit = FALLEN_FRACTION * spec.length;

    for k in 0..horizon {
        let t = k as f64 * spec.sample_time;
        let desired = spec.desired(t);
        let mut ext = DVector::zeros(10);
        ext.rows_mut(0, 8).copy_from(&x);
        ext[8] = accel[0][0];
        ext[9] = accel[1][0];
        let u = lqr.control(&(ext - &desired));

        let mut du = [0.0; 2];
        let mut u_a = [u[0], u[1]];
        for (i, engine) in engines.iter_mut().enumerate() {
            engine.observe(accel[i][0], accel_ref[i][0])?;
            let (d, ua) = engine.compute_input(accel[i].as_slice(), accel_ref[i].as_slice(), u[i])?;
            du[i] = d;
            u_a[i] = ua;
        }

        let y_a = [accel[0][0], accel[1][0]];
        let y_m = [accel_ref[0][0], accel_ref[1][0]];
        let mut aux = x.as_slice().to_vec();
        aux.extend_from_slice(&[desired[0], desired[4], desired[2], desired[6]]);
        rows.push(TraceRow {
            k,
            t,
            x_a: y_a.to_vec(),
            x_m: y_m.to_vec(),
            u: vec![u[0], u[1]],
            du: du.to_vec(),
            u_a: u_a.to_vec(),
            y_a: y_a.to_vec(),
            y_m: y_m.to_vec(),
            e: vec![y_m[0] - y_a[0], y_m[1] - y_a[1]],
            aux,
        });

        for (i, engine) in engines.iter_mut().enumerate() {
            let y_m_future = reference_lookahead(&references[i], &accel_ref[i], u[i]);
            engine.learn(accel[i].as_slice(), y_a[i], y_m_future)?;
        }

        let held = [accel[0][0], accel[1][0]];
        x = spec.state_step(&x, &held);
        disturbances.perturb_state(t, &mut x);
        let gust = disturbances.input_at(t);
        for i in 0..2 {
            accel_ref[i] = references[i].step_raw(&accel_ref[i], u[i]);
            accel[i] = plant.step_raw(&accel[i], u_a[i] + gust);
        }
        let finite = x.iter().chain(accel.iter().map(|a| &a[0])).all(|v| v.is_finite());
        if !finite || x[2].abs() >= limit || x[6].abs() >= limit {
            status = TraceStatus::Diverged { step: k + 1 };
            break;
        }
    }

    let mut diagnostics = AdaptDiagnostics::default();
    for e in &engines {
        let d = e.diagnostics();
        diagnostics.predictive_updates += d.predictive_updates;
        diagnostics.delayed_updates += d.delayed_updates;
        diagnostics.skipped_updates += d.skipped_updates;
        diagnostics.clamped_updates += d.clamped_updates;
    }
    Ok(SimTrace {
        sample_time: spec.sample_time,
        axes: 2,
        aux_names: AUX_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
        status,
        diagnostics,
        networks: engines.iter().map(|e| e.net().clone()).collect(),
    })
}
