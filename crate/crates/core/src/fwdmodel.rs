//! Sliding-window Bayesian linear regression used as a local forward model
//! `y_{k+r} ≈ w·φ(y_k, u_k)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_PRIOR_PRECISION: f64 = 1e-6;
pub const DEFAULT_NOISE_PRECISION: f64 = 1.0;
pub const DEFAULT_MIN_SAMPLES: usize = 3;

/// Regressors built from the current output, input and (optionally) state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// `[y, u, 1]`
    OutputInput,
    /// `[x…, u, 1]`
    StateInput,
}

impl FeatureMap {
    pub fn build(&self, y: f64, x: &[f64], u: f64) -> Vec<f64> {
        match self {
            FeatureMap::OutputInput => vec![y, u, 1.0],
            FeatureMap::StateInput => {
                let mut v = x.to_vec();
                v.extend([u, 1.0]);
                v
            }
        }
    }

    pub fn dim(&self, state_dim: usize) -> usize {
        match self {
            FeatureMap::OutputInput => 3,
            FeatureMap::StateInput => state_dim + 2,
        }
    }

    /// Position of the input feature.
    pub fn input_index(&self, state_dim: usize) -> usize {
        match self {
            FeatureMap::OutputInput => 1,
            FeatureMap::StateInput => state_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlrConfig {
    pub window: usize,
    pub prior_precision: f64,
    pub noise_precision: f64,
    pub min_samples: usize,
    pub features: FeatureMap,
}

impl Default for BlrConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            prior_precision: DEFAULT_PRIOR_PRECISION,
            noise_precision: DEFAULT_NOISE_PRECISION,
            min_samples: DEFAULT_MIN_SAMPLES,
            features: FeatureMap::OutputInput,
        }
    }
}

/// Output prediction and input sensitivity `H = ∂ŷ/∂u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub output: f64,
    pub gain: f64,
    pub low_confidence: bool,
}

/// What a forward model sees at prediction time.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub y: f64,
    pub x: &'a [f64],
    pub u: f64,
}

/// Supplies `ŷ_{k+r}` and `H_k` to the adaptation law.
pub trait ForwardModel: Send + std::fmt::Debug {
    /// Records that input `past.u` at output `past.y` led to `y_now` after
    /// `r` steps.
    fn observe(&mut self, past: Query<'_>, y_now: f64);
    fn predict(&self, q: Query<'_>) -> Prediction;
    fn box_clone(&self) -> Box<dyn ForwardModel>;
}

impl Clone for Box<dyn ForwardModel> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Debug, Clone)]
pub struct BlrModel {
    cfg: BlrConfig,
    dim: usize,
    input_index: usize,
    window: VecDeque<(Vec<f64>, f64)>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl BlrModel {
    pub fn new(cfg: BlrConfig, state_dim: usize) -> Self {
        let dim = cfg.features.dim(state_dim);
        let mut m = Self {
            cfg,
            dim,
            input_index: cfg.features.input_index(state_dim),
            window: VecDeque::with_capacity(cfg.window + 1),
            mean: DVector::zeros(dim),
            cov: DMatrix::zeros(dim, dim),
        };
        m.refit();
        m
    }

    pub fn config(&self) -> &BlrConfig {
        &self.cfg
    }
    pub fn len(&self) -> usize {
        self.window.len()
    }
    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Pushes one `(features, target)` pair and refits.
    pub fn push(&mut self, features: Vec<f64>, target: f64) {
        debug_assert_eq!(features.len(), self.dim);
        if !target.is_finite() || features.iter().any(|v| !v.is_finite()) {
            return;
        }
        self.window.push_back((features, target));
        while self.window.len() > self.cfg.window {
            self.window.pop_front();
        }
        self.refit();
    }

    /// Default-feature update from `(y_prev, u_prev) → y_now`.
    pub fn update(&mut self, y_prev: f64, u_prev: f64, y_now: f64) {
        let f = self.cfg.features.build(y_prev, &[], u_prev);
        self.push(f, y_now);
    }

    /// `S⁻¹ = αI + β ΦᵀΦ`, `m = β S Φᵀ t`.
    fn refit(&mut self) {
        let n = self.dim;
        let mut precision = DMatrix::<f64>::identity(n, n) * self.cfg.prior_precision;
        let mut rhs = DVector::<f64>::zeros(n);
        let beta = self.cfg.noise_precision;
        for (phi, t) in &self.window {
            for i in 0..n {
                rhs[i] += beta * phi[i] * t;
                for j in 0..n {
                    precision[(i, j)] += beta * phi[i] * phi[j];
                }
            }
        }
        match precision.clone().cholesky() {
            Some(ch) => {
                self.mean = ch.solve(&rhs);
                self.cov = ch.inverse();
            }
            None => {
                // unreachable for α > 0; keep the prior
                self.mean = DVector::zeros(n);
                self.cov = DMatrix::identity(n, n) / self.cfg.prior_precision;
            }
        }
    }

    pub fn predict_features(&self, features: &[f64]) -> Prediction {
        let output = features.iter().zip(self.mean.iter()).map(|(a, b)| a * b).sum();
        Prediction {
            output,
            gain: self.mean[self.input_index],
            low_confidence: self.window.len() < self.cfg.min_samples,
        }
    }

    pub fn predict(&self, y: f64, u: f64) -> Prediction {
        self.predict_features(&self.cfg.features.build(y, &[], u))
    }
}

impl ForwardModel for BlrModel {
    fn observe(&mut self, past: Query<'_>, y_now: f64) {
        let f = self.cfg.features.build(past.y, past.x, past.u);
        self.push(f, y_now);
    }
    fn predict(&self, q: Query<'_>) -> Prediction {
        self.predict_features(&self.cfg.features.build(q.y, q.x, q.u))
    }
    fn box_clone(&self) -> Box<dyn ForwardModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Ridge solution `(XᵀX + (α/β) I)⁻¹ Xᵀ t` by Gaussian elimination.
    fn ridge(rows: &[(Vec<f64>, f64)], lambda: f64) -> Vec<f64> {
        let n = rows[0].0.len();
        let mut m = vec![vec![0.0; n + 1]; n];
        for (i, mi) in m.iter_mut().enumerate() {
            mi[i] = lambda;
            for (x, t) in rows {
                for j in 0..n {
                    mi[j] += x[i] * x[j];
                }
                mi[n] += x[i] * t;
            }
        }
        for c in 0..n {
            let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, p);
            let pivot = m[c].clone();
            for (r, row) in m.iter_mut().enumerate() {
                if r != c {
                    let f = row[c] / pivot[c];
                    for (v, pv) in row.iter_mut().zip(&pivot).skip(c) {
                        *v -= f * pv;
                    }
                }
            }
        }
        (0..n).map(|i| m[i][n] / m[i][i]).collect()
    }

    #[test]
    fn single_sample_is_shrunk_by_prior() {
        let cfg = BlrConfig { prior_precision: 0.5, ..Default::default() };
        let mut m = BlrModel::new(cfg, 0);
        m.update(1.0, 2.0, 3.0);
        let expected = ridge(&[(vec![1.0, 2.0, 1.0], 3.0)], 0.5);
        for (a, b) in m.mean().iter().zip(&expected) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
        // a single point can't be fit exactly under a proper prior
        assert!(m.predict(1.0, 2.0).output < 3.0);
    }

    #[test]
    fn recovers_noiseless_linear_map() {
        let mut m = BlrModel::new(BlrConfig::default(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut y = 0.0;
        for _ in 0..50 {
            let u: f64 = rng.random_range(-1.0..1.0);
            let yn = 3.0 * y + 2.0 * u;
            m.update(y, u, yn);
            y = rng.random_range(-1.0..1.0);
        }
        let w = m.mean();
        assert!((w[0] - 3.0).abs() < 1e-3 && (w[1] - 2.0).abs() < 1e-3 && w[2].abs() < 1e-3);
        let p = m.predict(0.5, 0.1);
        assert!((p.gain - 2.0).abs() < 1e-3);
        assert!(!p.low_confidence);
    }

    #[test]
    fn window_is_bounded() {
        let cfg = BlrConfig { window: 10, ..Default::default() };
        let mut m = BlrModel::new(cfg, 0);
        for i in 0..11 {
            m.update(i as f64, 1.0, 0.0);
        }
        assert_eq!(m.len(), 10);
    }

    #[test]
    fn empty_model_predicts_prior() {
        let m = BlrModel::new(BlrConfig::default(), 0);
        let p = m.predict(1.0, 1.0);
        assert_eq!((p.output, p.gain, p.low_confidence), (0.0, 0.0, true));
    }

    #[test]
    fn posterior_matches_ridge_and_is_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = BlrConfig { prior_precision: 0.3, noise_precision: 2.0, window: 20, ..Default::default() };
        let mut m = BlrModel::new(cfg, 0);
        let mut rows = Vec::new();
        for _ in 0..35 {
            let (y, u, t) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            m.update(y, u, t);
            rows.push((vec![y, u, 1.0], t));
        }
        let expected = ridge(&rows[rows.len() - 20..], 0.3 / 2.0);
        for (a, b) in m.mean().iter().zip(&expected) {
            assert_relative_eq!(*a, *b, max_relative = 1e-8);
        }
        let c = m.covariance();
        assert!((c - c.transpose()).amax() < 1e-12);
        assert!(c.clone().cholesky().is_some());
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<(f64, f64, f64)> =
            (0..30).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut fwd = BlrModel::new(BlrConfig::default(), 0);
        let mut rev = BlrModel::new(BlrConfig::default(), 0);
        for r in &rows {
            fwd.update(r.0, r.1, r.2);
        }
        for r in rows.iter().rev() {
            rev.update(r.0, r.1, r.2);
        }
        let (a, b) = (fwd.predict(0.2, 0.3), rev.predict(0.2, 0.3));
        assert_relative_eq!(a.output, b.output, max_relative = 1e-10);
        assert_relative_eq!(a.gain, b.gain, max_relative = 1e-10);
    }

    #[test]
    fn state_features_use_state_and_input() {
        let mut m = BlrModel::new(BlrConfig { features: FeatureMap::StateInput, ..Default::default() }, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..40 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let u = rng.random_range(-1.0..1.0);
            let q = Query { y: x[0] + x[1], x: &x, u };
            ForwardModel::observe(&mut m, q, 0.5 * x[0] - x[1] + 0.25 * u);
        }
        let p = ForwardModel::predict(&m, Query { y: 0.0, x: &[1.0, 1.0], u: 0.0 });
        assert_relative_eq!(p.gain, 0.25, max_relative = 1e-4);
        assert_relative_eq!(p.output, -0.5, max_relative = 1e-4);
    }
}
