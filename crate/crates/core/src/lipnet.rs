//! Lipschitz networks built from GroupSort activations and semi-orthogonal
//! weight matrices, plus an unconstrained tanh network for comparison.
//!
//! The Lipschitz network computes `T(ξ) = L · W_M σ(W_{M-1} σ(… σ(W_1 ξ)))`
//! with every `W_l` semi-orthogonal and `σ` a GroupSort. Both pieces preserve
//! gradient norms, so the core is 1-Lipschitz and `T` is exactly `L`-Lipschitz.
//! Biases are omitted so that `T(0) = 0`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const DEFAULT_ORTHO_TOL: f64 = 1e-7;
pub const DEFAULT_ORTHO_MAX_ITERS: usize = 50;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("layer width {width} is not divisible by group size {group}")]
    GroupSize { width: usize, group: usize },
    #[error("network expects input of dimension {expected}, got {got}")]
    InputDimension { expected: usize, got: usize },
    #[error("update has {got} entries, network has {expected} parameters")]
    UpdateLength { expected: usize, got: usize },
    #[error("non-projectable weight matrix (smallest singular value {0:e})")]
    NonProjectable(f64),
    #[error("non-finite parameter update")]
    NonFiniteUpdate,
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("malformed parameter snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSize {
    Full,
    Size(usize),
}

impl GroupSize {
    fn resolve(self, len: usize) -> Result<usize, NetError> {
        match self {
            GroupSize::Full => Ok(len.max(1)),
            GroupSize::Size(0) => Err(NetError::GroupSize { width: len, group: 0 }),
            GroupSize::Size(g) if !len.is_multiple_of(g) => Err(NetError::GroupSize { width: len, group: g }),
            GroupSize::Size(g) => Ok(g),
        }
    }
}

/// Sorts each contiguous group ascending. Returns the sorted values and, for
/// each output slot, the input index it came from. Ties keep their original
/// order.
pub fn group_sort_with_perm(v: &[f64], group: GroupSize) -> Result<(Vec<f64>, Vec<usize>), NetError> {
    let g = group.resolve(v.len())?;
    let mut perm: Vec<usize> = (0..v.len()).collect();
    for chunk in perm.chunks_mut(g) {
        chunk.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    }
    let out = perm.iter().map(|&i| v[i]).collect();
    Ok((out, perm))
}

pub fn group_sort(v: &[f64], group: GroupSize) -> Result<Vec<f64>, NetError> {
    group_sort_with_perm(v, group).map(|(out, _)| out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthoConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OrthoConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_ORTHO_TOL, max_iters: DEFAULT_ORTHO_MAX_ITERS }
    }
}

/// Max-entry deviation of the thin Gram matrix from the identity.
pub fn orthonormality_defect(w: &DMatrix<f64>) -> f64 {
    let gram = if w.nrows() >= w.ncols() { w.transpose() * w } else { w * w.transpose() };
    let n = gram.nrows();
    (gram - DMatrix::<f64>::identity(n, n)).amax()
}

fn spectral_norm_estimate(w: &DMatrix<f64>) -> f64 {
    let gram = w.transpose() * w;
    let mut v = DVector::from_element(gram.nrows(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..20 {
        let next = &gram * &v;
        let n = next.norm();
        if n == 0.0 {
            return 0.0;
        }
        lambda = n / v.norm();
        v = next / n;
    }
    lambda.sqrt()
}

fn polar_factor(w: &DMatrix<f64>) -> Result<DMatrix<f64>, NetError> {
    let svd = w.clone().svd(true, true);
    let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin >= RANK_TOL) {
        return Err(NetError::NonProjectable(smin));
    }
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    Ok(u * vt)
}

/// Nearest semi-orthogonal matrix by Björck iteration, falling back to the
/// exact polar factor when the iteration does not reach `tol` in time.
pub fn orthonormalize(w: &DMatrix<f64>, cfg: &OrthoConfig) -> Result<DMatrix<f64>, NetError> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonProjectable(f64::NAN));
    }
    if orthonormality_defect(w) < cfg.tol {
        return Ok(w.clone());
    }
    let tall = w.nrows() >= w.ncols();
    let mut q = if tall { w.clone() } else { w.transpose() };
    // Björck converges for singular values in (0, √3).
    let s = spectral_norm_estimate(&q);
    if s > 1.5 {
        q /= 1.05 * s;
    }
    let n = q.ncols();
    let eye = DMatrix::<f64>::identity(n, n);
    for _ in 0..cfg.max_iters {
        let gram = q.transpose() * &q;
        if (&gram - &eye).amax() < cfg.tol {
            return Ok(if tall { q } else { q.transpose() });
        }
        q = &q * (&eye * 1.5 - gram * 0.5);
        if q.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    polar_factor(w)
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // row-major fill keeps the draw order independent of nalgebra's storage
    let vals: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &vals)
}

fn layer_shapes(input_dim: usize, width: usize, depth: usize) -> Result<Vec<(usize, usize)>, NetError> {
    if input_dim == 0 || depth == 0 || (depth > 1 && width == 0) {
        return Err(NetError::Architecture(format!(
            "input_dim {input_dim}, width {width}, depth {depth}"
        )));
    }
    Ok((0..depth)
        .map(|l| {
            let cols = if l == 0 { input_dim } else { width };
            let rows = if l + 1 == depth { 1 } else { width };
            (rows, cols)
        })
        .collect())
}

/// Activations and parameter gradient of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub output: f64,
    /// Flattened `∂output/∂θ`, layer by layer, row-major.
    pub gradient: Vec<f64>,
}

fn flatten_outer(delta: &DVector<f64>, input: &DVector<f64>, out: &mut Vec<f64>) {
    for i in 0..delta.len() {
        for j in 0..input.len() {
            out.push(delta[i] * input[j]);
        }
    }
}

fn check_input(layers: &[DMatrix<f64>], xi: &[f64]) -> Result<(), NetError> {
    let expected = layers[0].ncols();
    if xi.len() != expected {
        return Err(NetError::InputDimension { expected, got: xi.len() });
    }
    Ok(())
}

fn params_flat(layers: &[DMatrix<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(|w| w.len()).sum());
    for w in layers {
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                out.push(w[(i, j)]);
            }
        }
    }
    out
}

fn add_flat(layers: &mut [DMatrix<f64>], delta: &[f64]) -> Result<(), NetError> {
    let expected: usize = layers.iter().map(|w| w.len()).sum();
    if delta.len() != expected {
        return Err(NetError::UpdateLength { expected, got: delta.len() });
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFiniteUpdate);
    }
    let mut it = delta.iter();
    for w in layers.iter_mut() {
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                w[(i, j)] += it.next().expect("length checked");
            }
        }
    }
    Ok(())
}

/// GroupSort network with semi-orthogonal layers and output scale `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipNet {
    layers: Vec<DMatrix<f64>>,
    group: GroupSize,
    scale: f64,
    ortho: OrthoConfig,
}

impl LipNet {
    /// Standard-normal initialization followed by projection.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        width: usize,
        depth: usize,
        group: GroupSize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let layers = layer_shapes(input_dim, width, depth)?
            .into_iter()
            .map(|(r, c)| standard_normal_matrix(r, c, rng))
            .collect();
        Self::from_layers(layers, group, scale)
    }

    /// Projects the given matrices and validates the architecture.
    pub fn from_layers(layers: Vec<DMatrix<f64>>, group: GroupSize, scale: f64) -> Result<Self, NetError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(NetError::Architecture(format!("Lipschitz scale must be positive, got {scale}")));
        }
        validate_chain(&layers)?;
        for w in &layers[..layers.len() - 1] {
            group.resolve(w.nrows())?;
        }
        let ortho = OrthoConfig::default();
        let layers = layers.iter().map(|w| orthonormalize(w, &ortho)).collect::<Result<_, _>>()?;
        Ok(Self { layers, group, scale, ortho })
    }

    pub fn with_ortho(mut self, ortho: OrthoConfig) -> Self {
        self.ortho = ortho;
        self
    }

    pub fn lipschitz(&self) -> f64 {
        self.scale
    }
    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }
    pub fn group(&self) -> GroupSize {
        self.group
    }
    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum()
    }
    pub fn params(&self) -> Vec<f64> {
        params_flat(&self.layers)
    }

    pub fn forward(&self, xi: &[f64]) -> Result<f64, NetError> {
        check_input(&self.layers, xi)?;
        let mut h = DVector::from_column_slice(xi);
        let last = self.layers.len() - 1;
        for (l, w) in self.layers.iter().enumerate() {
            let z = w * &h;
            h = if l == last {
                z
            } else {
                DVector::from_vec(group_sort(z.as_slice(), self.group)?)
            };
        }
        Ok(self.scale * h[0])
    }

    /// Output and its gradient with respect to every weight, by reverse
    /// accumulation through the recorded sort permutations.
    pub fn evaluate(&self, xi: &[f64]) -> Result<Evaluation, NetError> {
        check_input(&self.layers, xi)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut perms = Vec::with_capacity(last);
        let mut h = DVector::from_column_slice(xi);
        for (l, w) in self.layers.iter().enumerate() {
            let z = w * &h;
            inputs.push(h);
            h = if l == last {
                z
            } else {
                let (sorted, perm) = group_sort_with_perm(z.as_slice(), self.group)?;
                perms.push(perm);
                DVector::from_vec(sorted)
            };
        }
        let output = self.scale * h[0];

        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut delta = DVector::from_element(1, self.scale);
        for l in (0..self.layers.len()).rev() {
            let mut g = Vec::with_capacity(self.layers[l].len());
            flatten_outer(&delta, &inputs[l], &mut g);
            grads[l] = g;
            if l == 0 {
                break;
            }
            let upstream = self.layers[l].transpose() * &delta;
            let perm = &perms[l - 1];
            let mut back = DVector::zeros(upstream.len());
            for (slot, &src) in perm.iter().enumerate() {
                back[src] = upstream[slot];
            }
            delta = back;
        }
        Ok(Evaluation { output, gradient: grads.concat() })
    }

    /// Adds `delta` to the weights and re-projects every layer. The output
    /// scale is untouched.
    pub fn apply_update(&mut self, delta: &[f64]) -> Result<(), NetError> {
        let mut raw = self.layers.clone();
        add_flat(&mut raw, delta)?;
        let projected = raw.iter().map(|w| orthonormalize(w, &self.ortho)).collect::<Result<Vec<_>, _>>()?;
        self.layers = projected;
        Ok(())
    }
}

/// Fully connected tanh network without weight constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineNet {
    layers: Vec<DMatrix<f64>>,
}

impl BaselineNet {
    pub fn random<R: Rng + ?Sized>(input_dim: usize, width: usize, depth: usize, rng: &mut R) -> Result<Self, NetError> {
        let layers = layer_shapes(input_dim, width, depth)?
            .into_iter()
            .map(|(r, c)| standard_normal_matrix(r, c, rng))
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DMatrix<f64>>) -> Result<Self, NetError> {
        validate_chain(&layers)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }
    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum()
    }
    pub fn params(&self) -> Vec<f64> {
        params_flat(&self.layers)
    }

    pub fn forward(&self, xi: &[f64]) -> Result<f64, NetError> {
        check_input(&self.layers, xi)?;
        let mut h = DVector::from_column_slice(xi);
        let last = self.layers.len() - 1;
        for (l, w) in self.layers.iter().enumerate() {
            let z = w * &h;
            h = if l == last { z } else { z.map(f64::tanh) };
        }
        Ok(h[0])
    }

    pub fn evaluate(&self, xi: &[f64]) -> Result<Evaluation, NetError> {
        check_input(&self.layers, xi)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = DVector::from_column_slice(xi);
        for (l, w) in self.layers.iter().enumerate() {
            let z = w * &h;
            inputs.push(h);
            h = if l == last { z } else { z.map(f64::tanh) };
        }
        let output = h[0];
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut delta = DVector::from_element(1, 1.0);
        for l in (0..self.layers.len()).rev() {
            let mut g = Vec::with_capacity(self.layers[l].len());
            flatten_outer(&delta, &inputs[l], &mut g);
            grads[l] = g;
            if l == 0 {
                break;
            }
            let upstream = self.layers[l].transpose() * &delta;
            // inputs[l] holds tanh(z_{l-1})
            delta = upstream.zip_map(&inputs[l], |d, a| d * (1.0 - a * a));
        }
        Ok(Evaluation { output, gradient: grads.concat() })
    }

    pub fn apply_update(&mut self, delta: &[f64]) -> Result<(), NetError> {
        add_flat(&mut self.layers, delta)
    }
}

fn validate_chain(layers: &[DMatrix<f64>]) -> Result<(), NetError> {
    let Some(last) = layers.last() else {
        return Err(NetError::Architecture("no layers".into()));
    };
    if last.nrows() != 1 {
        return Err(NetError::Architecture(format!("output layer has {} rows, expected 1", last.nrows())));
    }
    for pair in layers.windows(2) {
        if pair[1].ncols() != pair[0].nrows() {
            return Err(NetError::Architecture(format!(
                "layer of shape {}x{} cannot follow {}x{}",
                pair[1].nrows(),
                pair[1].ncols(),
                pair[0].nrows(),
                pair[0].ncols()
            )));
        }
    }
    Ok(())
}

/// The adaptive element: either network kind behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum AdaptiveNet {
    Lipschitz(LipNet),
    Baseline(BaselineNet),
}

impl AdaptiveNet {
    pub fn forward(&self, xi: &[f64]) -> Result<f64, NetError> {
        match self {
            AdaptiveNet::Lipschitz(n) => n.forward(xi),
            AdaptiveNet::Baseline(n) => n.forward(xi),
        }
    }
    pub fn evaluate(&self, xi: &[f64]) -> Result<Evaluation, NetError> {
        match self {
            AdaptiveNet::Lipschitz(n) => n.evaluate(xi),
            AdaptiveNet::Baseline(n) => n.evaluate(xi),
        }
    }
    pub fn apply_update(&mut self, delta: &[f64]) -> Result<(), NetError> {
        match self {
            AdaptiveNet::Lipschitz(n) => n.apply_update(delta),
            AdaptiveNet::Baseline(n) => n.apply_update(delta),
        }
    }
    pub fn input_dim(&self) -> usize {
        match self {
            AdaptiveNet::Lipschitz(n) => n.input_dim(),
            AdaptiveNet::Baseline(n) => n.input_dim(),
        }
    }
    pub fn params(&self) -> Vec<f64> {
        match self {
            AdaptiveNet::Lipschitz(n) => n.params(),
            AdaptiveNet::Baseline(n) => n.params(),
        }
    }
    /// Declared Lipschitz constant; `None` for the unconstrained network.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            AdaptiveNet::Lipschitz(n) => Some(n.lipschitz()),
            AdaptiveNet::Baseline(_) => None,
        }
    }
    pub fn is_lipschitz(&self) -> bool {
        matches!(self, AdaptiveNet::Lipschitz(_))
    }

    /// Text snapshot: a header line, then for each layer a `layer,rows,cols`
    /// line followed by its rows as comma-separated values in `%.16e`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let layers = match self {
            AdaptiveNet::Lipschitz(n) => {
                let group = match n.group {
                    GroupSize::Full => "full".to_string(),
                    GroupSize::Size(g) => g.to_string(),
                };
                writeln!(s, "lipnet,{:.16e},{}", n.scale, group).unwrap();
                &n.layers
            }
            AdaptiveNet::Baseline(n) => {
                writeln!(s, "baseline").unwrap();
                &n.layers
            }
        };
        for w in layers {
            writeln!(s, "layer,{},{}", w.nrows(), w.ncols()).unwrap();
            for i in 0..w.nrows() {
                let row: Vec<String> = (0..w.ncols()).map(|j| format!("{:.16e}", w[(i, j)])).collect();
                writeln!(s, "{}", row.join(",")).unwrap();
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, NetError> {
        let bad = |m: &str| NetError::Snapshot(m.to_string());
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| NetError::Snapshot(format!("bad number `{t}`")));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split(',').collect();
        let mut layers = Vec::new();
        while let Some(line) = lines.next() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 || f[0] != "layer" {
                return Err(bad(&format!("expected layer header, got `{line}`")));
            }
            let rows: usize = f[1].parse().map_err(|_| bad("bad row count"))?;
            let cols: usize = f[2].parse().map_err(|_| bad("bad column count"))?;
            let mut vals = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = lines.next().ok_or_else(|| bad("truncated layer"))?;
                for t in row.split(',') {
                    vals.push(num(t)?);
                }
            }
            if vals.len() != rows * cols {
                return Err(bad("layer entry count mismatch"));
            }
            layers.push(DMatrix::from_row_slice(rows, cols, &vals));
        }
        match header.as_slice() {
            ["lipnet", scale, group] => {
                let group = match *group {
                    "full" => GroupSize::Full,
                    g => GroupSize::Size(g.parse().map_err(|_| bad("bad group size"))?),
                };
                Ok(AdaptiveNet::Lipschitz(LipNet::from_layers(layers, group, num(scale)?)?))
            }
            ["baseline"] => Ok(AdaptiveNet::Baseline(BaselineNet::from_layers(layers)?)),
            _ => Err(bad("unknown header")),
        }
    }
}
