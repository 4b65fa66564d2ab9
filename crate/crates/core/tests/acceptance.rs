//! Acceptance criteria 1–7. Each test prints one `criterion N: PASS|FAIL`
//! line (visible with `--nocapture`) before asserting.

use std::fs;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lipmrac::adaptation::{run_closed_loop, Adjustment, RunOptions};
use lipmrac::control::lqr_design;
use lipmrac::fwdmodel::{BlrConfig, BlrModel, FeatureMap};
use lipmrac::lipnet::{GroupSize, LipNet};
use lipmrac::runner::{self, run_experiment, Execution, ExperimentConfig, Report};
use lipmrac::scenarios::{example_input, NetworkKind, CATALOG};
use lipmrac::stability::small_gain_check;
use lipmrac::sysmodel::{damped_reference, sinusoidal_drift_plant, Interconnection, IoMapOptions};

fn report(n: u32, pass: bool, detail: &str) -> bool {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn run(cfg: &ExperimentConfig) -> Report {
    run_experiment(cfg, false, Execution::Parallel { jobs: None }).expect("experiment runs")
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Per-seed RMS(y_a − y_m) of the numerical example under the default master
/// seed, recorded from a reference run of this implementation.
const PINNED_RMS: [f64; 10] = [
    0.027939440773095126,
    0.03304380334653528,
    0.017071011684840903,
    0.015286309556315898,
    0.024770253724047984,
    0.009683286894513695,
    0.02812089379034788,
    0.01651174911442217,
    0.012120346164514347,
    0.014159732927764115,
];
const PINNED_UNADAPTED_RMS: f64 = 1.6675426443816725;

#[test]
fn criterion_1_numerical_example() {
    let cfg = ExperimentConfig::new("sim-example");
    let (r, elapsed) = timed(|| run(&cfg));
    let s = &r.variants[0];
    assert_eq!((s.adaptation.learning_rate, s.adaptation.lipschitz, s.horizon, s.seeds), (33.0, 0.89, 1000, 10));
    assert_eq!(r.rows.len(), 10);

    let completed = r.rows.iter().all(|row| !row.diverged && r.results[row.seed_index as usize].outcome.trace.rows.len() == 1000);
    let halved = r.rows.iter().all(|row| row.rms_error < 0.5 * row.unadapted_rms);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let worst_pin = r
        .rows
        .iter()
        .map(|row| rel(row.rms_error, PINNED_RMS[row.seed_index as usize]).max(rel(row.unadapted_rms, PINNED_UNADAPTED_RMS)))
        .fold(0.0, f64::max);
    let fast = elapsed < Duration::from_secs(5);
    let worst_ratio = r.rows.iter().map(|row| row.rms_error / row.unadapted_rms).fold(0.0, f64::max);
    let pass = report(
        1,
        completed && halved && worst_pin < 1e-9 && fast,
        &format!(
            "complete={completed} worst adapted/unadapted={worst_ratio:.4} pinned rel err={worst_pin:.1e} time={:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_learning_rate_robustness() {
    let cfg = ExperimentConfig::new("lr-sweep");
    let (r, elapsed) = timed(|| run(&cfg));
    let rates: Vec<f64> = r.variants.iter().map(|v| v.adaptation.learning_rate).collect();
    for rate in [1.0, 3.3, 10.0, 33.0, 100.0, 330.0, 1000.0] {
        assert!(rates.contains(&rate), "rate {rate} missing from sweep");
    }
    let lip: Vec<_> = r.rows.iter().filter(|row| row.network == NetworkKind::LipNet).collect();
    let base: Vec<_> = r.rows.iter().filter(|row| row.network == NetworkKind::Baseline).collect();
    assert_eq!((lip.len(), base.len()), (70, 70));

    let lip_ok = lip.iter().filter(|row| !row.diverged && row.state_bound == Some(true)).count();
    let base_diverged_high = base.iter().filter(|row| row.learning_rate >= 100.0 && row.diverged).count();
    let base_worst_state = r
        .results
        .iter()
        .filter(|t| t.network == NetworkKind::Baseline && t.learning_rate >= 100.0)
        .flat_map(|t| t.outcome.trace.rows.iter())
        .map(|row| DVector::from_column_slice(&row.x_a).norm())
        .fold(0.0, f64::max);
    let fast = elapsed < Duration::from_secs(60);
    let pass = report(
        2,
        lip_ok == 70 && base_diverged_high >= 1 && fast,
        &format!(
            "lipnet ok {lip_ok}/70; baseline diverged at rate>=100: {base_diverged_high}/30 \
             (largest baseline |x_a| {base_worst_state:.3e}, blow-up bound {:.0e}); time={:.2}s",
            r.variants[0].blowup_bound,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_certificate_arithmetic() {
    let a = small_gain_check(0.89, 1.12);
    let b = small_gain_check(0.8, 0.68);
    let mut ok = a.certified() && b.certified();
    ok &= (a.lipschitz * a.gamma - 0.9968).abs() < 1e-15 && (b.lipschitz * b.gamma - 0.544).abs() < 1e-15;
    ok &= a.slack == 1.0 / 1.12 - 0.89 && b.slack == 1.0 / 0.68 - 0.8;
    ok &= !small_gain_check(1.0, 1.0).certified() && !small_gain_check(0.95, 1.12).certified();

    // Over a 100 x 100 grid: certification iff L·γ < 1; slack falls as L or
    // γ grows; shrinking either factor keeps a certified pair certified.
    let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.02).collect();
    let mut monotone = true;
    for (i, &gamma) in grid.iter().enumerate() {
        for (j, &l) in grid.iter().enumerate() {
            let c = small_gain_check(l, gamma);
            monotone &= c.certified() == (l * gamma < 1.0);
            if j > 0 {
                let prev = small_gain_check(grid[j - 1], gamma);
                monotone &= prev.slack > c.slack && (!c.certified() || prev.certified());
            }
            if i > 0 {
                let prev = small_gain_check(l, grid[i - 1]);
                monotone &= prev.slack > c.slack && (!c.certified() || prev.certified());
            }
        }
    }
    let pass = report(3, ok && monotone, &format!("0.89*1.12={:.4} 0.8*0.68={:.3} grid monotone={monotone}", a.lipschitz * a.gamma, b.lipschitz * b.gamma));
    assert!(pass);
}

#[test]
fn criterion_4_ideal_law() {
    let t = 0.01;
    let ic = Interconnection::new(sinusoidal_drift_plant(t), damped_reference(t)).unwrap();
    let inputs: Vec<f64> = (0..1000).map(|k| example_input(k, t)).collect();
    let z = DVector::zeros(2);
    let mut adj = Adjustment::Ideal(IoMapOptions::default());
    let trace = run_closed_loop(&ic, &mut adj, &inputs, 1000, &z, &z, &RunOptions { sample_time: t, ..Default::default() }).unwrap();
    assert_eq!(trace.rows.len(), 1000);
    let r = ic.relative_degree();
    let worst = trace.rows[r..].iter().map(|row| row.e[0].abs()).fold(0.0, f64::max);
    let pass = report(4, !trace.diverged() && worst < 1e-9, &format!("relative degree {r}, max |E_k| for k>={r}: {worst:.2e}"));
    assert!(pass);
}

/// Forward pass written out from the raw layers: GroupSort over the whole
/// hidden vector, ascending.
fn oracle_forward(layers: &[DMatrix<f64>], scale: f64, xi: &DVector<f64>) -> f64 {
    let mut h = xi.clone();
    for (l, w) in layers.iter().enumerate() {
        h = w * h;
        if l + 1 < layers.len() {
            let mut v: Vec<f64> = h.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            h = DVector::from_vec(v);
        }
    }
    scale * h[0]
}

fn gradient_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let net = LipNet::random(5, 20, 3, GroupSize::Full, 0.89, &mut rng).unwrap();
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let xi = DVector::from_vec(normal_vec(5, &mut rng));
        let eval = net.evaluate(xi.as_slice()).unwrap();
        assert!((eval.output - oracle_forward(net.layers(), 0.89, &xi)).abs() < 1e-12);
        let mut fd = Vec::with_capacity(eval.gradient.len());
        for (l, w) in net.layers().iter().enumerate() {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    let mut layers = net.layers().to_vec();
                    layers[l][(i, j)] = w[(i, j)] + step;
                    let up = oracle_forward(&layers, 0.89, &xi);
                    layers[l][(i, j)] = w[(i, j)] - step;
                    let down = oracle_forward(&layers, 0.89, &xi);
                    fd.push((up - down) / (2.0 * step));
                }
            }
        }
        let g = DVector::from_vec(eval.gradient);
        let fd = DVector::from_vec(fd);
        worst = worst.max((&g - &fd).norm() / g.norm().max(1e-12));
    }
    worst
}

fn singular_value_drift() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut net = LipNet::random(5, 20, 3, GroupSize::Full, 0.89, &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let scale = [1e-3, 1e-2, 0.1][k % 3];
        let delta: Vec<f64> = normal_vec(net.num_params(), &mut rng).into_iter().map(|v| v * scale).collect();
        net.apply_update(&delta).unwrap();
        for w in net.layers() {
            for s in w.clone().singular_values().iter() {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    worst
}

fn lipschitz_ratio() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let net = LipNet::random(5, 20, 3, GroupSize::Size(4), 0.89, &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..10_000 {
        let a = DVector::from_vec(normal_vec(5, &mut rng));
        // mix far-apart and nearby pairs
        let spread = if k % 2 == 0 { 1.0 } else { 1e-3 };
        let b = &a + DVector::from_vec(normal_vec(5, &mut rng)) * spread;
        let dt = (net.forward(a.as_slice()).unwrap() - net.forward(b.as_slice()).unwrap()).abs();
        worst = worst.max(dt / (0.89 * (&a - &b).norm()));
    }
    worst
}

fn blr_vs_ridge() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for (alpha, beta, state_dim) in [(1e-6, 1.0, 2), (0.5, 4.0, 3), (1e-3, 0.25, 1)] {
        let cfg = BlrConfig { prior_precision: alpha, noise_precision: beta, features: FeatureMap::StateInput, ..Default::default() };
        let mut blr = BlrModel::new(cfg, state_dim);
        let dim = state_dim + 2;
        let mut data: Vec<(Vec<f64>, f64)> = Vec::new();
        for n in 0..80 {
            let mut phi = normal_vec(dim, &mut rng);
            phi[dim - 1] = 1.0;
            let t: f64 = rng.sample(StandardNormal);
            blr.push(phi.clone(), t);
            data.push((phi, t));
            if n < 3 {
                continue;
            }
            let recent = &data[data.len().saturating_sub(cfg.window)..];
            let phi_m = DMatrix::from_fn(recent.len(), dim, |i, j| recent[i].0[j]);
            let t_v = DVector::from_iterator(recent.len(), recent.iter().map(|(_, t)| *t));
            // ridge: (α/β I + ΦᵀΦ) w = Φᵀt, solved by LU
            let ridge = DMatrix::identity(dim, dim) * (alpha / beta) + phi_m.transpose() * &phi_m;
            let w = ridge.clone().lu().solve(&(phi_m.transpose() * &t_v)).unwrap();
            let cov = (ridge * beta).try_inverse().unwrap();
            worst = worst.max((blr.mean() - &w).amax() / w.amax());
            worst = worst.max((blr.covariance() - &cov).amax() / cov.amax());
        }
    }
    worst
}

/// Structure-preserving doubling iteration for the discrete Riccati equation.
fn doubling_riccati(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let (mut ak, mut gk, mut hk) = (a.clone(), b * r.clone().try_inverse().unwrap() * b.transpose(), q.clone());
    for _ in 0..60 {
        let inv = (&eye + &gk * &hk).try_inverse().unwrap();
        let next_h = &hk + ak.transpose() * &hk * &inv * &ak;
        let next_g = &gk + &ak * &inv * &gk * ak.transpose();
        ak = &ak * &inv * &ak;
        let done = (&next_h - &hk).amax() <= 1e-15 * next_h.amax();
        hk = next_h;
        gk = next_g;
        if done {
            break;
        }
    }
    hk
}

/// Cost matrix of a fixed gain: solves `P = Q + KᵀRK + (A−BK)ᵀ P (A−BK)`
/// through its Kronecker form.
fn policy_cost(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let closed = a - b * k;
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - closed.transpose().kronecker(&closed.transpose());
    let rhs = q + k.transpose() * r * k;
    let vec = lhs.lu().solve(&DVector::from_column_slice(rhs.as_slice())).unwrap();
    DMatrix::from_column_slice(n, n, vec.as_slice())
}

fn riccati_conformance() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut residual, mut gain_err): (f64, f64) = (0.0, 0.0);
    let mut systems = 0;
    while systems < 20 {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(1..=n.min(3));
        let a = normal_matrix(n, n, &mut rng) * (1.2 / (n as f64).sqrt());
        let b = normal_matrix(n, m, &mut rng);
        // skip draws that are not controllable (hence possibly not stabilizable)
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut blk = b.clone();
        for i in 0..n {
            ctrb.columns_mut(i * m, m).copy_from(&blk);
            blk = &a * blk;
        }
        if ctrb.svd(false, false).singular_values.iter().fold(f64::INFINITY, |x, &y| x.min(y)) < 1e-3 {
            continue;
        }
        systems += 1;
        let l = normal_matrix(n, n, &mut rng);
        let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let r = DMatrix::identity(m, m) * rng.random_range(0.1..2.0);
        let design = lqr_design(&a, &b, &q, &r).unwrap();
        let p = doubling_riccati(&a, &b, &q, &r);
        let k = (&r + b.transpose() * &p * &b).try_inverse().unwrap() * b.transpose() * &p * &a;
        // the oracle gain must reproduce its own cost
        let cost = policy_cost(&a, &b, &q, &r, &k);
        assert!((&cost - &p).amax() / p.amax() < 1e-8, "doubling oracle inconsistent");
        assert!(design.spectral_radius < 1.0);
        residual = residual.max(design.riccati_residual());
        gain_err = gain_err.max((&design.k - &k).amax() / k.amax().max(1.0));
    }
    (residual, gain_err)
}

#[test]
fn criterion_5_numerical_conformance() {
    let grad = gradient_check();
    let sv = singular_value_drift();
    let lip = lipschitz_ratio();
    let blr = blr_vs_ridge();
    let (res, gain) = riccati_conformance();
    let parts = [
        ("a", grad < 1e-4, format!("gradient rel err {grad:.1e}")),
        ("b", sv < 1e-6, format!("singular value drift {sv:.1e}")),
        ("c", lip <= 1.0 + 1e-9, format!("max |dT|/(L|dxi|) {lip:.6}")),
        ("d", blr < 1e-8, format!("BLR vs ridge rel err {blr:.1e}")),
        ("e", res < 1e-8 && gain < 1e-6, format!("Riccati residual {res:.1e}, gain err {gain:.1e}")),
    ];
    let detail: Vec<String> = parts.iter().map(|(tag, ok, d)| format!("({tag}) {} {d}", if *ok { "ok" } else { "FAIL" })).collect();
    let pass = report(5, parts.iter().all(|p| p.1), &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_pendulum_hover() {
    let cfg = ExperimentConfig::new("pendulum-hover");
    let mut lqr_only = cfg.clone();
    lqr_only.add_override("adaptation.network", "none").unwrap();
    let ((adapted, baseline), elapsed) = timed(|| (run(&cfg), run(&lqr_only)));
    let spec = match &adapted.variants[0].setup {
        lipmrac::scenarios::Setup::Pendulum(p) => p.clone(),
        _ => unreachable!(),
    };
    assert_eq!(spec.initial_offset, (0.05, 0.05));

    let terminal: Vec<f64> = adapted.rows.iter().map(|r| r.terminal_pendulum.unwrap()).collect();
    let worst = terminal.iter().copied().fold(0.0, f64::max);
    let settled = adapted.rows.iter().all(|r| !r.diverged) && worst < 0.01;
    let baseline_worse = adapted
        .rows
        .iter()
        .zip(&baseline.rows)
        .all(|(a, b)| b.diverged || b.terminal_pendulum.unwrap() >= 3.0 * a.terminal_pendulum.unwrap());
    let fallen = baseline.rows.iter().filter(|r| r.diverged).count();
    let fast = elapsed < Duration::from_secs(10);
    let pass = report(
        6,
        settled && baseline_worse && fast,
        &format!(
            "worst terminal max(|r|,|s|) {worst:.2e} m over {} seeds; LQR alone fell in {fallen}/{}; time={:.2}s",
            terminal.len(),
            baseline.rows.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn artifact_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_7_determinism() {
    let mut identical = true;
    let mut compared = 0;
    for (name, _) in CATALOG {
        let mut cfg = ExperimentConfig::new(name);
        cfg.add_override("run.horizon", "150").unwrap();
        cfg.seeds = Some(vec![0, 1, 2]);
        let mut outputs = Vec::new();
        for exec in [Execution::Parallel { jobs: None }, Execution::Sequential] {
            let dir = tempfile::tempdir().unwrap();
            cfg.out = Some(dir.path().to_path_buf());
            runner::run_experiment(&cfg, false, exec).unwrap();
            outputs.push(artifact_bytes(dir.path()));
        }
        assert!(outputs[0].iter().any(|(f, _)| f.starts_with("trace_")) && outputs[0].iter().any(|(f, _)| f == "metrics.csv"));
        compared += outputs[0].len();
        identical &= outputs[0] == outputs[1];
    }
    let pass = report(7, identical, &format!("{compared} trace/metrics/param files byte-identical across two runs of every scenario"));
    assert!(pass);
}
