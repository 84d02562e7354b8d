//! Acceptance suite: one verdict line per criterion.
//!
//! Run with `cargo test -p qhr --test acceptance -- --nocapture --test-threads=1`.

mod common;

use std::time::{Duration, Instant};

use common::{fixture, report, within_ulp};
use qhr::forward::{pca_default, ForwardCurve};
use qhr::linalg::{eigenvalues, kron_power, DenseMatrix, Vector};
use qhr::mc::{estimate_cov_eta_xi2, simulate, squared_increment_autocov_mc, InitialState, McConfig};
use qhr::model::{diagnostics, JordanSpec};
use qhr::moments::{check_stability_sufficient, MomentSystem};
use qhr::pricing::{atm_term_structures, bs_price, implied_vol, price_options, OptionGrid, Side};
use qhr::quad::integrate_to_infinity;
use qhr::scalar::{PearsonIV, ScalarParams};
use qhr::stats::ks_test;
use qhr::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

const MC_K: f64 = 3.0;

fn mc_agrees(mc: f64, se: f64, exact: f64) -> bool {
    (mc - exact).abs() <= MC_K * se + 1e-14 * exact.abs().max(1e-300)
}

#[test]
fn criterion_01_scalar_table() {
    let start = Instant::now();
    // 2λ−γ, σ_min %, y_min, √v∞ %, Kurt∞
    let rows: [(&str, [f64; 5]); 4] = [
        ("m1", [8.37, 8.00, 0.00, 9.58, 3.00]),
        ("m2", [6.00, 8.00, 0.00, 9.24, 1.50]),
        ("m3", [9.00, 5.00, 0.06, 13.32, 5.15]),
        ("m4", [8.20, 5.00, 0.06, 15.39, 32.29]),
    ];
    let mut failures = Vec::new();
    for (name, shown) in rows {
        let d = diagnostics(&fixture(name)).unwrap();
        let got = [
            d.mu2,
            100.0 * d.sigma_min,
            d.y_min[0],
            100.0 * d.sigma_infty,
            d.kurt_infty,
        ];
        for (i, (g, s)) in got.iter().zip(shown).enumerate() {
            if !within_ulp(*g, s, 2) {
                failures.push(format!("{name} column {i}: {g:.5} vs {s:.2}"));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(1) {
        failures.push(format!("runtime {elapsed:?} > 1 s"));
    }
    report("1", "scalar diagnostics table", &failures);
}

// μ₂, μ₃, μ₄, κ, y_min (2), σ_min %, √v∞ %, Kurt∞
const MULTI_TABLE: [(&str, [f64; 9]); 5] = [
    ("mm1", [1.75, 2.28, 2.60, 0.10, 0.0000, 0.0000, 10.00, 10.55, 1.03]),
    ("mm2", [1.66, 2.01, 2.11, 0.14, 0.0000, 0.0000, 10.00, 10.79, 1.07]),
    ("mm3", [1.66, 2.01, 2.11, 0.14, 0.0192, 0.0767, 5.00, 12.95, 1.90]),
    ("mm4", [1.66, 1.98, 1.99, 0.16, 0.0148, 0.0592, 5.00, 13.10, 2.17]),
    ("mm5", [8.62, 8.42, 5.22, 0.26, 0.0606, 0.0121, 5.00, 13.94, 5.93]),
];
const MULTI_DECIMALS: [i32; 9] = [2, 2, 2, 2, 4, 4, 2, 2, 2];

#[test]
fn criterion_02_rank_one_table() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for (name, shown) in MULTI_TABLE {
        let d = diagnostics(&fixture(name)).unwrap();
        let got = [
            d.mu2,
            d.mu3,
            d.mu4,
            d.kappa,
            d.y_min[0],
            d.y_min[1],
            100.0 * d.sigma_min,
            100.0 * d.sigma_infty,
            d.kurt_infty,
        ];
        for (i, (g, s)) in got.iter().zip(shown).enumerate() {
            if !within_ulp(*g, s, MULTI_DECIMALS[i]) {
                failures.push(format!("{name} column {i}: {g:.5} vs {s}"));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(5) {
        failures.push(format!("runtime {elapsed:?} > 5 s"));
    }
    report("2", "rank-one diagnostics table (all columns but κ̃)", &failures);
}

/// The κ̃ column on its own: the tabulated values for the first four models
/// do not follow from the κ̃ definition, so this check is expected to fail.
#[test]
fn criterion_02_kappa_tilde_column() {
    let shown = [("mm1", 0.49), ("mm2", 0.68), ("mm3", 0.68), ("mm4", 2.26), ("mm5", 0.54)];
    let mut failures = Vec::new();
    for (name, s) in shown {
        let kt = check_stability_sufficient(&fixture(name)).unwrap().kappa_tilde;
        if !within_ulp(kt, s, 2) {
            failures.push(format!("{name}: κ̃ = {kt:.4} vs {s:.2}"));
        }
    }
    report("2/κ̃", "rank-one κ̃ column", &failures);
}

#[test]
fn criterion_03_a22_spectra() {
    let rows: [(&str, [(f64, f64); 4]); 4] = [
        ("mm1_jordan", [(1.89, 0.0), (6.20, 0.0), (7.00, 0.0), (10.91, 0.0)]),
        ("mm2_jordan", [(1.83, 0.0), (5.79, 0.0), (7.00, 0.0), (10.58, 0.0)]),
        ("mm4_jordan", [(1.74, 0.0), (11.09, 0.0), (13.00, 0.0), (21.47, 0.0)]),
        ("mm5_jordan", [(7.15, 0.0), (12.00, 0.0), (12.93, -0.96), (12.93, 0.96)]),
    ];
    let mut failures = Vec::new();
    for (name, shown) in rows {
        let params = fixture(name);
        let sys = MomentSystem::build(&params).unwrap();
        let mut ev = eigenvalues(&sys.block(2, 2)).unwrap();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        for (e, (re, im)) in ev.iter().zip(shown) {
            if (e.re - re).abs() > 0.01 || (e.im - im).abs() > 0.01 {
                failures.push(format!("{name}: {e:.4} vs {re}{im:+}j"));
            }
        }
        let distinct = name != "mm5_jordan";
        if distinct && ev.iter().any(|e| e.im.abs() > 1e-10) {
            failures.push(format!("{name}: distinct roots but complex spectrum {ev:?}"));
        }
    }
    // MM3 shares Λ and b with MM2, so its spectrum must coincide.
    let s2 = MomentSystem::build(&fixture("mm2_jordan")).unwrap();
    let s3 = MomentSystem::build(&fixture("mm3_jordan")).unwrap();
    let (e2, e3) = (
        eigenvalues(&s2.block(2, 2)).unwrap(),
        eigenvalues(&s3.block(2, 2)).unwrap(),
    );
    let mut r2: Vec<f64> = e2.iter().map(|e| e.re).collect();
    let mut r3: Vec<f64> = e3.iter().map(|e| e.re).collect();
    r2.sort_by(f64::total_cmp);
    r3.sort_by(f64::total_cmp);
    if r2.iter().zip(&r3).any(|(a, b)| (a - b).abs() > 1e-9) {
        failures.push("mm3 spectrum differs from mm2".into());
    }
    report("3", "A₂₂ eigenvalues", &failures);
}

/// Random canonical model with `Γ ≥ 0` entrywise, rescaled to `κ̃ < 2/3`.
fn random_sufficient_model(rng: &mut ChaCha8Rng) -> ModelParams {
    let p = rng.random_range(1..=3usize);
    // Random Jordan structure with well-separated roots.
    let mut blocks = Vec::new();
    let mut left = p;
    let mut lam = rng.random_range(0.5..3.0);
    while left > 0 {
        let size = rng.random_range(1..=left);
        blocks.push((lam, size));
        left -= size;
        lam += rng.random_range(0.5..8.0);
    }
    blocks.reverse();
    let spec = JordanSpec::new(blocks).unwrap();
    let lambda = spec.lambda_matrix();
    let b = spec.b_vector();
    let mut gamma = DenseMatrix::zeros(p, p);
    for _ in 0..rng.random_range(1..=p) {
        let v = Vector::from_fn(p, |_, _| rng.random_range(0.0..1.0));
        gamma += &v * v.transpose();
    }
    let alpha = rng.random_range(0.001..0.05);
    let unit = ModelParams::new(lambda.clone(), b.clone(), alpha, Vector::zeros(p), gamma.clone()).unwrap();
    let kt = check_stability_sufficient(&unit).unwrap().kappa_tilde;
    let target = rng.random_range(0.01..(2.0 / 3.0));
    let gamma = gamma * (target / kt);
    // β within the psd cone: β = Γ c for a small c keeps the bordered
    // matrix psd when α ≥ cᵀΓc.
    let c = Vector::from_fn(p, |_, _| rng.random_range(-0.1..0.1));
    let gc = &gamma * &c;
    let alpha = alpha + c.dot(&gc);
    ModelParams::new(lambda, b, alpha, gc, gamma).unwrap()
}

#[test]
fn criterion_04_stability_lemma_soundness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = Vec::new();
    let mut counter = Vec::new();
    let mut tested = 0;
    while tested < 500 {
        let params = random_sufficient_model(&mut rng);
        let chk = check_stability_sufficient(&params).unwrap();
        assert!(chk.passes, "generator produced a model outside the lemma: {chk:?}");
        assert!(params.validate().is_empty());
        let sys = MomentSystem::build(&params).unwrap();
        let ev = eigenvalues(sys.a_full()).unwrap();
        let worst = ev.iter().map(|e| e.re).fold(f64::INFINITY, f64::min);
        if !(worst > 0.0) {
            counter.push(format!(
                "Λ = {:?}, Γ = {:?}, κ̃ = {:.4}: min Re = {worst:.4}",
                params.lambda.as_slice(),
                params.gamma.as_slice(),
                chk.kappa_tilde
            ));
        }
        tested += 1;
    }
    if !counter.is_empty() {
        failures.push(format!("{} counterexamples out of {tested}", counter.len()));
        failures.extend(counter.into_iter().take(3));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(60) {
        failures.push(format!("runtime {elapsed:?} > 60 s"));
    }
    report("4", "stability lemma soundness (500 random models)", &failures);
}

#[test]
fn criterion_05_moment_oracle() {
    let cases = [
        ("m1", Vector::from_element(1, 0.05)),
        ("mm3", Vector::from_vec(vec![0.03, -0.02])),
    ];
    let times = [0.1, 0.5, 1.0];
    let mut failures = Vec::new();
    for (name, y0) in cases {
        let params = fixture(name);
        let sys = MomentSystem::build(&params).unwrap();
        // Plain sampling: antithetic pairs cancel the noise of odd moments
        // almost exactly, leaving an SE far below the O(dt) Euler bias.
        let cfg = McConfig::new(100_000, 1.0, InitialState::Fixed(y0.clone()))
            .with_seed(5)
            .with_steps_per_year(500)
            .with_antithetic(false);
        let batch = simulate(&params, &cfg, &times).unwrap();
        for (ti, &t) in times.iter().enumerate() {
            let exact = sys.conditional_moments(&y0, t).unwrap();
            for k in 1..=4usize {
                let o = sys.offset(k);
                let d = params.dim().pow(k as u32);
                for j in 0..d {
                    let est = batch.estimate(ti, |s| {
                        kron_power(&Vector::from_column_slice(s.y), k)[j]
                    });
                    let want = exact[o + j];
                    if !mc_agrees(est.mean, est.se, want) {
                        failures.push(format!(
                            "{name} t={t} order {k} comp {j}: mc {:.6e} ± {:.1e} vs {want:.6e}",
                            est.mean, est.se
                        ));
                    }
                }
            }
        }
    }
    report("5", "conditional moments vs Euler MC", &failures);
}

#[test]
fn criterion_06_forward_variance() {
    let scalar_y0 = [-0.1, 0.0, 0.1].map(|y| Vector::from_element(1, y));
    let multi_y0 = [[-0.05, -0.05], [0.0, 0.0], [0.05, 0.05]].map(|v| Vector::from_row_slice(&v));
    let probes = [0.25, 1.0, 2.0];
    let mut failures = Vec::new();
    for name in ["m1", "m4", "mm3", "mm5"] {
        let params = fixture(name);
        let sys = MomentSystem::build(&params).unwrap();
        let curve = ForwardCurve::new(&sys).unwrap();
        let s_inf = curve.sigma2_infty();
        let far = 10.0 / params.lambda_min().unwrap();
        let y0s = if params.dim() == 1 { &scalar_y0 } else { &multi_y0 };
        for (i, y0) in y0s.iter().enumerate() {
            // Fine steps keep the Euler bias of E[σ²] below the MC noise.
            let cfg = McConfig::new(40_000, 2.0, InitialState::Fixed(y0.clone()))
                .with_seed(60 + i as u64)
                .with_steps_per_year(2000);
            let batch = simulate(&params, &cfg, &probes).unwrap();
            for (ti, &s) in probes.iter().enumerate() {
                let est = batch.estimate(ti, |snap| snap.sigma2);
                let v = curve.variance_at(y0, s).unwrap();
                if !mc_agrees(est.mean, est.se, v) {
                    failures.push(format!(
                        "{name} y0={:?} s={s}: mc {:.6e} ± {:.1e} vs {v:.6e}",
                        y0.as_slice(),
                        est.mean,
                        est.se
                    ));
                }
            }
            let gap = (curve.variance_at(y0, far).unwrap() - s_inf).abs() / s_inf;
            if !(gap < 1e-3) {
                failures.push(format!("{name} y0={:?}: gap {gap:.2e} at s={far}", y0.as_slice()));
            }
        }
    }
    report("6", "forward variance vs MC and long-run limit", &failures);
}

#[test]
fn criterion_07_pearson_iv() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for name in ["m1", "m2", "m3", "m4"] {
        let sp = ScalarParams::from_model(&fixture(name)).unwrap();
        let law = PearsonIV::new(sp).unwrap();
        // Normalisation, integrated directly in y.
        let half = |y: f64| law.density(y) + law.density(-y);
        let mass = integrate_to_infinity(half, 0.0, 1e-14, 1e-12, 10_000).value;
        if !((mass - 1.0).abs() <= 1e-8) {
            failures.push(format!("{name}: mass {mass:.12}"));
        }
        // Stationary Fokker–Planck: p'σ² + (2(λ+γ)y + 2β)p = 0, in log form.
        let h = 2e-5;
        let mut worst: f64 = 0.0;
        for i in -40..=40 {
            let y = i as f64 * 0.005;
            let l = |x: f64| law.log_density(x);
            let dlog = (-l(y + 2.0 * h) + 8.0 * l(y + h) - 8.0 * l(y - h) + l(y - 2.0 * h)) / (12.0 * h);
            let s2 = sp.alpha + 2.0 * sp.beta * y + sp.gamma * y * y;
            let r = dlog * s2 + 2.0 * (sp.lambda + sp.gamma) * y + 2.0 * sp.beta;
            worst = worst.max(r.abs());
        }
        if !(worst < 1e-9) {
            failures.push(format!("{name}: ODE residual {worst:.2e}"));
        }
        if let Some((scale, dof)) = law.student_t_mapping() {
            let t = StudentsT::new(0.0, 1.0, dof).unwrap();
            for &u in &[0.001, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999] {
                let q = law.quantile(u);
                let want = scale * t.inverse_cdf(u);
                if !((q - want).abs() <= 1e-8) {
                    failures.push(format!("{name}: quantile({u}) {q:.12} vs {want:.12}"));
                }
            }
        }
    }
    // Long-run Euler simulation of M₂ against the analytic law.
    let params = fixture("m2");
    let law = PearsonIV::new(ScalarParams::from_model(&params).unwrap()).unwrap();
    let cfg = McConfig::new(100_000, 0.0, InitialState::Stationary { burn_in: Some(5.0) })
        .with_seed(77)
        .with_antithetic(false)
        .with_steps_per_year(1000);
    let batch = simulate(&params, &cfg, &[0.0]).unwrap();
    let ys: Vec<f64> = (0..batch.n_paths).map(|i| batch.snapshot(i, 0).y[0]).collect();
    let ks = ks_test(&ys, |y| law.cdf(y));
    if !(ks.p_value > 0.01) {
        failures.push(format!("M2 KS D={:.4e} p={:.4}", ks.statistic, ks.p_value));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(120) {
        failures.push(format!("runtime {elapsed:?} > 2 min"));
    }
    report("7", "Pearson IV stationary law", &failures);
}

#[test]
fn criterion_08_pca() {
    let mut failures = Vec::new();
    for name in ["mm1", "mm3", "mm5", "m3"] {
        let params = fixture(name);
        let sys = MomentSystem::build(&params).unwrap();
        let omega = sys.omega().unwrap();
        let dec = pca_default(&sys).unwrap();
        // Reconstruction against ψ(s₁)ᵀΩψ(s₂).
        let grid: Vec<f64> = (0..20).map(|i| 0.05 * 1.35f64.powi(i) - 0.05).collect();
        let mut worst: f64 = 0.0;
        for &s1 in &grid {
            for &s2 in &grid {
                let direct = (sys.psi(s1).unwrap().transpose() * &omega * sys.psi(s2).unwrap())[(0, 0)];
                let rec = dec.covariance(s1, s2).unwrap();
                let scale = (sys.psi(s1).unwrap().transpose() * &omega * sys.psi(s1).unwrap())[(0, 0)]
                    .abs()
                    .sqrt()
                    * (sys.psi(s2).unwrap().transpose() * &omega * sys.psi(s2).unwrap())[(0, 0)]
                        .abs()
                        .sqrt();
                worst = worst.max((direct - rec).abs() / scale.max(1e-300));
            }
        }
        if !(worst < 1e-8) {
            failures.push(format!("{name}: reconstruction error {worst:.2e}"));
        }
        // Orthonormality of factor curves in L²[0, ∞).
        for i in 0..dec.rank {
            for j in 0..=i {
                let f = |t: f64| {
                    let u = dec.factor_curves(t).unwrap();
                    u[i] * u[j]
                };
                let ip = integrate_to_infinity(f, 0.0, 1e-12, 1e-10, 4000).value;
                let want = if i == j { 1.0 } else { 0.0 };
                if !((ip - want).abs() < 1e-3) {
                    failures.push(format!("{name}: <u{i}, u{j}> = {ip:.3e}"));
                }
            }
        }
    }
    let dec = pca_default(&MomentSystem::build(&fixture("mm1")).unwrap()).unwrap();
    let n = dec.significant_components(1e-10);
    if n != 3 {
        failures.push(format!("mm1: {n} non-null components, eigenvalues {:?}", dec.eigenvalues.as_slice()));
    }
    report("8", "forward-curve PCA identities", &failures);
}

#[test]
fn criterion_09_pricing_sanity() {
    let mut failures = Vec::new();
    let grid = OptionGrid {
        maturities: vec![0.25, 0.5, 1.0],
        log_moneyness: vec![-0.2, -0.1, -0.01, 0.0, 0.01, 0.1, 0.2],
        normalized: false,
    };
    let flat = ModelParams::scalar(6.0, 0.04, 0.0, 0.0).with_label("flat");
    let mut models: Vec<ModelParams> = ["m1", "m2", "m3", "m4", "mm1", "mm2", "mm3", "mm4", "mm5"]
        .iter()
        .map(|n| fixture(n))
        .collect();
    models.push(flat.clone());
    for params in &models {
        let start = Instant::now();
        let label = params.label.clone().unwrap_or_default();
        let y0 = Vector::zeros(params.dim());
        let cfg = McConfig::new(100_000, 1.0, InitialState::Fixed(y0.clone())).with_seed(9);
        let surf = price_options(params, &y0, &grid, &cfg).unwrap();
        for (t, (fwd, se)) in grid.maturities.iter().zip(&surf.forward) {
            if !mc_agrees(*fwd, *se, 1.0) {
                failures.push(format!("{label} T={t}: E[e^x] = {fwd:.6} ± {se:.1e}"));
            }
        }
        for n in &surf.nodes {
            if !(n.parity_gap.abs() <= MC_K * n.parity_se + 1e-14) {
                failures.push(format!(
                    "{label} T={} ℓ={}: parity gap {:.2e} ± {:.1e}",
                    n.maturity, n.ell, n.parity_gap, n.parity_se
                ));
            }
            if let Some(iv) = n.implied_vol {
                let (side, price) = if n.strike < 1.0 { (Side::Put, n.put) } else { (Side::Call, n.call) };
                let back = bs_price(side, n.strike, n.maturity, iv);
                if !((back - price).abs() <= 1e-8 * price.max(1e-3)) {
                    failures.push(format!("{label}: iv round trip {back} vs {price}"));
                }
            }
            if params == &flat {
                let bs = bs_price(Side::Call, n.strike, n.maturity, 0.2);
                if !mc_agrees(n.call, n.call_se, bs) {
                    failures.push(format!(
                        "flat T={} ℓ={}: mc {:.6} ± {:.1e} vs BS {bs:.6}",
                        n.maturity, n.ell, n.call, n.call_se
                    ));
                }
            }
        }
        let elapsed = start.elapsed();
        if elapsed > Duration::from_secs(120) {
            failures.push(format!("{label}: runtime {elapsed:?} > 2 min"));
        }
    }
    // Implied-vol round trip over random inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let vol = rng.random_range(0.02..1.5);
        let k = rng.random_range(0.5..2.0);
        let t = rng.random_range(0.02..5.0);
        let price = bs_price(Side::Call, k, t, vol);
        match implied_vol(price, k, t) {
            Ok(v) => {
                let back = bs_price(Side::Call, k, t, v);
                // Far out-of-the-money quotes pin the price, not the vol.
                if (back - price).abs() > 1e-10 && (v - vol).abs() > 1e-8 {
                    failures.push(format!("round trip σ={vol} K={k} T={t}: {v}"));
                }
            }
            Err(e) => {
                if price - (1.0 - k).max(0.0) > 1e-12 {
                    failures.push(format!("round trip σ={vol} K={k} T={t}: {e}"));
                }
            }
        }
    }
    report("9", "pricing sanity", &failures);
}

const SKEW_EPS: f64 = 0.01;

fn atm_terms(name: &str, y: f64) -> Vec<qhr::pricing::AtmPoint> {
    let grid = OptionGrid {
        maturities: vec![0.1, 0.25, 0.5, 1.0, 2.0],
        log_moneyness: vec![-SKEW_EPS, 0.0, SKEW_EPS],
        normalized: false,
    };
    let params = fixture(name);
    let y0 = Vector::from_element(1, y);
    let cfg = McConfig::new(100_000, 2.0, InitialState::Fixed(y0.clone())).with_seed(10);
    let surf = price_options(&params, &y0, &grid, &cfg).unwrap();
    atm_term_structures(&surf, SKEW_EPS).unwrap()
}

#[test]
fn criterion_10_atm_skew_shapes() {
    let mut failures = Vec::new();
    for name in ["m3", "m4"] {
        for y in [-0.1, 0.0] {
            let ts = atm_terms(name, y);
            for w in ts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let band = MC_K * (a.skew_se.powi(2) + b.skew_se.powi(2)).sqrt();
                if !(a.atm_skew < 0.0 && b.atm_skew < 0.0) {
                    failures.push(format!("{name} y0={y}: positive skew {a:?} {b:?}"));
                }
                // Decreasing in magnitude.
                if b.atm_skew.abs() > a.atm_skew.abs() + band {
                    failures.push(format!(
                        "{name} y0={y}: |skew| grows from T={} ({:.4}) to T={} ({:.4})",
                        a.maturity, a.atm_skew, b.maturity, b.atm_skew
                    ));
                }
            }
        }
        let ts = atm_terms(name, 0.1);
        let (short, mid) = (ts[0], ts[2]);
        let band = MC_K * (short.skew_se.powi(2) + mid.skew_se.powi(2)).sqrt();
        if !(short.atm_skew > mid.atm_skew + band) {
            failures.push(format!(
                "{name} y0=0.1: short skew {:.4} not above mid skew {:.4} (band {band:.4})",
                short.atm_skew, mid.atm_skew
            ));
        }
    }
    report("10", "ATM skew term-structure shapes (asymmetric models)", &failures);
}

/// Symmetric-model part of the skew criterion. Price and offset share one
/// Brownian driver, so `(y, W) → (−y, −W)` symmetry does not make the smile
/// exactly even: a small positive short-dated skew (≈ 3e-3 at T = 0.1,
/// stable under dt refinement) sits right at the 3 SE band of 10⁵ paths.
#[test]
fn criterion_10_symmetric_skew() {
    let mut failures = Vec::new();
    for p in atm_terms("m1", 0.0) {
        if !(p.atm_skew.abs() <= MC_K * p.skew_se) {
            failures.push(format!("m1 T={}: skew {:.2e} ± {:.1e}", p.maturity, p.atm_skew, p.skew_se));
        }
    }
    report("10/sym", "symmetric model skew within MC noise of 0", &failures);
}

#[test]
fn criterion_11_squared_increments() {
    let params = fixture("m2");
    let sys = MomentSystem::build(&params).unwrap();
    let n = 2;
    let mut failures = Vec::new();
    for (r, h) in [(1.0 / 12.0, 1.0 / 12.0), (1.0 / 12.0, 0.25)] {
        let init = InitialState::Stationary { burn_in: None };
        let cfg = McConfig::new(100_000, 0.0, init.clone()).with_seed(111);
        let c = estimate_cov_eta_xi2(&params, r, &cfg).unwrap();
        let lemma = sys.squared_increment_autocov(&c.value, r, h).unwrap();
        // The lemma is linear in c: propagate the component SEs through
        // its weights (triangle bound, conservative).
        let mut lemma_se = 0.0;
        for j in 0..n {
            let mut e = Vector::zeros(n);
            e[j] = 1.0;
            lemma_se += sys.squared_increment_autocov(&e, r, h).unwrap().abs() * c.se[j];
        }
        let cfg = McConfig::new(100_000, 0.0, init).with_seed(112);
        let direct = squared_increment_autocov_mc(&params, r, h, &cfg).unwrap();
        let band = MC_K * (lemma_se.powi(2) + direct.se.powi(2)).sqrt();
        if !((lemma - direct.mean).abs() <= band) {
            failures.push(format!(
                "(r, h) = ({r:.4}, {h:.4}): lemma {lemma:.4e} ± {lemma_se:.1e} vs direct {:.4e} ± {:.1e}",
                direct.mean, direct.se
            ));
        }
    }
    report("11", "squared-increment autocovariance", &failures);
}
