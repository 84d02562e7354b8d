//! Euler–Maruyama simulation of `(x, y)` with antithetic pairs.
//!
//! Every simulation unit (an antithetic pair, or a single path when
//! antithetics are off) draws from its own ChaCha stream keyed by
//! `(seed, unit index)`, so results do not depend on the number of worker
//! threads or on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{kron_power, DenseMatrix, Vector};
use crate::model::ModelParams;
use crate::moments::MomentSystem;
use crate::stats::{Estimate, RunningStats};

pub const DEFAULT_STEPS_PER_YEAR: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(Vector),
    /// Simulate from `y = 0` for `burn_in` years (default `10/λ_min`).
    Stationary { burn_in: Option<f64> },
    /// Explicit per-path starting offsets.
    Samples(Vec<Vector>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub steps_per_year: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub horizon: f64,
    pub init: InitialState,
}

impl McConfig {
    pub fn new(n_paths: usize, horizon: f64, init: InitialState) -> Self {
        McConfig {
            steps_per_year: DEFAULT_STEPS_PER_YEAR,
            n_paths,
            seed: 0,
            antithetic: true,
            horizon,
            init,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps_per_year(mut self, steps: usize) -> Self {
        self.steps_per_year = steps;
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps_per_year as f64
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.steps_per_year == 0 {
            return Err(Error::ConfigInvalid("steps_per_year must be >= 1".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::ConfigInvalid("n_paths must be >= 1".into()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::ConfigInvalid(
                "n_paths must be even with antithetic variates".into(),
            ));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::ConfigInvalid(format!("bad horizon {}", self.horizon)));
        }
        match &self.init {
            InitialState::Fixed(y) if y.len() != p => Err(Error::ConfigInvalid(format!(
                "y0 has length {}, model has p = {p}",
                y.len()
            ))),
            InitialState::Samples(v) if v.len() != self.n_paths => Err(Error::ConfigInvalid(
                format!("{} initial samples for {} paths", v.len(), self.n_paths),
            )),
            InitialState::Samples(v) if v.iter().any(|y| y.len() != p) => {
                Err(Error::ConfigInvalid("initial sample of wrong length".into()))
            }
            InitialState::Stationary { burn_in: Some(b) } if !(*b >= 0.0) => {
                Err(Error::ConfigInvalid(format!("bad burn-in {b}")))
            }
            _ => Ok(()),
        }
    }
}

/// Values recorded for one path at one snapshot time.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub x: f64,
    /// `ξ_t = ∫₀ᵗ σ dW`.
    pub xi: f64,
    pub sigma2: f64,
    pub y: &'a [f64],
}

/// Snapshots of all simulated paths.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub p: usize,
    pub n_paths: usize,
    pub antithetic: bool,
    /// Snapshot times actually used (requested times rounded to the step grid).
    pub times: Vec<f64>,
    /// Steps whose σ² came out negative and was floored at 0.
    pub floored_steps: u64,
    data: Vec<f64>,
}

impl PathBatch {
    fn stride(&self) -> usize {
        self.p + 3
    }

    pub fn snapshot(&self, path: usize, ti: usize) -> Snapshot<'_> {
        let s = self.stride();
        let o = (path * self.times.len() + ti) * s;
        let r = &self.data[o..o + s];
        Snapshot {
            x: r[0],
            xi: r[1],
            sigma2: r[2],
            y: &r[3..],
        }
    }

    /// Independent sampling units: antithetic pairs or single paths.
    pub fn n_units(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }

    /// Per-unit values of a path functional (pair-averaged under antithetics).
    pub fn unit_values<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize) -> f64,
    {
        if self.antithetic {
            (0..self.n_paths / 2)
                .map(|k| 0.5 * (f(2 * k) + f(2 * k + 1)))
                .collect()
        } else {
            (0..self.n_paths).map(f).collect()
        }
    }

    /// Mean and standard error of `f(snapshot at ti)`.
    pub fn estimate<F>(&self, ti: usize, f: F) -> Estimate
    where
        F: Fn(&Snapshot<'_>) -> f64,
    {
        let s: RunningStats = self
            .unit_values(|path| f(&self.snapshot(path, ti)))
            .into_iter()
            .collect();
        Estimate::from_stats(&s)
    }

    /// Index of the snapshot closest to `t`.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
    }
}

/// Sample mean vector and covariance matrix of the mean for per-unit values
/// (`units[i][j]` is component `j` of unit `i`).
pub fn mean_and_cov(units: &[Vec<f64>]) -> (Vector, DenseMatrix) {
    let n = units.len();
    let d = units.first().map_or(0, |u| u.len());
    let mut mean = Vector::zeros(d);
    for u in units {
        for j in 0..d {
            mean[j] += u[j];
        }
    }
    mean /= n as f64;
    let mut cov = DenseMatrix::zeros(d, d);
    for u in units {
        for i in 0..d {
            let di = u[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (u[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let denom = ((n.max(2) - 1) * n) as f64;
    (mean, cov / denom)
}

#[derive(Debug, Clone, Copy)]
struct Step {
    dt: f64,
    sqrt: f64,
}

impl Step {
    fn new(dt: f64) -> Self {
        Step { dt, sqrt: dt.sqrt() }
    }
}

/// Model pieces needed inside the step loop.
struct Stepper {
    p: usize,
    alpha: f64,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    lambda: Vec<f64>,
    b: Vec<f64>,
}

impl Stepper {
    fn new(params: &ModelParams) -> Self {
        let p = params.dim();
        Stepper {
            p,
            alpha: params.alpha,
            beta: params.beta.as_slice().to_vec(),
            gamma: params.gamma.as_slice().to_vec(),
            // row-major for the y-update
            lambda: params.lambda.transpose().as_slice().to_vec(),
            b: params.b.as_slice().to_vec(),
        }
    }

    fn variance(&self, y: &[f64]) -> f64 {
        let p = self.p;
        let mut v = self.alpha;
        for i in 0..p {
            v += 2.0 * self.beta[i] * y[i];
            let mut gy = 0.0;
            for j in 0..p {
                gy += self.gamma[i + j * p] * y[j];
            }
            v += y[i] * gy;
        }
        v
    }

    /// One Euler step of length `h` driven by the standard normal `z`;
    /// returns whether σ² had to be floored. `x` and `ξ` share the increment.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn step(&self, y: &mut [f64], tmp: &mut [f64], x: &mut f64, xi: &mut f64, h: Step, z: f64) -> bool {
        let p = self.p;
        let raw = self.variance(y);
        let floored = raw < 0.0;
        let var = raw.max(0.0);
        let sig = var.sqrt();
        let dw = h.sqrt * z;
        for i in 0..p {
            let mut ly = 0.0;
            for j in 0..p {
                ly += self.lambda[i * p + j] * y[j];
            }
            tmp[i] = y[i] - ly * h.dt + self.b[i] * sig * dw;
        }
        y.copy_from_slice(&tmp[..p]);
        *x += -0.5 * var * h.dt + sig * dw;
        *xi += sig * dw;
        floored
    }
}

fn rng_for_unit(seed: u64, unit: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit as u64);
    rng
}

/// Burn-in length in steps for a stationary start.
fn burn_in_steps(params: &ModelParams, cfg: &McConfig) -> Result<Option<usize>> {
    match cfg.init {
        InitialState::Stationary { burn_in } => {
            let sys = MomentSystem::build(params)?;
            sys.stationary_summary()?;
            let years = match burn_in {
                Some(b) => b,
                None => 10.0 / params.lambda_min()?,
            };
            Ok(Some((years * cfg.steps_per_year as f64).ceil() as usize))
        }
        _ => Ok(None),
    }
}

/// Starting offsets of the paths in unit `k`.
fn unit_start(
    stepper: &Stepper,
    cfg: &McConfig,
    burn: Option<usize>,
    k: usize,
    rng: &mut ChaCha8Rng,
    floored: &mut u64,
) -> [Vec<f64>; 2] {
    let p = stepper.p;
    let paths = if cfg.antithetic { [2 * k, 2 * k + 1] } else { [k, k] };
    match &cfg.init {
        InitialState::Fixed(y0) => [y0.as_slice().to_vec(), y0.as_slice().to_vec()],
        InitialState::Samples(v) => [
            v[paths[0]].as_slice().to_vec(),
            v[paths[1]].as_slice().to_vec(),
        ],
        InitialState::Stationary { .. } => {
            let mut ya = vec![0.0; p];
            let mut yb = vec![0.0; p];
            let mut tmp = vec![0.0; p];
            let (mut x, mut xi) = (0.0, 0.0);
            let h = Step::new(cfg.dt());
            for _ in 0..burn.unwrap_or(0) {
                let z: f64 = StandardNormal.sample(rng);
                *floored += stepper.step(&mut ya, &mut tmp, &mut x, &mut xi, h, z) as u64;
                if cfg.antithetic {
                    *floored += stepper.step(&mut yb, &mut tmp, &mut x, &mut xi, h, -z) as u64;
                }
            }
            [ya, yb]
        }
    }
}

/// Step boundaries: the uniform `dt` grid up to the last probe, with every
/// probe time inserted exactly. Returns the boundaries and, per probe, the
/// index of its boundary.
fn step_schedule(dt: f64, probe_times: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let end = probe_times.iter().copied().fold(0.0, f64::max);
    let mut grid: Vec<f64> = (0..)
        .map(|k| k as f64 * dt)
        .take_while(|&t| t < end - 1e-9 * dt)
        .collect();
    grid.push(end);
    for &t in probe_times {
        let pos = grid.partition_point(|&g| g < t - 1e-9 * dt);
        if (grid[pos] - t).abs() > 1e-9 * dt {
            grid.insert(pos, t);
        }
    }
    let slots = probe_times
        .iter()
        .map(|&t| grid.partition_point(|&g| g < t - 1e-9 * dt))
        .collect();
    (grid, slots)
}

/// Simulates all paths up to `cfg.horizon`, recording snapshots at
/// `probe_times` (rounded to the step grid).
pub fn simulate(params: &ModelParams, cfg: &McConfig, probe_times: &[f64]) -> Result<PathBatch> {
    params.ensure_valid()?;
    let p = params.dim();
    cfg.validate(p)?;
    for &t in probe_times {
        if !(t >= 0.0 && t <= cfg.horizon + 1e-12) {
            return Err(Error::ConfigInvalid(format!(
                "probe time {t} outside [0, {}]",
                cfg.horizon
            )));
        }
    }
    let (grid, slots) = step_schedule(cfg.dt(), probe_times);
    let times: Vec<f64> = slots.iter().map(|&i| grid[i]).collect();
    let n_steps = grid.len() - 1;
    let burn = burn_in_steps(params, cfg)?;
    let stepper = Stepper::new(params);
    let stride = p + 3;
    let per_path = times.len() * stride;
    let paths_per_unit = if cfg.antithetic { 2 } else { 1 };
    let mut data = vec![0.0; cfg.n_paths * per_path];

    // Snapshot order: sorted by step, remembering original slot.
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&i| slots[i]);
    let steps: Vec<Step> = grid.windows(2).map(|w| Step::new(w[1] - w[0])).collect();

    let floored: u64 = data
        .par_chunks_mut(per_path * paths_per_unit)
        .enumerate()
        .map(|(k, chunk)| {
            let mut rng = rng_for_unit(cfg.seed, k);
            let mut floored = 0u64;
            let [mut ya, mut yb] = unit_start(&stepper, cfg, burn, k, &mut rng, &mut floored);
            let mut tmp = vec![0.0; p];
            let (mut xa, mut xia, mut xb, mut xib) = (0.0, 0.0, 0.0, 0.0);
            let record = |chunk: &mut [f64], path: usize, slot: usize, x: f64, xi: f64, y: &[f64]| {
                let o = path * per_path + slot * stride;
                chunk[o] = x;
                chunk[o + 1] = xi;
                chunk[o + 2] = stepper.variance(y).max(0.0);
                chunk[o + 3..o + 3 + p].copy_from_slice(y);
            };
            let mut next = 0;
            for step in 0..=n_steps {
                while next < order.len() && slots[order[next]] == step {
                    record(chunk, 0, order[next], xa, xia, &ya);
                    if cfg.antithetic {
                        record(chunk, 1, order[next], xb, xib, &yb);
                    }
                    next += 1;
                }
                if step == n_steps {
                    break;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                let h = steps[step];
                floored += stepper.step(&mut ya, &mut tmp, &mut xa, &mut xia, h, z) as u64;
                if cfg.antithetic {
                    floored += stepper.step(&mut yb, &mut tmp, &mut xb, &mut xib, h, -z) as u64;
                }
            }
            floored
        })
        .sum();

    Ok(PathBatch {
        p,
        n_paths: cfg.n_paths,
        antithetic: cfg.antithetic,
        times,
        floored_steps: floored,
        data,
    })
}

/// Starting offsets drawn by burn-in from `y = 0`; identical to the starts
/// `simulate` uses for `InitialState::Stationary` with the same config.
pub fn stationary_init(params: &ModelParams, burn_in: Option<f64>, cfg: &McConfig) -> Result<Vec<Vector>> {
    let cfg = McConfig {
        init: InitialState::Stationary { burn_in },
        horizon: 0.0,
        ..cfg.clone()
    };
    let batch = simulate(params, &cfg, &[0.0])?;
    Ok((0..batch.n_paths)
        .map(|i| Vector::from_column_slice(batch.snapshot(i, 0).y))
        .collect())
}

/// Component-wise estimate with standard errors.
#[derive(Debug, Clone)]
pub struct VectorEstimate {
    pub value: Vector,
    pub se: Vector,
}

fn eta_of(y: &[f64]) -> Vector {
    let v = Vector::from_column_slice(y);
    let q = kron_power(&v, 2);
    let p = y.len();
    let mut e = Vector::zeros(p + p * p);
    e.rows_mut(0, p).copy_from(&v);
    e.rows_mut(p, p * p).copy_from(&q);
    e
}

/// Covariance estimate with per-unit influence values `(a−ā)(b−b̄)`.
fn cov_estimate(batch: &PathBatch, a: &dyn Fn(usize) -> f64, b: &dyn Fn(usize) -> f64) -> Estimate {
    let ma: f64 = (0..batch.n_paths).map(a).sum::<f64>() / batch.n_paths as f64;
    let mb: f64 = (0..batch.n_paths).map(b).sum::<f64>() / batch.n_paths as f64;
    let s: RunningStats = batch
        .unit_values(|i| (a(i) - ma) * (b(i) - mb))
        .into_iter()
        .collect();
    Estimate::from_stats(&s)
}

/// `Cov(η_r, ξ_r²)` under a stationary start (burn-in or explicit samples).
pub fn estimate_cov_eta_xi2(params: &ModelParams, r: f64, cfg: &McConfig) -> Result<VectorEstimate> {
    if matches!(cfg.init, InitialState::Fixed(_)) {
        return Err(Error::ConfigInvalid(
            "Cov(eta_r, xi_r^2) needs a stationary start".into(),
        ));
    }
    let cfg = McConfig {
        horizon: r,
        ..cfg.clone()
    };
    let batch = simulate(params, &cfg, &[r])?;
    let p = params.dim();
    let n = p + p * p;
    let etas: Vec<Vector> = (0..batch.n_paths)
        .map(|i| eta_of(batch.snapshot(i, 0).y))
        .collect();
    let xi2 = |i: usize| batch.snapshot(i, 0).xi.powi(2);
    let mut value = Vector::zeros(n);
    let mut se = Vector::zeros(n);
    for j in 0..n {
        let e = cov_estimate(&batch, &|i| etas[i][j], &xi2);
        value[j] = e.mean;
        se[j] = e.se;
    }
    Ok(VectorEstimate { value, se })
}

/// Direct estimate of `Cov((ξ_r − ξ_0)², (ξ_{h+r} − ξ_h)²)` under a
/// stationary start.
pub fn squared_increment_autocov_mc(params: &ModelParams, r: f64, h: f64, cfg: &McConfig) -> Result<Estimate> {
    if !(r >= 0.0 && h >= r) {
        return Err(Error::WindowOrder { r, h });
    }
    let cfg = McConfig {
        horizon: h + r,
        ..cfg.clone()
    };
    let batch = simulate(params, &cfg, &[r, h, h + r])?;
    let first = |i: usize| batch.snapshot(i, 0).xi.powi(2);
    let second = |i: usize| (batch.snapshot(i, 2).xi - batch.snapshot(i, 1).xi).powi(2);
    Ok(cov_estimate(&batch, &first, &second))
}
