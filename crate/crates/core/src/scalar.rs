//! One-factor closed forms and the stationary Pearson type IV law.
//!
//! The Pearson IV computations work in the angle `θ = atan((y − c)/s)` with
//! `c = −β/γ` and `s = √Δ/γ`, `Δ = αγ − β²`. In that variable the
//! unnormalised law is simply `cos^m θ · e^{νθ}` with `m = 2λ/γ` and
//! `ν = 2λβ/(γ√Δ)`, which is smooth on `(−π/2, π/2)` and easy to integrate.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quad;

const CDF_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarParams {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ScalarParams {
    pub fn new(lambda: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        ScalarParams {
            lambda,
            alpha,
            beta,
            gamma,
        }
    }

    /// Requires a one-factor model with `b = 1`.
    pub fn from_model(p: &ModelParams) -> Result<Self> {
        if p.dim() != 1 || p.b[0] != 1.0 {
            return Err(Error::ConfigInvalid(
                "scalar formulas need p = 1 and b = 1".into(),
            ));
        }
        Ok(ScalarParams::new(
            p.lambda[(0, 0)],
            p.alpha,
            p.beta[0],
            p.gamma[(0, 0)],
        ))
    }

    pub fn to_model(&self) -> ModelParams {
        ModelParams::scalar(self.lambda, self.alpha, self.beta, self.gamma)
    }

    pub fn delta(&self) -> f64 {
        self.alpha * self.gamma - self.beta * self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.gamma / (2.0 * self.lambda)
    }

    fn require_stationary(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.gamma < 2.0 * self.lambda / 3.0) {
            return Err(Error::NotStationary(format!(
                "need gamma < 2 lambda / 3 (lambda = {}, gamma = {})",
                self.lambda, self.gamma
            )));
        }
        Ok(())
    }
}

/// Stationary kurtosis of the variance, `E[σ⁴]/σ∞⁴`.
pub fn scalar_kurtosis(sp: &ScalarParams) -> Result<f64> {
    sp.require_stationary()?;
    let ScalarParams {
        lambda: l,
        alpha: a,
        beta: b,
        gamma: g,
    } = *sp;
    Ok((2.0 * l - g) / (2.0 * l - 3.0 * g)
        * ((l - g) / l + (2.0 * l - g) / (l - g) * b * b / (l * a)))
}

/// Range of the stationary kurtosis over admissible `β` (`β² ≤ αγ`).
pub fn scalar_kurtosis_bounds(lambda: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma >= 0.0 && gamma < 2.0 * lambda / 3.0) {
        return Err(Error::NotStationary(format!(
            "need 0 <= gamma < 2 lambda / 3 (lambda = {lambda}, gamma = {gamma})"
        )));
    }
    let f = (2.0 * lambda - gamma) / (2.0 * lambda - 3.0 * gamma);
    Ok((f * (lambda - gamma) / lambda, f * lambda / (lambda - gamma)))
}

/// `(q∞, m³∞, m⁴∞)`.
pub fn scalar_closed_moments(sp: &ScalarParams) -> Result<(f64, f64, f64)> {
    sp.require_stationary()?;
    let ScalarParams {
        lambda: l,
        alpha: a,
        beta: b,
        gamma: g,
    } = *sp;
    let q = a / (2.0 * l * (1.0 - sp.kappa()));
    let m3 = 2.0 * b / (l - g) * q;
    let m4 = 3.0 * (2.0 * l - g) / (2.0 * l - 3.0 * g) * (1.0 + 4.0 * b * b / (a * (l - g))) * q * q;
    Ok((q, m3, m4))
}

#[derive(Debug, Clone)]
enum Law {
    /// Constant-volatility limit: Gaussian OU law.
    Gaussian { sd: f64 },
    General {
        m: f64,
        nu: f64,
        c: f64,
        s: f64,
        shift: f64,
        log_z: f64,
        /// CDF at `θ_i = −π/2 + i·dθ`.
        cum: Vec<f64>,
        dtheta: f64,
    },
}

/// Stationary density of the one-factor offset.
#[derive(Debug, Clone)]
pub struct PearsonIV {
    pub params: ScalarParams,
    law: Law,
}

impl PearsonIV {
    pub fn new(sp: ScalarParams) -> Result<Self> {
        if !(sp.lambda > 0.0) || !(sp.alpha > 0.0) || !(sp.gamma >= 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "Pearson IV needs lambda > 0, alpha > 0, gamma >= 0: {sp:?}"
            )));
        }
        if sp.gamma < 1e-12 * sp.lambda {
            return Ok(PearsonIV {
                params: sp,
                law: Law::Gaussian {
                    sd: (sp.alpha / (2.0 * sp.lambda)).sqrt(),
                },
            });
        }
        let delta = sp.delta();
        if !(delta > 0.0) {
            return Err(Error::ConstraintViolation(format!(
                "Delta = alpha*gamma - beta^2 = {delta} must be positive"
            )));
        }
        let m = 2.0 * sp.lambda / sp.gamma;
        let nu = 2.0 * sp.lambda * sp.beta / (sp.gamma * delta.sqrt());
        let peak = (nu / m).atan();
        let shift = m * peak.cos().ln() + nu * peak;
        let h = move |t: f64| {
            let c = t.cos();
            if c <= 0.0 {
                0.0
            } else {
                (m * c.ln() + nu * t - shift).exp()
            }
        };
        let dtheta = 2.0 * FRAC_PI_2 / CDF_NODES as f64;
        let mut cum = Vec::with_capacity(CDF_NODES + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..CDF_NODES {
            let a = -FRAC_PI_2 + i as f64 * dtheta;
            acc += quad::integrate(h, a, a + dtheta, 1e-18, 1e-14, 50).value;
            cum.push(acc);
        }
        let z = acc;
        for c in cum.iter_mut() {
            *c /= z;
        }
        Ok(PearsonIV {
            params: sp,
            law: Law::General {
                m,
                nu,
                c: -sp.beta / sp.gamma,
                s: delta.sqrt() / sp.gamma,
                shift,
                log_z: z.ln(),
                cum,
                dtheta,
            },
        })
    }

    pub fn log_density(&self, y: f64) -> f64 {
        match &self.law {
            Law::Gaussian { sd } => {
                let z = y / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Law::General {
                m,
                nu,
                c,
                s,
                shift,
                log_z,
                ..
            } => {
                let u = (y - c) / s;
                let log_cos = -0.5 * u.mul_add(u, 1.0).ln();
                (m + 2.0) * log_cos + nu * u.atan() - shift - s.ln() - log_z
            }
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }

    fn h(&self, t: f64) -> f64 {
        match &self.law {
            Law::General { m, nu, shift, .. } => {
                let c = t.cos();
                if c <= 0.0 {
                    0.0
                } else {
                    (m * c.ln() + nu * t - shift).exp()
                }
            }
            Law::Gaussian { .. } => unreachable!("angle form only for the general law"),
        }
    }

    fn cdf_theta(&self, t: f64) -> f64 {
        let Law::General {
            cum,
            dtheta,
            log_z,
            ..
        } = &self.law
        else {
            unreachable!()
        };
        if t <= -FRAC_PI_2 {
            return 0.0;
        }
        if t >= FRAC_PI_2 {
            return 1.0;
        }
        let i = (((t + FRAC_PI_2) / dtheta).floor() as usize).min(CDF_NODES - 1);
        let a = -FRAC_PI_2 + i as f64 * dtheta;
        let part = quad::integrate(|x| self.h(x), a, t, 1e-18, 1e-14, 50).value;
        (cum[i] + part * (-log_z).exp()).clamp(0.0, 1.0)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match &self.law {
            Law::Gaussian { sd } => 0.5 * statrs::function::erf::erfc(-y / (sd * std::f64::consts::SQRT_2)),
            Law::General { c, s, .. } => self.cdf_theta(((y - c) / s).atan()),
        }
    }

    /// Inverse CDF: table lookup, then safeguarded Newton in θ.
    pub fn quantile(&self, prob: f64) -> f64 {
        match &self.law {
            Law::Gaussian { sd } => {
                use statrs::distribution::{ContinuousCDF, Normal};
                Normal::new(0.0, *sd).expect("sd > 0").inverse_cdf(prob)
            }
            Law::General {
                c,
                s,
                cum,
                dtheta,
                log_z,
                ..
            } => {
                if prob <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                if prob >= 1.0 {
                    return f64::INFINITY;
                }
                let i = cum.partition_point(|&v| v <= prob).clamp(1, CDF_NODES) - 1;
                let mut lo = -FRAC_PI_2 + i as f64 * dtheta;
                let mut hi = lo + dtheta;
                let (flo, fhi) = (cum[i], cum[i + 1]);
                let mut t = if fhi > flo {
                    lo + (prob - flo) / (fhi - flo) * dtheta
                } else {
                    0.5 * (lo + hi)
                };
                let inv_z = (-log_z).exp();
                for _ in 0..60 {
                    let f = self.cdf_theta(t) - prob;
                    if f > 0.0 {
                        hi = t;
                    } else {
                        lo = t;
                    }
                    let d = self.h(t) * inv_z;
                    let mut next = if d > 0.0 { t - f / d } else { f64::NAN };
                    if !(next > lo && next < hi) {
                        next = 0.5 * (lo + hi);
                    }
                    if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) {
                        t = next;
                        break;
                    }
                    t = next;
                }
                c + s * t.tan()
            }
        }
    }

    /// `E[y^k]` by quadrature.
    pub fn moment(&self, k: i32) -> f64 {
        match &self.law {
            Law::Gaussian { sd } => match k {
                0 => 1.0,
                2 => sd * sd,
                4 => 3.0 * sd.powi(4),
                _ if k % 2 == 1 => 0.0,
                _ => f64::NAN,
            },
            Law::General { c, s, log_z, .. } => {
                let f = |t: f64| (c + s * t.tan()).powi(k) * self.h(t);
                quad::integrate(f, -FRAC_PI_2, FRAC_PI_2, 1e-300, 1e-13, 20_000).value
                    * (-log_z).exp()
            }
        }
    }

    /// Exact Student-t representation available when `β = 0`:
    /// `y = √(α/(2λ+γ)) · T` with `2λ/γ + 1` degrees of freedom.
    pub fn student_t_mapping(&self) -> Option<(f64, f64)> {
        let sp = self.params;
        match self.law {
            Law::General { .. } if sp.beta == 0.0 => Some((
                (sp.alpha / (2.0 * sp.lambda + sp.gamma)).sqrt(),
                2.0 * sp.lambda / sp.gamma + 1.0,
            )),
            _ => None,
        }
    }

    /// Density of the scaled Student-t law from [`Self::student_t_mapping`],
    /// when it applies.
    pub fn student_t_density(&self, y: f64) -> Option<f64> {
        use statrs::distribution::{Continuous, StudentsT};
        let (scale, dof) = self.student_t_mapping()?;
        let t = StudentsT::new(0.0, 1.0, dof).ok()?;
        Some(t.pdf(y / scale) / scale)
    }

    /// i.i.d. draws (deterministic in `seed`).
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Law::Gaussian { sd } = self.law {
            return (0..n)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
        }
        if let Some((scale, dof)) = self.student_t_mapping() {
            let t = StudentT::new(dof).expect("dof > 0");
            return (0..n).map(|_| scale * t.sample(&mut rng)).collect();
        }
        (0..n)
            .map(|_| {
                // Open interval keeps the quantile finite.
                let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - 1e-16);
                self.quantile(u)
            })
            .collect()
    }
}

pub fn pearson4_density(pp: &PearsonIV, y: f64) -> f64 {
    pp.density(y)
}

pub fn pearson4_sample(pp: &PearsonIV, n: usize, seed: u64) -> Vec<f64> {
    pp.sample(n, seed)
}
