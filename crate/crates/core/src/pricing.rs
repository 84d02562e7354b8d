//! European options on simulated paths, Black–Scholes inversion and ATM
//! term structures. Spot is normalised to 1 and rates are zero.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};
use crate::mc::{mean_and_cov, simulate, McConfig, PathBatch};
use crate::model::ModelParams;

const VOL_LO: f64 = 1e-6;
const VOL_HI: f64 = 5.0;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Call,
    Put,
}

/// Black–Scholes price with `S₀ = 1`, zero rates.
pub fn bs_price(side: Side, strike: f64, maturity: f64, vol: f64) -> f64 {
    let intrinsic = match side {
        Side::Call => (1.0 - strike).max(0.0),
        Side::Put => (strike - 1.0).max(0.0),
    };
    let sd = vol * maturity.sqrt();
    if !(sd > 0.0) {
        return intrinsic;
    }
    let n = std_normal();
    let d1 = (-strike.ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    match side {
        Side::Call => n.cdf(d1) - strike * n.cdf(d2),
        Side::Put => strike * n.cdf(-d2) - n.cdf(-d1),
    }
}

pub fn bs_vega(strike: f64, maturity: f64, vol: f64) -> f64 {
    let sd = vol * maturity.sqrt();
    if !(sd > 0.0) {
        return 0.0;
    }
    let d1 = (-strike.ln() + 0.5 * sd * sd) / sd;
    std_normal().pdf(d1) * maturity.sqrt()
}

fn bounds(side: Side, strike: f64) -> (f64, f64) {
    match side {
        Side::Call => ((1.0 - strike).max(0.0), 1.0),
        Side::Put => ((strike - 1.0).max(0.0), strike),
    }
}

/// Implied volatility by Newton on vega, falling back to bisection on
/// `[1e-6, 5]` whenever a Newton step leaves the bracket.
pub fn implied_vol_side(side: Side, price: f64, strike: f64, maturity: f64) -> Result<f64> {
    let (lower, upper) = bounds(side, strike);
    if !(price > lower && price < upper) || !(maturity > 0.0) || !(strike > 0.0) {
        return Err(Error::OutOfBounds {
            price,
            lower,
            upper,
        });
    }
    let f = |v: f64| bs_price(side, strike, maturity, v) - price;
    let (mut lo, mut hi) = (VOL_LO, VOL_HI);
    if f(lo) > 0.0 {
        return Ok(lo);
    }
    if f(hi) < 0.0 {
        return Err(Error::OutOfBounds {
            price,
            lower,
            upper,
        });
    }
    // Start at the Brenner–Subrahmanyam style guess.
    let mut v = (2.0 * std::f64::consts::PI / maturity).sqrt() * price.min(0.5);
    if !(v > lo && v < hi) {
        v = 0.2;
    }
    for _ in 0..200 {
        let fv = f(v);
        if fv.abs() <= 1e-14 {
            return Ok(v);
        }
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let vega = bs_vega(strike, maturity, v);
        let mut next = v - fv / vega;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - v).abs() <= 1e-15 * v {
            return Ok(next);
        }
        v = next;
    }
    Ok(v)
}

/// Implied volatility of a call.
pub fn implied_vol(price: f64, strike: f64, maturity: f64) -> Result<f64> {
    implied_vol_side(Side::Call, price, strike, maturity)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptionGrid {
    pub maturities: Vec<f64>,
    /// Log-moneyness `ℓ = log K`, or `ℓ/√T` when `normalized`.
    pub log_moneyness: Vec<f64>,
    pub normalized: bool,
}

impl OptionGrid {
    pub fn strike(&self, maturity: f64, ell: f64) -> f64 {
        if self.normalized {
            (ell * maturity.sqrt()).exp()
        } else {
            ell.exp()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.maturities.is_empty() || self.log_moneyness.is_empty() {
            return Err(Error::ConfigInvalid("empty option grid".into()));
        }
        if self.maturities.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::ConfigInvalid("maturities must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmileNode {
    pub maturity: f64,
    pub ell: f64,
    pub strike: f64,
    pub call: f64,
    pub call_se: f64,
    pub put: f64,
    pub put_se: f64,
    /// `C − P − (1 − K)` and its standard error.
    pub parity_gap: f64,
    pub parity_se: f64,
    /// From the out-of-the-money option (put below the money).
    pub implied_vol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmileSurface {
    pub nodes: Vec<SmileNode>,
    /// Per maturity: covariance matrix of the OTM price estimates across
    /// `grid.log_moneyness` (used for skew standard errors).
    pub otm_cov: Vec<DenseMatrix>,
    pub grid: OptionGrid,
    /// MC estimate of `E[e^{x_T}]` per maturity with its standard error.
    pub forward: Vec<(f64, f64)>,
}

impl SmileSurface {
    pub fn node(&self, maturity: f64, ell: f64) -> Option<&SmileNode> {
        self.nodes
            .iter()
            .find(|n| (n.maturity - maturity).abs() < 1e-12 && (n.ell - ell).abs() < 1e-12)
    }

    /// The same surface quoted for spot `s₀`: prices are 1-homogeneous in
    /// `(S, K)`, so strikes and prices scale by `s₀` and implied vols do not
    /// move.
    pub fn at_spot(&self, spot: f64) -> SmileSurface {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.strike *= spot;
            n.call *= spot;
            n.call_se *= spot;
            n.put *= spot;
            n.put_se *= spot;
            n.parity_gap *= spot;
            n.parity_se *= spot;
        }
        for c in &mut out.otm_cov {
            *c *= spot * spot;
        }
        for f in &mut out.forward {
            f.0 *= spot;
            f.1 *= spot;
        }
        out
    }
}

/// Prices the whole grid on one set of paths.
pub fn price_options(
    params: &ModelParams,
    y0: &Vector,
    grid: &OptionGrid,
    cfg: &McConfig,
) -> Result<SmileSurface> {
    grid.validate()?;
    let horizon = grid.maturities.iter().copied().fold(0.0, f64::max);
    let cfg = McConfig {
        horizon,
        init: crate::mc::InitialState::Fixed(y0.clone()),
        ..cfg.clone()
    };
    let batch = simulate(params, &cfg, &grid.maturities)?;
    price_batch(&batch, grid)
}

/// Prices from an existing batch whose snapshot times include the maturities.
pub fn price_batch(batch: &PathBatch, grid: &OptionGrid) -> Result<SmileSurface> {
    grid.validate()?;
    let mut nodes = Vec::new();
    let mut otm_cov = Vec::new();
    let mut forward = Vec::new();
    for &t in &grid.maturities {
        let ti = batch
            .time_index(t)
            .filter(|&i| (batch.times[i] - t).abs() < 1e-9)
            .ok_or_else(|| Error::ConfigInvalid(format!("maturity {t} not on the simulated grid")))?;
        let strikes: Vec<f64> = grid.log_moneyness.iter().map(|&l| grid.strike(t, l)).collect();
        let ns = strikes.len();
        // Per unit: [calls…, puts…, e^x]
        let units: Vec<Vec<f64>> = {
            let per_path = |i: usize| {
                let s = batch.snapshot(i, ti).x.exp();
                let mut v = Vec::with_capacity(2 * ns + 1);
                v.extend(strikes.iter().map(|&k| (s - k).max(0.0)));
                v.extend(strikes.iter().map(|&k| (k - s).max(0.0)));
                v.push(s);
                v
            };
            if batch.antithetic {
                (0..batch.n_paths / 2)
                    .map(|k| {
                        let (a, b) = (per_path(2 * k), per_path(2 * k + 1));
                        a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
                    })
                    .collect()
            } else {
                (0..batch.n_paths).map(per_path).collect()
            }
        };
        let (mean, cov) = mean_and_cov(&units);
        forward.push((mean[2 * ns], cov[(2 * ns, 2 * ns)].sqrt()));
        let otm_idx: Vec<usize> = strikes
            .iter()
            .enumerate()
            .map(|(j, &k)| if k < 1.0 { ns + j } else { j })
            .collect();
        let mut oc = DenseMatrix::zeros(ns, ns);
        for a in 0..ns {
            for b in 0..ns {
                oc[(a, b)] = cov[(otm_idx[a], otm_idx[b])];
            }
        }
        otm_cov.push(oc);
        for (j, (&ell, &k)) in grid.log_moneyness.iter().zip(&strikes).enumerate() {
            let (c, p) = (mean[j], mean[ns + j]);
            let parity_var = cov[(j, j)] + cov[(ns + j, ns + j)] - 2.0 * cov[(j, ns + j)];
            let iv = if k < 1.0 {
                implied_vol_side(Side::Put, p, k, t).ok()
            } else {
                implied_vol_side(Side::Call, c, k, t).ok()
            };
            nodes.push(SmileNode {
                maturity: t,
                ell,
                strike: k,
                call: c,
                call_se: cov[(j, j)].sqrt(),
                put: p,
                put_se: cov[(ns + j, ns + j)].sqrt(),
                parity_gap: c - p - (1.0 - k),
                parity_se: parity_var.max(0.0).sqrt(),
                implied_vol: iv,
            });
        }
    }
    Ok(SmileSurface {
        nodes,
        otm_cov,
        grid: grid.clone(),
        forward,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtmPoint {
    pub maturity: f64,
    pub atm_vol: f64,
    pub atm_skew: f64,
    /// Delta-method standard error of the skew.
    pub skew_se: f64,
}

/// ATM volatility and central-difference skew per maturity from the nodes
/// `ℓ ∈ {−eps, 0, +eps}` (plain log-moneyness).
pub fn atm_term_structures(surface: &SmileSurface, eps: f64) -> Result<Vec<AtmPoint>> {
    let ells = &surface.grid.log_moneyness;
    let find = |target: f64| ells.iter().position(|&l| (l - target).abs() < 1e-12);
    let (jm, jp) = match (find(-eps), find(0.0), find(eps)) {
        (Some(a), Some(_), Some(c)) if !surface.grid.normalized => (a, c),
        _ => {
            return Err(Error::MissingNodes(format!(
                "need plain log-moneyness nodes -{eps}, 0, {eps}"
            )))
        }
    };
    let mut out = Vec::new();
    for (ti, &t) in surface.grid.maturities.iter().enumerate() {
        let get = |ell: f64| {
            surface
                .node(t, ell)
                .and_then(|n| n.implied_vol.map(|v| (n.strike, v)))
                .ok_or_else(|| Error::MissingNodes(format!("no implied vol at T={t}, ell={ell}")))
        };
        let (_, v0) = get(0.0)?;
        let (km, vm) = get(-eps)?;
        let (kp, vp) = get(eps)?;
        let skew = (vp - vm) / (2.0 * eps);
        let (gm, gp) = (1.0 / bs_vega(km, t, vm), 1.0 / bs_vega(kp, t, vp));
        let c = &surface.otm_cov[ti];
        let var = gp * gp * c[(jp, jp)] + gm * gm * c[(jm, jm)] - 2.0 * gp * gm * c[(jp, jm)];
        out.push(AtmPoint {
            maturity: t,
            atm_vol: v0,
            atm_skew: skew,
            skew_se: var.max(0.0).sqrt() / (2.0 * eps),
        });
    }
    Ok(out)
}
