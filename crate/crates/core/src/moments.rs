//! Kronecker moment system for `y⊗ᵏ`, k ≤ 4, and everything derived from it:
//! stationary moments, stability, Ω and autocovariances.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    build_kron_operators, eigenvalues, expm, kron, kron_power, unvec, DenseMatrix,
    KronOperatorSet, LinalgError, Vector,
};
use crate::model::ModelParams;

/// Slack for the entrywise `Γ ≥ 0` test.
const GAMMA_NONNEG_SLACK: f64 = -1e-14;

#[derive(Debug, Clone)]
pub struct BlockSpectra {
    /// Eigenvalues of A₁₁ … A₄₄.
    pub eigenvalues: [Vec<Complex64>; 4],
    /// Smallest real part per block.
    pub mu: [f64; 4],
}

impl BlockSpectra {
    pub fn stable(&self) -> bool {
        self.mu.iter().all(|&m| m > 0.0)
    }
}

/// Joined state `η = (y; q)`; `q = y⊗y` for path-derived states.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaState {
    pub y: Vector,
    pub q: Vector,
}

impl EtaState {
    pub fn from_y(y: &Vector) -> Self {
        EtaState {
            y: y.clone(),
            q: kron_power(y, 2),
        }
    }

    pub fn as_vector(&self) -> Vector {
        let p = self.y.len();
        let mut v = Vector::zeros(p + self.q.len());
        v.rows_mut(0, p).copy_from(&self.y);
        v.rows_mut(p, self.q.len()).copy_from(&self.q);
        v
    }
}

#[derive(Debug, Clone)]
pub struct StationarySummary {
    pub q_infty: Vector,
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub sigma2_infty: f64,
    pub e_sigma4: f64,
    pub kurt_infty: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientCheck {
    pub kappa_tilde: f64,
    pub gamma_nonneg: bool,
    pub passes: bool,
}

/// `κ̃ = λ_min bᵀΛ⁻ᵀΓΛ⁻¹b` and the cheap sufficient stability test
/// (`Γ ≥ 0` entrywise and `κ̃ < 2/3`).
pub fn check_stability_sufficient(params: &ModelParams) -> Result<SufficientCheck> {
    let lmin = params.lambda_min()?;
    let x = params
        .lambda
        .clone()
        .lu()
        .solve(&params.b)
        .ok_or(LinalgError::Singular)?;
    let kappa_tilde = lmin * (x.transpose() * &params.gamma * &x)[(0, 0)];
    let gamma_nonneg = params.gamma.iter().all(|&g| g >= GAMMA_NONNEG_SLACK);
    Ok(SufficientCheck {
        kappa_tilde,
        gamma_nonneg,
        passes: gamma_nonneg && kappa_tilde < 2.0 / 3.0,
    })
}

/// The lower block-triangular system `ṁ = a − A m` for the stacked moments
/// `m = (E y; E y⊗²; E y⊗³; E y⊗⁴)`.
#[derive(Debug)]
pub struct MomentSystem {
    params: ModelParams,
    ops: KronOperatorSet,
    offsets: [usize; 5],
    a_full: DenseMatrix,
    source: Vector,
    m_infty: Vector,
    a_tilde: DenseMatrix,
    g: Vector,
    spectra: OnceLock<std::result::Result<BlockSpectra, LinalgError>>,
}

impl MomentSystem {
    pub fn build(params: &ModelParams) -> Result<Self> {
        let p = params.dim();
        let ops = build_kron_operators(&params.lambda, &params.b)?;
        let dims: Vec<usize> = (1..=4).map(|k| p.pow(k)).collect();
        let mut offsets = [0usize; 5];
        for k in 0..4 {
            offsets[k + 1] = offsets[k] + dims[k];
        }
        let n = offsets[4];
        let gamma_row = DenseMatrix::from_row_slice(1, p * p, params.gamma.as_slice());
        let beta_row = DenseMatrix::from_row_slice(1, p, params.beta.as_slice());

        let mut a = DenseMatrix::zeros(n, n);
        for k in 1..=4 {
            let (o, d) = (offsets[k - 1], dims[k - 1]);
            let mut diag = ops.lambda(k).clone();
            if k >= 2 {
                diag -= kron(ops.b(k), &gamma_row);
                let sub = kron(ops.b(k), &beta_row) * -2.0;
                a.view_mut((o, offsets[k - 2]), (d, dims[k - 2])).copy_from(&sub);
            }
            if k >= 3 {
                let sub2 = ops.b(k) * -params.alpha;
                a.view_mut((o, offsets[k - 3]), (d, dims[k - 3]))
                    .copy_from(&sub2);
            }
            a.view_mut((o, o), (d, d)).copy_from(&diag);
        }

        let mut source = Vector::zeros(n);
        let bb = kron_power(&params.b, 2);
        source.rows_mut(offsets[1], dims[1]).copy_from(&(bb * params.alpha));

        // Block forward substitution.
        let mut m_infty = Vector::zeros(n);
        for k in 1..=4 {
            let (o, d) = (offsets[k - 1], dims[k - 1]);
            let mut rhs = source.rows(o, d).into_owned();
            if k >= 2 {
                rhs -= a.view((o, 0), (d, o)) * m_infty.rows(0, o);
            }
            let block = a.view((o, o), (d, d)).into_owned();
            let scale = block.amax().max(1.0);
            let lu = block.lu();
            let u = lu.u();
            let min_piv = (0..d).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
            if !(min_piv > 1e-13 * scale) {
                return Err(Error::SingularA { block: k });
            }
            let x = lu.solve(&rhs).ok_or(Error::SingularA { block: k })?;
            m_infty.rows_mut(o, d).copy_from(&x);
        }

        let eta_dim = offsets[2];
        let a_tilde = a.view((0, 0), (eta_dim, eta_dim)).into_owned();
        Ok(MomentSystem {
            params: params.clone(),
            ops,
            offsets,
            a_full: a,
            source,
            m_infty,
            a_tilde,
            g: params.g_vector(),
            spectra: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn operators(&self) -> &KronOperatorSet {
        &self.ops
    }

    /// Start offset of block `k` (1-based) in the stacked vector.
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k - 1]
    }

    pub fn a_full(&self) -> &DenseMatrix {
        &self.a_full
    }

    /// Block `A_ij` (1-based).
    pub fn block(&self, i: usize, j: usize) -> DenseMatrix {
        let p = self.dim();
        self.a_full
            .view(
                (self.offsets[i - 1], self.offsets[j - 1]),
                (p.pow(i as u32), p.pow(j as u32)),
            )
            .into_owned()
    }

    pub fn source(&self) -> &Vector {
        &self.source
    }

    pub fn m_infty(&self) -> &Vector {
        &self.m_infty
    }

    /// Stationary moment block of order `k`.
    pub fn m_infty_block(&self, k: usize) -> Vector {
        let p = self.dim();
        self.m_infty
            .rows(self.offsets[k - 1], p.pow(k as u32))
            .into_owned()
    }

    /// Top-left `(p+p²)` system driving `η = (y; y⊗y)`.
    pub fn a_tilde(&self) -> &DenseMatrix {
        &self.a_tilde
    }

    pub fn g(&self) -> &Vector {
        &self.g
    }

    pub fn eta_infty(&self) -> Vector {
        let p = self.dim();
        let mut e = Vector::zeros(p + p * p);
        e.rows_mut(p, p * p).copy_from(&self.m_infty_block(2));
        e
    }

    /// Spectra of the diagonal blocks (computed once).
    pub fn stability(&self) -> Result<BlockSpectra> {
        self.spectra
            .get_or_init(|| {
                let mut eig: [Vec<Complex64>; 4] = Default::default();
                let mut mu = [0.0; 4];
                for k in 1..=4 {
                    eig[k - 1] = eigenvalues(&self.block(k, k))?;
                    mu[k - 1] = eig[k - 1].first().map(|z| z.re).unwrap_or(f64::INFINITY);
                }
                Ok(BlockSpectra {
                    eigenvalues: eig,
                    mu,
                })
            })
            .clone()
            .map_err(Error::from)
    }

    fn require_stationary(&self) -> Result<BlockSpectra> {
        let s = self.stability()?;
        if s.stable() {
            return Ok(s);
        }
        let mut offending = Vec::new();
        for (k, eig) in s.eigenvalues.iter().enumerate() {
            for z in eig.iter().filter(|z| z.re <= 0.0) {
                offending.push(format!("A{0}{0}: {1:.6}{2:+.6}i", k + 1, z.re, z.im));
            }
        }
        Err(Error::NotStationary(offending.join(", ")))
    }

    /// `κ = γᵀ Λ̄⁻¹ b̄` with `Λ̄ = Λ⁽²⁾` and `b̄ = b⊗b`.
    pub fn kappa(&self) -> Result<f64> {
        let bb = kron_power(&self.params.b, 2);
        let x = self
            .ops
            .lambda(2)
            .clone()
            .lu()
            .solve(&bb)
            .ok_or(LinalgError::Singular)?;
        Ok(Vector::from_column_slice(self.params.gamma.as_slice()).dot(&x))
    }

    pub fn stationary_summary(&self) -> Result<StationarySummary> {
        self.require_stationary()?;
        let kappa = self.kappa()?;
        if !(kappa < 1.0) {
            return Err(Error::NotStationary(format!("kappa = {kappa} >= 1")));
        }
        let alpha = self.params.alpha;
        let sigma2_infty = alpha / (1.0 - kappa);
        let omega = self.omega()?;
        let eta = self.eta_infty();
        let g = &self.g;
        let e_sigma4 = alpha * alpha
            + 2.0 * alpha * g.dot(&eta)
            + (g.transpose() * (&omega + &eta * eta.transpose()) * g)[(0, 0)];
        let kt = check_stability_sufficient(&self.params)?;
        Ok(StationarySummary {
            q_infty: self.m_infty_block(2),
            kappa,
            kappa_tilde: kt.kappa_tilde,
            sigma2_infty,
            e_sigma4,
            kurt_infty: e_sigma4 / (sigma2_infty * sigma2_infty),
            stable: true,
        })
    }

    /// Stacked initial moments `(y₀; y₀⊗²; y₀⊗³; y₀⊗⁴)`.
    pub fn initial_moments(&self, y0: &Vector) -> Vector {
        let mut m = Vector::zeros(self.offsets[4]);
        for k in 1..=4 {
            let o = self.offsets[k - 1];
            let v = kron_power(y0, k);
            m.rows_mut(o, v.len()).copy_from(&v);
        }
        m
    }

    /// `m(t) = m∞ + e^{−At}(m(0) − m∞)`.
    pub fn conditional_moments(&self, y0: &Vector, t: f64) -> Result<Vector> {
        if y0.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "y0 has length {}, p = {}",
                y0.len(),
                self.dim()
            )));
        }
        let m0 = self.initial_moments(y0);
        if t == 0.0 {
            return Ok(m0);
        }
        let e = expm(&(-&self.a_full * t))?;
        Ok(&self.m_infty + e * (m0 - &self.m_infty))
    }

    /// `E[η_{t+s} | F_t] = η∞ + e^{−Ãs}(η − η∞)`.
    pub fn conditional_eta(&self, eta: &EtaState, s: f64) -> Result<Vector> {
        let v = eta.as_vector();
        if v.len() != self.a_tilde.nrows() {
            return Err(Error::DimensionMismatch("eta has wrong length".into()));
        }
        if s == 0.0 {
            return Ok(v);
        }
        let inf = self.eta_infty();
        let e = expm(&(-&self.a_tilde * s))?;
        Ok(&inf + e * (v - &inf))
    }

    /// `ψ(s) = (e^{−Ãs})ᵀ g`.
    pub fn psi(&self, s: f64) -> Result<Vector> {
        if s == 0.0 {
            return Ok(self.g.clone());
        }
        Ok(expm(&(-self.a_tilde.transpose() * s))? * &self.g)
    }

    /// Stationary covariance of `η = (y; y⊗y)`.
    pub fn omega(&self) -> Result<DenseMatrix> {
        self.require_stationary()?;
        let p = self.dim();
        let m2 = unvec(&self.m_infty_block(2), p, p)?;
        let m3 = unvec(&self.m_infty_block(3), p, p * p)?;
        let m4 = unvec(&self.m_infty_block(4), p * p, p * p)?;
        let q = self.m_infty_block(2);
        let n = p + p * p;
        let mut om = DenseMatrix::zeros(n, n);
        om.view_mut((0, 0), (p, p)).copy_from(&m2);
        om.view_mut((0, p), (p, p * p)).copy_from(&m3);
        om.view_mut((p, 0), (p * p, p)).copy_from(&m3.transpose());
        om.view_mut((p, p), (p * p, p * p))
            .copy_from(&(m4 - &q * q.transpose()));
        Ok((&om + om.transpose()) * 0.5)
    }

    /// `Cov(σ²_{t+s}, σ²_t) = ψ(s)ᵀ Ω g`.
    pub fn variance_autocov(&self, omega: &DenseMatrix, s: f64) -> Result<f64> {
        self.require_stationary()?;
        if s < 0.0 {
            return Err(Error::ConfigInvalid(format!("negative lag {s}")));
        }
        Ok(self.psi(s)?.dot(&(omega * &self.g)))
    }

    /// `∫₀^r e^{Ãv} dv`, from the exponential of the augmented matrix
    /// `[[Ã, I], [0, 0]]`.
    fn integrated_exp(&self, r: f64) -> Result<DenseMatrix> {
        let n = self.a_tilde.nrows();
        let mut aug = DenseMatrix::zeros(2 * n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a_tilde * r));
        aug.view_mut((0, n), (n, n))
            .copy_from(&(DenseMatrix::identity(n, n) * r));
        let e = expm(&aug)?;
        Ok(e.view((0, n), (n, n)).into_owned())
    }

    /// Autocovariance of squared increments of `ξ_t = ∫σ dW` over windows of
    /// length `r` at lag `h ≥ r`:
    /// `gᵀ e^{−Ãh} Ã⁻¹(e^{Ãr} − I) c`, where `c = Cov(η_r, ξ_r²)` under a
    /// stationary start.
    pub fn squared_increment_autocov(&self, cov_eta_xi2: &Vector, r: f64, h: f64) -> Result<f64> {
        if !(r >= 0.0 && h >= r) {
            return Err(Error::WindowOrder { r, h });
        }
        if cov_eta_xi2.len() != self.a_tilde.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "Cov(eta, xi^2) has length {}, expected {}",
                cov_eta_xi2.len(),
                self.a_tilde.nrows()
            )));
        }
        let hr = self.integrated_exp(r)? * cov_eta_xi2;
        let e = expm(&(-&self.a_tilde * h))?;
        Ok(self.g.dot(&(e * hr)))
    }

    /// `E[(ξ^{(r)})²] = r σ∞²` under stationarity.
    pub fn squared_increment_mean(&self, r: f64) -> Result<f64> {
        Ok(r * self.stationary_summary()?.sigma2_infty)
    }

    /// Increments of `ξ` over disjoint windows are uncorrelated.
    pub fn increment_autocov(&self) -> f64 {
        0.0
    }
}
