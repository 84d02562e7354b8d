//! Model parameters, admissibility checks, Jordan identification and the
//! static helpers built on top of them.

use std::fmt;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, pinv, DenseMatrix, Vector, MAX_STATE_DIM};
use crate::quad;

/// Eigenvalues of Λ closer than this (relative to ‖Λ‖) are treated as one
/// root. Perturbed Jordan blocks split roughly like ε^{1/n}, so this has to be
/// much looser than machine precision.
const CLUSTER_TOL: f64 = 1e-4;

/// Jordan structure of a canonical Λ: roots in strictly decreasing order with
/// their block sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JordanSpec {
    pub blocks: Vec<(f64, usize)>,
}

impl JordanSpec {
    pub fn new(blocks: Vec<(f64, usize)>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::ConstraintViolation("no Jordan blocks".into()));
        }
        for (i, &(lam, n)) in blocks.iter().enumerate() {
            if n == 0 {
                return Err(Error::ConstraintViolation(format!("block {i} has size 0")));
            }
            if !(lam > 0.0) || !lam.is_finite() {
                return Err(Error::ConstraintViolation(format!(
                    "root {lam} of block {i} is not positive"
                )));
            }
            if i > 0 && !(lam < blocks[i - 1].0) {
                return Err(Error::ConstraintViolation(
                    "roots must be strictly decreasing".into(),
                ));
            }
        }
        Ok(JordanSpec { blocks })
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.1).sum()
    }

    /// Block-diagonal Λ with blocks `λᵢ Dᵢ`, `Dᵢ` having ones on the diagonal
    /// and minus ones on the sub-diagonal.
    pub fn lambda_matrix(&self) -> DenseMatrix {
        let p = self.dim();
        let mut out = DenseMatrix::zeros(p, p);
        let mut o = 0;
        for &(lam, n) in &self.blocks {
            for j in 0..n {
                out[(o + j, o + j)] = lam;
                if j + 1 < n {
                    out[(o + j + 1, o + j)] = -lam;
                }
            }
            o += n;
        }
        out
    }

    /// `b` with `e₁` in each block.
    pub fn b_vector(&self) -> Vector {
        let mut b = Vector::zeros(self.dim());
        let mut o = 0;
        for &(_, n) in &self.blocks {
            b[o] = 1.0;
            o += n;
        }
        b
    }
}

/// The `(w, β₀, γ₀)` triple a rank-one model was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOne {
    pub w: Vec<f64>,
    pub beta0: f64,
    pub gamma0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub label: Option<String>,
    pub lambda: DenseMatrix,
    pub b: Vector,
    pub alpha: f64,
    pub beta: Vector,
    pub gamma: DenseMatrix,
    pub rank_one: Option<RankOne>,
}

/// A failed admissibility clause.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension(String),
    NonFinite,
    AlphaNotPositive(f64),
    GammaNotSymmetric,
    LambdaNotRealPositive { re: f64, im: f64 },
    BorderedNotPsd { min_eigenvalue: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            Violation::NonFinite => write!(f, "parameters must be finite"),
            Violation::AlphaNotPositive(a) => write!(f, "alpha must be positive (got {a})"),
            Violation::GammaNotSymmetric => write!(f, "Gamma must be symmetric"),
            Violation::LambdaNotRealPositive { re, im } => write!(
                f,
                "eigenvalues of Lambda must be real and positive (found {re}{im:+}i)"
            ),
            Violation::BorderedNotPsd { min_eigenvalue } => write!(
                f,
                "bordered matrix not psd (smallest eigenvalue {min_eigenvalue:e})"
            ),
        }
    }
}

impl ModelParams {
    pub fn new(
        lambda: DenseMatrix,
        b: Vector,
        alpha: f64,
        beta: Vector,
        gamma: DenseMatrix,
    ) -> Result<Self> {
        let p = b.len();
        if p == 0 {
            return Err(Error::DimensionMismatch("empty state".into()));
        }
        if lambda.shape() != (p, p) || beta.len() != p || gamma.shape() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "Λ {:?}, b {p}, β {}, Γ {:?}",
                lambda.shape(),
                beta.len(),
                gamma.shape()
            )));
        }
        Ok(ModelParams {
            label: None,
            lambda,
            b,
            alpha,
            beta,
            gamma,
            rank_one: None,
        })
    }

    /// One-factor model with `b = 1`.
    pub fn scalar(lambda: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        ModelParams {
            label: None,
            lambda: DenseMatrix::from_element(1, 1, lambda),
            b: Vector::from_element(1, 1.0),
            alpha,
            beta: Vector::from_element(1, beta),
            gamma: DenseMatrix::from_element(1, 1, gamma),
            rank_one: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `g = (2β; vec Γ)`, the loading of σ² on `η = (y; y⊗y)`.
    pub fn g_vector(&self) -> Vector {
        let p = self.dim();
        let mut g = Vector::zeros(p + p * p);
        g.rows_mut(0, p).copy_from(&(&self.beta * 2.0));
        g.rows_mut(p, p * p)
            .copy_from_slice(self.gamma.as_slice());
        g
    }

    /// The (p+1)×(p+1) matrix `[[α, βᵀ], [β, Γ]]`.
    pub fn bordered(&self) -> DenseMatrix {
        let p = self.dim();
        let mut m = DenseMatrix::zeros(p + 1, p + 1);
        m[(0, 0)] = self.alpha;
        for i in 0..p {
            m[(0, i + 1)] = self.beta[i];
            m[(i + 1, 0)] = self.beta[i];
        }
        m.view_mut((1, 1), (p, p)).copy_from(&self.gamma);
        m
    }

    pub fn variance(&self, y: &Vector) -> f64 {
        self.alpha + 2.0 * self.beta.dot(y) + (y.transpose() * &self.gamma * y)[(0, 0)]
    }

    /// Minimiser of the variance link (minimum-norm when Γ is singular) and
    /// the minimal volatility.
    pub fn variance_min(&self) -> (Vector, f64) {
        let y = -(pinv(&self.gamma, 1e-12) * &self.beta);
        let v = self.variance(&y).max(0.0);
        (y, v.sqrt())
    }

    /// Smallest real part of the spectrum of Λ.
    pub fn lambda_min(&self) -> Result<f64> {
        Ok(eigenvalues(&self.lambda)?
            .first()
            .map(|z| z.re)
            .unwrap_or(f64::NAN))
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let p = self.dim();
        if self.lambda.shape() != (p, p) || self.beta.len() != p || self.gamma.shape() != (p, p)
        {
            out.push(Violation::Dimension(format!(
                "Λ {:?}, b {p}, β {}, Γ {:?}",
                self.lambda.shape(),
                self.beta.len(),
                self.gamma.shape()
            )));
            return out;
        }
        if p > MAX_STATE_DIM {
            out.push(Violation::Dimension(format!(
                "p = {p} exceeds the cap of {MAX_STATE_DIM}"
            )));
        }
        let finite = self.alpha.is_finite()
            && self.lambda.iter().all(|x| x.is_finite())
            && self.b.iter().all(|x| x.is_finite())
            && self.beta.iter().all(|x| x.is_finite())
            && self.gamma.iter().all(|x| x.is_finite());
        if !finite {
            out.push(Violation::NonFinite);
            return out;
        }
        if !(self.alpha > 0.0) {
            out.push(Violation::AlphaNotPositive(self.alpha));
        }
        let gscale = self.gamma.amax().max(f64::MIN_POSITIVE);
        if (&self.gamma - self.gamma.transpose()).amax() > 1e-12 * gscale {
            out.push(Violation::GammaNotSymmetric);
        }
        match clustered_spectrum(&self.lambda) {
            Ok(roots) => {
                if let Some(r) = roots.iter().find(|r| r.im != 0.0 || r.re <= 0.0) {
                    out.push(Violation::LambdaNotRealPositive { re: r.re, im: r.im });
                }
            }
            Err(_) => out.push(Violation::LambdaNotRealPositive {
                re: f64::NAN,
                im: f64::NAN,
            }),
        }
        let bordered = self.bordered();
        let sym = (&bordered + bordered.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig < -1e-12 * bordered.amax().max(1.0) {
            out.push(Violation::BorderedNotPsd {
                min_eigenvalue: min_eig,
            });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(v))
        }
    }
}

/// A root of Λ after merging numerically split eigenvalues.
#[derive(Debug, Clone, Copy)]
struct Root {
    re: f64,
    im: f64,
    mult: usize,
}

/// Groups the spectrum of `a` into clusters (single linkage at
/// `CLUSTER_TOL·‖a‖`) and returns each cluster's mean and size, sorted by
/// descending real part. A cluster whose mean is real to rounding is
/// reported with `im = 0`.
fn clustered_spectrum(a: &DenseMatrix) -> Result<Vec<Root>> {
    let eig = eigenvalues(a)?;
    let scale = a.amax().max(1e-300);
    let tol = CLUSTER_TOL * scale;
    let n = eig.len();
    let mut label: Vec<usize> = (0..n).collect();
    // Tiny n, so a quadratic union pass is fine.
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            for j in 0..n {
                if label[i] != label[j] && (eig[i] - eig[j]).norm() <= tol {
                    let l = label[i].min(label[j]);
                    label[i] = l;
                    label[j] = l;
                    changed = true;
                }
            }
        }
    }
    let mut roots = Vec::new();
    let mut seen = Vec::new();
    for i in 0..n {
        if seen.contains(&label[i]) {
            continue;
        }
        seen.push(label[i]);
        let members: Vec<_> = (0..n).filter(|&j| label[j] == label[i]).collect();
        let k = members.len() as f64;
        let re = members.iter().map(|&j| eig[j].re).sum::<f64>() / k;
        let im = members.iter().map(|&j| eig[j].im).sum::<f64>() / k;
        let im = if im.abs() <= 1e-10 * scale { 0.0 } else { im };
        roots.push(Root {
            re,
            im,
            mult: members.len(),
        });
    }
    roots.sort_by(|x, y| y.re.total_cmp(&x.re));
    Ok(roots)
}

/// Orthonormal basis of the numerical null space of `a`.
fn null_space(a: &DenseMatrix, tol: f64) -> DenseMatrix {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let cols: Vec<Vector> = (0..n)
        .filter(|&k| k >= svd.singular_values.len() || svd.singular_values[k] <= tol)
        .map(|k| vt.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DenseMatrix::zeros(n, 0)
    } else {
        DenseMatrix::from_columns(&cols)
    }
}

/// A model expressed in Jordan-identified coordinates `ỹ = M⁻¹ y`.
#[derive(Debug, Clone)]
pub struct CanonicalModel {
    pub params: ModelParams,
    pub jordan: JordanSpec,
    /// Columns are the canonical basis expressed in original offsets (`y = M ỹ`).
    pub transform: DenseMatrix,
    pub transform_inv: DenseMatrix,
}

/// Changes basis so that Λ is block bidiagonal `blockdiag(λᵢ Dᵢ)` with
/// `λ₁ > … > λ_m` and `b` carries `e₁` in every block.
pub fn canonicalize(params: &ModelParams) -> Result<CanonicalModel> {
    let p = params.dim();
    let roots = clustered_spectrum(&params.lambda)?;
    if roots.iter().any(|r| r.im != 0.0) {
        return Err(Error::ComplexEigenvalues);
    }
    let scale = params.lambda.amax().max(1.0);
    let eye = DenseMatrix::identity(p, p);

    // Generalised eigenspace bases, stacked in the order of `roots`.
    let mut bases = Vec::with_capacity(roots.len());
    for r in &roots {
        let shifted = &params.lambda - &eye * r.re;
        let geo = null_space(&shifted, 1e-8 * scale).ncols();
        if geo > 1 {
            return Err(Error::RepeatedEigenvalueAcrossBlocks { lambda: r.re });
        }
        let mut power = eye.clone();
        for _ in 0..r.mult {
            power = &power * &shifted;
        }
        let basis = null_space(&power, 1e-8 * scale.powi(r.mult as i32));
        if basis.ncols() != r.mult {
            return Err(Error::RepeatedEigenvalueAcrossBlocks { lambda: r.re });
        }
        bases.push(basis);
    }
    let all = DenseMatrix::from_columns(
        &bases
            .iter()
            .flat_map(|b| b.column_iter().map(|c| c.into_owned()))
            .collect::<Vec<_>>(),
    );
    let coeffs = all.lu().solve(&params.b).ok_or(Error::Linalg(
        crate::linalg::LinalgError::Singular,
    ))?;

    let bnorm = params.b.norm().max(1e-300);
    let mut columns = Vec::with_capacity(p);
    let mut offset = 0;
    let mut blocks = Vec::with_capacity(roots.len());
    for (r, basis) in roots.iter().zip(&bases) {
        let n = r.mult;
        let mut m = basis * coeffs.rows(offset, n);
        offset += n;
        if m.norm() <= 1e-10 * bnorm {
            return Err(Error::UnreachableMode { lambda: r.re });
        }
        let shifted = &params.lambda - &eye * r.re;
        for j in 0..n {
            if j > 0 {
                m = -(&shifted * &m) / r.re;
                if m.norm() <= 1e-8 * bnorm {
                    return Err(Error::UnreachableMode { lambda: r.re });
                }
            }
            columns.push(m.clone());
        }
        blocks.push((r.re, n));
    }
    let transform = DenseMatrix::from_columns(&columns);
    let transform_inv = transform
        .clone()
        .try_inverse()
        .ok_or(Error::Linalg(crate::linalg::LinalgError::Singular))?;
    let jordan = JordanSpec::new(blocks)?;

    let gamma = transform.transpose() * &params.gamma * &transform;
    let gamma = (&gamma + gamma.transpose()) * 0.5;
    let rank_one = params.rank_one.as_ref().map(|r1| {
        let w = transform.transpose() * Vector::from_column_slice(&r1.w);
        RankOne {
            w: w.as_slice().to_vec(),
            beta0: r1.beta0,
            gamma0: r1.gamma0,
        }
    });
    let canon = ModelParams {
        label: params.label.clone(),
        lambda: jordan.lambda_matrix(),
        b: jordan.b_vector(),
        alpha: params.alpha,
        beta: transform.transpose() * &params.beta,
        gamma,
        rank_one,
    };
    Ok(CanonicalModel {
        params: canon,
        jordan,
        transform,
        transform_inv,
    })
}

/// Erlang-shaped kernel `λ e^{−λt} (λt)^{i−1} / (i−1)!`.
pub fn filter_psi(lambda: f64, i: usize, t: f64) -> f64 {
    assert!(i >= 1, "kernel order starts at 1");
    if t < 0.0 {
        return 0.0;
    }
    if i == 1 {
        return lambda * (-lambda * t).exp();
    }
    if t == 0.0 {
        return 0.0;
    }
    let k = (i - 1) as f64;
    let log = k * (lambda * t).ln() - lambda * t - statrs::function::gamma::ln_gamma(k + 1.0);
    lambda * log.exp()
}

/// Moving-average weight `φ(t) = wᵀ Λ e^{−Λt} b` on each grid point.
pub fn filter_phi(params: &ModelParams, w: &Vector, t_grid: &[f64]) -> Result<Vec<f64>> {
    if w.len() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "w has length {}, model has p = {}",
            w.len(),
            params.dim()
        )));
    }
    let lw = params.lambda.transpose() * w;
    t_grid
        .iter()
        .map(|&t| {
            let e = crate::linalg::expm(&(-&params.lambda * t))?;
            Ok(lw.dot(&(e * &params.b)))
        })
        .collect()
}

/// Numerical admissibility check of a filter.
#[derive(Debug, Clone, Copy)]
pub struct FilterCheck {
    pub w_dot_b: f64,
    pub min_value: f64,
    pub integral: f64,
}

/// Evaluates φ on `n_grid` points over `[0, 20/λ_min]` and integrates it on
/// `[0, ∞)`.
pub fn check_filter(params: &ModelParams, w: &Vector, n_grid: usize) -> Result<FilterCheck> {
    let lmin = params.lambda_min()?;
    if !(lmin > 0.0) {
        return Err(Error::InvalidModel(vec![Violation::LambdaNotRealPositive {
            re: lmin,
            im: 0.0,
        }]));
    }
    let n = n_grid.max(2);
    let grid: Vec<f64> = (0..n)
        .map(|i| 20.0 / lmin * i as f64 / (n - 1) as f64)
        .collect();
    let values = filter_phi(params, w, &grid)?;
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let lw = params.lambda.transpose() * w;
    let phi = |t: f64| match crate::linalg::expm(&(-&params.lambda * t)) {
        Ok(e) => lw.dot(&(e * &params.b)),
        Err(_) => 0.0,
    };
    let q = quad::integrate_to_infinity(phi, 0.0, 1e-12, 1e-12, 2000);
    Ok(FilterCheck {
        w_dot_b: w.dot(&params.b),
        min_value,
        integral: q.value,
    })
}

/// Rank-one model: `β = β₀ w`, `Γ = γ₀ w wᵀ` with the canonical Λ, b of `jordan`.
pub fn rank_one(
    jordan: &JordanSpec,
    w: &Vector,
    alpha: f64,
    beta0: f64,
    gamma0: f64,
) -> Result<ModelParams> {
    rank_one_with(jordan.lambda_matrix(), jordan.b_vector(), w, alpha, beta0, gamma0)
}

/// Rank-one construction for an arbitrary (Λ, b).
pub fn rank_one_with(
    lambda: DenseMatrix,
    b: Vector,
    w: &Vector,
    alpha: f64,
    beta0: f64,
    gamma0: f64,
) -> Result<ModelParams> {
    if !(alpha > 0.0) {
        return Err(Error::ConstraintViolation(format!("alpha = {alpha} must be > 0")));
    }
    if !(gamma0 >= 0.0) {
        return Err(Error::ConstraintViolation(format!("gamma0 = {gamma0} must be >= 0")));
    }
    if beta0 * beta0 > alpha * gamma0 * (1.0 + 1e-12) {
        return Err(Error::ConstraintViolation(format!(
            "beta0^2 = {} exceeds alpha*gamma0 = {}",
            beta0 * beta0,
            alpha * gamma0
        )));
    }
    let beta = w * beta0;
    let gamma = w * w.transpose() * gamma0;
    let mut m = ModelParams::new(lambda, b, alpha, beta, gamma)?;
    m.rank_one = Some(RankOne {
        w: w.as_slice().to_vec(),
        beta0,
        gamma0,
    });
    Ok(m)
}

/// Result of an equivalent change of measure with market price of risk
/// `μ₀ + μ₁ᵀ y`.
#[derive(Debug, Clone)]
pub struct MeasureChange {
    /// Model in the shifted offsets `ỹ = y − shift` under the new measure.
    pub params: ModelParams,
    pub shift: Vector,
    /// Admissibility violations of the transformed model (reported, not
    /// rejected).
    pub violations: Vec<Violation>,
}

pub fn change_of_measure(params: &ModelParams, mu0: f64, mu1: &Vector) -> Result<MeasureChange> {
    let p = params.dim();
    if mu1.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "mu1 has length {}, model has p = {p}",
            mu1.len()
        )));
    }
    let lu = params.lambda.clone().lu();
    let linv_b = lu
        .solve(&params.b)
        .ok_or(Error::Linalg(crate::linalg::LinalgError::Singular))?;
    if (mu1.dot(&linv_b) - 1.0).abs() < 1e-12 {
        return Err(Error::SingularTransform);
    }
    let lambda_t = &params.lambda - &params.b * mu1.transpose();
    let shift = lambda_t
        .clone()
        .lu()
        .solve(&params.b)
        .ok_or(Error::SingularTransform)?
        * mu0;
    // σ² in terms of ỹ: expand α + 2βᵀ(ỹ+s) + (ỹ+s)ᵀΓ(ỹ+s).
    let alpha = params.variance(&shift);
    let beta = &params.beta + &params.gamma * &shift;
    let new = ModelParams {
        label: params.label.clone(),
        lambda: lambda_t,
        b: params.b.clone(),
        alpha,
        beta,
        gamma: params.gamma.clone(),
        rank_one: None,
    };
    let violations = new.validate();
    Ok(MeasureChange {
        params: new,
        shift,
        violations,
    })
}

/// Static diagnostics of a model, as tabulated for the reference models.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub y_min: Vector,
    pub sigma_min: f64,
    pub sigma_infty: f64,
    pub kurt_infty: f64,
    pub kappa: f64,
    pub kappa_tilde: f64,
    /// Smallest real parts of the spectra of A₂₂, A₃₃, A₄₄.
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
}

pub fn diagnostics(params: &ModelParams) -> Result<Diagnostics> {
    params.ensure_valid()?;
    let sys = crate::moments::MomentSystem::build(params)?;
    let summary = sys.stationary_summary()?;
    let spectra = sys.stability()?;
    let (y_min, sigma_min) = params.variance_min();
    Ok(Diagnostics {
        y_min,
        sigma_min,
        sigma_infty: summary.sigma2_infty.sqrt(),
        kurt_infty: summary.kurt_infty,
        kappa: summary.kappa,
        kappa_tilde: summary.kappa_tilde,
        mu2: spectra.mu[1],
        mu3: spectra.mu[2],
        mu4: spectra.mu[3],
    })
}
