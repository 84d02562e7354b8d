//! Forward variance `v_t(s) = E[σ²_{t+s} | F_t]`, its minimum envelope and
//! the principal components of the forward curve.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{
    pinv, pivoted_cholesky, solve_lyapunov, symmetric_eigen_desc, unvec, DenseMatrix, Vector,
    DEFAULT_CHOLESKY_TOL,
};
use crate::moments::{EtaState, MomentSystem};

/// Relative cutoff for pseudo-inverses of Ψ^{(Q)}.
const PINV_RCOND: f64 = 1e-10;

/// Default emission grid: 200 geometric points on `[1e-3, 5]` years.
pub fn default_grid() -> Vec<f64> {
    geometric_grid(1e-3, 5.0, 200)
}

pub fn geometric_grid(from: f64, to: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![from];
    }
    let r = (to / from).ln() / (n - 1) as f64;
    (0..n).map(|i| from * (r * i as f64).exp()).collect()
}

/// `ψ(s) = (e^{−Ãs})ᵀ g` split into its `y` and `q` parts.
#[derive(Debug, Clone)]
pub struct ForwardLoadings {
    pub p: usize,
    pub psi: Vector,
}

impl ForwardLoadings {
    pub fn psi_y(&self) -> Vector {
        self.psi.rows(0, self.p).into_owned()
    }

    /// `Ψ^{(Q)}`, symmetrised from the last `p²` entries.
    pub fn psi_q(&self) -> DenseMatrix {
        let p = self.p;
        let m = unvec(&self.psi.rows(p, p * p).into_owned(), p, p).expect("p² entries");
        (&m + m.transpose()) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    /// Forward variance from `y = 0`.
    pub v0: f64,
    /// Minimum over all `y` of the forward variance at this horizon.
    pub v_min: f64,
}

/// Forward-variance evaluator for a stationary model.
#[derive(Debug)]
pub struct ForwardCurve<'a> {
    sys: &'a MomentSystem,
    sigma2_infty: f64,
    eta_infty: Vector,
}

impl<'a> ForwardCurve<'a> {
    pub fn new(sys: &'a MomentSystem) -> Result<Self> {
        let kappa = sys.kappa()?;
        let lam = crate::linalg::eigenvalues(sys.a_tilde())?;
        if let Some(z) = lam.iter().find(|z| z.re <= 0.0) {
            return Err(Error::NotStationary(format!(
                "Ã has eigenvalue {:.6}{:+.6}i",
                z.re, z.im
            )));
        }
        if !(kappa < 1.0) {
            return Err(Error::NotStationary(format!("kappa = {kappa} >= 1")));
        }
        Ok(ForwardCurve {
            sys,
            sigma2_infty: sys.params().alpha / (1.0 - kappa),
            eta_infty: sys.eta_infty(),
        })
    }

    pub fn sigma2_infty(&self) -> f64 {
        self.sigma2_infty
    }

    pub fn loadings(&self, s: f64) -> Result<ForwardLoadings> {
        Ok(ForwardLoadings {
            p: self.sys.dim(),
            psi: self.sys.psi(s)?,
        })
    }

    /// `v_t(s) = σ∞² + ψ(s)ᵀ(η_t − η∞)`.
    pub fn variance(&self, eta: &EtaState, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(Error::ConfigInvalid(format!("negative horizon {s}")));
        }
        let v = eta.as_vector();
        if s == 0.0 {
            // Affine in η: exactly α + gᵀη.
            return Ok(self.sys.params().alpha + self.sys.g().dot(&v));
        }
        let psi = self.sys.psi(s)?;
        Ok(self.sigma2_infty + psi.dot(&(v - &self.eta_infty)))
    }

    /// Forward variance for a path-derived state `η = (y; y⊗y)`.
    pub fn variance_at(&self, y: &Vector, s: f64) -> Result<f64> {
        self.variance(&EtaState::from_y(y), s)
    }

    /// `v⁰(s)` and `v_min(s) = v⁰ − ¼ ψ_yᵀ (Ψ_Q)⁺ ψ_y`, the minimum of
    /// `v⁰ + yᵀψ_y + yᵀΨ_Q y` over `y`.
    pub fn envelope(&self, s: f64) -> Result<Envelope> {
        let l = self.loadings(s)?;
        let v0 = self.sigma2_infty - l.psi.dot(&self.eta_infty);
        let psi_y = l.psi_y();
        let psi_q = l.psi_q();
        let (eig, _) = symmetric_eigen_desc(&psi_q);
        let scale = eig.amax().max(psi_y.amax()).max(f64::MIN_POSITIVE);
        let min_eig = eig.min();
        if min_eig < -1e-10 * scale {
            return Err(Error::NonConvexSlice { s, min_eig });
        }
        let ip = pinv(&psi_q, PINV_RCOND);
        // ψ_y must lie in the range of Ψ_Q, otherwise the slice is unbounded.
        let resid = &psi_y - &psi_q * (&ip * &psi_y);
        if resid.amax() > 1e-8 * scale {
            return Err(Error::UnboundedSlice { s });
        }
        let v_min = v0 - 0.25 * psi_y.dot(&(ip * &psi_y));
        Ok(Envelope { v0, v_min })
    }

    /// Minimiser `y* = −½ Ψ_Q⁺ ψ_y` of the slice at horizon `s`.
    pub fn envelope_argmin(&self, s: f64) -> Result<Vector> {
        let l = self.loadings(s)?;
        Ok(-(pinv(&l.psi_q(), PINV_RCOND) * l.psi_y()) * 0.5)
    }
}

/// Duplication matrix: `vec(S) = Dup · vech(S)` for symmetric `S`
/// (column-major lower triangle).
pub fn duplication(p: usize) -> DenseMatrix {
    let n = p * (p + 1) / 2;
    let mut d = DenseMatrix::zeros(p * p, n);
    for j in 0..p {
        for i in 0..p {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            d[(i + j * p, vech_index(p, r, c))] = 1.0;
        }
    }
    d
}

/// Elimination matrix: `vech(S) = Elim · vec(S)`.
pub fn elimination(p: usize) -> DenseMatrix {
    let n = p * (p + 1) / 2;
    let mut e = DenseMatrix::zeros(n, p * p);
    for j in 0..p {
        for i in j..p {
            e[(vech_index(p, i, j), i + j * p)] = 1.0;
        }
    }
    e
}

fn vech_index(p: usize, i: usize, j: usize) -> usize {
    // Columns 0..j contribute p, p-1, …, p-j+1 entries.
    j * p - j * j.saturating_sub(1) / 2 + (i - j)
}

/// Principal components of the forward-variance curve in the reduced
/// coordinates `(y; vech(yyᵀ))`.
#[derive(Debug, Clone)]
pub struct PcaDecomposition {
    /// Component variances, descending.
    pub eigenvalues: Vector,
    pub eigenvectors: DenseMatrix,
    pub rank: usize,
    /// `F = ∫₀^∞ ψ ψᵀ dt` in reduced coordinates.
    pub f_matrix: DenseMatrix,
    pub r_factor: DenseMatrix,
    pub r_pinv: DenseMatrix,
    /// Reduced Ω.
    pub omega: DenseMatrix,
    /// `T` with `η = T η_r`; reduced loadings are `Tᵀψ`.
    pub reduction: DenseMatrix,
    a_tilde: DenseMatrix,
    g: Vector,
}

impl PcaDecomposition {
    /// Reduced loadings `Tᵀψ(t)`.
    pub fn psi_reduced(&self, t: f64) -> Result<Vector> {
        let psi = if t == 0.0 {
            self.g.clone()
        } else {
            crate::linalg::expm(&(-self.a_tilde.transpose() * t))? * &self.g
        };
        Ok(self.reduction.transpose() * psi)
    }

    /// Factor curves `u(t) = Vᵀ R⁺ ψ(t)`.
    pub fn factor_curves(&self, t: f64) -> Result<Vector> {
        Ok(self.eigenvectors.transpose() * (&self.r_pinv * self.psi_reduced(t)?))
    }

    /// `Cov(v(s₁), v(s₂)) = u(s₁)ᵀ D u(s₂)`.
    pub fn covariance(&self, s1: f64, s2: f64) -> Result<f64> {
        let u1 = self.factor_curves(s1)?;
        let u2 = self.factor_curves(s2)?;
        Ok(u1.component_mul(&self.eigenvalues).dot(&u2))
    }

    /// Number of components with variance above `rel · D₁`.
    pub fn significant_components(&self, rel: f64) -> usize {
        let top = self.eigenvalues.amax();
        self.eigenvalues.iter().filter(|&&d| d > rel * top).count()
    }
}

pub fn pca(sys: &MomentSystem, omega: &DenseMatrix, tol: f64) -> Result<PcaDecomposition> {
    let p = sys.dim();
    let n = p + p * p;
    if omega.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "Ω is {:?}, expected {n}x{n}",
            omega.shape()
        )));
    }
    let f_full = solve_lyapunov(sys.a_tilde(), sys.g())?;
    let nr = p + p * (p + 1) / 2;
    let mut t = DenseMatrix::zeros(n, nr);
    t.view_mut((0, 0), (p, p)).copy_from(&DenseMatrix::identity(p, p));
    t.view_mut((p, p), (p * p, nr - p)).copy_from(&duplication(p));
    let mut l = DenseMatrix::zeros(nr, n);
    l.view_mut((0, 0), (p, p)).copy_from(&DenseMatrix::identity(p, p));
    l.view_mut((p, p), (nr - p, p * p)).copy_from(&elimination(p));

    let f = t.transpose() * &f_full * &t;
    let f = (&f + f.transpose()) * 0.5;
    let om = &l * omega * l.transpose();
    let om = (&om + om.transpose()) * 0.5;

    let ch = pivoted_cholesky(&f, tol)?;
    let inner = ch.r.transpose() * &om * &ch.r;
    let (d, v) = symmetric_eigen_desc(&inner);
    Ok(PcaDecomposition {
        eigenvalues: d,
        eigenvectors: v,
        rank: ch.rank,
        f_matrix: f,
        r_factor: ch.r,
        r_pinv: ch.r_pinv,
        omega: om,
        reduction: t,
        a_tilde: sys.a_tilde().clone(),
        g: sys.g().clone(),
    })
}

pub fn pca_default(sys: &MomentSystem) -> Result<PcaDecomposition> {
    let omega = sys.omega()?;
    pca(sys, &omega, DEFAULT_CHOLESKY_TOL)
}

/// Columns `t, u₁(t)·√D₁, …`.
pub fn pca_curves_csv(dec: &PcaDecomposition, grid: &[f64]) -> Result<String> {
    let mut out = String::from("t");
    for i in 0..dec.rank {
        write!(out, ",pc{}", i + 1).unwrap();
    }
    out.push('\n');
    for &t in grid {
        let u = dec.factor_curves(t)?;
        write!(out, "{t:.16e}").unwrap();
        for i in 0..dec.rank {
            write!(out, ",{:.16e}", u[i] * dec.eigenvalues[i].max(0.0).sqrt()).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Component variances with explained fractions.
pub fn pca_eigenvalues_csv(dec: &PcaDecomposition) -> String {
    let total: f64 = dec.eigenvalues.iter().map(|d| d.max(0.0)).sum();
    let mut out = String::from("component,variance,fraction\n");
    for (i, d) in dec.eigenvalues.iter().enumerate() {
        let frac = if total > 0.0 { d.max(0.0) / total } else { 0.0 };
        writeln!(out, "{},{d:.16e},{frac:.16e}", i + 1).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec;
    use crate::model::ModelParams;

    #[test]
    fn duplication_and_elimination() {
        for p in 1..=4 {
            let mut s = DenseMatrix::zeros(p, p);
            for i in 0..p {
                for j in 0..=i {
                    let v = (i * 7 + j * 3) as f64 + 0.5;
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
            let vech = elimination(p) * vec(&s);
            assert_eq!(vech.len(), p * (p + 1) / 2);
            assert_eq!(duplication(p) * vech, vec(&s));
        }
    }

    #[test]
    fn vech_layout() {
        // p = 3: (0,0),(1,0),(2,0),(1,1),(2,1),(2,2)
        assert_eq!(vech_index(3, 0, 0), 0);
        assert_eq!(vech_index(3, 2, 0), 2);
        assert_eq!(vech_index(3, 1, 1), 3);
        assert_eq!(vech_index(3, 2, 1), 4);
        assert_eq!(vech_index(3, 2, 2), 5);
    }

    #[test]
    fn spot_value_at_zero_horizon() {
        let p = ModelParams::scalar(6.0, 0.0064, 0.0, 3.6334);
        let sys = MomentSystem::build(&p).unwrap();
        let fc = ForwardCurve::new(&sys).unwrap();
        let zero = EtaState {
            y: Vector::zeros(1),
            q: Vector::zeros(1),
        };
        assert_eq!(fc.variance(&zero, 0.0).unwrap(), 0.0064);
        let y = Vector::from_element(1, 0.07);
        assert!((fc.variance_at(&y, 0.0).unwrap() - p.variance(&y)).abs() < 1e-17);
    }

    #[test]
    fn scalar_symmetric_rank_one() {
        let sys = MomentSystem::build(&ModelParams::scalar(4.0, 0.0064, 0.0, 2.0)).unwrap();
        let dec = pca_default(&sys).unwrap();
        assert_eq!(dec.rank, 1);
    }

    #[test]
    fn envelope_at_zero_is_sigma_min() {
        let p = ModelParams::scalar(6.0, 0.0133, -0.18, 3.0);
        let sys = MomentSystem::build(&p).unwrap();
        let env = ForwardCurve::new(&sys).unwrap().envelope(0.0).unwrap();
        assert!((env.v0 - 0.0133).abs() < 1e-15);
        assert!((env.v_min - 0.0025).abs() < 1e-14);
    }
}
