//! Dense linear algebra used throughout the engine.
//!
//! Everything is dense and column-major. `vec` stacks columns, and every
//! Kronecker identity in the crate relies on that single convention:
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest state dimension accepted by the moment machinery. At `p = 6` the
/// full moment matrix is 1554 × 1554.
pub const MAX_STATE_DIM: usize = 6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LinalgError {
    #[error("state dimension {p} exceeds the cap of {cap}")]
    DimensionCap { p: usize, cap: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix exponential overflow (norm {norm:e})")]
    Overflow { norm: f64 },
    #[error("matrix is not stable: eigenvalue {re:+.6e}{im:+.6e}i has non-positive real part")]
    Unstable { re: f64, im: f64 },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("matrix is not positive semidefinite: pivot {pivot:e} below -{threshold:e}")]
    NotPsd { pivot: f64, threshold: f64 },
    #[error("matrix is singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (ma, na) = a.shape();
    let (mb, nb) = b.shape();
    let mut out = DenseMatrix::zeros(ma * mb, na * nb);
    for j in 0..na {
        for i in 0..ma {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for jb in 0..nb {
                for ib in 0..mb {
                    out[(i * mb + ib, j * nb + jb)] = s * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two column vectors.
pub fn kron_vec(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// `k`-fold Kronecker power of a vector (`k = 0` gives the scalar 1).
pub fn kron_power(v: &Vector, k: usize) -> Vector {
    let mut out = Vector::from_element(1, 1.0);
    for _ in 0..k {
        out = kron_vec(v, &out);
    }
    out
}

/// Column-stacking vectorisation.
pub fn vec(a: &DenseMatrix) -> Vector {
    Vector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if rows * cols != v.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DenseMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// The operators `Λ⁽ᵏ⁾`, `B⁽ᵏ⁾`, `C⁽ᵏ⁾` for `k = 1..=4`, built by the recursions
///
/// ```text
/// Λ⁽ᵏ⁺¹⁾ = I_p ⊗ Λ⁽ᵏ⁾ + Λ ⊗ I_{pᵏ}
/// B⁽ᵏ⁺¹⁾ = I_p ⊗ B⁽ᵏ⁾ + b ⊗ C⁽ᵏ⁾        (B⁽¹⁾ = 0)
/// C⁽ᵏ⁺¹⁾ = I_p ⊗ C⁽ᵏ⁾ + b ⊗ I_{pᵏ}        (C⁽¹⁾ = b)
/// ```
///
/// Index `k - 1` of each list holds the order-`k` operator. `B⁽¹⁾` is stored
/// as an empty `p × 0` matrix.
#[derive(Debug, Clone)]
pub struct KronOperatorSet {
    pub p: usize,
    pub lambda_k: Vec<DenseMatrix>,
    pub b_k: Vec<DenseMatrix>,
    pub c_k: Vec<DenseMatrix>,
}

pub const MAX_MOMENT_ORDER: usize = 4;

impl KronOperatorSet {
    pub fn lambda(&self, k: usize) -> &DenseMatrix {
        &self.lambda_k[k - 1]
    }

    pub fn b(&self, k: usize) -> &DenseMatrix {
        &self.b_k[k - 1]
    }

    pub fn c(&self, k: usize) -> &DenseMatrix {
        &self.c_k[k - 1]
    }
}

pub fn build_kron_operators(lambda: &DenseMatrix, b: &Vector) -> Result<KronOperatorSet> {
    let p = b.len();
    if lambda.shape() != (p, p) {
        return Err(LinalgError::DimensionMismatch(format!(
            "Λ is {:?} but b has length {p}",
            lambda.shape()
        )));
    }
    if p > MAX_STATE_DIM {
        return Err(LinalgError::DimensionCap { p, cap: MAX_STATE_DIM });
    }
    let eye_p = DenseMatrix::identity(p, p);
    let b_col = DenseMatrix::from_column_slice(p, 1, b.as_slice());

    let mut lambda_k = vec![lambda.clone()];
    let mut b_k = vec![DenseMatrix::zeros(p, 0)];
    let mut c_k = vec![b_col.clone()];
    for k in 1..MAX_MOMENT_ORDER {
        let eye_pk = DenseMatrix::identity(p.pow(k as u32), p.pow(k as u32));
        let l_next = kron(&eye_p, &lambda_k[k - 1]) + kron(lambda, &eye_pk);
        let bc = kron(&b_col, &c_k[k - 1]);
        let b_next = if k == 1 {
            bc
        } else {
            kron(&eye_p, &b_k[k - 1]) + bc
        };
        let c_next = kron(&eye_p, &c_k[k - 1]) + kron(&b_col, &eye_pk);
        lambda_k.push(l_next);
        b_k.push(b_next);
        c_k.push(c_next);
    }
    Ok(KronOperatorSet {
        p,
        lambda_k,
        b_k,
        c_k,
    })
}

fn one_norm(a: &DenseMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Padé coefficients and the θ_m thresholds of Higham (2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn pade_low(a: &DenseMatrix, coef: &[f64]) -> (DenseMatrix, DenseMatrix) {
    let n = a.nrows();
    let eye = DenseMatrix::identity(n, n);
    let a2 = a * a;
    let mut even = eye.clone() * coef[0];
    let mut odd = eye * coef[1];
    let mut pow = DenseMatrix::identity(n, n);
    let m = coef.len() - 1;
    for k in 1..=m / 2 {
        pow = &pow * &a2;
        even += &pow * coef[2 * k];
        odd += &pow * coef[2 * k + 1];
    }
    (a * odd, even)
}

fn pade13(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let n = a.nrows();
    let c = &PADE13;
    let eye = DenseMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * c[13] + &a4 * c[11] + &a2 * c[9];
    let u = a * (&a6 * &inner_u + &a6 * c[7] + &a4 * c[5] + &a2 * c[3] + &eye * c[1]);
    let inner_v = &a6 * c[12] + &a4 * c[10] + &a2 * c[8];
    let v = &a6 * &inner_v + &a6 * c[6] + &a4 * c[4] + &a2 * c[2] + &eye * c[0];
    (u, v)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant (degree up to 13). Works for defective matrices.
pub fn expm(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, m) = a.shape();
    if n != m {
        return Err(LinalgError::DimensionMismatch(format!(
            "expm of a {n}x{m} matrix"
        )));
    }
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(LinalgError::Overflow { norm });
    }
    let (u, v, squarings) = match THETA.iter().find(|(_, th)| norm <= *th) {
        Some(&(deg, _)) => {
            let coef: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(a, coef);
            (u, v, 0)
        }
        None => {
            let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
            if s > 1000 {
                return Err(LinalgError::Overflow { norm });
            }
            let scaled = a * 2f64.powi(-s);
            let (u, v) = pade13(&scaled);
            (u, v, s)
        }
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(LinalgError::Singular)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::Overflow { norm });
    }
    Ok(r)
}

/// All eigenvalues with multiplicity, ordered by ascending real part (ties by
/// imaginary part).
pub fn eigenvalues(a: &DenseMatrix) -> Result<Vec<Complex64>> {
    let (n, m) = a.shape();
    if n != m {
        return Err(LinalgError::DimensionMismatch(format!(
            "eigenvalues of a {n}x{m} matrix"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // The QR sweep occasionally stalls at machine-epsilon deflation on
    // matrices with clustered eigenvalues; relax the threshold step by step.
    let schur = [f64::EPSILON, 1e-14, 1e-13, 1e-12]
        .iter()
        .find_map(|&eps| nalgebra::Schur::try_new(a.clone(), eps, 10_000))
        .ok_or(LinalgError::NoConvergence)?;
    let mut eig: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|c| Complex64::new(c.re, c.im))
        .collect();
    eig.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(eig)
}

/// Smallest real part over the spectrum.
pub fn min_real_eigenvalue(a: &DenseMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .first()
        .map(|z| z.re)
        .unwrap_or(f64::INFINITY))
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn symmetric_eigen_desc(a: &DenseMatrix) -> (Vector, DenseMatrix) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = Vector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DenseMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Moore–Penrose pseudo-inverse; singular values below `rcond · σ_max` are
/// treated as zero.
pub fn pinv(a: &DenseMatrix, rcond: f64) -> DenseMatrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DenseMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rcond * smax;
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut out = DenseMatrix::zeros(n, m);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Solves `Ãᵀ F + F Ã = g gᵀ` for the symmetric `F = ∫₀^∞ ψ ψᵀ dt`,
/// `ψ(t) = exp(-Ã t)ᵀ g`, through the Kronecker system
/// `(Ã ⊗ I + I ⊗ Ã)ᵀ vec(F) = g ⊗ g`.
pub fn solve_lyapunov(a_tilde: &DenseMatrix, g: &Vector) -> Result<DenseMatrix> {
    let n = a_tilde.nrows();
    if a_tilde.ncols() != n || g.len() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "Ã is {:?}, g has length {}",
            a_tilde.shape(),
            g.len()
        )));
    }
    if let Some(z) = eigenvalues(a_tilde)?.into_iter().find(|z| z.re <= 0.0) {
        return Err(LinalgError::Unstable { re: z.re, im: z.im });
    }
    let eye = DenseMatrix::identity(n, n);
    let k = kron(a_tilde, &eye) + kron(&eye, a_tilde);
    let rhs = kron_vec(g, g);
    let x = k
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or(LinalgError::Singular)?;
    let f = unvec(&x, n, n)?;
    Ok((&f + f.transpose()) * 0.5)
}

/// Result of a diagonally pivoted Cholesky factorisation `F = R Rᵀ`.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    /// `n × rank`, full column rank.
    pub r: DenseMatrix,
    pub rank: usize,
    /// Left inverse with `r_pinv · r = I_rank`.
    pub r_pinv: DenseMatrix,
    /// Pivot order used by the factorisation.
    pub pivots: Vec<usize>,
}

/// Default relative pivot tolerance (multiplied by `trace(F)`).
pub const DEFAULT_CHOLESKY_TOL: f64 = 1e-14;

/// Rank-revealing Cholesky with diagonal pivoting. Factorisation stops when
/// the largest remaining pivot drops below `tol · trace(F)`.
pub fn pivoted_cholesky(f: &DenseMatrix, tol: f64) -> Result<PivotedCholesky> {
    let n = f.nrows();
    if f.ncols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "Cholesky of a {n}x{} matrix",
            f.ncols()
        )));
    }
    let trace: f64 = (0..n).map(|i| f[(i, i)]).sum();
    let scale = trace.abs().max(f.amax());
    let threshold = tol * scale;
    let mut work = (f + f.transpose()) * 0.5;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DenseMatrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        // Largest remaining diagonal entry.
        let (piv, &dmax) = (k..n)
            .map(|i| (i, &work[(perm[i], perm[i])]))
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty range");
        if dmax <= threshold {
            if let Some(neg) = (k..n)
                .map(|i| work[(perm[i], perm[i])])
                .find(|&d| d < -threshold)
            {
                return Err(LinalgError::NotPsd {
                    pivot: neg,
                    threshold,
                });
            }
            break;
        }
        perm.swap(k, piv);
        let pk = perm[k];
        let root = dmax.sqrt();
        l[(pk, k)] = root;
        for &pi in &perm[k + 1..] {
            l[(pi, k)] = work[(pi, pk)] / root;
        }
        for &pi in &perm[k + 1..] {
            for &pj in &perm[k + 1..] {
                work[(pi, pj)] -= l[(pi, k)] * l[(pj, k)];
            }
        }
        rank += 1;
    }
    let r = l.columns(0, rank).into_owned();
    let rtr = r.transpose() * &r;
    let r_pinv = match rtr.clone().cholesky() {
        Some(ch) => ch.solve(&r.transpose()),
        None => pinv(&r, 1e-14),
    };
    Ok(PivotedCholesky {
        r,
        rank,
        r_pinv,
        pivots: perm,
    })
}
