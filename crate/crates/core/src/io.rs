//! JSON model files.
//!
//! ```json
//! { "label": "MM1", "lambda": [[1, 0], [-1, 6]], "b": [1, 0],
//!   "w": [0.2, 0.8], "alpha": 0.01, "beta0": 0, "gamma0": 2 }
//! ```
//!
//! `lambda` is a row-major matrix (or a number for one factor); give either
//! `beta`/`gamma` directly or the rank-one triple `w`, `beta0`, `gamma0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};
use crate::model::{rank_one_with, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixField {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorField {
    Scalar(f64),
    Items(Vec<f64>),
}

impl MatrixField {
    fn to_matrix(&self, name: &str) -> Result<DenseMatrix> {
        match self {
            MatrixField::Scalar(x) => Ok(DenseMatrix::from_element(1, 1, *x)),
            MatrixField::Rows(rows) => {
                let n = rows.len();
                let m = rows.first().map_or(0, |r| r.len());
                if n == 0 || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::Parse(format!("{name} must be a rectangular matrix")));
                }
                Ok(DenseMatrix::from_row_iterator(
                    n,
                    m,
                    rows.iter().flatten().copied(),
                ))
            }
        }
    }

    fn from_matrix(m: &DenseMatrix) -> Self {
        if m.shape() == (1, 1) {
            MatrixField::Scalar(m[(0, 0)])
        } else {
            MatrixField::Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
        }
    }
}

impl VectorField {
    fn to_vector(&self) -> Vector {
        match self {
            VectorField::Scalar(x) => Vector::from_element(1, *x),
            VectorField::Items(v) => Vector::from_vec(v.clone()),
        }
    }

    fn from_vector(v: &Vector) -> Self {
        if v.len() == 1 {
            VectorField::Scalar(v[0])
        } else {
            VectorField::Items(v.as_slice().to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub lambda: MatrixField,
    pub b: VectorField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<VectorField>,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<VectorField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<MatrixField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
}

impl ModelFile {
    pub fn to_params(&self) -> Result<ModelParams> {
        let lambda = self.lambda.to_matrix("lambda")?;
        let b = self.b.to_vector();
        let mut params = match (&self.beta, &self.gamma, self.beta0, self.gamma0) {
            (Some(beta), Some(gamma), None, None) => {
                let beta = beta.to_vector();
                let gamma = gamma.to_matrix("gamma")?;
                let mut m = ModelParams::new(lambda, b, self.alpha, beta, gamma)?;
                if let Some(w) = &self.w {
                    // w alone is only a filter weight; keep it for reporting.
                    m.rank_one = Some(crate::model::RankOne {
                        w: w.to_vector().as_slice().to_vec(),
                        beta0: f64::NAN,
                        gamma0: f64::NAN,
                    });
                }
                m
            }
            (None, None, Some(beta0), Some(gamma0)) => {
                let w = self
                    .w
                    .as_ref()
                    .ok_or_else(|| Error::Parse("rank-one form needs w".into()))?
                    .to_vector();
                if w.len() != b.len() {
                    return Err(Error::Parse("w and b differ in length".into()));
                }
                rank_one_with(lambda, b, &w, self.alpha, beta0, gamma0)?
            }
            _ => {
                return Err(Error::Parse(
                    "give either beta and gamma, or beta0 and gamma0 (with w)".into(),
                ))
            }
        };
        params.label = self.label.clone();
        Ok(params)
    }

    pub fn from_params(p: &ModelParams) -> Self {
        let lambda = MatrixField::from_matrix(&p.lambda);
        let b = VectorField::from_vector(&p.b);
        match &p.rank_one {
            Some(r) if r.beta0.is_finite() => ModelFile {
                label: p.label.clone(),
                lambda,
                b,
                w: Some(VectorField::from_vector(&Vector::from_vec(r.w.clone()))),
                alpha: p.alpha,
                beta: None,
                gamma: None,
                beta0: Some(r.beta0),
                gamma0: Some(r.gamma0),
            },
            _ => ModelFile {
                label: p.label.clone(),
                lambda,
                b,
                w: None,
                alpha: p.alpha,
                beta: Some(VectorField::from_vector(&p.beta)),
                gamma: Some(MatrixField::from_matrix(&p.gamma)),
                beta0: None,
                gamma0: None,
            },
        }
    }
}

pub fn parse_model(text: &str) -> Result<ModelParams> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.to_params()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut m = parse_model(&text)?;
    if m.label.is_none() {
        m.label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    Ok(m)
}

pub fn to_json(p: &ModelParams) -> String {
    serde_json::to_string_pretty(&ModelFile::from_params(p)).expect("serialisable")
}
