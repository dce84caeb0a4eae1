//! Dense `f64` vectors with explicit finiteness checks.
//!
//! All state in this crate (samples, noise, conditions) is a small dense
//! vector, so the type is deliberately thin: a `Vec<f64>` newtype with the
//! handful of BLAS-1 style operations the diffusion code needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense vector of `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Vector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Errors with [`Error::NonFinite`] if any component is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.0.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{what}[{i}] = {v}")));
            }
        }
        Ok(())
    }

    /// Errors with [`Error::DimMismatch`] unless `self.dim() == expected`.
    pub fn ensure_dim(&self, expected: usize, context: &str) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimMismatch {
                expected,
                got: self.dim(),
                context: context.to_string(),
            });
        }
        Ok(())
    }

    /// `self + other`, checked for matching dimensions.
    pub fn add(&self, other: &Vector) -> Result<Vector> {
        other.ensure_dim(self.dim(), "vector add")?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// `self - other`, checked for matching dimensions.
    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        other.ensure_dim(self.dim(), "vector sub")?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `k * self`.
    pub fn scale(&self, k: f64) -> Vector {
        Vector(self.0.iter().map(|a| k * a).collect())
    }

    /// `a * self + b * other`, the workhorse for DDIM update rules.
    pub fn affine(&self, a: f64, other: &Vector, b: f64) -> Result<Vector> {
        other.ensure_dim(self.dim(), "vector affine")?;
        Ok(Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        other.ensure_dim(self.dim(), "vector dot")?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &Vector) -> Result<f64> {
        other.ensure_dim(self.dim(), "vector dist_sq")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(values: Vec<f64>) -> Self {
        Vector(values)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_matches_hand_computation() {
        let a = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        let b = Vector::from_vec(vec![0.5, 0.5, -1.0]);
        assert_eq!(a.add(&b).unwrap().as_slice(), &[1.5, -1.5, 2.0]);
        assert_eq!(a.sub(&b).unwrap().as_slice(), &[0.5, -2.5, 4.0]);
        assert_eq!(a.scale(2.0).as_slice(), &[2.0, -4.0, 6.0]);
        assert_eq!(
            a.affine(2.0, &b, -2.0).unwrap().as_slice(),
            &[1.0, -5.0, 8.0]
        );
        assert_eq!(a.dot(&b).unwrap(), 0.5 - 1.0 - 3.0);
        assert_eq!(a.norm_sq(), 14.0);
        // dist_sq = 0.25 + 6.25 + 16
        assert_eq!(a.dist_sq(&b).unwrap(), 22.5);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let a = Vector::zeros(2);
        let b = Vector::zeros(3);
        assert!(matches!(
            a.add(&b),
            Err(Error::DimMismatch { expected: 2, got: 3, .. })
        ));
    }

    #[test]
    fn finiteness_check_catches_nan_and_inf() {
        let v = Vector::from_vec(vec![0.0, f64::NAN]);
        assert!(matches!(v.ensure_finite("x"), Err(Error::NonFinite(_))));
        let v = Vector::from_vec(vec![f64::INFINITY]);
        assert!(v.ensure_finite("x").is_err());
        let v = Vector::from_vec(vec![1.0, -1.0]);
        assert!(v.ensure_finite("x").is_ok());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let v = Vector::from_vec(vec![0.1, -2.5e-17, 3.0]);
        let text = serde_json::to_string(&v).unwrap();
        let back: Vector = serde_json::from_str(&text).unwrap();
        assert_eq!(v, back);
    }
}
