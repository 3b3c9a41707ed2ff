//! Flat parameter vectors — the unit of communication between agents and the
//! server. A `ParamVector` is an ordered view of every model parameter; two
//! vectors are combinable only when they flatten the same architecture layout.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Opaque tag identifying the architecture layout a vector flattens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutId(pub String);

impl LayoutId {
    pub fn new(id: impl Into<String>) -> Self {
        LayoutId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for LayoutId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Flat, ordered view of all model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout_id: LayoutId,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout_id: LayoutId) -> Self {
        ParamVector { values, layout_id }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            layout_id: self.layout_id.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_combinable(&self, other: &ParamVector) -> Result<()> {
        if self.layout_id != other.layout_id {
            return Err(SimError::LayoutMismatch {
                expected: self.layout_id.0.clone(),
                got: other.layout_id.0.clone(),
            });
        }
        if self.values.len() != other.values.len() {
            return Err(SimError::ShapeMismatch(format!(
                "parameter vectors of layout `{}` differ in length: {} vs {}",
                self.layout_id,
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_combinable(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ParamVector::new(values, self.layout_id.clone()))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_combinable(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector::new(values, self.layout_id.clone()))
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector::new(
            self.values.iter().map(|v| v * factor).collect(),
            self.layout_id.clone(),
        )
    }

    /// In-place `self += factor * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, factor: f64) -> Result<()> {
        self.check_combinable(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Squared L2 distance to `other`.
    pub fn sq_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_combinable(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec(), LayoutId::new("t"))
    }

    #[test]
    fn add_sub_scale() {
        let a = pv(&[1.0, 2.0]);
        let b = pv(&[3.0, -1.0]);
        assert_eq!(a.add(&b).unwrap().values, vec![4.0, 1.0]);
        assert_eq!(b.sub(&a).unwrap().values, vec![2.0, -3.0]);
        assert_eq!(a.scale(2.0).values, vec![2.0, 4.0]);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let a = pv(&[1.0]);
        let b = ParamVector::new(vec![1.0], LayoutId::new("other"));
        assert!(matches!(a.add(&b), Err(SimError::LayoutMismatch { .. })));
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = pv(&[1.0]);
        let b = pv(&[1.0, 2.0]);
        assert!(matches!(a.add(&b), Err(SimError::ShapeMismatch(_))));
    }

    #[test]
    fn norm_and_distance() {
        let a = pv(&[3.0, 4.0]);
        assert_eq!(a.l2_norm(), 5.0);
        assert_eq!(a.sq_distance(&pv(&[0.0, 0.0])).unwrap(), 25.0);
    }
}
