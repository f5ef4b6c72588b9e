//! The flat torus `R^d / Z^d` and momenta in `R^d`.

use crate::error::{Error, Result};

/// Reduce a real number into `[0, 1)`.
#[inline]
pub fn wrap_scalar(x: f64) -> f64 {
    // steps move by much less than a period; `floor` is a libm call on
    // baseline x86-64, so handle the neighbouring cells with one add
    let r = if (0.0..1.0).contains(&x) {
        x
    } else if (-1.0..0.0).contains(&x) {
        x + 1.0
    } else if (1.0..2.0).contains(&x) {
        x - 1.0
    } else {
        x - x.floor()
    };
    // x slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A point of the torus, every coordinate in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPosition(Vec<f64>);

impl TorusPosition {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Translate by a real displacement and wrap back onto the torus.
    pub fn translate(&self, delta: &[f64]) -> Result<TorusPosition> {
        if delta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: delta.len(),
            });
        }
        let x: Vec<f64> = self.0.iter().zip(delta).map(|(a, b)| a + b).collect();
        wrap(&x)
    }
}

impl AsRef<[f64]> for TorusPosition {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Project a real vector onto the torus.
pub fn wrap(x: &[f64]) -> Result<TorusPosition> {
    check_finite(x)?;
    Ok(TorusPosition(x.iter().map(|&v| wrap_scalar(v)).collect()))
}

/// A momentum vector; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum(Vec<f64>);

impl Momentum {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_finite(&p)?;
        Ok(Momentum(p))
    }

    pub fn zeros(dim: usize) -> Self {
        Momentum(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl AsRef<[f64]> for Momentum {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: x[index],
        }),
        None => Ok(()),
    }
}
