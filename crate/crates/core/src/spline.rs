//! Piecewise cubic interpolation through a set of knots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Third derivative continuous across the second and second-to-last
    /// knots. Reproduces any cubic exactly.
    #[default]
    NotAKnot,
    /// Zero second derivative at both ends.
    Natural,
}

/// Cubic spline stored as knot abscissae, ordinates and second derivatives.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    /// `x` must be strictly increasing. Natural splines need three knots,
    /// not-a-knot splines four.
    pub fn new(x: &[f64], y: &[f64], boundary: Boundary) -> Result<Self> {
        let n = x.len();
        if y.len() != n {
            return Err(Error::invalid("spline abscissae and ordinates differ in length"));
        }
        let min = match boundary {
            Boundary::Natural => 3,
            Boundary::NotAKnot => 4,
        };
        if n < min {
            return Err(Error::InsufficientData(format!("{boundary:?} spline needs {min} knots, got {n}")));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spline knots must be strictly increasing"));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 1..n - 1 {
            a[(i, i - 1)] = h[i - 1];
            a[(i, i)] = 2.0 * (h[i - 1] + h[i]);
            a[(i, i + 1)] = h[i];
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        match boundary {
            Boundary::Natural => {
                a[(0, 0)] = 1.0;
                a[(n - 1, n - 1)] = 1.0;
            }
            Boundary::NotAKnot => {
                a[(0, 0)] = h[1];
                a[(0, 1)] = -(h[0] + h[1]);
                a[(0, 2)] = h[0];
                let k = n - 1;
                a[(k, k - 2)] = h[k - 1];
                a[(k, k - 1)] = -(h[k - 2] + h[k - 1]);
                a[(k, k)] = h[k - 2];
            }
        }
        let m = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::RankDeficient("spline system is singular".into()))?;
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m: m.iter().copied().collect(),
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&k| k <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Evaluates the spline; outside the knot span the end cubic is continued.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }
}
