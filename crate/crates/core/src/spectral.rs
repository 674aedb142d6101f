//! Finite spectral truncation of the state space.
//!
//! Everything is diagonal in the eigenbasis `e_k` of the generator: `-A` has
//! eigenvalues `gamma_k`, the covariance `Q` of the Gaussian reference measure
//! has eigenvalues `q_k`. Vectors are stored as their `d` eigen-coordinates.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the truncated space, in eigen-coordinates.
pub type HVector = DVector<f64>;

/// Sign of the `<h, z>_0` term in the Cameron–Martin density.
///
/// `Corrected` gives `exp(-<h,z>_0 - |h|_0^2 / 2)`, the density of `mu(. + h)`
/// against `mu`. `Paper` flips the linear term and is kept as a negative
/// control; it propagates into the IBP weight and the Girsanov weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmSign {
    #[default]
    Corrected,
    Paper,
}

impl CmSign {
    /// Coefficient multiplying `<h, z>_0` in the exponent.
    pub fn factor(self) -> f64 {
        match self {
            CmSign::Corrected => -1.0,
            CmSign::Paper => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    gamma: Vec<f64>,
    q: Vec<f64>,
    frac_delta: Option<f64>,
}

impl SpectralModel {
    /// Builds a model from explicit eigenvalue sequences.
    pub fn new(gamma: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::param("dim", "truncation dimension must be positive"));
        }
        if gamma.len() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: gamma.len(),
                got: q.len(),
            });
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Hypothesis {
                label: "H3",
                reason: "generator eigenvalues must be positive".into(),
            });
        }
        if gamma.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Hypothesis {
                label: "H3",
                reason: "generator eigenvalues must be non-decreasing".into(),
            });
        }
        if q.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Hypothesis {
                label: "H2",
                reason: "covariance eigenvalues must be positive".into(),
            });
        }
        Ok(Self {
            gamma,
            q,
            frac_delta: None,
        })
    }

    /// Fractional link `Q = ((-A)^delta)^{-1}`, i.e. `q_k = gamma_k^{-delta}`.
    pub fn fractional(gamma: Vec<f64>, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let q = gamma.iter().map(|g| g.powf(-delta)).collect();
        let mut model = Self::new(gamma, q)?;
        model.frac_delta = Some(delta);
        Ok(model)
    }

    /// `gamma_k = scale * k` for `k = 1..=dim`.
    pub fn linear_gamma(dim: usize, scale: f64) -> Vec<f64> {
        (1..=dim).map(|k| scale * k as f64).collect()
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn frac_delta(&self) -> Option<f64> {
        self.frac_delta
    }

    /// Smallest generator eigenvalue, the dissipativity margin.
    pub fn gamma1(&self) -> f64 {
        self.gamma[0]
    }

    pub fn trace_q(&self) -> f64 {
        self.q.iter().sum()
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `S(t) x`.
    pub fn semigroup_apply(&self, t: f64, x: &HVector) -> Result<HVector> {
        if !(t >= 0.0) {
            return Err(Error::param("t", format!("semigroup time must be >= 0, got {t}")));
        }
        self.check_dim(x.as_slice())?;
        Ok(HVector::from_iterator(
            self.dim(),
            self.gamma.iter().zip(x.iter()).map(|(g, xk)| (-g * t).exp() * xk),
        ))
    }

    /// Diagonal of `S(t)`.
    pub fn semigroup_diag(&self, t: f64) -> Vec<f64> {
        self.gamma.iter().map(|g| (-g * t).exp()).collect()
    }

    /// Diagonal of `int_0^h S(u) du`, entries `(1 - exp(-gamma_k h)) / gamma_k`.
    pub fn semigroup_integral(&self, h: f64) -> Result<Vec<f64>> {
        if !(h > 0.0) {
            return Err(Error::param("h", format!("step must be positive, got {h}")));
        }
        Ok(self.gamma.iter().map(|&g| phi1(g, h)).collect())
    }

    /// `<x, y>_0 = sum_k x_k y_k / q_k`.
    pub fn rkhs_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).zip(&self.q).map(|((a, b), q)| a * b / q).sum()
    }

    /// `<b, Q b>`, the variance of `<b, z>` under `mu`.
    pub fn rkhs_dual_quadratic(&self, b: &[f64]) -> f64 {
        b.iter().zip(&self.q).map(|(b, q)| b * b * q).sum()
    }

    /// `Q^{-1} x`.
    pub fn q_inv(&self, x: &[f64]) -> HVector {
        HVector::from_iterator(self.dim(), x.iter().zip(&self.q).map(|(a, q)| a / q))
    }

    /// Cameron–Martin density `phi(z, h)`.
    pub fn cm_density(&self, z: &[f64], h: &[f64], sign: CmSign) -> f64 {
        self.log_cm_density(z, h, sign).exp()
    }

    pub fn log_cm_density(&self, z: &[f64], h: &[f64], sign: CmSign) -> f64 {
        sign.factor() * self.rkhs_inner(h, z) - 0.5 * self.rkhs_inner(h, h)
    }

    /// One draw from the centred Gaussian measure with covariance `Q`.
    pub fn sample_mu<R: Rng + ?Sized>(&self, rng: &mut R) -> HVector {
        let mut out = HVector::zeros(self.dim());
        self.fill_mu(rng, out.as_mut_slice());
        out
    }

    pub(crate) fn fill_mu<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, q) in out.iter_mut().zip(&self.q) {
            let n: f64 = rng.sample(StandardNormal);
            *o = q.sqrt() * n;
        }
    }

    /// `||(-A)^delta S(t)|| = max_k gamma_k^delta exp(-gamma_k t)`.
    pub fn frac_power_norm(&self, delta: f64, t: f64) -> Result<f64> {
        check_delta(delta)?;
        if !(t > 0.0) {
            return Err(Error::param("t", format!("must be positive, got {t}")));
        }
        Ok(self
            .gamma
            .iter()
            .map(|g| g.powf(delta) * (-g * t).exp())
            .fold(0.0, f64::max))
    }

    /// Continuum supremum `(delta / e)^delta` of `t^delta gamma^delta exp(-gamma t)`.
    pub fn frac_power_constant(delta: f64) -> f64 {
        (delta / std::f64::consts::E).powf(delta)
    }

    /// `||Q^{-1} S(u)|| = max_k exp(-gamma_k u) / q_k`.
    pub fn q_inv_semigroup_norm(&self, u: f64) -> f64 {
        self.gamma
            .iter()
            .zip(&self.q)
            .map(|(g, q)| (-g * u).exp() / q)
            .fold(0.0, f64::max)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::param("delta", format!("must lie in (0, 1/2), got {delta}")));
    }
    Ok(())
}

/// `(1 - exp(-g h)) / g`, switching to its series when `g h` is tiny.
pub(crate) fn phi1(g: f64, h: f64) -> f64 {
    let x = g * h;
    if x < 1e-8 {
        h * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / g
    }
}
