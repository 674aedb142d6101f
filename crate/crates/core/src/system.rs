//! A fully specified equation: state space, jump law, drift and step size.

use crate::drift::DriftField;
use crate::engine::{default_dt, Integrator};
use crate::error::{Error, Result};
use crate::noise::{sample_jump_path, JumpDensity, JumpPath, SecondaryNoise};
use crate::rng::SampleRng;
use crate::spectral::{CmSign, HVector, SpectralModel};

#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub model: SpectralModel,
    pub density: JumpDensity,
    pub drift: DriftField,
    pub secondary: SecondaryNoise,
    pub dt: f64,
    pub sign: CmSign,
}

impl System {
    pub fn new(model: SpectralModel, density: JumpDensity, drift: DriftField) -> Result<Self> {
        density.check_dim(&model)?;
        drift.check_dim(model.dim())?;
        let dt = default_dt(&model);
        Ok(Self {
            model,
            density,
            drift,
            secondary: SecondaryNoise::None,
            dt,
            sign: CmSign::Corrected,
        })
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        self.dt = dt;
        Ok(self)
    }

    pub fn with_secondary(mut self, secondary: SecondaryNoise) -> Result<Self> {
        secondary.validate()?;
        self.secondary = secondary;
        Ok(self)
    }

    pub fn with_sign(mut self, sign: CmSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn with_drift(mut self, drift: DriftField) -> Result<Self> {
        drift.check_dim(self.model.dim())?;
        self.drift = drift;
        Ok(self)
    }

    pub fn with_density(mut self, density: JumpDensity) -> Result<Self> {
        density.check_dim(&self.model)?;
        self.density = density;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn integrator(&self) -> Result<Integrator<'_>> {
        Integrator::new(&self.model, &self.drift, self.dt)
    }

    /// Draws `L^1` from the primary stream and `L^2` from the secondary one.
    pub fn sample_path(&self, horizon: f64, rng: &mut SampleRng) -> Result<JumpPath> {
        sample_jump_path(
            &self.density,
            &self.model,
            &self.secondary,
            horizon,
            &mut rng.primary,
            &mut rng.secondary,
        )
    }

    /// Covector `w` of the compensator rate of the derivative martingale:
    /// the rate in direction `V` is `<w, V>` with `w = s Q^{-1} m_rho + g_rho`.
    ///
    /// Returned as exactly zero when the two parts cancel to rounding, which
    /// is always the case under the corrected sign.
    pub fn compensator_covector(&self) -> HVector {
        let (m, g) = self.density.compensator_moments(&self.model);
        let qm = self.model.q_inv(m.as_slice());
        let w = &qm * self.sign.factor() + &g;
        let scale = qm.norm() + g.norm();
        if w.norm() <= 1e-13 * scale {
            HVector::zeros(self.dim())
        } else {
            w
        }
    }

    /// Jump contribution of mark `z` in direction `v` to the derivative martingale.
    #[inline]
    pub fn jump_term(&self, z: &[f64], v: &[f64]) -> f64 {
        self.sign.factor() * self.model.rkhs_inner(z, v) + self.density.grad_log_rho_dot(z, v)
    }

    /// `int_0^t <w, S(s) xi> ds`, the exact compensator along a zero-drift tangent.
    pub fn linear_compensator(&self, w: &HVector, xi: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let phi = self.model.semigroup_integral(t).expect("t > 0");
        w.iter().zip(xi).zip(&phi).map(|((a, b), p)| a * b * p).sum()
    }
}
