//! Bounded Lipschitz drifts `F`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral::HVector;

#[derive(Debug, Clone, PartialEq)]
pub enum DriftField {
    Zero,
    BoundedTanh(TanhDrift),
}

/// `F_i(x) = kappa_i tanh(<row_i(W), x>)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhDrift {
    kappa: Vec<f64>,
    w: DMatrix<f64>,
    lip: f64,
}

impl DriftField {
    /// Tanh drift with the certified constant `max|kappa| * ||W||_2`.
    pub fn bounded_tanh(kappa: Vec<f64>, w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() || w.nrows() != kappa.len() {
            return Err(Error::DimensionMismatch {
                expected: kappa.len(),
                got: w.nrows(),
            });
        }
        if kappa.iter().chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("drift", "non-finite coefficient"));
        }
        let kmax = kappa.iter().fold(0.0f64, |m, k| m.max(k.abs()));
        let lip = kmax * spectral_norm(&w);
        Ok(DriftField::BoundedTanh(TanhDrift { kappa, w, lip }))
    }

    /// Tanh drift with uniform gain `kappa` and a seeded Gaussian coupling
    /// matrix rescaled to unit spectral norm, so that `||F||_Lip = |kappa|`.
    pub fn random_tanh(dim: usize, kappa: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let w: DMatrix<f64> = &w / spectral_norm(&w);
        Self::bounded_tanh(vec![kappa; dim], w)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DriftField::Zero)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            DriftField::Zero => Ok(()),
            DriftField::BoundedTanh(t) if t.kappa.len() == dim => Ok(()),
            DriftField::BoundedTanh(t) => Err(Error::DimensionMismatch {
                expected: dim,
                got: t.kappa.len(),
            }),
        }
    }

    /// Certified Lipschitz constant; also bounds `sup_x ||grad F(x)||`.
    pub fn lip_bound(&self) -> f64 {
        match self {
            DriftField::Zero => 0.0,
            DriftField::BoundedTanh(t) => t.lip,
        }
    }

    /// Bound on every coordinate of `F`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            DriftField::Zero => 0.0,
            DriftField::BoundedTanh(t) => t.kappa.iter().fold(0.0f64, |m, k| m.max(k.abs())),
        }
    }

    pub fn eval(&self, x: &HVector) -> HVector {
        let d = x.len();
        let mut f = vec![0.0; d];
        let mut g = vec![0.0; d];
        self.eval_into(x.as_slice(), &mut f, &mut g);
        HVector::from_vec(f)
    }

    pub fn jacobian(&self, x: &HVector) -> DMatrix<f64> {
        let d = x.len();
        match self {
            DriftField::Zero => DMatrix::zeros(d, d),
            DriftField::BoundedTanh(t) => {
                let mut f = vec![0.0; d];
                let mut g = vec![0.0; d];
                self.eval_into(x.as_slice(), &mut f, &mut g);
                let mut j = t.w.clone();
                for (i, gi) in g.iter().enumerate() {
                    j.row_mut(i).scale_mut(*gi);
                }
                j
            }
        }
    }

    /// Writes `F(x)` into `f` and the row gains `kappa_i (1 - tanh^2)` into
    /// `gain`, so that `grad F(x) v = gain * (W v)`.
    #[inline]
    pub(crate) fn eval_into(&self, x: &[f64], f: &mut [f64], gain: &mut [f64]) {
        match self {
            DriftField::Zero => {
                f.iter_mut().for_each(|v| *v = 0.0);
                gain.iter_mut().for_each(|v| *v = 0.0);
            }
            DriftField::BoundedTanh(t) => {
                let d = x.len();
                for i in 0..d {
                    let mut u = 0.0;
                    for j in 0..d {
                        u += t.w[(i, j)] * x[j];
                    }
                    let th = u.tanh();
                    f[i] = t.kappa[i] * th;
                    gain[i] = t.kappa[i] * (1.0 - th * th);
                }
            }
        }
    }

    /// `out = grad F(x) v` given the gains from [`eval_into`](Self::eval_into).
    #[inline]
    pub(crate) fn apply_gain(&self, gain: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            DriftField::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            DriftField::BoundedTanh(t) => {
                let d = v.len();
                for i in 0..d {
                    let mut u = 0.0;
                    for j in 0..d {
                        u += t.w[(i, j)] * v[j];
                    }
                    out[i] = gain[i] * u;
                }
            }
        }
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn random_tanh_has_requested_lipschitz() {
        let f = DriftField::random_tanh(4, 0.3, 7).unwrap();
        assert!((f.lip_bound() - 0.3).abs() < 1e-12);
        assert_eq!(f.sup_bound(), 0.3);
        assert!(DriftField::Zero.lip_bound() == 0.0);
    }

    proptest! {
        #[test]
        fn bounded_and_jacobian_within_lip(x in proptest::collection::vec(-5.0f64..5.0, 4), seed in 0u64..50) {
            let f = DriftField::random_tanh(4, 0.3, seed).unwrap();
            let x = HVector::from_vec(x);
            let fx = f.eval(&x);
            prop_assert!(fx.iter().all(|v| v.abs() <= 0.3));
            let j = f.jacobian(&x);
            prop_assert!(spectral_norm(&j) <= f.lip_bound() * (1.0 + 1e-12));
            // central differences
            for k in 0..4 {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let col = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
                for i in 0..4 {
                    prop_assert!((col[i] - j[(i, k)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(DriftField::bounded_tanh(vec![1.0; 3], DMatrix::identity(4, 4)).is_err());
        assert!(DriftField::random_tanh(3, 0.3, 1).unwrap().check_dim(4).is_err());
    }
}
