//! Reweighting of shifted jump marks: the likelihood ratio of one mark, the
//! exponential weight `Z_t`, and Monte Carlo checks of law invariance and of
//! the uniform second-moment bound.

use crate::error::{Error, Result};
use crate::malliavin::TestFunction;
use crate::noise::{dot, JumpPath};
use crate::spectral::HVector;
use crate::stats::{EstimatorResult, McRunner};
use crate::system::System;

/// Marks are shifted by `epsilon * v` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovScenario {
    pub epsilon: f64,
    pub v: HVector,
    pub horizon: f64,
}

impl GirsanovScenario {
    pub fn new(epsilon: f64, v: HVector, horizon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::param("epsilon", format!("must lie in [0, 1], got {epsilon}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
        }
        Ok(Self { epsilon, v, horizon })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, self.v.clone(), self.horizon)
    }

    fn check(&self, sys: &System) -> Result<()> {
        sys.model.check_dim(self.v.as_slice())?;
        if !(sys.density.rho_min() > 0.0) {
            return Err(Error::Hypothesis {
                label: "H1",
                reason: "the second-moment bound needs rho bounded away from zero".into(),
            });
        }
        Ok(())
    }
}

/// `log lambda^eps(z) = log phi(z, eps v) + log rho(z + eps v) - log rho(z)`.
pub fn log_lambda_ratio(sys: &System, scenario: &GirsanovScenario, z: &[f64]) -> f64 {
    if scenario.epsilon == 0.0 {
        return 0.0;
    }
    let h = &scenario.v * scenario.epsilon;
    let shifted: Vec<f64> = z.iter().zip(h.iter()).map(|(a, b)| a + b).collect();
    sys.model.log_cm_density(z, h.as_slice(), sys.sign) + sys.density.rho(&shifted).ln() - sys.density.rho(z).ln()
}

pub fn lambda_ratio(sys: &System, scenario: &GirsanovScenario, z: &[f64]) -> f64 {
    log_lambda_ratio(sys, scenario, z).exp()
}

/// `Z_t`, the product of the mark ratios up to `t`, formed in log space.
///
/// The exponential compensator `int (lambda - 1) rho dmu` vanishes, so no
/// correction factor appears.
pub fn girsanov_weight(sys: &System, scenario: &GirsanovScenario, path: &JumpPath, t: f64) -> f64 {
    let n = path.count_until(t);
    path.events[..n]
        .iter()
        .map(|e| log_lambda_ratio(sys, scenario, e.mark.as_slice()))
        .sum::<f64>()
        .exp()
}

/// The path with every primary mark `z_i` replaced by `z_i + eps v`.
pub fn perturbed_path(scenario: &GirsanovScenario, path: &JumpPath) -> JumpPath {
    let mut out = path.clone();
    if scenario.epsilon != 0.0 {
        let h = &scenario.v * scenario.epsilon;
        for e in &mut out.events {
            e.mark += &h;
        }
    }
    out
}

/// Outcome of [`reweight_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reweighting {
    /// `E[Z_t g(L_t^eps)]`.
    pub weighted: EstimatorResult,
    /// `E[g(L_t)]`.
    pub reference: EstimatorResult,
    /// `E[Z_t]`.
    pub z_mean: EstimatorResult,
}

/// Checks `E[Z_t g(L^{eps}_t)] = E[g(L_t)]` with common random numbers.
pub fn reweight_check(
    sys: &System,
    runner: &McRunner,
    id: &str,
    scenario: &GirsanovScenario,
    g: &TestFunction,
    t: f64,
    n: u64,
) -> Result<Reweighting> {
    Ok(reweight_check_many(sys, runner, id, scenario, std::slice::from_ref(g), t, n)?.remove(0))
}

/// [`reweight_check`] for several functions on shared paths.
pub fn reweight_check_many(
    sys: &System,
    runner: &McRunner,
    id: &str,
    scenario: &GirsanovScenario,
    gs: &[TestFunction],
    t: f64,
    n: u64,
) -> Result<Vec<Reweighting>> {
    scenario.check(sys)?;
    for g in gs {
        g.check_dim(&sys.model)?;
    }
    if !(t > 0.0 && t <= scenario.horizon) {
        return Err(Error::param(
            "t",
            format!("must lie in (0, {}], got {t}", scenario.horizon),
        ));
    }
    let d = sys.dim();
    let h = &scenario.v * scenario.epsilon;
    let r = runner.estimate(id, n, 1 + 2 * gs.len(), |_, rng, out| {
        let path = sys.sample_path(t, rng)?;
        let z = girsanov_weight(sys, scenario, &path, t);
        let l = path.value(t, d);
        let shifted = &l + &h * path.count_until(t) as f64;
        out[0] = z;
        for (k, g) in gs.iter().enumerate() {
            out[1 + 2 * k] = z * g.eval(shifted.as_slice());
            out[2 + 2 * k] = g.eval(l.as_slice());
        }
        Ok(())
    })?;
    Ok((0..gs.len())
        .map(|k| Reweighting {
            weighted: r[1 + 2 * k],
            reference: r[2 + 2 * k],
            z_mean: r[0],
        })
        .collect())
}

/// Second moments of the difference quotient of the weight over a grid of `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSweep {
    /// `(eps, E[((Z^eps_t - 1) / eps)^2])`.
    pub rows: Vec<(f64, EstimatorResult)>,
    /// `E[M_t^2]` for the same direction, on the same paths.
    pub martingale_square: EstimatorResult,
}

impl MomentSweep {
    /// All estimates finite and none above ten times the grid median.
    pub fn bounded(&self) -> bool {
        self.rows.iter().all(|r| r.1.mean.is_finite()) && self.max_over_median() <= 10.0
    }

    pub fn max_over_median(&self) -> f64 {
        let mut vals: Vec<f64> = self.rows.iter().map(|r| r.1.mean).collect();
        vals.sort_by(f64::total_cmp);
        let k = vals.len();
        let median = if k % 2 == 1 {
            vals[k / 2]
        } else {
            0.5 * (vals[k / 2 - 1] + vals[k / 2])
        };
        vals[k - 1] / median
    }
}

pub fn z_moment_sweep(
    sys: &System,
    runner: &McRunner,
    id: &str,
    v: &HVector,
    t: f64,
    n: u64,
    eps_grid: &[f64],
) -> Result<MomentSweep> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(Error::param("eps_grid", "every entry must lie in (0, 1]"));
    }
    let scenarios = eps_grid
        .iter()
        .map(|e| GirsanovScenario::new(*e, v.clone(), t))
        .collect::<Result<Vec<_>>>()?;
    scenarios[0].check(sys)?;
    let w_dot_v = dot(sys.compensator_covector().as_slice(), v.as_slice());
    let k = eps_grid.len();
    let r = runner.estimate(id, n, k + 1, |_, rng, out| {
        let path = sys.sample_path(t, rng)?;
        for (j, s) in scenarios.iter().enumerate() {
            let q = (girsanov_weight(sys, s, &path, t) - 1.0) / s.epsilon;
            out[j] = q * q;
        }
        let mut m = -t * w_dot_v;
        for e in &path.events[..path.count_until(t)] {
            m += sys.jump_term(e.mark.as_slice(), v.as_slice());
        }
        out[k] = m * m;
        Ok(())
    })?;
    Ok(MomentSweep {
        rows: eps_grid.iter().copied().zip(r[..k].iter().copied()).collect(),
        martingale_square: r[k],
    })
}

/// Monte Carlo quadrature of `int (lambda^eps - 1) rho dmu` from `mu`-samples;
/// zero for the corrected sign.
pub fn compensator_residual(
    sys: &System,
    runner: &McRunner,
    id: &str,
    scenario: &GirsanovScenario,
    n: u64,
) -> Result<EstimatorResult> {
    scenario.check(sys)?;
    let d = sys.dim();
    let r = runner.estimate(id, n, 1, |_, rng, out| {
        let mut z = vec![0.0; d];
        sys.model.fill_mu(&mut rng.primary, &mut z);
        out[0] = (lambda_ratio(sys, scenario, &z) - 1.0) * sys.density.rho(&z);
        Ok(())
    })?;
    Ok(r[0])
}

/// `E[Z_t^2] = exp(Lambda t (exp(eps^2 |v|_0^2) - 1))` for a constant density.
pub fn constant_density_second_moment(sys: &System, scenario: &GirsanovScenario, t: f64) -> Option<f64> {
    if !sys.density.is_constant() {
        return None;
    }
    let h = &scenario.v * scenario.epsilon;
    let norm0 = sys.model.rkhs_inner(h.as_slice(), h.as_slice());
    Some((sys.density.intensity() * t * norm0.exp_m1()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::DriftField;
    use crate::noise::{sample_jump_path, JumpDensity, JumpEvent, SecondaryNoise};
    use crate::spectral::{CmSign, SpectralModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> SpectralModel {
        SpectralModel::fractional(vec![1.0, 2.0, 3.0, 4.0], 0.25).unwrap()
    }

    fn tilted() -> JumpDensity {
        JumpDensity::tilted_sine(2.0, 0.5, HVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])).unwrap()
    }

    fn sys(density: JumpDensity) -> System {
        System::new(model(), density, DriftField::Zero).unwrap()
    }

    fn v() -> HVector {
        HVector::from_vec(vec![0.5, 0.0, 0.2, 0.0])
    }

    #[test]
    fn lambda_ratio_cases() {
        let c = sys(JumpDensity::constant(2.0).unwrap());
        let t = sys(tilted());
        let z = [0.3, -0.2, 0.1, 0.9];
        let zero = GirsanovScenario::new(0.0, v(), 1.0).unwrap();
        assert_eq!(lambda_ratio(&t, &zero, &z), 1.0);
        let s = GirsanovScenario::new(0.5, v(), 1.0).unwrap();
        let h = v() * 0.5;
        let phi = c.model.cm_density(&z, h.as_slice(), CmSign::Corrected);
        assert!((lambda_ratio(&c, &s, &z) - phi).abs() < 1e-15);
        assert!(lambda_ratio(&t, &s, &z) > 0.0);
        assert!(GirsanovScenario::new(1.5, v(), 1.0).is_err());
    }

    #[test]
    fn weight_and_perturbation_cases() {
        let t = sys(tilted());
        let s = GirsanovScenario::new(0.5, v(), 1.0).unwrap();
        assert_eq!(girsanov_weight(&t, &s, &JumpPath::empty(1.0), 1.0), 1.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let p = sample_jump_path(&tilted(), &model(), &SecondaryNoise::None, 1.0, &mut r1, &mut r2).unwrap();
        let zero = s.with_epsilon(0.0).unwrap();
        assert_eq!(girsanov_weight(&t, &zero, &p, 1.0), 1.0);
        assert_eq!(perturbed_path(&zero, &p), p);
        let q = perturbed_path(&s, &p);
        for (a, b) in q.events.iter().zip(&p.events) {
            assert_eq!(a.time, b.time);
            assert!((&a.mark - &b.mark - v() * 0.5).norm() < 1e-15);
        }
        let twice = perturbed_path(
            &s.with_epsilon(0.2).unwrap(),
            &perturbed_path(&s.with_epsilon(0.3).unwrap(), &p),
        );
        for (a, b) in twice.events.iter().zip(&q.events) {
            assert!((&a.mark - &b.mark).norm() < 1e-15);
        }
        let one = JumpPath::from_events(
            1.0,
            vec![JumpEvent {
                time: 0.5,
                mark: HVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]),
            }],
        )
        .unwrap();
        let z = girsanov_weight(&t, &s, &one, 1.0);
        assert!((z - lambda_ratio(&t, &s, &[0.1, 0.2, 0.3, 0.4])).abs() < 1e-15);
        assert_eq!(girsanov_weight(&t, &s, &one, 0.4), 1.0);
    }

    #[test]
    fn mark_ratio_has_mean_one() {
        let runner = McRunner::new(3, 1).unwrap();
        for density in [JumpDensity::constant(2.0).unwrap(), tilted()] {
            let t = sys(density.clone());
            let s = GirsanovScenario::new(0.5, v(), 1.0).unwrap();
            let r = runner
                .estimate("mark-ratio", 100_000, 1, |_, rng, out| {
                    let z = density.sample_mark(&t.model, &mut rng.primary)?;
                    out[0] = lambda_ratio(&t, &s, z.as_slice());
                    Ok(())
                })
                .unwrap();
            assert!(r[0].consistent_with(1.0, 3.0), "{:?}", r[0]);
        }
    }

    #[test]
    fn sweep_median_rule() {
        let sweep = MomentSweep {
            rows: vec![
                (1e-3, EstimatorResult::exact(1.0, 1, 0)),
                (1e-2, EstimatorResult::exact(1.1, 1, 0)),
                (1e-1, EstimatorResult::exact(1.2, 1, 0)),
                (1.0, EstimatorResult::exact(20.0, 1, 0)),
            ],
            martingale_square: EstimatorResult::exact(1.0, 1, 0),
        };
        assert!(!sweep.bounded());
        assert!((sweep.max_over_median() - 20.0 / 1.15).abs() < 1e-12);
    }
}
