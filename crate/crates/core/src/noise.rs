//! The jump measure `rho(z) mu(dz)`: density families, mark sampling and
//! compound-Poisson paths for the differentiated noise `L^1` and an optional
//! independent secondary part `L^2`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{HVector, SpectralModel};

/// Proposals allowed per accepted mark before the sampler gives up.
pub const REJECTION_GUARD: u64 = 1_000_000;

/// Density `rho` of the jump measure with respect to `mu`.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpDensity {
    /// `rho(z) = lambda0`.
    Constant { lambda0: f64 },
    /// `rho(z) = lambda0 (1 + epsilon sin<b, z>)`.
    TiltedSine { lambda0: f64, epsilon: f64, b: HVector },
}

impl JumpDensity {
    pub fn constant(lambda0: f64) -> Result<Self> {
        check_lambda0(lambda0)?;
        Ok(JumpDensity::Constant { lambda0 })
    }

    pub fn tilted_sine(lambda0: f64, epsilon: f64, b: HVector) -> Result<Self> {
        check_lambda0(lambda0)?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Hypothesis {
                label: "H1",
                reason: format!("tilt epsilon must lie in (0, 1) for rho > 0, got {epsilon}"),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("b", "non-finite frequency"));
        }
        Ok(JumpDensity::TiltedSine { lambda0, epsilon, b })
    }

    pub fn check_dim(&self, model: &SpectralModel) -> Result<()> {
        match self {
            JumpDensity::Constant { .. } => Ok(()),
            JumpDensity::TiltedSine { b, .. } => model.check_dim(b.as_slice()),
        }
    }

    pub fn lambda0(&self) -> f64 {
        match self {
            JumpDensity::Constant { lambda0 } | JumpDensity::TiltedSine { lambda0, .. } => *lambda0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, JumpDensity::Constant { .. })
    }

    /// Lower bound of `rho`, the positivity margin required by the
    /// second-moment bound of the Girsanov weight.
    pub fn rho_min(&self) -> f64 {
        match self {
            JumpDensity::Constant { lambda0 } => *lambda0,
            JumpDensity::TiltedSine { lambda0, epsilon, .. } => lambda0 * (1.0 - epsilon),
        }
    }

    /// Rejection envelope.
    pub fn rho_max(&self) -> f64 {
        match self {
            JumpDensity::Constant { lambda0 } => *lambda0,
            JumpDensity::TiltedSine { lambda0, epsilon, .. } => lambda0 * (1.0 + epsilon),
        }
    }

    /// `sup |grad rho|`.
    pub fn grad_rho_sup(&self) -> f64 {
        match self {
            JumpDensity::Constant { .. } => 0.0,
            JumpDensity::TiltedSine { lambda0, epsilon, b } => lambda0 * epsilon * b.norm(),
        }
    }

    pub fn rho(&self, z: &[f64]) -> f64 {
        match self {
            JumpDensity::Constant { lambda0 } => *lambda0,
            JumpDensity::TiltedSine { lambda0, epsilon, b } => lambda0 * (1.0 + epsilon * dot(b.as_slice(), z).sin()),
        }
    }

    /// `<grad log rho(z), u>` without materialising the gradient.
    pub fn grad_log_rho_dot(&self, z: &[f64], u: &[f64]) -> f64 {
        match self {
            JumpDensity::Constant { .. } => 0.0,
            JumpDensity::TiltedSine { epsilon, b, .. } => {
                let s = dot(b.as_slice(), z);
                epsilon * s.cos() / (1.0 + epsilon * s.sin()) * dot(b.as_slice(), u)
            }
        }
    }

    pub fn grad_log_rho(&self, z: &[f64]) -> HVector {
        match self {
            JumpDensity::Constant { .. } => HVector::zeros(z.len()),
            JumpDensity::TiltedSine { epsilon, b, .. } => {
                let s = dot(b.as_slice(), z);
                b * (epsilon * s.cos() / (1.0 + epsilon * s.sin()))
            }
        }
    }

    /// Total intensity `Lambda = int rho dmu`.
    pub fn intensity(&self) -> f64 {
        // The sine tilt is odd under the centred measure and integrates to 0.
        self.lambda0()
    }

    /// `(m_rho, g_rho) = (int z rho dmu, int grad rho dmu)`.
    pub fn compensator_moments(&self, model: &SpectralModel) -> (HVector, HVector) {
        let d = model.dim();
        match self {
            JumpDensity::Constant { .. } => (HVector::zeros(d), HVector::zeros(d)),
            JumpDensity::TiltedSine { lambda0, epsilon, b } => {
                let sigma2 = model.rkhs_dual_quadratic(b.as_slice());
                let c = lambda0 * epsilon * (-0.5 * sigma2).exp();
                let qb = HVector::from_iterator(d, b.iter().zip(model.q()).map(|(b, q)| b * q));
                (qb * c, b * c)
            }
        }
    }

    /// `int |z|^2 rho dmu = lambda0 tr Q` for both families.
    pub fn mark_second_moment(&self, model: &SpectralModel) -> f64 {
        self.lambda0() * model.trace_q()
    }

    /// `int |grad rho| dmu`.
    ///
    /// For the tilted family this is `lambda0 eps |b| E|cos(sigma Z)|` with
    /// `sigma^2 = <b, Q b>`, evaluated through the Fourier series of `|cos|`.
    pub fn grad_rho_l1(&self, model: &SpectralModel) -> f64 {
        match self {
            JumpDensity::Constant { .. } => 0.0,
            JumpDensity::TiltedSine { lambda0, epsilon, b } => {
                let sigma2 = model.rkhs_dual_quadratic(b.as_slice());
                lambda0 * epsilon * b.norm() * mean_abs_cos(sigma2)
            }
        }
    }

    /// One mark from `rho mu / Lambda`, by rejection against `mu`.
    pub fn sample_mark<R: Rng + ?Sized>(&self, model: &SpectralModel, rng: &mut R) -> Result<HVector> {
        let mut z = HVector::zeros(model.dim());
        self.sample_mark_counted(model, rng, z.as_mut_slice())?;
        Ok(z)
    }

    /// Writes a mark into `out` and returns the number of proposals used.
    pub fn sample_mark_counted<R: Rng + ?Sized>(
        &self,
        model: &SpectralModel,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<u64> {
        if self.is_constant() {
            model.fill_mu(rng, out);
            return Ok(1);
        }
        let rho_max = self.rho_max();
        for tries in 1..=REJECTION_GUARD {
            model.fill_mu(rng, out);
            let u: f64 = rng.random();
            if u * rho_max < self.rho(out) {
                return Ok(tries);
            }
        }
        Err(Error::RejectionStalled(REJECTION_GUARD))
    }
}

fn check_lambda0(lambda0: f64) -> Result<()> {
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(Error::Hypothesis {
            label: "H1",
            reason: format!("jump density level must be positive and finite, got {lambda0}"),
        });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `E|cos(sigma Z)|` for standard normal `Z`, from
/// `|cos y| = 2/pi + (4/pi) sum_k (-1)^{k+1} cos(2ky) / (4k^2 - 1)`.
pub(crate) fn mean_abs_cos(sigma2: f64) -> f64 {
    use std::f64::consts::PI;
    let mut sum = 2.0 / PI;
    for k in 1..200_000u64 {
        let kf = k as f64;
        let damp = (-2.0 * kf * kf * sigma2).exp();
        let term = 4.0 / PI * damp / (4.0 * kf * kf - 1.0);
        let signed = if k % 2 == 1 { term } else { -term };
        sum += signed;
        if term < 1e-17 {
            break;
        }
    }
    sum
}

/// Optional independent secondary noise `L^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SecondaryNoise {
    #[default]
    None,
    /// Compound Poisson with marks `mark_scale * (draw from mu)`.
    CompoundPoisson { rate: f64, mark_scale: f64 },
}

impl SecondaryNoise {
    pub fn validate(&self) -> Result<()> {
        if let SecondaryNoise::CompoundPoisson { rate, mark_scale } = self {
            if !(*rate > 0.0 && rate.is_finite()) {
                return Err(Error::param("secondary.rate", "must be positive"));
            }
            if !(*mark_scale > 0.0 && mark_scale.is_finite()) {
                return Err(Error::param("secondary.mark_scale", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: HVector,
}

/// Jumps of `L^1` (and `L^2`) on `(0, horizon]`, each list sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub horizon: f64,
    pub events: Vec<JumpEvent>,
    pub secondary_events: Vec<JumpEvent>,
}

impl JumpPath {
    pub fn empty(horizon: f64) -> Self {
        Self {
            horizon,
            events: Vec::new(),
            secondary_events: Vec::new(),
        }
    }

    /// Builds a path from explicit primary events, sorting them by time.
    pub fn from_events(horizon: f64, mut events: Vec<JumpEvent>) -> Result<Self> {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        if events.iter().any(|e| !(e.time > 0.0 && e.time <= horizon)) {
            return Err(Error::param("events", "event times must lie in (0, horizon]"));
        }
        Ok(Self {
            horizon,
            events,
            secondary_events: Vec::new(),
        })
    }

    /// `N^1_t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t)
    }

    /// `L^1_t`.
    pub fn primary_value(&self, t: f64, dim: usize) -> HVector {
        let mut v = HVector::zeros(dim);
        for e in self.events.iter().take_while(|e| e.time <= t) {
            v += &e.mark;
        }
        v
    }

    /// `L_t = L^1_t + L^2_t`.
    pub fn value(&self, t: f64, dim: usize) -> HVector {
        let mut v = self.primary_value(t, dim);
        for e in self.secondary_events.iter().take_while(|e| e.time <= t) {
            v += &e.mark;
        }
        v
    }
}

/// Samples a path of `L^1` on `(0, horizon]` plus the secondary part.
///
/// `primary` drives `L^1`; `secondary` is consumed only when `L^2` is present.
pub fn sample_jump_path<R: Rng + ?Sized, S: Rng + ?Sized>(
    density: &JumpDensity,
    model: &SpectralModel,
    secondary: &SecondaryNoise,
    horizon: f64,
    primary: &mut R,
    secondary_rng: &mut S,
) -> Result<JumpPath> {
    if !(horizon > 0.0) {
        return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
    }
    let count = poisson_count(density.intensity() * horizon, primary)?;
    let mut times = uniform_times(count, horizon, primary);
    times.sort_by(f64::total_cmp);
    let mut events = Vec::with_capacity(count);
    for time in times {
        events.push(JumpEvent {
            time,
            mark: density.sample_mark(model, primary)?,
        });
    }
    let secondary_events = match *secondary {
        SecondaryNoise::None => Vec::new(),
        SecondaryNoise::CompoundPoisson { rate, mark_scale } => {
            let count = poisson_count(rate * horizon, secondary_rng)?;
            let mut times = uniform_times(count, horizon, secondary_rng);
            times.sort_by(f64::total_cmp);
            times
                .into_iter()
                .map(|time| JumpEvent {
                    time,
                    mark: model.sample_mu(secondary_rng) * mark_scale,
                })
                .collect()
        }
    };
    Ok(JumpPath {
        horizon,
        events,
        secondary_events,
    })
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::param("intensity", e.to_string()))?;
    Ok(dist.sample(rng) as usize)
}

/// Uniform on `(0, horizon]`.
fn uniform_times<R: Rng + ?Sized>(count: usize, horizon: f64, rng: &mut R) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            horizon * (1.0 - u)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn model() -> SpectralModel {
        SpectralModel::fractional(vec![1.0, 2.0, 3.0, 4.0], 0.25).unwrap()
    }

    fn tilted() -> JumpDensity {
        JumpDensity::tilted_sine(2.0, 0.5, HVector::from_vec(vec![1.0, 0.5, 0.0, 0.0])).unwrap()
    }

    #[test]
    fn rho_cases() {
        let c = JumpDensity::constant(2.0).unwrap();
        assert_eq!(c.rho(&[3.0, 1.0, 0.0, 0.0]), 2.0);
        let t = JumpDensity::tilted_sine(2.0, 0.5, HVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((t.rho(&[PI / 2.0, 7.0]) - 3.0).abs() < 1e-15);
        assert_eq!(t.rho(&[0.0, 7.0]), 2.0);
    }

    #[test]
    fn grad_log_rho_cases() {
        let c = JumpDensity::constant(2.0).unwrap();
        assert_eq!(c.grad_log_rho(&[1.0, 2.0]), HVector::zeros(2));
        let b = HVector::from_vec(vec![1.0, -2.0]);
        let t = JumpDensity::tilted_sine(2.0, 0.5, b.clone()).unwrap();
        // <b, z> = 0
        let g = t.grad_log_rho(&[2.0, 1.0]);
        assert!((g - &b * 0.5).norm() < 1e-15);
    }

    #[test]
    fn grad_log_rho_bound_and_fd() {
        let m = model();
        let t = tilted();
        let (eps, b) = match &t {
            JumpDensity::TiltedSine { epsilon, b, .. } => (*epsilon, b.norm()),
            _ => unreachable!(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let z = m.sample_mu(&mut rng) * 3.0;
            let g = t.grad_log_rho(z.as_slice());
            assert!(g.norm() <= eps * b / (1.0 - eps) + 1e-12);
            let h = 1e-5;
            for k in 0..4 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += h;
                zm[k] -= h;
                let fd = (t.rho(zp.as_slice()).ln() - t.rho(zm.as_slice()).ln()) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn rho_stays_in_envelope() {
        let m = model();
        let t = tilted();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100_000 {
            let z = m.sample_mu(&mut rng) * 4.0;
            let r = t.rho(z.as_slice());
            assert!(r >= t.rho_min() && r <= t.rho_max());
        }
    }

    #[test]
    fn intensity_matches_quadrature() {
        let m = model();
        let t = tilted();
        assert_eq!(t.intensity(), 2.0);
        assert_eq!(JumpDensity::constant(2.0).unwrap().intensity(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let r = t.rho(m.sample_mu(&mut rng).as_slice());
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 2.0).abs() <= 3.0 * se);
    }

    /// Monte Carlo quadrature over `mu` for `(m_rho, g_rho)`.
    fn moments_oracle(t: &JumpDensity, m: &SpectralModel, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = m.dim();
        let (mut sm, mut sm2, mut sg, mut sg2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let (lambda0, eps, b) = match t {
            JumpDensity::TiltedSine { lambda0, epsilon, b } => (*lambda0, *epsilon, b.clone()),
            _ => unreachable!(),
        };
        for _ in 0..n {
            let z = m.sample_mu(&mut rng);
            let r = t.rho(z.as_slice());
            let c = lambda0 * eps * b.dot(&z).cos();
            for k in 0..d {
                let a = z[k] * r;
                sm[k] += a;
                sm2[k] += a * a;
                let g = c * b[k];
                sg[k] += g;
                sg2[k] += g * g;
            }
        }
        let nf = n as f64;
        let se = |s: &[f64], s2: &[f64]| -> Vec<f64> {
            s.iter()
                .zip(s2)
                .map(|(a, b)| ((b / nf - (a / nf).powi(2)) / nf).sqrt())
                .collect()
        };
        (
            sm.iter().map(|v| v / nf).collect(),
            se(&sm, &sm2),
            sg.iter().map(|v| v / nf).collect(),
            se(&sg, &sg2),
        )
    }

    #[test]
    fn compensator_moments_closed_form() {
        let m = model();
        let t = tilted();
        let (mo, mse, go, gse) = moments_oracle(&t, &m, 1_000_000);
        let (mr, gr) = t.compensator_moments(&m);
        for k in 0..4 {
            assert!(
                (mr[k] - mo[k]).abs() <= 4.0 * mse[k] + 1e-12,
                "m[{k}] {} vs {}",
                mr[k],
                mo[k]
            );
            assert!(
                (gr[k] - go[k]).abs() <= 4.0 * gse[k] + 1e-12,
                "g[{k}] {} vs {}",
                gr[k],
                go[k]
            );
        }
        let (mc, gc) = JumpDensity::constant(2.0).unwrap().compensator_moments(&m);
        assert_eq!(mc, HVector::zeros(4));
        assert_eq!(gc, HVector::zeros(4));
        // Gaussian integration by parts: m_rho = Q g_rho.
        for k in 0..4 {
            assert!((mr[k] - m.q()[k] * gr[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_abs_cos_matches_quadrature() {
        for sigma2 in [0.05, 0.5, 1.0, 4.0] {
            let s = f64::sqrt(sigma2);
            let n = 200_000;
            let (a, b) = (-12.0, 12.0);
            let h = (b - a) / n as f64;
            let f = |x: f64| (s * x).cos().abs() * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
            let mut acc = f(a) + f(b);
            for i in 1..n {
                let x = a + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            let quad = acc * h / 3.0;
            assert!((mean_abs_cos(sigma2) - quad).abs() < 1e-6, "{sigma2}");
        }
    }

    #[test]
    fn mark_sampling_moments_and_acceptance() {
        let m = model();
        let t = tilted();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200_000;
        let mut proposals = 0u64;
        let mut s = [0.0; 4];
        let mut s2 = [0.0; 4];
        let mut s4 = [0.0; 4];
        let mut z = [0.0; 4];
        for _ in 0..n {
            proposals += t.sample_mark_counted(&m, &mut rng, &mut z).unwrap();
            for k in 0..4 {
                s[k] += z[k];
                s2[k] += z[k] * z[k];
                s4[k] += z[k].powi(4);
            }
        }
        let nf = n as f64;
        let (mr, _) = t.compensator_moments(&m);
        for k in 0..4 {
            let mean = s[k] / nf;
            let var = s2[k] / nf - mean * mean;
            let expected = mr[k] / t.intensity();
            assert!(
                (mean - expected).abs() <= 4.0 * (var / nf).sqrt(),
                "coord {k}: {mean} vs {expected}"
            );
            // second moment: E_nu[z_k^2] = int z_k^2 rho dmu / Lambda = q_k (odd tilt vanishes)
            let m2 = s2[k] / nf;
            let se2 = ((s4[k] / nf - m2 * m2) / nf).sqrt();
            assert!((m2 - m.q()[k]).abs() <= 4.0 * se2);
        }
        let rate = nf / proposals as f64;
        let p = 1.0 / 1.5;
        let se = (p * (1.0 - p) / proposals as f64).sqrt();
        assert!((rate - p).abs() <= 4.0 * se, "acceptance {rate}");
        // constant density: plain mu draw, always accepted
        let c = JumpDensity::constant(2.0).unwrap();
        assert_eq!(c.sample_mark_counted(&m, &mut rng, &mut z).unwrap(), 1);
    }

    #[test]
    fn path_counts_are_poisson() {
        let m = model();
        let c = JumpDensity::constant(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rng2 = ChaCha8Rng::seed_from_u64(22);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        let mut pooled = Vec::new();
        for _ in 0..n {
            let p = sample_jump_path(&c, &m, &SecondaryNoise::None, 1.0, &mut rng, &mut rng2).unwrap();
            let k = p.events.len() as f64;
            s += k;
            s2 += k * k;
            assert!(p.events.windows(2).all(|w| w[0].time < w[1].time));
            assert!(p.events.iter().all(|e| e.time > 0.0 && e.time <= 1.0));
            pooled.extend(p.events.iter().map(|e| e.time));
        }
        let nf = n as f64;
        let mean = s / nf;
        let var = s2 / nf - mean * mean;
        assert!((mean - 2.0).abs() <= 4.0 * (2.0 / nf).sqrt());
        // Var of the sample variance of Poisson(2): (mu4 - sigma^4)/n with mu4 = 2 + 3*4
        assert!((var - 2.0).abs() <= 4.0 * ((14.0 - 4.0) / nf).sqrt());
        // pooled times uniform: KS at level 1e-3 (critical value 1.9495 / sqrt(n))
        pooled.sort_by(f64::total_cmp);
        let np = pooled.len() as f64;
        let ks = pooled
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / np - x).abs().max((x - i as f64 / np).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.9495 / np.sqrt(), "KS {ks}");
    }

    #[test]
    fn vanishing_intensity_gives_empty_paths() {
        let m = model();
        let c = JumpDensity::constant(1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = sample_jump_path(&c, &m, &SecondaryNoise::None, 5.0, &mut rng, &mut rng2).unwrap();
            assert!(p.events.is_empty());
        }
    }

    #[test]
    fn secondary_noise_is_separate() {
        let m = model();
        let c = JumpDensity::constant(2.0).unwrap();
        let sec = SecondaryNoise::CompoundPoisson {
            rate: 3.0,
            mark_scale: 0.5,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let with = sample_jump_path(&c, &m, &sec, 2.0, &mut r1, &mut r2).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let without = sample_jump_path(&c, &m, &SecondaryNoise::None, 2.0, &mut r1, &mut r2).unwrap();
        assert_eq!(with.events, without.events);
        let l = with.value(2.0, 4) - with.primary_value(2.0, 4);
        let direct = with
            .secondary_events
            .iter()
            .fold(HVector::zeros(4), |acc, e| acc + &e.mark);
        assert!((l - direct).norm() < 1e-14);
    }
}
