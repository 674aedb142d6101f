//! Long-time behaviour: synchronous-coupling contraction, lower estimates of
//! the total-variation distance between two transition laws, and the
//! explicit gradient bound for the killed semigroup.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::malliavin::{gradient_sample, TestFunction};
use crate::spectral::{HVector, SpectralModel};
use crate::stats::{EstimatorResult, McRunner, RunningStats};
use crate::system::System;

/// Fraction of leading checkpoints left out of the rate fit.
pub const BURN_IN: f64 = 0.2;

/// `r* = Lambda (gamma_1 - L) / (Lambda + gamma_1 - L)`.
pub fn predicted_rate(lambda: f64, gamma1: f64, lip: f64) -> Result<f64> {
    let gap = gamma1 - lip;
    if !(gap > 0.0) {
        return Err(Error::Hypothesis {
            label: "H4",
            reason: format!("need gamma_1 > ||F||_Lip, got gamma_1 = {gamma1}, Lip = {lip}"),
        });
    }
    Ok(lambda * gap / (lambda + gap))
}

fn check_gap(sys: &System) -> Result<f64> {
    let gap = sys.model.gamma1() - sys.drift.lip_bound();
    if !(gap > 0.0) {
        return Err(Error::Hypothesis {
            label: "H4",
            reason: format!(
                "need gamma_1 > ||F||_Lip, got gamma_1 = {}, Lip = {}",
                sys.model.gamma1(),
                sys.drift.lip_bound()
            ),
        });
    }
    Ok(gap)
}

fn check_checkpoints(times: &[f64]) -> Result<()> {
    if times.is_empty() || !(times[0] > 0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("checkpoints", "need increasing positive times"));
    }
    Ok(())
}

/// A decaying quantity sampled at checkpoints, with a log-linear tail fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub checkpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Decay rate `r` of the fit `C exp(-r t)`; `NaN` when fewer than two
    /// points qualify.
    pub fitted_rate: f64,
    pub fitted_prefactor: f64,
}

impl DecayCurve {
    pub fn new(checkpoints: Vec<f64>, values: Vec<f64>, stderrs: Vec<f64>) -> Self {
        let mut c = Self {
            checkpoints,
            values,
            stderrs,
            fitted_rate: f64::NAN,
            fitted_prefactor: f64::NAN,
        };
        c.refit();
        c
    }

    /// Index of the first checkpoint after burn-in.
    pub fn burn_in_index(&self) -> usize {
        (BURN_IN * self.checkpoints.len() as f64).floor() as usize
    }

    /// Weighted least squares of `log value` on `t` past the burn-in,
    /// weights `(value / stderr)^2`; points with `stderr > value / 3` are
    /// skipped. Equal weights are used when any stderr is zero.
    pub fn refit(&mut self) {
        let pts: Vec<(f64, f64, f64)> = (self.burn_in_index()..self.checkpoints.len())
            .filter(|&i| self.values[i] > 0.0 && self.stderrs[i] <= self.values[i] / 3.0)
            .map(|i| (self.checkpoints[i], self.values[i], self.stderrs[i]))
            .collect();
        if pts.len() < 2 {
            self.fitted_rate = f64::NAN;
            self.fitted_prefactor = f64::NAN;
            return;
        }
        let equal = pts.iter().any(|p| p.2 == 0.0);
        let (mut sw, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, v, se) in &pts {
            let w = if equal { 1.0 } else { (v / se).powi(2) };
            let y = v.ln();
            sw += w;
            st += w * t;
            sy += w * y;
            stt += w * t * t;
            sty += w * t * y;
        }
        let slope = (sw * sty - st * sy) / (sw * stt - st * st);
        let intercept = (sy - slope * st) / sw;
        self.fitted_rate = -slope;
        self.fitted_prefactor = intercept.exp();
    }
}

/// `E|X_t^x - X_t^y|` under synchronous coupling at every checkpoint.
pub fn contraction_curve(
    sys: &System,
    runner: &McRunner,
    id: &str,
    x: &HVector,
    y: &HVector,
    checkpoints: &[f64],
    n: u64,
) -> Result<DecayCurve> {
    check_checkpoints(checkpoints)?;
    sys.model.check_dim(x.as_slice())?;
    sys.model.check_dim(y.as_slice())?;
    let integ = sys.integrator()?;
    let horizon = *checkpoints.last().unwrap();
    let base = !sys.drift.is_zero();
    let k = checkpoints.len();
    let r = runner.estimate(id, n, k, |_, rng, out| {
        let path = sys.sample_path(horizon, rng)?;
        let mut xs = vec![vec![0.0; sys.dim()]; k];
        integ.run(
            &path,
            x.as_slice(),
            horizon,
            checkpoints,
            base,
            &mut [],
            |node, s, _| {
                if let Some(j) = node.observe {
                    xs[j].copy_from_slice(s);
                }
            },
        )?;
        integ.run(
            &path,
            y.as_slice(),
            horizon,
            checkpoints,
            base,
            &mut [],
            |node, s, _| {
                if let Some(j) = node.observe {
                    out[j] = xs[j].iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                }
            },
        )?;
        Ok(())
    })?;
    Ok(DecayCurve::new(
        checkpoints.to_vec(),
        r.iter().map(|e| e.mean).collect(),
        r.iter().map(|e| e.stderr).collect(),
    ))
}

/// Per-checkpoint verdict of the contraction bound
/// `value <= exp((-gamma_1 + L) t) |x - y| (1 + 3 se / value + 10 dt)`.
pub fn contraction_bounds(sys: &System, curve: &DecayCurve, dist: f64) -> Vec<(f64, bool)> {
    let l = sys.drift.lip_bound();
    let g1 = sys.model.gamma1();
    curve
        .checkpoints
        .iter()
        .zip(curve.values.iter().zip(&curve.stderrs))
        .map(|(t, (v, se))| {
            let theory = ((-g1 + l) * t).exp() * dist;
            let rel = if *v > 0.0 { 3.0 * se / v } else { 0.0 };
            (theory, *v <= theory * (1.0 + rel + 10.0 * sys.dt))
        })
        .collect()
}

/// Cosine dictionary for the total-variation lower estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub functions: Vec<TestFunction>,
}

impl Dictionary {
    /// `size` cosines with standard-normal frequencies and uniform phases.
    pub fn random(dim: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let functions = (0..size)
            .map(|_| {
                let a = HVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                TestFunction::cosine(a, theta)
            })
            .collect();
        Self { functions }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// Coupled endpoint samples at one time, reduced to what the lower
/// estimates need.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSamples {
    /// Row-major `n x k`: `f_j(X^x) - f_j(X^y)` per dictionary entry.
    pub diffs: Vec<f64>,
    pub k: usize,
    /// First coordinates of `X^x` and `X^y`.
    pub first_x: Vec<f64>,
    pub first_y: Vec<f64>,
}

impl CoupledSamples {
    pub fn len(&self) -> usize {
        self.first_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_x.is_empty()
    }

    /// `max_j |mean_i diffs[i, j]|` over the first `k` dictionary entries.
    pub fn dictionary_estimate(&self, k: usize) -> f64 {
        self.dictionary_estimate_on(k, None)
    }

    fn dictionary_estimate_on(&self, k: usize, idx: Option<&[usize]>) -> f64 {
        let k = k.min(self.k);
        let n = self.len();
        let mut sums = vec![0.0; k];
        let mut add = |i: usize| {
            let row = &self.diffs[i * self.k..i * self.k + k];
            sums.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        };
        match idx {
            Some(idx) => idx.iter().for_each(|&i| add(i)),
            None => (0..n).for_each(&mut add),
        }
        sums.iter().fold(0.0f64, |m, s| m.max((s / n as f64).abs()))
    }

    fn bins(&self, nbins: usize) -> (Vec<u16>, Vec<u16>) {
        let lo = self
            .first_x
            .iter()
            .chain(&self.first_y)
            .fold(f64::INFINITY, |m, v| m.min(*v));
        let hi = self
            .first_x
            .iter()
            .chain(&self.first_y)
            .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let width = (hi - lo) / nbins as f64;
        let bin = |v: f64| -> u16 {
            if !(width > 0.0) {
                return 0;
            }
            (((v - lo) / width).floor() as usize).min(nbins - 1) as u16
        };
        (
            self.first_x.iter().map(|v| bin(*v)).collect(),
            self.first_y.iter().map(|v| bin(*v)).collect(),
        )
    }

    /// `sum_b |p_x(b) - p_y(b)|` of the first-coordinate histograms on
    /// common edges.
    pub fn histogram_estimate(&self, nbins: usize) -> f64 {
        let (bx, by) = self.bins(nbins);
        histogram_distance(&bx, &by, nbins, None)
    }
}

fn histogram_distance(bx: &[u16], by: &[u16], nbins: usize, idx: Option<&[usize]>) -> f64 {
    let mut counts = vec![0i64; nbins];
    let mut n = 0usize;
    let mut add = |i: usize| {
        counts[bx[i] as usize] += 1;
        counts[by[i] as usize] -= 1;
        n += 1;
    };
    match idx {
        Some(idx) => idx.iter().for_each(|&i| add(i)),
        None => (0..bx.len()).for_each(&mut add),
    }
    counts.iter().map(|c| c.unsigned_abs()).sum::<u64>() as f64 / n as f64
}

/// Lower estimate of `sup_{|f| <= 1} |P_t f(x) - P_t f(y)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub t: f64,
    pub value: f64,
    /// Bootstrap standard error of `value`.
    pub stderr: f64,
    pub dictionary: f64,
    pub histogram: f64,
}

pub const HISTOGRAM_BINS: usize = 64;
pub const DICTIONARY_SIZE: usize = 32;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Draws coupled endpoint samples at every checkpoint, integrating each
/// path once.
#[allow(clippy::too_many_arguments)]
pub fn coupled_samples(
    sys: &System,
    runner: &McRunner,
    id: &str,
    dict: &Dictionary,
    x: &HVector,
    y: &HVector,
    checkpoints: &[f64],
    n: u64,
) -> Result<Vec<CoupledSamples>> {
    check_checkpoints(checkpoints)?;
    sys.model.check_dim(x.as_slice())?;
    sys.model.check_dim(y.as_slice())?;
    let integ = sys.integrator()?;
    let horizon = *checkpoints.last().unwrap();
    let base = !sys.drift.is_zero();
    let k = dict.len();
    let m = checkpoints.len();
    let width = k + 2;
    let raw = runner.collect(id, n, m * width, |_, rng, out| {
        let path = sys.sample_path(horizon, rng)?;
        integ.run(
            &path,
            x.as_slice(),
            horizon,
            checkpoints,
            base,
            &mut [],
            |node, s, _| {
                if let Some(j) = node.observe {
                    let row = &mut out[j * width..(j + 1) * width];
                    for (r, f) in row.iter_mut().zip(&dict.functions) {
                        *r = f.eval(s);
                    }
                    row[k] = s[0];
                }
            },
        )?;
        integ.run(
            &path,
            y.as_slice(),
            horizon,
            checkpoints,
            base,
            &mut [],
            |node, s, _| {
                if let Some(j) = node.observe {
                    let row = &mut out[j * width..(j + 1) * width];
                    for (r, f) in row.iter_mut().zip(&dict.functions) {
                        *r -= f.eval(s);
                    }
                    row[k + 1] = s[0];
                }
            },
        )?;
        Ok(())
    })?;
    let n = n as usize;
    Ok((0..m)
        .map(|j| {
            let mut diffs = Vec::with_capacity(n * k);
            let mut first_x = Vec::with_capacity(n);
            let mut first_y = Vec::with_capacity(n);
            for i in 0..n {
                let row = &raw[i * m * width + j * width..i * m * width + (j + 1) * width];
                diffs.extend_from_slice(&row[..k]);
                first_x.push(row[k]);
                first_y.push(row[k + 1]);
            }
            CoupledSamples {
                diffs,
                k,
                first_x,
                first_y,
            }
        })
        .collect())
}

/// `max(dictionary, histogram)` with a pair-resampling bootstrap stderr.
pub fn tv_from_samples(samples: &CoupledSamples, t: f64, seed: u64) -> TvEstimate {
    let dictionary = samples.dictionary_estimate(samples.k);
    let (bx, by) = samples.bins(HISTOGRAM_BINS);
    let histogram = histogram_distance(&bx, &by, HISTOGRAM_BINS, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let all: Vec<usize> = (0..n).collect();
    let mut stats = RunningStats::default();
    let mut idx = vec![0usize; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in idx.iter_mut() {
            *slot = *all.choose(&mut rng).expect("non-empty sample");
        }
        let a = samples.dictionary_estimate_on(samples.k, Some(&idx));
        let b = histogram_distance(&bx, &by, HISTOGRAM_BINS, Some(&idx));
        stats.push(a.max(b));
    }
    TvEstimate {
        t,
        value: dictionary.max(histogram),
        stderr: stats.variance().sqrt(),
        dictionary,
        histogram,
    }
}

fn bootstrap_seed(runner: &McRunner, id: &str, j: usize) -> u64 {
    let mut rng = runner.policy().experiment(&format!("{id}/bootstrap")).sample(j as u64);
    rng.primary.random()
}

fn dictionary_seed(runner: &McRunner, id: &str) -> u64 {
    let mut rng = runner.policy().experiment(&format!("{id}/dictionary")).sample(0);
    rng.primary.random()
}

/// Lower estimate of the total-variation distance at a single time.
#[allow(clippy::too_many_arguments)]
pub fn tv_lower_bound(
    sys: &System,
    runner: &McRunner,
    id: &str,
    x: &HVector,
    y: &HVector,
    t: f64,
    n: u64,
) -> Result<TvEstimate> {
    Ok(tv_curve(sys, runner, id, x, y, &[t], n)?.remove(0))
}

/// [`tv_lower_bound`] at every checkpoint from the same paths.
pub fn tv_curve(
    sys: &System,
    runner: &McRunner,
    id: &str,
    x: &HVector,
    y: &HVector,
    checkpoints: &[f64],
    n: u64,
) -> Result<Vec<TvEstimate>> {
    if n < 2 {
        return Err(Error::param("n", "need at least two samples"));
    }
    let dict = Dictionary::random(sys.dim(), DICTIONARY_SIZE, dictionary_seed(runner, id));
    let samples = coupled_samples(sys, runner, id, &dict, x, y, checkpoints, n)?;
    Ok(samples
        .iter()
        .zip(checkpoints)
        .enumerate()
        .map(|(j, (s, t))| tv_from_samples(s, *t, bootstrap_seed(runner, id, j)))
        .collect())
}

/// The decay experiment and its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct TvDecay {
    pub curve: DecayCurve,
    pub estimates: Vec<TvEstimate>,
    pub r_star: f64,
    /// Smallest `C` with `value <= C (1 + |x - y|) exp(-r* t)` at the first
    /// post-burn-in checkpoint.
    pub c: f64,
    /// `C (1 + |x - y|) exp(-r* t_j)`.
    pub envelope: Vec<f64>,
    pub below_envelope: Vec<bool>,
    pub rate_ok: bool,
    /// `(1/t) int_0^t ||Q^{-1} S(s)||^2 ds` at the last checkpoint.
    pub q_growth: f64,
}

impl TvDecay {
    pub fn passed(&self) -> bool {
        self.rate_ok && self.below_envelope.iter().all(|b| *b)
    }
}

/// Tolerance on the fitted rate.
pub const RATE_TOLERANCE: f64 = 0.1;

#[allow(clippy::too_many_arguments)]
pub fn tv_decay_experiment(
    sys: &System,
    runner: &McRunner,
    id: &str,
    x: &HVector,
    y: &HVector,
    checkpoints: &[f64],
    n: u64,
) -> Result<TvDecay> {
    check_gap(sys)?;
    let r_star = predicted_rate(sys.density.intensity(), sys.model.gamma1(), sys.drift.lip_bound())?;
    let estimates = tv_curve(sys, runner, id, x, y, checkpoints, n)?;
    let curve = DecayCurve::new(
        checkpoints.to_vec(),
        estimates.iter().map(|e| e.value).collect(),
        estimates.iter().map(|e| e.stderr).collect(),
    );
    Ok(tv_verdict(sys, curve, estimates, r_star, (x - y).norm()))
}

fn tv_verdict(sys: &System, curve: DecayCurve, estimates: Vec<TvEstimate>, r_star: f64, dist: f64) -> TvDecay {
    let i0 = curve.burn_in_index().min(curve.checkpoints.len() - 1);
    let shape = |t: f64| (1.0 + dist) * (-r_star * t).exp();
    let c = curve.values[i0] / shape(curve.checkpoints[i0]);
    let envelope: Vec<f64> = curve.checkpoints.iter().map(|t| c * shape(*t)).collect();
    let below_envelope = curve.values.iter().zip(&envelope).map(|(v, e)| v <= e).collect();
    let rate_ok = curve.fitted_rate >= r_star - RATE_TOLERANCE;
    let t_end = *curve.checkpoints.last().unwrap();
    let q_growth = q_semigroup_integral(&sys.model, t_end) / t_end;
    TvDecay {
        curve,
        estimates,
        r_star,
        c,
        envelope,
        below_envelope,
        rate_ok,
        q_growth,
    }
}

/// Quadrature grid on `[0, t]`: geometric cells toward 0, then uniform.
fn graded_grid(t: f64) -> Vec<f64> {
    let h = (t / 200.0).min(1e-3);
    let mut pts = vec![0.0];
    let mut u = h * 1e-6;
    while u < h {
        pts.push(u);
        u *= 1.5;
    }
    let steps = ((t - h) / h).ceil().max(1.0) as usize;
    let step = (t - h) / steps as f64;
    for i in 0..=steps {
        pts.push(h + step * i as f64);
    }
    pts
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// `int_0^t ||Q^{-1} S(u)||^2 du`.
pub fn q_semigroup_integral(model: &SpectralModel, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let g = |u: f64| model.q_inv_semigroup_norm(u).powi(2);
    graded_grid(t).windows(2).map(|w| simpson(g, w[0], w[1])).sum()
}

/// `Gamma_t = int_0^t s int_0^s ||Q^{-1} S(s - r)||^2 exp(-2 (gamma_1 - L) r) dr ds`.
///
/// The inner integral `K(s)` obeys `K(s + h) = exp(-2ch) K(s) + int_s^{s+h}
/// g(u) exp(-2c(s + h - u)) du`; the outer one is trapezoidal on the grid.
pub fn gamma_integral(model: &SpectralModel, lip: f64, t: f64) -> Result<f64> {
    let c = model.gamma1() - lip;
    if !(c > 0.0) {
        return Err(Error::Hypothesis {
            label: "H4",
            reason: format!(
                "need gamma_1 > ||grad F||, got gamma_1 = {}, Lip = {lip}",
                model.gamma1()
            ),
        });
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let g = |u: f64| model.q_inv_semigroup_norm(u).powi(2);
    let grid = graded_grid(t);
    let mut k = 0.0;
    let mut total = 0.0;
    let mut prev = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        k = (-2.0 * c * (b - a)).exp() * k + simpson(|u| g(u) * (-2.0 * c * (b - u)).exp(), a, b);
        let cur = b * k;
        total += 0.5 * (b - a) * (prev + cur);
        prev = cur;
    }
    Ok(total)
}

/// Right-hand side of the gradient bound for the killed semigroup:
/// `2 |f|_inf { sqrt(6 m2 / Lambda^2 (L^2 Gamma_t + I_t) / t^2) + G / (gamma_1 - L) }`
/// with `m2 = int |z|^2 rho dmu` and `G = int |grad rho| dmu`.
pub fn gradient_bound_rhs(sys: &System, sup_f: f64, t: f64) -> Result<f64> {
    let gap = check_gap(sys)?;
    let l = sys.drift.lip_bound();
    let lambda = sys.density.intensity();
    let m2 = sys.density.mark_second_moment(&sys.model);
    let gamma_t = gamma_integral(&sys.model, l, t)?;
    let i_t = q_semigroup_integral(&sys.model, t);
    let first = (6.0 * m2 / (lambda * lambda) * (l * l * gamma_t + i_t) / (t * t)).sqrt();
    let second = sys.density.grad_rho_l1(&sys.model) / gap;
    Ok(2.0 * sup_f * (first + second))
}

/// One row of the gradient-bound table.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundRow {
    pub t: f64,
    /// Largest `|estimate|` over the probes.
    pub sup_abs: f64,
    /// Standard error of the probe attaining `sup_abs`.
    pub stderr: f64,
    pub rhs: f64,
    /// Every probe satisfies `|estimate| <= rhs + 3 se`.
    pub pass: bool,
    pub probes: Vec<EstimatorResult>,
}

/// Probe points `(x, xi)` with `|xi| = 1`.
pub fn gradient_probes(dim: usize, count: usize, seed: u64) -> Vec<(HVector, HVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = HVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let xi = HVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = xi.norm();
            (x, xi / norm)
        })
        .collect()
}

/// Bismut estimates of `|grad_xi P^1_t f(x)|` over probes against the
/// explicit bound, at each time in `t_grid`.
pub fn gradient_bound_check(
    sys: &System,
    runner: &McRunner,
    id: &str,
    f: &TestFunction,
    t_grid: &[f64],
    n: u64,
    probes: &[(HVector, HVector)],
) -> Result<Vec<GradientBoundRow>> {
    check_gap(sys)?;
    check_checkpoints(t_grid)?;
    let sup_f = f
        .sup_norm()
        .ok_or_else(|| Error::param("f", "the gradient bound needs a bounded test function"))?;
    let integ = sys.integrator()?;
    let horizon = *t_grid.last().unwrap();
    let k = t_grid.len();
    let mut per_probe = Vec::with_capacity(probes.len());
    for (p, (x, xi)) in probes.iter().enumerate() {
        let r = runner.estimate(&format!("{id}/probe-{p}"), n, k, |_, rng, out| {
            let path = sys.sample_path(horizon, rng)?;
            let mut buf = vec![0.0; 3 * k];
            gradient_sample(sys, &integ, &path, f, x, xi, t_grid, None, &mut buf)?;
            for j in 0..k {
                out[j] = buf[3 * j];
            }
            Ok(())
        })?;
        per_probe.push(r);
    }
    t_grid
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let rhs = gradient_bound_rhs(sys, sup_f, *t)?;
            let col: Vec<EstimatorResult> = per_probe.iter().map(|r| r[j]).collect();
            let best = col
                .iter()
                .max_by(|a, b| a.mean.abs().total_cmp(&b.mean.abs()))
                .copied()
                .expect("at least one probe");
            let pass = col.iter().all(|e| e.mean.abs() <= rhs + 3.0 * e.stderr);
            Ok(GradientBoundRow {
                t: *t,
                sup_abs: best.mean.abs(),
                stderr: best.stderr,
                rhs,
                pass,
                probes: col,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::DriftField;
    use crate::noise::JumpDensity;

    fn model() -> SpectralModel {
        SpectralModel::fractional(vec![1.0, 2.0, 3.0, 4.0], 0.25).unwrap()
    }

    #[test]
    fn rate_formula() {
        assert!((predicted_rate(2.0, 1.0, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((predicted_rate(2.0, 1.0, 0.3).unwrap() - 1.4 / 2.7).abs() < 1e-15);
        let big = predicted_rate(50.0, 1.0, 0.3).unwrap();
        assert!((big - 0.7).abs() / 0.7 < 0.02);
        assert!(predicted_rate(2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn decay_fit_recovers_exponential() {
        let ts = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let vals: Vec<f64> = ts.iter().map(|t: &f64| 3.0 * (-0.7 * t).exp()).collect();
        let se: Vec<f64> = vals.iter().map(|v| v * 0.01).collect();
        let c = DecayCurve::new(ts.clone(), vals.clone(), se);
        assert!((c.fitted_rate - 0.7).abs() < 1e-12);
        assert!((c.fitted_prefactor - 3.0).abs() < 1e-10);
        let noisy = DecayCurve::new(ts, vals.clone(), vals.clone());
        assert!(noisy.fitted_rate.is_nan());
    }

    #[test]
    fn gamma_integral_matches_closed_form_in_one_dimension() {
        let m = SpectralModel::new(vec![1.5], vec![0.5]).unwrap();
        let a = 4.0;
        let j = |alpha: f64, t: f64| (1.0 - (-alpha * t).exp() * (1.0 + alpha * t)) / (alpha * alpha);
        for (l, t) in [(0.3, 1.0), (0.3, 4.0), (1.0, 2.0)] {
            let c = 1.5 - l;
            let exact = a / (2.0 * l) * (j(2.0 * c, t) - j(3.0, t));
            let num = gamma_integral(&m, l, t).unwrap();
            assert!((num - exact).abs() <= 1e-6 * exact, "{num} vs {exact}");
        }
        let i = q_semigroup_integral(&m, 2.0);
        let exact = a * (1.0 - (-6.0f64).exp()) / 3.0;
        assert!((i - exact).abs() < 1e-9 * exact);
        assert!(gamma_integral(&m, 1.5, 1.0).is_err());
    }

    #[test]
    fn gamma_integral_grows_with_dimension() {
        let mut last = 0.0;
        for d in [2usize, 4, 8, 16] {
            let m = SpectralModel::fractional(SpectralModel::linear_gamma(d, 1.0), 0.25).unwrap();
            let g = gamma_integral(&m, 0.3, 2.0).unwrap();
            assert!(g > last);
            last = g;
        }
    }

    #[test]
    fn q_growth_decreases_for_fractional_link() {
        let m = model();
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            let t = 16f64.powf(k as f64 / 20.0);
            let v = q_semigroup_integral(&m, t) / t;
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn rhs_simplifications() {
        let m = model();
        let c = System::new(m.clone(), JumpDensity::constant(2.0).unwrap(), DriftField::Zero).unwrap();
        let t = 2.0;
        let i_t = q_semigroup_integral(&m, t);
        let m2 = 2.0 * m.trace_q();
        let expected = 2.0 * (6.0 * m2 / 4.0 * i_t / (t * t)).sqrt();
        assert!((gradient_bound_rhs(&c, 1.0, t).unwrap() - expected).abs() < 1e-12 * expected);
        let tilted = JumpDensity::tilted_sine(2.0, 0.5, HVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        let s = c.clone().with_density(tilted.clone()).unwrap();
        let extra = 2.0 * tilted.grad_rho_l1(&m) / 1.0;
        assert!((gradient_bound_rhs(&s, 1.0, t).unwrap() - expected - extra).abs() < 1e-12);
    }

    #[test]
    fn dictionary_growth_is_monotone() {
        let s = CoupledSamples {
            diffs: (0..400).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.45).collect(),
            k: 8,
            first_x: vec![0.0; 50],
            first_y: vec![0.0; 50],
        };
        let mut prev = 0.0;
        for k in 1..=8 {
            let e = s.dictionary_estimate(k);
            assert!(e >= prev);
            prev = e;
        }
        assert_eq!(s.histogram_estimate(64), 0.0);
    }
}
