//! Derivatives along jump marks: the pathwise mark derivative, the
//! integration-by-parts weight, the Bismut gradient estimator and its
//! finite-difference and pathwise oracles.

use crate::drift::DriftField;
use crate::engine::{jacobian_flow, solve_mild_until, transition_by_index, JacobianFlow};
use crate::error::{Error, Result};
use crate::noise::{dot, JumpPath};
use crate::spectral::{HVector, SpectralModel};
use crate::stats::{EstimatorResult, McRunner};
use crate::system::System;

/// Direction `V(s)` along which every primary mark is shifted.
#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationField {
    ConstantDir(HVector),
    /// `V(s) = J_s xi` along the sample's own Jacobian flow.
    JacobianDir(HVector),
}

impl PerturbationField {
    pub fn vector(&self) -> &HVector {
        match self {
            PerturbationField::ConstantDir(v) | PerturbationField::JacobianDir(v) => v,
        }
    }

    pub fn check_dim(&self, model: &SpectralModel) -> Result<()> {
        model.check_dim(self.vector().as_slice())
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            PerturbationField::ConstantDir(v) => PerturbationField::ConstantDir(v * c),
            PerturbationField::JacobianDir(v) => PerturbationField::JacobianDir(v * c),
        }
    }

    /// `V` at flow node `i`.
    pub fn at_node(&self, flow: Option<&JacobianFlow>, i: usize) -> Result<HVector> {
        match self {
            PerturbationField::ConstantDir(v) => Ok(v.clone()),
            PerturbationField::JacobianDir(xi) => {
                let flow =
                    flow.ok_or_else(|| Error::param("flow", "a Jacobian-driven direction needs the sample's flow"))?;
                Ok(&flow.mats[i] * xi)
            }
        }
    }

    /// Admissibility certificate `sup_s |Q^{-1} V(s)|` over the flow grid.
    pub fn sup_q_inv_norm(&self, model: &SpectralModel, flow: Option<&JacobianFlow>) -> Result<f64> {
        match (self, flow) {
            (PerturbationField::ConstantDir(v), _) => Ok(model.q_inv(v.as_slice()).norm()),
            (PerturbationField::JacobianDir(_), Some(f)) => {
                let mut sup = 0.0f64;
                for i in 0..f.mats.len() {
                    let v = self.at_node(flow, i)?;
                    sup = sup.max(model.q_inv(v.as_slice()).norm());
                }
                Ok(sup)
            }
            (PerturbationField::JacobianDir(_), None) => Err(Error::param(
                "flow",
                "a Jacobian-driven direction needs the sample's flow",
            )),
        }
    }
}

/// Test functions with closed-form gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `cos(<a, x> + theta)`.
    Cosine {
        a: HVector,
        theta: f64,
    },
    ConstantF(f64),
    /// `<a, x>`; unbounded, used only as a moment oracle.
    LinearF(HVector),
}

impl TestFunction {
    pub fn cosine(a: HVector, theta: f64) -> Self {
        TestFunction::Cosine { a, theta }
    }

    pub fn check_dim(&self, model: &SpectralModel) -> Result<()> {
        match self {
            TestFunction::Cosine { a, .. } | TestFunction::LinearF(a) => model.check_dim(a.as_slice()),
            TestFunction::ConstantF(_) => Ok(()),
        }
    }

    /// `sup |f|`, or `None` when unbounded.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            TestFunction::Cosine { .. } => Some(1.0),
            TestFunction::ConstantF(c) => Some(c.abs()),
            TestFunction::LinearF(a) if a.iter().all(|v| *v == 0.0) => Some(0.0),
            TestFunction::LinearF(_) => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Cosine { a, theta } => (dot(a.as_slice(), x) + theta).cos(),
            TestFunction::ConstantF(c) => *c,
            TestFunction::LinearF(a) => dot(a.as_slice(), x),
        }
    }

    /// `<grad f(x), u>`.
    #[inline]
    pub fn grad_dot(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            TestFunction::Cosine { a, theta } => -(dot(a.as_slice(), x) + theta).sin() * dot(a.as_slice(), u),
            TestFunction::ConstantF(_) => 0.0,
            TestFunction::LinearF(a) => dot(a.as_slice(), u),
        }
    }

    pub fn grad(&self, x: &[f64]) -> HVector {
        match self {
            TestFunction::Cosine { a, theta } => a * -(dot(a.as_slice(), x) + theta).sin(),
            TestFunction::ConstantF(_) => HVector::zeros(x.len()),
            TestFunction::LinearF(a) => a.clone(),
        }
    }
}

fn primary_count_nodes(flow: &JacobianFlow, path: &JumpPath, t: f64) -> Result<(usize, usize)> {
    let it = flow.node_index(t)?;
    let n = path.count_until(t);
    if flow.primary_nodes.len() < n {
        return Err(Error::param("flow", "flow was not computed along this jump path"));
    }
    Ok((it, n))
}

/// `D_V X_t = sum_{s_i <= t} J_{s_i t} V(s_i)` over primary jumps.
pub fn l1_derivative(flow: &JacobianFlow, path: &JumpPath, v: &PerturbationField, t: f64) -> Result<HVector> {
    let (it, n) = primary_count_nodes(flow, path, t)?;
    let d = flow.mats[0].nrows();
    let mut out = HVector::zeros(d);
    for &node in &flow.primary_nodes[..n] {
        let vs = v.at_node(Some(flow), node)?;
        out += transition_by_index(flow, node, it)? * vs;
    }
    Ok(out)
}

/// Shifts every primary mark `z_i` to `z_i + eps V(s_i)`.
pub fn shift_marks(path: &JumpPath, flow: Option<&JacobianFlow>, v: &PerturbationField, eps: f64) -> Result<JumpPath> {
    let mut out = path.clone();
    for (k, e) in out.events.iter_mut().enumerate() {
        let vs = match (v, flow) {
            (PerturbationField::ConstantDir(v), _) => v.clone(),
            (PerturbationField::JacobianDir(_), Some(f)) => v.at_node(Some(f), f.primary_nodes[k])?,
            (PerturbationField::JacobianDir(_), None) => {
                return Err(Error::param(
                    "flow",
                    "a Jacobian-driven direction needs the sample's flow",
                ))
            }
        };
        e.mark += vs * eps;
    }
    Ok(out)
}

/// Difference quotient `(X_t^eps - X_t) / eps` under shifted marks, paired
/// with [`l1_derivative`].
pub fn l1_derivative_fd_check(
    model: &SpectralModel,
    drift: &DriftField,
    path: &JumpPath,
    x0: &HVector,
    v: &PerturbationField,
    t: f64,
    eps: f64,
    dt: f64,
) -> Result<(HVector, HVector)> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::param("eps", format!("must lie in [1e-6, 1e-2], got {eps}")));
    }
    let traj = solve_mild_until(model, drift, path, x0, dt, t)?;
    let flow = jacobian_flow(model, drift, &traj)?;
    let shifted = shift_marks(path, Some(&flow), v, eps)?;
    let moved = solve_mild_until(model, drift, &shifted, x0, dt, t)?;
    let quotient = (moved.final_state() - traj.final_state()) / eps;
    Ok((quotient, l1_derivative(&flow, path, v, t)?))
}

/// The integration-by-parts weight `M_t` for one path.
///
/// Jump part `sum_{s_i <= t} (s <z_i, Q^{-1} V(s_i)> + <grad log rho(z_i), V(s_i)>)`
/// minus its compensator `int_0^t <w, V(s)> ds`, where `s` is the sign factor
/// and `w` the system's compensator covector. The integral is exact for a
/// constant direction and trapezoidal on the flow grid otherwise.
pub fn martingale_weight(
    sys: &System,
    path: &JumpPath,
    flow: Option<&JacobianFlow>,
    v: &PerturbationField,
    t: f64,
) -> Result<f64> {
    v.check_dim(&sys.model)?;
    let n = path.count_until(t);
    let mut jumps = 0.0;
    for (k, e) in path.events[..n].iter().enumerate() {
        let vs = match (v, flow) {
            (PerturbationField::ConstantDir(v), _) => v.clone(),
            (_, Some(f)) => v.at_node(Some(f), f.primary_nodes[k])?,
            (_, None) => v.at_node(None, 0)?,
        };
        jumps += sys.jump_term(e.mark.as_slice(), vs.as_slice());
    }
    let w = sys.compensator_covector();
    if w.iter().all(|c| *c == 0.0) {
        return Ok(jumps);
    }
    let comp = match v {
        PerturbationField::ConstantDir(v) => t * dot(w.as_slice(), v.as_slice()),
        PerturbationField::JacobianDir(_) => {
            let f = flow.ok_or_else(|| Error::param("flow", "a Jacobian-driven direction needs the sample's flow"))?;
            let it = f.node_index(t)?;
            let mut acc = 0.0;
            let mut prev = dot(w.as_slice(), v.at_node(flow, 0)?.as_slice());
            for i in 1..=it {
                let c = dot(w.as_slice(), v.at_node(flow, i)?.as_slice());
                acc += 0.5 * (f.times[i] - f.times[i - 1]) * (prev + c);
                prev = c;
            }
            acc
        }
    };
    Ok(jumps - comp)
}

/// Per-sample kernel of the IBP identity: `(<grad f(L_t), N_t v>, -f(L_t) M_t)`.
fn ibp_sample(sys: &System, path: &JumpPath, f: &TestFunction, v: &HVector, t: f64, w_dot_v: f64) -> (f64, f64) {
    let d = sys.dim();
    let l = path.value(t, d);
    let n = path.count_until(t);
    let mut m = -t * w_dot_v;
    for e in &path.events[..n] {
        m += sys.jump_term(e.mark.as_slice(), v.as_slice());
    }
    let lhs = n as f64 * f.grad_dot(l.as_slice(), v.as_slice());
    (lhs, -f.eval(l.as_slice()) * m)
}

/// Monte Carlo estimates of both sides of `E[D_V f(L_t)] = -E[f(L_t) M_t]`
/// for a constant direction, with common random numbers.
pub fn ibp_check(
    sys: &System,
    runner: &McRunner,
    id: &str,
    f: &TestFunction,
    v: &HVector,
    t: f64,
    n: u64,
) -> Result<(EstimatorResult, EstimatorResult)> {
    f.check_dim(&sys.model)?;
    sys.model.check_dim(v.as_slice())?;
    check_time(t)?;
    let w_dot_v = dot(sys.compensator_covector().as_slice(), v.as_slice());
    let r = runner.estimate(id, n, 2, |_, rng, out| {
        let path = sys.sample_path(t, rng)?;
        let (lhs, rhs) = ibp_sample(sys, &path, f, v, t, w_dot_v);
        out[0] = lhs;
        out[1] = rhs;
        Ok(())
    })?;
    Ok((r[0], r[1]))
}

/// Both sides of the IBP identity for many functions on shared paths;
/// returns `[lhs_0, rhs_0, lhs_1, rhs_1, ...]`.
pub fn ibp_check_many(
    sys: &System,
    runner: &McRunner,
    id: &str,
    fs: &[TestFunction],
    v: &HVector,
    t: f64,
    n: u64,
) -> Result<Vec<EstimatorResult>> {
    for f in fs {
        f.check_dim(&sys.model)?;
    }
    sys.model.check_dim(v.as_slice())?;
    check_time(t)?;
    let w_dot_v = dot(sys.compensator_covector().as_slice(), v.as_slice());
    runner.estimate(id, n, 2 * fs.len(), |_, rng, out| {
        let path = sys.sample_path(t, rng)?;
        for (k, f) in fs.iter().enumerate() {
            let (lhs, rhs) = ibp_sample(sys, &path, f, v, t, w_dot_v);
            out[2 * k] = lhs;
            out[2 * k + 1] = rhs;
        }
        Ok(())
    })
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    Ok(())
}

/// `P^1_t f(x) = E[f(X_t^x) 1{N^1_t >= 1}]`.
pub fn p1_semigroup(
    sys: &System,
    runner: &McRunner,
    id: &str,
    f: &TestFunction,
    x: &HVector,
    t: f64,
    n: u64,
) -> Result<EstimatorResult> {
    f.check_dim(&sys.model)?;
    sys.model.check_dim(x.as_slice())?;
    check_time(t)?;
    let integ = sys.integrator()?;
    let base = !sys.drift.is_zero();
    let r = runner.estimate(id, n, 1, |_, rng, out| {
        let path = sys.sample_path(t, rng)?;
        if path.count_until(t) == 0 {
            return Ok(());
        }
        let xt = integ.run(&path, x.as_slice(), t, &[], base, &mut [], |_, _, _| {})?;
        out[0] = f.eval(&xt);
        Ok(())
    })?;
    Ok(r[0])
}

/// Gradient estimates of `<grad P^1_t f(x), xi>` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientRow {
    pub t: f64,
    pub bismut: EstimatorResult,
    /// Central difference with common paths.
    pub fd: EstimatorResult,
    /// `E[<grad f(X_t), J_t xi> 1{N >= 1}]`.
    pub pathwise: EstimatorResult,
}

/// Per-sample Bismut, central-difference and pathwise values at each time
/// in `times`, from one path integrated once; writes `3 * times.len()` values.
/// The central difference is skipped (left at zero) when `fd_eps` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_sample(
    sys: &System,
    integ: &crate::engine::Integrator<'_>,
    path: &JumpPath,
    f: &TestFunction,
    x: &HVector,
    xi: &HVector,
    times: &[f64],
    fd_eps: Option<f64>,
    out: &mut [f64],
) -> Result<()> {
    let horizon = *times.last().expect("at least one time");
    let base = !sys.drift.is_zero();
    let w = sys.compensator_covector();
    let w_active = w.iter().any(|c| *c != 0.0);
    let mut tangent = xi.as_slice().to_vec();
    let mut jumps = 0.0;
    let mut comp = 0.0;
    let mut prev_c = dot(w.as_slice(), xi.as_slice());
    let mut count = 0usize;
    integ.run(
        path,
        x.as_slice(),
        horizon,
        times,
        base,
        &mut tangent,
        |node, xs, tan| {
            if w_active && base {
                let c = dot(w.as_slice(), tan);
                comp += 0.5 * node.h * (prev_c + c);
                prev_c = c;
            }
            if let Some(i) = node.primary {
                jumps += sys.jump_term(path.events[i].mark.as_slice(), tan);
                count += 1;
            }
            if let Some(j) = node.observe {
                if count > 0 {
                    let comp_t = if w_active && !base {
                        sys.linear_compensator(&w, xi.as_slice(), node.t)
                    } else {
                        comp
                    };
                    let m = jumps - comp_t;
                    out[3 * j] = -f.eval(xs) * m / count as f64;
                    out[3 * j + 2] = f.grad_dot(xs, tan);
                } else {
                    out[3 * j] = 0.0;
                    out[3 * j + 2] = 0.0;
                }
            }
        },
    )?;
    let Some(eps) = fd_eps else {
        return Ok(());
    };
    let plus = x + xi * eps;
    let minus = x - xi * eps;
    let mut fp = vec![0.0; times.len()];
    integ.run(path, plus.as_slice(), horizon, times, base, &mut [], |node, xs, _| {
        if let Some(j) = node.observe {
            fp[j] = f.eval(xs);
        }
    })?;
    integ.run(path, minus.as_slice(), horizon, times, base, &mut [], |node, xs, _| {
        if let Some(j) = node.observe {
            let alive = path.count_until(node.t) > 0;
            out[3 * j + 1] = if alive { (fp[j] - f.eval(xs)) / (2.0 * eps) } else { 0.0 };
        }
    })?;
    Ok(())
}

/// Bismut, finite-difference and pathwise estimates at every time in
/// `times` (sorted), all from the same paths.
#[allow(clippy::too_many_arguments)]
pub fn gradient_estimates(
    sys: &System,
    runner: &McRunner,
    id: &str,
    f: &TestFunction,
    x: &HVector,
    xi: &HVector,
    times: &[f64],
    n: u64,
    eps: f64,
) -> Result<Vec<GradientRow>> {
    f.check_dim(&sys.model)?;
    sys.model.check_dim(x.as_slice())?;
    sys.model.check_dim(xi.as_slice())?;
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || !(times[0] > 0.0) {
        return Err(Error::param("times", "need increasing positive times"));
    }
    if !(1e-4..=1e-1).contains(&eps) {
        return Err(Error::param("eps", format!("must lie in [1e-4, 1e-1], got {eps}")));
    }
    let integ = sys.integrator()?;
    let horizon = *times.last().unwrap();
    let k = times.len();
    let r = runner.estimate(id, n, 3 * k, |_, rng, out| {
        let path = sys.sample_path(horizon, rng)?;
        gradient_sample(sys, &integ, &path, f, x, xi, times, Some(eps), out)
    })?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(j, t)| GradientRow {
            t: *t,
            bismut: r[3 * j],
            fd: r[3 * j + 1],
            pathwise: r[3 * j + 2],
        })
        .collect())
}

/// Bismut estimate of `<grad P^1_t f(x), xi>`: per sample
/// `-f(X_t) M_t / N^1_t` on `{N^1_t >= 1}`, with `V(s) = J_s xi`.
#[allow(clippy::too_many_arguments)]
pub fn bismut_gradient(
    sys: &System,
    runner: &McRunner,
    id: &str,
    f: &TestFunction,
    x: &HVector,
    xi: &HVector,
    t: f64,
    n: u64,
) -> Result<EstimatorResult> {
    Ok(gradient_estimates(sys, runner, id, f, x, xi, &[t], n, 1e-2)?[0].bismut)
}

/// Central difference `(P^1_t f(x + eps xi) - P^1_t f(x - eps xi)) / (2 eps)`
/// with common paths.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient(
    sys: &System,
    runner: &McRunner,
    id: &str,
    f: &TestFunction,
    x: &HVector,
    xi: &HVector,
    t: f64,
    n: u64,
    eps: f64,
) -> Result<EstimatorResult> {
    Ok(gradient_estimates(sys, runner, id, f, x, xi, &[t], n, eps)?[0].fd)
}

/// `E[1{N >= 1} / N^2]` for `N ~ Poisson(lambda_t)`, summed to machine
/// precision, and its bound `6 / lambda_t^2`.
pub fn poisson_inverse_square_moment(lambda_t: f64) -> Result<(f64, f64)> {
    if !(lambda_t > 0.0 && lambda_t.is_finite()) {
        return Err(Error::param("lambda_t", format!("must be positive, got {lambda_t}")));
    }
    let ln_x = lambda_t.ln();
    let mut log_p = -lambda_t;
    let mut sum = 0.0;
    let mut n = 1u64;
    loop {
        let nf = n as f64;
        log_p += ln_x - nf.ln();
        let term = (log_p - 2.0 * nf.ln()).exp();
        sum += term;
        if nf > lambda_t && term <= 1e-17 * sum {
            break;
        }
        n += 1;
    }
    Ok((sum, 6.0 / (lambda_t * lambda_t)))
}
