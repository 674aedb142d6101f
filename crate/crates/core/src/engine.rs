//! Mild-solution integration by exponential Euler with exact jump insertion,
//! Jacobian flows, and synchronous coupling.
//!
//! Between grid nodes the linear part is integrated exactly and the drift is
//! frozen at the left node: `X <- S(h) X + (int_0^h S) F(X)`. Every jump time
//! is a node; the mark is added to the state at its node. The Jacobian obeys
//! the same recursion with `F(X)` replaced by `grad F(X) J` and is untouched
//! by jumps.

use nalgebra::DMatrix;

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::noise::{JumpEvent, JumpPath};
use crate::spectral::{phi1, HVector, SpectralModel};

/// Condition number above which `J_s` is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;

/// Default base step: `1e-3 * min(1, 1 / gamma_d)`.
pub fn default_dt(model: &SpectralModel) -> f64 {
    1e-3 * (1.0 / model.gamma()[model.dim() - 1]).min(1.0)
}

/// A node of the integration grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub t: f64,
    /// Step length from the previous node.
    pub h: f64,
    /// Index of the primary jump occurring at this node.
    pub primary: Option<usize>,
    pub secondary: Option<usize>,
    /// Index into the requested observation times.
    pub observe: Option<usize>,
}

/// Merges the base grid, both jump lists and the observation times.
struct Nodes<'a> {
    dt: f64,
    base: bool,
    t_end: f64,
    tol: f64,
    k: u64,
    primary: &'a [JumpEvent],
    ip: usize,
    secondary: &'a [JumpEvent],
    is: usize,
    observe: &'a [f64],
    io: usize,
    last: f64,
    finished: bool,
}

impl Iterator for Nodes<'_> {
    type Item = Node;

    fn next(&mut self) -> Option<Node> {
        if self.finished {
            return None;
        }
        let limit = self.t_end + self.tol;
        let tb = if self.base {
            let t = self.k as f64 * self.dt;
            if t < self.t_end - self.tol {
                t
            } else {
                self.t_end
            }
        } else {
            self.t_end
        };
        let tp = self.primary.get(self.ip).map(|e| e.time).filter(|t| *t <= limit);
        let ts = self.secondary.get(self.is).map(|e| e.time).filter(|t| *t <= limit);
        let to = self.observe.get(self.io).copied();
        let tmin = [tp, ts, to].into_iter().flatten().fold(tb, f64::min);
        let hit = |t: Option<f64>| t.filter(|t| *t <= tmin + self.tol);

        let mut node = Node {
            t: tb,
            h: 0.0,
            primary: None,
            secondary: None,
            observe: None,
        };
        let mut exact = None;
        if let Some(t) = hit(tp) {
            node.primary = Some(self.ip);
            self.ip += 1;
            exact = Some(t);
        }
        if let Some(t) = hit(ts) {
            node.secondary = Some(self.is);
            self.is += 1;
            exact = exact.or(Some(t));
        }
        if let Some(t) = hit(to) {
            node.observe = Some(self.io);
            self.io += 1;
            exact = exact.or(Some(t));
        }
        if tb <= tmin + self.tol {
            if tb == self.t_end {
                self.finished = true;
            } else {
                self.k += 1;
            }
        }
        node.t = exact.unwrap_or(tb);
        node.h = (node.t - self.last).max(0.0);
        self.last = node.t;
        Some(node)
    }
}

/// Scratch buffers for one integration.
#[derive(Debug, Clone)]
pub struct Workspace {
    f: Vec<f64>,
    gain: Vec<f64>,
    tmp: Vec<f64>,
    decay: Vec<f64>,
    phi: Vec<f64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            f: vec![0.0; dim],
            gain: vec![0.0; dim],
            tmp: vec![0.0; dim],
            decay: vec![0.0; dim],
            phi: vec![0.0; dim],
        }
    }
}

/// Exponential-Euler stepper for one `(model, drift, dt)`.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    model: &'a SpectralModel,
    drift: &'a DriftField,
    dt: f64,
    decay: Vec<f64>,
    phi: Vec<f64>,
    tol: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a SpectralModel, drift: &'a DriftField, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        drift.check_dim(model.dim())?;
        Ok(Self {
            model,
            drift,
            dt,
            decay: model.semigroup_diag(dt),
            phi: model.semigroup_integral(dt)?,
            tol: 1e-9 * dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn coefficients<'w>(&'w self, h: f64, ws: &'w mut Workspace) -> (&'w [f64], &'w [f64]) {
        if (h - self.dt).abs() <= self.tol {
            (&self.decay, &self.phi)
        } else {
            for ((d, p), g) in ws.decay.iter_mut().zip(ws.phi.iter_mut()).zip(self.model.gamma()) {
                *d = (-g * h).exp();
                *p = phi1(*g, h);
            }
            (&ws.decay, &ws.phi)
        }
    }

    /// One step of length `h` for the state and the tangents (each of length
    /// `dim`, stored back to back), with the drift frozen at the left point.
    pub fn step(&self, h: f64, x: &mut [f64], tangents: &mut [f64], ws: &mut Workspace) {
        if h <= 0.0 {
            return;
        }
        let d = self.dim();
        if self.drift.is_zero() {
            let (decay, _) = self.coefficients(h, ws);
            let decay = decay.to_vec();
            x.iter_mut().zip(&decay).for_each(|(v, e)| *v *= e);
            for tv in tangents.chunks_mut(d) {
                tv.iter_mut().zip(&decay).for_each(|(v, e)| *v *= e);
            }
            return;
        }
        let mut f = std::mem::take(&mut ws.f);
        let mut gain = std::mem::take(&mut ws.gain);
        let mut tmp = std::mem::take(&mut ws.tmp);
        self.drift.eval_into(x, &mut f, &mut gain);
        let (decay, phi) = self.coefficients(h, ws);
        for k in 0..d {
            x[k] = decay[k] * x[k] + phi[k] * f[k];
        }
        for tv in tangents.chunks_mut(d) {
            self.drift.apply_gain(&gain, tv, &mut tmp);
            for k in 0..d {
                tv[k] = decay[k] * tv[k] + phi[k] * tmp[k];
            }
        }
        ws.f = f;
        ws.gain = gain;
        ws.tmp = tmp;
    }

    /// Tangent-only step using a recorded left-point state.
    pub fn step_tangents(&self, h: f64, x_left: &[f64], tangents: &mut [f64], ws: &mut Workspace) {
        let mut x = x_left.to_vec();
        self.step(h, &mut x, tangents, ws);
    }

    /// Integrates from `x0` at time 0 to `t_end` along `path`.
    ///
    /// `visit` sees every node after its jumps have been applied, starting
    /// with the initial node at `t = 0`. With `base_grid == false` only jump
    /// and observation nodes are visited, which is exact for the zero drift.
    /// Returns the final state.
    #[allow(clippy::too_many_arguments)]
    pub fn run<V>(
        &self,
        path: &JumpPath,
        x0: &[f64],
        t_end: f64,
        observe: &[f64],
        base_grid: bool,
        tangents: &mut [f64],
        mut visit: V,
    ) -> Result<Vec<f64>>
    where
        V: FnMut(&Node, &[f64], &[f64]),
    {
        let d = self.dim();
        self.model.check_dim(x0)?;
        if !tangents.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: tangents.len(),
            });
        }
        if !(t_end >= 0.0) || t_end > path.horizon + self.tol {
            return Err(Error::param(
                "t_end",
                format!("{t_end} outside the path horizon {}", path.horizon),
            ));
        }
        if observe.windows(2).any(|w| w[1] < w[0]) || observe.iter().any(|t| !(*t >= 0.0 && *t <= t_end + self.tol)) {
            return Err(Error::param(
                "observe",
                "observation times must be sorted within [0, t_end]",
            ));
        }
        let mut ws = Workspace::new(d);
        let mut x = x0.to_vec();
        let mut io = 0;
        let mut first = Node {
            t: 0.0,
            h: 0.0,
            primary: None,
            secondary: None,
            observe: None,
        };
        if observe.first().is_some_and(|t| *t <= self.tol) {
            first.observe = Some(0);
            io = 1;
        }
        visit(&first, &x, tangents);
        if t_end <= self.tol {
            return Ok(x);
        }
        let nodes = Nodes {
            dt: self.dt,
            base: base_grid,
            t_end,
            tol: self.tol,
            k: 1,
            primary: &path.events,
            ip: 0,
            secondary: &path.secondary_events,
            is: 0,
            observe,
            io,
            last: 0.0,
            finished: false,
        };
        for node in nodes {
            self.step(node.h, &mut x, tangents, &mut ws);
            if let Some(i) = node.primary {
                add_assign(&mut x, path.events[i].mark.as_slice());
            }
            if let Some(i) = node.secondary {
                add_assign(&mut x, path.secondary_events[i].mark.as_slice());
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    t: node.t,
                    detail: format!("state {x:?}"),
                });
            }
            visit(&node, &x, tangents);
        }
        Ok(x)
    }
}

fn add_assign(x: &mut [f64], y: &[f64]) {
    x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
}

/// Time-gridded mild solution; `states[i]` is the state just after any jump
/// at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<HVector>,
    /// Node index of each primary jump, in event order.
    pub primary_nodes: Vec<usize>,
    pub dt: f64,
}

impl Trajectory {
    /// Index of the node at time `t` (relative tolerance `1e-12`).
    pub fn node_index(&self, t: f64) -> Result<usize> {
        node_index(&self.times, t)
    }

    pub fn state_at(&self, t: f64) -> Result<&HVector> {
        Ok(&self.states[self.node_index(t)?])
    }

    pub fn final_state(&self) -> &HVector {
        self.states.last().expect("trajectory has an initial node")
    }
}

fn node_index(times: &[f64], t: f64) -> Result<usize> {
    let tol = 1e-12 * (1.0 + t.abs());
    let i = times.partition_point(|s| *s < t - tol);
    if i < times.len() && (times[i] - t).abs() <= tol {
        // An event can be merged into a neighbouring node; take the last match.
        let mut j = i;
        while j + 1 < times.len() && (times[j + 1] - t).abs() <= tol {
            j += 1;
        }
        Ok(j)
    } else {
        Err(Error::OffGrid { t })
    }
}

/// `J_t = grad_x X_t^x` on the trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianFlow {
    pub times: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
    pub primary_nodes: Vec<usize>,
}

impl JacobianFlow {
    pub fn node_index(&self, t: f64) -> Result<usize> {
        node_index(&self.times, t)
    }

    pub fn at(&self, t: f64) -> Result<&DMatrix<f64>> {
        Ok(&self.mats[self.node_index(t)?])
    }

    /// Invertibility certificate: the 2-norm condition number of `J` at node `i`.
    pub fn condition_number(&self, i: usize) -> f64 {
        let sv = self.mats[i].singular_values();
        sv.max() / sv.min()
    }
}

/// Mild solution on `[0, path.horizon]`.
pub fn solve_mild(
    model: &SpectralModel,
    drift: &DriftField,
    path: &JumpPath,
    x0: &HVector,
    dt: f64,
) -> Result<Trajectory> {
    solve_mild_until(model, drift, path, x0, dt, path.horizon)
}

pub fn solve_mild_until(
    model: &SpectralModel,
    drift: &DriftField,
    path: &JumpPath,
    x0: &HVector,
    dt: f64,
    t_end: f64,
) -> Result<Trajectory> {
    let integ = Integrator::new(model, drift, dt)?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut primary_nodes = Vec::new();
    integ.run(path, x0.as_slice(), t_end, &[], true, &mut [], |node, x, _| {
        if node.primary.is_some() {
            primary_nodes.push(times.len());
        }
        times.push(node.t);
        states.push(HVector::from_column_slice(x));
    })?;
    Ok(Trajectory {
        times,
        states,
        primary_nodes,
        dt,
    })
}

/// Integrates the linearised equation along `traj`, starting from `J_0 = I`.
pub fn jacobian_flow(model: &SpectralModel, drift: &DriftField, traj: &Trajectory) -> Result<JacobianFlow> {
    let d = model.dim();
    if traj.states.first().map(|s| s.len()) != Some(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: traj.states.first().map_or(0, |s| s.len()),
        });
    }
    let integ = Integrator::new(model, drift, traj.dt)?;
    let mut ws = Workspace::new(d);
    // column j of J is tangent j
    let mut cols = DMatrix::<f64>::identity(d, d);
    let mut mats = Vec::with_capacity(traj.times.len());
    mats.push(cols.clone());
    for i in 1..traj.times.len() {
        let h = traj.times[i] - traj.times[i - 1];
        integ.step_tangents(h, traj.states[i - 1].as_slice(), cols.as_mut_slice(), &mut ws);
        mats.push(cols.clone());
    }
    Ok(JacobianFlow {
        times: traj.times.clone(),
        mats,
        primary_nodes: traj.primary_nodes.clone(),
    })
}

/// `J_{st} = J_t J_s^{-1}` for grid times `s <= t`.
pub fn jacobian_transition(flow: &JacobianFlow, s: f64, t: f64) -> Result<DMatrix<f64>> {
    if s > t {
        return Err(Error::param(
            "s",
            format!("transition needs s <= t, got s = {s}, t = {t}"),
        ));
    }
    let is = flow.node_index(s)?;
    let it = flow.node_index(t)?;
    transition_by_index(flow, is, it)
}

pub(crate) fn transition_by_index(flow: &JacobianFlow, is: usize, it: usize) -> Result<DMatrix<f64>> {
    let d = flow.mats[is].nrows();
    if is == it {
        return Ok(DMatrix::identity(d, d));
    }
    let cond = flow.condition_number(is);
    if !(cond <= SINGULAR_COND) {
        return Err(Error::Singular {
            t: flow.times[is],
            cond,
        });
    }
    // X J_s = J_t  <=>  J_s^T X^T = J_t^T
    let lu = flow.mats[is].transpose().lu();
    let xt = lu.solve(&flow.mats[it].transpose()).ok_or(Error::Singular {
        t: flow.times[is],
        cond,
    })?;
    Ok(xt.transpose())
}

/// Both solutions driven by the same jump path.
pub fn coupled_solve(
    model: &SpectralModel,
    drift: &DriftField,
    path: &JumpPath,
    x0: &HVector,
    y0: &HVector,
    dt: f64,
) -> Result<(Trajectory, Trajectory)> {
    Ok((
        solve_mild(model, drift, path, x0, dt)?,
        solve_mild(model, drift, path, y0, dt)?,
    ))
}
