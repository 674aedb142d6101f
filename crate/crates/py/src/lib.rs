//! Python bindings for the `levy_bismut` crate.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use levy_bismut::config::{self, ExperimentConfig};
use levy_bismut::convergence;
use levy_bismut::engine::solve_mild;
use levy_bismut::malliavin;
use levy_bismut::{
    CmSign, Command, DriftField, EstimatorResult, HVector, Harness, JumpDensity, McRunner, SpectralModel, System,
    TestFunction,
};

fn err(e: levy_bismut::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(v: Vec<f64>) -> HVector {
    HVector::from_vec(v)
}

/// Monte Carlo estimate as a `(mean, stderr)` pair.
fn pair(e: EstimatorResult) -> (f64, f64) {
    (e.mean, e.stderr)
}

#[pyclass(name = "SpectralModel", frozen, from_py_object)]
#[derive(Clone)]
struct PySpectralModel {
    inner: SpectralModel,
}

#[pymethods]
impl PySpectralModel {
    #[new]
    fn new(gamma: Vec<f64>, q: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: SpectralModel::new(gamma, q).map_err(err)?,
        })
    }

    /// `q_k = gamma_k^(-delta)`.
    #[staticmethod]
    fn fractional(gamma: Vec<f64>, delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: SpectralModel::fractional(gamma, delta).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma().to_vec()
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.q().to_vec()
    }

    fn semigroup_apply(&self, t: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .semigroup_apply(t, &vector(x))
            .map_err(err)?
            .as_slice()
            .to_vec())
    }

    fn semigroup_integral(&self, h: f64) -> PyResult<Vec<f64>> {
        self.inner.semigroup_integral(h).map_err(err)
    }

    fn rkhs_inner(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.check_dim(&x).map_err(err)?;
        self.inner.check_dim(&y).map_err(err)?;
        Ok(self.inner.rkhs_inner(&x, &y))
    }

    #[pyo3(signature = (z, h, paper_sign = false))]
    fn cm_density(&self, z: Vec<f64>, h: Vec<f64>, paper_sign: bool) -> PyResult<f64> {
        self.inner.check_dim(&z).map_err(err)?;
        self.inner.check_dim(&h).map_err(err)?;
        Ok(self.inner.cm_density(&z, &h, sign(paper_sign)))
    }

    fn frac_power_norm(&self, delta: f64, t: f64) -> PyResult<f64> {
        self.inner.frac_power_norm(delta, t).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("SpectralModel(gamma={:?}, q={:?})", self.inner.gamma(), self.inner.q())
    }
}

fn sign(paper: bool) -> CmSign {
    if paper {
        CmSign::Paper
    } else {
        CmSign::Corrected
    }
}

#[pyclass(name = "JumpDensity", frozen, from_py_object)]
#[derive(Clone)]
struct PyJumpDensity {
    inner: JumpDensity,
}

#[pymethods]
impl PyJumpDensity {
    #[staticmethod]
    fn constant(lambda0: f64) -> PyResult<Self> {
        Ok(Self {
            inner: JumpDensity::constant(lambda0).map_err(err)?,
        })
    }

    /// `rho(z) = lambda0 (1 + epsilon sin <b, z>)`.
    #[staticmethod]
    fn tilted_sine(lambda0: f64, epsilon: f64, b: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: JumpDensity::tilted_sine(lambda0, epsilon, vector(b)).map_err(err)?,
        })
    }

    fn rho(&self, z: Vec<f64>) -> f64 {
        self.inner.rho(&z)
    }

    fn grad_log_rho(&self, z: Vec<f64>) -> Vec<f64> {
        self.inner.grad_log_rho(&z).as_slice().to_vec()
    }

    fn intensity(&self) -> f64 {
        self.inner.intensity()
    }
}

#[pyclass(name = "DriftField", frozen, from_py_object)]
#[derive(Clone)]
struct PyDriftField {
    inner: DriftField,
}

#[pymethods]
impl PyDriftField {
    #[staticmethod]
    fn zero() -> Self {
        Self {
            inner: DriftField::Zero,
        }
    }

    /// `F(x) = kappa tanh(W x)` with a random `W` of unit spectral norm.
    #[staticmethod]
    fn random_tanh(dim: usize, kappa: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: DriftField::random_tanh(dim, kappa, seed).map_err(err)?,
        })
    }

    fn lip_bound(&self) -> f64 {
        self.inner.lip_bound()
    }

    fn eval(&self, x: Vec<f64>) -> Vec<f64> {
        self.inner.eval(&vector(x)).as_slice().to_vec()
    }
}

#[pyclass(name = "TestFunction", frozen, from_py_object)]
#[derive(Clone)]
struct PyTestFunction {
    inner: TestFunction,
}

#[pymethods]
impl PyTestFunction {
    /// `cos(<a, x> + theta)`.
    #[staticmethod]
    fn cosine(a: Vec<f64>, theta: f64) -> Self {
        Self {
            inner: TestFunction::cosine(vector(a), theta),
        }
    }

    #[staticmethod]
    fn constant(c: f64) -> Self {
        Self {
            inner: TestFunction::ConstantF(c),
        }
    }

    #[staticmethod]
    fn linear(a: Vec<f64>) -> Self {
        Self {
            inner: TestFunction::LinearF(vector(a)),
        }
    }

    fn __call__(&self, x: Vec<f64>) -> f64 {
        self.inner.eval(&x)
    }
}

#[pyclass(name = "System", frozen, from_py_object)]
#[derive(Clone)]
struct PySystem {
    inner: System,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (model, density, drift, dt = None, paper_sign = false))]
    fn new(
        model: &PySpectralModel,
        density: &PyJumpDensity,
        drift: &PyDriftField,
        dt: Option<f64>,
        paper_sign: bool,
    ) -> PyResult<Self> {
        let mut sys = System::new(model.inner.clone(), density.inner.clone(), drift.inner.clone())
            .map_err(err)?
            .with_sign(sign(paper_sign));
        if let Some(dt) = dt {
            sys = sys.with_dt(dt).map_err(err)?;
        }
        Ok(Self { inner: sys })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    /// One trajectory on `[0, horizon]` as `(times, states)`.
    fn simulate(&self, x0: Vec<f64>, horizon: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let sys = &self.inner;
        let mut rng = McRunner::new(seed, 1)
            .map_err(err)?
            .policy()
            .experiment("simulate")
            .sample(0);
        let path = sys.sample_path(horizon, &mut rng).map_err(err)?;
        let traj = solve_mild(&sys.model, &sys.drift, &path, &vector(x0), sys.dt).map_err(err)?;
        Ok((traj.times, traj.states.iter().map(|s| s.as_slice().to_vec()).collect()))
    }

    /// Both sides of the integration-by-parts identity, each as `(mean, stderr)`.
    #[pyo3(signature = (f, v, t, n, seed = 42, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn ibp_check(
        &self,
        py: Python<'_>,
        f: &PyTestFunction,
        v: Vec<f64>,
        t: f64,
        n: u64,
        seed: u64,
        workers: usize,
    ) -> PyResult<((f64, f64), (f64, f64))> {
        let v = vector(v);
        py.detach(|| {
            let runner = McRunner::new(seed, workers)?;
            malliavin::ibp_check(&self.inner, &runner, "python/ibp", &f.inner, &v, t, n)
        })
        .map(|(l, r)| (pair(l), pair(r)))
        .map_err(err)
    }

    /// Bismut, central-difference and pathwise estimates of `<grad P^1_t f(x), xi>`.
    #[pyo3(signature = (f, x, xi, t, n, eps = 1e-2, seed = 42, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn gradient(
        &self,
        py: Python<'_>,
        f: &PyTestFunction,
        x: Vec<f64>,
        xi: Vec<f64>,
        t: f64,
        n: u64,
        eps: f64,
        seed: u64,
        workers: usize,
    ) -> PyResult<((f64, f64), (f64, f64), (f64, f64))> {
        let (x, xi) = (vector(x), vector(xi));
        py.detach(|| {
            let runner = McRunner::new(seed, workers)?;
            malliavin::gradient_estimates(&self.inner, &runner, "python/gradient", &f.inner, &x, &xi, &[t], n, eps)
        })
        .map(|rows| (pair(rows[0].bismut), pair(rows[0].fd), pair(rows[0].pathwise)))
        .map_err(err)
    }

    /// Right-hand side of the killed-semigroup gradient bound.
    fn gradient_bound_rhs(&self, sup_f: f64, t: f64) -> PyResult<f64> {
        convergence::gradient_bound_rhs(&self.inner, sup_f, t).map_err(err)
    }
}

#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyExperimentConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperimentConfig {
    #[staticmethod]
    fn reference() -> Self {
        Self {
            inner: config::reference(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    fn violations(&self) -> Vec<String> {
        self.inner.violations()
    }

    #[getter]
    fn samples(&self) -> u64 {
        self.inner.mc.samples
    }

    #[setter]
    fn set_samples(&mut self, n: u64) {
        self.inner.mc.samples = n;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.mc.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.mc.seed = seed;
    }

    #[getter]
    fn workers(&self) -> usize {
        self.inner.mc.workers
    }

    #[setter]
    fn set_workers(&mut self, w: usize) {
        self.inner.mc.workers = w;
    }

    fn system(&self) -> PyResult<PySystem> {
        Ok(PySystem {
            inner: self.inner.system().map_err(err)?,
        })
    }
}

/// Runs a harness subcommand; returns `[(criterion, name, passed, detail)]`
/// and writes the CSV files into `out` when given.
#[pyfunction]
#[pyo3(signature = (config, command, out = None))]
fn run(
    py: Python<'_>,
    config: &PyExperimentConfig,
    command: &str,
    out: Option<PathBuf>,
) -> PyResult<Vec<(u32, String, bool, String)>> {
    let cmd: Command = command.parse().map_err(err)?;
    let cfg = config.inner.clone();
    let report = py
        .detach(move || -> levy_bismut::Result<_> {
            let report = Harness::new(cfg)?.run(cmd)?;
            if let Some(dir) = out {
                report.write(&dir)?;
            }
            Ok(report)
        })
        .map_err(err)?;
    Ok(report
        .verdicts
        .into_iter()
        .map(|v| (v.criterion, v.name, v.pass, v.detail))
        .collect())
}

/// `(E[1{N >= 1} / N^2], 6 / lambda_t^2)` for `N ~ Poisson(lambda_t)`.
#[pyfunction]
fn poisson_inverse_square_moment(lambda_t: f64) -> PyResult<(f64, f64)> {
    malliavin::poisson_inverse_square_moment(lambda_t).map_err(err)
}

#[pyfunction]
fn predicted_rate(lambda: f64, gamma1: f64, lip: f64) -> PyResult<f64> {
    convergence::predicted_rate(lambda, gamma1, lip).map_err(err)
}

#[pymodule]
#[pyo3(name = "levy_bismut")]
fn levy_bismut_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectralModel>()?;
    m.add_class::<PyJumpDensity>()?;
    m.add_class::<PyDriftField>()?;
    m.add_class::<PyTestFunction>()?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyExperimentConfig>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_inverse_square_moment, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_rate, m)?)?;
    Ok(())
}
