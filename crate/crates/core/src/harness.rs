//! Experiment orchestration behind the command-line tool. Each suite returns
//! its CSV tables and the acceptance verdicts it decides.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{pad, ExperimentConfig};
use crate::convergence::{
    contraction_bounds, contraction_curve, gamma_integral, gradient_bound_check, gradient_probes, q_semigroup_integral,
    tv_decay_experiment, tv_lower_bound,
};
use crate::drift::{spectral_norm, DriftField};
use crate::engine::{jacobian_flow, solve_mild};
use crate::error::{Error, Result};
use crate::girsanov::{
    compensator_residual, constant_density_second_moment, reweight_check_many, z_moment_sweep, GirsanovScenario,
};
use crate::malliavin::{
    bismut_gradient, gradient_estimates, ibp_check, ibp_check_many, l1_derivative, poisson_inverse_square_moment,
    PerturbationField, TestFunction,
};
use crate::noise::JumpDensity;
use crate::report::{curve_row, curve_table, estimator_row, estimator_table, num, Report, Table, Verdict};
use crate::spectral::{CmSign, HVector, SpectralModel};
use crate::stats::{EstimatorResult, McRunner};
use crate::system::System;

/// Reference values of the inverse-square Poisson moment used as spot checks.
pub const POISSON_SPOT_VALUES: [(f64, f64); 2] = [(1.0, 0.42175), (10.0, 0.01186)];

const IBP_SCENARIO_SECONDS: f64 = 60.0;
const GRADIENT_SECONDS: f64 = 180.0;
const TV_SECONDS: f64 = 600.0;
const ALL_SECONDS: f64 = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    IbpCheck,
    Gradient,
    GirsanovCheck,
    Converge,
    Bounds,
    All,
    TruncationSweep,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Simulate,
        Command::IbpCheck,
        Command::Gradient,
        Command::GirsanovCheck,
        Command::Converge,
        Command::Bounds,
        Command::All,
        Command::TruncationSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::IbpCheck => "ibp-check",
            Command::Gradient => "gradient",
            Command::GirsanovCheck => "girsanov-check",
            Command::Converge => "converge",
            Command::Bounds => "bounds",
            Command::All => "all",
            Command::TruncationSweep => "truncation-sweep",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand `{s}`")))
    }
}

/// Test functions, directions and starting points shared by all suites.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenarios {
    /// Two cosines with frequencies `a ~ N(0, I / d)` and uniform phases.
    pub cosines: Vec<TestFunction>,
    /// Two unit directions.
    pub directions: Vec<HVector>,
    pub x: HVector,
    pub y: HVector,
    pub girsanov_v: HVector,
}

impl Scenarios {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let d = cfg.space.dim;
        let sc = &cfg.scenarios;
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let scale = 1.0 / (d as f64).sqrt();
        let mut cosines = Vec::with_capacity(2);
        for _ in 0..2 {
            let a = HVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            let theta = rng.random_range(0.0..TAU);
            cosines.push(TestFunction::cosine(a, theta));
        }
        let directions = (0..2)
            .map(|_| {
                let v = HVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = v.norm();
                v / norm
            })
            .collect();
        Ok(Self {
            cosines,
            directions,
            x: pad(&sc.x, d, "scenarios.x")?,
            y: pad(&sc.y, d, "scenarios.y")?,
            girsanov_v: pad(&sc.girsanov_v, d, "scenarios.girsanov_v")?,
        })
    }
}

pub struct Harness {
    pub config: ExperimentConfig,
    pub system: System,
    pub scenarios: Scenarios,
    runner: McRunner,
}

impl Harness {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let system = config.system()?;
        let scenarios = Scenarios::from_config(&config)?;
        let runner = McRunner::new(config.mc.seed, config.mc.workers)?;
        Ok(Self {
            config,
            system,
            scenarios,
            runner,
        })
    }

    pub fn runner(&self) -> &McRunner {
        &self.runner
    }

    pub fn run(&self, command: Command) -> Result<Report> {
        match command {
            Command::Simulate => self.simulate(),
            Command::IbpCheck => self.ibp(),
            Command::Gradient => self.gradient(),
            Command::GirsanovCheck => self.girsanov(),
            Command::Converge => self.converge(),
            Command::Bounds => self.bounds(),
            Command::TruncationSweep => self.truncation_sweep(&self.config.scenarios.truncation_dims),
            Command::All => self.all(),
        }
    }

    fn density_matrix(&self) -> Result<Vec<(&'static str, JumpDensity)>> {
        let n = &self.config.noise;
        Ok(vec![
            ("constant", JumpDensity::constant(n.lambda0)?),
            (
                "tilted-sine",
                JumpDensity::tilted_sine(n.lambda0, n.epsilon, pad(&n.b, self.system.dim(), "noise.b")?)?,
            ),
        ])
    }

    /// One trajectory from `x`, with the running primary jump count.
    pub fn simulate(&self) -> Result<Report> {
        let sys = &self.system;
        let d = sys.dim();
        let mut rng = self.runner.policy().experiment("simulate").sample(0);
        let path = sys.sample_path(self.config.sim.t_end, &mut rng)?;
        let traj = solve_mild(&sys.model, &sys.drift, &path, &self.scenarios.x, sys.dt)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|k| format!("x_{k}")));
        header.push("jumps".to_string());
        let mut table = Table {
            name: "trajectory".to_string(),
            header,
            rows: Vec::with_capacity(traj.times.len()),
        };
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let mut row = vec![num(*t)];
            row.extend(x.iter().map(|c| num(*c)));
            row.push(path.count_until(*t).to_string());
            table.push(row);
        }
        Ok(Report {
            verdicts: Vec::new(),
            tables: vec![table],
        })
    }

    /// Integration-by-parts suite and its sign negative control.
    pub fn ibp(&self) -> Result<Report> {
        let t = self.config.sim.t_end;
        let n = self.config.mc.samples;
        let runner = &self.runner;
        let sc = &self.scenarios;
        let mut table = estimator_table("ibp");
        let mut fs = sc.cosines.clone();
        fs.push(TestFunction::ConstantF(1.0));
        let names = ["cosine-1", "cosine-2", "constant"];
        let mut failures = Vec::new();
        let mut slowest = 0.0f64;
        for (dname, density) in self.density_matrix()? {
            let sys = self.system.clone().with_density(density)?;
            for (j, v) in sc.directions.iter().enumerate() {
                let started = Instant::now();
                let r = ibp_check_many(&sys, runner, &format!("ibp/{dname}/v{j}"), &fs, v, t, n)?;
                slowest = slowest.max(started.elapsed().as_secs_f64());
                for (k, name) in names.iter().enumerate() {
                    let (lhs, rhs) = (r[2 * k], r[2 * k + 1]);
                    let scenario = format!("{dname}/v{j}/{name}");
                    if !lhs.agrees_with(&rhs, 3.0, 0.0) {
                        failures.push(format!(
                            "{scenario}: lhs {:.5} rhs {:.5} (3 sigma {:.5})",
                            lhs.mean,
                            rhs.mean,
                            3.0 * lhs.combined_stderr(&rhs)
                        ));
                    }
                    table.push(estimator_row(&scenario, "lhs", &lhs));
                    table.push(estimator_row(&scenario, "rhs", &rhs));
                }
            }
        }

        // Linear test function with a constant density: both sides equal Lambda t <a, v>.
        let constant = self
            .system
            .clone()
            .with_density(JumpDensity::constant(self.config.noise.lambda0)?)?;
        let v = &sc.directions[0];
        let linear = TestFunction::LinearF(v.clone());
        let exact = constant.density.intensity() * t * v.dot(v);
        let (lhs, rhs) = ibp_check(&constant, runner, "ibp/linear", &linear, v, t, n)?;
        let exact_row = EstimatorResult::exact(exact, n, runner.seed());
        for (q, e) in [("lhs", &lhs), ("rhs", &rhs), ("closed-form", &exact_row)] {
            table.push(estimator_row("constant/v0/linear", q, e));
        }
        for (side, e) in [("lhs", &lhs), ("rhs", &rhs)] {
            if !e.consistent_with(exact, 3.0) {
                failures.push(format!(
                    "linear {side} {:.5} vs closed form {exact:.5} (3 sigma {:.5})",
                    e.mean,
                    3.0 * e.stderr
                ));
            }
        }
        if slowest > IBP_SCENARIO_SECONDS {
            failures.push(format!("slowest scenario took {slowest:.1} s"));
        }
        let crit1 = Verdict::new(
            1,
            "integration by parts",
            failures.is_empty(),
            if failures.is_empty() {
                format!(
                    "{} scenarios agree within 3 sigma; linear case {:.5} / {:.5} vs {exact:.5}; slowest {slowest:.1} s",
                    2 * sc.directions.len() * names.len(),
                    lhs.mean,
                    rhs.mean
                )
            } else {
                failures.join("; ")
            },
        );

        let flipped = constant.with_sign(CmSign::Paper);
        let (pl, pr) = ibp_check(&flipped, runner, "ibp/linear-paper-sign", &linear, v, t, n)?;
        table.push(estimator_row("paper-sign/v0/linear", "lhs", &pl));
        table.push(estimator_row("paper-sign/v0/linear", "rhs", &pr));
        let mirrored = (pl.mean + pr.mean).abs() <= 3.0 * pl.combined_stderr(&pr);
        let nonzero = pl.mean.abs() >= 5.0 * pl.stderr && pr.mean.abs() >= 5.0 * pr.stderr;
        let crit3 = Verdict::new(
            3,
            "sign negative control",
            mirrored && nonzero,
            format!(
                "uncorrected sign: lhs {:.5} +- {:.5}, rhs {:.5} +- {:.5}, lhs + rhs {:.5}",
                pl.mean,
                pl.stderr,
                pr.mean,
                pr.stderr,
                pl.mean + pr.mean
            ),
        );
        Ok(Report {
            verdicts: vec![crit1, crit3],
            tables: vec![table],
        })
    }

    /// Bismut estimator against central differences and the pathwise oracle.
    pub fn gradient(&self) -> Result<Report> {
        let started = Instant::now();
        let cfg = &self.config;
        let (t, n, eps) = (cfg.sim.t_end, cfg.mc.samples, cfg.scenarios.fd_eps);
        let sc = &self.scenarios;
        let f = &sc.cosines[0];
        let xi = &sc.directions[0];
        let mut table = estimator_table("gradient");
        let zero = self.system.clone().with_drift(DriftField::Zero)?;
        let mut failures = Vec::new();
        let mut summary = Vec::new();
        for (name, sys) in [("config-drift", &self.system), ("zero-drift", &zero)] {
            let row = gradient_estimates(
                sys,
                &self.runner,
                &format!("gradient/{name}"),
                f,
                &sc.x,
                xi,
                &[t],
                n,
                eps,
            )?[0];
            table.push(estimator_row(name, "bismut", &row.bismut));
            table.push(estimator_row(name, "finite-difference", &row.fd));
            table.push(estimator_row(name, "pathwise", &row.pathwise));
            if !row.bismut.agrees_with(&row.fd, 3.0, 1e-4) {
                failures.push(format!(
                    "{name}: bismut {:.5} vs fd {:.5} (allowance {:.5})",
                    row.bismut.mean,
                    row.fd.mean,
                    3.0 * row.bismut.combined_stderr(&row.fd) + 1e-4
                ));
            }
            if sys.drift.is_zero() && !row.bismut.agrees_with(&row.pathwise, 3.0, 0.0) {
                failures.push(format!(
                    "{name}: bismut {:.5} vs pathwise {:.5} (3 sigma {:.5})",
                    row.bismut.mean,
                    row.pathwise.mean,
                    3.0 * row.bismut.combined_stderr(&row.pathwise)
                ));
            }
            summary.push(format!(
                "{name}: bismut {:.5} fd {:.5} pathwise {:.5}",
                row.bismut.mean, row.fd.mean, row.pathwise.mean
            ));
        }
        let elapsed = started.elapsed().as_secs_f64();
        if elapsed > GRADIENT_SECONDS {
            failures.push(format!("took {elapsed:.1} s"));
        }
        let detail = if failures.is_empty() {
            format!("{}; {elapsed:.1} s", summary.join("; "))
        } else {
            failures.join("; ")
        };
        Ok(Report {
            verdicts: vec![Verdict::new(2, "Bismut formula", failures.is_empty(), detail)],
            tables: vec![table],
        })
    }

    /// Change-of-measure identities and the second-moment sweep.
    pub fn girsanov(&self) -> Result<Report> {
        let cfg = &self.config;
        let (t, n) = (cfg.sim.t_end, cfg.mc.samples);
        let runner = &self.runner;
        let v = &self.scenarios.girsanov_v;
        let gs = &self.scenarios.cosines;
        let mut table = Table::new(
            "girsanov",
            &["scenario", "epsilon", "quantity", "mean", "stderr", "n", "seed"],
        );
        let mut push = |scenario: &str, eps: f64, quantity: &str, e: &EstimatorResult| {
            table.push(vec![
                scenario.to_string(),
                num(eps),
                quantity.to_string(),
                num(e.mean),
                num(e.stderr),
                e.n.to_string(),
                e.seed.to_string(),
            ]);
        };
        let mut failures = Vec::new();
        let mut ratios = Vec::new();
        for (dname, density) in self.density_matrix()? {
            let sys = self.system.clone().with_density(density)?;
            for &eps in &cfg.scenarios.girsanov_eps {
                let sc = GirsanovScenario::new(eps, v.clone(), t)?;
                let id = format!("girsanov/{dname}/{eps}");
                let rw = reweight_check_many(&sys, runner, &id, &sc, gs, t, n)?;
                let z = rw[0].z_mean;
                push(dname, eps, "z-mean", &z);
                if !z.consistent_with(1.0, 3.0) {
                    failures.push(format!("{dname} eps {eps}: E[Z] = {:.5} +- {:.5}", z.mean, z.stderr));
                }
                for (k, r) in rw.iter().enumerate() {
                    push(dname, eps, &format!("weighted-cosine-{}", k + 1), &r.weighted);
                    push(dname, eps, &format!("reference-cosine-{}", k + 1), &r.reference);
                    if !r.weighted.agrees_with(&r.reference, 3.0, 0.0) {
                        failures.push(format!(
                            "{dname} eps {eps} cosine-{}: weighted {:.5} vs reference {:.5}",
                            k + 1,
                            r.weighted.mean,
                            r.reference.mean
                        ));
                    }
                }
                let residual = compensator_residual(&sys, runner, &format!("{id}/compensator"), &sc, n)?;
                push(dname, eps, "compensator-residual", &residual);
                if let Some(m2) = constant_density_second_moment(&sys, &sc, t) {
                    push(
                        dname,
                        eps,
                        "z-second-moment-exact",
                        &EstimatorResult::exact(m2, 0, runner.seed()),
                    );
                }
            }
            let sweep = z_moment_sweep(
                &sys,
                runner,
                &format!("girsanov-sweep/{dname}"),
                v,
                t,
                n,
                &cfg.scenarios.sweep_eps,
            )?;
            for (eps, e) in &sweep.rows {
                push(&format!("{dname}/sweep"), *eps, "difference-quotient-second-moment", e);
            }
            push(
                &format!("{dname}/sweep"),
                0.0,
                "martingale-second-moment",
                &sweep.martingale_square,
            );
            let ratio = sweep.max_over_median();
            ratios.push(format!("{dname} {ratio:.3}"));
            if !sweep.bounded() {
                failures.push(format!("{dname}: sweep max/median {ratio:.3}"));
            }
        }
        let detail = if failures.is_empty() {
            format!("E[Z] = 1 and reweighting hold; sweep max/median {}", ratios.join(", "))
        } else {
            failures.join("; ")
        };
        Ok(Report {
            verdicts: vec![Verdict::new(4, "change of measure", failures.is_empty(), detail)],
            tables: vec![table],
        })
    }

    /// Synchronous-coupling contraction and the total-variation decay.
    pub fn converge(&self) -> Result<Report> {
        let cfg = &self.config;
        let sc = &self.scenarios;
        let runner = &self.runner;
        let sys = &self.system;
        let diff = &sc.x - &sc.y;
        let dist = diff.norm();
        let mut contraction = curve_table("contraction");
        let mut failures = Vec::new();

        let zero = sys.clone().with_drift(DriftField::Zero)?;
        let cps = &cfg.sim.contraction_checkpoints;
        let n_c = cfg.mc.contraction_samples;
        let curve = contraction_curve(&zero, runner, "contraction/zero", &sc.x, &sc.y, cps, n_c)?;
        for (i, t) in cps.iter().enumerate() {
            let exact = zero.model.semigroup_apply(*t, &diff)?.norm();
            let (v, se) = (curve.values[i], curve.stderrs[i]);
            let ok = (v - exact).abs() <= 1e-12 * exact && se <= 1e-12 * exact;
            if !ok {
                failures.push(format!("zero drift t = {t}: {v:.15} +- {se:.3e} vs {exact:.15}"));
            }
            contraction.push(curve_row("zero-drift", *t, v, se, exact, ok));
        }
        let curve = contraction_curve(sys, runner, "contraction/config-drift", &sc.x, &sc.y, cps, n_c)?;
        for (i, (theory, ok)) in contraction_bounds(sys, &curve, dist).into_iter().enumerate() {
            let (t, v) = (cps[i], curve.values[i]);
            if !ok {
                failures.push(format!("t = {t}: {v:.5} above {theory:.5}"));
            }
            contraction.push(curve_row("config-drift", t, v, curve.stderrs[i], theory, ok));
        }
        let gap = sys.model.gamma1() - sys.drift.lip_bound();
        let rate_ok = curve.fitted_rate >= gap - 0.05;
        contraction.push(curve_row(
            "config-drift/fitted-rate",
            0.0,
            curve.fitted_rate,
            0.0,
            gap - 0.05,
            rate_ok,
        ));
        if !rate_ok {
            failures.push(format!("fitted rate {:.4} below {:.4}", curve.fitted_rate, gap - 0.05));
        }
        let crit6 = Verdict::new(
            6,
            "contraction",
            failures.is_empty(),
            if failures.is_empty() {
                format!("zero drift exact; fitted rate {:.4} vs gap {gap:.4}", curve.fitted_rate)
            } else {
                failures.join("; ")
            },
        );

        let started = Instant::now();
        let tv = tv_decay_experiment(
            sys,
            runner,
            "tv",
            &sc.x,
            &sc.y,
            &cfg.sim.tv_checkpoints,
            cfg.mc.tv_samples,
        )?;
        let elapsed = started.elapsed().as_secs_f64();
        let mut tv_table = curve_table("tv");
        for (i, e) in tv.estimates.iter().enumerate() {
            tv_table.push(curve_row(
                "tv",
                e.t,
                e.value,
                e.stderr,
                tv.envelope[i],
                tv.below_envelope[i],
            ));
            tv_table.push(curve_row(
                "tv/dictionary",
                e.t,
                e.dictionary,
                f64::NAN,
                tv.envelope[i],
                e.dictionary <= tv.envelope[i],
            ));
            tv_table.push(curve_row(
                "tv/histogram",
                e.t,
                e.histogram,
                f64::NAN,
                tv.envelope[i],
                e.histogram <= tv.envelope[i],
            ));
        }
        tv_table.push(curve_row(
            "tv/fitted-rate",
            0.0,
            tv.curve.fitted_rate,
            0.0,
            tv.r_star - 0.1,
            tv.rate_ok,
        ));
        let t_end = *cfg.sim.tv_checkpoints.last().expect("validated");
        tv_table.push(curve_row("tv/q-growth", t_end, tv.q_growth, 0.0, f64::NAN, true));
        let mut tv_failures = Vec::new();
        for (i, below) in tv.below_envelope.iter().enumerate() {
            if !below {
                tv_failures.push(format!(
                    "t = {}: {:.5} above envelope {:.5}",
                    tv.curve.checkpoints[i], tv.curve.values[i], tv.envelope[i]
                ));
            }
        }
        if !tv.rate_ok {
            tv_failures.push(format!(
                "fitted rate {:.4} below {:.4}",
                tv.curve.fitted_rate,
                tv.r_star - 0.1
            ));
        }
        if elapsed > TV_SECONDS {
            tv_failures.push(format!("took {elapsed:.1} s"));
        }
        let crit7 = Verdict::new(
            7,
            "total variation decay",
            tv_failures.is_empty(),
            format!(
                "r* {:.4}, fitted {:.4}, C {:.4}{}{}",
                tv.r_star,
                tv.curve.fitted_rate,
                tv.c,
                if tv_failures.is_empty() { "" } else { "; " },
                tv_failures.join("; ")
            ),
        );
        Ok(Report {
            verdicts: vec![crit6, crit7],
            tables: vec![contraction, tv_table],
        })
    }

    /// Jacobian bound, Poisson moment table, fractional-power table and the
    /// gradient bound.
    pub fn bounds(&self) -> Result<Report> {
        let mut report = Report::default();
        report.extend(self.jacobian_bound()?);
        report.extend(poisson_table());
        report.extend(self.frac_power_tables()?);
        report.extend(self.gradient_bound()?);
        Ok(report)
    }

    fn jacobian_bound(&self) -> Result<Report> {
        let sys = &self.system;
        let t = self.config.sim.t_end;
        let xi = &self.scenarios.directions[0];
        let x = &self.scenarios.x;
        let rate = -sys.model.gamma1() + sys.drift.lip_bound();
        let paths = self.config.mc.jacobian_paths;
        let raw = self.runner.collect("jacobian", paths, 2, |_, rng, out| {
            let path = sys.sample_path(t, rng)?;
            let traj = solve_mild(&sys.model, &sys.drift, &path, x, sys.dt)?;
            let flow = jacobian_flow(&sys.model, &sys.drift, &traj)?;
            out[0] = flow
                .times
                .iter()
                .zip(&flow.mats)
                .map(|(s, j)| spectral_norm(j) / (rate * s).exp())
                .fold(0.0, f64::max);
            let count = path.count_until(t);
            if count > 0 {
                let jt = flow.mats.last().expect("non-empty flow") * xi;
                let dv = l1_derivative(&flow, &path, &PerturbationField::JacobianDir(xi.clone()), t)?;
                out[1] = (dv / count as f64 - &jt).norm() / jt.norm();
            }
            Ok(())
        })?;
        let worst_ratio = raw.chunks(2).map(|r| r[0]).fold(0.0, f64::max);
        let worst_identity = raw.chunks(2).map(|r| r[1]).fold(0.0, f64::max);
        let tol = 1e-9 + 10.0 * sys.dt;
        let identity_tol = 1e-10;
        let mut table = Table::new("jacobian", &["statistic", "value", "tolerance", "paths", "verdict"]);
        let ratio_ok = worst_ratio <= 1.0 + tol;
        let identity_ok = worst_identity <= identity_tol;
        let label = |ok: bool| if ok { "PASS" } else { "FAIL" }.to_string();
        table.push(vec![
            "max-norm-over-bound".into(),
            num(worst_ratio),
            num(1.0 + tol),
            paths.to_string(),
            label(ratio_ok),
        ]);
        table.push(vec![
            "max-jump-representation-error".into(),
            num(worst_identity),
            num(identity_tol),
            paths.to_string(),
            label(identity_ok),
        ]);
        Ok(Report {
            verdicts: vec![Verdict::new(
                5,
                "Jacobian bound",
                ratio_ok && identity_ok,
                format!(
                    "max ||J_t|| / bound = {worst_ratio:.12} (limit {:.12}); max representation error {worst_identity:.3e} over {paths} paths",
                    1.0 + tol
                ),
            )],
            tables: vec![table],
        })
    }

    fn frac_power_tables(&self) -> Result<Report> {
        let model = &self.system.model;
        let mut table = Table::new("frac_power", &["delta", "t", "scaled_norm", "bound", "verdict"]);
        let mut failures = Vec::new();
        for delta in [0.25, 0.4] {
            let bound = SpectralModel::frac_power_constant(delta) + 1e-12;
            for k in 0..=60 {
                let t = 10f64.powf(-3.0 + 0.1 * k as f64);
                let scaled = t.powf(delta) * model.frac_power_norm(delta, t)?;
                let ok = scaled <= bound;
                if !ok {
                    failures.push(format!("delta {delta} t {t:.3e}: {scaled:.6} > {bound:.6}"));
                }
                table.push(vec![num(delta), num(t), num(scaled), num(bound), verdict_str(ok)]);
            }
        }
        let mut growth = Table::new("q_growth", &["t", "average", "verdict"]);
        let mut prev = f64::INFINITY;
        for k in 0..=30 {
            let t = 1.0 + 0.5 * k as f64;
            let avg = q_semigroup_integral(model, t) / t;
            let ok = avg < prev;
            if !ok {
                failures.push(format!("average at t = {t} is {avg:.6}, not below {prev:.6}"));
            }
            growth.push(vec![num(t), num(avg), verdict_str(ok)]);
            prev = avg;
        }
        Ok(Report {
            verdicts: vec![Verdict::new(
                9,
                "fractional power bound",
                failures.is_empty(),
                if failures.is_empty() {
                    "scaled norm below (delta/e)^delta on [1e-3, 1e3]; time average decreasing on [1, 16]".to_string()
                } else {
                    failures.join("; ")
                },
            )],
            tables: vec![table, growth],
        })
    }

    fn gradient_bound(&self) -> Result<Report> {
        let cfg = &self.config;
        let sys = &self.system;
        let probes = gradient_probes(sys.dim(), cfg.scenarios.probes, cfg.scenarios.seed.wrapping_add(1));
        let f = &self.scenarios.cosines[0];
        let rows = gradient_bound_check(
            sys,
            &self.runner,
            "gradient-bound",
            f,
            &cfg.sim.gradient_times,
            cfg.mc.gradient_bound_samples,
            &probes,
        )?;
        let mut table = curve_table("gradient_bound");
        let mut failures = Vec::new();
        let mut parts = Vec::new();
        for row in &rows {
            for (p, e) in row.probes.iter().enumerate() {
                let ok = e.mean.abs() <= row.rhs + 3.0 * e.stderr;
                table.push(curve_row(
                    &format!("probe-{p}"),
                    row.t,
                    e.mean.abs(),
                    e.stderr,
                    row.rhs,
                    ok,
                ));
            }
            table.push(curve_row("sup", row.t, row.sup_abs, row.stderr, row.rhs, row.pass));
            if !row.pass {
                failures.push(format!("t = {}: sup {:.5} above {:.5}", row.t, row.sup_abs, row.rhs));
            }
            parts.push(format!("t = {}: {:.4} <= {:.4}", row.t, row.sup_abs, row.rhs));
        }
        Ok(Report {
            verdicts: vec![Verdict::new(
                10,
                "gradient bound",
                failures.is_empty(),
                if failures.is_empty() {
                    parts.join("; ")
                } else {
                    failures.join("; ")
                },
            )],
            tables: vec![table],
        })
    }

    /// Bismut gradient, total-variation estimate and the kernel integral at
    /// each dimension, flagging changes above five standard errors between
    /// the two largest.
    pub fn truncation_sweep(&self, dims: &[usize]) -> Result<Report> {
        if dims.is_empty() || dims.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("dims", "need a non-empty non-decreasing list"));
        }
        let cfg = &self.config;
        let t = cfg.sim.t_end;
        let n = cfg.mc.gradient_bound_samples;
        let (a, theta) = match &self.scenarios.cosines[0] {
            TestFunction::Cosine { a, theta } => (a.clone(), *theta),
            _ => unreachable!("scenario cosines are cosines"),
        };
        let head: Vec<f64> = a.iter().take(2).copied().collect();
        let mut values: Vec<[(f64, f64); 3]> = Vec::with_capacity(dims.len());
        for &d in dims {
            let cfg_d = cfg.with_dim(d)?;
            let sys = cfg_d.system()?;
            let f = TestFunction::cosine(pad(&head, d, "a")?, theta);
            let x = pad(&cfg.scenarios.x, d, "scenarios.x")?;
            let y = pad(&cfg.scenarios.y, d, "scenarios.y")?;
            let e1 = pad(&[1.0], d, "xi")?;
            let g = bismut_gradient(&sys, &self.runner, "truncation/gradient", &f, &x, &e1, t, n)?;
            let tv = tv_lower_bound(&sys, &self.runner, "truncation/tv", &x, &y, t, n)?;
            let gamma_t = gamma_integral(&sys.model, sys.drift.lip_bound(), t)?;
            values.push([(g.mean, g.stderr), (tv.value, tv.stderr), (gamma_t, 0.0)]);
        }
        let names = ["bismut-gradient", "tv-lower-estimate", "kernel-integral"];
        let mut table = Table::new("truncation", &["dim", "quantity", "value", "stderr", "flagged"]);
        let k = values.len();
        for (i, (&d, row)) in dims.iter().zip(&values).enumerate() {
            for (q, (v, se)) in names.iter().zip(row) {
                let flagged = k >= 2 && i == k - 1 && {
                    let (pv, pse) = values[k - 2][names.iter().position(|n| n == q).unwrap()];
                    (v - pv).abs() > 5.0 * (se * se + pse * pse).sqrt()
                };
                table.push(vec![
                    d.to_string(),
                    q.to_string(),
                    num(*v),
                    num(*se),
                    flagged.to_string(),
                ]);
            }
        }
        Ok(Report {
            verdicts: Vec::new(),
            tables: vec![table],
        })
    }

    /// Every acceptance suite, then a reproducibility rerun of the
    /// integration-by-parts suite under a different worker count.
    pub fn all(&self) -> Result<Report> {
        let started = Instant::now();
        let mut report = Report::default();
        report.extend(self.ibp()?);
        report.extend(self.gradient()?);
        report.extend(self.girsanov()?);
        report.extend(self.converge()?);
        report.extend(self.bounds()?);
        let elapsed = started.elapsed().as_secs_f64();
        let workers = if self.runner.workers() == 1 { 2 } else { 1 };
        let mut other_cfg = self.config.clone();
        other_cfg.mc.workers = workers;
        let rerun = Harness::new(other_cfg)?.ibp()?;
        let mine = report.table("ibp").expect("ibp table").to_csv()?;
        let theirs = rerun.table("ibp").expect("ibp table").to_csv()?;
        let identical = mine == theirs;
        report.verdicts.push(Verdict::new(
            11,
            "engineering",
            identical && elapsed <= ALL_SECONDS,
            format!(
                "ibp.csv with {} and {workers} workers {}; suite took {elapsed:.1} s",
                self.runner.workers(),
                if identical { "byte-identical" } else { "DIFFERS" }
            ),
        ));
        Ok(report)
    }
}

fn verdict_str(ok: bool) -> String {
    if ok { "PASS" } else { "FAIL" }.to_string()
}

/// `E[1{N >= 1} / N^2]` against `6 / (lambda t)^2` on a log grid, plus spot values.
pub fn poisson_table() -> Report {
    let mut table = Table::new("poisson_moment", &["lambda_t", "exact", "bound", "verdict"]);
    let mut failures = Vec::new();
    for k in 0..=50 {
        let x = 10f64.powf(-2.0 + 0.1 * k as f64);
        let (exact, bound) = poisson_inverse_square_moment(x).expect("positive grid");
        let ok = exact <= bound;
        if !ok {
            failures.push(format!("lambda t = {x:.3e}: {exact:.6e} > {bound:.6e}"));
        }
        table.push(vec![num(x), num(exact), num(bound), verdict_str(ok)]);
    }
    let mut spots = Vec::new();
    for (x, reference) in POISSON_SPOT_VALUES {
        let (exact, _) = poisson_inverse_square_moment(x).expect("positive");
        let ok = (exact - reference).abs() <= 1e-4;
        spots.push(format!("exact({x}) = {exact:.6} vs {reference}"));
        if !ok {
            failures.push(format!(
                "spot exact({x}) = {exact:.6} differs from {reference} by more than 1e-4"
            ));
        }
    }
    Report {
        verdicts: vec![Verdict::new(
            8,
            "Poisson moment bound",
            failures.is_empty(),
            if failures.is_empty() {
                spots.join("; ")
            } else {
                failures.join("; ")
            },
        )],
        tables: vec![table],
    }
}
