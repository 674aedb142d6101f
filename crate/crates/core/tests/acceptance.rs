//! Full acceptance run on the reference configuration: one PASS/FAIL line per
//! criterion. Criteria 7 and 8 fail on the reference configuration for
//! reasons fixed by their own definitions; for those the run checks that the
//! failure is exactly the known one and nothing else.

use std::process::ExitCode;

use levy_bismut::config::reference;
use levy_bismut::harness::POISSON_SPOT_VALUES;
use levy_bismut::report::Report;
use levy_bismut::{Command, Harness};

/// The envelope is calibrated at t = 2 while the estimate decays faster than
/// the predicted rate, so only the t = 1 checkpoint may sit above it.
fn tv_failure_is_calibration_only(report: &Report) -> Result<(), String> {
    let t = report.table("tv").ok_or("no tv table")?;
    let (e, time, verdict) = (t.column("experiment"), t.column("t"), t.column("verdict"));
    for r in &t.rows {
        let tt: f64 = r[time].parse().map_err(|_| "bad t")?;
        let expected = if r[e] == "tv" && tt == 1.0 { "FAIL" } else { "PASS" };
        if (r[e] == "tv" || r[e] == "tv/fitted-rate") && r[verdict] != expected {
            return Err(format!("{} at t = {} is {}", r[e], r[time], r[verdict]));
        }
    }
    Ok(())
}

/// Only the spot value at lambda t = 10 disagrees; the bound holds on the grid.
fn poisson_failure_is_spot_value_only(report: &Report) -> Result<(), String> {
    let t = report.table("poisson_moment").ok_or("no poisson table")?;
    if t.rows.iter().any(|r| r[t.column("verdict")] != "PASS") {
        return Err("moment bound violated on the grid".into());
    }
    let detail = &report.verdict(8).ok_or("no verdict 8")?.detail;
    let (x_bad, _) = POISSON_SPOT_VALUES[1];
    let (x_good, _) = POISSON_SPOT_VALUES[0];
    if !detail.contains(&format!("exact({x_bad})")) || detail.contains(&format!("exact({x_good})")) {
        return Err(format!("unexpected spot failures: {detail}"));
    }
    Ok(())
}

fn main() -> ExitCode {
    let harness = Harness::new(reference()).expect("reference configuration");
    let report = harness.run(Command::All).expect("acceptance run");
    let mut ok = true;
    for criterion in 1..=11 {
        let Some(v) = report.verdict(criterion) else {
            println!("criterion {criterion}: FAIL | no verdict produced");
            ok = false;
            continue;
        };
        println!("{v}");
        let expectation = match criterion {
            7 if !v.pass => tv_failure_is_calibration_only(&report),
            8 if !v.pass => poisson_failure_is_spot_value_only(&report),
            _ if v.pass => Ok(()),
            _ => Err("unexpected failure".to_string()),
        };
        match expectation {
            Ok(()) if !v.pass => println!("  known failure mode confirmed"),
            Ok(()) => {}
            Err(e) => {
                println!("  {e}");
                ok = false;
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
