//! `report.txt` (key = value lines) and the CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::OutputsConfig;
use crate::pipeline::{num, AmplitudeRow, CheckReport, OracleRow};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

pub fn write_report<W: Write>(report: &CheckReport, mut out: W) -> std::io::Result<()> {
    for (k, v) in &report.entries {
        writeln!(out, "{k} = {v}")?;
    }
    Ok(())
}

pub fn write_checks<W: Write>(report: &CheckReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "verdict", "value", "threshold", "detail"])?;
    for c in &report.checks {
        w.write_record([c.name.as_str(), c.verdict.label(), &opt(c.value), &opt(c.threshold), &c.detail])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_amplitude<W: Write>(rows: &[AmplitudeRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = rows.first().map_or(0, |r| r.w.len());
    let mut header: Vec<String> = (1..=dim).map(|i| format!("w{i}")).collect();
    header.extend(
        ["re_b0", "im_b0", "det_h", "sgn_h", "fiber_diameter", "prefactor_mode", "certified", "status"].map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.w.iter().map(|&x| num(x)).collect();
        match &r.result {
            Ok(a) => rec.extend([
                num(a.b0.re),
                num(a.b0.im),
                num(a.det_center),
                a.signature.to_string(),
                num(a.fiber_diameter),
            ]),
            Err(_) => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        rec.push(r.prefactor.name().into());
        rec.push(r.certified.to_string());
        rec.push(match &r.result {
            Ok(_) => "ok".into(),
            Err(e) => e.clone(),
        });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_oracle<W: Write>(rows: &[OracleRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "quantity",
        "lambda_or_epsilon",
        "oracle_re",
        "oracle_im",
        "predicted_re",
        "predicted_im",
        "ratio",
        "error_estimate",
        "verdict",
        "prefactor_mode",
        "certified",
        "note",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.quantity.name().into(),
            num(r.sweep),
            num(r.oracle.re),
            num(r.oracle.im),
            opt(r.predicted.map(|p| p.re)),
            opt(r.predicted.map(|p| p.im)),
            num(r.ratio),
            num(r.error_estimate),
            r.verdict.label().into(),
            r.prefactor.name().into(),
            r.certified.to_string(),
            r.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes into `dir/name`, creating the directory; returns the path.
pub fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(fs::File) -> Result<(), Box<dyn std::error::Error>>,
) -> Result<PathBuf, Box<dyn std::error::Error>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    f(fs::File::create(&path)?)?;
    Ok(path)
}

/// Writes the report and check table to `dir`.
pub fn write_check_outputs(report: &CheckReport, dir: &Path, names: &OutputsConfig) -> Result<(), Box<dyn std::error::Error>> {
    write_file(dir, &names.report, |f| Ok(write_report(report, f)?))?;
    write_file(dir, &names.checks, |f| Ok(write_checks(report, f)?))?;
    Ok(())
}
