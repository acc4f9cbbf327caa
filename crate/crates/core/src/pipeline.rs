//! Orchestration behind the command-line front end: problem construction,
//! the offline / online / sweep commands, and their CSV outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::config::{ProblemKind, RunConfig};
use crate::drivers::affine::{affine_samples, make_affine_family};
use crate::drivers::laplace::LaplaceBie;
use crate::drivers::rte::Rte;
use crate::error::{RbError, Result};
use crate::model_io::{load_model, save_model};
use crate::offline::{run_offline, OfflineOptions, OfflineOutput, ReducedModel};
use crate::online::{batch_evaluate_with, reference_solutions, ErrorReport, ReferenceSolutions};
use crate::oracle::{ProblemOracle, SampleSpace};

pub const SWEEP_HEADER: &str =
    "epsilon,s,n_rb,t_offline,t_coarse,t_online,t_fine,speedup,mean_rel_l2,failed,status";
pub const CONVERGENCE_HEADER: &str = "epsilon,mean_rel_l2,log10_epsilon,log10_mean_rel_l2";
pub const ONLINE_HEADER_WITH_REFERENCE: &str = "index,rel_l2_error,t_solve";
pub const ONLINE_HEADER: &str = "index,t_solve";

/// A concrete problem together with its sample space.
pub struct Problem {
    pub oracle: Box<dyn ProblemOracle + Send>,
    pub omega: SampleSpace,
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    match cfg.problem {
        ProblemKind::LaplaceBie => {
            let mut c = cfg.laplace.clone();
            c.seed = cfg.seed;
            let bie = LaplaceBie::new(c)?;
            let omega = bie.sample_space()?;
            Ok(Problem {
                oracle: Box::new(bie),
                omega,
            })
        }
        ProblemKind::Rte => {
            let rte = Rte::new(cfg.rte.clone())?;
            let omega = rte.sample_space()?;
            Ok(Problem {
                oracle: Box::new(rte),
                omega,
            })
        }
        ProblemKind::SyntheticAffine => {
            let a = &cfg.affine;
            a.validate()?;
            let fam = make_affine_family(a.n, a.rank, cfg.seed)?;
            let omega = affine_samples(a.samples, cfg.seed)?;
            Ok(Problem {
                oracle: Box::new(fam),
                omega,
            })
        }
    }
}

pub fn offline_options(cfg: &RunConfig, eps: f64) -> Result<OfflineOptions> {
    let mut o = OfflineOptions::new(cfg.thresholds(eps)?);
    o.enrich = cfg.enrich;
    o.append_solutions = cfg.append_solutions;
    o.operator_columns = cfg.operator_columns;
    o.seed = cfg.seed;
    o.rhs_mode = cfg.rhs_mode;
    Ok(o)
}

/// `model.rbm` for a single threshold, `model_eps_<eps>.rbm` for a list.
pub fn model_file_name(cfg: &RunConfig, eps: f64) -> String {
    if cfg.epsilons.len() == 1 {
        "model.rbm".to_string()
    } else {
        format!("model_eps_{eps:e}.rbm")
    }
}

#[derive(Debug)]
pub struct OfflineRun {
    pub epsilon: f64,
    pub output: OfflineOutput,
    pub path: PathBuf,
}

impl OfflineRun {
    pub fn summary(&self) -> String {
        let m = &self.output.model;
        format!(
            "epsilon={:e} s={} n_rb={} t_offline={:.3} model={}",
            self.epsilon,
            m.skeleton_count(),
            m.reduced_dim(),
            self.output.timings.total,
            self.path.display()
        )
    }
}

/// Builds and saves one reduced model per threshold.
pub fn cmd_offline(cfg: &RunConfig) -> Result<Vec<OfflineRun>> {
    let problem = build_problem(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut runs = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let output = run_offline(problem.oracle.as_ref(), &problem.omega, &offline_options(cfg, eps)?)?;
        let path = cfg.output_dir.join(model_file_name(cfg, eps));
        save_model(&output.model, &path)?;
        let run = OfflineRun {
            epsilon: eps,
            output,
            path,
        };
        info!("{}", run.summary());
        runs.push(run);
    }
    Ok(runs)
}

/// Reduced solves for every sample with a saved model; writes `online.csv`.
pub fn cmd_online(cfg: &RunConfig, model_path: &Path, with_reference: bool) -> Result<ErrorReport> {
    let model = load_model(model_path)?;
    let problem = build_problem(cfg)?;
    check_model(&model, &problem)?;
    let refs = if with_reference {
        Some(reference_solutions(problem.oracle.as_ref(), &problem.omega)?)
    } else {
        None
    };
    let report = batch_evaluate_with(&model, problem.oracle.as_ref(), &problem.omega, refs.as_ref())?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("online.csv"), online_csv(&report, with_reference))?;
    Ok(report)
}

fn check_model(model: &ReducedModel, problem: &Problem) -> Result<()> {
    let o = problem.oracle.as_ref();
    if model.problem != o.problem_name()
        || model.fine_dim != o.fine_dim()
        || model.sample_count != problem.omega.len()
    {
        return Err(RbError::Model(format!(
            "model (problem '{}', n = {}, p = {}) does not match the configuration (problem '{}', n = {}, p = {})",
            model.problem,
            model.fine_dim,
            model.sample_count,
            o.problem_name(),
            o.fine_dim(),
            problem.omega.len()
        )));
    }
    Ok(())
}

pub fn online_csv(report: &ErrorReport, with_reference: bool) -> String {
    let mut out = String::new();
    if with_reference {
        out.push_str(ONLINE_HEADER_WITH_REFERENCE);
        out.push('\n');
        for s in &report.samples {
            match s.error {
                Some(e) => writeln!(out, "{},{:e},{:.3}", s.index, e, s.seconds),
                None => writeln!(out, "{},failed,{:.3}", s.index, s.seconds),
            }
            .expect("writing to a String cannot fail");
        }
        let mean = report.mean_error.map_or("nan".to_string(), |m| format!("{m:e}"));
        writeln!(out, "mean,{mean},{:.3}", report.t_online).expect("writing to a String cannot fail");
    } else {
        out.push_str(ONLINE_HEADER);
        out.push('\n');
        for s in &report.samples {
            writeln!(out, "{},{:.3}", s.index, s.seconds).expect("writing to a String cannot fail");
        }
        writeln!(out, "total,{:.3}", report.t_online).expect("writing to a String cannot fail");
    }
    out
}

/// One threshold of a sweep. Numeric fields are `None` when the run failed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub skeletons: Option<usize>,
    pub reduced_dim: Option<usize>,
    pub t_offline: Option<f64>,
    pub t_coarse: Option<f64>,
    pub t_online: Option<f64>,
    pub t_fine: f64,
    pub mean_error: Option<f64>,
    pub failed_samples: usize,
    pub error: Option<String>,
}

impl SweepRow {
    /// `T_fine / (T_offline + T_online)`.
    pub fn speedup(&self) -> Option<f64> {
        match (self.t_offline, self.t_online) {
            (Some(a), Some(b)) if a + b > 0.0 => Some(self.t_fine / (a + b)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub problem: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// `(log10 eps, log10 mean error)` for rows with a finite positive error.
    pub fn convergence_points(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| match r.mean_error {
                Some(e) if e > 0.0 && e.is_finite() => Some((r.epsilon.log10(), e.log10())),
                _ => None,
            })
            .collect()
    }

    /// Least-squares slope of log error against log epsilon.
    pub fn convergence_slope(&self) -> Option<f64> {
        let pts = self.convergence_points();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

/// Offline and online stages for every threshold of `cfg`, against fine
/// reference solutions computed once.
pub fn run_sweep(problem: &Problem, cfg: &RunConfig) -> Result<SweepReport> {
    let refs = reference_solutions(problem.oracle.as_ref(), &problem.omega)?;
    run_sweep_with(problem, cfg, &refs)
}

pub fn run_sweep_with(problem: &Problem, cfg: &RunConfig, refs: &ReferenceSolutions) -> Result<SweepReport> {
    let oracle = problem.oracle.as_ref();
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let mut row = SweepRow {
            epsilon: eps,
            skeletons: None,
            reduced_dim: None,
            t_offline: None,
            t_coarse: None,
            t_online: None,
            t_fine: refs.seconds,
            mean_error: None,
            failed_samples: 0,
            error: None,
        };
        let result = run_offline(oracle, &problem.omega, &offline_options(cfg, eps)?).and_then(|out| {
            let report = batch_evaluate_with(&out.model, oracle, &problem.omega, Some(refs))?;
            Ok((out, report))
        });
        match result {
            Ok((out, report)) => {
                row.skeletons = Some(out.model.skeleton_count());
                row.reduced_dim = Some(out.model.reduced_dim());
                row.t_offline = Some(out.timings.total);
                row.t_coarse = Some(out.timings.coarse_sweep);
                row.t_online = Some(report.t_online);
                row.mean_error = report.mean_error;
                row.failed_samples = report.failed;
            }
            Err(e) => {
                log::error!("epsilon {eps:e}: {e}");
                row.error = Some(e.to_string());
            }
        }
        info!(
            "epsilon={:e} s={} n_rb={} mean_rel_l2={}",
            eps,
            opt(row.skeletons),
            opt(row.reduced_dim),
            row.mean_error.map_or("-".into(), |e| format!("{e:.4e}"))
        );
        rows.push(row);
    }
    Ok(SweepReport {
        problem: oracle.problem_name().to_string(),
        rows,
    })
}

fn opt(v: Option<usize>) -> String {
    v.map_or("-".into(), |v| v.to_string())
}

/// Runs a sweep and writes `sweep.csv` and `convergence.csv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    if cfg.epsilons.len() < 2 {
        return Err(RbError::Config("a sweep needs at least two epsilon values".into()));
    }
    let problem = build_problem(cfg)?;
    let report = run_sweep(&problem, cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("sweep.csv"), sweep_csv(&report))?;
    fs::write(cfg.output_dir.join("convergence.csv"), convergence_csv(&report))?;
    Ok(report)
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    let f3 = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.3}"));
    for r in &report.rows {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => csv_quote(&format!("error: {e}")),
        };
        writeln!(
            out,
            "{:e},{},{},{},{},{},{:.3},{},{},{},{}",
            r.epsilon,
            r.skeletons.map_or(String::new(), |v| v.to_string()),
            r.reduced_dim.map_or(String::new(), |v| v.to_string()),
            f3(r.t_offline),
            f3(r.t_coarse),
            f3(r.t_online),
            r.t_fine,
            f3(r.speedup()),
            r.mean_error.map_or(String::new(), |e| format!("{e:e}")),
            r.failed_samples,
            status
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn convergence_csv(report: &SweepReport) -> String {
    let mut out = String::from(CONVERGENCE_HEADER);
    out.push('\n');
    for r in &report.rows {
        if let Some(e) = r.mean_error.filter(|e| *e > 0.0 && e.is_finite()) {
            writeln!(out, "{:e},{:e},{},{}", r.epsilon, e, r.epsilon.log10(), e.log10())
                .expect("writing to a String cannot fail");
        }
    }
    out
}

/// Human-readable summary of a saved model.
pub fn model_summary(model: &ReducedModel) -> String {
    let mut out = String::new();
    let lines = [
        format!("problem            {}", model.problem),
        format!("fine dimension     {}", model.fine_dim),
        format!("samples            {}", model.sample_count),
        format!("epsilon            {:e}", model.thresholds.epsilon),
        format!("eta                {}", model.thresholds.eta),
        format!("skeletons          {}", model.skeleton_indices.len()),
        format!("additional         {}", model.additional_indices.len()),
        format!("reduced dimension  {}", model.reduced_dim()),
        format!("operator columns   {}", model.sample_columns.len()),
        format!("offset             {}", if model.projected_offset.is_some() { "yes" } else { "no" }),
        format!("rhs mode           {}", model.rhs_mode.as_str()),
    ];
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

/// Renders a `sweep.csv` file as an aligned table.
pub fn sweep_table(csv: &str) -> Result<String> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| RbError::Config("sweep file is empty".into()))?;
    if header != SWEEP_HEADER {
        return Err(RbError::Config("not a sweep.csv file (unexpected header)".into()));
    }
    let rows: Vec<Vec<String>> = std::iter::once(header)
        .chain(lines)
        .map(split_csv_line)
        .collect();
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:>w$}", w = widths[c])).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}
