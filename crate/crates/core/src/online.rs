//! Online stage: interpolate the reduced operator, assemble the reduced
//! right-hand side, solve the small system and lift back to the fine space.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;

use crate::error::{RbError, Result};
use crate::numerics::{DenseLu, Matrix, Vector};
use crate::offline::ReducedModel;
use crate::oracle::{fine_solve, ProblemOracle, RhsMode, SampleSpace};

/// Reduced systems with a condition estimate above this are rejected.
pub const MAX_REDUCED_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSolveResult {
    pub sample_index: usize,
    /// `v`, length `n_rb`.
    pub reduced_coefficients: Vector,
    /// `u_rb = Q v`, length `n`.
    pub lifted_solution: Vector,
}

fn check_index(model: &ReducedModel, i: usize) -> Result<()> {
    if i >= model.sample_count || i >= model.mixing.ncols() {
        return Err(RbError::InvalidArgument(format!(
            "sample index {i} out of range for |Omega| = {}",
            model.sample_count
        )));
    }
    Ok(())
}

/// `reshape(L_rb_hat * weights)` plus the projected offset.
pub fn interpolate_reduced_operator(model: &ReducedModel, weights: &Vector) -> Result<Matrix> {
    if weights.len() != model.projected_operators.ncols() {
        return Err(RbError::DimensionMismatch(format!(
            "{} interpolation weights for {} skeleton operators",
            weights.len(),
            model.projected_operators.ncols()
        )));
    }
    let k = model.reduced_dim();
    let v = &model.projected_operators * weights;
    let mut op = Matrix::from_column_slice(k, k, v.as_slice());
    if let Some(off) = &model.projected_offset {
        op += off;
    }
    Ok(op)
}

/// Interpolated reduced operator for sample `i`.
pub fn assemble_reduced_operator(model: &ReducedModel, i: usize) -> Result<Matrix> {
    check_index(model, i)?;
    interpolate_reduced_operator(model, &model.mixing.column(i).into_owned())
}

/// `F_rb_hat * M(:, i)`: the reduced right-hand side interpolated from the
/// skeleton right-hand sides.
pub fn reduced_rhs_interpolated(model: &ReducedModel, i: usize) -> Result<Vector> {
    check_index(model, i)?;
    let f = model.projected_rhs.as_ref().ok_or_else(|| {
        RbError::InvalidArgument("model has no projected skeleton right-hand sides".into())
    })?;
    Ok(f * model.mixing.column(i))
}

fn check_compatible(model: &ReducedModel, oracle: &dyn ProblemOracle) -> Result<()> {
    if model.problem != oracle.problem_name() || model.fine_dim != oracle.fine_dim() {
        return Err(RbError::Model(format!(
            "model was built for problem '{}' with n = {}, oracle is '{}' with n = {}",
            model.problem,
            model.fine_dim,
            oracle.problem_name(),
            oracle.fine_dim()
        )));
    }
    Ok(())
}

/// Solves the reduced system for sample `i` of `omega`.
pub fn reduced_solve(
    model: &ReducedModel,
    oracle: &dyn ProblemOracle,
    omega: &SampleSpace,
    i: usize,
) -> Result<ReducedSolveResult> {
    check_compatible(model, oracle)?;
    let sample = omega.get(i).ok_or_else(|| {
        RbError::InvalidArgument(format!("sample index {i} out of range for |Omega| = {}", omega.len()))
    })?;
    let op = assemble_reduced_operator(model, i)?;
    let rhs = match model.rhs_mode {
        RhsMode::Interpolated => reduced_rhs_interpolated(model, i)?,
        RhsMode::Direct => oracle.reduced_rhs(&model.basis, sample)?,
    };
    let v = solve_reduced(&op, &rhs, i)?;
    let u = &model.basis * &v;
    Ok(ReducedSolveResult {
        sample_index: i,
        reduced_coefficients: v,
        lifted_solution: u,
    })
}

fn solve_reduced(op: &Matrix, rhs: &Vector, index: usize) -> Result<Vector> {
    let lu = DenseLu::new(op).map_err(|_| RbError::IllConditioned {
        index,
        cond: f64::INFINITY,
    })?;
    let cond = lu.condition_estimate();
    if !(cond <= MAX_REDUCED_CONDITION) {
        return Err(RbError::IllConditioned { index, cond });
    }
    Ok(lu.solve(rhs))
}

/// Fine reference solutions for every sample, with their wall time.
#[derive(Clone, Debug)]
pub struct ReferenceSolutions {
    pub solutions: Vec<Vector>,
    pub seconds: f64,
}

pub fn reference_solutions(oracle: &dyn ProblemOracle, omega: &SampleSpace) -> Result<ReferenceSolutions> {
    let start = Instant::now();
    let solutions: Vec<Result<Vector>> = omega
        .samples()
        .par_iter()
        .map(|s| {
            fine_solve(oracle, s, false)
                .map(|f| f.solution)
                .map_err(RbError::at_sample(s.index))
        })
        .collect();
    let solutions = solutions.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ReferenceSolutions {
        solutions,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn relative_l2(reference: &Vector, approx: &Vector) -> f64 {
    let d = (reference - approx).norm();
    let r = reference.norm();
    if r == 0.0 {
        d
    } else {
        d / r
    }
}

/// Per-sample outcome of a batch evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub index: usize,
    pub seconds: f64,
    /// Relative L2 error against the fine solution, when a reference was used.
    pub error: Option<f64>,
    /// Failure message, when the reduced solve failed.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub samples: Vec<SampleOutcome>,
    /// Mean relative L2 error over the samples that succeeded.
    pub mean_error: Option<f64>,
    pub failed: usize,
    /// Wall time of all reduced solves.
    pub t_online: f64,
    /// Wall time of the fine reference solves, when computed.
    pub t_fine: Option<f64>,
}

impl ErrorReport {
    pub fn errors(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.error).collect()
    }
}

/// Reduced solves for every sample of `omega`, optionally against fine
/// reference solutions. Per-sample failures are recorded, not fatal.
pub fn batch_evaluate(
    model: &ReducedModel,
    oracle: &dyn ProblemOracle,
    omega: &SampleSpace,
    reference: bool,
) -> Result<ErrorReport> {
    let refs = if reference {
        Some(reference_solutions(oracle, omega)?)
    } else {
        None
    };
    batch_evaluate_with(model, oracle, omega, refs.as_ref())
}

/// Like [`batch_evaluate`] with precomputed reference solutions.
pub fn batch_evaluate_with(
    model: &ReducedModel,
    oracle: &dyn ProblemOracle,
    omega: &SampleSpace,
    reference: Option<&ReferenceSolutions>,
) -> Result<ErrorReport> {
    check_compatible(model, oracle)?;
    if omega.len() != model.sample_count {
        return Err(RbError::Model(format!(
            "model was built for {} samples, sample space has {}",
            model.sample_count,
            omega.len()
        )));
    }
    if let Some(r) = reference {
        if r.solutions.len() != omega.len() {
            return Err(RbError::DimensionMismatch(format!(
                "{} reference solutions for {} samples",
                r.solutions.len(),
                omega.len()
            )));
        }
    }
    let start = Instant::now();
    let outcomes: Vec<(usize, f64, Result<ReducedSolveResult>)> = (0..omega.len())
        .into_par_iter()
        .map(|i| {
            let t = Instant::now();
            let r = reduced_solve(model, oracle, omega, i);
            (i, t.elapsed().as_secs_f64(), r)
        })
        .collect();
    let t_online = start.elapsed().as_secs_f64();

    let mut samples = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for (i, secs, r) in outcomes {
        match r {
            Ok(sol) => {
                let error = reference.map(|refs| relative_l2(&refs.solutions[i], &sol.lifted_solution));
                samples.push(SampleOutcome {
                    index: i,
                    seconds: secs,
                    error,
                    failure: None,
                });
            }
            Err(e) => {
                warn!("reduced solve failed for sample {i}: {e}");
                failed += 1;
                samples.push(SampleOutcome {
                    index: i,
                    seconds: secs,
                    error: None,
                    failure: Some(e.to_string()),
                });
            }
        }
    }
    let errs: Vec<f64> = samples.iter().filter_map(|s| s.error).collect();
    let mean_error = if reference.is_some() && !errs.is_empty() {
        Some(errs.iter().sum::<f64>() / errs.len() as f64)
    } else {
        None
    };
    Ok(ErrorReport {
        samples,
        mean_error,
        failed,
        t_online,
        t_fine: reference.map(|r| r.seconds),
    })
}
