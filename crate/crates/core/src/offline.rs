//! Offline stage: coarse-proxy skeleton selection, fine skeleton solves,
//! optional residual-driven enrichment, reduced basis, mixing matrix, and
//! projection of the skeleton operators.

use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{RbError, Result};
use crate::numerics::{
    cpqr_select, cpqr_select_absolute, least_squares, project_out, truncated_svd, Matrix,
    TruncatedBasis, Vector,
};
use crate::oracle::{
    coarse_sweep, fine_solve_many, sample_operators, OperatorHandle, OperatorSamplePlan,
    ProblemOracle, RhsMode, SampleSpace,
};

/// Upper bound on memory spent retaining dense skeleton operators between
/// the fine solves and the projection step. Beyond it, operators are
/// re-assembled on demand.
const RETAIN_BUDGET_BYTES: usize = 512 << 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Skeleton selection and SVD truncation threshold, in (0, 1).
    pub epsilon: f64,
    /// Multiplier for the enrichment threshold `eta * epsilon * a`.
    pub eta: f64,
}

impl Thresholds {
    pub fn new(epsilon: f64, eta: f64) -> Result<Self> {
        let t = Self { epsilon, eta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(RbError::InvalidArgument(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(RbError::InvalidArgument(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Skeleton parameters with their fine solutions and operators.
#[derive(Clone, Debug)]
pub struct SkeletonSet<'a> {
    /// Indices chosen from the coarse sweep.
    pub indices: Vec<usize>,
    /// Indices appended by enrichment, disjoint from `indices`.
    pub additional: Vec<usize>,
    /// Fine solutions used to build the basis, one column per entry of
    /// `indices` followed by any appended enrichment solutions.
    pub solutions: Matrix,
    /// Fine right-hand sides, one column per operator skeleton.
    pub sources: Matrix,
    /// One handle per operator skeleton, in `operator_indices()` order.
    pub operators: Vec<OperatorHandle<'a>>,
}

impl SkeletonSet<'_> {
    /// `indices` followed by `additional`: the column order of the mixing
    /// matrix rows and of the projected skeleton operators.
    pub fn operator_indices(&self) -> Vec<usize> {
        self.indices.iter().chain(&self.additional).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len() + self.additional.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything the online stage needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedModel {
    pub problem: String,
    /// Fine dimension `n`.
    pub fine_dim: usize,
    /// Sample-space size `p`.
    pub sample_count: usize,
    pub thresholds: Thresholds,
    pub skeleton_indices: Vec<usize>,
    pub additional_indices: Vec<usize>,
    /// Orthonormal basis `Q`, `n x n_rb`.
    pub basis: Matrix,
    pub singular_values: Vec<f64>,
    /// Mixing matrix `M`, `s x p` with `s = |skeletons| + |additional|`.
    pub mixing: Matrix,
    /// Column `j` is `vec(Q^T B_j Q)` for operator skeleton `j`.
    pub projected_operators: Matrix,
    /// `Q^T A Q` for split operators.
    pub projected_offset: Option<Matrix>,
    /// Column `j` is `Q^T f(w_j)` for operator skeleton `j`.
    pub projected_rhs: Option<Matrix>,
    pub rhs_mode: RhsMode,
    /// Operator columns sampled for the regression.
    pub sample_columns: Vec<usize>,
}

impl ReducedModel {
    pub fn reduced_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn skeleton_count(&self) -> usize {
        self.skeleton_indices.len() + self.additional_indices.len()
    }

    pub fn operator_indices(&self) -> Vec<usize> {
        self.skeleton_indices
            .iter()
            .chain(&self.additional_indices)
            .copied()
            .collect()
    }
}

/// Skeleton indices from the coarse sweep: pivots of a column-pivoted QR of
/// `S_C` with `r_ii >= eps * r_11`, in pivot order.
pub fn get_skeletons(coarse_solutions: &Matrix, eps: f64) -> Result<Vec<usize>> {
    let sel = cpqr_select(coarse_solutions, eps)?;
    Ok(sel.kept_indices().to_vec())
}

fn retain_operators(n: usize, count: usize) -> bool {
    n.saturating_mul(n)
        .saturating_mul(count)
        .saturating_mul(std::mem::size_of::<f64>())
        <= RETAIN_BUDGET_BYTES
}

/// Fine solves at the skeleton parameters.
pub fn solve_fine_skeletons<'a>(
    oracle: &'a dyn ProblemOracle,
    omega: &SampleSpace,
    skeletons: &[usize],
) -> Result<SkeletonSet<'a>> {
    if skeletons.is_empty() {
        return Err(RbError::InvalidArgument("skeleton set is empty".into()));
    }
    let samples = lookup(omega, skeletons)?;
    let retain = retain_operators(oracle.fine_dim(), skeletons.len());
    let solved = fine_solve_many(oracle, &samples, retain)?;
    let solutions = Matrix::from_columns(&solved.iter().map(|s| s.solution.clone()).collect::<Vec<_>>());
    let sources = Matrix::from_columns(&solved.iter().map(|s| s.source.clone()).collect::<Vec<_>>());
    Ok(SkeletonSet {
        indices: skeletons.to_vec(),
        additional: Vec::new(),
        solutions,
        sources,
        operators: solved.into_iter().map(|s| s.operator).collect(),
    })
}

fn lookup<'s>(omega: &'s SampleSpace, indices: &[usize]) -> Result<Vec<&'s crate::oracle::ParameterSample>> {
    indices
        .iter()
        .map(|&i| {
            omega.get(i).ok_or_else(|| {
                RbError::InvalidArgument(format!(
                    "sample index {i} out of range for |Omega| = {}",
                    omega.len()
                ))
            })
        })
        .collect()
}

/// Indices of operator samples that the current skeleton columns represent
/// poorly: pivots of a column-pivoted QR of the residual samples with
/// `r_ii >= eta * epsilon * a`, where `a` is the largest sample column norm.
pub fn select_additional(
    op_samples: &Matrix,
    current: &[usize],
    thresholds: &Thresholds,
) -> Result<Vec<usize>> {
    thresholds.validate()?;
    let a = op_samples
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    if a == 0.0 {
        return Ok(Vec::new());
    }
    let skel = select_columns(op_samples, current)?;
    let mut residual = project_out(op_samples, &skel)?;
    for &i in current {
        residual.column_mut(i).fill(0.0);
    }
    let sel = cpqr_select_absolute(&residual, thresholds.eta * thresholds.epsilon * a)?;
    Ok(sel
        .kept_indices()
        .iter()
        .copied()
        .filter(|i| !current.contains(i))
        .collect())
}

/// Residual-driven enrichment: finds additional skeletons from the operator
/// samples, fine-solves them, and appends their operators (and, when
/// `append_solutions` is set, their solutions) to the skeleton set.
pub fn additional_skeletons<'a>(
    oracle: &'a dyn ProblemOracle,
    omega: &SampleSpace,
    op_samples: &Matrix,
    mut skeletons: SkeletonSet<'a>,
    thresholds: &Thresholds,
    append_solutions: bool,
) -> Result<SkeletonSet<'a>> {
    let current = skeletons.operator_indices();
    let extra = select_additional(op_samples, &current, thresholds)?;
    debug!("enrichment selected {} additional skeletons", extra.len());
    if extra.is_empty() {
        return Ok(skeletons);
    }
    let samples = lookup(omega, &extra)?;
    let retain = retain_operators(oracle.fine_dim(), current.len() + extra.len());
    if !retain {
        for h in &mut skeletons.operators {
            h.release();
        }
    }
    let solved = fine_solve_many(oracle, &samples, retain)?;
    if append_solutions {
        skeletons.solutions = append_columns(&skeletons.solutions, solved.iter().map(|s| &s.solution));
    }
    skeletons.sources = append_columns(&skeletons.sources, solved.iter().map(|s| &s.source));
    skeletons.operators.extend(solved.into_iter().map(|s| s.operator));
    skeletons.additional.extend(extra);
    Ok(skeletons)
}

fn append_columns<'v>(m: &Matrix, extra: impl Iterator<Item = &'v Vector>) -> Matrix {
    let mut cols: Vec<Vector> = m.column_iter().map(|c| c.into_owned()).collect();
    cols.extend(extra.cloned());
    Matrix::from_columns(&cols)
}

fn select_columns(m: &Matrix, idx: &[usize]) -> Result<Matrix> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= m.ncols()) {
        return Err(RbError::InvalidArgument(format!(
            "column {bad} out of range for {} columns",
            m.ncols()
        )));
    }
    Ok(Matrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])]))
}

/// Reduced basis from the SVD of the fine skeleton solutions.
pub fn build_reduced_basis(skeletons: &SkeletonSet<'_>, eps: f64) -> Result<TruncatedBasis> {
    truncated_svd(&skeletons.solutions, eps)
}

/// Mixing matrix `M` minimizing `||L(O, S) M - L(O, :)||`.
pub fn build_mixing_matrix(op_samples: &Matrix, skeleton_indices: &[usize]) -> Result<Matrix> {
    if skeleton_indices.is_empty() {
        return Err(RbError::InvalidArgument("no skeleton columns for regression".into()));
    }
    let skel = select_columns(op_samples, skeleton_indices)?;
    if skel.nrows() < skel.ncols() {
        warn!(
            "underdetermined mixing regression: {} operator samples for {} skeletons; using the minimum-norm solution",
            skel.nrows(),
            skel.ncols()
        );
    }
    least_squares(&skel, op_samples)
}

/// `vec(Q^T B_j Q)` for every operator skeleton, as columns.
pub fn project_skeleton_operators(skeletons: &SkeletonSet<'_>, basis: &TruncatedBasis) -> Result<Matrix> {
    let q = &basis.basis;
    let cols: Vec<Result<Vector>> = skeletons
        .operators
        .par_iter()
        .map(|h| {
            let p = h.project(q).map_err(RbError::at_sample(h.sample().index))?;
            Ok(Vector::from_column_slice(p.as_slice()))
        })
        .collect();
    let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_columns(&cols))
}

#[derive(Clone, Debug)]
pub struct OfflineOptions {
    pub thresholds: Thresholds,
    pub enrich: bool,
    pub append_solutions: bool,
    /// Number of operator columns to sample; `None` uses
    /// [`OperatorSamplePlan::default_column_count`].
    pub operator_columns: Option<usize>,
    pub seed: u64,
    /// Overrides the oracle's preferred right-hand-side path.
    pub rhs_mode: Option<RhsMode>,
}

impl OfflineOptions {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            thresholds,
            enrich: true,
            append_solutions: true,
            operator_columns: None,
            seed: 0,
            rhs_mode: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OfflineTimings {
    /// Coarse sweep alone (included in `total`).
    pub coarse_sweep: f64,
    /// Whole offline stage, seconds.
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct OfflineOutput {
    pub model: ReducedModel,
    pub timings: OfflineTimings,
    /// Number of skeletons chosen from the coarse sweep before enrichment.
    pub initial_skeletons: usize,
}

/// Runs the complete offline stage.
pub fn run_offline(
    oracle: &dyn ProblemOracle,
    omega: &SampleSpace,
    options: &OfflineOptions,
) -> Result<OfflineOutput> {
    options.thresholds.validate()?;
    let eps = options.thresholds.epsilon;
    let start = Instant::now();

    let coarse = coarse_sweep(oracle, omega).map_err(RbError::in_stage("coarse sweep"))?;
    let t_coarse = start.elapsed().as_secs_f64();

    let skeleton_idx = get_skeletons(&coarse, eps).map_err(RbError::in_stage("skeleton selection"))?;
    let initial = skeleton_idx.len();
    debug!("coarse sweep selected {initial} skeletons");

    let mut skeletons = solve_fine_skeletons(oracle, omega, &skeleton_idx)
        .map_err(RbError::in_stage("fine skeleton solves"))?;

    let n = oracle.fine_dim();
    let columns = options
        .operator_columns
        .unwrap_or_else(|| OperatorSamplePlan::default_column_count(n, skeleton_idx.len()));
    let plan = OperatorSamplePlan::random_columns(n, columns.min(n), options.seed)
        .map_err(RbError::in_stage("operator sampling"))?;
    let op_samples =
        sample_operators(oracle, omega, &plan).map_err(RbError::in_stage("operator sampling"))?;

    if options.enrich {
        skeletons = additional_skeletons(
            oracle,
            omega,
            &op_samples,
            skeletons,
            &options.thresholds,
            options.append_solutions,
        )
        .map_err(RbError::in_stage("additional skeletons"))?;
    }

    let basis = build_reduced_basis(&skeletons, eps).map_err(RbError::in_stage("reduced basis"))?;
    let mixing = build_mixing_matrix(&op_samples, &skeletons.operator_indices())
        .map_err(RbError::in_stage("mixing matrix"))?;
    let projected_operators = project_skeleton_operators(&skeletons, &basis)
        .map_err(RbError::in_stage("operator projection"))?;
    let projected_offset = oracle.offset().map(|off| off.project(&basis.basis));
    let rhs_mode = options.rhs_mode.unwrap_or_else(|| oracle.rhs_mode());
    let projected_rhs = match rhs_mode {
        RhsMode::Interpolated => Some(basis.basis.transpose() * &skeletons.sources),
        RhsMode::Direct => None,
    };

    let model = ReducedModel {
        problem: oracle.problem_name().to_string(),
        fine_dim: n,
        sample_count: omega.len(),
        thresholds: options.thresholds,
        skeleton_indices: skeletons.indices.clone(),
        additional_indices: skeletons.additional.clone(),
        basis: basis.basis,
        singular_values: basis.singular_values,
        mixing,
        projected_operators,
        projected_offset,
        projected_rhs,
        rhs_mode,
        sample_columns: plan.columns().to_vec(),
    };
    Ok(OfflineOutput {
        model,
        timings: OfflineTimings {
            coarse_sweep: t_coarse,
            total: start.elapsed().as_secs_f64(),
        },
        initial_skeletons: initial,
    })
}
