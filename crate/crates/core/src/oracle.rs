//! The boundary between the generic pipeline and a concrete parameterized
//! integral equation `L(w) u = f(w)`.
//!
//! A problem is described by a [`ProblemOracle`]. Operators may be split as
//! `L(w) = A + B(w)` with a constant offset `A`; in that case every operator
//! capability (column sampling, projection, interpolation) refers to the
//! varying part `B(w)` and the offset is exposed separately.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{RbError, Result};
use crate::numerics::{dense_solve, Matrix, Vector};

/// One point of the discrete sample space.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSample {
    /// Position in the sample space (0-based); column index in every sweep matrix.
    pub index: usize,
    pub coefficients: Vec<f64>,
}

/// Ordered, fixed list of parameter samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpace {
    samples: Vec<ParameterSample>,
}

impl SampleSpace {
    /// Builds a sample space, assigning indices in the given order. All
    /// coefficient vectors must have the same length.
    pub fn new(coefficients: Vec<Vec<f64>>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(RbError::InvalidArgument("sample space must not be empty".into()));
        }
        let len = coefficients[0].len();
        if coefficients.iter().any(|c| c.len() != len) {
            return Err(RbError::InvalidArgument(
                "all samples must carry the same number of coefficients".into(),
            ));
        }
        let samples = coefficients
            .into_iter()
            .enumerate()
            .map(|(index, coefficients)| ParameterSample { index, coefficients })
            .collect();
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ParameterSample> {
        self.samples.get(index)
    }

    pub fn samples(&self) -> &[ParameterSample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ParameterSample> {
        self.samples.iter()
    }
}

/// Constant part `A` of an operator split `L(w) = A + B(w)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Offset {
    ScaledIdentity(f64),
    Dense(Matrix),
}

impl Offset {
    pub fn apply(&self, v: &Vector) -> Vector {
        match self {
            Offset::ScaledIdentity(c) => v * *c,
            Offset::Dense(a) => a * v,
        }
    }

    /// `Q^T A Q`.
    pub fn project(&self, q: &Matrix) -> Matrix {
        match self {
            Offset::ScaledIdentity(c) => q.transpose() * q * *c,
            Offset::Dense(a) => q.transpose() * (a * q),
        }
    }

    pub fn add_to(&self, m: &mut Matrix) {
        match self {
            Offset::ScaledIdentity(c) => {
                for i in 0..m.nrows().min(m.ncols()) {
                    m[(i, i)] += *c;
                }
            }
            Offset::Dense(a) => *m += a,
        }
    }
}

/// How the online stage obtains the reduced right-hand side `Q^T f(w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhsMode {
    /// The oracle forms `f(w)` cheaply and projects it.
    Direct,
    /// `Q^T f(w)` is interpolated from the skeleton right-hand sides with the
    /// mixing matrix.
    Interpolated,
}

impl RhsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RhsMode::Direct => "direct",
            RhsMode::Interpolated => "interpolated",
        }
    }
}

/// Capabilities a concrete problem provides to the pipeline.
pub trait ProblemOracle: Sync {
    /// Identifier used in model files and configs.
    fn problem_name(&self) -> &'static str;

    /// Fine-model unknown count `n`.
    fn fine_dim(&self) -> usize;

    /// Coarse-proxy unknown count `n_C`.
    fn coarse_dim(&self) -> usize;

    /// Solves the coarse-proxy problem.
    fn coarse_solve(&self, sample: &ParameterSample) -> Result<Vector>;

    /// Dense fine operator, or only its varying part `B(w)` when
    /// [`ProblemOracle::offset`] is `Some`.
    fn assemble_varying(&self, sample: &ParameterSample) -> Result<Matrix>;

    /// Selected columns of the matrix returned by `assemble_varying`,
    /// computed without assembling the rest.
    fn varying_columns(&self, sample: &ParameterSample, cols: &[usize]) -> Result<Matrix>;

    fn offset(&self) -> Option<&Offset> {
        None
    }

    /// Fine right-hand side `f(w)`. The assembled varying operator is passed
    /// for problems whose source depends on it.
    fn source(&self, sample: &ParameterSample, varying: &Matrix) -> Result<Vector>;

    fn rhs_mode(&self) -> RhsMode {
        RhsMode::Direct
    }

    /// `Q^T f(w)`. The default assembles the operator; oracles with a cheap
    /// source override it.
    fn reduced_rhs(&self, q: &Matrix, sample: &ParameterSample) -> Result<Vector> {
        let b = self.assemble_varying(sample)?;
        Ok(q.transpose() * self.source(sample, &b)?)
    }
}

/// Deferred access to the fine operator of one sample.
///
/// The dense matrix is assembled on demand unless it was retained from the
/// fine solve that produced the handle.
#[derive(Clone)]
pub struct OperatorHandle<'a> {
    oracle: &'a dyn ProblemOracle,
    sample: ParameterSample,
    cached: Option<Arc<Matrix>>,
}

impl std::fmt::Debug for OperatorHandle<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("problem", &self.oracle.problem_name())
            .field("sample", &self.sample.index)
            .field("materialized", &self.cached.is_some())
            .finish()
    }
}

impl<'a> OperatorHandle<'a> {
    pub fn deferred(oracle: &'a dyn ProblemOracle, sample: ParameterSample) -> Self {
        Self {
            oracle,
            sample,
            cached: None,
        }
    }

    pub fn materialized(
        oracle: &'a dyn ProblemOracle,
        sample: ParameterSample,
        varying: Matrix,
    ) -> Self {
        Self {
            oracle,
            sample,
            cached: Some(Arc::new(varying)),
        }
    }

    pub fn sample(&self) -> &ParameterSample {
        &self.sample
    }

    pub fn dim(&self) -> usize {
        self.oracle.fine_dim()
    }

    pub fn is_materialized(&self) -> bool {
        self.cached.is_some()
    }

    /// Drops the retained dense matrix; later calls re-assemble it.
    pub fn release(&mut self) {
        self.cached = None;
    }

    pub fn offset(&self) -> Option<&Offset> {
        self.oracle.offset()
    }

    /// The varying part as a dense matrix.
    pub fn varying(&self) -> Result<Arc<Matrix>> {
        match &self.cached {
            Some(m) => Ok(Arc::clone(m)),
            None => Ok(Arc::new(self.oracle.assemble_varying(&self.sample)?)),
        }
    }

    /// `B(w) v`, or `L(w) v` for problems without offset.
    pub fn apply_varying(&self, v: &Vector) -> Result<Vector> {
        Ok(&*self.varying()? * v)
    }

    /// `L(w) v` including the offset.
    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        let mut out = self.apply_varying(v)?;
        if let Some(off) = self.offset() {
            out += off.apply(v);
        }
        Ok(out)
    }

    /// Entries of `vec(B(w))` at column-major vec-indices `idx`.
    pub fn entries(&self, idx: &[usize]) -> Result<Vec<f64>> {
        let n = self.dim();
        let m = self.varying()?;
        idx.iter()
            .map(|&k| {
                if k >= n * n {
                    Err(RbError::InvalidArgument(format!(
                        "vec-index {k} out of range for a {n}x{n} operator"
                    )))
                } else {
                    Ok(m[(k % n, k / n)])
                }
            })
            .collect()
    }

    /// `Q^T B(w) Q` (or `Q^T L(w) Q` without offset).
    pub fn project(&self, q: &Matrix) -> Result<Matrix> {
        let m = self.varying()?;
        Ok(q.transpose() * (&*m * q))
    }

    /// `Q^T L(w) Q` including the offset.
    pub fn project_full(&self, q: &Matrix) -> Result<Matrix> {
        let mut p = self.project(q)?;
        if let Some(off) = self.offset() {
            p += off.project(q);
        }
        Ok(p)
    }
}

/// Output of one fine solve.
#[derive(Clone, Debug)]
pub struct FineSolution<'a> {
    pub solution: Vector,
    pub source: Vector,
    pub operator: OperatorHandle<'a>,
}

/// Assembles and directly solves the fine system for one sample.
pub fn fine_solve<'a>(
    oracle: &'a dyn ProblemOracle,
    sample: &ParameterSample,
    retain_operator: bool,
) -> Result<FineSolution<'a>> {
    let varying = oracle.assemble_varying(sample)?;
    let source = oracle.source(sample, &varying)?;
    let mut full = varying.clone();
    if let Some(off) = oracle.offset() {
        off.add_to(&mut full);
    }
    let solution = dense_solve(&full, &source)?;
    drop(full);
    let operator = if retain_operator {
        OperatorHandle::materialized(oracle, sample.clone(), varying)
    } else {
        OperatorHandle::deferred(oracle, sample.clone())
    };
    Ok(FineSolution {
        solution,
        source,
        operator,
    })
}

/// Fine solves for a list of samples, results in input order.
pub fn fine_solve_many<'a>(
    oracle: &'a dyn ProblemOracle,
    samples: &[&ParameterSample],
    retain_operator: bool,
) -> Result<Vec<FineSolution<'a>>> {
    samples
        .par_iter()
        .map(|s| fine_solve(oracle, s, retain_operator).map_err(RbError::at_sample(s.index)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Coarse-proxy solution matrix `S_C`; column `i` belongs to sample `i`.
pub fn coarse_sweep(oracle: &dyn ProblemOracle, omega: &SampleSpace) -> Result<Matrix> {
    let cols: Vec<Result<Vector>> = omega
        .samples()
        .par_iter()
        .map(|s| oracle.coarse_solve(s).map_err(RbError::at_sample(s.index)))
        .collect();
    let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
    let nc = oracle.coarse_dim();
    if let Some(bad) = cols.iter().position(|c| c.len() != nc) {
        return Err(RbError::DimensionMismatch(format!(
            "coarse solution for sample {bad} has length {}, expected {nc}",
            cols[bad].len()
        )));
    }
    Ok(Matrix::from_columns(&cols))
}

/// The fixed set of operator entries sampled for the mixing-matrix
/// regression: whole columns of the (varying) operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorSamplePlan {
    n: usize,
    columns: Vec<usize>,
}

impl OperatorSamplePlan {
    pub fn from_columns(n: usize, columns: Vec<usize>) -> Result<Self> {
        if columns.is_empty() {
            return Err(RbError::InvalidArgument("operator sample plan is empty".into()));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= n) {
            return Err(RbError::InvalidArgument(format!(
                "sample column {c} out of range for dimension {n}"
            )));
        }
        Ok(Self { n, columns })
    }

    /// `count` distinct columns drawn uniformly from a seeded permutation.
    /// Plans with the same seed are nested: a larger count extends a smaller one.
    pub fn random_columns(n: usize, count: usize, seed: u64) -> Result<Self> {
        if count == 0 || count > n {
            return Err(RbError::InvalidArgument(format!(
                "cannot sample {count} of {n} operator columns"
            )));
        }
        let mut all: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        all.truncate(count);
        Self::from_columns(n, all)
    }

    /// Default column count: enough rows for an overdetermined regression
    /// with `expected_skeletons` unknowns, at least 8 rows.
    pub fn default_column_count(n: usize, expected_skeletons: usize) -> usize {
        let rows = (4 * expected_skeletons).max(8);
        rows.div_ceil(n).clamp(1, n)
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of sampled entries `|O|`.
    pub fn len(&self) -> usize {
        self.columns.len() * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Column-major vec-indices of the sampled entries, in row order of the
    /// sample matrix.
    pub fn vec_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .flat_map(|&c| (0..self.n).map(move |r| c * self.n + r))
            .collect()
    }
}

/// Operator samples `L(O, :)` (or `B(O, :)`), one column per sample.
pub fn sample_operators(
    oracle: &dyn ProblemOracle,
    omega: &SampleSpace,
    plan: &OperatorSamplePlan,
) -> Result<Matrix> {
    if plan.dim() != oracle.fine_dim() {
        return Err(RbError::DimensionMismatch(format!(
            "sample plan built for n = {}, oracle has n = {}",
            plan.dim(),
            oracle.fine_dim()
        )));
    }
    let cols: Vec<Result<Vector>> = omega
        .samples()
        .par_iter()
        .map(|s| {
            let block = oracle
                .varying_columns(s, plan.columns())
                .map_err(RbError::at_sample(s.index))?;
            Ok(Vector::from_column_slice(block.as_slice()))
        })
        .collect();
    let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_columns(&cols))
}


#[cfg(test)]
mod tests {
    use super::toy::ToyOracle;
    use super::*;

    fn space(ws: &[f64]) -> SampleSpace {
        SampleSpace::new(ws.iter().map(|&w| vec![w]).collect()).unwrap()
    }

    #[test]
    fn sample_space_validation() {
        assert!(SampleSpace::new(vec![]).is_err());
        assert!(SampleSpace::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let s = space(&[0.1, 0.2]);
        assert_eq!(s.get(1).unwrap().index, 1);
    }

    #[test]
    fn coarse_sweep_single_and_duplicates() {
        let oracle = ToyOracle { n: 8 };
        let one = space(&[0.3]);
        let sc = coarse_sweep(&oracle, &one).unwrap();
        assert_eq!(sc.shape(), (4, 1));
        let direct = oracle.coarse_solve(one.get(0).unwrap()).unwrap();
        assert_eq!(sc.column(0), direct.column(0));

        let dup = space(&[0.7, 0.7, 0.1]);
        let sc = coarse_sweep(&oracle, &dup).unwrap();
        assert_eq!(sc.column(0), sc.column(1));
        assert_ne!(sc.column(0), sc.column(2));
    }

    #[test]
    fn sample_operators_all_entries_on_small_family() {
        let oracle = ToyOracle { n: 3 };
        let omega = space(&[0.0, 0.5, 1.0]);
        let plan = OperatorSamplePlan::from_columns(3, vec![0, 1, 2]).unwrap();
        let samples = sample_operators(&oracle, &omega, &plan).unwrap();
        assert_eq!(samples.shape(), (9, 3));
        for (i, s) in omega.iter().enumerate() {
            let full = oracle.assemble_varying(s).unwrap();
            assert_eq!(samples.column(i).as_slice(), full.as_slice());
        }
    }

    #[test]
    fn single_column_plan_has_n_rows() {
        let oracle = ToyOracle { n: 6 };
        let omega = space(&[0.2, 0.4]);
        let plan = OperatorSamplePlan::random_columns(6, 1, 7).unwrap();
        let samples = sample_operators(&oracle, &omega, &plan).unwrap();
        assert_eq!(samples.nrows(), 6);
    }

    #[test]
    fn samples_agree_with_apply_on_basis_vectors() {
        let n = 10;
        let oracle = ToyOracle { n };
        let omega = space(&[0.1, 0.3, 0.5, 0.9]);
        let plan = OperatorSamplePlan::random_columns(n, 3, 1).unwrap();
        let samples = sample_operators(&oracle, &omega, &plan).unwrap();
        let idx = plan.vec_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        for _ in 0..20 {
            let k = rng.gen_range(0..idx.len());
            let i = rng.gen_range(0..omega.len());
            let h = OperatorHandle::deferred(&oracle, omega.get(i).unwrap().clone());
            let (row, col) = (idx[k] % n, idx[k] / n);
            let mut e = Vector::zeros(n);
            e[col] = 1.0;
            let applied = h.apply(&e).unwrap()[row];
            assert!((samples[(k, i)] - applied).abs() <= 1e-12 * applied.abs().max(1.0));
            assert_eq!(h.entries(&[idx[k]]).unwrap()[0], samples[(k, i)]);
        }
    }

    #[test]
    fn fine_solve_residual() {
        let oracle = ToyOracle { n: 12 };
        let s = ParameterSample {
            index: 0,
            coefficients: vec![0.8],
        };
        let out = fine_solve(&oracle, &s, false).unwrap();
        let r = out.operator.apply(&out.solution).unwrap() - &out.source;
        assert!(r.norm() <= 1e-8 * out.source.norm());
        assert!(!out.operator.is_materialized());
    }

    #[test]
    fn default_column_count() {
        assert_eq!(OperatorSamplePlan::default_column_count(512, 10), 1);
        assert_eq!(OperatorSamplePlan::default_column_count(4, 10), 4);
        assert_eq!(OperatorSamplePlan::default_column_count(64, 40), 3);
    }

    #[test]
    fn random_plans_are_nested() {
        let a = OperatorSamplePlan::random_columns(50, 3, 9).unwrap();
        let b = OperatorSamplePlan::random_columns(50, 6, 9).unwrap();
        assert_eq!(a.columns(), &b.columns()[..3]);
        assert!(OperatorSamplePlan::random_columns(5, 6, 9).is_err());
    }

    #[test]
    fn offset_helpers() {
        let q = Matrix::identity(4, 2);
        let off = Offset::ScaledIdentity(0.5);
        assert_eq!(off.project(&q), Matrix::identity(2, 2) * 0.5);
        let mut m = Matrix::zeros(3, 3);
        off.add_to(&mut m);
        assert_eq!(m, Matrix::identity(3, 3) * 0.5);
    }
}
