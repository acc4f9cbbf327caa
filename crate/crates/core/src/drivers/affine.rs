//! Synthetic affine operator family `L(w) = A + sum_j T_j(2w - 1) B_j`.
//!
//! The varying part lies exactly in the span of the `B_j`, so operator
//! interpolation from `r` independent skeletons is exact. The coarse proxy
//! uses the leading `n/2 x n/2` principal blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{RbError, Result};
use crate::numerics::{dense_solve, singular_values, Matrix, Vector};
use crate::oracle::{Offset, ParameterSample, ProblemOracle, SampleSpace};

pub const PROBLEM_NAME: &str = "synthetic_affine";

const MAX_CONDITION: f64 = 1e6;
const MAX_TRIES: usize = 100;
const OFFSET_SCALE: f64 = 0.2;
const TERM_SCALE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct AffineConfig {
    pub n: usize,
    pub rank: usize,
    pub samples: usize,
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            n: 64,
            rank: 3,
            samples: 200,
        }
    }
}

impl AffineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(RbError::Config(format!("n must be at least 4, got {}", self.n)));
        }
        if self.rank < 1 || self.rank > self.n {
            return Err(RbError::Config(format!("rank must lie in 1..={}, got {}", self.n, self.rank)));
        }
        if self.samples < 1 {
            return Err(RbError::Config("samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AffineFamily {
    n: usize,
    offset: Offset,
    terms: Vec<Matrix>,
    source: Vector,
}

/// Chebyshev polynomial `T_k(x)`.
pub fn chebyshev(k: usize, x: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, x);
    match k {
        0 => 1.0,
        _ => {
            for _ in 1..k {
                let t2 = 2.0 * x * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            t1
        }
    }
}

fn gaussian_matrix(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn condition_number(m: &Matrix) -> f64 {
    match singular_values(m) {
        Ok(sv) if sv.last().is_some_and(|&s| s > 0.0) => sv[0] / sv[sv.len() - 1],
        _ => f64::INFINITY,
    }
}

/// Builds a reproducible family of dimension `n` with `r` affine terms.
pub fn make_affine_family(n: usize, r: usize, seed: u64) -> Result<AffineFamily> {
    if n < 4 {
        return Err(RbError::InvalidArgument(format!("affine family needs n >= 4, got {n}")));
    }
    if r < 1 || r > n {
        return Err(RbError::InvalidArgument(format!("affine rank must lie in 1..={n}, got {r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / (n as f64).sqrt();
    for _ in 0..MAX_TRIES {
        let a = Matrix::identity(n, n) + gaussian_matrix(n, OFFSET_SCALE * s, &mut rng);
        let terms: Vec<Matrix> = (0..r).map(|_| gaussian_matrix(n, TERM_SCALE * s, &mut rng)).collect();
        let source = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let family = AffineFamily {
            n,
            offset: Offset::Dense(a),
            terms,
            source,
        };
        let well_posed = (0..=20).all(|k| {
            let w = k as f64 / 20.0;
            let l = family.full_operator(w);
            let h = n / 2;
            condition_number(&l) < MAX_CONDITION
                && condition_number(&l.view((0, 0), (h, h)).into_owned()) < MAX_CONDITION
        });
        if well_posed {
            return Ok(family);
        }
    }
    Err(RbError::Singular(format!(
        "no well-conditioned affine family found in {MAX_TRIES} draws"
    )))
}

/// `p` parameters drawn uniformly from `[0, 1]`.
pub fn affine_samples(p: usize, seed: u64) -> Result<SampleSpace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_affe);
    SampleSpace::new((0..p).map(|_| vec![rng.gen_range(0.0..=1.0)]).collect())
}

impl AffineFamily {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Matrix] {
        &self.terms
    }

    /// Coefficients `c_j(w) = T_j(2w - 1)`, `j = 1..=r`.
    pub fn coefficients(&self, w: f64) -> Vec<f64> {
        (1..=self.rank()).map(|j| chebyshev(j, 2.0 * w - 1.0)).collect()
    }

    fn varying(&self, w: f64) -> Matrix {
        let mut b = Matrix::zeros(self.n, self.n);
        for (c, t) in self.coefficients(w).iter().zip(&self.terms) {
            b += t * *c;
        }
        b
    }

    /// `A + B(w)` as a dense matrix.
    pub fn full_operator(&self, w: f64) -> Matrix {
        let mut l = self.varying(w);
        self.offset.add_to(&mut l);
        l
    }

    fn rhs(&self, w: f64) -> Vector {
        &self.source * (1.0 + w)
    }

    fn param(sample: &ParameterSample) -> Result<f64> {
        sample
            .coefficients
            .first()
            .copied()
            .ok_or_else(|| RbError::InvalidArgument("affine sample needs one coefficient".into()))
    }
}

impl ProblemOracle for AffineFamily {
    fn problem_name(&self) -> &'static str {
        PROBLEM_NAME
    }

    fn fine_dim(&self) -> usize {
        self.n
    }

    fn coarse_dim(&self) -> usize {
        self.n / 2
    }

    fn coarse_solve(&self, sample: &ParameterSample) -> Result<Vector> {
        let w = Self::param(sample)?;
        let h = self.n / 2;
        let l = self.full_operator(w).view((0, 0), (h, h)).into_owned();
        let f = self.rhs(w).rows(0, h).into_owned();
        dense_solve(&l, &f)
    }

    fn assemble_varying(&self, sample: &ParameterSample) -> Result<Matrix> {
        Ok(self.varying(Self::param(sample)?))
    }

    fn varying_columns(&self, sample: &ParameterSample, cols: &[usize]) -> Result<Matrix> {
        let c = self.coefficients(Self::param(sample)?);
        let mut out = Matrix::zeros(self.n, cols.len());
        for (k, &col) in cols.iter().enumerate() {
            for (cj, t) in c.iter().zip(&self.terms) {
                out.column_mut(k).axpy(*cj, &t.column(col), 1.0);
            }
        }
        Ok(out)
    }

    fn offset(&self) -> Option<&Offset> {
        Some(&self.offset)
    }

    fn source(&self, sample: &ParameterSample, _varying: &Matrix) -> Result<Vector> {
        Ok(self.rhs(Self::param(sample)?))
    }

    fn reduced_rhs(&self, q: &Matrix, sample: &ParameterSample) -> Result<Vector> {
        Ok(q.transpose() * self.rhs(Self::param(sample)?))
    }
}
