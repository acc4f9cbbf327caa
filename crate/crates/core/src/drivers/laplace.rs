//! Interior Dirichlet Laplace problem on random star-shaped domains, solved
//! through the double-layer boundary integral equation `(1/2 I - G) u = f`.
//!
//! The boundary is `gamma(t) = r(t) (cos t, sin t)` where `r` is the
//! trigonometric interpolant of `N` random radii. The double-layer operator
//! is discretized by the Nystrom method with the periodic trapezoid rule.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{RbError, Result};
use crate::numerics::{dense_solve, Matrix, Vector};
use crate::oracle::{Offset, ParameterSample, ProblemOracle, SampleSpace};

pub const PROBLEM_NAME: &str = "laplace_bie";

const POSITIVITY_GRID: usize = 2048;
const MIN_SOURCE_DISTANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct BieConfig {
    pub kappa: f64,
    pub x0: [f64; 2],
    pub radial_nodes: usize,
    pub n_fine: usize,
    pub n_coarse: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for BieConfig {
    fn default() -> Self {
        Self {
            kappa: 0.4,
            x0: [0.6, 0.0],
            radial_nodes: 8,
            n_fine: 512,
            n_coarse: 64,
            samples: 1024,
            seed: 0,
        }
    }
}

impl BieConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa < 1.0) {
            return Err(RbError::Config(format!("kappa must lie in [0, 1), got {}", self.kappa)));
        }
        if self.radial_nodes < 1 {
            return Err(RbError::Config("radial_nodes must be at least 1".into()));
        }
        if self.n_coarse < 16 {
            return Err(RbError::Config(format!("n_coarse must be at least 16, got {}", self.n_coarse)));
        }
        if self.n_coarse >= self.n_fine {
            return Err(RbError::Config(format!(
                "n_coarse ({}) must be smaller than n_fine ({})",
                self.n_coarse, self.n_fine
            )));
        }
        if self.samples < 1 {
            return Err(RbError::Config("samples must be at least 1".into()));
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(RbError::Config("x0 must be finite".into()));
        }
        Ok(())
    }
}

/// Trigonometric interpolant through equispaced samples on `[0, 2pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigInterpolant {
    mean: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// Coefficient of `cos(N t / 2)` for even `N`.
    nyquist: f64,
}

impl TrigInterpolant {
    pub fn new(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(RbError::InvalidArgument("trigonometric interpolant needs samples".into()));
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let half = (n - 1) / 2;
        let mut cos = Vec::with_capacity(half);
        let mut sin = Vec::with_capacity(half);
        for m in 1..=half {
            let (mut a, mut b) = (0.0, 0.0);
            for (k, v) in values.iter().enumerate() {
                let t = 2.0 * PI * (m * k) as f64 / nf;
                a += v * t.cos();
                b += v * t.sin();
            }
            cos.push(2.0 * a / nf);
            sin.push(2.0 * b / nf);
        }
        let nyquist = if n.is_multiple_of(2) {
            values
                .iter()
                .enumerate()
                .map(|(k, v)| if k % 2 == 0 { *v } else { -*v })
                .sum::<f64>()
                / nf
        } else {
            0.0
        };
        Ok(Self {
            mean,
            cos,
            sin,
            nyquist,
        })
    }

    /// Value and first two derivatives at `t`.
    pub fn eval_with_derivatives(&self, t: f64) -> (f64, f64, f64) {
        let (mut v, mut d1, mut d2) = (self.mean, 0.0, 0.0);
        for (m, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let k = (m + 1) as f64;
            let (s, c) = (k * t).sin_cos();
            v += a * c + b * s;
            d1 += k * (-a * s + b * c);
            d2 -= k * k * (a * c + b * s);
        }
        if self.nyquist != 0.0 {
            let k = (self.cos.len() + 1) as f64;
            let (s, c) = (k * t).sin_cos();
            v += self.nyquist * c;
            d1 -= self.nyquist * k * s;
            d2 -= self.nyquist * k * k * c;
        }
        (v, d1, d2)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivatives(t).0
    }
}

/// Star-shaped domain with radius `r(t)` interpolating the radial nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarDomain {
    radial_nodes: Vec<f64>,
    radius: TrigInterpolant,
}

impl PolarDomain {
    pub fn new(radial_nodes: Vec<f64>) -> Result<Self> {
        if radial_nodes.iter().any(|b| !b.is_finite() || *b <= 0.0) {
            return Err(RbError::DegenerateDomain("radial nodes must be positive".into()));
        }
        let radius = TrigInterpolant::new(&radial_nodes)?;
        let positive = (0..POSITIVITY_GRID)
            .all(|k| radius.eval(2.0 * PI * k as f64 / POSITIVITY_GRID as f64) > 0.0);
        if !positive {
            return Err(RbError::DegenerateDomain("interpolated radius is not positive".into()));
        }
        Ok(Self {
            radial_nodes,
            radius,
        })
    }

    pub fn circle(radius: f64) -> Result<Self> {
        Self::new(vec![radius])
    }

    pub fn radial_nodes(&self) -> &[f64] {
        &self.radial_nodes
    }

    pub fn radius(&self) -> &TrigInterpolant {
        &self.radius
    }
}

/// Radius of the domain boundary at angle `theta`.
pub fn radial_interp(domain: &PolarDomain, theta: f64) -> f64 {
    domain.radius.eval(theta)
}

/// Boundary nodes `gamma(2 pi i / n)` with the geometry the Nystrom rule needs.
#[derive(Clone, Debug)]
pub struct BoundaryDiscretization {
    pub points: Vec<[f64; 2]>,
    /// Outward unit normals.
    pub normals: Vec<[f64; 2]>,
    /// `|gamma'(t_i)|`.
    pub speeds: Vec<f64>,
    /// Signed curvature, positive on convex parts.
    pub curvatures: Vec<f64>,
    /// Trapezoid weights `(2 pi / n) |gamma'(t_i)|`.
    pub weights: Vec<f64>,
}

impl BoundaryDiscretization {
    pub fn new(domain: &PolarDomain, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(RbError::InvalidArgument(format!("need at least 3 boundary nodes, got {n}")));
        }
        let h = 2.0 * PI / n as f64;
        let mut disc = Self {
            points: Vec::with_capacity(n),
            normals: Vec::with_capacity(n),
            speeds: Vec::with_capacity(n),
            curvatures: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
        };
        for i in 0..n {
            let t = h * i as f64;
            let (r, r1, r2) = domain.radius.eval_with_derivatives(t);
            let (s, c) = t.sin_cos();
            let p = [r * c, r * s];
            let d1 = [r1 * c - r * s, r1 * s + r * c];
            let d2 = [r2 * c - 2.0 * r1 * s - r * c, r2 * s + 2.0 * r1 * c - r * s];
            let speed = d1[0].hypot(d1[1]);
            if !(speed > 0.0) {
                return Err(RbError::DegenerateDomain(format!("zero boundary speed at node {i}")));
            }
            disc.points.push(p);
            disc.normals.push([d1[1] / speed, -d1[0] / speed]);
            disc.speeds.push(speed);
            disc.curvatures.push((d1[0] * d2[1] - d1[1] * d2[0]) / speed.powi(3));
            disc.weights.push(h * speed);
        }
        Ok(disc)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Entry `G_ij` of the discretized double-layer operator.
    pub fn double_layer_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return -self.curvatures[j] / (4.0 * PI) * self.weights[j];
        }
        let (x, y, ny) = (self.points[i], self.points[j], self.normals[j]);
        let d = [x[0] - y[0], x[1] - y[1]];
        let k = (d[0] * ny[0] + d[1] * ny[1]) / (2.0 * PI * (d[0] * d[0] + d[1] * d[1]));
        k * self.weights[j]
    }

    /// Columns `cols` of the double-layer matrix `G`.
    pub fn double_layer_columns(&self, cols: &[usize]) -> Matrix {
        let n = self.len();
        let mut g = Matrix::zeros(n, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            for i in 0..n {
                g[(i, k)] = self.double_layer_entry(i, j);
            }
        }
        g
    }

    pub fn double_layer(&self) -> Matrix {
        let n = self.len();
        Matrix::from_fn(n, n, |i, j| self.double_layer_entry(i, j))
    }
}

/// `p` domains with i.i.d. radii uniform on `[1 - kappa, 1 + kappa]`.
pub fn sample_parameters(config: &BieConfig, seed: u64) -> Result<SampleSpace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1.0 - config.kappa, 1.0 + config.kappa);
    let coeffs = (0..config.samples)
        .map(|_| {
            (0..config.radial_nodes)
                .map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo })
                .collect()
        })
        .collect();
    SampleSpace::new(coeffs)
}

/// The full operator `1/2 I - G` at `n` nodes.
pub fn assemble_bie_operator(domain: &PolarDomain, n: usize) -> Result<Matrix> {
    let disc = BoundaryDiscretization::new(domain, n)?;
    let mut l = -disc.double_layer();
    for i in 0..n {
        l[(i, i)] += 0.5;
    }
    Ok(l)
}

/// `f(x) = 1 / |x - x0|` at the boundary nodes.
pub fn bie_source(disc: &BoundaryDiscretization, x0: [f64; 2]) -> Result<Vector> {
    let mut f = Vector::zeros(disc.len());
    for (i, p) in disc.points.iter().enumerate() {
        let d = (p[0] - x0[0]).hypot(p[1] - x0[1]);
        if d <= MIN_SOURCE_DISTANCE {
            return Err(RbError::InvalidArgument(format!(
                "boundary node {i} coincides with the source point"
            )));
        }
        f[i] = 1.0 / d;
    }
    Ok(f)
}

/// Trigonometric interpolation of nodal values onto `m` equispaced nodes.
pub fn trig_resample(values: &Vector, m: usize) -> Result<Vector> {
    let interp = TrigInterpolant::new(values.as_slice())?;
    Ok(Vector::from_fn(m, |i, _| interp.eval(2.0 * PI * i as f64 / m as f64)))
}

/// The boundary integral problem as a [`ProblemOracle`] in offset form
/// `L = 1/2 I + B` with `B = -G`.
#[derive(Clone, Debug)]
pub struct LaplaceBie {
    config: BieConfig,
    offset: Offset,
}

impl LaplaceBie {
    pub fn new(config: BieConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            offset: Offset::ScaledIdentity(0.5),
        })
    }

    pub fn config(&self) -> &BieConfig {
        &self.config
    }

    pub fn sample_space(&self) -> Result<SampleSpace> {
        sample_parameters(&self.config, self.config.seed)
    }

    fn discretize(&self, sample: &ParameterSample, n: usize) -> Result<BoundaryDiscretization> {
        if sample.coefficients.len() != self.config.radial_nodes {
            return Err(RbError::DimensionMismatch(format!(
                "sample has {} radii, expected {}",
                sample.coefficients.len(),
                self.config.radial_nodes
            )));
        }
        let domain = PolarDomain::new(sample.coefficients.clone())?;
        BoundaryDiscretization::new(&domain, n)
    }
}

impl ProblemOracle for LaplaceBie {
    fn problem_name(&self) -> &'static str {
        PROBLEM_NAME
    }

    fn fine_dim(&self) -> usize {
        self.config.n_fine
    }

    fn coarse_dim(&self) -> usize {
        self.config.n_coarse
    }

    fn coarse_solve(&self, sample: &ParameterSample) -> Result<Vector> {
        let disc = self.discretize(sample, self.config.n_coarse)?;
        let mut l = -disc.double_layer();
        self.offset.add_to(&mut l);
        dense_solve(&l, &bie_source(&disc, self.config.x0)?)
    }

    fn assemble_varying(&self, sample: &ParameterSample) -> Result<Matrix> {
        Ok(-self.discretize(sample, self.config.n_fine)?.double_layer())
    }

    fn varying_columns(&self, sample: &ParameterSample, cols: &[usize]) -> Result<Matrix> {
        Ok(-self.discretize(sample, self.config.n_fine)?.double_layer_columns(cols))
    }

    fn offset(&self) -> Option<&Offset> {
        Some(&self.offset)
    }

    fn source(&self, sample: &ParameterSample, _varying: &Matrix) -> Result<Vector> {
        bie_source(&self.discretize(sample, self.config.n_fine)?, self.config.x0)
    }

    fn reduced_rhs(&self, q: &Matrix, sample: &ParameterSample) -> Result<Vector> {
        let f = bie_source(&self.discretize(sample, self.config.n_fine)?, self.config.x0)?;
        Ok(q.transpose() * f)
    }
}
