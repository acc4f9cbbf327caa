//! Isotropic radiative transport in the unit square, reduced to a
//! second-kind integral equation for the scattered density.
//!
//! The operator is `L(w) = I + B(w)` with `B` the collocation discretization
//! of `-mu_s K`, where `K` is the attenuation kernel
//! `K(x, y) = exp(-|x - y| int_0^1 mu_t(x - t (x - y)) dt) / (2 pi |x - y|)`.
//! Collocation points and weights are a tensor Gauss-Legendre rule; the
//! singular self-cell is integrated in closed form. The right-hand side is
//! `f = -B g` for a fixed Gaussian source `g`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{RbError, Result};
use crate::numerics::{dense_solve, Matrix, Vector};
use crate::oracle::{Offset, ParameterSample, ProblemOracle, RhsMode, SampleSpace};
use crate::quadrature::gauss_legendre_unit;

pub use crate::online::reduced_rhs_interpolated;

pub const PROBLEM_NAME: &str = "rte";

/// Sign between the two squared offsets in the Gaussian bump exponent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GaussianSign {
    /// Isotropic bump `exp(-(dx^2 + dy^2) / theta^2)`.
    #[default]
    Plus,
    /// `exp(-(dx^2 - dy^2) / theta^2)`.
    Minus,
}

impl GaussianSign {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "plus" => Ok(Self::Plus),
            "-" | "minus" => Ok(Self::Minus),
            other => Err(RbError::Config(format!(
                "gaussian_sign must be \"+\" or \"-\", got \"{other}\""
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Plus => "+",
            Self::Minus => "-",
        }
    }
}

/// Attenuation / scattering coefficient field on the unit square.
#[derive(Clone, Debug, PartialEq)]
pub enum RteMedium {
    /// `1 + A exp(-((x1 - c1)^2 +/- (x2 - c2)^2) / theta^2)`.
    Gaussian {
        amplitude: f64,
        center: [f64; 2],
        width: f64,
        sign: GaussianSign,
    },
    Constant(f64),
}

impl RteMedium {
    pub fn gaussian(amplitude: f64, center: [f64; 2], width: f64, sign: GaussianSign) -> Result<Self> {
        if !(width > 0.0) || !(amplitude >= 0.0) {
            return Err(RbError::InvalidArgument(format!(
                "medium needs width > 0 and amplitude >= 0, got width {width}, amplitude {amplitude}"
            )));
        }
        Ok(Self::Gaussian {
            amplitude,
            center,
            width,
            sign,
        })
    }

    /// Medium for a parameter vector `[A, c1, c2, theta]`.
    pub fn from_coefficients(c: &[f64], sign: GaussianSign) -> Result<Self> {
        match c {
            [a, c1, c2, th] => Self::gaussian(*a, [*c1, *c2], *th, sign),
            _ => Err(RbError::DimensionMismatch(format!(
                "medium needs 4 coefficients, got {}",
                c.len()
            ))),
        }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match *self {
            Self::Gaussian {
                amplitude,
                center,
                width,
                sign,
            } => {
                let dx = (p[0] - center[0]).powi(2);
                let dy = (p[1] - center[1]).powi(2);
                let q = match sign {
                    GaussianSign::Plus => dx + dy,
                    GaussianSign::Minus => dx - dy,
                };
                1.0 + amplitude * (-q / (width * width)).exp()
            }
            Self::Constant(c) => c,
        }
    }
}

/// Gauss-Legendre rule on `[0, 1]` for the attenuation line integral.
#[derive(Clone, Debug, PartialEq)]
pub struct LineRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LineRule {
    pub fn new(order: usize) -> Result<Self> {
        if order < 1 {
            return Err(RbError::InvalidArgument("line rule needs at least one node".into()));
        }
        let (nodes, weights) = gauss_legendre_unit(order);
        Ok(Self { nodes, weights })
    }

    fn kernel(&self, x: [f64; 2], y: [f64; 2], mu_t: &RteMedium) -> f64 {
        let d = [x[0] - y[0], x[1] - y[1]];
        let dist = d[0].hypot(d[1]);
        let optical: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * mu_t.eval([x[0] - t * d[0], x[1] - t * d[1]]))
            .sum();
        (-dist * optical).exp() / (2.0 * PI * dist)
    }
}

/// `K(x, y)` with the line integral of `mu_t` by `q`-point Gauss-Legendre.
pub fn attenuation_kernel(x: [f64; 2], y: [f64; 2], medium: &RteMedium, q: usize) -> Result<f64> {
    if x == y {
        return Err(RbError::InvalidArgument(
            "attenuation kernel is singular at x = y".into(),
        ));
    }
    Ok(LineRule::new(q)?.kernel(x, y, medium))
}

/// `int_cell 1 / |x - y| dy` over a rectangle with half-widths `a`, `b`
/// centred at `x`.
pub fn self_cell_integral(a: f64, b: f64) -> f64 {
    let d = a.hypot(b);
    4.0 * (a * ((b + d) / a).ln() + b * ((a + d) / b).ln())
}

/// Tensor Gauss-Legendre collocation grid on `[0, 1]^2`.
///
/// Point `ix + side * iy` sits at `(t[ix], t[iy])`.
#[derive(Clone, Debug)]
pub struct RteDiscretization {
    side: usize,
    pub nodes_1d: Vec<f64>,
    pub weights_1d: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// `g` at the collocation points.
    pub source: Vector,
}

/// The source `g(x) = exp(-256 |x - (0.5, 0.5)|^2)`.
pub fn source_term(p: [f64; 2]) -> f64 {
    (-256.0 * ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2))).exp()
}

impl RteDiscretization {
    pub fn new(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(RbError::InvalidArgument(format!("grid side must be at least 2, got {side}")));
        }
        let (t, w) = gauss_legendre_unit(side);
        let mut points = Vec::with_capacity(side * side);
        let mut weights = Vec::with_capacity(side * side);
        for iy in 0..side {
            for ix in 0..side {
                points.push([t[ix], t[iy]]);
                weights.push(w[ix] * w[iy]);
            }
        }
        let source = Vector::from_iterator(points.len(), points.iter().map(|p| source_term(*p)));
        Ok(Self {
            side,
            nodes_1d: t,
            weights_1d: w,
            points,
            weights,
            source,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn self_cell(&self, i: usize) -> f64 {
        let (ix, iy) = (i % self.side, i / self.side);
        self_cell_integral(0.5 * self.weights_1d[ix], 0.5 * self.weights_1d[iy]) / (2.0 * PI)
    }

    /// Columns `cols` of `B = -mu_s K W`.
    pub fn scattering_columns(&self, mu_t: &RteMedium, mu_s: &RteMedium, rule: &LineRule, cols: &[usize]) -> Matrix {
        let n = self.len();
        let ms: Vec<f64> = self.points.iter().map(|p| mu_s.eval(*p)).collect();
        let mut b = Matrix::zeros(n, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            let mut col = b.column_mut(k);
            for i in 0..n {
                let kij = if i == j {
                    self.self_cell(j)
                } else {
                    rule.kernel(self.points[i], self.points[j], mu_t) * self.weights[j]
                };
                col[i] = -ms[i] * kij;
            }
        }
        b
    }

    /// The dense varying operator `B = -mu_s K W`.
    pub fn scattering_operator(&self, mu_t: &RteMedium, mu_s: &RteMedium, rule: &LineRule) -> Matrix {
        let n = self.len();
        // Upper triangle of the symmetric kernel, one row per task.
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| rule.kernel(self.points[i], self.points[j], mu_t))
                    .collect()
            })
            .collect();
        let ms: Vec<f64> = self.points.iter().map(|p| mu_s.eval(*p)).collect();
        let mut b = Matrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            b[(i, i)] = -ms[i] * self.self_cell(i);
            for (off, k) in row.iter().enumerate() {
                let j = i + 1 + off;
                b[(i, j)] = -ms[i] * k * self.weights[j];
                b[(j, i)] = -ms[j] * k * self.weights[i];
            }
        }
        b
    }
}

/// `f = -B g`.
pub fn rte_rhs(varying: &Matrix, disc: &RteDiscretization) -> Vector {
    -(varying * &disc.source)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RteConfig {
    pub n_fine: usize,
    pub n_coarse: usize,
    pub quadrature_order: usize,
    pub amplitudes: Vec<f64>,
    pub widths: Vec<f64>,
    pub grid_n: usize,
    pub gaussian_sign: GaussianSign,
}

impl Default for RteConfig {
    fn default() -> Self {
        Self {
            n_fine: 32,
            n_coarse: 16,
            quadrature_order: 16,
            amplitudes: vec![2.0, 6.0, 10.0],
            widths: vec![0.2, 0.4, 0.6],
            grid_n: 6,
            gaussian_sign: GaussianSign::Plus,
        }
    }
}

impl RteConfig {
    /// Full-scale grid: 5 amplitudes, 5 widths, 21 x 21 centres.
    pub fn full_scale() -> Self {
        Self {
            n_fine: 128,
            n_coarse: 32,
            amplitudes: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            widths: vec![0.2, 0.3, 0.4, 0.5, 0.6],
            grid_n: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_coarse < 2 || self.n_coarse >= self.n_fine {
            return Err(RbError::Config(format!(
                "need 2 <= n_coarse < n_fine, got n_coarse = {}, n_fine = {}",
                self.n_coarse, self.n_fine
            )));
        }
        if self.quadrature_order < 4 {
            return Err(RbError::Config(format!(
                "quadrature_order must be at least 4, got {}",
                self.quadrature_order
            )));
        }
        if self.amplitudes.is_empty() || self.amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(RbError::Config("amplitudes must be a non-empty list of values >= 0".into()));
        }
        if self.widths.is_empty() || self.widths.iter().any(|w| !(*w > 0.0)) {
            return Err(RbError::Config("widths must be a non-empty list of values > 0".into()));
        }
        if self.grid_n < 1 {
            return Err(RbError::Config("grid_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// All `[A, i/N, j/N, theta]`, ordered by amplitude, width, `i`, `j`.
pub fn build_parameter_grid(config: &RteConfig) -> Result<SampleSpace> {
    let n = config.grid_n;
    let mut out = Vec::with_capacity(config.amplitudes.len() * config.widths.len() * (n + 1) * (n + 1));
    for &a in &config.amplitudes {
        for &th in &config.widths {
            for i in 0..=n {
                for j in 0..=n {
                    out.push(vec![a, i as f64 / n as f64, j as f64 / n as f64, th]);
                }
            }
        }
    }
    SampleSpace::new(out)
}

/// The transport problem as a [`ProblemOracle`] with identity offset.
#[derive(Clone, Debug)]
pub struct Rte {
    config: RteConfig,
    fine: RteDiscretization,
    coarse: RteDiscretization,
    rule: LineRule,
    offset: Offset,
}

impl Rte {
    pub fn new(config: RteConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            fine: RteDiscretization::new(config.n_fine)?,
            coarse: RteDiscretization::new(config.n_coarse)?,
            rule: LineRule::new(config.quadrature_order)?,
            offset: Offset::ScaledIdentity(1.0),
            config,
        })
    }

    pub fn config(&self) -> &RteConfig {
        &self.config
    }

    pub fn fine_grid(&self) -> &RteDiscretization {
        &self.fine
    }

    pub fn sample_space(&self) -> Result<SampleSpace> {
        build_parameter_grid(&self.config)
    }

    fn medium(&self, sample: &ParameterSample) -> Result<RteMedium> {
        RteMedium::from_coefficients(&sample.coefficients, self.config.gaussian_sign)
    }
}

impl ProblemOracle for Rte {
    fn problem_name(&self) -> &'static str {
        PROBLEM_NAME
    }

    fn fine_dim(&self) -> usize {
        self.fine.len()
    }

    fn coarse_dim(&self) -> usize {
        self.coarse.len()
    }

    fn coarse_solve(&self, sample: &ParameterSample) -> Result<Vector> {
        let mu = self.medium(sample)?;
        let b = self.coarse.scattering_operator(&mu, &mu, &self.rule);
        let f = rte_rhs(&b, &self.coarse);
        let mut l = b;
        self.offset.add_to(&mut l);
        dense_solve(&l, &f)
    }

    fn assemble_varying(&self, sample: &ParameterSample) -> Result<Matrix> {
        let mu = self.medium(sample)?;
        Ok(self.fine.scattering_operator(&mu, &mu, &self.rule))
    }

    fn varying_columns(&self, sample: &ParameterSample, cols: &[usize]) -> Result<Matrix> {
        let mu = self.medium(sample)?;
        Ok(self.fine.scattering_columns(&mu, &mu, &self.rule, cols))
    }

    fn offset(&self) -> Option<&Offset> {
        Some(&self.offset)
    }

    fn source(&self, _sample: &ParameterSample, varying: &Matrix) -> Result<Vector> {
        Ok(rte_rhs(varying, &self.fine))
    }

    fn rhs_mode(&self) -> RhsMode {
        RhsMode::Interpolated
    }
}
