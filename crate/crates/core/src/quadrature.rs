//! Gauss-Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|t| 0.5 * t).collect(),
    )
}

/// Barycentric weights for Lagrange interpolation through `nodes`.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            let prod: f64 = (0..nodes.len())
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product();
            1.0 / prod
        })
        .collect()
}

/// Values at `t` of the Lagrange basis polynomials through `nodes`.
pub fn lagrange_basis(nodes: &[f64], bary: &[f64], t: f64) -> Vec<f64> {
    if let Some(k) = nodes.iter().position(|&x| x == t) {
        let mut out = vec![0.0; nodes.len()];
        out[k] = 1.0;
        return out;
    }
    let terms: Vec<f64> = nodes.iter().zip(bary).map(|(x, b)| b / (t - x)).collect();
    let sum: f64 = terms.iter().sum();
    terms.iter().map(|v| v / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in 1..=20 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn unit_rule_sums_to_one() {
        let (x, w) = gauss_legendre_unit(32);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        assert!(x[0] > 0.0 && x[31] < 1.0);
    }

    #[test]
    fn lagrange_reproduces_polynomials() {
        let (x, _) = gauss_legendre_unit(6);
        let b = barycentric_weights(&x);
        let f = |t: f64| 3.0 * t.powi(5) - t * t + 0.5;
        for &t in &[0.0, 0.13, 0.5, 0.99] {
            let l = lagrange_basis(&x, &b, t);
            let v: f64 = l.iter().zip(&x).map(|(l, x)| l * f(*x)).sum();
            assert!((v - f(t)).abs() < 1e-12);
        }
    }
}
