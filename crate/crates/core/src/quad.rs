//! Quadrature rules for integrating over chart boxes.
//!
//! Bounded non-periodic axes use composite Gauss-Legendre panels; periodic
//! axes use the endpoint-free trapezoid rule, which is spectrally accurate
//! for smooth periodic integrands. All reductions go through [`pairwise_sum`]
//! so that results do not depend on thread scheduling.

use crate::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Nodes are the roots of the Legendre polynomial `P_n`, found by Newton
/// iteration from the Chebyshev-like initial guesses; weights are
/// `2 / ((1 - x^2) P_n'(x)^2)`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidInput("Gauss-Legendre rule needs n >= 1".into()));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// Composite Gauss-Legendre rule: `panels` equal panels of `points` nodes
/// each on `[a, b]`, returned as `(node, weight)` pairs.
pub fn gauss_legendre_composite(a: f64, b: f64, points: usize, panels: usize) -> Result<Vec<(f64, f64)>> {
    if panels == 0 {
        return Err(Error::InvalidInput("composite rule needs at least one panel".into()));
    }
    if !(b > a) {
        return Err(Error::InvalidInput(format!("empty integration interval [{a}, {b}]")));
    }
    let (nodes, weights) = gauss_legendre(points)?;
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(points * panels);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in nodes.iter().zip(&weights) {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    Ok(out)
}

/// Trapezoid rule for a periodic integrand on `[a, b)`: `n` equispaced nodes
/// starting at `a`, each with weight `(b - a) / n`.
pub fn trapezoid_periodic(a: f64, b: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::InvalidInput("trapezoid rule needs n >= 1".into()));
    }
    if !(b > a) {
        return Err(Error::InvalidInput(format!("empty integration interval [{a}, {b}]")));
    }
    let h = (b - a) / n as f64;
    Ok((0..n).map(|i| (a + i as f64 * h, h)).collect())
}

/// Sum with a fixed pairwise reduction tree.
///
/// The result depends only on the order of `xs`, never on chunking or thread
/// count, and the error grows like `O(log n)` rather than `O(n)` units of
/// roundoff.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n if n <= 16 => xs.iter().sum(),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Convenience: integrate `f` over `[a, b]` with a composite Gauss-Legendre
/// rule (`panels` panels of `points` nodes).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize, panels: usize) -> Result<f64> {
    let rule = gauss_legendre_composite(a, b, points, panels)?;
    let vals: Vec<f64> = rule.iter().map(|&(x, w)| w * f(x)).collect();
    Ok(pairwise_sum(&vals))
}

/// Convenience: integrate a smooth `(b - a)`-periodic `f` with the `n`-node
/// endpoint-free trapezoid rule.
pub fn integrate_periodic<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Result<f64> {
    let rule = trapezoid_periodic(a, b, n)?;
    let vals: Vec<f64> = rule.iter().map(|&(x, w)| w * f(x)).collect();
    Ok(pairwise_sum(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_legendre_is_exact_for_low_degree_polynomials() {
        // An n-point rule integrates monomials up to degree 2n-1 exactly.
        let (nodes, weights) = gauss_legendre(5).unwrap();
        for k in 0..=9usize {
            let approx: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert_abs_diff_eq!(approx, exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn gauss_legendre_weights_sum_to_interval_length() {
        for n in [1, 2, 3, 7, 16, 33, 64] {
            let (_, weights) = gauss_legendre(n).unwrap();
            assert_abs_diff_eq!(weights.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn composite_rule_integrates_exponential() {
        let v = integrate(|x| x.exp(), 0.0, 1.0, 8, 4).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-13);
    }

    #[test]
    fn trapezoid_is_spectrally_accurate_on_periodic_integrands() {
        // ∫_0^{2π} exp(cos t) dt = 2π I_0(1).
        let reference = 7.954926521012845;
        for n in [16, 32] {
            let rule = trapezoid_periodic(0.0, 2.0 * std::f64::consts::PI, n).unwrap();
            let vals: Vec<f64> = rule.iter().map(|&(t, w)| w * t.cos().exp()).collect();
            assert_abs_diff_eq!(pairwise_sum(&vals), reference, epsilon = 1e-13);
        }
    }

    #[test]
    fn trapezoid_weights_cover_the_period() {
        let rule = trapezoid_periodic(0.0, std::f64::consts::PI, 37).unwrap();
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert_abs_diff_eq!(total, std::f64::consts::PI, epsilon = 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_sequential_sum_on_exact_data() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[3.5]), 3.5);
    }

    #[test]
    fn zero_size_rules_are_rejected() {
        assert!(gauss_legendre(0).is_err());
        assert!(trapezoid_periodic(0.0, 1.0, 0).is_err());
        assert!(gauss_legendre_composite(0.0, 1.0, 4, 0).is_err());
        assert!(gauss_legendre_composite(1.0, 1.0, 4, 1).is_err());
    }
}
