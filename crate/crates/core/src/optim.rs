//! Derivative-free local maximization by the Nelder-Mead simplex method.
//!
//! The critical-threshold objective contains a `max{., 0}` kink and the
//! Monte Carlo path refines grid maximizers of non-polynomial fields, so a
//! gradient-free method is used throughout. Callers express constraints by
//! returning `-inf` from the objective outside the feasible region.

/// Stopping controls for [`nelder_mead_max`].
#[derive(Clone, Debug)]
pub struct SimplexOptions {
    /// Hard cap on iterations (one reflect/expand/contract/shrink step each).
    pub max_iter: usize,
    /// Stop when the best-to-worst objective spread falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_iter: 400, f_tol: 1e-13, x_tol: 1e-11 }
    }
}

/// Maximize `f` starting from `x0`, with initial per-coordinate simplex
/// steps `step`. Returns the best point seen and its value.
///
/// `f` may return `-inf` (or NaN, treated the same) to veto a point; the
/// simplex then contracts back into the feasible region. The initial point
/// itself should be feasible.
pub fn nelder_mead_max<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: &[f64],
    opts: &SimplexOptions,
) -> (Vec<f64>, f64) {
    assert_eq!(x0.len(), step.len(), "x0 and step must have equal lengths");
    let dim = x0.len();
    let score = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };

    // Simplex of dim+1 vertices: x0 and x0 offset along each coordinate.
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    verts.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 1e-4 };
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| score(f(v))).collect();

    let order = |verts: &mut Vec<Vec<f64>>, vals: &mut Vec<f64>| {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal));
        *verts = idx.iter().map(|&i| verts[i].clone()).collect();
        *vals = idx.iter().map(|&i| vals[i]).collect();
    };
    order(&mut verts, &mut vals);

    for _ in 0..opts.max_iter {
        // Convergence: objective spread and simplex size.
        let spread = vals[0] - vals[dim];
        let diam = verts[1..]
            .iter()
            .map(|v| {
                v.iter().zip(&verts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        // Both must be small: near a kink, vertices on opposite sides can
        // have equal values while the simplex is still wide.
        if spread.is_finite() && spread < opts.f_tol && diam < opts.x_tol {
            break;
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; dim];
        for v in &verts[..dim] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }
        let worst = verts[dim].clone();
        let mix = |alpha: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + alpha * (c - w))
                .collect()
        };

        let reflected = mix(1.0);
        let fr = score(f(&reflected));
        if fr > vals[0] {
            // Try to go further in the same direction.
            let expanded = mix(2.0);
            let fe = score(f(&expanded));
            if fe > fr {
                verts[dim] = expanded;
                vals[dim] = fe;
            } else {
                verts[dim] = reflected;
                vals[dim] = fr;
            }
        } else if fr > vals[dim - 1] {
            verts[dim] = reflected;
            vals[dim] = fr;
        } else {
            // Contract toward the centroid, outside or inside.
            let (candidate, fc) = if fr > vals[dim] {
                let c = mix(0.5);
                let v = score(f(&c));
                (c, v)
            } else {
                let c = mix(-0.5);
                let v = score(f(&c));
                (c, v)
            };
            if fc > vals[dim].max(fr) {
                verts[dim] = candidate;
                vals[dim] = fc;
            } else {
                // Shrink everything toward the best vertex.
                let best = verts[0].clone();
                for i in 1..=dim {
                    for (x, b) in verts[i].iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    vals[i] = score(f(&verts[i]));
                }
            }
        }
        order(&mut verts, &mut vals);
    }

    (verts[0].clone(), vals[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn finds_maximum_of_concave_quadratic() {
        let f = |x: &[f64]| -((x[0] - 1.5).powi(2) + 2.0 * (x[1] + 0.5).powi(2));
        let (x, v) = nelder_mead_max(f, &[0.0, 0.0], &[0.3, 0.3], &SimplexOptions::default());
        assert_abs_diff_eq!(x[0], 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(x[1], -0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn one_dimensional_search_works() {
        let f = |x: &[f64]| -(x[0] - std::f64::consts::PI).powi(2);
        let (x, _) = nelder_mead_max(f, &[1.0], &[0.5], &SimplexOptions::default());
        assert_abs_diff_eq!(x[0], std::f64::consts::PI, epsilon = 1e-6);
    }

    #[test]
    fn respects_infinite_veto_regions() {
        // Maximum of x on (-inf, 2]: the veto keeps the simplex below 2.
        let f = |x: &[f64]| if x[0] > 2.0 { f64::NEG_INFINITY } else { x[0] };
        let (x, v) = nelder_mead_max(f, &[0.0], &[0.5], &SimplexOptions::default());
        assert!(x[0] <= 2.0 + 1e-12);
        assert!(v > 2.0 - 1e-6);
    }

    #[test]
    fn survives_nan_objectives() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                -(x[0] - 1.0).powi(2)
            }
        };
        let (x, _) = nelder_mead_max(f, &[0.5], &[0.25], &SimplexOptions::default());
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn handles_kinked_objectives() {
        // max of -|x - 0.7| has a kink at the optimum.
        let f = |x: &[f64]| -(x[0] - 0.7).abs();
        let (x, _) = nelder_mead_max(f, &[0.0], &[0.4], &SimplexOptions::default());
        assert_abs_diff_eq!(x[0], 0.7, epsilon = 1e-5);
    }
}
