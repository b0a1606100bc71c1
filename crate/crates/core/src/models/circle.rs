//! Rank-one projection curve: a circle of radius `1/sqrt(2)` inside the unit
//! sphere of symmetric 2x2 matrices, carrying the scale
//! `sigma(t) = exp(-m sin^2 t)`.
//!
//! Symmetric matrices are identified with `R^3` so that the Euclidean inner
//! product equals `tr(Z Z')`: the off-diagonal entry is stored times
//! `sqrt(2)`. The curve is `phi(t) = h(t) h(t)^T` with
//! `h(t) = (cos t, sin t)`, closed over `t in [0, pi)`.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{ChartAxis, ManifoldModel, MaximizerSpec, Tensor3, Tensor4};
use crate::quad::integrate_periodic;
use crate::specfun::chisq_upper;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct CircleProcessModel {
    m: f64,
}

impl CircleProcessModel {
    pub fn new(m: f64) -> Result<Self> {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::InvalidInput(format!(
                "scale exponent m must be a nonnegative real, got {m}"
            )));
        }
        Ok(CircleProcessModel { m })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn reference(&self) -> CircleReference {
        CircleReference { m: self.m }
    }
}

impl ManifoldModel for CircleProcessModel {
    fn name(&self) -> &str {
        "circle"
    }

    fn dim(&self) -> usize {
        1
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn axes(&self) -> Vec<ChartAxis> {
        vec![ChartAxis::new(0.0, std::f64::consts::PI, true)]
    }

    fn phi(&self, t: &[f64]) -> DVector<f64> {
        let (s, c) = t[0].sin_cos();
        DVector::from_vec(vec![c * c, std::f64::consts::SQRT_2 * c * s, s * s])
    }

    fn sigma(&self, t: &[f64]) -> f64 {
        (-self.m * t[0].sin().powi(2)).exp()
    }

    fn phi_d1(&self, t: &[f64]) -> Option<Vec<DVector<f64>>> {
        let (s2, c2) = (2.0 * t[0]).sin_cos();
        Some(vec![DVector::from_vec(vec![-s2, std::f64::consts::SQRT_2 * c2, s2])])
    }

    fn metric(&self, _t: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 2.0))
    }

    fn metric_d1(&self, _t: &[f64]) -> Option<Tensor3> {
        Some(Tensor3::zeros(1))
    }

    fn metric_d2(&self, _t: &[f64]) -> Option<Tensor4> {
        Some(Tensor4::zeros(1))
    }

    fn ell_d1(&self, t: &[f64]) -> Option<Vec<f64>> {
        Some(vec![-self.m * (2.0 * t[0]).sin()])
    }

    fn ell_d2(&self, t: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, -2.0 * self.m * (2.0 * t[0]).cos()))
    }

    fn maximizer_spec(&self) -> Option<MaximizerSpec> {
        if self.m > 0.0 {
            // sigma has a single maximum at t = 0 (sigma(0) = 1).
            Some(MaximizerSpec::Point { t: vec![0.0] })
        } else {
            // Constant scale: the whole curve, of length sqrt(2) * pi.
            Some(MaximizerSpec::ConstantSubmanifold {
                rep: vec![0.0],
                dim: 1,
                volume: std::f64::consts::SQRT_2 * std::f64::consts::PI,
            })
        }
    }
}

/// Independently hand-coded quantities for the circle model, kept separate
/// from the generic pipeline so the two can be compared in tests.
#[derive(Clone, Copy, Debug)]
pub struct CircleReference {
    pub m: f64,
}

impl CircleReference {
    /// `d(log sigma)/dt = -m sin 2t`.
    pub fn ell_d1(&self, t: f64) -> f64 {
        -self.m * (2.0 * t).sin()
    }

    /// `d^2(log sigma)/dt^2 = -2m cos 2t`.
    pub fn ell_d2(&self, t: f64) -> f64 {
        -2.0 * self.m * (2.0 * t).cos()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        (-self.m * t.sin().powi(2)).exp()
    }

    /// Constant in the leading-order tail `sqrt((1+m)/m) * Phi-bar(c)`.
    pub fn laplace_factor(&self) -> Result<f64> {
        if self.m <= 0.0 {
            return Err(Error::Precondition(
                "the leading-order factor is undefined at m = 0 (no isolated maximum)".into(),
            ));
        }
        Ok(((1.0 + self.m) / self.m).sqrt())
    }

    /// Conjectured squared overlap threshold `1 / (1 + (1+m)^2)`, the
    /// diagonal limit of the pairwise objective.
    pub fn conjectured_bcri2(&self) -> f64 {
        1.0 / (1.0 + (1.0 + self.m).powi(2))
    }

    /// Unclipped overlap margin
    /// `sigma(t)/sigma(s) - <phi(s), psi(t)>`
    /// `= exp(-m(sin^2 t - sin^2 s)) - cos^2(s-t) - m sin 2t sin(s-t) cos(s-t)`.
    pub fn margin(&self, t: f64, s: f64) -> f64 {
        (-self.m * (t.sin().powi(2) - s.sin().powi(2))).exp()
            - (s - t).cos().powi(2)
            - self.m * (2.0 * t).sin() * (s - t).sin() * (s - t).cos()
    }

    /// Pairwise overlap exponent
    /// `h(t,s) = m^2 sin^2(2t) / 2 + (margin_+ / sin^2(s-t))^2`.
    pub fn h(&self, t: f64, s: f64) -> f64 {
        let grad2 = 0.5 * (self.m * (2.0 * t).sin()).powi(2);
        let denom = (s - t).sin().powi(2);
        grad2 + (self.margin(t, s).max(0.0) / denom).powi(2)
    }
}

/// Tail of `max X(t)` by the circle-specific closed-form integrand,
/// independent of the generic evaluator:
///
/// `int_0^pi (1 + (-l'' + l'^2)/2) / (2 pi (1 + l'^2/2))`
/// `        * Gbar_2((1 + l'^2/2) c^2 / sigma^2) sqrt(2) dt`.
pub fn circle_tail_by_direct_formula(m: f64, c: f64, panels: usize) -> f64 {
    let r = CircleReference { m };
    integrate_periodic(
        |t| {
            let l1 = r.ell_d1(t);
            let l2 = r.ell_d2(t);
            let sig = r.sigma(t);
            let lam = 1.0 + 0.5 * l1 * l1;
            (1.0 + 0.5 * (-l2 + l1 * l1)) / (2.0 * std::f64::consts::PI * lam)
                * chisq_upper(2, lam * c * c / (sig * sig)).expect("two degrees of freedom")
                * std::f64::consts::SQRT_2
        },
        0.0,
        std::f64::consts::PI,
        panels,
    )
    .expect("positive panel count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{self, PairSpace, ProductPairSpace};
    use approx::assert_abs_diff_eq;

    fn sample_ts() -> Vec<f64> {
        (0..17).map(|i| 0.11 + i as f64 * 0.17).map(|t| t % std::f64::consts::PI).collect()
    }

    #[test]
    fn embedding_is_closed_unit_norm_curve() {
        let model = CircleProcessModel::new(1.0).unwrap();
        for t in sample_ts() {
            assert_abs_diff_eq!(model.phi(&[t]).norm(), 1.0, epsilon = 1e-14);
        }
        let near_pi = std::f64::consts::PI - 1e-9;
        assert!((model.phi(&[0.0]) - model.phi(&[near_pi])).norm() < 1e-8);
    }

    #[test]
    fn analytic_and_numeric_derivatives_agree() {
        let model = CircleProcessModel::new(1.5).unwrap();
        let stripped = Stripped(&model);
        for t in sample_ts() {
            let (g_a, _) = geometry::metric_at(&model, &[t]).unwrap();
            let (g_n, _) = geometry::metric_at(&stripped, &[t]).unwrap();
            assert_abs_diff_eq!(g_a[(0, 0)], g_n[(0, 0)], epsilon = 1e-6);
            let ga = geometry::connection_at(&model, &[t]).unwrap();
            let gn = geometry::connection_at(&stripped, &[t]).unwrap();
            assert_abs_diff_eq!(ga.get(0, 0, 0), gn.get(0, 0, 0), epsilon = 1e-6);
            let ca = geometry::c_matrix_at(&model, &[t]).unwrap();
            let cn = geometry::c_matrix_at(&stripped, &[t]).unwrap();
            assert_abs_diff_eq!(ca[(0, 0)], cn[(0, 0)], epsilon = 1e-6);
        }
    }

    /// Same embedding with every analytic supplier removed.
    struct Stripped<'a>(&'a CircleProcessModel);

    impl ManifoldModel for Stripped<'_> {
        fn name(&self) -> &str {
            "circle-numeric"
        }
        fn dim(&self) -> usize {
            1
        }
        fn ambient_dim(&self) -> usize {
            3
        }
        fn axes(&self) -> Vec<ChartAxis> {
            self.0.axes()
        }
        fn phi(&self, t: &[f64]) -> DVector<f64> {
            self.0.phi(t)
        }
        fn sigma(&self, t: &[f64]) -> f64 {
            self.0.sigma(t)
        }
    }

    #[test]
    fn scale_correction_matches_hand_formula() {
        // c_11 = -l'' + l'^2 in a chart with constant metric.
        let model = CircleProcessModel::new(0.7).unwrap();
        let r = model.reference();
        for t in sample_ts() {
            let c = geometry::c_matrix_at(&model, &[t]).unwrap();
            let expect = -r.ell_d2(t) + r.ell_d1(t).powi(2);
            assert_abs_diff_eq!(c[(0, 0)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_residual_is_fourth_power_of_separation_sine() {
        let model = CircleProcessModel::new(1.0).unwrap();
        for t in sample_ts() {
            let base = geometry::base_point(&model, &[t]).unwrap();
            for ds in [0.1, 0.4, 0.9, 1.4] {
                let s = t + ds;
                let w = model.phi(&[s]);
                assert_abs_diff_eq!(
                    geometry::normal_residual2(&base, &w),
                    (s - t).sin().powi(4),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn margin_vanishes_on_the_diagonal_and_matches_split_form() {
        // margin(t, t+delta) -> 0 as delta -> 0, and the generic pair-space
        // probe reproduces the hand-coded value.
        let model = CircleProcessModel::new(1.5).unwrap();
        let r = model.reference();
        for t in sample_ts() {
            assert_abs_diff_eq!(r.margin(t, t + 1e-7), 0.0, epsilon = 1e-12);
            let base = geometry::base_point(&model, &[t]).unwrap();
            for ds in [0.3, 0.8, 1.3] {
                let s = t + ds;
                let w = model.phi(&[s]);
                let psi = &base.u - &base.grad_ell_ambient;
                let lhs = base.sigma / model.sigma(&[s]) - w.dot(&psi);
                assert_abs_diff_eq!(lhs, r.margin(t, s), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn reference_values_from_known_configurations() {
        let r = CircleReference { m: 1.5 };
        assert_abs_diff_eq!(r.laplace_factor().unwrap(), (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(CircleReference { m: 1.0 }.conjectured_bcri2(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(
            CircleReference { m: 0.25 }.conjectured_bcri2(),
            16.0 / 41.0,
            epsilon = 1e-15
        );
        assert!(CircleReference { m: 0.0 }.laplace_factor().is_err());
        // m = 0: constant scale, no scale correction anywhere.
        let flat = CircleProcessModel::new(0.0).unwrap();
        for t in sample_ts() {
            let c = geometry::c_matrix_at(&flat, &[t]).unwrap();
            assert_eq!(c[(0, 0)], 0.0);
        }
    }

    #[test]
    fn pair_space_h_matches_reference_h() {
        // The generic h assembled from base-point quantities must equal the
        // hand-derived expression.
        let model = CircleProcessModel::new(1.1).unwrap();
        let r = model.reference();
        let ps = ProductPairSpace { model: &model };
        for t in [0.2f64, 0.9, 1.7, 2.6] {
            for s in [0.5, 1.2, 2.2, 3.0] {
                if ((s - t).sin()).abs() < 1e-3 {
                    continue;
                }
                let z = vec![t, s];
                let tu = ps.u_chart(&z);
                let base = geometry::base_point(&model, &tu).unwrap();
                let (w, sw) = ps.probe(&z);
                let margin = base.sigma / sw - w.dot(&(&base.u - &base.grad_ell_ambient));
                let resid2 = geometry::normal_residual2(&base, &w);
                let h = base.grad_ell_norm2 + (margin.max(0.0).powi(2) / resid2);
                assert_abs_diff_eq!(h, r.h(t, s), epsilon = 1e-8);
            }
        }
    }
}
