//! Flat product of two circles inside `S^3`, with constant scale: the
//! standard d = 2 test chart for constant-variance reductions. The metric is
//! the constant diagonal `(r1^2, r2^2)`, so connection and curvature vanish
//! identically.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{ChartAxis, ManifoldModel, MaximizerSpec, Tensor3, Tensor4};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct FlatTorusModel {
    r1: f64,
    r2: f64,
}

impl FlatTorusModel {
    /// Radii must be positive with `r1^2 + r2^2 = 1` (so the torus lies in
    /// the unit sphere); tolerance `1e-9`, after which the pair is
    /// renormalized exactly.
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        if !(r1 > 0.0 && r2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "torus radii must be positive, got ({r1}, {r2})"
            )));
        }
        let norm2 = r1 * r1 + r2 * r2;
        if (norm2 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "torus radii must satisfy r1^2 + r2^2 = 1, got {norm2}"
            )));
        }
        let norm = norm2.sqrt();
        Ok(FlatTorusModel { r1: r1 / norm, r2: r2 / norm })
    }

    pub fn radii(&self) -> (f64, f64) {
        (self.r1, self.r2)
    }

    /// Surface area `(2 pi)^2 r1 r2`.
    pub fn volume(&self) -> f64 {
        (2.0 * std::f64::consts::PI).powi(2) * self.r1 * self.r2
    }
}

impl ManifoldModel for FlatTorusModel {
    fn name(&self) -> &str {
        "torus"
    }

    fn dim(&self) -> usize {
        2
    }

    fn ambient_dim(&self) -> usize {
        4
    }

    fn axes(&self) -> Vec<ChartAxis> {
        vec![ChartAxis::new(0.0, 2.0 * std::f64::consts::PI, true); 2]
    }

    fn phi(&self, t: &[f64]) -> DVector<f64> {
        let (s1, c1) = t[0].sin_cos();
        let (s2, c2) = t[1].sin_cos();
        DVector::from_vec(vec![self.r1 * c1, self.r1 * s1, self.r2 * c2, self.r2 * s2])
    }

    fn sigma(&self, _t: &[f64]) -> f64 {
        1.0
    }

    fn phi_d1(&self, t: &[f64]) -> Option<Vec<DVector<f64>>> {
        let (s1, c1) = t[0].sin_cos();
        let (s2, c2) = t[1].sin_cos();
        Some(vec![
            DVector::from_vec(vec![-self.r1 * s1, self.r1 * c1, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, -self.r2 * s2, self.r2 * c2]),
        ])
    }

    fn metric(&self, _t: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&DVector::from_vec(vec![
            self.r1 * self.r1,
            self.r2 * self.r2,
        ])))
    }

    fn metric_d1(&self, _t: &[f64]) -> Option<Tensor3> {
        Some(Tensor3::zeros(2))
    }

    fn metric_d2(&self, _t: &[f64]) -> Option<Tensor4> {
        Some(Tensor4::zeros(2))
    }

    fn ell_d1(&self, _t: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0, 0.0])
    }

    fn ell_d2(&self, _t: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 2))
    }

    fn maximizer_spec(&self) -> Option<MaximizerSpec> {
        Some(MaximizerSpec::ConstantSubmanifold {
            rep: vec![0.0, 0.0],
            dim: 2,
            volume: self.volume(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;
    use approx::assert_abs_diff_eq;

    #[test]
    fn construction_validates_radii() {
        assert!(FlatTorusModel::new(0.6, 0.8).is_ok());
        assert!(FlatTorusModel::new(0.6, 0.9).is_err());
        assert!(FlatTorusModel::new(-0.6, 0.8).is_err());
        let default = FlatTorusModel::new(
            std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        )
        .unwrap();
        assert_abs_diff_eq!(default.volume(), 2.0 * std::f64::consts::PI.powi(2), epsilon = 1e-12);
    }

    #[test]
    fn geometry_is_exactly_flat() {
        let model = FlatTorusModel::new(0.6, 0.8).unwrap();
        for t in [[0.3, 1.1], [2.0, 4.4], [5.9, 0.2]] {
            assert_abs_diff_eq!(model.phi(&t).norm(), 1.0, epsilon = 1e-15);
            let geom = geometry::point_geometry(&model, &t).unwrap();
            assert_eq!(geom.gamma.get(0, 1, 0), 0.0);
            assert_eq!(geom.r.get(0, 1, 0, 1), 0.0);
            assert_eq!(geom.c[(0, 0)], 0.0);
            assert_abs_diff_eq!(geom.base.sqrt_det_g, 0.48, epsilon = 1e-15);
            // Modified curvature of a flat chart: -(g_ik g_jl - g_il g_jk)
            // contracted twice with G^{-1} gives zeta_2 = -1.
            assert_abs_diff_eq!(geom.zeta[2], -1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn analytic_metric_matches_embedding_derivatives() {
        let model = FlatTorusModel::new(0.6, 0.8).unwrap();
        struct Plain<'a>(&'a FlatTorusModel);
        impl ManifoldModel for Plain<'_> {
            fn name(&self) -> &str {
                "torus-numeric"
            }
            fn dim(&self) -> usize {
                2
            }
            fn ambient_dim(&self) -> usize {
                4
            }
            fn axes(&self) -> Vec<ChartAxis> {
                self.0.axes()
            }
            fn phi(&self, t: &[f64]) -> DVector<f64> {
                self.0.phi(t)
            }
            fn sigma(&self, _t: &[f64]) -> f64 {
                1.0
            }
        }
        for t in [[0.3, 1.1], [2.0, 4.4]] {
            let (ga, _) = geometry::metric_at(&model, &t).unwrap();
            let (gn, _) = geometry::metric_at(&Plain(&model), &t).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(ga[(i, j)], gn[(i, j)], epsilon = 1e-9);
                }
            }
        }
    }
}
