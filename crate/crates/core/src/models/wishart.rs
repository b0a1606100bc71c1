//! Eigenvalue fields for positive-definite quadratic forms: the largest
//! eigenvalue of a p x p sample covariance with matrix parameter
//! `diag(lambda_1, ..., lambda_p)` and `nu` degrees of freedom equals the
//! squared maximum of the Gaussian field
//!
//! `X(v, w) = sigma(v) <phi(v, w), xi>`, `sigma(v) = sqrt(v' L v)`,
//! `phi(v, w) = (L^{1/2} v) (x) w / sigma(v)`
//!
//! over unit vectors `v in R^p`, `w in R^nu` (`(x)` is the Kronecker
//! product, rows indexed by `v`). Both `(v, w)` and `(-v, -w)` map to the
//! same ambient point, so the chart double-covers the manifold.
//!
//! [`Wishart2Model`] is the fully-resolved p = 2 case with analytic
//! geometry on the whole chart and a reduced pair space for the overlap
//! threshold; [`WishartPQModel`] is the general case used for the
//! leading-order (Laplace) tail, with the scale maximizer declared as a
//! product submanifold.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{
    ChartAxis, ManifoldModel, MaximizerSpec, PairSpace, QuadratureLayout, Tensor3, Tensor4,
};
use crate::quad::integrate_periodic;
use crate::specfun::{chisq_upper, sphere_volume};
use crate::{Error, Result};

/// `Omega_n` for dimensions that are nonzero by construction.
fn omega(n: usize) -> f64 {
    sphere_volume(n).expect("positive sphere dimension")
}

/// Chart of the unit sphere around its first pole: the remaining
/// coordinates are free and the first is `sqrt(1 - sum tau^2)`.
fn pole_chart(tau: &[f64]) -> (Vec<f64>, f64) {
    let rho: f64 = tau.iter().map(|x| x * x).sum();
    let mut w = Vec::with_capacity(tau.len() + 1);
    w.push((1.0 - rho).max(0.0).sqrt());
    w.extend_from_slice(tau);
    (w, rho)
}

/// Pole-chart metric of the unit sphere: `delta + tau tau' / (1 - rho)`.
fn pole_chart_metric(tau: &[f64]) -> DMatrix<f64> {
    let k = tau.len();
    let u = 1.0 / (1.0 - tau.iter().map(|x| x * x).sum::<f64>());
    DMatrix::from_fn(k, k, |a, b| {
        let diag = if a == b { 1.0 } else { 0.0 };
        diag + tau[a] * tau[b] * u
    })
}

/// First derivatives of the pole-chart metric, as `get(a, b, c)` =
/// `d g_ab / d tau_c`.
fn pole_chart_metric_d1(tau: &[f64]) -> Tensor3 {
    let k = tau.len();
    let u = 1.0 / (1.0 - tau.iter().map(|x| x * x).sum::<f64>());
    let mut out = Tensor3::zeros(k);
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                let da = if a == c { tau[b] } else { 0.0 };
                let db = if b == c { tau[a] } else { 0.0 };
                out.set(a, b, c, (da + db) * u + 2.0 * tau[a] * tau[b] * tau[c] * u * u);
            }
        }
    }
    out
}

/// Second derivatives of the pole-chart metric, as `get(a, b, c, d)` =
/// `d^2 g_ab / d tau_c d tau_d`.
fn pole_chart_metric_d2(tau: &[f64]) -> Tensor4 {
    let k = tau.len();
    let u = 1.0 / (1.0 - tau.iter().map(|x| x * x).sum::<f64>());
    let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut out = Tensor4::zeros(k);
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                for dd in 0..k {
                    let v = (kd(a, dd) * kd(b, c) + kd(b, dd) * kd(a, c)) * u
                        + 2.0 * (kd(a, dd) * tau[b] * tau[c]
                            + kd(b, dd) * tau[a] * tau[c]
                            + kd(a, c) * tau[b] * tau[dd]
                            + kd(b, c) * tau[a] * tau[dd]
                            + kd(c, dd) * tau[a] * tau[b])
                            * u
                            * u
                        + 8.0 * tau[a] * tau[b] * tau[c] * tau[dd] * u * u * u;
                    out.set(a, b, c, dd, v);
                }
            }
        }
    }
    out
}

/// Row-major Kronecker product of a `p`-vector and a `nu`-vector.
fn kron(a: &[f64], w: &[f64]) -> DVector<f64> {
    let mut out = Vec::with_capacity(a.len() * w.len());
    for &ai in a {
        for &wj in w {
            out.push(ai * wj);
        }
    }
    DVector::from_vec(out)
}

/// 2 x 2 case: chart `(t1, tau_1, ..., tau_{nu-1})` with
/// `v = (cos t1, sin t1)` and `w` in the pole chart. The metric is exactly
/// block diagonal: `g_00 = l1 l2 / sigma^4` and the `w`-block is the sphere
/// pole-chart metric.
#[derive(Clone, Debug)]
pub struct Wishart2Model {
    l1: f64,
    l2: f64,
    nu: usize,
}

impl Wishart2Model {
    pub fn new(l1: f64, l2: f64, nu: usize) -> Result<Self> {
        if !(l2 > 0.0 && l1 >= l2 && l1.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "eigenvalue parameters must satisfy l1 >= l2 > 0, got ({l1}, {l2})"
            )));
        }
        if nu < 2 {
            return Err(Error::InvalidInput(format!(
                "degrees of freedom must be at least 2, got {nu}"
            )));
        }
        Ok(Wishart2Model { l1, l2, nu })
    }

    pub fn lambda(&self) -> (f64, f64) {
        (self.l1, self.l2)
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn reference(&self) -> Wishart2Reference {
        Wishart2Reference { l1: self.l1, l2: self.l2, nu: self.nu }
    }

    fn sigma2(&self, t1: f64) -> f64 {
        let (s, c) = t1.sin_cos();
        self.l1 * c * c + self.l2 * s * s
    }

    /// `L^{1/2} v / sigma` and its `t1`-derivative.
    fn scaled_direction(&self, t1: f64) -> ([f64; 2], [f64; 2]) {
        let (s, c) = t1.sin_cos();
        let sig2 = self.sigma2(t1);
        let sig = sig2.sqrt();
        let dsig = (self.l2 - self.l1) * s * c / sig;
        let a = [self.l1.sqrt() * c / sig, self.l2.sqrt() * s / sig];
        let da = [
            self.l1.sqrt() * (-s * sig - c * dsig) / sig2,
            self.l2.sqrt() * (c * sig - s * dsig) / sig2,
        ];
        (a, da)
    }
}

impl ManifoldModel for Wishart2Model {
    fn name(&self) -> &str {
        "wishart2"
    }

    fn dim(&self) -> usize {
        self.nu
    }

    fn ambient_dim(&self) -> usize {
        2 * self.nu
    }

    fn axes(&self) -> Vec<ChartAxis> {
        let mut axes = vec![ChartAxis::new(0.0, 2.0 * std::f64::consts::PI, true)];
        // Keep the tau box strictly inside the unit ball (corner radius 0.9)
        // so pole-chart evaluations stay well conditioned.
        let r = 0.9 / ((self.nu - 1) as f64).sqrt();
        axes.extend(vec![ChartAxis::new(-r, r, false); self.nu - 1]);
        axes
    }

    fn phi(&self, t: &[f64]) -> DVector<f64> {
        let (a, _) = self.scaled_direction(t[0]);
        let (w, _) = pole_chart(&t[1..]);
        kron(&a, &w)
    }

    fn sigma(&self, t: &[f64]) -> f64 {
        self.sigma2(t[0]).sqrt()
    }

    fn phi_d1(&self, t: &[f64]) -> Option<Vec<DVector<f64>>> {
        let (a, da) = self.scaled_direction(t[0]);
        let tau = &t[1..];
        let (w, rho) = pole_chart(tau);
        let w1 = (1.0 - rho).max(f64::MIN_POSITIVE).sqrt();
        let mut out = vec![kron(&da, &w)];
        for alpha in 0..tau.len() {
            let mut dw = vec![0.0; self.nu];
            dw[0] = -tau[alpha] / w1;
            dw[alpha + 1] = 1.0;
            out.push(kron(&a, &dw));
        }
        Some(out)
    }

    fn metric(&self, t: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.nu;
        let sig2 = self.sigma2(t[0]);
        let mut g = DMatrix::zeros(d, d);
        g[(0, 0)] = self.l1 * self.l2 / (sig2 * sig2);
        let hat = pole_chart_metric(&t[1..]);
        for a in 0..d - 1 {
            for b in 0..d - 1 {
                g[(a + 1, b + 1)] = hat[(a, b)];
            }
        }
        Some(g)
    }

    fn metric_d1(&self, t: &[f64]) -> Option<Tensor3> {
        let d = self.nu;
        let mut out = Tensor3::zeros(d);
        let sig2 = self.sigma2(t[0]);
        let ds2 = (self.l2 - self.l1) * (2.0 * t[0]).sin();
        // d g_00 / d t1 = -2 l1 l2 (sigma^2)' / sigma^6.
        out.set(0, 0, 0, -2.0 * self.l1 * self.l2 * ds2 / sig2.powi(3));
        let hat = pole_chart_metric_d1(&t[1..]);
        for a in 0..d - 1 {
            for b in 0..d - 1 {
                for c in 0..d - 1 {
                    out.set(a + 1, b + 1, c + 1, hat.get(a, b, c));
                }
            }
        }
        Some(out)
    }

    fn metric_d2(&self, t: &[f64]) -> Option<Tensor4> {
        let d = self.nu;
        let mut out = Tensor4::zeros(d);
        let sig2 = self.sigma2(t[0]);
        let ds2 = (self.l2 - self.l1) * (2.0 * t[0]).sin();
        let dds2 = 2.0 * (self.l2 - self.l1) * (2.0 * t[0]).cos();
        // d^2 g_00 / d t1^2 = -2 l1 l2 (f'' f - 3 f'^2) / f^4 with f = sigma^2.
        out.set(
            0,
            0,
            0,
            0,
            -2.0 * self.l1 * self.l2 * (dds2 * sig2 - 3.0 * ds2 * ds2) / sig2.powi(4),
        );
        let hat = pole_chart_metric_d2(&t[1..]);
        for a in 0..d - 1 {
            for b in 0..d - 1 {
                for c in 0..d - 1 {
                    for e in 0..d - 1 {
                        out.set(a + 1, b + 1, c + 1, e + 1, hat.get(a, b, c, e));
                    }
                }
            }
        }
        Some(out)
    }

    fn ell_d1(&self, t: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.nu];
        out[0] = 0.5 * (self.l2 - self.l1) * (2.0 * t[0]).sin() / self.sigma2(t[0]);
        Some(out)
    }

    fn ell_d2(&self, t: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.nu;
        let sig2 = self.sigma2(t[0]);
        let ds2 = (self.l2 - self.l1) * (2.0 * t[0]).sin();
        let mut out = DMatrix::zeros(d, d);
        out[(0, 0)] =
            0.5 * (2.0 * (self.l2 - self.l1) * (2.0 * t[0]).cos() * sig2 - ds2 * ds2)
                / (sig2 * sig2);
        Some(out)
    }

    fn quadrature_layout(&self) -> QuadratureLayout {
        QuadratureLayout {
            active: vec![0],
            pinned: (1..self.nu).map(|i| (i, 0.0)).collect(),
            // The integrand is independent of w, so the sphere factor is
            // its exact volume; the chart covers the manifold twice.
            symbolic_factor: omega(self.nu),
            cover_multiplicity: 2.0,
        }
    }

    fn maximizer_spec(&self) -> Option<MaximizerSpec> {
        if self.l1 > self.l2 {
            // sigma is maximal on the circle {(+-e1) (x) w}, a sphere of
            // dimension nu - 1 with volume Omega_nu (after the double cover).
            Some(MaximizerSpec::ConstantSubmanifold {
                rep: vec![0.0; self.nu],
                dim: self.nu - 1,
                volume: omega(self.nu),
            })
        } else {
            // Equal eigenvalues: constant scale on the whole manifold,
            // volume (1/2) Vol(S^1 x S^{nu-1}).
            Some(MaximizerSpec::ConstantSubmanifold {
                rep: vec![0.0; self.nu],
                dim: self.nu,
                volume: std::f64::consts::PI * omega(self.nu),
            })
        }
    }

    fn pair_space(&self) -> Option<Box<dyn PairSpace + '_>> {
        Some(Box::new(Wishart2PairSpace { model: self }))
    }
}

/// Reduced pair space for the 2 x 2 model. By rotational symmetry in `w`,
/// an ordered pair is described by `(t, s, y)`: the two `v`-angles and the
/// cosine `y` between the two `w`-vectors.
struct Wishart2PairSpace<'a> {
    model: &'a Wishart2Model,
}

impl PairSpace for Wishart2PairSpace<'_> {
    fn axes(&self) -> Vec<ChartAxis> {
        vec![
            ChartAxis::new(0.0, 2.0 * std::f64::consts::PI, true),
            ChartAxis::new(0.0, 2.0 * std::f64::consts::PI, true),
            ChartAxis::new(-1.0 + 1e-7, 1.0 - 1e-7, false),
        ]
    }

    fn u_coords(&self) -> usize {
        1
    }

    fn u_chart(&self, z: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.model.nu];
        t[0] = z[0];
        t
    }

    fn probe(&self, z: &[f64]) -> (DVector<f64>, f64) {
        let (s, y) = (z[1], z[2]);
        let (a, _) = self.model.scaled_direction(s);
        let mut w = vec![0.0; self.model.nu];
        w[0] = y;
        w[1] = (1.0 - y * y).max(0.0).sqrt();
        (kron(&a, &w), self.model.sigma2(s).sqrt())
    }

    fn slice_angle_axes(&self) -> Vec<ChartAxis> {
        // Mixing angle between the v-rotation (cos) and a representative
        // w-rotation (sin >= 0 suffices by symmetry).
        vec![ChartAxis::new(0.0, std::f64::consts::PI, false)]
    }

    fn slice_point(&self, zu: &[f64], angles: &[f64], _branch: usize, delta: f64) -> Vec<f64> {
        let (sa, ca) = angles[0].sin_cos();
        let s = ChartAxis::new(0.0, 2.0 * std::f64::consts::PI, true).wrap(zu[0] + delta * ca);
        vec![zu[0], s, (delta * sa).cos()]
    }
}

/// Hand-coded closed forms for the 2 x 2 model, independent of the generic
/// evaluator.
#[derive(Clone, Copy, Debug)]
pub struct Wishart2Reference {
    pub l1: f64,
    pub l2: f64,
    pub nu: usize,
}

impl Wishart2Reference {
    pub fn sigma2(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.l1 * c * c + self.l2 * s * s
    }

    /// `q(theta) = cos^2/l1 + sin^2/l2 = (1 + |grad log sigma|^2) / sigma^2`.
    pub fn q_factor(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        c * c / self.l1 + s * s / self.l2
    }

    pub fn g11(&self, theta: f64) -> f64 {
        self.l1 * self.l2 / self.sigma2(theta).powi(2)
    }

    /// `det(I + C G^{-1}) = sigma^4 / (l1 l2)`.
    pub fn det_correction(&self, theta: f64) -> f64 {
        self.sigma2(theta).powi(2) / (self.l1 * self.l2)
    }

    /// Second curvature invariant `-(nu - 1) l1 l2 / sigma^4`.
    pub fn zeta2(&self, theta: f64) -> f64 {
        -((self.nu - 1) as f64) * self.g11(theta)
    }

    /// Overlap threshold `sqrt(l1 l2 / (l1 + l2))`.
    pub fn bcri(&self) -> f64 {
        (self.l1 * self.l2 / (self.l1 + self.l2)).sqrt()
    }

    /// Squared gradient of `log sigma`: `(l1-l2)^2 sin^2(2t) / (4 l1 l2)`.
    pub fn grad2(&self, t: f64) -> f64 {
        ((self.l1 - self.l2) * (2.0 * t).sin()).powi(2) / (4.0 * self.l1 * self.l2)
    }

    /// Pairwise overlap exponent in the reduced coordinates `(t, s, y)`.
    pub fn h(&self, t: f64, s: f64, y: f64) -> f64 {
        let (st, ct) = t.sin_cos();
        let (ss, cs) = s.sin_cos();
        let bracket = self.l1 * ct * cs + self.l2 * st * ss
            - 0.5 * (self.l1 - self.l2) * (2.0 * t).sin() * (t - s).sin();
        let num = (self.sigma2(t) - bracket * y).max(0.0).powi(2);
        let den = self.l1 * self.l2 * (t - s).sin().powi(2) * (1.0 - y * y);
        self.grad2(t) + num / den
    }

    /// Tail of the largest eigenvalue by the model-specific closed form:
    ///
    /// `Omega_nu / (2 Omega_{nu+1}) * int_0^{2pi} (sigma^2 q)^{-(nu+1)/2}`
    /// `  [ sigma^2/sqrt(l1 l2) Gbar_{nu+1}(q c)`
    /// `    - sqrt(l1 l2) q Gbar_{nu-1}(q c) ] dtheta`.
    pub fn eigen_tail_by_direct_formula(&self, c: f64, panels: usize) -> f64 {
        let sqrt_ll = (self.l1 * self.l2).sqrt();
        let front = omega(self.nu) / (2.0 * omega(self.nu + 1));
        front
            * integrate_periodic(
                |theta| {
                    let sig2 = self.sigma2(theta);
                    let q = self.q_factor(theta);
                    (sig2 * q).powf(-0.5 * (self.nu as f64 + 1.0))
                        * (sig2 / sqrt_ll
                            * chisq_upper(self.nu + 1, q * c).expect("nu + 1 >= 3")
                            - sqrt_ll * q * chisq_upper(self.nu - 1, q * c).expect("nu - 1 >= 1"))
                },
                0.0,
                2.0 * std::f64::consts::PI,
                panels,
            )
            .expect("positive panel count")
    }
}

/// General p x p case for the leading-order tail: the scale maximizer is
/// the product submanifold where `v` stays in the top eigenspace.
#[derive(Clone, Debug)]
pub struct WishartPQModel {
    p: usize,
    q: usize,
    nu: usize,
    lambdas: Vec<f64>,
}

impl WishartPQModel {
    /// `lambdas` must be positive and non-increasing; the multiplicity of
    /// the leading value is derived, not declared.
    pub fn new(p: usize, nu: usize, lambdas: Vec<f64>) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidInput(format!("matrix size p must be at least 2, got {p}")));
        }
        if nu < 2 {
            return Err(Error::InvalidInput(format!(
                "degrees of freedom must be at least 2, got {nu}"
            )));
        }
        if lambdas.len() != p {
            return Err(Error::InvalidInput(format!(
                "expected {p} eigenvalues, got {}",
                lambdas.len()
            )));
        }
        if !lambdas.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidInput("eigenvalues must be positive reals".into()));
        }
        if lambdas.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("eigenvalues must be non-increasing".into()));
        }
        let q = lambdas.iter().take_while(|&&l| l >= lambdas[0] * (1.0 - 1e-12)).count();
        Ok(WishartPQModel { p, q, nu, lambdas })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    fn v_of(&self, tv: &[f64]) -> (Vec<f64>, f64) {
        pole_chart(tv)
    }

    fn sigma2_of_tv(&self, tv: &[f64]) -> f64 {
        // sigma^2 = l1 + sum (l_{i+1} - l1) t_i^2.
        self.lambdas[0]
            + tv.iter()
                .enumerate()
                .map(|(i, &ti)| (self.lambdas[i + 1] - self.lambdas[0]) * ti * ti)
                .sum::<f64>()
    }

    /// Coefficient of the leading tail term:
    /// `prod_{i>q} (1 - l_i/l1)^{-1/2} * Omega_q Omega_nu / (Omega_{q+nu-1} Omega_1)`.
    pub fn leading_tail_coefficient(&self) -> f64 {
        let det: f64 = self.lambdas[self.q..]
            .iter()
            .map(|&l| 1.0 - l / self.lambdas[0])
            .product::<f64>()
            .sqrt()
            .recip();
        det * omega(self.q) * omega(self.nu)
            / (omega(self.q + self.nu - 1) * omega(1))
    }

    /// Leading-order eigenvalue tail
    /// `coefficient * Gbar_{q+nu-1}(c / l1)`.
    pub fn eigen_tail_leading(&self, c: f64) -> f64 {
        self.leading_tail_coefficient()
            * chisq_upper(self.q + self.nu - 1, c / self.lambdas[0]).expect("q + nu - 1 >= 2")
    }
}

impl ManifoldModel for WishartPQModel {
    fn name(&self) -> &str {
        "wishartpq"
    }

    fn dim(&self) -> usize {
        self.p + self.nu - 2
    }

    fn ambient_dim(&self) -> usize {
        self.p * self.nu
    }

    fn axes(&self) -> Vec<ChartAxis> {
        let rv = 0.9 / ((self.p - 1) as f64).sqrt();
        let rw = 0.9 / ((self.nu - 1) as f64).sqrt();
        let mut axes = vec![ChartAxis::new(-rv, rv, false); self.p - 1];
        axes.extend(vec![ChartAxis::new(-rw, rw, false); self.nu - 1]);
        axes
    }

    fn phi(&self, t: &[f64]) -> DVector<f64> {
        let (v, _) = self.v_of(&t[..self.p - 1]);
        let (w, _) = pole_chart(&t[self.p - 1..]);
        let sig = self.sigma2_of_tv(&t[..self.p - 1]).sqrt();
        let a: Vec<f64> = v.iter().zip(&self.lambdas).map(|(vi, l)| l.sqrt() * vi / sig).collect();
        kron(&a, &w)
    }

    fn sigma(&self, t: &[f64]) -> f64 {
        self.sigma2_of_tv(&t[..self.p - 1]).sqrt()
    }

    fn phi_d1(&self, t: &[f64]) -> Option<Vec<DVector<f64>>> {
        let tv = &t[..self.p - 1];
        let tw = &t[self.p - 1..];
        let (v, rho_v) = self.v_of(tv);
        let (w, rho_w) = pole_chart(tw);
        let v1 = (1.0 - rho_v).max(f64::MIN_POSITIVE).sqrt();
        let w1 = (1.0 - rho_w).max(f64::MIN_POSITIVE).sqrt();
        let sig2 = self.sigma2_of_tv(tv);
        let sig = sig2.sqrt();
        let a: Vec<f64> = v.iter().zip(&self.lambdas).map(|(vi, l)| l.sqrt() * vi / sig).collect();
        let mut out = Vec::with_capacity(self.dim());
        for i in 0..self.p - 1 {
            let dsig = (self.lambdas[i + 1] - self.lambdas[0]) * tv[i] / sig;
            let mut dv = vec![0.0; self.p];
            dv[0] = -tv[i] / v1;
            dv[i + 1] = 1.0;
            let da: Vec<f64> = (0..self.p)
                .map(|r| self.lambdas[r].sqrt() * (dv[r] / sig - v[r] * dsig / sig2))
                .collect();
            out.push(kron(&da, &w));
        }
        for alpha in 0..self.nu - 1 {
            let mut dw = vec![0.0; self.nu];
            dw[0] = -tw[alpha] / w1;
            dw[alpha + 1] = 1.0;
            out.push(kron(&a, &dw));
        }
        Some(out)
    }

    fn ell_d1(&self, t: &[f64]) -> Option<Vec<f64>> {
        let sig2 = self.sigma2_of_tv(&t[..self.p - 1]);
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.p - 1 {
            out[i] = (self.lambdas[i + 1] - self.lambdas[0]) * t[i] / sig2;
        }
        Some(out)
    }

    fn ell_d2(&self, t: &[f64]) -> Option<DMatrix<f64>> {
        let tv = &t[..self.p - 1];
        let sig2 = self.sigma2_of_tv(tv);
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..self.p - 1 {
            for j in 0..self.p - 1 {
                let diag = if i == j { sig2 } else { 0.0 };
                out[(i, j)] = (self.lambdas[i + 1] - self.lambdas[0])
                    * (diag
                        - 2.0 * (self.lambdas[j + 1] - self.lambdas[0]) * tv[i] * tv[j] / sig2)
                    / sig2;
            }
        }
        Some(out)
    }

    fn maximizer_spec(&self) -> Option<MaximizerSpec> {
        Some(MaximizerSpec::ConstantSubmanifold {
            rep: vec![0.0; self.dim()],
            dim: self.q + self.nu - 2,
            // (1/2) Vol(S^{q-1} x S^{nu-1}).
            volume: 0.5 * omega(self.q) * omega(self.nu),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;
    use approx::assert_abs_diff_eq;

    fn chart_points(model: &Wishart2Model) -> Vec<Vec<f64>> {
        // Deterministic scatter with tau well inside the ball.
        let k = model.nu - 1;
        (0..12)
            .map(|i| {
                let mut t = vec![0.37 + 0.51 * i as f64];
                for a in 0..k {
                    t.push(0.23 * ((i + a) as f64 * 0.71).sin() / (k as f64).sqrt());
                }
                t
            })
            .collect()
    }

    #[test]
    fn embedding_is_unit_norm_and_antipodally_symmetric() {
        let model = Wishart2Model::new(1.0, 0.25, 4).unwrap();
        for t in chart_points(&model) {
            assert_abs_diff_eq!(model.phi(&t).norm(), 1.0, epsilon = 1e-13);
        }
        // Advancing t1 by pi flips v and hence the ambient point, so the
        // manifold contains antipodal pairs; the identified pre-images
        // (v, w) ~ (-v, -w) behind the multiplicity-2 layout live in
        // opposite w-hemispheres and only one of them is charted.
        let t = vec![0.7, 0.2, -0.1, 0.15];
        let mut t2 = t.clone();
        t2[0] += std::f64::consts::PI;
        assert!((model.phi(&t) + model.phi(&t2)).norm() < 1e-12);
    }

    #[test]
    fn analytic_geometry_matches_finite_differences() {
        let model = Wishart2Model::new(1.0, 0.75, 3).unwrap();
        struct Plain<'a>(&'a Wishart2Model);
        impl ManifoldModel for Plain<'_> {
            fn name(&self) -> &str {
                "wishart2-numeric"
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn ambient_dim(&self) -> usize {
                self.0.ambient_dim()
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
        let plain = Plain(&model);
        for t in chart_points(&model) {
            let (ga, _) = geometry::metric_at(&model, &t).unwrap();
            let (gn, _) = geometry::metric_at(&plain, &t).unwrap();
            let ca = geometry::c_matrix_at(&model, &t).unwrap();
            let cn = geometry::c_matrix_at(&plain, &t).unwrap();
            for i in 0..model.dim() {
                for j in 0..model.dim() {
                    assert_abs_diff_eq!(ga[(i, j)], gn[(i, j)], epsilon = 1e-6);
                    assert_abs_diff_eq!(ca[(i, j)], cn[(i, j)], epsilon = 1e-6);
                }
            }
            let ra = geometry::curvature_at(&model, &t).unwrap();
            let rn = geometry::curvature_at(&plain, &t).unwrap();
            for i in 0..model.dim() {
                for j in 0..model.dim() {
                    for k in 0..model.dim() {
                        for l in 0..model.dim() {
                            assert_abs_diff_eq!(
                                ra.get(i, j, k, l),
                                rn.get(i, j, k, l),
                                epsilon = 1e-6
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn metric_is_block_diagonal_with_known_corner() {
        let model = Wishart2Model::new(1.0, 0.25, 4).unwrap();
        let r = model.reference();
        for t in chart_points(&model) {
            let (g, _) = geometry::metric_at(&model, &t).unwrap();
            assert_abs_diff_eq!(g[(0, 0)], r.g11(t[0]), epsilon = 1e-14);
            for a in 1..model.dim() {
                assert_eq!(g[(0, a)], 0.0);
            }
        }
    }

    #[test]
    fn scale_correction_completes_metric_to_identity_at_the_pole() {
        // G + C = I_nu on the tau = 0 section, for every t1.
        let model = Wishart2Model::new(1.0, 0.5, 4).unwrap();
        for i in 0..10 {
            let mut t = vec![0.0; model.dim()];
            t[0] = 0.1 + 0.6 * i as f64;
            let geom = geometry::point_geometry(&model, &t).unwrap();
            let gtilde = &geom.base.g + &geom.c;
            for a in 0..model.dim() {
                for b in 0..model.dim() {
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(gtilde[(a, b)], expect, epsilon = 1e-12);
                }
            }
            // det(I + C G^{-1}) = det(G+C)/det(G) = 1/g_00.
            assert_abs_diff_eq!(
                geom.base.g[(0, 0)] * model.reference().det_correction(t[0]),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn curvature_at_the_pole_has_sphere_block_structure() {
        // In the w-block the chart is a round unit sphere at tau = 0:
        // R_{ab;cd} = delta_ac delta_bd - delta_ad delta_bc; any component
        // touching the t1 direction vanishes.
        let model = Wishart2Model::new(1.0, 0.5, 4).unwrap();
        let mut t = vec![0.0; model.dim()];
        t[0] = 1.3;
        let r = geometry::curvature_at(&model, &t).unwrap();
        let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..model.dim() {
            for j in 0..model.dim() {
                for k in 0..model.dim() {
                    for l in 0..model.dim() {
                        let expect = if i >= 1 && j >= 1 && k >= 1 && l >= 1 {
                            kd(i, k) * kd(j, l) - kd(i, l) * kd(j, k)
                        } else {
                            0.0
                        };
                        assert_abs_diff_eq!(r.get(i, j, k, l), expect, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn zeta_two_matches_closed_form_off_the_pole() {
        // The invariant is a full contraction, so it must reproduce the
        // closed form at arbitrary chart points, not just at tau = 0.
        let model = Wishart2Model::new(1.0, 0.25, 4).unwrap();
        let r = model.reference();
        for t in chart_points(&model) {
            let geom = geometry::point_geometry(&model, &t).unwrap();
            assert_abs_diff_eq!(geom.zeta[2], r.zeta2(t[0]), epsilon = 1e-10);
            assert_eq!(geom.zeta[1], 0.0);
            assert_eq!(geom.zeta[3], 0.0);
        }
    }

    #[test]
    fn reduced_pair_space_matches_hand_coded_h() {
        let model = Wishart2Model::new(1.0, 0.25, 4).unwrap();
        let r = model.reference();
        let ps = model.pair_space().unwrap();
        for (t, s, y) in [
            (0.3, 1.1, 0.4),
            (1.2, 2.9, -0.6),
            (2.2, 0.4, 0.9),
            (4.0, 5.5, 0.0),
            (5.8, 3.3, 0.99),
        ] {
            let z = vec![t, s, y];
            let tu = ps.u_chart(&z);
            let base = geometry::base_point(&model, &tu).unwrap();
            let (w, sw) = ps.probe(&z);
            assert_abs_diff_eq!(w.norm(), 1.0, epsilon = 1e-13);
            let margin = base.sigma / sw - w.dot(&(&base.u - &base.grad_ell_ambient));
            let resid2 = geometry::normal_residual2(&base, &w);
            let h = base.grad_ell_norm2 + margin.max(0.0).powi(2) / resid2;
            assert_abs_diff_eq!(h, r.h(t, s, y), epsilon = 1e-9);
        }
    }

    #[test]
    fn slice_walks_into_the_diagonal_corner() {
        let model = Wishart2Model::new(1.0, 0.5, 3).unwrap();
        let ps = model.pair_space().unwrap();
        let z = ps.slice_point(&[1.0], &[std::f64::consts::FRAC_PI_4], 0, 1e-3);
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z[1], 1.0 + 1e-3 * 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(z[2] < 1.0 && z[2] > 1.0 - 1e-6);
    }

    #[test]
    fn closed_form_references() {
        let r = Wishart2Reference { l1: 1.0, l2: 0.75, nu: 4 };
        assert_abs_diff_eq!(r.bcri(), (3.0f64 / 7.0).sqrt(), epsilon = 1e-15);
        let r = Wishart2Reference { l1: 1.0, l2: 1.0, nu: 4 };
        assert_abs_diff_eq!(r.bcri(), 0.5f64.sqrt(), epsilon = 1e-15);
        let r = Wishart2Reference { l1: 1.0, l2: 0.25, nu: 4 };
        assert_abs_diff_eq!(r.bcri(), 0.2f64.sqrt(), epsilon = 1e-15);
        // q(theta) interpolates the inverse eigenvalues.
        assert_abs_diff_eq!(r.q_factor(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.q_factor(std::f64::consts::FRAC_PI_2), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pq_model_reproduces_block_structure_at_the_maximizer() {
        let model = WishartPQModel::new(2, 4, vec![1.0, 0.25]).unwrap();
        assert_eq!(model.q(), 1);
        assert_eq!(model.dim(), 4);
        let rep = vec![0.0; model.dim()];
        let (g, _) = geometry::metric_at(&model, &rep).unwrap();
        let c = geometry::c_matrix_at(&model, &rep).unwrap();
        // G = diag(l2/l1, 1, 1, 1), C = diag(1 - l2/l1, 0, 0, 0).
        let expect_g = [0.25, 1.0, 1.0, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let eg = if i == j { expect_g[i] } else { 0.0 };
                let ec = if i == j && i == 0 { 0.75 } else { 0.0 };
                assert_abs_diff_eq!(g[(i, j)], eg, epsilon = 1e-8);
                assert_abs_diff_eq!(c[(i, j)], ec, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn pq_leading_coefficient_known_case() {
        // (p, q, nu) = (2, 1, 4), l = (1, 1/4):
        // (1 - 1/4)^{-1/2} * Omega_1 Omega_4 / (Omega_4 Omega_1) = 2/sqrt(3).
        let model = WishartPQModel::new(2, 4, vec![1.0, 0.25]).unwrap();
        assert_abs_diff_eq!(
            model.leading_tail_coefficient(),
            2.0 / 3.0f64.sqrt(),
            epsilon = 1e-14
        );
        // Equal eigenvalues: empty product, q = p.
        let iso = WishartPQModel::new(2, 4, vec![1.0, 1.0]).unwrap();
        assert_eq!(iso.q(), 2);
        assert_abs_diff_eq!(
            iso.leading_tail_coefficient(),
            omega(2) * omega(4) / (omega(5) * 2.0),
            epsilon = 1e-14
        );
    }

    #[test]
    fn pq_validation_rejects_bad_parameters() {
        assert!(WishartPQModel::new(1, 4, vec![1.0]).is_err());
        assert!(WishartPQModel::new(2, 1, vec![1.0, 0.5]).is_err());
        assert!(WishartPQModel::new(2, 4, vec![0.5, 1.0]).is_err());
        assert!(WishartPQModel::new(2, 4, vec![1.0]).is_err());
        assert!(WishartPQModel::new(2, 4, vec![1.0, -0.5]).is_err());
        assert!(Wishart2Model::new(0.5, 1.0, 4).is_err());
        assert!(Wishart2Model::new(1.0, 0.5, 1).is_err());
    }

    #[test]
    fn pq_and_p2_models_agree_on_the_same_parameters() {
        let pq = WishartPQModel::new(2, 3, vec![1.0, 0.5]).unwrap();
        let w2 = Wishart2Model::new(1.0, 0.5, 3).unwrap();
        // Same manifold in different charts: compare sigma at matched
        // points. pq chart: v = (sqrt(1-t^2), t); w2 chart: v = (cos, sin).
        for t1 in [0.1f64, 0.4, 0.7] {
            let (s1, _) = t1.sin_cos();
            let pq_t = vec![s1, 0.1, -0.2];
            let w2_t = vec![t1, 0.1, -0.2];
            assert_abs_diff_eq!(pq.sigma(&pq_t), w2.sigma(&w2_t), epsilon = 1e-13);
            assert_abs_diff_eq!(
                (pq.phi(&pq_t) - w2.phi(&w2_t)).norm(),
                0.0,
                epsilon = 1e-13
            );
        }
    }
}
