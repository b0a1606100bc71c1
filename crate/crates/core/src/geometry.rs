//! Differential geometry of the index manifold at a chart point.
//!
//! A [`ManifoldModel`] supplies the unit-norm embedding `phi` of a chart box
//! into the ambient sphere together with the scale function `sigma`. From
//! those, this module computes, analytically when the model supplies
//! derivatives and by finite differences otherwise: the metric `G`, the
//! connection coefficients `Γ_{ij,k}`, the curvature tensor `R_{ij;kl}`, the
//! log-scale correction matrix `C`, and the curvature invariants `ζ_e` that
//! weight the terms of the tail expansion.
//!
//! # Finite differences
//!
//! Every numerical derivative is a single symmetric stencil applied to exact
//! model evaluations — derivatives of the metric are assembled from partial
//! derivatives of `phi` rather than by differencing an already-differenced
//! metric, which would amplify the inner stencil's rounding noise by the
//! outer step. Fourth-order stencils with steps well above the noise floor
//! keep every produced quantity accurate to roughly `1e-9` or better.
//! Components are computed once per symmetry class of index tuples and
//! mirrored, so the symmetries of `g`, `Γ`, and `R` (including the curvature
//! antisymmetries and the pair interchange) hold at machine precision by
//! construction, not approximately.

use nalgebra::{DMatrix, DVector};

use crate::specfun::wick_det_expectation;
use crate::{Error, Result};

/// One chart coordinate: its interval and whether the ends are identified.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartAxis {
    pub lo: f64,
    pub hi: f64,
    pub periodic: bool,
}

impl ChartAxis {
    pub fn new(lo: f64, hi: f64, periodic: bool) -> Self {
        ChartAxis { lo, hi, periodic }
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    /// Map `x` into the axis interval (periodic axes wrap; bounded axes clamp).
    pub fn wrap(&self, x: f64) -> f64 {
        if self.periodic {
            let s = self.span();
            let mut y = (x - self.lo) % s;
            if y < 0.0 {
                y += s;
            }
            y + self.lo
        } else {
            x.clamp(self.lo, self.hi)
        }
    }

    /// Signed coordinate difference `a - b`, reduced to the shortest
    /// representative for periodic axes.
    pub fn diff(&self, a: f64, b: f64) -> f64 {
        if self.periodic {
            let s = self.span();
            let mut d = (a - b) % s;
            if d > 0.5 * s {
                d -= s;
            } else if d < -0.5 * s {
                d += s;
            }
            d
        } else {
            a - b
        }
    }
}

/// Dense rank-3 array with all dimensions equal; `get(i, j, k)` indexes
/// `∂_k g_{ij}`-shaped data (or `Γ_{ij,k}`).
#[derive(Clone, Debug)]
pub struct Tensor3 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize) -> Self {
        Tensor3 { d, data: vec![0.0; d * d * d] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.d + j) * self.d + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.d + j) * self.d + k] = v;
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn from_raw(d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), d * d * d);
        Tensor3 { d, data }
    }
}

/// Dense rank-4 array with all dimensions equal; `get(i, j, k, l)` indexes
/// `R_{ij;kl}`-shaped data (or `∂_k ∂_l g_{ij}`).
#[derive(Clone, Debug)]
pub struct Tensor4 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Self {
        Tensor4 { d, data: vec![0.0; d * d * d * d] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.d + j) * self.d + k) * self.d + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[((i * self.d + j) * self.d + k) * self.d + l] = v;
    }
}

/// How to integrate over the chart: which axes carry quadrature nodes, where
/// the remaining axes are pinned, a symbolic measure factor for directions
/// integrated in closed form, and how many times the chart covers the
/// manifold.
#[derive(Clone, Debug)]
pub struct QuadratureLayout {
    /// Chart axes that receive quadrature nodes.
    pub active: Vec<usize>,
    /// Remaining axes, pinned at fixed values during integration.
    pub pinned: Vec<(usize, f64)>,
    /// Exact measure of the directions integrated symbolically (for product
    /// models whose integrand does not depend on them); `1.0` when unused.
    /// The pinned point must make the pinned-direction volume factor `1`.
    pub symbolic_factor: f64,
    /// Number of chart preimages of a generic manifold point.
    pub cover_multiplicity: f64,
}

impl QuadratureLayout {
    /// Every axis integrated numerically; single cover.
    pub fn dense(dim: usize) -> Self {
        QuadratureLayout {
            active: (0..dim).collect(),
            pinned: Vec::new(),
            symbolic_factor: 1.0,
            cover_multiplicity: 1.0,
        }
    }
}

/// Where the scale function attains its maximum, declared by the model.
#[derive(Clone, Debug)]
pub enum MaximizerSpec {
    /// A single nondegenerate maximum at the given chart point.
    Point { t: Vec<f64> },
    /// A closed submanifold of constant maximal scale: a representative
    /// chart point, the submanifold dimension, and its exact volume.
    ConstantSubmanifold { rep: Vec<f64>, dim: usize, volume: f64 },
}

/// A parametrized family `u(t) = phi(t)` on the unit sphere with a positive
/// scale `sigma(t)`, defining the random field `X(t) = sigma(t) <phi(t), xi>`.
///
/// `phi` and `sigma` must be smooth on a neighborhood of the chart box (the
/// finite-difference fallback evaluates slightly outside it). The optional
/// `*_d1`/`*_d2` suppliers switch the corresponding derivative to an
/// analytic path; any combination may be provided.
pub trait ManifoldModel: Sync {
    fn name(&self) -> &str;
    /// Chart dimension `d` (must satisfy `d < ambient_dim - 1`).
    fn dim(&self) -> usize;
    /// Ambient dimension `n`.
    fn ambient_dim(&self) -> usize;
    fn axes(&self) -> Vec<ChartAxis>;
    /// Unit-norm embedding point.
    fn phi(&self, t: &[f64]) -> DVector<f64>;
    /// Positive scale at `t`.
    fn sigma(&self, t: &[f64]) -> f64;

    /// Tangent vectors `∂_i phi`, if available analytically.
    fn phi_d1(&self, _t: &[f64]) -> Option<Vec<DVector<f64>>> {
        None
    }
    /// Metric `g_{ij}`, if available analytically.
    fn metric(&self, _t: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    /// `∂_k g_{ij}` as `get(i, j, k)`, if available analytically.
    fn metric_d1(&self, _t: &[f64]) -> Option<Tensor3> {
        None
    }
    /// `∂_k ∂_l g_{ij}` as `get(i, j, k, l)`, if available analytically.
    fn metric_d2(&self, _t: &[f64]) -> Option<Tensor4> {
        None
    }
    /// `∂_i log sigma`, if available analytically.
    fn ell_d1(&self, _t: &[f64]) -> Option<Vec<f64>> {
        None
    }
    /// `∂_i ∂_j log sigma`, if available analytically.
    fn ell_d2(&self, _t: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn quadrature_layout(&self) -> QuadratureLayout {
        QuadratureLayout::dense(self.dim())
    }
    /// Maximizer declaration for the asymptotic (Laplace) path; `None` when
    /// the model does not declare one.
    fn maximizer_spec(&self) -> Option<MaximizerSpec> {
        None
    }
    /// Reduced search space for the overlap threshold; `None` means the
    /// generic chart-product space is used.
    fn pair_space(&self) -> Option<Box<dyn PairSpace + '_>> {
        None
    }
}

/// Search space of ordered point pairs `(u, w)` for the overlap-threshold
/// computation. Models with symmetry may expose a reduced parametrization;
/// the generic implementation is [`ProductPairSpace`].
pub trait PairSpace: Sync {
    /// Joint coordinates: the leading [`PairSpace::u_coords`] determine `u`.
    fn axes(&self) -> Vec<ChartAxis>;
    fn u_coords(&self) -> usize;
    /// Chart coordinates of `u` in the model chart.
    fn u_chart(&self, z: &[f64]) -> Vec<f64>;
    /// Ambient probe point `w` and its scale `sigma(w)`.
    fn probe(&self, z: &[f64]) -> (DVector<f64>, f64);
    /// Parameter box for the angles describing a direction of approach to
    /// the diagonal `w -> u` (empty when directions are discrete).
    fn slice_angle_axes(&self) -> Vec<ChartAxis>;
    /// Number of discrete approach branches (e.g. the two signs when the
    /// direction space is zero-dimensional).
    fn slice_branches(&self) -> usize {
        1
    }
    /// Joint coordinates of a pair at diagonal separation `delta` from the
    /// `u` determined by `zu`, approached along `angles`/`branch`.
    fn slice_point(&self, zu: &[f64], angles: &[f64], branch: usize, delta: f64) -> Vec<f64>;
}

/// Generic pair space: the chart box squared, diagonal approached along
/// straight chart directions.
pub struct ProductPairSpace<'a> {
    pub model: &'a dyn ManifoldModel,
}

impl PairSpace for ProductPairSpace<'_> {
    fn axes(&self) -> Vec<ChartAxis> {
        let mut a = self.model.axes();
        a.extend(self.model.axes());
        a
    }

    fn u_coords(&self) -> usize {
        self.model.dim()
    }

    fn u_chart(&self, z: &[f64]) -> Vec<f64> {
        z[..self.model.dim()].to_vec()
    }

    fn probe(&self, z: &[f64]) -> (DVector<f64>, f64) {
        let tw = &z[self.model.dim()..];
        (self.model.phi(tw), self.model.sigma(tw))
    }

    fn slice_angle_axes(&self) -> Vec<ChartAxis> {
        // Spherical coordinates on the unit direction sphere: polar angles
        // in [0, pi], final azimuth in [0, 2 pi).
        let d = self.model.dim();
        let mut axes = Vec::new();
        if d >= 2 {
            for _ in 0..(d - 2) {
                axes.push(ChartAxis::new(0.0, std::f64::consts::PI, false));
            }
            axes.push(ChartAxis::new(0.0, 2.0 * std::f64::consts::PI, true));
        }
        axes
    }

    fn slice_branches(&self) -> usize {
        if self.model.dim() == 1 {
            2
        } else {
            1
        }
    }

    fn slice_point(&self, zu: &[f64], angles: &[f64], branch: usize, delta: f64) -> Vec<f64> {
        let d = self.model.dim();
        // Unit direction in chart coordinates: sign for d = 1, spherical
        // angles otherwise.
        let mut v = vec![0.0; d];
        if d == 1 {
            v[0] = if branch == 0 { 1.0 } else { -1.0 };
        } else {
            let mut r = 1.0;
            for (i, &a) in angles.iter().enumerate() {
                v[i] = r * a.cos();
                r *= a.sin();
            }
            v[d - 1] = r;
        }
        let axes = self.model.axes();
        let mut z = zu.to_vec();
        z.extend(zu.iter().zip(&v).enumerate().map(|(i, (t, vi))| axes[i].wrap(t + delta * vi)));
        z
    }
}

/// First-order geometry at a chart point: everything needed for overlap and
/// truncation diagnostics, without second derivatives.
#[derive(Clone, Debug)]
pub struct BasePoint {
    pub t: Vec<f64>,
    /// Ambient point `phi(t)`.
    pub u: DVector<f64>,
    pub sigma: f64,
    /// Tangent vectors `∂_i phi`.
    pub tangent: Vec<DVector<f64>>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub sqrt_det_g: f64,
    /// Covariant components `∂_i log sigma`.
    pub ell_d1: Vec<f64>,
    /// Contravariant components `Σ_j (∂_j log sigma) g^{ji}`.
    pub grad_ell: Vec<f64>,
    /// The tangent-space gradient of `log sigma` as an ambient vector.
    pub grad_ell_ambient: DVector<f64>,
    pub grad_ell_norm2: f64,
}

/// Full second-order geometry at a chart point.
#[derive(Clone, Debug)]
pub struct PointGeometry {
    pub base: BasePoint,
    /// Connection coefficients `Γ_{ij,k}` as `get(i, j, k)`.
    pub gamma: Tensor3,
    /// Curvature tensor `R_{ij;kl}`.
    pub r: Tensor4,
    /// Scale-correction matrix `c_{ij}`.
    pub c: DMatrix<f64>,
    /// Inverse of `G + C`.
    pub gtilde_inv: DMatrix<f64>,
    /// Modified curvature contracted with `(G + C)^{-1}`.
    pub r_tilde: Tensor4,
    /// `ζ_0, …, ζ_d`.
    pub zeta: Vec<f64>,
}

// Absolute step sizes. Chart coordinates are angles or unit-scale lengths
// (every axis in the model catalog spans a few units around zero), and the
// embeddings are unit-norm, so both the function values and their derivative
// scales are O(1); scaling steps by coordinate magnitude would only inflate
// truncation error. First derivatives keep the classical cbrt(eps) step:
// with the fourth-order stencil the truncation term is negligible and the
// error is the rounding floor eps/h ≈ 5e-11. Second and third derivatives
// balance h^4 truncation against eps/h^2 (resp. eps/h^3) rounding; both
// choices give roughly 1e-10 .. 1e-9 accuracy on trigonometric-scale data.
const STEP_D1: f64 = 6.055454452393343e-6; // cbrt(f64 machine epsilon)
const STEP_D2: f64 = 6.103515625e-3; // 50 * eps^(1/4), and eps^(1/4) = 2^-13
const STEP_D3: f64 = 1.0e-2;
/// Condition-number bound past which the chart is reported degenerate.
const COND_LIMIT: f64 = 1e12;

/// Fourth-order first derivative along axis `i` of a flat-vector function.
fn stencil_d1(f: &dyn Fn(&[f64]) -> Vec<f64>, t: &[f64], i: usize, h: f64) -> Vec<f64> {
    let at = |m: f64| {
        let mut s = t.to_vec();
        s[i] += m * h;
        f(&s)
    };
    let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
    (0..p1.len())
        .map(|c| (-p2[c] + 8.0 * p1[c] - 8.0 * m1[c] + m2[c]) / (12.0 * h))
        .collect()
}

/// Fourth-order second derivative along the chart direction `w` (not
/// necessarily a coordinate axis): returns `(w·∂)^2 f`.
fn stencil_d2_dir(f: &dyn Fn(&[f64]) -> Vec<f64>, t: &[f64], w: &[f64], h: f64) -> Vec<f64> {
    let at = |m: f64| {
        let s: Vec<f64> = t.iter().zip(w).map(|(a, b)| a + m * h * b).collect();
        f(&s)
    };
    let (p2, p1, c0, m1, m2) = (at(2.0), at(1.0), at(0.0), at(-1.0), at(-2.0));
    (0..c0.len())
        .map(|c| {
            (-p2[c] + 16.0 * p1[c] - 30.0 * c0[c] + 16.0 * m1[c] - m2[c]) / (12.0 * h * h)
        })
        .collect()
}

/// Fourth-order third derivative along the chart direction `w`:
/// returns `(w·∂)^3 f`.
fn stencil_d3_dir(f: &dyn Fn(&[f64]) -> Vec<f64>, t: &[f64], w: &[f64], h: f64) -> Vec<f64> {
    let at = |m: f64| {
        let s: Vec<f64> = t.iter().zip(w).map(|(a, b)| a + m * h * b).collect();
        f(&s)
    };
    let (p3, p2, p1, m1, m2, m3) = (at(3.0), at(2.0), at(1.0), at(-1.0), at(-2.0), at(-3.0));
    (0..p1.len())
        .map(|c| {
            (-p3[c] + 8.0 * p2[c] - 13.0 * p1[c] + 13.0 * m1[c] - 8.0 * m2[c] + m3[c])
                / (8.0 * h * h * h)
        })
        .collect()
}

/// Index of the unordered pair `{i, k}` (`i <= k`) in a packed store.
fn sym2(i: usize, k: usize) -> usize {
    debug_assert!(i <= k);
    k * (k + 1) / 2 + i
}

/// Index of the unordered triple `{i, k, l}` (`i <= k <= l`) in a packed store.
fn sym3(i: usize, k: usize, l: usize) -> usize {
    debug_assert!(i <= k && k <= l);
    l * (l + 1) * (l + 2) / 6 + k * (k + 1) / 2 + i
}

/// Packed symmetric second partials `f_{ik}` for `i <= k`.
fn second_partials(f: &dyn Fn(&[f64]) -> Vec<f64>, t: &[f64], d: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for k in 0..d {
        for i in 0..=k {
            let h = STEP_D2;
            let v = if i == k {
                let mut w = vec![0.0; t.len()];
                w[i] = 1.0;
                stencil_d2_dir(f, t, &w, h)
            } else {
                // Mixed derivative by polarization of directional second
                // derivatives along e_i + e_k and e_i - e_k.
                let mut wp = vec![0.0; t.len()];
                wp[i] = 1.0;
                wp[k] = 1.0;
                let mut wm = vec![0.0; t.len()];
                wm[i] = 1.0;
                wm[k] = -1.0;
                let plus = stencil_d2_dir(f, t, &wp, h);
                let minus = stencil_d2_dir(f, t, &wm, h);
                plus.iter().zip(&minus).map(|(a, b)| (a - b) / 4.0).collect()
            };
            debug_assert_eq!(out.len(), sym2(i, k));
            out.push(v);
        }
    }
    out
}

/// Packed symmetric third partials `f_{ikl}` for `i <= k <= l`, by
/// polarization of directional third derivatives.
fn third_partials(f: &dyn Fn(&[f64]) -> Vec<f64>, t: &[f64], d: usize) -> Vec<Vec<f64>> {
    let dir = |axes: &[usize], signs: &[f64]| {
        let mut w = vec![0.0; t.len()];
        for (&a, &s) in axes.iter().zip(signs) {
            w[a] = s;
        }
        w
    };
    let combine = |parts: Vec<(f64, Vec<f64>)>| -> Vec<f64> {
        let n = parts[0].1.len();
        (0..n).map(|c| parts.iter().map(|(coef, v)| coef * v[c]).sum()).collect()
    };
    let mut out = Vec::with_capacity(d * (d + 1) * (d + 2) / 6);
    for l in 0..d {
        for k in 0..=l {
            for i in 0..=k {
                let h = STEP_D3;
                let c3 = |w: &[f64]| stencil_d3_dir(f, t, w, h);
                let v = if i == k && k == l {
                    c3(&dir(&[i], &[1.0]))
                } else if i == k {
                    // f_{iil} = [C(e_i + e_l) - C(e_i - e_l) - 2 C(e_l)] / 6.
                    combine(vec![
                        (1.0 / 6.0, c3(&dir(&[i, l], &[1.0, 1.0]))),
                        (-1.0 / 6.0, c3(&dir(&[i, l], &[1.0, -1.0]))),
                        (-2.0 / 6.0, c3(&dir(&[l], &[1.0]))),
                    ])
                } else if k == l {
                    // f_{ikk} by the same identity with roles swapped.
                    combine(vec![
                        (1.0 / 6.0, c3(&dir(&[k, i], &[1.0, 1.0]))),
                        (-1.0 / 6.0, c3(&dir(&[k, i], &[1.0, -1.0]))),
                        (-2.0 / 6.0, c3(&dir(&[i], &[1.0]))),
                    ])
                } else {
                    // All distinct: the cubic polarization identity
                    // 6 f_{ikl} = C(a+b+c) - C(a+b) - C(a+c) - C(b+c)
                    //           + C(a) + C(b) + C(c).
                    combine(vec![
                        (1.0 / 6.0, c3(&dir(&[i, k, l], &[1.0, 1.0, 1.0]))),
                        (-1.0 / 6.0, c3(&dir(&[i, k], &[1.0, 1.0]))),
                        (-1.0 / 6.0, c3(&dir(&[i, l], &[1.0, 1.0]))),
                        (-1.0 / 6.0, c3(&dir(&[k, l], &[1.0, 1.0]))),
                        (1.0 / 6.0, c3(&dir(&[i], &[1.0]))),
                        (1.0 / 6.0, c3(&dir(&[k], &[1.0]))),
                        (1.0 / 6.0, c3(&dir(&[l], &[1.0]))),
                    ])
                };
                debug_assert_eq!(out.len(), sym3(i, k, l));
                out.push(v);
            }
        }
    }
    out
}

fn phi_flat(model: &dyn ManifoldModel) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    move |t: &[f64]| model.phi(t).as_slice().to_vec()
}

fn ell_flat(model: &dyn ManifoldModel) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    move |t: &[f64]| vec![model.sigma(t).ln()]
}

/// Tangent vectors `∂_i phi`: analytic if supplied, else a fourth-order
/// stencil on `phi`.
fn tangent_vectors(model: &dyn ManifoldModel, t: &[f64]) -> Vec<DVector<f64>> {
    if let Some(v) = model.phi_d1(t) {
        return v;
    }
    let f = phi_flat(model);
    (0..model.dim())
        .map(|i| DVector::from_vec(stencil_d1(&f, t, i, STEP_D1)))
        .collect()
}

fn metric_matrix(model: &dyn ManifoldModel, t: &[f64]) -> DMatrix<f64> {
    if let Some(g) = model.metric(t) {
        return symmetrized(&g);
    }
    let tang = tangent_vectors(model, t);
    let d = model.dim();
    let mut g = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..=j {
            let v = tang[i].dot(&tang[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `∂_k g_{ij}`, exactly symmetric in `(i, j)`:
/// analytic, else differenced from an analytic metric, else assembled from
/// `phi` partials as `<φ_{ik}, φ_j> + <φ_i, φ_{jk}>`.
fn metric_d1_tensor(model: &dyn ManifoldModel, t: &[f64]) -> Tensor3 {
    let d = model.dim();
    if let Some(g1) = model.metric_d1(t) {
        return mirror3(&g1);
    }
    if model.metric(t).is_some() {
        let f = |s: &[f64]| metric_matrix(model, s).as_slice().to_vec();
        let mut out = Tensor3::zeros(d);
        for k in 0..d {
            let der = stencil_d1(&f, t, k, STEP_D1);
            for j in 0..d {
                for i in 0..=j {
                    let v = 0.5 * (der[j * d + i] + der[i * d + j]);
                    out.set(i, j, k, v);
                    out.set(j, i, k, v);
                }
            }
        }
        return out;
    }
    let tang = tangent_vectors(model, t);
    let f = phi_flat(model);
    let d2 = second_partials(&f, t, d);
    let dot = |a: &[f64], b: &DVector<f64>| -> f64 { a.iter().zip(b.iter()).map(|(x, y)| x * y).sum() };
    let mut out = Tensor3::zeros(d);
    for k in 0..d {
        for j in 0..d {
            for i in 0..=j {
                let v = dot(&d2[sym2(i.min(k), i.max(k))], &tang[j])
                    + dot(&d2[sym2(j.min(k), j.max(k))], &tang[i]);
                out.set(i, j, k, v);
                out.set(j, i, k, v);
            }
        }
    }
    out
}

/// `∂_k ∂_l g_{ij}`, exactly symmetric in `(i, j)` and `(k, l)`:
/// analytic, else differenced from analytic `∂g`, else second stencils on an
/// analytic metric, else assembled from `phi` partials up to third order.
fn metric_d2_tensor(model: &dyn ManifoldModel, t: &[f64]) -> Tensor4 {
    let d = model.dim();
    if let Some(g2) = model.metric_d2(t) {
        return mirror4(&g2);
    }
    if model.metric_d1(t).is_some() {
        let f = |s: &[f64]| {
            model.metric_d1(s).expect("analytic metric derivative vanished").raw().to_vec()
        };
        // der[l].get(i, j, k) estimates ∂_l ∂_k g_{ij}; the two orders of a
        // mixed derivative are independent estimates — average them.
        let der: Vec<Tensor3> = (0..d)
            .map(|l| Tensor3::from_raw(d, stencil_d1(&f, t, l, STEP_D1)))
            .collect();
        let mut out = Tensor4::zeros(d);
        for l in 0..d {
            for k in 0..=l {
                for j in 0..d {
                    for i in 0..=j {
                        let a = 0.5 * (der[l].get(i, j, k) + der[l].get(j, i, k));
                        let b = 0.5 * (der[k].get(i, j, l) + der[k].get(j, i, l));
                        let v = if k == l { a } else { 0.5 * (a + b) };
                        out.set(i, j, k, l, v);
                        out.set(j, i, k, l, v);
                        out.set(i, j, l, k, v);
                        out.set(j, i, l, k, v);
                    }
                }
            }
        }
        return out;
    }
    if model.metric(t).is_some() {
        let f = |s: &[f64]| metric_matrix(model, s).as_slice().to_vec();
        let d2 = second_partials(&f, t, d);
        let mut out = Tensor4::zeros(d);
        for l in 0..d {
            for k in 0..=l {
                let der = &d2[sym2(k, l)];
                for j in 0..d {
                    for i in 0..=j {
                        let v = 0.5 * (der[j * d + i] + der[i * d + j]);
                        out.set(i, j, k, l, v);
                        out.set(j, i, k, l, v);
                        out.set(i, j, l, k, v);
                        out.set(j, i, l, k, v);
                    }
                }
            }
        }
        return out;
    }
    let tang = tangent_vectors(model, t);
    let f = phi_flat(model);
    let p2 = second_partials(&f, t, d);
    let p3 = third_partials(&f, t, d);
    let dotv = |a: &[f64], b: &DVector<f64>| -> f64 { a.iter().zip(b.iter()).map(|(x, y)| x * y).sum() };
    let dot2 = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b.iter()).map(|(x, y)| x * y).sum() };
    let s2 = |a: usize, b: usize| sym2(a.min(b), a.max(b));
    let s3 = |mut v: [usize; 3]| {
        v.sort_unstable();
        sym3(v[0], v[1], v[2])
    };
    let mut out = Tensor4::zeros(d);
    for l in 0..d {
        for k in 0..=l {
            for j in 0..d {
                for i in 0..=j {
                    // ∂_k ∂_l <φ_i, φ_j> expanded by the product rule.
                    let v = dotv(&p3[s3([i, k, l])], &tang[j])
                        + dot2(&p2[s2(i, k)], &p2[s2(j, l)])
                        + dot2(&p2[s2(i, l)], &p2[s2(j, k)])
                        + dotv(&p3[s3([j, k, l])], &tang[i]);
                    out.set(i, j, k, l, v);
                    out.set(j, i, k, l, v);
                    out.set(i, j, l, k, v);
                    out.set(j, i, l, k, v);
                }
            }
        }
    }
    out
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn mirror3(g1: &Tensor3) -> Tensor3 {
    let d = g1.dim();
    let mut out = Tensor3::zeros(d);
    for k in 0..d {
        for j in 0..d {
            for i in 0..=j {
                let v = 0.5 * (g1.get(i, j, k) + g1.get(j, i, k));
                out.set(i, j, k, v);
                out.set(j, i, k, v);
            }
        }
    }
    out
}

fn mirror4(g2: &Tensor4) -> Tensor4 {
    let d = g2.dim();
    let mut out = Tensor4::zeros(d);
    for l in 0..d {
        for k in 0..=l {
            for j in 0..d {
                for i in 0..=j {
                    let v = 0.25
                        * (g2.get(i, j, k, l)
                            + g2.get(j, i, k, l)
                            + g2.get(i, j, l, k)
                            + g2.get(j, i, l, k));
                    out.set(i, j, k, l, v);
                    out.set(j, i, k, l, v);
                    out.set(i, j, l, k, v);
                    out.set(j, i, l, k, v);
                }
            }
        }
    }
    out
}

fn ell_d1_vec(model: &dyn ManifoldModel, t: &[f64]) -> Vec<f64> {
    if let Some(v) = model.ell_d1(t) {
        return v;
    }
    let f = ell_flat(model);
    (0..model.dim())
        .map(|i| stencil_d1(&f, t, i, STEP_D1)[0])
        .collect()
}

fn ell_d2_matrix(model: &dyn ManifoldModel, t: &[f64]) -> DMatrix<f64> {
    if let Some(m) = model.ell_d2(t) {
        return symmetrized(&m);
    }
    let d = model.dim();
    let mut out = DMatrix::zeros(d, d);
    if model.ell_d1(t).is_some() {
        let f = |s: &[f64]| model.ell_d1(s).expect("analytic gradient vanished");
        for j in 0..d {
            let der = stencil_d1(&f, t, j, STEP_D1);
            for i in 0..d {
                out[(i, j)] += 0.5 * der[i];
                out[(j, i)] += 0.5 * der[i];
            }
        }
        return out;
    }
    let f = ell_flat(model);
    let p2 = second_partials(&f, t, d);
    for j in 0..d {
        for i in 0..=j {
            let v = p2[sym2(i, j)][0];
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Metric and volume factor at `t`.
///
/// Fails with a degenerate-chart error when `G` is not positive definite or
/// its condition number exceeds `1e12`.
pub fn metric_at(model: &dyn ManifoldModel, t: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let g = metric_matrix(model, t);
    let eig = g.clone().symmetric_eigen();
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    let mut det = 1.0;
    for &v in eig.eigenvalues.iter() {
        min = min.min(v);
        max = max.max(v.abs());
        det *= v;
    }
    if !(min > 0.0) || max / min > COND_LIMIT {
        return Err(Error::DegenerateChart(format!(
            "metric at {:?} is not usable: eigenvalues in [{min:.3e}, {max:.3e}]",
            t
        )));
    }
    Ok((g, det.sqrt()))
}

/// Connection coefficients `Γ_{ij,k} = (∂_i g_{jk} + ∂_j g_{ik} - ∂_k g_{ij}) / 2`.
pub fn connection_at(model: &dyn ManifoldModel, t: &[f64]) -> Result<Tensor3> {
    let g1 = metric_d1_tensor(model, t);
    let d = model.dim();
    let mut gamma = Tensor3::zeros(d);
    for k in 0..d {
        for j in 0..d {
            for i in 0..=j {
                let v = 0.5 * (g1.get(j, k, i) + g1.get(i, k, j) - g1.get(i, j, k));
                gamma.set(i, j, k, v);
                gamma.set(j, i, k, v);
            }
        }
    }
    check_finite_t3(&gamma, t)?;
    Ok(gamma)
}

/// Curvature tensor, in the sign convention in which a great subsphere of
/// the unit sphere has `R_{ij;kl} = g_ik g_jl - g_il g_jk` (positive
/// sectional curvature), so its modified curvature vanishes:
///
/// `R_{ij;kl} = (∂_i∂_l g_jk + ∂_j∂_k g_il - ∂_i∂_k g_jl - ∂_j∂_l g_ik) / 2`
/// `          + Σ (Γ_{il,a} Γ_{jk,b} - Γ_{ik,a} Γ_{jl,b}) g^{ab}`.
pub fn curvature_at(model: &dyn ManifoldModel, t: &[f64]) -> Result<Tensor4> {
    let (g, _) = metric_at(model, t)?;
    let gamma = connection_at(model, t)?;
    let g2 = metric_d2_tensor(model, t);
    let g_inv = invert_spd(&g, t)?;
    Ok(curvature_from_parts(&gamma, &g2, &g_inv))
}

fn curvature_from_parts(gamma: &Tensor3, g2: &Tensor4, g_inv: &DMatrix<f64>) -> Tensor4 {
    let d = gamma.dim();
    let mut r = Tensor4::zeros(d);
    // Compute one representative per symmetry orbit (i < j, k < l, pair
    // (i, j) lexicographically <= (k, l)) and mirror with signs, so all
    // three curvature symmetries hold exactly in floating point. Entries
    // with a repeated index inside a pair stay exactly zero.
    for i in 0..d {
        for j in (i + 1)..d {
            for k in 0..d {
                for l in (k + 1)..d {
                    if (k, l) < (i, j) {
                        continue;
                    }
                    let dpart = 0.5
                        * (g2.get(j, k, i, l) + g2.get(i, l, j, k)
                            - g2.get(j, l, i, k)
                            - g2.get(i, k, j, l));
                    let mut quad = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            quad += (gamma.get(i, l, a) * gamma.get(j, k, b)
                                - gamma.get(i, k, a) * gamma.get(j, l, b))
                                * g_inv[(a, b)];
                        }
                    }
                    let v = dpart + quad;
                    for &(p, q, s, t, sign) in &[
                        (i, j, k, l, 1.0),
                        (j, i, k, l, -1.0),
                        (i, j, l, k, -1.0),
                        (j, i, l, k, 1.0),
                    ] {
                        r.set(p, q, s, t, sign * v);
                        r.set(s, t, p, q, sign * v);
                    }
                }
            }
        }
    }
    r
}

/// Scale-correction matrix
/// `c_{ij} = -(∂_i ∂_j ℓ - Σ Γ_{ij,k} ∂_l ℓ g^{kl}) + (∂_i ℓ)(∂_j ℓ)`, `ℓ = log sigma`.
pub fn c_matrix_at(model: &dyn ManifoldModel, t: &[f64]) -> Result<DMatrix<f64>> {
    let (g, _) = metric_at(model, t)?;
    let g_inv = invert_spd(&g, t)?;
    let gamma = connection_at(model, t)?;
    let l1 = ell_d1_vec(model, t);
    let l2 = ell_d2_matrix(model, t);
    Ok(c_from_parts(&gamma, &g_inv, &l1, &l2))
}

fn c_from_parts(gamma: &Tensor3, g_inv: &DMatrix<f64>, l1: &[f64], l2: &DMatrix<f64>) -> DMatrix<f64> {
    let d = gamma.dim();
    DMatrix::from_fn(d, d, |i, j| {
        let mut conn = 0.0;
        for k in 0..d {
            for l in 0..d {
                conn += gamma.get(i, j, k) * l1[l] * g_inv[(k, l)];
            }
        }
        -(l2[(i, j)] - conn) + l1[i] * l1[j]
    })
}

/// First-order geometry at `t` (no second derivatives computed).
pub fn base_point(model: &dyn ManifoldModel, t: &[f64]) -> Result<BasePoint> {
    let u = model.phi(t);
    let norm = u.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "phi({t:?}) has norm {norm:.12}, expected a unit vector"
        )));
    }
    let sigma = model.sigma(t);
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma({t:?}) = {sigma} is not positive")));
    }
    let tangent = tangent_vectors(model, t);
    let (g, sqrt_det_g) = metric_at(model, t)?;
    let g_inv = invert_spd(&g, t)?;
    let ell_d1 = ell_d1_vec(model, t);
    let d = model.dim();
    let grad_ell: Vec<f64> = (0..d).map(|i| (0..d).map(|j| ell_d1[j] * g_inv[(j, i)]).sum()).collect();
    let mut grad_ell_ambient = DVector::zeros(model.ambient_dim());
    for (coef, v) in grad_ell.iter().zip(&tangent) {
        grad_ell_ambient += v * *coef;
    }
    let grad_ell_norm2: f64 = ell_d1.iter().zip(&grad_ell).map(|(a, b)| a * b).sum();
    Ok(BasePoint {
        t: t.to_vec(),
        u,
        sigma,
        tangent,
        g,
        g_inv,
        sqrt_det_g,
        ell_d1,
        grad_ell,
        grad_ell_ambient,
        grad_ell_norm2,
    })
}

/// Full geometry at `t`, including curvature invariants `ζ_0, …, ζ_d`.
///
/// Fails with a singular-geometry error when `G + C` is not invertible
/// (the tube expansion is undefined at such a point).
pub fn point_geometry(model: &dyn ManifoldModel, t: &[f64]) -> Result<PointGeometry> {
    let base = base_point(model, t)?;
    let gamma = connection_at(model, t)?;
    let g2 = metric_d2_tensor(model, t);
    let r = curvature_from_parts(&gamma, &g2, &base.g_inv);
    let l2 = ell_d2_matrix(model, t);
    let c = c_from_parts(&gamma, &base.g_inv, &base.ell_d1, &l2);
    let d = model.dim();
    let gtilde = &base.g + &c;
    let gtilde_inv = gtilde.clone().lu().try_inverse().ok_or_else(|| {
        Error::SingularGeometry(format!("G + C is singular at {:?}", base.t))
    })?;
    // Modified curvature: subtract the constant-curvature term of the unit
    // sphere, then raise both trailing indices with (G + C)^{-1}.
    let mut r_tilde = Tensor4::zeros(d);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    let mut v = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            let base_term = base.g[(i, a)] * base.g[(j, b)]
                                - base.g[(i, b)] * base.g[(j, a)];
                            v += (r.get(i, j, a, b) - base_term)
                                * gtilde_inv[(a, k)]
                                * gtilde_inv[(b, l)];
                        }
                    }
                    r_tilde.set(i, j, k, l, v);
                }
            }
        }
    }
    let mut geom = PointGeometry {
        base,
        gamma,
        r,
        c,
        gtilde_inv,
        r_tilde,
        zeta: Vec::new(),
    };
    geom.zeta = (0..=d).map(|e| zeta_at(&geom, e)).collect::<Result<_>>()?;
    Ok(geom)
}

/// Curvature invariant `ζ_e`: the signed pairing sum of the modified
/// curvature over all index subsets of size `e`. `ζ_0 = 1`; odd `e` vanish.
pub fn zeta_at(geom: &PointGeometry, e: usize) -> Result<f64> {
    let d = geom.base.t.len();
    if e > d {
        return Err(Error::Precondition(format!("zeta order {e} exceeds dimension {d}")));
    }
    if e % 2 == 1 {
        return Ok(0.0);
    }
    if e == 0 {
        return Ok(1.0);
    }
    // Sum over subsets I of {0, …, d-1} with |I| = e of the pairing
    // expectation of R-tilde restricted to I.
    let mut total = 0.0;
    let mut subset: Vec<usize> = (0..e).collect();
    loop {
        let s = |p0: usize, p1: usize, q0: usize, q1: usize| -> f64 {
            geom.r_tilde.get(subset[p0], subset[p1], subset[q0], subset[q1])
        };
        total += wick_det_expectation(e, s);
        // Advance to the next e-combination in lexicographic order.
        let mut i = e;
        loop {
            if i == 0 {
                return Ok(total);
            }
            i -= 1;
            if subset[i] != i + d - e {
                break;
            }
        }
        subset[i] += 1;
        for j in (i + 1)..e {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// Squared norm of the projection of `w` onto the normal space at `u`:
/// `1 - <u, w>^2 - Σ <phi_i, w> <phi_j, w> g^{ij}`, clamped to `[0, 1]`.
pub fn normal_residual2(base: &BasePoint, w: &DVector<f64>) -> f64 {
    let uw = base.u.dot(w);
    let d = base.t.len();
    let tw: Vec<f64> = base.tangent.iter().map(|v| v.dot(w)).collect();
    let mut tangent_part = 0.0;
    for i in 0..d {
        for j in 0..d {
            tangent_part += tw[i] * tw[j] * base.g_inv[(i, j)];
        }
    }
    (1.0 - uw * uw - tangent_part).clamp(0.0, 1.0)
}

fn invert_spd(g: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
    let inv = g.clone().lu().try_inverse().ok_or_else(|| {
        Error::DegenerateChart(format!("metric not invertible at {t:?}"))
    })?;
    Ok(symmetrized(&inv))
}

fn check_finite_t3(x: &Tensor3, t: &[f64]) -> Result<()> {
    let d = x.dim();
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                if !x.get(i, j, k).is_finite() {
                    return Err(Error::Accuracy(format!(
                        "non-finite connection coefficient at {t:?}"
                    )));
                }
            }
        }
    }
    Ok(())
}
