//! Tube-formula tail approximations.
//!
//! For the normalized field `Y(u) = sigma(u) <u, xi/|xi|>` the tail
//! `P(max Y > b)` equals a finite sum of geometric integrals against upper
//! beta tails (exact for `b` above the critical threshold); for the Gaussian
//! field `X(u) = sigma(u) <u, xi>` the same integrals against upper
//! chi-square tails give `P(max X > c)` up to a remainder of the order of
//! the chi-square tail at the critical threshold. Both are evaluated here
//! over any [`ManifoldModel`], along with the Laplace approximation that
//! keeps only the neighborhood of the scale maximizer.
//!
//! The `e`-th summand (`e` even, `0 <= e <= d`) is
//!
//! `[1/((2pi)^{e/2} Omega_{d-e+1})] int_M det(I + C G^{-1})`
//! `  * (1 + |grad l|^2)^{-(d-e+1)/2} * tail_e(arg(u)) * zeta_e du`
//!
//! with `arg(u) = (1 + |grad l|^2) x^2 / sigma(u)^2` at threshold `x`, and
//! `tail_e` either `Bbar_{(d-e+1)/2, (n-d+e-1)/2}` (normalized field) or
//! `Gbar_{d-e+1}` (Gaussian field). Odd-`e` curvature invariants vanish
//! identically and are asserted to, not skipped.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{self, ManifoldModel, MaximizerSpec, QuadratureLayout};
use crate::quad::{gauss_legendre_composite, integrate, pairwise_sum, trapezoid_periodic};
use crate::specfun::{
    beta_upper, chisq_upper, elementary_symmetric, ln_gamma, normal_upper, sphere_volume,
};
use crate::{Error, Result};

/// Tail function attached to one expansion term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TailKind {
    /// Upper beta tail `Bbar_{a,b}` — the normalized (sphere) field.
    Beta { a: f64, b: f64 },
    /// Upper chi-square tail `Gbar_df` — the Gaussian field.
    ChiSq { df: usize },
}

/// One summand of the expansion at a fixed threshold.
#[derive(Clone, Debug, Serialize)]
pub struct TubeTerm {
    /// Even order of the curvature invariant.
    pub e: usize,
    /// Threshold-free geometric integral: the term's front factor
    /// `1/((2pi)^{e/2} Omega_{d-e+1})` times the integral of
    /// `det(I + C G^{-1}) (1 + |grad l|^2)^{-(d-e+1)/2} zeta_e`.
    pub coefficient: f64,
    pub tail_kind: TailKind,
    /// The term's contribution at the requested threshold (the same
    /// integral with the tail function inside).
    pub value: f64,
}

/// Result of a single tail evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct TubeTail {
    pub value: f64,
    /// Per-`e` breakdown; their `value`s sum to `value`.
    pub terms: Vec<TubeTerm>,
    /// Absolute change when the quadrature resolution is halved; small
    /// values certify convergence.
    pub refinement_delta: f64,
}

/// Quadrature request: `resolution` nodes per active chart axis (trapezoid
/// on periodic axes, composite 8-point Gauss-Legendre on bounded ones), and
/// the absolute tolerance the halved-resolution check must meet.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureSpec {
    pub resolution: usize,
    pub tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { resolution: 512, tolerance: 1e-6 }
    }
}

/// A tail curve over a threshold grid, ready for CSV/JSON output.
#[derive(Clone, Debug, Serialize)]
pub struct TailApproximation {
    pub thresholds: Vec<f64>,
    pub tube_values: Vec<f64>,
    pub laplace_values: Option<Vec<f64>>,
    /// Per-threshold term breakdown, same order as `thresholds`.
    pub terms: Vec<Vec<TubeTerm>>,
    pub restricted_to_mcri: bool,
    pub quadrature_resolution: usize,
    /// Largest halved-resolution change over the grid.
    pub max_refinement_delta: f64,
}

/// Threshold scale selector for curve evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdScale {
    /// `b` for the normalized field `Y` (beta tails, exact above `b_cri`).
    Sphere,
    /// `c` for the Gaussian field `X` (chi-square tails).
    Gauss,
}

/// Integrand data cached per quadrature node.
struct Node {
    /// Quadrature weight times the chart volume element and the layout's
    /// symbolic/cover factors.
    w: f64,
    /// `det(I + C G^{-1})`.
    det_factor: f64,
    /// `1 + |grad log sigma|^2`.
    lambda: f64,
    sigma: f64,
    /// `zeta_0 .. zeta_d`.
    zeta: Vec<f64>,
}

/// Precomputed geometry over a quadrature grid, reusable across thresholds.
///
/// Holds node sets at the requested resolution and at half resolution; every
/// evaluation reports the difference as its convergence certificate.
pub struct TubeEvaluator {
    d: usize,
    n: usize,
    resolution: usize,
    tolerance: f64,
    fine: Vec<Node>,
    coarse: Vec<Node>,
}

fn axis_rule(
    axis: &geometry::ChartAxis,
    resolution: usize,
) -> Result<Vec<(f64, f64)>> {
    if axis.periodic {
        trapezoid_periodic(axis.lo, axis.hi, resolution)
    } else {
        gauss_legendre_composite(axis.lo, axis.hi, 8, resolution.div_ceil(8))
    }
}

fn build_nodes(
    model: &(dyn ManifoldModel + Sync),
    layout: &QuadratureLayout,
    resolution: usize,
) -> Result<Vec<Node>> {
    let axes = model.axes();
    let rules: Vec<Vec<(f64, f64)>> = layout
        .active
        .iter()
        .map(|&i| axis_rule(&axes[i], resolution))
        .collect::<Result<_>>()?;
    let mut template = vec![0.0; model.dim()];
    for &(i, v) in &layout.pinned {
        template[i] = v;
    }
    // Enumerate the tensor product of the per-axis rules.
    let total: usize = rules.iter().map(Vec::len).product();
    let points: Vec<(Vec<f64>, f64)> = (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut t = template.clone();
            let mut w = layout.symbolic_factor / layout.cover_multiplicity;
            for (axis_pos, rule) in rules.iter().enumerate() {
                let k = rem % rule.len();
                rem /= rule.len();
                let (x, wx) = rule[k];
                t[layout.active[axis_pos]] = x;
                w *= wx;
            }
            (t, w)
        })
        .collect();
    let evaluated: Vec<Result<Node>> = points
        .par_iter()
        .map(|(t, w)| {
            let geom = geometry::point_geometry(model, t)?;
            let det_factor = (&geom.base.g + &geom.c).determinant()
                / geom.base.g.determinant();
            Ok(Node {
                w: w * geom.base.sqrt_det_g,
                det_factor,
                lambda: 1.0 + geom.base.grad_ell_norm2,
                sigma: geom.base.sigma,
                zeta: geom.zeta,
            })
        })
        .collect();
    let mut nodes = Vec::with_capacity(evaluated.len());
    let mut skipped = 0usize;
    for r in evaluated {
        match r {
            Ok(n) => nodes.push(n),
            // Isolated degenerate points are tolerated (their measure is
            // controlled by the node count); a visible fraction is not.
            Err(Error::SingularGeometry(_)) | Err(Error::DegenerateChart(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped * 1000 > total {
        return Err(Error::Accuracy(format!(
            "{skipped} of {total} quadrature nodes have degenerate geometry"
        )));
    }
    Ok(nodes)
}

impl TubeEvaluator {
    pub fn new(model: &(dyn ManifoldModel + Sync), quad: &QuadratureSpec) -> Result<Self> {
        let d = model.dim();
        let n = model.ambient_dim();
        if n < d + 2 {
            return Err(Error::Domain(format!(
                "the expansion needs codimension >= 2 in the ambient sphere \
                 (dim {d}, ambient {n})"
            )));
        }
        if quad.resolution < 8 {
            return Err(Error::InvalidInput(format!(
                "quadrature resolution must be at least 8, got {}",
                quad.resolution
            )));
        }
        let layout = model.quadrature_layout();
        let fine = build_nodes(model, &layout, quad.resolution)?;
        let coarse = build_nodes(model, &layout, quad.resolution / 2)?;
        Ok(TubeEvaluator {
            d,
            n,
            resolution: quad.resolution,
            tolerance: quad.tolerance,
            fine,
            coarse,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Tail kind of the `e`-th term under the given scale.
    fn tail_kind(&self, scale: ThresholdScale, e: usize) -> TailKind {
        match scale {
            ThresholdScale::Sphere => TailKind::Beta {
                a: 0.5 * (self.d - e + 1) as f64,
                b: 0.5 * (self.n - self.d + e - 1) as f64,
            },
            ThresholdScale::Gauss => TailKind::ChiSq { df: self.d - e + 1 },
        }
    }

    fn terms_on(
        &self,
        nodes: &[Node],
        scale: ThresholdScale,
        x: f64,
        mcri_bcri: Option<f64>,
    ) -> Result<Vec<TubeTerm>> {
        let d = self.d;
        let mut terms = Vec::new();
        for e in (0..=d).step_by(2) {
            let front = (2.0 * std::f64::consts::PI).powf(-0.5 * e as f64)
                / sphere_volume(d - e + 1)?;
            let kind = self.tail_kind(scale, e);
            let expo = -0.5 * (d - e + 1) as f64;
            let mut coef_parts = Vec::with_capacity(nodes.len());
            let mut val_parts = Vec::with_capacity(nodes.len());
            for node in nodes {
                if let Some(bcri) = mcri_bcri {
                    // Outside M_cri the point is dropped from the range of
                    // integration.
                    if node.lambda * bcri * bcri / (node.sigma * node.sigma) >= 1.0 {
                        coef_parts.push(0.0);
                        val_parts.push(0.0);
                        continue;
                    }
                }
                let geom = node.w * node.det_factor * node.lambda.powf(expo) * node.zeta[e];
                let arg = node.lambda * x * x / (node.sigma * node.sigma);
                let tail = match kind {
                    TailKind::Beta { a, b } => beta_upper(a, b, arg)?,
                    TailKind::ChiSq { df } => chisq_upper(df, arg)?,
                };
                coef_parts.push(geom);
                val_parts.push(geom * tail);
            }
            terms.push(TubeTerm {
                e,
                coefficient: front * pairwise_sum(&coef_parts),
                tail_kind: kind,
                value: front * pairwise_sum(&val_parts),
            });
        }
        Ok(terms)
    }

    /// Evaluate the full expansion at one threshold, with the convergence
    /// certificate from the half-resolution node set.
    pub fn tail(
        &self,
        scale: ThresholdScale,
        x: f64,
        restrict_mcri: bool,
        bcri: Option<f64>,
    ) -> Result<TubeTail> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("threshold must be nonnegative, got {x}")));
        }
        let mcri = if restrict_mcri {
            let b = bcri.ok_or_else(|| {
                Error::Precondition(
                    "restricting to the critical region requires a critical threshold".into(),
                )
            })?;
            Some(b)
        } else {
            None
        };
        let terms = self.terms_on(&self.fine, scale, x, mcri)?;
        let coarse_terms = self.terms_on(&self.coarse, scale, x, mcri)?;
        let value = pairwise_sum(&terms.iter().map(|t| t.value).collect::<Vec<_>>());
        let coarse_value =
            pairwise_sum(&coarse_terms.iter().map(|t| t.value).collect::<Vec<_>>());
        let refinement_delta = (value - coarse_value).abs();
        if refinement_delta > self.tolerance {
            return Err(Error::Accuracy(format!(
                "halving the quadrature resolution changes the tail by {refinement_delta:.3e} \
                 (tolerance {:.1e}) at threshold {x}; increase the resolution",
                self.tolerance
            )));
        }
        Ok(TubeTail { value, terms, refinement_delta })
    }
}

/// `P(max Y > b)` for the normalized field: beta-tail form, exact for
/// `b >= b_cri` (and then invariant under restricting the integral to the
/// critical region).
pub fn tube_tail_sphere(
    model: &(dyn ManifoldModel + Sync),
    b: f64,
    quad: &QuadratureSpec,
    restrict_mcri: bool,
    bcri: Option<f64>,
) -> Result<TubeTail> {
    TubeEvaluator::new(model, quad)?.tail(ThresholdScale::Sphere, b, restrict_mcri, bcri)
}

/// `P(max X > c)` for the Gaussian field: chi-square-tail form, accurate up
/// to a remainder of the scale `Gbar_n(c^2 / b_cri^2)`.
pub fn tube_tail_gauss(
    model: &(dyn ManifoldModel + Sync),
    c: f64,
    quad: &QuadratureSpec,
    restrict_mcri: bool,
    bcri: Option<f64>,
) -> Result<TubeTail> {
    TubeEvaluator::new(model, quad)?.tail(ThresholdScale::Gauss, c, restrict_mcri, bcri)
}

/// Remainder scale of the Gaussian-field expansion at threshold `c`:
/// `Gbar_n(c^2 / bcri^2)`. A scale for the unspecified `O(..)` constant,
/// not a certified bound.
pub fn gauss_remainder_scale(n: usize, c: f64, bcri: f64) -> Result<f64> {
    if !(bcri > 0.0) {
        return Err(Error::Domain(format!("critical threshold must be positive, got {bcri}")));
    }
    chisq_upper(n, c * c / (bcri * bcri))
}

/// Symmetrized similarity `G^{-1/2} C G^{-1/2}`: symmetric, with the same
/// eigenvalues as `C G^{-1}`.
fn symmetrized_cg(g: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = g.clone().symmetric_eigen();
    let mut inv_sqrt = DMatrix::zeros(g.nrows(), g.nrows());
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if !(ev > 0.0) {
            return Err(Error::DegenerateChart(format!(
                "metric eigenvalue {ev} is not positive"
            )));
        }
        inv_sqrt[(i, i)] = ev.sqrt().recip();
    }
    let root = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    Ok(&root * c * &root)
}

/// Laplace approximation of `P(max X > c)` from the model's declared scale
/// maximizer.
///
/// Point maximizer: `det(I + C0 G0^{-1})^{1/2} det(C0 G0^{-1})^{-1/2}`
/// `* Phibar(c / sigma0)`. Positive-dimensional maximizer `M0` (constant
/// integrand declared by the model):
/// `Vol(M0)/Omega_{d0+1} * det(I + C G^{-1})^{1/2} / tr_{d-d0}(C G^{-1})^{1/2}`
/// `* Gbar_{d0+1}(c^2 / sigma0^2)`, with `tr_k` the k-th elementary
/// symmetric function of eigenvalues.
pub fn laplace_tail(model: &dyn ManifoldModel, c: f64) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("threshold must be nonnegative, got {c}")));
    }
    let spec = model.maximizer_spec().ok_or_else(|| {
        Error::InvalidInput(format!(
            "model `{}` does not declare a scale maximizer; the Laplace \
             approximation needs one",
            model.name()
        ))
    })?;
    match spec {
        MaximizerSpec::Point { t } => {
            let geom = geometry::point_geometry(model, &t)?;
            let cg = symmetrized_cg(&geom.base.g, &geom.c)?;
            let eig = cg.symmetric_eigen();
            let mut det_i_cg = 1.0;
            let mut det_cg = 1.0;
            for &mu in eig.eigenvalues.iter() {
                if !(mu > 1e-10) {
                    return Err(Error::DegenerateMaximum(format!(
                        "scale Hessian eigenvalue {mu:.3e} at the maximizer is not \
                         positive; the point-maximizer approximation does not apply"
                    )));
                }
                det_i_cg *= 1.0 + mu;
                det_cg *= mu;
            }
            Ok((det_i_cg / det_cg).sqrt() * normal_upper(c / geom.base.sigma))
        }
        MaximizerSpec::ConstantSubmanifold { rep, dim: d0, volume } => {
            let d = model.dim();
            if d0 > d {
                return Err(Error::Domain(format!(
                    "maximizer dimension {d0} exceeds the manifold dimension {d}"
                )));
            }
            let geom = geometry::point_geometry(model, &rep)?;
            let cg = symmetrized_cg(&geom.base.g, &geom.c)?;
            let det_i_cg: f64 =
                cg.symmetric_eigen().eigenvalues.iter().map(|&mu| 1.0 + mu).product();
            if !(det_i_cg > 0.0) {
                return Err(Error::DegenerateMaximum(
                    "det(I + C G^{-1}) is not positive at the maximizer".into(),
                ));
            }
            let tr = elementary_symmetric(&cg, d - d0)?;
            if d > d0 && !(tr > 1e-12) {
                return Err(Error::DegenerateMaximum(format!(
                    "transverse scale correction tr_{}(C G^{{-1}}) = {tr:.3e} is not \
                     positive at the maximizer",
                    d - d0
                )));
            }
            let sigma0 = geom.base.sigma;
            Ok(volume / sphere_volume(d0 + 1)?
                * (det_i_cg / tr).sqrt()
                * chisq_upper(d0 + 1, c * c / (sigma0 * sigma0))?)
        }
    }
}

/// Largest-eigenvalue tail of the 2 x 2 model by the hand-coded reduced
/// formula (1-d quadrature over the angle chart), bypassing the generic
/// evaluator. `c` is on the eigenvalue scale.
pub fn wishart_tube_closed_form(lambda1: f64, lambda2: f64, nu: usize, c: f64) -> Result<f64> {
    if !(lambda2 > 0.0 && lambda1 >= lambda2 && lambda1.is_finite()) {
        return Err(Error::Domain(format!(
            "need lambda1 >= lambda2 > 0, got ({lambda1}, {lambda2})"
        )));
    }
    if nu < 2 {
        return Err(Error::Domain(format!("need nu >= 2, got {nu}")));
    }
    if !(c > 0.0) {
        return Err(Error::Domain(format!("eigenvalue threshold must be positive, got {c}")));
    }
    let reference = crate::models::Wishart2Reference { l1: lambda1, l2: lambda2, nu };
    Ok(reference.eigen_tail_by_direct_formula(c, 800))
}

/// Expectation of `f` under the chi-square distribution with `nu` degrees of
/// freedom, by composite Gauss-Legendre quadrature against the density.
///
/// Accurate to ~1e-10 for smooth bounded `f`; used to check the mixture
/// identity connecting the normalized-field and Gaussian-field expansions.
pub fn chisq_mixture_expectation<F: Fn(f64) -> f64>(nu: usize, f: F) -> Result<f64> {
    if nu == 0 {
        return Err(Error::Domain("chi-square mixture requires nu >= 1".into()));
    }
    let a = 0.5 * nu as f64;
    let log_norm = a * std::f64::consts::LN_2 + ln_gamma(a);
    let density =
        |x: f64| ((a - 1.0) * x.ln() - 0.5 * x - log_norm).exp();
    // The density beyond nu + 40 sqrt(2 nu) + 60 is below 1e-14 for the
    // small nu used here.
    let hi = nu as f64 + 40.0 * (2.0 * nu as f64).sqrt() + 60.0;
    integrate(|x| f(x) * density(x), 1e-300, hi, 8, 1500)
}

/// Thresholds whose leading (`e = 0`) Gaussian-field term equals each of the
/// requested tail probabilities, by bisection. The leading term is strictly
/// decreasing in the threshold, so the inverse is well defined; it is the
/// natural plot grid because the full expansion differs from the leading
/// term only by curvature corrections.
pub fn thresholds_for_tail_probs(ev: &TubeEvaluator, probs: &[f64]) -> Result<Vec<f64>> {
    if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Domain("tail probabilities must lie in (0, 1)".into()));
    }
    let leading = |c: f64| -> Result<f64> {
        Ok(ev.terms_on(&ev.fine, ThresholdScale::Gauss, c, None)?[0].value)
    };
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while leading(hi)? > p {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Accuracy(format!(
                    "no threshold below 1e6 reaches tail probability {p}"
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if leading(mid)? > p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 * hi.max(1.0) {
                break;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    Ok(out)
}

/// `count` log-spaced tail probabilities from `hi` down to `lo`.
pub fn probability_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::Domain(format!(
            "need 0 < lo < hi < 1 for a probability grid, got [{lo}, {hi}]"
        )));
    }
    if count < 2 {
        return Err(Error::InvalidInput("probability grid needs at least 2 points".into()));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (lhi + (llo - lhi) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Evaluate a full tail curve over ascending thresholds, optionally with the
/// Laplace column (Gauss scale only — the Laplace form approximates the
/// Gaussian field).
pub fn tail_curve(
    model: &(dyn ManifoldModel + Sync),
    thresholds: &[f64],
    scale: ThresholdScale,
    quad: &QuadratureSpec,
    restrict_mcri: bool,
    bcri: Option<f64>,
    with_laplace: bool,
) -> Result<TailApproximation> {
    if thresholds.is_empty() {
        return Err(Error::InvalidInput("threshold grid is empty".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("thresholds must be strictly ascending".into()));
    }
    let ev = TubeEvaluator::new(model, quad)?;
    let mut tube_values = Vec::with_capacity(thresholds.len());
    let mut terms = Vec::with_capacity(thresholds.len());
    let mut max_delta = 0.0f64;
    for &x in thresholds {
        let t = ev.tail(scale, x, restrict_mcri, bcri)?;
        tube_values.push(t.value);
        max_delta = max_delta.max(t.refinement_delta);
        terms.push(t.terms);
    }
    let laplace_values = if with_laplace && scale == ThresholdScale::Gauss {
        Some(
            thresholds
                .iter()
                .map(|&c| laplace_tail(model, c))
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };
    Ok(TailApproximation {
        thresholds: thresholds.to_vec(),
        tube_values,
        laplace_values,
        terms,
        restricted_to_mcri: restrict_mcri,
        quadrature_resolution: ev.resolution(),
        max_refinement_delta: max_delta,
    })
}
