//! Gaussian-weighted bilinear form and the derived functionals
//! H, D, W, φ, φ^γ, together with the spatial cutoff ζ.
//!
//! The bilinear form `⟨g, h⟩_r = ∫ (gh)(x, −r²) G(x, −r²) dx` with the
//! reversed heat kernel `G(x,t) = (4π|t|)^{-n/2} e^{-|x|²/(4|t|)}` is
//! computed in rescaled variables: under `x = ry` the measure becomes
//! `G(y, −1) dy`, a probability density, so one fixed quadrature rule
//! serves every radius.

use crate::error::Error;
use crate::fixtures::PolyP;
use crate::Result;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Space-time function exposing the derivatives the functionals need.
///
/// `heat` is `Hw = Δw − ∂t w`; `z` defaults to `x·∇w + 2t ∂t w`.
pub trait ParabolicField {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], t: f64) -> Result<f64>;
    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
    fn dt(&self, x: &[f64], t: f64) -> Result<f64>;
    fn heat(&self, x: &[f64], t: f64) -> Result<f64>;

    fn z(&self, x: &[f64], t: f64) -> Result<f64> {
        let g = self.gradient(x, t)?;
        let radial: f64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
        Ok(radial + 2.0 * t * self.dt(x, t)?)
    }
}

type ScalarFn = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// Analytic field assembled from closures; the workhorse for oracles.
pub struct AnalyticField {
    dim: usize,
    value: ScalarFn,
    gradient: VectorFn,
    dt: ScalarFn,
    heat: ScalarFn,
}

impl AnalyticField {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
        dt: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        heat: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Box::new(value),
            gradient: Box::new(gradient),
            dt: Box::new(dt),
            heat: Box::new(heat),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(
            dim,
            move |_, _| c,
            move |_, _| vec![0.0; dim],
            |_, _| 0.0,
            |_, _| 0.0,
        )
    }

    /// The difference `p2 − p` of two profiles with the same trace:
    /// 2-homogeneous, time-independent and caloric.
    pub fn poly_diff(p2: &PolyP, p: &PolyP) -> Self {
        let (a, b) = (p2.clone(), p.clone());
        let (a2, b2) = (p2.clone(), p.clone());
        let dim = p2.dim();
        let hconst = p2.f0() - p.f0();
        Self::new(
            dim,
            move |x, _| a.eval(x) - b.eval(x),
            move |x, _| {
                let (g1, g2) = (a2.grad(x), b2.grad(x));
                g1.iter().zip(&g2).map(|(u, v)| u - v).collect()
            },
            |_, _| 0.0,
            move |_, _| hconst,
        )
    }
}

impl ParabolicField for AnalyticField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok((self.value)(x, t))
    }
    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.gradient)(x, t))
    }
    fn dt(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok((self.dt)(x, t))
    }
    fn heat(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok((self.heat)(x, t))
    }
}

impl ParabolicField for PolyP {
    fn dim(&self) -> usize {
        self.dim()
    }
    fn value(&self, x: &[f64], _t: f64) -> Result<f64> {
        Ok(self.eval(x))
    }
    fn gradient(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(self.grad(x))
    }
    fn dt(&self, _x: &[f64], _t: f64) -> Result<f64> {
        Ok(0.0)
    }
    fn heat(&self, _x: &[f64], _t: f64) -> Result<f64> {
        Ok(self.f0())
    }
}

/// Deterministic pairwise summation over a fixed ordering.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        n if n <= 8 => xs.iter().sum(),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Tensor Gauss-Hermite rule for `∫ g(y) G(y, -1) dy`.
///
/// Per axis the weight is `(4π)^{-1/2} e^{-y²/4}`; substituting `y = 2s`
/// reduces it to the classical `e^{-s²}` Hermite weight, whose nodes and
/// weights come from the Golub-Welsch eigenvalue problem.
#[derive(Debug, Clone)]
pub struct GaussQuad {
    dim: usize,
    q: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussQuad {
    pub fn new(dim: usize, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::Validation("need at least 2 nodes per axis".into()));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::Validation("quadrature dim must be 1 or 2".into()));
        }
        let (axis_nodes, axis_weights) = hermite_rule(q);
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        match dim {
            1 => {
                nodes = axis_nodes.clone();
                weights = axis_weights.clone();
            }
            _ => {
                for i in 0..q {
                    for j in 0..q {
                        nodes.push(axis_nodes[i]);
                        nodes.push(axis_nodes[j]);
                        weights.push(axis_weights[i] * axis_weights[j]);
                    }
                }
            }
        }
        Ok(Self {
            dim,
            q,
            nodes,
            weights,
        })
    }

    /// The default rule used throughout: 40 nodes per axis.
    pub fn default_for(dim: usize) -> Self {
        Self::new(dim, 40).expect("default rule")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }
}

/// Nodes and weights for `π^{-1/2} ∫ f(2s) e^{-s²} ds`, already mapped to
/// the `y = 2s` variable and normalized to unit total mass.
fn hermite_rule(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(q, q);
    for k in 1..q {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..q)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let w = eig.eigenvectors[(0, i)].powi(2);
            (2.0 * node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    )
}

/// `⟨g, h⟩_r = Σ_j w_j g(r y_j, −r²) h(r y_j, −r²)`.
pub fn weighted_inner<G, H>(g: G, h: H, r: f64, quad: &GaussQuad) -> Result<f64>
where
    G: Fn(&[f64], f64) -> Result<f64>,
    H: Fn(&[f64], f64) -> Result<f64>,
{
    if !(r > 0.0) {
        return Err(Error::Validation("radius must be positive".into()));
    }
    let t = -r * r;
    let mut terms = Vec::with_capacity(quad.len());
    let mut x = vec![0.0; quad.dim()];
    for j in 0..quad.len() {
        for (xi, yi) in x.iter_mut().zip(quad.node(j)) {
            *xi = r * yi;
        }
        terms.push(quad.weight(j) * g(&x, t)? * h(&x, t)?);
    }
    Ok(pairwise_sum(&terms))
}

/// All six bilinear-form evaluations a functional sample needs, computed
/// in one pass over the quadrature nodes.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleParts {
    pub ip_w_w: f64,
    pub ip_grad_grad: f64,
    pub ip_w_z: f64,
    pub ip_z_z: f64,
    pub ip_w_hw: f64,
    pub ip_z_hw: f64,
}

pub fn sample_parts<F: ParabolicField + ?Sized>(
    w: &F,
    r: f64,
    quad: &GaussQuad,
) -> Result<SampleParts> {
    if !(r > 0.0) {
        return Err(Error::Validation("radius must be positive".into()));
    }
    let t = -r * r;
    let n = quad.len();
    let mut ww = Vec::with_capacity(n);
    let mut gg = Vec::with_capacity(n);
    let mut wz = Vec::with_capacity(n);
    let mut zz = Vec::with_capacity(n);
    let mut wh = Vec::with_capacity(n);
    let mut zh = Vec::with_capacity(n);
    let mut x = vec![0.0; quad.dim()];
    for j in 0..n {
        for (xi, yi) in x.iter_mut().zip(quad.node(j)) {
            *xi = r * yi;
        }
        let wj = quad.weight(j);
        let v = w.value(&x, t)?;
        let grad = w.gradient(&x, t)?;
        let dtv = w.dt(&x, t)?;
        let hv = w.heat(&x, t)?;
        let radial: f64 = x.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let zv = radial + 2.0 * t * dtv;
        let g2: f64 = grad.iter().map(|c| c * c).sum();
        ww.push(wj * v * v);
        gg.push(wj * g2);
        wz.push(wj * v * zv);
        zz.push(wj * zv * zv);
        wh.push(wj * v * hv);
        zh.push(wj * zv * hv);
    }
    Ok(SampleParts {
        ip_w_w: pairwise_sum(&ww),
        ip_grad_grad: pairwise_sum(&gg),
        ip_w_z: pairwise_sum(&wz),
        ip_z_z: pairwise_sum(&zz),
        ip_w_hw: pairwise_sum(&wh),
        ip_z_hw: pairwise_sum(&zh),
    })
}

/// `H(r, w) = ⟨w, w⟩_r`.
pub fn functional_h<F: ParabolicField + ?Sized>(w: &F, r: f64, quad: &GaussQuad) -> Result<f64> {
    weighted_inner(|x, t| w.value(x, t), |x, t| w.value(x, t), r, quad)
}

/// `D(r, w) = 2r² ⟨∇w, ∇w⟩_r`.
pub fn functional_d<F: ParabolicField + ?Sized>(w: &F, r: f64, quad: &GaussQuad) -> Result<f64> {
    let t = -r * r;
    let mut terms = Vec::with_capacity(quad.len());
    let mut x = vec![0.0; quad.dim()];
    for j in 0..quad.len() {
        for (xi, yi) in x.iter_mut().zip(quad.node(j)) {
            *xi = r * yi;
        }
        let grad = w.gradient(&x, t)?;
        let g2: f64 = grad.iter().map(|c| c * c).sum();
        terms.push(quad.weight(j) * g2);
    }
    Ok(2.0 * r * r * pairwise_sum(&terms))
}

/// Almgren-type frequency `φ(r, w) = D/H`; undefined when `H = 0`.
pub fn frequency<F: ParabolicField + ?Sized>(w: &F, r: f64, quad: &GaussQuad) -> Result<f64> {
    let h = functional_h(w, r, quad)?;
    let d = functional_d(w, r, quad)?;
    frequency_from(h, d)
}

pub fn frequency_from(h: f64, d: f64) -> Result<f64> {
    if h == 0.0 {
        return Err(Error::DivisionByZero);
    }
    Ok(d / h)
}

/// Truncated frequency `φ^γ = (D + γ r^{2γ})/(H + r^{2γ})`.
pub fn frequency_trunc<F: ParabolicField + ?Sized>(
    w: &F,
    r: f64,
    gamma: f64,
    quad: &GaussQuad,
) -> Result<f64> {
    let h = functional_h(w, r, quad)?;
    let d = functional_d(w, r, quad)?;
    Ok(frequency_trunc_from(h, d, r, gamma))
}

pub fn frequency_trunc_from(h: f64, d: f64, r: f64, gamma: f64) -> f64 {
    let pad = r.powf(2.0 * gamma);
    (d + gamma * pad) / (h + pad)
}

/// Weiss functional `W(r, w) = (D − 2H)/r⁴`.
pub fn weiss<F: ParabolicField + ?Sized>(w: &F, r: f64, quad: &GaussQuad) -> Result<f64> {
    let h = functional_h(w, r, quad)?;
    let d = functional_d(w, r, quad)?;
    Ok((d - 2.0 * h) / r.powi(4))
}

/// Monneau quotient `H(r, w)/r⁴`.
pub fn monneau<F: ParabolicField + ?Sized>(w: &F, r: f64, quad: &GaussQuad) -> Result<f64> {
    Ok(functional_h(w, r, quad)? / r.powi(4))
}

/// Per-radius record of every monitored functional.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub r: f64,
    pub h: f64,
    pub d: f64,
    pub w: f64,
    pub phi: f64,
    pub phi_gamma: f64,
    pub ip_w_hw: f64,
    pub ip_zw_hw: f64,
}

impl FunctionalSample {
    pub fn from_parts(r: f64, gamma: f64, parts: &SampleParts) -> Self {
        let h = parts.ip_w_w;
        let d = 2.0 * r * r * parts.ip_grad_grad;
        Self {
            r,
            h,
            d,
            w: (d - 2.0 * h) / r.powi(4),
            phi: if h == 0.0 { f64::NAN } else { d / h },
            phi_gamma: frequency_trunc_from(h, d, r, gamma),
            ip_w_hw: parts.ip_w_hw,
            ip_zw_hw: parts.ip_z_hw,
        }
    }
}

/// Smooth spatial cutoff: `ζ ≡ 1` on `|x| ≤ r_inner`, `ζ ≡ 0` on
/// `|x| ≥ r_outer`, joined by the unique quintic with vanishing first and
/// second derivatives at both plateaus.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        Self {
            r_inner: 0.25,
            r_outer: 0.5,
        }
    }
}

fn bump(s: f64) -> f64 {
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn bump_d1(s: f64) -> f64 {
    -30.0 * s * s * (1.0 - s) * (1.0 - s)
}

fn bump_d2(s: f64) -> f64 {
    -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
}

impl CutoffSpec {
    pub fn value(&self, x: &[f64]) -> f64 {
        let rho = norm(x);
        if rho <= self.r_inner {
            1.0
        } else if rho >= self.r_outer {
            0.0
        } else {
            bump((rho - self.r_inner) / (self.r_outer - self.r_inner))
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let rho = norm(x);
        if rho <= self.r_inner || rho >= self.r_outer {
            return vec![0.0; x.len()];
        }
        let width = self.r_outer - self.r_inner;
        let dv = bump_d1((rho - self.r_inner) / width) / width;
        x.iter().map(|&c| dv * c / rho).collect()
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let rho = norm(x);
        if rho <= self.r_inner || rho >= self.r_outer {
            return 0.0;
        }
        let width = self.r_outer - self.r_inner;
        let s = (rho - self.r_inner) / width;
        let n = x.len() as f64;
        bump_d2(s) / (width * width) + bump_d1(s) / width * (n - 1.0) / rho
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Pointwise product `w ζ`, extended by zero outside the cutoff support.
///
/// Queries at `|x| ≥ r_outer` never touch the wrapped field, so grid-backed
/// fields need only cover `B_{r_outer}` around the base point.
pub struct CutoffField<'a, F: ?Sized> {
    inner: &'a F,
    zeta: CutoffSpec,
}

pub fn apply_cutoff<F: ParabolicField + ?Sized>(w: &F, zeta: CutoffSpec) -> CutoffField<'_, F> {
    CutoffField { inner: w, zeta }
}

impl<F: ParabolicField + ?Sized> ParabolicField for CutoffField<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        if norm(x) >= self.zeta.r_outer {
            return Ok(0.0);
        }
        Ok(self.zeta.value(x) * self.inner.value(x, t)?)
    }

    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if norm(x) >= self.zeta.r_outer {
            return Ok(vec![0.0; x.len()]);
        }
        let z = self.zeta.value(x);
        let gz = self.zeta.grad(x);
        let v = self.inner.value(x, t)?;
        let gv = self.inner.gradient(x, t)?;
        Ok(gv.iter().zip(&gz).map(|(a, b)| z * a + v * b).collect())
    }

    fn dt(&self, x: &[f64], t: f64) -> Result<f64> {
        if norm(x) >= self.zeta.r_outer {
            return Ok(0.0);
        }
        Ok(self.zeta.value(x) * self.inner.dt(x, t)?)
    }

    /// `H(ζv) = ζ Hv + 2 ∇ζ·∇v + v Δζ` (ζ is time-independent).
    fn heat(&self, x: &[f64], t: f64) -> Result<f64> {
        if norm(x) >= self.zeta.r_outer {
            return Ok(0.0);
        }
        let z = self.zeta.value(x);
        let gz = self.zeta.grad(x);
        let lz = self.zeta.laplacian(x);
        let v = self.inner.value(x, t)?;
        let gv = self.inner.gradient(x, t)?;
        let cross: f64 = gz.iter().zip(&gv).map(|(a, b)| a * b).sum();
        Ok(z * self.inner.heat(x, t)? + 2.0 * cross + v * lz)
    }
}

/// Residuals of the three differentiation identities
/// `H'(r) = 2r⁻¹⟨w, Zw⟩_r`,
/// `D(r)  = ⟨w, Zw⟩_r − 2r²⟨w, Hw⟩_r`,
/// `D'(r) = 2r⁻¹⟨Zw, Zw⟩_r − 4r⟨Zw, Hw⟩_r`,
/// with the primes replaced by centered differences of width `dr`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdentityReport {
    pub res_h_prime: f64,
    pub res_d: f64,
    pub res_d_prime: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        self.res_h_prime.max(self.res_d).max(self.res_d_prime)
    }
}

pub fn verify_derivative_identities<F: ParabolicField + ?Sized>(
    w: &F,
    r: f64,
    dr: f64,
    quad: &GaussQuad,
) -> Result<IdentityReport> {
    if !(r - dr > 0.0) {
        return Err(Error::Validation("need r - dr > 0".into()));
    }
    let at = |rr: f64| -> Result<(f64, f64)> {
        Ok((functional_h(w, rr, quad)?, functional_d(w, rr, quad)?))
    };
    let (h_lo, d_lo) = at(r - dr)?;
    let (h_hi, d_hi) = at(r + dr)?;
    let parts = sample_parts(w, r, quad)?;

    let h_prime = (h_hi - h_lo) / (2.0 * dr);
    let d_prime = (d_hi - d_lo) / (2.0 * dr);
    let d_mid = 2.0 * r * r * parts.ip_grad_grad;

    Ok(IdentityReport {
        res_h_prime: (h_prime - 2.0 / r * parts.ip_w_z).abs(),
        res_d: (d_mid - (parts.ip_w_z - 2.0 * r * r * parts.ip_w_hw)).abs(),
        res_d_prime: (d_prime - (2.0 / r * parts.ip_z_z - 4.0 * r * parts.ip_z_hw)).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn coord_field(dim: usize, axis: usize) -> AnalyticField {
        AnalyticField::new(
            dim,
            move |x, _| x[axis],
            move |_, _| {
                let mut g = vec![0.0; dim];
                g[axis] = 1.0;
                g
            },
            |_, _| 0.0,
            |_, _| 0.0,
        )
    }

    #[test]
    fn quadrature_weights_sum_to_one() {
        for dim in [1, 2] {
            let q = GaussQuad::new(dim, 40).unwrap();
            let total: f64 = (0..q.len()).map(|j| q.weight(j)).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_matches_gaussian_moments() {
        // weight G(.,-1) is N(0, 2 I): odd moments 0, E[y^2]=2, E[y^4]=12,
        // E[y^{2m}] = (2m-1)!! 2^m
        let q = GaussQuad::new(1, 40).unwrap();
        let moment = |p: i32| -> f64 {
            (0..q.len())
                .map(|j| q.weight(j) * q.node(j)[0].powi(p))
                .sum()
        };
        assert!(moment(1).abs() < 1e-12);
        assert!(moment(3).abs() < 1e-11);
        assert_relative_eq!(moment(2), 2.0, epsilon = 1e-11);
        assert_relative_eq!(moment(4), 12.0, epsilon = 1e-10);
        assert_relative_eq!(moment(6), 120.0, epsilon = 1e-9);
        assert_relative_eq!(moment(12), 10395.0 * 64.0, max_relative = 1e-9);
    }

    #[test]
    fn inner_product_oracle_values() {
        let q2 = GaussQuad::new(2, 40).unwrap();
        let one = AnalyticField::constant(2, 1.0);
        for r in [1.0, 0.5, 0.1] {
            let v = functional_h(&one, r, &q2).unwrap();
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
        // <x1^2, 1>_1 = 2
        let x1sq = AnalyticField::new(
            2,
            |x, _| x[0] * x[0],
            |x, _| vec![2.0 * x[0], 0.0],
            |_, _| 0.0,
            |_, _| 2.0,
        );
        let v = weighted_inner(
            |x, t| x1sq.value(x, t),
            |_, _| Ok(1.0),
            1.0,
            &q2,
        )
        .unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn h_and_d_on_harmonic_difference() {
        // w = (x1^2 - x2^2)/2 = p2 - p with p2 = x1^2/2, p = x2^2/2
        let p2 = PolyP::new(2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let p = PolyP::new(2, vec![0.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let w = AnalyticField::poly_diff(&p2, &p);
        let quad = GaussQuad::new(2, 40).unwrap();
        let h = functional_h(&w, 1.0, &quad).unwrap();
        let d = functional_d(&w, 1.0, &quad).unwrap();
        assert_relative_eq!(h, 4.0, epsilon = 1e-9);
        assert_relative_eq!(d, 8.0, epsilon = 1e-9);
        // phi = 2 at every radius by 2-homogeneity
        for r in [0.5, 0.25, 0.125] {
            assert_relative_eq!(frequency(&w, r, &quad).unwrap(), 2.0, epsilon = 1e-9);
            assert!(weiss(&w, r, &quad).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn homogeneous_scaling_of_h_and_d() {
        let quad = GaussQuad::new(2, 40).unwrap();
        // k = 1: w = x1
        let w1 = coord_field(2, 0);
        // k = 2: harmonic difference
        let p2 = PolyP::new(2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let p = PolyP::new(2, vec![0.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let w2 = AnalyticField::poly_diff(&p2, &p);
        for (k, w) in [(1i32, &w1 as &dyn ParabolicField), (2, &w2)] {
            let h1 = functional_h(w, 1.0, &quad).unwrap();
            let d1 = functional_d(w, 1.0, &quad).unwrap();
            for r in [0.5f64, 0.25] {
                let s = r.powi(2 * k);
                assert_relative_eq!(functional_h(w, r, &quad).unwrap(), s * h1, epsilon = 1e-10);
                assert_relative_eq!(functional_d(w, r, &quad).unwrap(), s * d1, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn truncated_frequency_edge_cases() {
        let quad = GaussQuad::new(2, 40).unwrap();
        let zero = AnalyticField::constant(2, 0.0);
        for (r, gamma) in [(0.5, 2.25), (0.1, 2.5), (1.0, 3.0)] {
            let v = frequency_trunc(&zero, r, gamma, &quad).unwrap();
            assert_relative_eq!(v, gamma, epsilon = 1e-12);
        }
        assert!(matches!(
            frequency(&zero, 0.5, &quad),
            Err(Error::DivisionByZero)
        ));
        // phi^gamma -> 2 as r -> 0 for the harmonic difference with gamma = 2.25:
        // H ~ 4 r^4 dominates r^{2 gamma}, the gap closes like r^{2 gamma - 4}
        let p2 = PolyP::new(2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let p = PolyP::new(2, vec![0.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let w = AnalyticField::poly_diff(&p2, &p);
        let v = frequency_trunc(&w, 1e-5, 2.25, &quad).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-3);
    }

    #[test]
    fn mediant_bound_on_truncated_frequency() {
        let quad = GaussQuad::new(2, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: f64 = rng.gen_range(0.1..2.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let w = AnalyticField::new(
                2,
                move |x, _| a * x[0] + b * x[1] * x[1],
                move |x, _| vec![a, 2.0 * b * x[1]],
                |_, _| 0.0,
                move |_, _| 2.0 * b,
            );
            let r = rng.gen_range(0.1..1.0);
            let gamma = rng.gen_range(2.05..2.45);
            let h = functional_h(&w, r, &quad).unwrap();
            let d = functional_d(&w, r, &quad).unwrap();
            let phi = d / h;
            let fg = frequency_trunc_from(h, d, r, gamma);
            assert!(fg >= phi.min(gamma) - 1e-10 && fg <= phi.max(gamma) + 1e-10);
        }
    }

    #[test]
    fn bilinearity_symmetry_cauchy_schwarz() {
        let quad = GaussQuad::new(2, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (c1, c2, c3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
            let (d1, d2): (f64, f64) = (rng.gen(), rng.gen());
            let g = move |x: &[f64], _: f64| Ok(c1 + c2 * x[0] + c3 * x[1] * x[0]);
            let h = move |x: &[f64], _: f64| Ok(d1 * x[1] + d2 * x[0] * x[0]);
            let r = rng.gen_range(0.2..1.0);
            let gh = weighted_inner(g, h, r, &quad).unwrap();
            let hg = weighted_inner(h, g, r, &quad).unwrap();
            assert_relative_eq!(gh, hg, epsilon = 1e-12);
            let gg = weighted_inner(g, g, r, &quad).unwrap();
            let hh = weighted_inner(h, h, r, &quad).unwrap();
            assert!(gh * gh <= gg * hh * (1.0 + 1e-12));
            // linearity in the first slot
            let s = rng.gen_range(-2.0..2.0);
            let scaled = move |x: &[f64], _t: f64| Ok(s * (c1 + c2 * x[0] + c3 * x[1] * x[0]));
            let sgh = weighted_inner(scaled, h, r, &quad).unwrap();
            assert_relative_eq!(sgh, s * gh, epsilon = 1e-11 * (1.0 + gh.abs()));
        }
    }

    #[test]
    fn weiss_identity_for_random_profile_pairs() {
        // D(1, p2 - p) = 2 H(1, p2 - p) for every pair in the family
        let quad = GaussQuad::new(2, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let f0: f64 = rng.gen_range(0.5..2.0);
            let make = |rng: &mut ChaCha8Rng| {
                let l1: f64 = rng.gen_range(0.0..1.0) * f0;
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let (c, s) = (th.cos(), th.sin());
                let (a, b) = (l1, f0 - l1);
                PolyP::new(
                    2,
                    vec![
                        c * c * a + s * s * b,
                        c * s * (a - b),
                        c * s * (a - b),
                        s * s * a + c * c * b,
                    ],
                    f0,
                )
                .unwrap()
            };
            let p2 = make(&mut rng);
            let p = make(&mut rng);
            let w = AnalyticField::poly_diff(&p2, &p);
            let h = functional_h(&w, 1.0, &quad).unwrap();
            let d = functional_d(&w, 1.0, &quad).unwrap();
            assert!((d - 2.0 * h).abs() <= 1e-8 * (d + 2.0 * h).max(1e-30));
        }
    }

    #[test]
    fn cutoff_profile_values() {
        let z = CutoffSpec::default();
        assert_eq!(z.value(&[0.1, 0.2]), 1.0);
        assert_eq!(z.value(&[0.5, 0.0]), 0.0);
        assert_eq!(z.value(&[0.9]), 0.0);
        // midpoint of the transition: the quintic bump takes value 1/2
        assert_relative_eq!(z.value(&[0.375, 0.0]), 0.5, epsilon = 1e-12);
        // C^2 joints: derivative data vanish at both plateau edges
        for rho in [0.25 + 1e-9, 0.5 - 1e-9] {
            assert!(z.grad(&[rho, 0.0])[0].abs() < 1e-6);
            assert!(z.laplacian(&[rho, 0.0]).abs() < 1e-4);
        }
        assert!((0..100).all(|i| {
            let v = z.value(&[0.25 + 0.25 * i as f64 / 99.0, 0.0]);
            (0.0..=1.0).contains(&v)
        }));
    }

    #[test]
    fn cutoff_field_pass_through_and_zero() {
        let one = AnalyticField::constant(2, 1.0);
        let w = apply_cutoff(&one, CutoffSpec::default());
        assert_eq!(w.value(&[0.2, 0.1], -0.01).unwrap(), 1.0);
        assert_eq!(w.value(&[0.6, 0.3], -0.01).unwrap(), 0.0);
        assert_relative_eq!(w.value(&[0.375, 0.0], -0.01).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cutoff_heat_matches_product_rule() {
        // compare H(zeta v) against a finite-difference Laplacian of the product
        let p2 = PolyP::new(2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let w = apply_cutoff(&p2, CutoffSpec::default());
        let x = [0.31, 0.17];
        let t = -0.02;
        let e = 1e-5;
        let mut lap = 0.0;
        for axis in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[axis] += e;
            xm[axis] -= e;
            lap += (w.value(&xp, t).unwrap() - 2.0 * w.value(&x, t).unwrap()
                + w.value(&xm, t).unwrap())
                / (e * e);
        }
        assert_relative_eq!(w.heat(&x, t).unwrap(), lap, epsilon = 1e-4);
    }

    #[test]
    fn derivative_identities_analytic_suite() {
        let quad = GaussQuad::new(2, 40).unwrap();
        let dr = 1e-3;
        // constants: both sides vanish
        let c = AnalyticField::constant(2, 3.0);
        let rep = verify_derivative_identities(&c, 0.5, dr, &quad).unwrap();
        assert!(rep.res_h_prime < 1e-10 && rep.res_d < 1e-10 && rep.res_d_prime < 1e-10);
        // w = x1: D(r) = <w, Zw>_r = 2r^2 exactly
        let w = coord_field(2, 0);
        let parts = sample_parts(&w, 0.5, &quad).unwrap();
        assert_relative_eq!(parts.ip_w_z, 2.0 * 0.25, epsilon = 1e-10);
        let rep = verify_derivative_identities(&w, 0.5, dr, &quad).unwrap();
        assert!(rep.max() < 1e-7, "{rep:?}");
        // harmonic difference: H(r) = r^4 H(1) is quartic, so the centered
        // difference carries a (dr^2/6) H''' = 4 dr^2 r H(1) truncation term;
        // at r = 1/8 with H(1) = 1 it sits inside the 2 dr^2 budget
        let p2 = PolyP::new(2, vec![0.5, 0.0, 0.0, 0.5], 1.0).unwrap();
        let p = PolyP::new(2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let w = AnalyticField::poly_diff(&p2, &p);
        let rep = verify_derivative_identities(&w, 0.125, dr, &quad).unwrap();
        assert!(rep.max() <= (2.0 * dr * dr).max(1e-8), "{rep:?}");
    }
}
