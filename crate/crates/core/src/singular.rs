//! Blow-up extraction at free-boundary points, constrained quadratic
//! fitting, regular/singular classification, and stratification.
//!
//! The blow-up `v_r(y, s) = u(x0 + ry, t0 + r²s)/r²` is sampled on a fixed
//! reference lattice over the backward cylinder `B_2 × [-4, 0]` and
//! compared against the two admissible limit profiles: the half-space
//! profile `(f/2) max(e·y, 0)²` (regular points) and the quadratic
//! `½ yᵀAy` with `A ⪰ 0`, `tr A = f(x0)` (singular points).

use crate::error::Error;
use crate::fixtures::{self, PolyP};
use crate::pardim::ParPointSet;
use crate::solver::SolvedField;
use crate::Result;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Spatial nodes per axis of the reference lattice.
const LATTICE_AXIS: usize = 33;
/// Time slices of the reference lattice.
const LATTICE_TIME: usize = 17;
/// Spatial half-width of the reference cylinder.
const LATTICE_RADIUS: f64 = 2.0;
/// Time depth of the reference cylinder.
const LATTICE_DEPTH: f64 = 4.0;

/// Rescaled samples of a field around a base point at one radius.
#[derive(Debug, Clone)]
pub struct BlowupProfile {
    pub base_x: Vec<f64>,
    pub base_t: f64,
    pub r: f64,
    pub dim: usize,
    /// Lattice coordinates `(y, s)` in reference variables.
    pub points: Vec<(Vec<f64>, f64)>,
    /// `max(u(x0 + ry, t0 + r²s), 0) / r²` per lattice point.
    pub samples: Vec<f64>,
}

/// Reference lattice in blow-up coordinates: tensor nodes of pitch 1/8 in
/// space restricted to `|y| ≤ 2`, 17 slices of `s ∈ [-4, 0]`.
pub fn reference_lattice(dim: usize) -> Vec<(Vec<f64>, f64)> {
    let coord = |i: usize| -> f64 {
        -LATTICE_RADIUS + 2.0 * LATTICE_RADIUS * i as f64 / (LATTICE_AXIS - 1) as f64
    };
    let times: Vec<f64> = (0..LATTICE_TIME)
        .map(|k| -LATTICE_DEPTH + LATTICE_DEPTH * k as f64 / (LATTICE_TIME - 1) as f64)
        .collect();
    let mut spatial: Vec<Vec<f64>> = Vec::new();
    match dim {
        1 => {
            for i in 0..LATTICE_AXIS {
                spatial.push(vec![coord(i)]);
            }
        }
        _ => {
            for i in 0..LATTICE_AXIS {
                for j in 0..LATTICE_AXIS {
                    let y = vec![coord(i), coord(j)];
                    if y[0] * y[0] + y[1] * y[1] <= LATTICE_RADIUS * LATTICE_RADIUS + 1e-12 {
                        spatial.push(y);
                    }
                }
            }
        }
    }
    let mut points = Vec::with_capacity(spatial.len() * times.len());
    for &s in &times {
        for y in &spatial {
            points.push((y.clone(), s));
        }
    }
    points
}

/// Parabolic rescaling of the field around `(x0, t0)`.
///
/// The base point must lie on the discrete free boundary: `u ≈ 0` there
/// with positive values nearby at scale `r`.
pub fn blowup(
    field: &SolvedField,
    x0: &[f64],
    t0: f64,
    r: f64,
    tol_fb: Option<f64>,
) -> Result<BlowupProfile> {
    let grid = field.grid();
    let tol = tol_fb.unwrap_or(10.0 * grid.h * grid.h);
    let u0 = field.value(x0, t0)?;
    if u0 > tol {
        return Err(Error::NotOnFreeBoundary {
            x: x0.to_vec(),
            t: t0,
        });
    }
    let points = reference_lattice(grid.dim);
    let r2 = r * r;
    let mut samples = Vec::with_capacity(points.len());
    let mut positive = false;
    for (y, s) in &points {
        let x: Vec<f64> = x0.iter().zip(y).map(|(b, yi)| b + r * yi).collect();
        let v = field.value(&x, t0 + r2 * s)?.max(0.0) / r2;
        if v > tol / r2 {
            positive = true;
        }
        samples.push(v);
    }
    if !positive {
        return Err(Error::NotOnFreeBoundary {
            x: x0.to_vec(),
            t: t0,
        });
    }
    Ok(BlowupProfile {
        base_x: x0.to_vec(),
        base_t: t0,
        r,
        dim: grid.dim,
        points,
        samples,
    })
}

/// Fitted singular model with competitor diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticProfile {
    pub base_x: Vec<f64>,
    pub base_t: f64,
    pub f_at_base: f64,
    /// Row-major symmetric PSD matrix with `tr A = f_at_base`.
    pub a: Vec<f64>,
    pub residual_quadratic: f64,
    pub residual_halfspace: f64,
    pub best_e: Vec<f64>,
    pub stratum: usize,
}

impl QuadraticProfile {
    pub fn polynomial(&self) -> Result<PolyP> {
        PolyP::new(self.base_x.len(), self.a.clone(), self.f_at_base)
    }
}

fn rms(residuals: impl Iterator<Item = f64>, n: usize) -> f64 {
    (residuals.map(|e| e * e).sum::<f64>() / n as f64).sqrt()
}

fn quadratic_value(a: &[f64], dim: usize, y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += y[i] * a[i * dim + j] * y[j];
        }
    }
    0.5 * s
}

fn halfspace_residual(profile: &BlowupProfile, f0: f64, e: &[f64]) -> f64 {
    let n = profile.samples.len();
    rms(
        profile
            .points
            .iter()
            .zip(&profile.samples)
            .map(|((y, _), &v)| {
                let d: f64 = e.iter().zip(y).map(|(a, b)| a * b).sum();
                v - 0.5 * f0 * d.max(0.0) * d.max(0.0)
            }),
        n,
    )
}

/// Best half-space direction: exhaustive sign check in 1d; 128 angles plus
/// golden-section refinement on the circle in 2d.
fn best_halfspace(profile: &BlowupProfile, f0: f64) -> (Vec<f64>, f64) {
    match profile.dim {
        1 => {
            let plus = halfspace_residual(profile, f0, &[1.0]);
            let minus = halfspace_residual(profile, f0, &[-1.0]);
            if plus <= minus {
                (vec![1.0], plus)
            } else {
                (vec![-1.0], minus)
            }
        }
        _ => {
            let eval = |th: f64| halfspace_residual(profile, f0, &[th.cos(), th.sin()]);
            let m = 128;
            let mut best_k = 0;
            let mut best_v = f64::INFINITY;
            for k in 0..m {
                let v = eval(std::f64::consts::TAU * k as f64 / m as f64);
                if v < best_v {
                    best_v = v;
                    best_k = k;
                }
            }
            let center = std::f64::consts::TAU * best_k as f64 / m as f64;
            let half = std::f64::consts::TAU / m as f64;
            let (mut lo, mut hi) = (center - half, center + half);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut c, mut d) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
            let (mut fc, mut fd) = (eval(c), eval(d));
            for _ in 0..40 {
                if fc < fd {
                    hi = d;
                    d = c;
                    fd = fc;
                    c = hi - phi * (hi - lo);
                    fc = eval(c);
                } else {
                    lo = c;
                    c = d;
                    fc = fd;
                    d = lo + phi * (hi - lo);
                    fd = eval(d);
                }
            }
            let th = 0.5 * (lo + hi);
            (vec![th.cos(), th.sin()], eval(th).min(best_v))
        }
    }
}

/// Trace-constrained least squares for `½ yᵀAy`, followed by projection
/// onto the PSD cone (eigenvalue clipping with trace renormalization).
pub fn fit_quadratic(profile: &BlowupProfile, f_at_base: f64) -> Result<QuadraticProfile> {
    let dim = profile.dim;
    let n = profile.samples.len();
    let unknowns = dim * (dim + 1) / 2 - 1; // symmetric, trace pinned
    if n < unknowns.max(1) {
        return Err(Error::DegenerateFit(format!(
            "{n} lattice samples for {unknowns} unknowns"
        )));
    }
    let mut a = match dim {
        1 => vec![f_at_base],
        _ => {
            // A = [[alpha, beta], [beta, f0 - alpha]]:
            // v - f0 y2²/2 ≈ alpha (y1² - y2²)/2 + beta y1 y2
            let mut m11 = 0.0;
            let mut m12 = 0.0;
            let mut m22 = 0.0;
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            for ((y, _), &v) in profile.points.iter().zip(&profile.samples) {
                let g1 = 0.5 * (y[0] * y[0] - y[1] * y[1]);
                let g2 = y[0] * y[1];
                let rhs = v - 0.5 * f_at_base * y[1] * y[1];
                m11 += g1 * g1;
                m12 += g1 * g2;
                m22 += g2 * g2;
                b1 += g1 * rhs;
                b2 += g2 * rhs;
            }
            let det = m11 * m22 - m12 * m12;
            if det.abs() < 1e-12 * (m11 * m22).max(1.0) {
                return Err(Error::DegenerateFit("singular normal equations".into()));
            }
            let alpha = (b1 * m22 - b2 * m12) / det;
            let beta = (b2 * m11 - b1 * m12) / det;
            vec![alpha, beta, beta, f_at_base - alpha]
        }
    };

    // PSD projection with trace renormalization
    let m = DMatrix::from_row_slice(dim, dim, &a);
    let eig = m.symmetric_eigen();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let tr: f64 = clipped.iter().sum();
    if tr <= 0.0 {
        return Err(Error::DegenerateFit(
            "projected matrix has zero trace".into(),
        ));
    }
    let scale = f_at_base / tr;
    let mut proj = DMatrix::zeros(dim, dim);
    for (idx, &l) in clipped.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        proj += scale * l * v * v.transpose();
    }
    for i in 0..dim {
        for j in 0..dim {
            a[i * dim + j] = proj[(i, j)];
        }
    }
    // exact symmetry regardless of rounding
    for i in 0..dim {
        for j in 0..i {
            let s = 0.5 * (a[i * dim + j] + a[j * dim + i]);
            a[i * dim + j] = s;
            a[j * dim + i] = s;
        }
    }

    let residual_quadratic = rms(
        profile
            .points
            .iter()
            .zip(&profile.samples)
            .map(|((y, _), &v)| v - quadratic_value(&a, dim, y)),
        n,
    );
    let (best_e, residual_halfspace) = best_halfspace(profile, f_at_base);
    let poly = PolyP::new(dim, a.clone(), f_at_base)?;
    // eigenvalues below the fit's own residual scale are indistinguishable
    // from zero: at a finite radius the blow-up bias enters the matrix at
    // the same order as the lattice misfit
    let tol_eig = fixtures::default_tol_eig(&poly).max(residual_quadratic);
    let stratum = fixtures::stratum_of(&poly, tol_eig);

    Ok(QuadraticProfile {
        base_x: profile.base_x.clone(),
        base_t: profile.base_t,
        f_at_base,
        a,
        residual_quadratic,
        residual_halfspace,
        best_e,
        stratum,
    })
}

/// Free-boundary point classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum PointClass {
    Regular { e: Vec<f64> },
    Singular { m: usize, a: Vec<f64> },
    Undecided { reason: String },
}

impl PointClass {
    pub fn is_singular(&self) -> bool {
        matches!(self, PointClass::Singular { .. })
    }
}

/// Controls for [`classify`].
#[derive(Debug, Clone)]
pub struct ClassifyParams {
    pub f_at_base: f64,
    /// Residual-ratio decision margin between the two models.
    pub theta: f64,
    pub tol_fb: Option<f64>,
}

impl ClassifyParams {
    pub fn new(f_at_base: f64) -> Self {
        Self {
            f_at_base,
            theta: 0.5,
            tol_fb: None,
        }
    }
}

/// Dyadic radii `2^{-k}` admissible at this base point: the scaled
/// reference cylinder must stay inside the grid hull and the lattice pitch
/// must stay above the grid resolution.
pub fn default_r_sequence(field: &SolvedField, x0: &[f64], t0: f64) -> Vec<f64> {
    let grid = field.grid();
    let mut out = Vec::new();
    let mut r = 0.25;
    while r >= 8.0 * grid.h - 1e-12 {
        let fits_space = x0
            .iter()
            .all(|&c| c.abs() + LATTICE_RADIUS * r <= grid.spatial_halfwidth + 1e-12);
        let fits_time = t0 - LATTICE_DEPTH * r * r >= grid.t_range.0 - 1e-12
            && t0 <= grid.t_range.1 + 1e-12;
        if fits_space && fits_time {
            out.push(r);
        }
        r *= 0.5;
    }
    out
}

/// Residual-ratio decision between the two limit models.
pub fn decide(fit: &QuadraticProfile, theta: f64) -> PointClass {
    let (rq, rh) = (fit.residual_quadratic, fit.residual_halfspace);
    if rh < theta * rq {
        PointClass::Regular {
            e: fit.best_e.clone(),
        }
    } else if rq < theta * rh {
        PointClass::Singular {
            m: fit.stratum,
            a: fit.a.clone(),
        }
    } else {
        PointClass::Undecided {
            reason: format!(
                "residual ratio inside margin: halfspace {rh:.3e}, quadratic {rq:.3e}"
            ),
        }
    }
}

/// Classify a free-boundary point by comparing the half-space and
/// quadratic fits at the smallest resolvable radius.
pub fn classify(
    field: &SolvedField,
    x0: &[f64],
    t0: f64,
    r_sequence: &[f64],
    params: &ClassifyParams,
) -> Result<PointClass> {
    if r_sequence.is_empty() {
        return Ok(PointClass::Undecided {
            reason: "no admissible radius".into(),
        });
    }
    let smallest = r_sequence.iter().copied().fold(f64::INFINITY, f64::min);
    let profile = blowup(field, x0, t0, smallest, params.tol_fb)?;
    let fit = fit_quadratic(&profile, params.f_at_base)?;
    Ok(decide(&fit, params.theta))
}

/// One scanned singular point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularPoint {
    pub x: Vec<f64>,
    pub t: f64,
    pub m: usize,
    pub a: Vec<f64>,
    pub residual_quadratic: f64,
    pub residual_halfspace: f64,
}

/// Scan output; undecided points are reported, never dropped.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SingularScan {
    pub singular: Vec<SingularPoint>,
    pub regular: usize,
    pub undecided: Vec<(Vec<f64>, f64, String)>,
    /// Free-boundary nodes whose reference cylinder did not fit.
    pub skipped: usize,
}

impl SingularScan {
    pub fn point_set(&self, dim: usize) -> ParPointSet {
        ParPointSet::new(
            dim,
            self.singular.iter().map(|p| (p.x.clone(), p.t)).collect(),
        )
    }
}

/// Scan controls. Strides thin the scanned slices and nodes. Contact
/// values of solved fields are exactly zero by projection, so the default
/// tolerance `h²/4` sits safely below the smallest positive neighbor
/// value `~ f h²/2`.
#[derive(Debug, Clone)]
pub struct ScanOpts {
    pub tol_contact: Option<f64>,
    pub time_window: Option<(f64, f64)>,
    pub time_stride: usize,
    pub spatial_stride: usize,
    pub theta: f64,
}

impl Default for ScanOpts {
    fn default() -> Self {
        Self {
            tol_contact: None,
            time_window: None,
            time_stride: 1,
            spatial_stride: 1,
            theta: 0.5,
        }
    }
}

/// Classify every discrete free-boundary node and collect the singular
/// ones, in deterministic scan order (time slice, then flat node index).
pub fn singular_set(
    field: &SolvedField,
    f_at: &(dyn Fn(&[f64]) -> f64 + Sync),
    opts: &ScanOpts,
) -> SingularScan {
    let grid = field.grid().clone();
    let u = field.u();
    let n = grid.n_axis();
    let ns = grid.slice_len();
    let tol = opts.tol_contact.unwrap_or(0.25 * grid.h * grid.h);

    // candidate free-boundary nodes: contact nodes with a positive
    // 4-neighborhood, collected slice by slice
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for k in (0..grid.n_time()).step_by(opts.time_stride.max(1)) {
        let t = grid.time(k);
        if let Some((lo, hi)) = opts.time_window {
            if t < lo || t > hi {
                continue;
            }
        }
        let slice = u.slice(k);
        for flat in (0..ns).step_by(opts.spatial_stride.max(1)) {
            if grid.is_boundary(flat) || slice[flat] > tol {
                continue;
            }
            let neighbors: &[usize] = match grid.dim {
                1 => &[flat - 1, flat + 1],
                _ => &[flat - 1, flat + 1, flat - n, flat + n],
            };
            if neighbors.iter().any(|&nb| slice[nb] > tol) {
                candidates.push((k, flat));
            }
        }
    }

    type Classified = (usize, usize, Option<Result<(PointClass, f64, f64)>>);
    let classified: Vec<Classified> = candidates
        .par_iter()
        .map(|&(k, flat)| {
            let x = grid.node_coords(flat);
            let t = grid.time(k);
            let radii = default_r_sequence(field, &x, t);
            if radii.is_empty() {
                return (k, flat, None);
            }
            let params = ClassifyParams {
                f_at_base: f_at(&x),
                theta: opts.theta,
                tol_fb: Some(tol.max(grid.h * grid.h)),
            };
            let out = (|| {
                let smallest = radii.iter().copied().fold(f64::INFINITY, f64::min);
                let profile = blowup(field, &x, t, smallest, params.tol_fb)?;
                let fit = fit_quadratic(&profile, params.f_at_base)?;
                let class = decide(&fit, params.theta);
                Ok((class, fit.residual_quadratic, fit.residual_halfspace))
            })();
            (k, flat, Some(out))
        })
        .collect();

    let mut scan = SingularScan::default();
    for (k, flat, out) in classified {
        let x = grid.node_coords(flat);
        let t = grid.time(k);
        match out {
            None => scan.skipped += 1,
            Some(Err(e)) => scan.undecided.push((x, t, format!("error: {e}"))),
            Some(Ok((PointClass::Regular { .. }, _, _))) => scan.regular += 1,
            Some(Ok((PointClass::Singular { m, a }, rq, rh))) => {
                scan.singular.push(SingularPoint {
                    x,
                    t,
                    m,
                    a,
                    residual_quadratic: rq,
                    residual_halfspace: rh,
                });
            }
            Some(Ok((PointClass::Undecided { reason }, _, _))) => {
                scan.undecided.push((x, t, reason));
            }
        }
    }
    scan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ScalarField, SpaceTimeGrid};
    use crate::solver::SolvedField;
    use approx::assert_relative_eq;

    fn sampled_field(
        dim: usize,
        halfwidth: f64,
        h: f64,
        t_range: (f64, f64),
        f: impl Fn(&[f64], f64) -> f64,
    ) -> SolvedField {
        let steps = ((t_range.1 - t_range.0) / (h * h)).round();
        let grid =
            SpaceTimeGrid::new(dim, halfwidth, h, (t_range.1 - t_range.0) / steps, t_range)
                .unwrap();
        SolvedField::from_scalar(ScalarField::from_fn(grid, f)).unwrap()
    }

    fn quadratic_2d() -> SolvedField {
        // u = x1^2 / 2 sampled over a 2d grid
        sampled_field(2, 1.0, 1.0 / 64.0, (-0.5, 0.0), |x, _| 0.5 * x[0] * x[0])
    }

    #[test]
    fn blowup_of_homogeneous_field_is_exact() {
        let field = quadratic_2d();
        for r in [0.25, 0.125] {
            let profile = blowup(&field, &[0.0, 0.0], -0.01, r, None).unwrap();
            for ((y, _), &v) in profile.points.iter().zip(&profile.samples) {
                // 2-homogeneity: samples equal the profile itself up to
                // the bilinear interpolation error O((h/r)^2) in y
                let want = 0.5 * y[0] * y[0];
                assert!((v - want).abs() <= 1e-3, "at {y:?}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn blowup_requires_free_boundary_point() {
        let field = quadratic_2d();
        // u(0.5, .) = 0.125 > 0: not a free-boundary point
        assert!(matches!(
            blowup(&field, &[0.5, 0.0], -0.01, 0.125, None),
            Err(Error::NotOnFreeBoundary { .. })
        ));
    }

    #[test]
    fn fit_recovers_its_own_model() {
        let field = quadratic_2d();
        let profile = blowup(&field, &[0.0, 0.0], -0.01, 0.125, None).unwrap();
        let fit = fit_quadratic(&profile, 1.0).unwrap();
        assert!((fit.a[0] - 1.0).abs() < 1e-3, "a11 = {}", fit.a[0]);
        assert!(fit.a[1].abs() < 1e-3);
        assert!(fit.a[3].abs() < 1e-3);
        assert!(fit.residual_quadratic < 1e-3);
        assert!(fit.residual_halfspace > 10.0 * fit.residual_quadratic);
        assert_eq!(fit.stratum, 1);
        // trace is renormalized exactly
        assert_relative_eq!(fit.a[0] + fit.a[3], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn halfspace_field_prefers_halfspace_model() {
        let field = sampled_field(2, 1.0, 1.0 / 64.0, (-0.5, 0.0), |x, _| {
            0.5 * x[0].max(0.0).powi(2)
        });
        let profile = blowup(&field, &[0.0, 0.0], -0.01, 0.125, None).unwrap();
        let fit = fit_quadratic(&profile, 1.0).unwrap();
        assert!(fit.residual_halfspace < 0.05 * fit.residual_quadratic);
        assert!(fit.best_e[0] > 0.99, "direction {:?}", fit.best_e);
        let class = classify(
            &field,
            &[0.0, 0.0],
            -0.01,
            &[0.125],
            &ClassifyParams::new(1.0),
        )
        .unwrap();
        assert!(matches!(class, PointClass::Regular { .. }));
    }

    #[test]
    fn classify_traveling_wave_regular() {
        let field = sampled_field(1, 2.0, 1.0 / 128.0, (-0.25, 0.05), |x, t| {
            crate::fixtures::traveling_wave(x[0], t)
        });
        let radii = default_r_sequence(&field, &[0.0], 0.0);
        assert!(!radii.is_empty());
        let class = classify(&field, &[0.0], 0.0, &radii, &ClassifyParams::new(1.0)).unwrap();
        match class {
            PointClass::Regular { e } => assert!(e[0] > 0.99, "direction {e:?}"),
            other => panic!("expected regular, got {other:?}"),
        }
    }

    #[test]
    fn classify_stationary_quadratic_singular() {
        let field = quadratic_2d();
        // every node on the line {x1 = 0} is singular with m = 1
        for x2 in [-0.5, 0.0, 0.25] {
            let class = classify(
                &field,
                &[0.0, x2],
                -0.01,
                &[0.125],
                &ClassifyParams::new(1.0),
            )
            .unwrap();
            match class {
                PointClass::Singular { m, .. } => assert_eq!(m, 1),
                other => panic!("expected singular at x2={x2}, got {other:?}"),
            }
        }
    }

    #[test]
    fn residuals_decrease_with_radius_for_true_model() {
        let field = sampled_field(1, 2.0, 1.0 / 256.0, (-0.25, 0.05), |x, t| {
            crate::fixtures::traveling_wave(x[0], t)
        });
        let res = |r: f64| {
            let p = blowup(&field, &[0.0], 0.0, r, None).unwrap();
            fit_quadratic(&p, 1.0).unwrap().residual_halfspace
        };
        assert!(res(0.0625) < res(0.125));
        assert!(res(0.125) < res(0.25));
    }

    #[test]
    fn rotation_equivariance_of_fit() {
        // field sampled from p(x) = x1^2/2 vs its 90-degree rotation
        let base = quadratic_2d();
        let rotated = sampled_field(2, 1.0, 1.0 / 64.0, (-0.5, 0.0), |x, _| 0.5 * x[1] * x[1]);
        let pa =
            fit_quadratic(&blowup(&base, &[0.0, 0.0], -0.01, 0.125, None).unwrap(), 1.0).unwrap();
        let pb = fit_quadratic(
            &blowup(&rotated, &[0.0, 0.0], -0.01, 0.125, None).unwrap(),
            1.0,
        )
        .unwrap();
        // R A R^T for R = 90-degree rotation swaps the diagonal
        assert!((pa.a[0] - pb.a[3]).abs() < 1e-6);
        assert!((pa.a[3] - pb.a[0]).abs() < 1e-6);
        assert!((pa.a[1] + pb.a[1]).abs() < 1e-6);
    }

    #[test]
    fn classify_is_scale_consistent() {
        // u and its parabolic rescaling classify identically
        let s = 2.0;
        let base = sampled_field(1, 2.0, 1.0 / 128.0, (-0.25, 0.05), |x, t| {
            crate::fixtures::traveling_wave(x[0], t)
        });
        let scaled = sampled_field(1, 2.0, 1.0 / 128.0, (-0.25, 0.05), move |x, t| {
            crate::fixtures::traveling_wave(s * x[0], s * s * t) / (s * s)
        });
        let ca = classify(&base, &[0.0], 0.0, &[0.125], &ClassifyParams::new(1.0)).unwrap();
        let cb = classify(&scaled, &[0.0], 0.0, &[0.125], &ClassifyParams::new(1.0)).unwrap();
        assert_eq!(
            matches!(ca, PointClass::Regular { .. }),
            matches!(cb, PointClass::Regular { .. })
        );
    }

    #[test]
    fn noisy_profile_fit_is_stable() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let field = quadratic_2d();
        let clean = blowup(&field, &[0.0, 0.0], -0.01, 0.125, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut noisy = clean.clone();
        for v in &mut noisy.samples {
            *v = (*v + 0.01 * rng.gen_range(-1.0..1.0)).max(0.0);
        }
        let fa = fit_quadratic(&clean, 1.0).unwrap();
        let fb = fit_quadratic(&noisy, 1.0).unwrap();
        let diff: f64 = fa
            .a
            .iter()
            .zip(&fb.a)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 0.1, "fit moved by {diff} under 0.01 noise");
    }

    #[test]
    fn scan_finds_singular_line() {
        let field = quadratic_2d();
        let scan = singular_set(
            &field,
            &|_| 1.0,
            &ScanOpts {
                spatial_stride: 4,
                time_stride: 8,
                ..ScanOpts::default()
            },
        );
        assert!(!scan.singular.is_empty());
        assert!(scan.singular.iter().all(|p| p.m == 1));
        assert!(scan.singular.iter().all(|p| p.x[0].abs() < 1e-9));
        assert_eq!(scan.regular, 0);
    }

    #[test]
    fn scan_of_traveling_wave_is_all_regular() {
        let field = sampled_field(1, 2.0, 1.0 / 128.0, (-0.25, 0.05), |x, t| {
            crate::fixtures::traveling_wave(x[0], t)
        });
        let scan = singular_set(
            &field,
            &|_| 1.0,
            &ScanOpts {
                time_stride: 64,
                ..ScanOpts::default()
            },
        );
        assert!(scan.singular.is_empty());
        assert!(scan.regular > 0);
    }
}
