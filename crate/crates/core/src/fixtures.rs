//! Closed-form solutions and polynomial families used as oracles.

use crate::error::Error;
use crate::Result;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Nonnegative 2-homogeneous polynomial `p(x) = ½ xᵀAx` with `tr A = f0`.
///
/// `A` is symmetric positive semidefinite; these are the admissible
/// singular blow-up profiles and the competitor family for the Monneau
/// quotient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyP {
    dim: usize,
    /// Row-major dim x dim matrix.
    a: Vec<f64>,
    f0: f64,
}

impl PolyP {
    pub fn new(dim: usize, a: Vec<f64>, f0: f64) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::InvalidPolynomial(format!(
                "matrix has {} entries for dim {dim}",
                a.len()
            )));
        }
        let scale = f0.abs().max(1.0);
        for i in 0..dim {
            for j in 0..i {
                if (a[i * dim + j] - a[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidPolynomial("matrix not symmetric".into()));
                }
            }
        }
        let trace: f64 = (0..dim).map(|i| a[i * dim + i]).sum();
        if (trace - f0).abs() > 1e-12 * scale {
            return Err(Error::InvalidPolynomial(format!(
                "tr A = {trace} but f0 = {f0}"
            )));
        }
        let m = DMatrix::from_row_slice(dim, dim, &a);
        let eig = m.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
            return Err(Error::InvalidPolynomial(format!(
                "negative eigenvalue {:?}",
                eig.eigenvalues.as_slice()
            )));
        }
        Ok(Self { dim, a, f0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    /// `p(x) = ½ xᵀAx`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += x[i] * self.a[i * self.dim + j] * x[j];
            }
        }
        0.5 * s
    }

    /// `∇p(x) = Ax`.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.a[i * self.dim + j] * x[j]).sum())
            .collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.a);
        let mut e: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        e
    }

    /// Unit eigenvector of the largest eigenvalue, with a sign convention
    /// (first nonzero component positive) for reproducibility.
    pub fn top_eigenvector(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.a);
        let eig = m.symmetric_eigen();
        let mut top = 0;
        for i in 1..self.dim {
            if eig.eigenvalues[i] > eig.eigenvalues[top] {
                top = i;
            }
        }
        let col = eig.eigenvectors.column(top);
        let mut v: Vec<f64> = col.iter().copied().collect();
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|c| *c = -*c);
            }
        }
        v
    }
}

/// Stratum index `m = dim ker A`, counted as eigenvalues below `tol_eig`.
pub fn stratum_of(p: &PolyP, tol_eig: f64) -> usize {
    p.eigenvalues().iter().filter(|&&l| l <= tol_eig).count()
}

/// Default kernel tolerance, relative to `tr A`; fitted matrices carry
/// quadrature and fit noise far above machine epsilon.
pub fn default_tol_eig(p: &PolyP) -> f64 {
    1e-6 * p.f0().abs().max(1.0)
}

/// One-phase Stefan traveling wave `u(x,t) = e^{x+t} − (x+t) − 1` on
/// `{x + t > 0}`, extended by zero. Solves `Hu = χ_{u>0}` with `f ≡ 1`.
pub fn traveling_wave(x: f64, t: f64) -> f64 {
    let z = x + t;
    if z > 0.0 {
        z.exp() - z - 1.0
    } else {
        0.0
    }
}

/// Spatial derivative of the traveling wave.
pub fn traveling_wave_dx(x: f64, t: f64) -> f64 {
    let z = x + t;
    if z > 0.0 {
        z.exp() - 1.0
    } else {
        0.0
    }
}

/// Regular blow-up profile `(f0/2) max(e·x, 0)²` for a unit direction `e`.
pub fn halfspace(f0: f64, e: &[f64], x: &[f64]) -> Result<f64> {
    let norm: f64 = e.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidPolynomial(format!(
            "direction must be a unit vector, |e| = {norm}"
        )));
    }
    if e.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            got: x.len(),
        });
    }
    let s: f64 = e.iter().zip(x).map(|(a, b)| a * b).sum();
    Ok(0.5 * f0 * s.max(0.0) * s.max(0.0))
}

/// Closed-form field descriptors addressable by name from scenario JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedForm {
    TravelingWave1d,
    StationaryQuadratic { polynomial: PolyP },
    Halfspace { f0: f64, e: Vec<f64> },
    /// Data family for pinch scenarios: a contact plateau `|x_1| ≤ gap`
    /// flanked by quadratic walls, rising linearly in time.
    AffineFPinch {
        gap: f64,
        amplitude: f64,
        rate: f64,
    },
}

impl ClosedForm {
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        match self {
            ClosedForm::TravelingWave1d => Ok(traveling_wave(x[0], t)),
            ClosedForm::StationaryQuadratic { polynomial } => {
                if polynomial.dim() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: polynomial.dim(),
                        got: x.len(),
                    });
                }
                Ok(polynomial.eval(x))
            }
            ClosedForm::Halfspace { f0, e } => halfspace(*f0, e, x),
            ClosedForm::AffineFPinch {
                gap,
                amplitude,
                rate,
            } => {
                let excess = (x[0].abs() - gap).max(0.0);
                Ok(amplitude * excess * excess + rate * t)
            }
        }
    }
}

// ---------------------------------------------------------------------
// Named scenario families. These are the concrete problem instances the
// analysis pipeline runs on; the CLI resolves them by name.
// ---------------------------------------------------------------------

use crate::solver::{self, BoundarySpec, DataSpec, Scenario, SolverOpts, SourceSpec};
use crate::mesh::SpaceTimeGrid;

/// `u0 ≡ 0`, zero boundary, `f ≡ 1`: the solution stays identically zero.
pub fn scenario_flat(dim: usize, h: f64, horizon: f64) -> Result<Scenario> {
    let steps = (horizon / (h * h)).round().max(1.0);
    let grid = SpaceTimeGrid::new(dim, 1.0, h, h * h, (0.0, steps * h * h))?;
    Ok(Scenario {
        name: "flat".into(),
        grid,
        f: SourceSpec::Constant { value: 1.0 },
        initial: DataSpec::Zero,
        boundary: BoundarySpec::Fixed {
            data: DataSpec::Zero,
        },
        opts: SolverOpts::default(),
    })
}

/// Traveling-wave scenario on `[-2, 2]`, `t ∈ [-1/8, 1/8]`: initial and
/// boundary data from the closed form, so the solve is checkable against
/// it everywhere.
pub fn scenario_wave_1d(h: f64) -> Result<Scenario> {
    let grid = SpaceTimeGrid::new(1, 2.0, h, h * h, (-0.125, 0.125))?;
    let steps = grid.n_time() - 1;
    let store_every = divisor_near(steps, steps / 256);
    Ok(Scenario {
        name: "wave-1d".into(),
        grid,
        f: SourceSpec::Constant { value: 1.0 },
        initial: DataSpec::ClosedForm {
            form: ClosedForm::TravelingWave1d,
        },
        boundary: BoundarySpec::Fixed {
            data: DataSpec::ClosedForm {
                form: ClosedForm::TravelingWave1d,
            },
        },
        opts: SolverOpts {
            store_every,
            ..SolverOpts::default()
        },
    })
}

/// Largest divisor of `steps` not exceeding `want` (at least 1).
fn divisor_near(steps: usize, want: usize) -> usize {
    let want = want.max(1).min(steps.max(1));
    (1..=want).rev().find(|&d| steps.is_multiple_of(d)).unwrap_or(1)
}

/// Power of two closest to `x` from below (at least 1).
fn pow2_at_most(x: f64) -> usize {
    if x < 2.0 {
        1
    } else {
        1 << (x.log2().floor() as u32)
    }
}

/// Step count: a multiple of `stride` reaching approximately `horizon`.
fn steps_for(horizon: f64, dt: f64, stride: usize) -> usize {
    ((horizon / (dt * stride as f64)).round().max(1.0) as usize) * stride
}

pub const PINCH_1D_GAP: f64 = 0.5;
pub const PINCH_1D_AMPLITUDE: f64 = 2.0;
pub const PINCH_1D_RATE: f64 = 4.0;
pub const PINCH_1D_HORIZON: f64 = 0.1875;

/// Contact interval `[-1/2, 1/2]` on `[-1, 1]`, `f ≡ 1`, walls rising
/// linearly in time; the interval collapses to a single singular point.
pub fn scenario_pinch_1d(h: f64) -> Result<Scenario> {
    pinch_1d_family(
        "pinch-1d",
        h,
        1.0,
        PINCH_1D_GAP,
        PINCH_1D_AMPLITUDE,
        PINCH_1D_RATE,
        PINCH_1D_HORIZON,
        SourceSpec::Constant { value: 1.0 },
    )
}

/// Same geometry with the affine source `f(x) = 1 + x/4`, exercising the
/// Lipschitz right-hand-side regime.
pub fn scenario_pinch_affine_1d(h: f64) -> Result<Scenario> {
    pinch_1d_family(
        "pinch-affine-1d",
        h,
        1.0,
        PINCH_1D_GAP,
        PINCH_1D_AMPLITUDE,
        PINCH_1D_RATE,
        PINCH_1D_HORIZON,
        SourceSpec::Affine {
            a: 1.0,
            b: vec![0.25],
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn pinch_1d_family(
    name: &str,
    h: f64,
    halfwidth: f64,
    gap: f64,
    amplitude: f64,
    rate: f64,
    horizon: f64,
    f: SourceSpec,
) -> Result<Scenario> {
    let dt = h * h;
    // storage cadence 8 dt keeps the slice spacing below (4h)^2 / 2, the
    // square of the smallest analysis radius
    let stride = 8;
    let steps = steps_for(horizon, dt, stride);
    let grid = SpaceTimeGrid::new(1, halfwidth, h, dt, (0.0, steps as f64 * dt))?;
    let profile = ClosedForm::AffineFPinch {
        gap,
        amplitude,
        rate: 0.0,
    };
    Ok(Scenario {
        name: name.into(),
        grid,
        f,
        initial: DataSpec::ClosedForm {
            form: profile.clone(),
        },
        boundary: BoundarySpec::Ramp {
            base: DataSpec::ClosedForm { form: profile },
            rate,
        },
        opts: SolverOpts {
            store_every: stride,
            ..SolverOpts::default()
        },
    })
}

pub const PINCH_STRIP_GAP: f64 = 0.25;
pub const PINCH_STRIP_AMPLITUDE: f64 = 1.25;
pub const PINCH_STRIP_RATE: f64 = 1.0;
pub const PINCH_STRIP_HORIZON: f64 = 0.135;
pub const PINCH_STRIP_HALFWIDTH: f64 = 0.75;

/// Strip contact set `{|x_1| ≤ 1/4}` on `[-3/4, 3/4]²` collapsing onto the
/// line `{x_1 = 0}` at a single time.
///
/// The boundary and initial data are extruded from a matching 1d solve, so
/// the 2d solution is exactly invariant along `x_2` and its singular set is
/// a genuine line segment in the top stratum.
pub fn scenario_pinch_strip_2d(h: f64) -> Result<Scenario> {
    let dt = h * h;
    // keep roughly millisecond slice spacing whatever the resolution, so
    // flatness constants are comparable across refinements
    let stride = pow2_at_most(1e-3 / dt);
    let steps = steps_for(PINCH_STRIP_HORIZON, dt, stride);
    let horizon = steps as f64 * dt;
    let aux = pinch_1d_family(
        "pinch-strip-aux-1d",
        h,
        PINCH_STRIP_HALFWIDTH,
        PINCH_STRIP_GAP,
        PINCH_STRIP_AMPLITUDE,
        PINCH_STRIP_RATE,
        horizon,
        SourceSpec::Constant { value: 1.0 },
    )?;
    let mut aux = aux;
    aux.opts.store_every = 1;
    aux.grid.t_range = (0.0, horizon); // align exactly with the 2d grid
    let report = solver::solve(&aux)?;
    let field1d = report.field.u().clone();

    let grid = SpaceTimeGrid::new(2, PINCH_STRIP_HALFWIDTH, h, dt, (0.0, horizon))?;
    let profile = ClosedForm::AffineFPinch {
        gap: PINCH_STRIP_GAP,
        amplitude: PINCH_STRIP_AMPLITUDE,
        rate: 0.0,
    };
    Ok(Scenario {
        name: "pinch-strip-2d".into(),
        grid,
        f: SourceSpec::Constant { value: 1.0 },
        initial: DataSpec::ClosedForm { form: profile },
        boundary: BoundarySpec::Extruded1d { field: field1d },
        opts: SolverOpts {
            store_every: stride,
            ..SolverOpts::default()
        },
    })
}

/// Stationary singular field: `u = p` for a degenerate profile, constant
/// boundary. Violates strict time monotonicity and gets flagged as such.
pub fn scenario_stationary_quadratic(dim: usize, h: f64, p: &PolyP) -> Result<Scenario> {
    let dt = h * h;
    let steps = (0.02 / dt).round().max(4.0);
    let grid = SpaceTimeGrid::new(dim, 1.0, h, dt, (-steps * dt, 0.0))?;
    if p.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.dim(),
        });
    }
    let form = ClosedForm::StationaryQuadratic {
        polynomial: p.clone(),
    };
    let nsteps = grid.n_time() - 1;
    Ok(Scenario {
        name: "stationary-quadratic".into(),
        grid,
        f: SourceSpec::Constant { value: p.f0() },
        initial: DataSpec::ClosedForm { form: form.clone() },
        boundary: BoundarySpec::Fixed {
            data: DataSpec::ClosedForm { form },
        },
        opts: SolverOpts {
            store_every: divisor_near(nsteps, nsteps / 16),
            ..SolverOpts::default()
        },
    })
}

/// Resolve a scenario family by name at the given resolution.
pub fn scenario_by_name(name: &str, h: f64) -> Result<Scenario> {
    match name {
        "flat" => scenario_flat(1, h, 0.05),
        "flat-2d" => scenario_flat(2, h, 0.05),
        "wave-1d" => scenario_wave_1d(h),
        "pinch-1d" => scenario_pinch_1d(h),
        "pinch-affine-1d" => scenario_pinch_affine_1d(h),
        "pinch-strip-2d" => scenario_pinch_strip_2d(h),
        other => Err(Error::Validation(format!("unknown scenario `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn traveling_wave_values() {
        assert_eq!(traveling_wave(0.0, 0.0), 0.0);
        assert_relative_eq!(
            traveling_wave(1.0, 0.0),
            std::f64::consts::E - 2.0,
            epsilon = 1e-12
        );
        assert_eq!(traveling_wave(-2.0, 0.0), 0.0);
        // u >= 0 and dt u >= 0 on a sample of points
        for i in -20..=20 {
            for k in -10..=10 {
                let (x, t) = (i as f64 * 0.1, k as f64 * 0.05);
                assert!(traveling_wave(x, t) >= 0.0);
                assert!(traveling_wave_dx(x, t) >= 0.0); // = dt u by symmetry in x+t
            }
        }
    }

    #[test]
    fn poly_values_and_validation() {
        let p = PolyP::new(2, vec![1.0, 0.0, 0.0, 1.0], 2.0).unwrap();
        assert_relative_eq!(p.eval(&[1.0, 1.0]), 1.0);
        let p = PolyP::new(2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(p.eval(&[3.0, 7.0]), 4.5);
        // trace mismatch
        assert!(PolyP::new(2, vec![1.0, 0.0, 0.0, 1.0], 1.0).is_err());
        // asymmetric
        assert!(PolyP::new(2, vec![1.0, 0.5, 0.0, 0.0], 1.0).is_err());
        // indefinite
        assert!(PolyP::new(2, vec![2.0, 0.0, 0.0, -1.0], 1.0).is_err());
    }

    #[test]
    fn halfspace_values() {
        assert_relative_eq!(halfspace(1.0, &[1.0, 0.0], &[2.0, 5.0]).unwrap(), 2.0);
        assert_eq!(halfspace(1.0, &[1.0, 0.0], &[-2.0, 5.0]).unwrap(), 0.0);
        assert!(halfspace(1.0, &[2.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn stratum_counts_kernel_dimension() {
        let p = PolyP::new(2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(stratum_of(&p, 1e-8), 1);
        let p = PolyP::new(2, vec![1.0, 0.0, 0.0, 1.0], 2.0).unwrap();
        assert_eq!(stratum_of(&p, 1e-8), 0);
        // tr A = f0 > 0 forces at least one positive eigenvalue
        assert!(PolyP::new(2, vec![0.0; 4], 1.0).is_err());
    }

    #[test]
    fn stratum_invariant_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let l1: f64 = rng.gen_range(0.1..2.0);
            let l2 = if rng.gen_bool(0.5) {
                0.0
            } else {
                rng.gen_range(0.1..2.0)
            };
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (c, s) = (th.cos(), th.sin());
            // R diag(l1, l2) R^T
            let a = vec![
                c * c * l1 + s * s * l2,
                c * s * (l1 - l2),
                c * s * (l1 - l2),
                s * s * l1 + c * c * l2,
            ];
            let p = PolyP::new(2, a, l1 + l2).unwrap();
            let expect = usize::from(l2 == 0.0);
            assert_eq!(stratum_of(&p, 1e-8), expect);
        }
    }

    #[test]
    fn top_eigenvector_of_rank_one() {
        let p = PolyP::new(2, vec![0.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let v = p.top_eigenvector();
        assert_relative_eq!(v[1].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pinch_profile_shape() {
        let cf = ClosedForm::AffineFPinch {
            gap: 0.5,
            amplitude: 2.0,
            rate: 3.0,
        };
        assert_eq!(cf.eval(&[0.2], 0.0).unwrap(), 0.0);
        assert_relative_eq!(cf.eval(&[0.75], 0.0).unwrap(), 2.0 * 0.0625);
        assert_relative_eq!(cf.eval(&[0.0], 0.1).unwrap(), 0.3);
    }
}
