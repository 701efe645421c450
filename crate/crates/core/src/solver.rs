//! Time-steps the parabolic obstacle problem as a sequence of linear
//! complementarity problems.
//!
//! Each implicit Euler step solves, on the interior nodes,
//! `u ≥ 0`, `(u − u_prev)/dt − Δ_h u + f ≥ 0`, with complementarity
//! between the two, by projected red-black SOR. Dirichlet data is pinned
//! on the spatial boundary. Same-color updates read only opposite-color
//! neighbors, so sweeps parallelize with bitwise-reproducible results.

use crate::error::Error;
use crate::fixtures::ClosedForm;
use crate::functionals::ParabolicField;
use crate::mesh::{self, interp_slice, ScalarField, SpaceTimeGrid, StencilField};
use crate::fixtures::PolyP;
use crate::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Right-hand side `f` of `Hu = f χ_{u>0}`; must be positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Constant { value: f64 },
    Affine { a: f64, b: Vec<f64> },
    Tabulated { values: Vec<f64> },
}

impl SourceSpec {
    pub fn at_node(&self, grid: &SpaceTimeGrid, flat: usize) -> f64 {
        match self {
            SourceSpec::Constant { value } => *value,
            SourceSpec::Affine { a, b } => {
                let x = grid.node_coords(flat);
                a + b.iter().zip(&x).map(|(bi, xi)| bi * xi).sum::<f64>()
            }
            SourceSpec::Tabulated { values } => values[flat],
        }
    }

    pub fn at(&self, grid: &SpaceTimeGrid, x: &[f64]) -> Result<f64> {
        match self {
            SourceSpec::Constant { value } => Ok(*value),
            SourceSpec::Affine { a, b } => {
                Ok(a + b.iter().zip(x).map(|(bi, xi)| bi * xi).sum::<f64>())
            }
            SourceSpec::Tabulated { values } => interp_slice(grid, values, x),
        }
    }
}

/// Spatial data profile (initial condition or boundary base).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Zero,
    Constant { value: f64 },
    ClosedForm { form: ClosedForm },
    Tabulated { values: Vec<f64> },
}

impl DataSpec {
    fn at_node(&self, grid: &SpaceTimeGrid, flat: usize, t: f64) -> Result<f64> {
        match self {
            DataSpec::Zero => Ok(0.0),
            DataSpec::Constant { value } => Ok(*value),
            DataSpec::ClosedForm { form } => form.eval(&grid.node_coords(flat), t),
            DataSpec::Tabulated { values } => Ok(values[flat]),
        }
    }
}

/// Time-dependent Dirichlet data on the spatial boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundarySpec {
    /// `g(x, t) = data(x, t)`.
    Fixed { data: DataSpec },
    /// `g(x, t) = base(x, t_begin) + rate (t − t_begin)`.
    Ramp { base: DataSpec, rate: f64 },
    /// Extrude a 1d space-time field along the second axis:
    /// `g(x, t) = field(x_1, t)`. Built programmatically.
    #[serde(skip)]
    Extruded1d { field: ScalarField },
}

impl BoundarySpec {
    fn at_node(&self, grid: &SpaceTimeGrid, flat: usize, t: f64) -> Result<f64> {
        match self {
            BoundarySpec::Fixed { data } => data.at_node(grid, flat, t),
            BoundarySpec::Ramp { base, rate } => {
                Ok(base.at_node(grid, flat, grid.t_range.0)? + rate * (t - grid.t_range.0))
            }
            BoundarySpec::Extruded1d { field } => {
                let x = grid.node_coords(flat);
                field.eval(&[x[0]], t)
            }
        }
    }
}

/// Projected-SOR controls and storage cadence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOpts {
    /// Over-relaxation factor of the projected Gauss-Seidel sweeps.
    pub omega: f64,
    /// Absolute tolerance on the unscaled residual `max |min(u, Au + q)|`.
    ///
    /// The term `(u - u_prev)/dt` cannot be evaluated below roughly
    /// `eps |u| / dt` in floating point, so each step works against
    /// `max(tol_lcp, 4 eps scale / dt)` with `scale` the current state
    /// magnitude; the effective value is reported in the summary.
    pub tol_lcp: f64,
    /// Sweep budget per time step.
    pub max_sweeps: usize,
    /// Keep every k-th time slice in the returned field (must divide the
    /// step count). The solver always advances at the scenario `dt`.
    pub store_every: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tol_lcp: 1e-10,
            max_sweeps: 100_000,
            store_every: 1,
        }
    }
}

/// Full problem definition.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub grid: SpaceTimeGrid,
    pub f: SourceSpec,
    pub initial: DataSpec,
    pub boundary: BoundarySpec,
    pub opts: SolverOpts,
}

impl Scenario {
    /// Eagerly checks every scenario invariant: `f > 0` at all nodes,
    /// nonnegative initial data, boundary data nondecreasing in time.
    pub fn validate(&self) -> Result<f64> {
        let grid = &self.grid;
        let ns = grid.slice_len();
        let mut f_min = f64::INFINITY;
        for flat in 0..ns {
            f_min = f_min.min(self.f.at_node(grid, flat));
        }
        if !(f_min > 0.0) {
            return Err(Error::Validation(format!(
                "f must be positive everywhere, min sampled value {f_min}"
            )));
        }
        for flat in 0..ns {
            let u0 = self.initial.at_node(grid, flat, grid.t_range.0)?;
            if u0 < 0.0 {
                return Err(Error::Validation(format!(
                    "initial data negative at node {flat}: {u0}"
                )));
            }
        }
        let boundary: Vec<usize> = (0..ns).filter(|&i| grid.is_boundary(i)).collect();
        let nt = grid.n_time();
        let mut prev: Vec<f64> = Vec::with_capacity(boundary.len());
        for (pos, &flat) in boundary.iter().enumerate() {
            let g = self.boundary.at_node(grid, flat, grid.t_range.0)?;
            if g < 0.0 {
                return Err(Error::Validation(format!(
                    "boundary data negative at node {flat}: {g}"
                )));
            }
            prev.push(g);
            let _ = pos;
        }
        for k in 1..nt {
            let t = grid.time(k);
            for (pos, &flat) in boundary.iter().enumerate() {
                let g = self.boundary.at_node(grid, flat, t)?;
                if g < prev[pos] - 1e-12 * prev[pos].abs().max(1.0) {
                    return Err(Error::Validation(format!(
                        "boundary data decreasing in t at node {flat}, step {k}"
                    )));
                }
                prev[pos] = g;
            }
        }
        if self.opts.store_every == 0 || !(nt - 1).is_multiple_of(self.opts.store_every) {
            return Err(Error::Validation(format!(
                "store_every = {} must divide the {} time steps",
                self.opts.store_every,
                nt - 1
            )));
        }
        Ok(f_min)
    }

    pub fn f_at(&self, x: &[f64]) -> Result<f64> {
        self.f.at(&self.grid, x)
    }

    /// Grid of the stored field (time step coarsened by `store_every`).
    pub fn stored_grid(&self) -> SpaceTimeGrid {
        let mut g = self.grid.clone();
        g.dt *= self.opts.store_every as f64;
        g
    }
}

struct LcpWorkspace {
    boundary: Vec<usize>,
    f_nodes: Vec<f64>,
    red: Vec<usize>,
    black: Vec<usize>,
}

impl LcpWorkspace {
    fn new(scenario: &Scenario) -> Self {
        let grid = &scenario.grid;
        let ns = grid.slice_len();
        let n = grid.n_axis();
        let parity = |flat: usize| -> usize {
            match grid.dim {
                1 => flat % 2,
                _ => (flat / n + flat % n) % 2,
            }
        };
        let mut red = Vec::new();
        let mut black = Vec::new();
        for flat in 0..ns {
            if grid.is_boundary(flat) {
                continue;
            }
            if parity(flat) == 0 {
                red.push(flat);
            } else {
                black.push(flat);
            }
        }
        Self {
            boundary: (0..ns).filter(|&i| grid.is_boundary(i)).collect(),
            f_nodes: (0..ns).map(|i| scenario.f.at_node(grid, i)).collect(),
            red,
            black,
        }
    }
}

#[derive(Clone, Copy)]
struct RawSlice(*mut f64);
unsafe impl Send for RawSlice {}
unsafe impl Sync for RawSlice {}

impl RawSlice {
    fn get(&self) -> *mut f64 {
        self.0
    }
}

/// One projected-SOR pass over the given color class. Same-color nodes
/// only read opposite-color neighbors, so the pass is order-independent.
fn sweep_color(
    u: &mut [f64],
    parity: usize,
    color: &[usize],
    u_prev: &[f64],
    f_nodes: &[f64],
    grid: &SpaceTimeGrid,
    omega: f64,
) {
    let n = grid.n_axis();
    let inv_dt = 1.0 / grid.dt;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let diag = inv_dt + 2.0 * grid.dim as f64 * inv_h2;
    if grid.dim == 1 {
        for &flat in color {
            let nb = u[flat - 1] + u[flat + 1];
            let ui = u[flat];
            let resid = (ui - u_prev[flat]) * inv_dt - (nb - 2.0 * ui) * inv_h2 + f_nodes[flat];
            u[flat] = (ui - omega * resid / diag).max(0.0);
        }
        return;
    }
    let ptr = RawSlice(u.as_mut_ptr());
    let row_body = |i: usize| {
        // SAFETY: each row is written by exactly one task and only at
        // nodes of one parity; reads touch the opposite parity only.
        unsafe {
            let u = ptr.get();
            let base = i * n;
            let j0 = 1 + (i + 1 + parity) % 2;
            let mut j = j0;
            while j < n - 1 {
                let flat = base + j;
                let nb = *u.add(flat - 1) + *u.add(flat + 1) + *u.add(flat - n) + *u.add(flat + n);
                let ui = *u.add(flat);
                let resid =
                    (ui - u_prev[flat]) * inv_dt - (nb - 4.0 * ui) * inv_h2 + f_nodes[flat];
                *u.add(flat) = (ui - omega * resid / diag).max(0.0);
                j += 2;
            }
        }
    };
    if n >= 256 {
        (1..n - 1).into_par_iter().for_each(row_body);
    } else {
        (1..n - 1).for_each(row_body);
    }
}

fn lcp_residual(
    u: &[f64],
    ws: &LcpWorkspace,
    u_prev: &[f64],
    f_nodes: &[f64],
    grid: &SpaceTimeGrid,
) -> f64 {
    let n = grid.n_axis();
    let inv_dt = 1.0 / grid.dt;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    if grid.dim == 1 {
        let node_res = |&flat: &usize| -> f64 {
            let nb = u[flat - 1] + u[flat + 1];
            let r = (u[flat] - u_prev[flat]) * inv_dt - (nb - 2.0 * u[flat]) * inv_h2
                + f_nodes[flat];
            u[flat].min(r).abs()
        };
        return ws
            .red
            .iter()
            .chain(&ws.black)
            .map(node_res)
            .fold(0.0, f64::max);
    }
    let row_res = |i: usize| -> f64 {
        let base = i * n;
        let mut worst = 0.0f64;
        for j in 1..n - 1 {
            let flat = base + j;
            let nb = u[flat - 1] + u[flat + 1] + u[flat - n] + u[flat + n];
            let r = (u[flat] - u_prev[flat]) * inv_dt - (nb - 4.0 * u[flat]) * inv_h2
                + f_nodes[flat];
            worst = worst.max(u[flat].min(r).abs());
        }
        worst
    };
    if n >= 256 {
        (1..n - 1)
            .into_par_iter()
            .map(row_res)
            .reduce(|| 0.0, f64::max)
    } else {
        (1..n - 1).map(row_res).fold(0.0, f64::max)
    }
}

fn lcp_step(
    scenario: &Scenario,
    ws: &LcpWorkspace,
    u_prev: &[f64],
    guess: &[f64],
    t_next: f64,
) -> Result<(Vec<f64>, usize, f64, f64)> {
    let grid = &scenario.grid;
    let mut u: Vec<f64> = guess.iter().map(|&v| v.max(0.0)).collect();
    for &flat in &ws.boundary {
        u[flat] = scenario.boundary.at_node(grid, flat, t_next)?;
    }
    let scale = u
        .iter()
        .chain(u_prev.iter())
        .fold(1.0f64, |a, &b| a.max(b.abs()));
    let tol = scenario
        .opts
        .tol_lcp
        .max(4.0 * f64::EPSILON * scale / grid.dt);
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    let mut last_batch = 8usize;
    loop {
        let prev_res = residual;
        residual = lcp_residual(&u, ws, u_prev, &ws.f_nodes, grid);
        if residual <= tol {
            return Ok((u, sweeps, residual, tol));
        }
        if sweeps >= scenario.opts.max_sweeps {
            return Err(Error::NoConvergence {
                time_index: 0,
                residual,
                sweeps,
            });
        }
        // Over-relaxation can cycle at rounding scale near the contact
        // boundary; finish the endgame with plain projected Gauss-Seidel,
        // which is monotone.
        let omega = if residual <= 32.0 * tol {
            scenario.opts.omega.min(1.0)
        } else {
            scenario.opts.omega
        };
        // Residual evaluations cost as much as sweeps; size each batch
        // from the observed per-sweep contraction.
        let batch = if prev_res.is_finite() && residual < prev_res {
            let rate = (residual / prev_res).powf(1.0 / last_batch as f64);
            let need = (tol / residual).ln() / rate.min(0.9).ln();
            (need.ceil() as usize).clamp(2, 24)
        } else {
            8
        };
        for _ in 0..batch {
            sweep_color(&mut u, 0, &ws.red, u_prev, &ws.f_nodes, grid, omega);
            sweep_color(&mut u, 1, &ws.black, u_prev, &ws.f_nodes, grid, omega);
            sweeps += 1;
        }
        last_batch = batch;
    }
}

/// Single implicit-Euler complementarity step from `u_prev` to `t_next`.
pub fn step(u_prev: &[f64], scenario: &Scenario, t_next: f64) -> Result<Vec<f64>> {
    let ws = LcpWorkspace::new(scenario);
    let (u, _, _, _) = lcp_step(scenario, &ws, u_prev, u_prev, t_next)?;
    Ok(u)
}

/// Solve diagnostics; `max_negative_u` is exactly zero by projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub scenario: String,
    pub max_lcp_residual: f64,
    /// Largest per-step tolerance actually enforced (see `SolverOpts`).
    pub effective_tol_lcp: f64,
    pub max_negative_u: f64,
    pub max_negative_dt_u: f64,
    pub iterations_per_step: Vec<usize>,
    pub nonstrict_monotone: bool,
    pub f_min: f64,
}

/// Computed solution plus diagnostics.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub field: SolvedField,
    pub summary: SolveSummary,
}

/// Full space-time solve.
pub fn solve(scenario: &Scenario) -> Result<SolveReport> {
    let f_min = scenario.validate()?;
    let grid = &scenario.grid;
    let ns = grid.slice_len();
    let nt = grid.n_time();
    let ws = LcpWorkspace::new(scenario);

    let mut u_cur: Vec<f64> = (0..ns)
        .map(|flat| {
            scenario
                .initial
                .at_node(grid, flat, grid.t_range.0)
                .map(|v| v.max(0.0))
        })
        .collect::<Result<_>>()?;
    let mut u_back = u_cur.clone();

    let stride = scenario.opts.store_every;
    let stored = (nt - 1) / stride + 1;
    let mut values = Vec::with_capacity(stored * ns);
    let mut dt_values = Vec::with_capacity(stored * ns);
    values.extend_from_slice(&u_cur);
    dt_values.resize(ns, 0.0); // patched after the first step

    let mut iterations = Vec::with_capacity(nt - 1);
    let mut max_residual: f64 = 0.0;
    let mut max_tol: f64 = scenario.opts.tol_lcp;
    let mut min_dt_u = f64::INFINITY;
    let mut min_positive_dt_u = f64::INFINITY;
    let mut guess = vec![0.0; ns];

    for k in 1..nt {
        let t_next = grid.time(k);
        // extrapolated warm start, projected
        for i in 0..ns {
            let g = if k >= 2 {
                2.0 * u_cur[i] - u_back[i]
            } else {
                u_cur[i]
            };
            guess[i] = g.max(0.0);
        }
        let (u_next, sweeps, residual, tol_used) =
            lcp_step(scenario, &ws, &u_cur, &guess, t_next).map_err(|e| match e {
                Error::NoConvergence {
                    residual, sweeps, ..
                } => Error::NoConvergence {
                    time_index: k,
                    residual,
                    sweeps,
                },
                other => other,
            })?;
        iterations.push(sweeps);
        max_residual = max_residual.max(residual);
        max_tol = max_tol.max(tol_used);
        let inv_dt = 1.0 / grid.dt;
        for i in 0..ns {
            let rate = (u_next[i] - u_cur[i]) * inv_dt;
            min_dt_u = min_dt_u.min(rate);
            if u_next[i] > 1e-8 {
                min_positive_dt_u = min_positive_dt_u.min(rate);
            }
        }
        if k == 1 {
            // dt u at the initial slice, one-sided forward
            for i in 0..ns {
                dt_values[i] = (u_next[i] - u_cur[i]) * inv_dt;
            }
        }
        if k.is_multiple_of(stride) {
            values.extend_from_slice(&u_next);
            // backward difference at the stored instant, O(dt) accurate
            dt_values.extend((0..ns).map(|i| (u_next[i] - u_cur[i]) * inv_dt));
        }
        u_back = std::mem::replace(&mut u_cur, u_next);
    }

    let stored_grid = scenario.stored_grid();
    let u = ScalarField::from_values(stored_grid.clone(), values)?;
    let dt_u = ScalarField::from_values(stored_grid, dt_values)?;
    let field = SolvedField::new(u, Some(dt_u))?;

    Ok(SolveReport {
        field,
        summary: SolveSummary {
            scenario: scenario.name.clone(),
            max_lcp_residual: max_residual,
            effective_tol_lcp: max_tol,
            max_negative_u: 0.0,
            max_negative_dt_u: min_dt_u.min(0.0),
            iterations_per_step: iterations,
            nonstrict_monotone: min_positive_dt_u <= 1e-12,
            f_min,
        },
    })
}

/// A solved (or sampled) field bundled with its time derivative and
/// stencil images, for interpolated space-time queries.
///
/// When a solver-computed `∂t u` is available, time interpolation is cubic
/// Hermite; otherwise the slices are differenced and interpolation of
/// values stays linear in time.
#[derive(Debug, Clone)]
pub struct SolvedField {
    u: ScalarField,
    dt_u: ScalarField,
    hermite: bool,
    grad: Vec<StencilField>,
    heat: StencilField,
}

impl SolvedField {
    pub fn new(u: ScalarField, dt_u: Option<ScalarField>) -> Result<Self> {
        let hermite = dt_u.is_some();
        let dt_u = match dt_u {
            Some(f) => f,
            None => slice_difference_dt(&u)?,
        };
        let grad = mesh::gradient(&u)?;
        let heat = heat_from_parts(&u, &dt_u)?;
        Ok(Self {
            u,
            dt_u,
            hermite,
            grad,
            heat,
        })
    }

    /// Wrap a sampled analytic field (no solver derivative available).
    pub fn from_scalar(u: ScalarField) -> Result<Self> {
        Self::new(u, None)
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.u.grid()
    }

    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        let grid = self.u.grid();
        let (k, theta, ddt) = locate_time(grid, t)?;
        let v0 = self.u.spatial_at(k, x, 0)?;
        if theta == 0.0 {
            return Ok(v0);
        }
        let v1 = self.u.spatial_at(k + 1, x, 0)?;
        if !self.hermite {
            return Ok((1.0 - theta) * v0 + theta * v1);
        }
        let m0 = self.dt_u.spatial_at(k, x, 0)?;
        let m1 = self.dt_u.spatial_at(k + 1, x, 0)?;
        let t2 = theta * theta;
        let t3 = t2 * theta;
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * v0
            + (t3 - 2.0 * t2 + theta) * ddt * m0
            + (-2.0 * t3 + 3.0 * t2) * v1
            + (t3 - t2) * ddt * m1)
    }

    pub fn dt(&self, x: &[f64], t: f64) -> Result<f64> {
        let grid = self.u.grid();
        let (k, theta, _) = locate_time(grid, t)?;
        let m0 = self.dt_u.spatial_at(k, x, 0)?;
        if theta == 0.0 {
            return Ok(m0);
        }
        let m1 = self.dt_u.spatial_at(k + 1, x, 0)?;
        Ok((1.0 - theta) * m0 + theta * m1)
    }

    pub fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.grad.iter().map(|g| g.eval(x, t)).collect()
    }

    /// `Hu = Δu − ∂t u`, interpolated from the stencil image.
    pub fn heat_at(&self, x: &[f64], t: f64) -> Result<f64> {
        self.heat.eval(x, t)
    }

    /// Contact set `{u ≤ tol}` at the stored slice nearest to `t`,
    /// as sorted flat node indices.
    pub fn contact_set(&self, t: f64, tol_contact: f64) -> Result<Vec<usize>> {
        let grid = self.u.grid();
        let eps = 1e-9 * (grid.t_range.1 - grid.t_range.0).max(1.0);
        if t < grid.t_range.0 - eps || t > grid.t_range.1 + eps {
            return Err(Error::OutOfDomain { x: vec![], t });
        }
        let k = (((t - grid.t_range.0) / grid.dt).round() as usize).min(grid.n_time() - 1);
        Ok(contact_of_slice(self.u.slice(k), tol_contact))
    }
}

fn contact_of_slice(slice: &[f64], tol: f64) -> Vec<usize> {
    slice
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= tol)
        .map(|(i, _)| i)
        .collect()
}

fn locate_time(grid: &SpaceTimeGrid, t: f64) -> Result<(usize, f64, f64)> {
    let eps = 1e-9 * (grid.t_range.1 - grid.t_range.0).max(1.0);
    if t < grid.t_range.0 - eps || t > grid.t_range.1 + eps {
        return Err(Error::OutOfDomain { x: vec![], t });
    }
    let nt = grid.n_time();
    let raw = (t - grid.t_range.0) / grid.dt;
    let k = (raw.floor() as isize).clamp(0, nt as isize - 2) as usize;
    let theta = ((t - grid.time(k)) / grid.dt).clamp(0.0, 1.0);
    Ok((k, theta, grid.dt))
}

fn slice_difference_dt(u: &ScalarField) -> Result<ScalarField> {
    let grid = u.grid().clone();
    let ns = grid.slice_len();
    let nt = grid.n_time();
    let mut values = Vec::with_capacity(ns * nt);
    for k in 0..nt {
        for flat in 0..ns {
            let v = if k == 0 {
                (u.node(1, flat) - u.node(0, flat)) / grid.dt
            } else if k == nt - 1 {
                (u.node(k, flat) - u.node(k - 1, flat)) / grid.dt
            } else {
                (u.node(k + 1, flat) - u.node(k - 1, flat)) / (2.0 * grid.dt)
            };
            values.push(v);
        }
    }
    ScalarField::from_values(grid, values)
}

/// Spatial Laplacian of the stored slices minus the stored derivative.
fn heat_from_parts(u: &ScalarField, dt_u: &ScalarField) -> Result<StencilField> {
    let lap = mesh::laplacian(u)?;
    let grid = u.grid().clone();
    let ns = grid.slice_len();
    let mut values = Vec::with_capacity(u.values().len());
    for k in 0..grid.n_time() {
        for flat in 0..ns {
            values.push(lap.node(k, flat) - dt_u.node(k, flat));
        }
    }
    Ok(StencilField::with_margin(
        ScalarField::from_values(grid, values)?,
        1,
    ))
}

/// Locate the last stored slice whose contact set is nonempty, by binary
/// search (the contact set shrinks in time), then refine the minimizer
/// spatially by per-axis parabolic interpolation.
pub fn last_contact(field: &SolvedField, tol_contact: f64) -> Option<(Vec<f64>, f64, usize)> {
    let u = field.u();
    let grid = u.grid();
    let nt = grid.n_time();
    let nonempty = |k: usize| !contact_of_slice(u.slice(k), tol_contact).is_empty();
    if !nonempty(0) {
        return None;
    }
    let (mut lo, mut hi) = (0usize, nt - 1);
    if nonempty(hi) {
        lo = hi;
    } else {
        // invariant: nonempty(lo), empty(hi)
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if nonempty(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let slice = u.slice(lo);
    let min_val = slice.iter().copied().fold(f64::INFINITY, f64::min);
    // the minimum may be attained along a whole set (a collapsing line);
    // break ties toward the domain center for a canonical representative
    let argmin = slice
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= min_val)
        .min_by(|a, b| {
            let d = |flat: usize| -> f64 {
                grid.node_coords(flat).iter().map(|c| c * c).sum()
            };
            d(a.0).partial_cmp(&d(b.0)).unwrap()
        })
        .map(|(i, _)| i)?;
    let n = grid.n_axis();
    let mut x = grid.node_coords(argmin);
    // per-axis parabolic refinement of the minimizer
    let coords_idx: Vec<usize> = match grid.dim {
        1 => vec![argmin],
        _ => vec![argmin / n, argmin % n],
    };
    for (axis, &i) in coords_idx.iter().enumerate() {
        if i == 0 || i + 1 >= n {
            continue;
        }
        let stride = match grid.dim {
            1 => 1,
            _ => {
                if axis == 0 {
                    n
                } else {
                    1
                }
            }
        };
        let vm = slice[argmin - stride];
        let v0 = slice[argmin];
        let vp = slice[argmin + stride];
        let denom = vm - 2.0 * v0 + vp;
        if denom > 0.0 {
            let delta = 0.5 * (vm - vp) / denom;
            x[axis] += delta.clamp(-0.5, 0.5) * grid.h;
        }
    }
    Some((x, grid.time(lo), lo))
}

/// Analysis view `w(y, s) = u(x0 + y, t0 + s) − p(y)` of a solved field
/// around a base point, with an optional subtracted profile.
pub struct Window<'a> {
    field: &'a SolvedField,
    base_x: Vec<f64>,
    base_t: f64,
    p: Option<PolyP>,
}

impl<'a> Window<'a> {
    pub fn new(field: &'a SolvedField, base_x: &[f64], base_t: f64, p: Option<PolyP>) -> Self {
        Self {
            field,
            base_x: base_x.to_vec(),
            base_t,
            p,
        }
    }

    fn shift(&self, y: &[f64], s: f64) -> (Vec<f64>, f64) {
        (
            y.iter().zip(&self.base_x).map(|(a, b)| a + b).collect(),
            self.base_t + s,
        )
    }
}

impl ParabolicField for Window<'_> {
    fn dim(&self) -> usize {
        self.field.grid().dim
    }

    fn value(&self, y: &[f64], s: f64) -> Result<f64> {
        let (x, t) = self.shift(y, s);
        let mut v = self.field.value(&x, t)?;
        if let Some(p) = &self.p {
            v -= p.eval(y);
        }
        Ok(v)
    }

    fn gradient(&self, y: &[f64], s: f64) -> Result<Vec<f64>> {
        let (x, t) = self.shift(y, s);
        let mut g = self.field.gradient(&x, t)?;
        if let Some(p) = &self.p {
            for (gi, pi) in g.iter_mut().zip(p.grad(y)) {
                *gi -= pi;
            }
        }
        Ok(g)
    }

    fn dt(&self, y: &[f64], s: f64) -> Result<f64> {
        let (x, t) = self.shift(y, s);
        self.field.dt(&x, t)
    }

    fn heat(&self, y: &[f64], s: f64) -> Result<f64> {
        let (x, t) = self.shift(y, s);
        let mut v = self.field.heat_at(&x, t)?;
        if let Some(p) = &self.p {
            v -= p.f0();
        }
        Ok(v)
    }
}

/// Binary field dump: row-major spatial, time-major outermost, 64-bit
/// little-endian floats, plus a JSON header.
#[derive(Debug, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dim: usize,
    pub spatial_halfwidth: f64,
    pub h: f64,
    pub dt: f64,
    pub t_range: (f64, f64),
    pub shape: Vec<usize>,
    pub layout: String,
}

pub fn dump_field(field: &ScalarField, base: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let grid = field.grid();
    let mut shape = vec![grid.n_time()];
    for _ in 0..grid.dim {
        shape.push(grid.n_axis());
    }
    let header = FieldHeader {
        dim: grid.dim,
        spatial_halfwidth: grid.spatial_halfwidth,
        h: grid.h,
        dt: grid.dt,
        t_range: grid.t_range,
        shape,
        layout: "time-major,row-major-spatial,f64,little-endian".into(),
    };
    let bin_path = base.with_extension("f64");
    let json_path = base.with_extension("json");
    let mut bin = std::io::BufWriter::new(std::fs::File::create(&bin_path)?);
    for v in field.values() {
        bin.write_all(&v.to_le_bytes())?;
    }
    bin.flush()?;
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&header).expect("header serializes"),
    )?;
    Ok((bin_path, json_path))
}

pub fn load_field(base: &Path) -> Result<ScalarField> {
    let header: FieldHeader = serde_json::from_str(&std::fs::read_to_string(
        base.with_extension("json"),
    )?)
    .map_err(|e| Error::Validation(format!("bad field header: {e}")))?;
    let grid = SpaceTimeGrid::new(
        header.dim,
        header.spatial_halfwidth,
        header.h,
        header.dt,
        header.t_range,
    )?;
    let mut bytes = Vec::new();
    std::fs::File::open(base.with_extension("f64"))?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Validation("field dump truncated".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarField::from_values(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, traveling_wave};
    fn flat_scenario(h: f64) -> Scenario {
        fixtures::scenario_flat(1, h, 0.02).unwrap()
    }

    #[test]
    fn flat_scenario_stays_zero() {
        let report = solve(&flat_scenario(1.0 / 32.0)).unwrap();
        assert!(report.field.u().values().iter().all(|&v| v == 0.0));
        assert_eq!(report.summary.max_lcp_residual, 0.0);
        assert_eq!(report.summary.max_negative_u, 0.0);
        assert!(report.summary.iterations_per_step.iter().all(|&s| s == 0));
    }

    #[test]
    fn step_keeps_full_contact() {
        let sc = flat_scenario(1.0 / 16.0);
        let ns = sc.grid.slice_len();
        let u = step(&vec![0.0; ns], &sc, sc.grid.time(1)).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    /// Independent tridiagonal (Thomas) solve of the unconstrained
    /// implicit Euler step.
    fn thomas_step(u_prev: &[f64], grid: &SpaceTimeGrid, f: f64, g_lo: f64, g_hi: f64) -> Vec<f64> {
        let n = u_prev.len();
        let inv_dt = 1.0 / grid.dt;
        let inv_h2 = 1.0 / (grid.h * grid.h);
        let diag = inv_dt + 2.0 * inv_h2;
        let off = -inv_h2;
        let m = n - 2;
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        for i in 0..m {
            let mut rhs = u_prev[i + 1] * inv_dt - f;
            if i == 0 {
                rhs -= off * g_lo;
            }
            if i == m - 1 {
                rhs -= off * g_hi;
            }
            if i == 0 {
                c[0] = off / diag;
                d[0] = rhs / diag;
            } else {
                let w = diag - off * c[i - 1];
                c[i] = off / w;
                d[i] = (rhs - off * d[i - 1]) / w;
            }
        }
        let mut x = vec![0.0; m];
        x[m - 1] = d[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        let mut out = vec![0.0; n];
        out[0] = g_lo;
        out[n - 1] = g_hi;
        out[1..n - 1].copy_from_slice(&x);
        out
    }

    #[test]
    fn step_matches_unconstrained_solve_away_from_contact() {
        let h = 1.0 / 64.0;
        let grid = SpaceTimeGrid::new(1, 1.0, h, h * h, (0.0, 4.0 * h * h)).unwrap();
        let ns = grid.slice_len();
        let u_prev: Vec<f64> = (0..ns)
            .map(|i| 12.0 + grid.coord(i) + 0.5 * grid.coord(i).powi(2))
            .collect();
        let sc = Scenario {
            name: "unconstrained".into(),
            grid: grid.clone(),
            f: SourceSpec::Constant { value: 1.0 },
            initial: DataSpec::Tabulated {
                values: u_prev.clone(),
            },
            boundary: BoundarySpec::Fixed {
                data: DataSpec::Tabulated {
                    values: u_prev.clone(),
                },
            },
            opts: SolverOpts::default(),
        };
        let got = step(&u_prev, &sc, grid.time(1)).unwrap();
        let want = thomas_step(&u_prev, &grid, 1.0, u_prev[0], u_prev[ns - 1]);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    fn wave_error_at_final(h: f64) -> f64 {
        let sc = fixtures::scenario_wave_1d(h).unwrap();
        let report = solve(&sc).unwrap();
        let u = report.field.u();
        let grid = u.grid();
        let k = grid.n_time() - 1;
        let t = grid.time(k);
        (0..grid.slice_len())
            .map(|i| (u.node(k, i) - traveling_wave(grid.coord(i), t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn traveling_wave_coarse_convergence() {
        let h = 1.0 / 64.0;
        let err = wave_error_at_final(h);
        assert!(err <= 5.0 * h, "error {err} exceeds 5h = {}", 5.0 * h);
    }

    #[test]
    fn traveling_wave_discrete_monotonicity() {
        let sc = fixtures::scenario_wave_1d(1.0 / 64.0).unwrap();
        let report = solve(&sc).unwrap();
        assert!(report.summary.max_negative_dt_u >= -5.0 / 64.0);
        assert!(!report.summary.nonstrict_monotone);
        assert!(report.summary.max_lcp_residual <= report.summary.effective_tol_lcp);
    }

    #[test]
    fn comparison_principle_for_raised_boundary() {
        let h = 1.0 / 32.0;
        let mut lo = fixtures::scenario_pinch_1d(h).unwrap();
        lo.grid.t_range = (0.0, 48.0 * lo.grid.dt);
        lo.opts.store_every = 1;
        let mut hi = lo.clone();
        hi.boundary = match hi.boundary {
            BoundarySpec::Ramp { base, rate } => BoundarySpec::Ramp {
                base,
                rate: rate + 1.0,
            },
            other => other,
        };
        let a = solve(&lo).unwrap();
        let b = solve(&hi).unwrap();
        for (x, y) in a.field.u().values().iter().zip(b.field.u().values()) {
            assert!(*y >= *x - 1e-8, "comparison violated: {y} < {x}");
        }
    }

    #[test]
    fn contact_set_cases() {
        let report = solve(&flat_scenario(1.0 / 32.0)).unwrap();
        let grid = report.field.grid().clone();
        let all = report.field.contact_set(grid.t_range.1, 1e-12).unwrap();
        assert_eq!(all.len(), grid.slice_len());

        let sc = fixtures::scenario_wave_1d(1.0 / 64.0).unwrap();
        let report = solve(&sc).unwrap();
        let contact = report.field.contact_set(0.0, 1e-6).unwrap();
        let grid = report.field.grid();
        // free boundary at x = 0 when t = 0; contact nodes sit at x <= O(h)
        let max_x = contact
            .iter()
            .map(|&i| grid.coord(i))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max_x.abs() <= 4.0 * grid.h, "contact reaches {max_x}");
        assert!(!contact.is_empty());

        // strictly positive field: empty set
        let pos = SolvedField::from_scalar(ScalarField::from_fn(
            SpaceTimeGrid::new(1, 1.0, 0.25, 0.25, (0.0, 1.0)).unwrap(),
            |_, _| 2.0,
        ))
        .unwrap();
        assert!(pos.contact_set(0.5, 1e-9).unwrap().is_empty());
    }

    #[test]
    fn stationary_quadratic_is_flagged_nonstrict() {
        let p = crate::fixtures::PolyP::new(1, vec![1.0], 1.0).unwrap();
        let sc = fixtures::scenario_stationary_quadratic(1, 1.0 / 32.0, &p).unwrap();
        let report = solve(&sc).unwrap();
        assert!(report.summary.nonstrict_monotone);
        // the quadratic is a discrete steady state
        let u = report.field.u();
        let grid = u.grid();
        let k = grid.n_time() - 1;
        for i in 0..grid.slice_len() {
            let want = 0.5 * grid.coord(i).powi(2);
            assert!((u.node(k, i) - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn pinch_contact_collapses() {
        let sc = fixtures::scenario_pinch_1d(1.0 / 64.0).unwrap();
        let report = solve(&sc).unwrap();
        let grid = report.field.grid().clone();
        // contact present initially, gone at the end
        assert!(!report
            .field
            .contact_set(grid.t_range.0, 1e-10)
            .unwrap()
            .is_empty());
        assert!(report
            .field
            .contact_set(grid.t_range.1, 1e-10)
            .unwrap()
            .is_empty());
        let (x, t, _) = last_contact(&report.field, 1e-10).unwrap();
        assert!(x[0].abs() <= 2.0 * grid.h, "last contact at {x:?}");
        assert!(t > grid.t_range.0 && t < grid.t_range.1, "t* = {t}");
    }

    #[test]
    fn scenario_validation_errors() {
        let mut sc = flat_scenario(1.0 / 16.0);
        sc.f = SourceSpec::Constant { value: -1.0 };
        assert!(matches!(sc.validate(), Err(Error::Validation(_))));

        let mut sc = flat_scenario(1.0 / 16.0);
        sc.initial = DataSpec::Constant { value: -0.5 };
        assert!(sc.validate().is_err());

        let mut sc = flat_scenario(1.0 / 16.0);
        sc.boundary = BoundarySpec::Ramp {
            base: DataSpec::Constant { value: 1.0 },
            rate: -3.0,
        };
        assert!(sc.validate().is_err());
    }

    #[test]
    fn solved_field_hermite_queries() {
        let sc = fixtures::scenario_wave_1d(1.0 / 64.0).unwrap();
        let report = solve(&sc).unwrap();
        let f = &report.field;
        // compare against the closed form well inside the positivity set
        let (x, t) = (1.3, 0.06);
        assert!((f.value(&[x], t).unwrap() - traveling_wave(x, t)).abs() < 1e-3);
        let dt_exact = (x + t).exp() - 1.0;
        assert!((f.dt(&[x], t).unwrap() - dt_exact).abs() < 1e-2);
        let dx_exact = (x + t).exp() - 1.0;
        assert!((f.gradient(&[x], t).unwrap()[0] - dx_exact).abs() < 1e-2);
        // Hu = 1 in the positivity set
        assert!((f.heat_at(&[x], t).unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn dump_and_load_round_trip() {
        let sc = flat_scenario(1.0 / 16.0);
        let report = solve(&sc).unwrap();
        let dir = std::env::temp_dir().join("parobs_dump_test");
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("field");
        dump_field(report.field.u(), &base).unwrap();
        let loaded = load_field(&base).unwrap();
        assert_eq!(loaded.grid(), report.field.grid());
        assert_eq!(loaded.values(), report.field.u().values());
    }

    #[test]
    fn window_subtracts_profile() {
        let p = crate::fixtures::PolyP::new(1, vec![1.0], 1.0).unwrap();
        let sc = fixtures::scenario_stationary_quadratic(1, 1.0 / 32.0, &p).unwrap();
        let report = solve(&sc).unwrap();
        let w = Window::new(&report.field, &[0.0], -0.001, Some(p));
        use crate::functionals::ParabolicField;
        // u == p and 0.25 is a grid node, so the window vanishes there
        // (off nodes the multilinear interpolation of a quadratic is O(h^2))
        assert!(w.value(&[0.25], -0.003).unwrap().abs() < 1e-9);
        assert!(w.heat(&[0.25], -0.003).unwrap().abs() < 1e-9);
        assert!(w.value(&[0.2], -0.003).unwrap().abs() < 2e-3);
    }
}
