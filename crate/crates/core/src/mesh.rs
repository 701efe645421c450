//! Structured space-time grids, discrete scalar fields, interpolation,
//! and discrete differential operators.
//!
//! Grids are uniform tensor products over the cube `[-L, L]^dim` times a
//! time interval. Fields are immutable after construction; all queries are
//! pure and safe to call concurrently.

use crate::error::Error;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Uniform tensor grid over `[-L, L]^dim x [t_begin, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub dim: usize,
    pub spatial_halfwidth: f64,
    pub h: f64,
    pub dt: f64,
    pub t_range: (f64, f64),
}

fn near_integer(x: f64) -> Option<usize> {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) && r >= 0.0 {
        Some(r as usize)
    } else {
        None
    }
}

impl SpaceTimeGrid {
    pub fn new(
        dim: usize,
        spatial_halfwidth: f64,
        h: f64,
        dt: f64,
        t_range: (f64, f64),
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Validation(format!("dim must be 1 or 2, got {dim}")));
        }
        if !(h > 0.0) || !(dt > 0.0) || !(spatial_halfwidth > 0.0) {
            return Err(Error::Validation(
                "h, dt and spatial halfwidth must be positive".into(),
            ));
        }
        if !(t_range.0 < t_range.1) {
            return Err(Error::Validation("t_begin must be below t_end".into()));
        }
        if near_integer(2.0 * spatial_halfwidth / h).is_none() {
            return Err(Error::Validation(format!(
                "2L/h = {} is not an integer",
                2.0 * spatial_halfwidth / h
            )));
        }
        if near_integer((t_range.1 - t_range.0) / dt).is_none() {
            return Err(Error::Validation(format!(
                "(t_end - t_begin)/dt = {} is not an integer",
                (t_range.1 - t_range.0) / dt
            )));
        }
        Ok(Self {
            dim,
            spatial_halfwidth,
            h,
            dt,
            t_range,
        })
    }

    /// Nodes per spatial axis, `2L/h + 1`.
    pub fn n_axis(&self) -> usize {
        near_integer(2.0 * self.spatial_halfwidth / self.h).unwrap() + 1
    }

    /// Number of time slices.
    pub fn n_time(&self) -> usize {
        near_integer((self.t_range.1 - self.t_range.0) / self.dt).unwrap() + 1
    }

    /// Nodes per spatial slice.
    pub fn slice_len(&self) -> usize {
        self.n_axis().pow(self.dim as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.spatial_halfwidth + i as f64 * self.h
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_range.0 + k as f64 * self.dt
    }

    /// Spatial coordinates of the flat in-slice index.
    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        let n = self.n_axis();
        match self.dim {
            1 => vec![self.coord(flat)],
            _ => vec![self.coord(flat / n), self.coord(flat % n)],
        }
    }

    /// True when the flat in-slice index lies on the spatial boundary.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let n = self.n_axis();
        match self.dim {
            1 => flat == 0 || flat == n - 1,
            _ => {
                let (i, j) = (flat / n, flat % n);
                i == 0 || i == n - 1 || j == 0 || j == n - 1
            }
        }
    }

    fn locate(&self, coord: f64, margin: usize) -> Result<(usize, f64)> {
        let n = self.n_axis();
        let lo = -self.spatial_halfwidth + margin as f64 * self.h;
        let hi = self.spatial_halfwidth - margin as f64 * self.h;
        let eps = 1e-9 * self.spatial_halfwidth.max(1.0);
        if coord < lo - eps || coord > hi + eps {
            return Err(Error::OutOfDomain {
                x: vec![coord],
                t: f64::NAN,
            });
        }
        let raw = (coord + self.spatial_halfwidth) / self.h;
        let i = (raw.floor() as isize).clamp(margin as isize, (n - 2 - margin) as isize) as usize;
        let theta = (coord - self.coord(i)) / self.h;
        Ok((i, theta.clamp(0.0, 1.0)))
    }

    fn locate_time(&self, t: f64) -> Result<(usize, f64)> {
        let nt = self.n_time();
        let eps = 1e-9 * (self.t_range.1 - self.t_range.0).max(1.0);
        if t < self.t_range.0 - eps || t > self.t_range.1 + eps {
            return Err(Error::OutOfDomain { x: vec![], t });
        }
        let raw = (t - self.t_range.0) / self.dt;
        let k = (raw.floor() as isize).clamp(0, nt as isize - 2) as usize;
        let theta = (t - self.time(k)) / self.dt;
        Ok((k, theta.clamp(0.0, 1.0)))
    }
}

/// Discrete space-time scalar function on a [`SpaceTimeGrid`].
///
/// Storage is time-major outermost, row-major within each spatial slice.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        let expect = grid.n_time() * grid.slice_len();
        if values.len() != expect {
            return Err(Error::Validation(format!(
                "value array has {} entries, grid has {} nodes",
                values.len(),
                expect
            )));
        }
        Ok(Self { grid, values })
    }

    /// Sample a closed-form function at every node.
    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let ns = grid.slice_len();
        let mut values = Vec::with_capacity(grid.n_time() * ns);
        for k in 0..grid.n_time() {
            let t = grid.time(k);
            for flat in 0..ns {
                values.push(f(&grid.node_coords(flat), t));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let ns = self.grid.slice_len();
        &self.values[k * ns..(k + 1) * ns]
    }

    pub fn node(&self, k: usize, flat: usize) -> f64 {
        self.values[k * self.grid.slice_len() + flat]
    }

    /// Multilinear-in-space, linear-in-time interpolation; exact at nodes.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        self.eval_margin(x, t, 0)
    }

    fn spatial_interp(&self, k: usize, x: &[f64], margin: usize) -> Result<f64> {
        let n = self.grid.n_axis();
        let base = k * self.grid.slice_len();
        match self.grid.dim {
            1 => {
                let (i, a) = self.grid.locate(x[0], margin)?;
                Ok((1.0 - a) * self.values[base + i] + a * self.values[base + i + 1])
            }
            _ => {
                let (i, a) = self.grid.locate(x[0], margin)?;
                let (j, b) = self.grid.locate(x[1], margin)?;
                let v00 = self.values[base + i * n + j];
                let v01 = self.values[base + i * n + j + 1];
                let v10 = self.values[base + (i + 1) * n + j];
                let v11 = self.values[base + (i + 1) * n + j + 1];
                Ok((1.0 - a) * ((1.0 - b) * v00 + b * v01) + a * ((1.0 - b) * v10 + b * v11))
            }
        }
    }

    pub(crate) fn spatial_at(&self, k: usize, x: &[f64], margin: usize) -> Result<f64> {
        self.spatial_interp(k, x, margin)
    }

    fn eval_margin(&self, x: &[f64], t: f64, margin: usize) -> Result<f64> {
        if x.len() != self.grid.dim {
            return Err(Error::DimensionMismatch {
                expected: self.grid.dim,
                got: x.len(),
            });
        }
        let (k, c) = self.grid.locate_time(t).map_err(|_| Error::OutOfDomain {
            x: x.to_vec(),
            t,
        })?;
        let lo = self.spatial_interp(k, x, margin)?;
        if c == 0.0 {
            return Ok(lo);
        }
        let hi = self.spatial_interp(k + 1, x, margin)?;
        Ok((1.0 - c) * lo + c * hi)
    }
}

/// Derived field (a stencil image such as `∇w`, `Hw` or `Zw`).
///
/// Carries the number of outermost spatial node rings on which the stencil
/// was not applied; queries inside that ring are rejected rather than
/// extrapolated.
#[derive(Debug, Clone)]
pub struct StencilField {
    field: ScalarField,
    spatial_margin: usize,
}

impl StencilField {
    pub(crate) fn with_margin(field: ScalarField, spatial_margin: usize) -> Self {
        Self {
            field,
            spatial_margin,
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.field.grid()
    }

    pub fn spatial_margin(&self) -> usize {
        self.spatial_margin
    }

    pub fn node(&self, k: usize, flat: usize) -> f64 {
        self.field.node(k, flat)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        self.field.eval_margin(x, t, self.spatial_margin)
    }
}

/// Multilinear interpolation of a single spatial slice.
pub fn interp_slice(grid: &SpaceTimeGrid, slice: &[f64], x: &[f64]) -> Result<f64> {
    if slice.len() != grid.slice_len() {
        return Err(Error::Validation(format!(
            "slice has {} entries, grid has {}",
            slice.len(),
            grid.slice_len()
        )));
    }
    let n = grid.n_axis();
    match grid.dim {
        1 => {
            let (i, a) = grid.locate(x[0], 0)?;
            Ok((1.0 - a) * slice[i] + a * slice[i + 1])
        }
        _ => {
            let (i, a) = grid.locate(x[0], 0)?;
            let (j, b) = grid.locate(x[1], 0)?;
            Ok((1.0 - a) * ((1.0 - b) * slice[i * n + j] + b * slice[i * n + j + 1])
                + a * ((1.0 - b) * slice[(i + 1) * n + j] + b * slice[(i + 1) * n + j + 1]))
        }
    }
}

fn require_axis_nodes(grid: &SpaceTimeGrid, need: usize) -> Result<()> {
    if grid.n_axis() < need {
        return Err(Error::GridTooSmall(format!(
            "{} nodes per axis, need {need}",
            grid.n_axis()
        )));
    }
    Ok(())
}

/// Discrete time derivative at slice `k`, one-sided at the two endpoints.
fn dt_node(field: &ScalarField, k: usize, flat: usize) -> f64 {
    let nt = field.grid().n_time();
    let dt = field.grid().dt;
    if k == 0 {
        (field.node(1, flat) - field.node(0, flat)) / dt
    } else if k == nt - 1 {
        (field.node(k, flat) - field.node(k - 1, flat)) / dt
    } else {
        (field.node(k + 1, flat) - field.node(k - 1, flat)) / (2.0 * dt)
    }
}

/// Spatial gradient: centered second-order differences in the interior,
/// first-order one-sided at the spatial boundary.
pub fn gradient(field: &ScalarField) -> Result<Vec<StencilField>> {
    let grid = field.grid();
    require_axis_nodes(grid, 3)?;
    let n = grid.n_axis();
    let ns = grid.slice_len();
    let stride = |axis: usize| -> usize {
        match grid.dim {
            1 => 1,
            _ => {
                if axis == 0 {
                    n
                } else {
                    1
                }
            }
        }
    };
    let axis_index = |flat: usize, axis: usize| -> usize {
        match grid.dim {
            1 => flat,
            _ => {
                if axis == 0 {
                    flat / n
                } else {
                    flat % n
                }
            }
        }
    };
    let mut out = Vec::with_capacity(grid.dim);
    for axis in 0..grid.dim {
        let s = stride(axis);
        let mut values = Vec::with_capacity(field.values().len());
        for k in 0..grid.n_time() {
            let base = k * ns;
            let v = field.values();
            for flat in 0..ns {
                let i = axis_index(flat, axis);
                let g = if i == 0 {
                    (v[base + flat + s] - v[base + flat]) / grid.h
                } else if i == n - 1 {
                    (v[base + flat] - v[base + flat - s]) / grid.h
                } else {
                    (v[base + flat + s] - v[base + flat - s]) / (2.0 * grid.h)
                };
                values.push(g);
            }
        }
        out.push(StencilField {
            field: ScalarField::from_values(grid.clone(), values)?,
            spatial_margin: 0,
        });
    }
    Ok(out)
}

fn interior(grid: &SpaceTimeGrid, flat: usize) -> bool {
    !grid.is_boundary(flat)
}

/// Discrete spatial Laplacian; interior spatial nodes only.
pub fn laplacian(field: &ScalarField) -> Result<StencilField> {
    let grid = field.grid();
    require_axis_nodes(grid, 3)?;
    let n = grid.n_axis();
    let ns = grid.slice_len();
    let h2 = grid.h * grid.h;
    let mut values = vec![0.0; field.values().len()];
    for k in 0..grid.n_time() {
        let base = k * ns;
        let v = field.values();
        for flat in 0..ns {
            if !interior(grid, flat) {
                continue;
            }
            values[base + flat] = match grid.dim {
                1 => (v[base + flat + 1] - 2.0 * v[base + flat] + v[base + flat - 1]) / h2,
                _ => {
                    (v[base + flat + 1] + v[base + flat - 1] + v[base + flat + n]
                        + v[base + flat - n]
                        - 4.0 * v[base + flat])
                        / h2
                }
            };
        }
    }
    Ok(StencilField {
        field: ScalarField::from_values(grid.clone(), values)?,
        spatial_margin: 1,
    })
}

/// Discrete `Hw = Δw − ∂t w`; interior spatial nodes only.
pub fn heat_residual(field: &ScalarField) -> Result<StencilField> {
    let grid = field.grid();
    require_axis_nodes(grid, 3)?;
    if grid.n_time() < 2 {
        return Err(Error::GridTooSmall("need at least 2 time slices".into()));
    }
    let n = grid.n_axis();
    let ns = grid.slice_len();
    let h2 = grid.h * grid.h;
    let mut values = vec![0.0; field.values().len()];
    for k in 0..grid.n_time() {
        let base = k * ns;
        let v = field.values();
        for flat in 0..ns {
            if !interior(grid, flat) {
                continue;
            }
            let lap = match grid.dim {
                1 => (v[base + flat + 1] - 2.0 * v[base + flat] + v[base + flat - 1]) / h2,
                _ => {
                    (v[base + flat + 1] + v[base + flat - 1] + v[base + flat + n]
                        + v[base + flat - n]
                        - 4.0 * v[base + flat])
                        / h2
                }
            };
            values[base + flat] = lap - dt_node(field, k, flat);
        }
    }
    Ok(StencilField {
        field: ScalarField::from_values(grid.clone(), values)?,
        spatial_margin: 1,
    })
}

/// Discrete `Zw = x · ∇w + 2t ∂t w`; interior spatial nodes only.
pub fn z_field(field: &ScalarField) -> Result<StencilField> {
    let grid = field.grid();
    require_axis_nodes(grid, 3)?;
    if grid.n_time() < 2 {
        return Err(Error::GridTooSmall("need at least 2 time slices".into()));
    }
    let n = grid.n_axis();
    let ns = grid.slice_len();
    let mut values = vec![0.0; field.values().len()];
    for k in 0..grid.n_time() {
        let base = k * ns;
        let t = grid.time(k);
        let v = field.values();
        for flat in 0..ns {
            if !interior(grid, flat) {
                continue;
            }
            let radial = match grid.dim {
                1 => {
                    grid.coord(flat) * (v[base + flat + 1] - v[base + flat - 1]) / (2.0 * grid.h)
                }
                _ => {
                    let (i, j) = (flat / n, flat % n);
                    grid.coord(i) * (v[base + flat + n] - v[base + flat - n]) / (2.0 * grid.h)
                        + grid.coord(j) * (v[base + flat + 1] - v[base + flat - 1])
                            / (2.0 * grid.h)
                }
            };
            values[base + flat] = radial + 2.0 * t * dt_node(field, k, flat);
        }
    }
    Ok(StencilField {
        field: ScalarField::from_values(grid.clone(), values)?,
        spatial_margin: 1,
    })
}
