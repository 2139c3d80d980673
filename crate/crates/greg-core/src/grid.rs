//! Uniform node-centered grids and the scalar/vector fields living on them.
//!
//! Conventions used by every module downstream:
//!
//! * storage is row-major with `x` fastest: `index = j * nx + i`;
//! * node `(i, j)` sits at `origin + (i * hx, j * hy)`, so a grid with `nx`
//!   columns spans `(nx - 1) * hx` in `x` (node-centered, endpoints included);
//! * interpolation is bilinear with clamp-to-edge semantics outside the domain;
//! * first derivatives are second-order: central differences in the interior,
//!   one-sided three-point stencils on the boundary rows/columns. Both are
//!   exact for quadratics, which the tests pin down;
//! * integrals use tensor-product trapezoid weights (boundary nodes carry a
//!   half weight per clipped dimension), exact for bilinear integrands.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::FloatExt;

/// Geometry of a uniform 2D node-centered grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2 {
    /// Nodes along `x`.
    pub nx: usize,
    /// Nodes along `y`.
    pub ny: usize,
    /// Node spacing along `x`.
    pub hx: f64,
    /// Node spacing along `y`.
    pub hy: f64,
    /// Position of node `(0, 0)`.
    pub origin: [f64; 2],
}

impl Grid2 {
    /// Grid covering `[0, extent.0] x [0, extent.1]` with `nx x ny` nodes.
    ///
    /// Spacing is `extent / (n - 1)`; at least 4 nodes per axis so that the
    /// one-sided boundary stencils never overlap.
    pub fn new(nx: usize, ny: usize, extent: (f64, f64)) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::invalid(format!(
                "grid needs at least 4 nodes per axis, got {nx} x {ny}"
            )));
        }
        if !(extent.0 > 0.0 && extent.1 > 0.0) {
            return Err(Error::invalid(format!(
                "grid extent must be positive, got {:?}",
                extent
            )));
        }
        Ok(Grid2 {
            nx,
            ny,
            hx: extent.0 / (nx - 1) as f64,
            hy: extent.1 / (ny - 1) as f64,
            origin: [0.0, 0.0],
        })
    }

    /// Unit-square grid, the default for all benchmarks.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, (1.0, 1.0))
    }

    /// Total node count.
    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    /// True when the grid has no nodes (cannot happen for validated grids).
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of node `(i, j)`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Position of node `(i, j)`.
    #[inline]
    pub fn pos(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.hx,
            self.origin[1] + j as f64 * self.hy,
        ]
    }

    /// Smaller of the two spacings, the length scale for CFL checks and bands.
    #[inline]
    pub fn h_min(&self) -> f64 {
        self.hx.min(self.hy)
    }

    /// Larger of the two spacings.
    #[inline]
    pub fn h_max(&self) -> f64 {
        self.hx.max(self.hy)
    }

    /// Domain diagonal, the length scale for map-inversion tolerances.
    pub fn diameter(&self) -> f64 {
        let w = (self.nx - 1) as f64 * self.hx;
        let h = (self.ny - 1) as f64 * self.hy;
        w.hypot(h)
    }

    /// Trapezoid quadrature weight of node `(i, j)` (includes `hx * hy`).
    #[inline]
    pub fn quad_weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        wx * wy * self.hx * self.hy
    }

    /// Cell coordinates for bilinear interpolation at `p`, clamped to the
    /// domain. Returns `(i0, j0, fx, fy, clamped_x, clamped_y)` with
    /// `fx, fy` in `[0, 1]`; the clamp flags report whether `p` fell outside
    /// along each axis (where the interpolant is constant and its derivative
    /// vanishes).
    #[inline]
    pub fn cell_at(&self, p: [f64; 2]) -> (usize, usize, f64, f64, bool, bool) {
        let u = (p[0] - self.origin[0]) / self.hx;
        let v = (p[1] - self.origin[1]) / self.hy;
        let u_max = (self.nx - 1) as f64;
        let v_max = (self.ny - 1) as f64;
        let clamped_x = u < 0.0 || u > u_max;
        let clamped_y = v < 0.0 || v > v_max;
        let u = u.clamp(0.0, u_max);
        let v = v.clamp(0.0, v_max);
        let i0 = (u.floor() as usize).min(self.nx - 2);
        let j0 = (v.floor() as usize).min(self.ny - 2);
        (i0, j0, u - i0 as f64, v - j0 as f64, clamped_x, clamped_y)
    }
}

/// Scalar samples on a [`Grid2`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    /// Grid the samples live on.
    pub grid: Grid2,
    /// Row-major node values, `len == grid.len()`.
    pub values: Vec<f64>,
}

impl ScalarField {
    /// All-zero field.
    pub fn zeros(grid: Grid2) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Field sampled from `f(x, y)` at the nodes.
    pub fn from_fn(grid: Grid2, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let p = grid.pos(i, j);
                values.push(f(p[0], p[1]));
            }
        }
        ScalarField { grid, values }
    }

    /// Field wrapping existing row-major values.
    pub fn from_values(grid: Grid2, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "scalar field needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    /// Value at node `(i, j)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Mutable value at node `(i, j)`.
    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.values[self.grid.idx(i, j)]
    }

    /// Bilinear interpolation at `p`, clamped to the domain edge outside.
    pub fn interp(&self, p: [f64; 2]) -> f64 {
        let (i0, j0, fx, fy, _, _) = self.grid.cell_at(p);
        let g = &self.grid;
        let f00 = self.values[g.idx(i0, j0)];
        let f10 = self.values[g.idx(i0 + 1, j0)];
        let f01 = self.values[g.idx(i0, j0 + 1)];
        let f11 = self.values[g.idx(i0 + 1, j0 + 1)];
        f00 * (1.0 - fx) * (1.0 - fy) + f10 * fx * (1.0 - fy) + f01 * (1.0 - fx) * fy + f11 * fx * fy
    }

    /// Interpolated value together with the spatial gradient of the
    /// interpolant at `p`. The gradient is the exact derivative of the
    /// bilinear surface, zero along clamped axes.
    pub fn interp_with_gradient(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (i0, j0, fx, fy, cx, cy) = self.grid.cell_at(p);
        let g = &self.grid;
        let f00 = self.values[g.idx(i0, j0)];
        let f10 = self.values[g.idx(i0 + 1, j0)];
        let f01 = self.values[g.idx(i0, j0 + 1)];
        let f11 = self.values[g.idx(i0 + 1, j0 + 1)];
        let val = f00 * (1.0 - fx) * (1.0 - fy)
            + f10 * fx * (1.0 - fy)
            + f01 * (1.0 - fx) * fy
            + f11 * fx * fy;
        let dx = if cx {
            0.0
        } else {
            ((f10 - f00) * (1.0 - fy) + (f11 - f01) * fy) / g.hx
        };
        let dy = if cy {
            0.0
        } else {
            ((f01 - f00) * (1.0 - fx) + (f11 - f10) * fx) / g.hy
        };
        (val, [dx, dy])
    }

    /// Second-order gradient: central differences in the interior, one-sided
    /// three-point stencils on the boundary. Exact for quadratics.
    pub fn gradient(&self) -> VectorField {
        let g = self.grid;
        let mut out = VectorField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                out.x[k] = deriv_x(self, i, j);
                out.y[k] = deriv_y(self, i, j);
            }
        }
        out
    }

    /// Trapezoid-rule integral over the domain.
    pub fn integrate(&self) -> f64 {
        let g = self.grid;
        let mut sum = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                sum += g.quad_weight(i, j) * self.values[g.idx(i, j)];
            }
        }
        sum
    }

    /// Largest absolute node value.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Semi-Lagrangian transport: each node takes the interpolated value at
    /// the foot of its backward characteristic under `vel` over `dt`
    /// (midpoint backtrace).
    pub fn advect(&self, vel: &VectorField, dt: f64) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                let p = g.pos(i, j);
                let mid = [
                    p[0] - 0.5 * dt * vel.x[k],
                    p[1] - 0.5 * dt * vel.y[k],
                ];
                let vm = vel.interp(mid);
                let foot = [p[0] - dt * vm[0], p[1] - dt * vm[1]];
                out.values[k] = self.interp(foot);
            }
        }
        out
    }

    /// Pointwise sum with `scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ScalarField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    /// Pointwise scaling.
    pub fn scale(&mut self, s: f64) {
        for a in &mut self.values {
            *a *= s;
        }
    }
}

/// Vector samples on a [`Grid2`], stored as two scalar planes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    /// Grid the samples live on.
    pub grid: Grid2,
    /// Row-major `x` components.
    pub x: Vec<f64>,
    /// Row-major `y` components.
    pub y: Vec<f64>,
}

impl VectorField {
    /// All-zero field.
    pub fn zeros(grid: Grid2) -> Self {
        VectorField {
            grid,
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
        }
    }

    /// Field sampled from `f(x, y) -> [vx, vy]` at the nodes.
    pub fn from_fn(grid: Grid2, mut f: impl FnMut(f64, f64) -> [f64; 2]) -> Self {
        let mut x = Vec::with_capacity(grid.len());
        let mut y = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let p = grid.pos(i, j);
                let v = f(p[0], p[1]);
                x.push(v[0]);
                y.push(v[1]);
            }
        }
        VectorField { grid, x, y }
    }

    /// Field wrapping existing component planes.
    pub fn from_components(grid: Grid2, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != grid.len() || y.len() != grid.len() {
            return Err(Error::invalid(format!(
                "vector field needs {} values per component, got {} / {}",
                grid.len(),
                x.len(),
                y.len()
            )));
        }
        Ok(VectorField { grid, x, y })
    }

    /// Component pair at node `(i, j)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let k = self.grid.idx(i, j);
        [self.x[k], self.y[k]]
    }

    /// Bilinear interpolation of both components at `p`.
    pub fn interp(&self, p: [f64; 2]) -> [f64; 2] {
        let (i0, j0, fx, fy, _, _) = self.grid.cell_at(p);
        let g = &self.grid;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let k00 = g.idx(i0, j0);
        let k10 = g.idx(i0 + 1, j0);
        let k01 = g.idx(i0, j0 + 1);
        let k11 = g.idx(i0 + 1, j0 + 1);
        [
            self.x[k00] * w00 + self.x[k10] * w10 + self.x[k01] * w01 + self.x[k11] * w11,
            self.y[k00] * w00 + self.y[k10] * w10 + self.y[k01] * w01 + self.y[k11] * w11,
        ]
    }

    /// Divergence with the same stencils as [`ScalarField::gradient`].
    pub fn divergence(&self) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        let vx = ScalarField {
            grid: g,
            values: self.x.clone(),
        };
        let vy = ScalarField {
            grid: g,
            values: self.y.clone(),
        };
        for j in 0..g.ny {
            for i in 0..g.nx {
                out.values[g.idx(i, j)] = deriv_x(&vx, i, j) + deriv_y(&vy, i, j);
            }
        }
        out
    }

    /// Scalar curl `d(vy)/dx - d(vx)/dy`, the single independent component of
    /// the exterior derivative of a 1-form in 2D.
    pub fn curl2(&self) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        let vx = ScalarField {
            grid: g,
            values: self.x.clone(),
        };
        let vy = ScalarField {
            grid: g,
            values: self.y.clone(),
        };
        for j in 0..g.ny {
            for i in 0..g.nx {
                out.values[g.idx(i, j)] = deriv_x(&vy, i, j) - deriv_y(&vx, i, j);
            }
        }
        out
    }

    /// Largest node speed `max |v|`.
    pub fn max_norm(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .fold(0.0, |m, (vx, vy)| m.max(vx.hypot(*vy)))
    }

    /// Pointwise sum with `scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &VectorField) {
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            *a += scale * b;
        }
        for (a, b) in self.y.iter_mut().zip(&other.y) {
            *a += scale * b;
        }
    }

    /// Pointwise scaling.
    pub fn scale(&mut self, s: f64) {
        for a in &mut self.x {
            *a *= s;
        }
        for a in &mut self.y {
            *a *= s;
        }
    }
}

#[inline]
fn deriv_x(f: &ScalarField, i: usize, j: usize) -> f64 {
    let g = f.grid;
    let v = |i: usize| f.values[g.idx(i, j)];
    if i == 0 {
        (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * g.hx)
    } else if i == g.nx - 1 {
        (3.0 * v(i) - 4.0 * v(i - 1) + v(i - 2)) / (2.0 * g.hx)
    } else {
        (v(i + 1) - v(i - 1)) / (2.0 * g.hx)
    }
}

#[inline]
fn deriv_y(f: &ScalarField, i: usize, j: usize) -> f64 {
    let g = f.grid;
    let v = |j: usize| f.values[g.idx(i, j)];
    if j == 0 {
        (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * g.hy)
    } else if j == g.ny - 1 {
        (3.0 * v(j) - 4.0 * v(j - 1) + v(j - 2)) / (2.0 * g.hy)
    } else {
        (v(j + 1) - v(j - 1)) / (2.0 * g.hy)
    }
}

/// Exact transpose of the `deriv_x` stencil matrix under the plain (unweighted)
/// dot product: every row's coefficients are scattered back onto its sources.
/// Building block for discrete adjoints of the derivative-based operators.
pub(crate) fn deriv_x_transpose(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let mut out = ScalarField::zeros(g);
    let inv = 1.0 / (2.0 * g.hx);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let s = f.values[g.idx(i, j)];
            if s == 0.0 {
                continue;
            }
            if i == 0 {
                out.values[g.idx(0, j)] += -3.0 * inv * s;
                out.values[g.idx(1, j)] += 4.0 * inv * s;
                out.values[g.idx(2, j)] += -inv * s;
            } else if i == g.nx - 1 {
                out.values[g.idx(i, j)] += 3.0 * inv * s;
                out.values[g.idx(i - 1, j)] += -4.0 * inv * s;
                out.values[g.idx(i - 2, j)] += inv * s;
            } else {
                out.values[g.idx(i + 1, j)] += inv * s;
                out.values[g.idx(i - 1, j)] += -inv * s;
            }
        }
    }
    out
}

/// Exact transpose of the `deriv_y` stencil matrix; see [`deriv_x_transpose`].
pub(crate) fn deriv_y_transpose(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let mut out = ScalarField::zeros(g);
    let inv = 1.0 / (2.0 * g.hy);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let s = f.values[g.idx(i, j)];
            if s == 0.0 {
                continue;
            }
            if j == 0 {
                out.values[g.idx(i, 0)] += -3.0 * inv * s;
                out.values[g.idx(i, 1)] += 4.0 * inv * s;
                out.values[g.idx(i, 2)] += -inv * s;
            } else if j == g.ny - 1 {
                out.values[g.idx(i, j)] += 3.0 * inv * s;
                out.values[g.idx(i, j - 1)] += -4.0 * inv * s;
                out.values[g.idx(i, j - 2)] += inv * s;
            } else {
                out.values[g.idx(i, j + 1)] += inv * s;
                out.values[g.idx(i, j - 1)] += -inv * s;
            }
        }
    }
    out
}
