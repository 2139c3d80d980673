//! Invertible inertia operators pairing velocities with momentum densities.
//!
//! Two kernel families are supported:
//!
//! * `Gaussian { sigma }`: momentum-to-velocity is direct smoothing (plain
//!   weighted convolution on a seamless domain, the masked symmetrized
//!   variant per side when an interface is present, followed by the
//!   normal-continuity projection); velocity-to-momentum is the
//!   conjugate-gradient inverse of the same ridged smoothing;
//! * `Helmholtz { alpha, gamma, order }`: velocity-to-momentum applies
//!   `(gamma - alpha * lap)^order` per side with a finite-volume Laplacian
//!   whose edges never cross the interface (natural Neumann condition there
//!   and on the outer boundary); momentum-to-velocity solves the same
//!   operator by conjugate gradients and projects.
//!
//! Every building block is symmetric under the trapezoid inner product, so
//! the assembled operator is self-adjoint to solver tolerance: smoothing is
//! `Y K Y` with diagonal `Y` and symmetric kernel matrix `K`, the Laplacian
//! is `W^{-1} A` with symmetric edge-conductance matrix `A`, and conjugate
//! gradients preserve symmetry of whatever they invert. Solves run to a
//! `5e-14` relative residual target and report failure beyond `1e-10`, which
//! keeps pairing-level noise near round-off even through the ridge-bounded
//! inverse (error per solve is residual / KERNEL_RIDGE at worst).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{cg_solve, quad_weights, GaussKernel, Smoother};
use super::OneFormDensity;
use crate::error::{Error, Result};
use crate::grid::{Grid2, VectorField};
use crate::interface::{Interface, PiecewiseVector, Side};
#[allow(unused_imports)]
use crate::math::FloatExt;

/// Relative residual target for kernel solves.
const SOLVE_TOL: f64 = 5e-14;
/// Residual beyond which a solve is reported as failed.
const SOLVE_ACCEPT: f64 = 1e-10;
/// Iteration cap; typical solves finish within a few hundred iterations.
const SOLVE_MAX_ITER: usize = 20_000;

/// Kernel family of an inertia operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InertiaKind {
    /// Gaussian smoothing kernel.
    Gaussian {
        /// Kernel width in domain units.
        sigma: f64,
    },
    /// `(gamma - alpha * laplacian)^order` differential kernel.
    Helmholtz {
        /// Laplacian coefficient (`>= 0`).
        alpha: f64,
        /// Identity coefficient (`> 0`).
        gamma: f64,
        /// Power of the base operator (`>= 1`).
        order: u32,
    },
}

/// Symmetric positive definite pairing between velocities and momenta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaOperator {
    kind: InertiaKind,
}

impl InertiaOperator {
    /// Gaussian-kernel operator; `sigma` must be positive and finite.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!(
                "kernel width must be positive and finite, got {sigma}"
            )));
        }
        Ok(InertiaOperator {
            kind: InertiaKind::Gaussian { sigma },
        })
    }

    /// Helmholtz-kernel operator; `gamma > 0`, `alpha >= 0`, `order >= 1`.
    pub fn helmholtz(alpha: f64, gamma: f64, order: u32) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) || !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::invalid(format!(
                "differential kernel needs gamma > 0 and alpha >= 0, got gamma={gamma} alpha={alpha}"
            )));
        }
        if order == 0 || order > 8 {
            return Err(Error::invalid(format!(
                "differential kernel order must be in 1..=8, got {order}"
            )));
        }
        Ok(InertiaOperator {
            kind: InertiaKind::Helmholtz {
                alpha,
                gamma,
                order,
            },
        })
    }

    /// Kernel family and parameters.
    pub fn kind(&self) -> InertiaKind {
        self.kind
    }

    /// Momentum to velocity. Direct smoothing for the Gaussian kind, a
    /// conjugate-gradient solve for the Helmholtz kind; with an interface the
    /// result is assembled per side, extended, and projected onto fields with
    /// a continuous normal component.
    pub fn invert(
        &self,
        iface: Option<&Interface>,
        momentum: &OneFormDensity,
    ) -> Result<PiecewiseVector> {
        let mut out = self.invert_unprojected(iface, momentum)?;
        if let Some(ifc) = iface {
            ifc.project_normal_continuity(&mut out);
        }
        Ok(out)
    }

    /// [`Self::invert`] without the final normal-continuity projection.
    ///
    /// The projection is an oblique correction: it keeps velocities
    /// admissible but breaks the exact duality `<inertia(invert(m)), w> =
    /// <m, w>` that gradient computations rely on, because the pairing reads
    /// each side's own values and the correction shifts them. Optimization
    /// code uses this entry for exact gradients and projects descent
    /// directions separately.
    pub(crate) fn invert_unprojected(
        &self,
        iface: Option<&Interface>,
        momentum: &OneFormDensity,
    ) -> Result<PiecewiseVector> {
        let grid = momentum.grid();
        check_geometry(grid, iface)?;
        // Fold the explicit density weight into the covector so the kernel
        // acts on the full momentum density (the weight is 1 everywhere in
        // practice, which also makes apply an exact inverse).
        let weighted = |side: Side| -> VectorField {
            let mut f = momentum.covector.part(side).clone();
            for k in 0..grid.len() {
                f.x[k] *= momentum.weight.values[k];
                f.y[k] *= momentum.weight.values[k];
            }
            f
        };
        match self.kind {
            InertiaKind::Gaussian { sigma } => {
                check_resolved(grid, sigma)?;
                let kernel = GaussKernel::new(grid, sigma);
                let wq = quad_weights(grid);
                match iface {
                    None => {
                        let sm = Smoother::unmasked(&kernel, &wq);
                        let m = weighted(Side::Plus);
                        let v = smooth_vec(&sm, grid, &m);
                        Ok(PiecewiseVector::from_smooth(&v))
                    }
                    Some(ifc) => {
                        let mut out = PiecewiseVector::zeros(grid);
                        for side in [Side::Plus, Side::Minus] {
                            let mask = side_mask(ifc, side);
                            let sm = Smoother::masked(&kernel, &wq, &mask);
                            let m = weighted(side);
                            let mut v = smooth_vec(&sm, grid, &m);
                            let ext = ifc.extension(side);
                            ext.apply_in_place(&mut v.x);
                            ext.apply_in_place(&mut v.y);
                            *out.part_mut(side) = v;
                        }
                        Ok(out)
                    }
                }
            }
            InertiaKind::Helmholtz {
                alpha,
                gamma,
                order,
            } => {
                let wq = quad_weights(grid);
                let sides: &[Side] = match iface {
                    None => &[Side::Plus],
                    Some(_) => &[Side::Plus, Side::Minus],
                };
                let mut out = PiecewiseVector::zeros(grid);
                for &side in sides {
                    let mask = match iface {
                        None => vec![1.0; grid.len()],
                        Some(ifc) => side_mask(ifc, side),
                    };
                    let lap = MaskedLaplacian::build(grid, &wq, &mask);
                    let mut planes = [
                        masked_plane(&momentum.covector.part(side).x, &mask),
                        masked_plane(&momentum.covector.part(side).y, &mask),
                    ];
                    for plane in &mut planes {
                        for (p, w) in plane.iter_mut().zip(&momentum.weight.values) {
                            *p *= w;
                        }
                        for _ in 0..order {
                            let rhs = plane.clone();
                            let mut x = vec![0.0; grid.len()];
                            let mut scratch = vec![0.0; grid.len()];
                            let (iters, res) = cg_solve(
                                |src, dst| {
                                    lap.helm(gamma, alpha, src, &mut scratch, dst);
                                },
                                &wq,
                                &rhs,
                                &mut x,
                                SOLVE_TOL,
                                SOLVE_MAX_ITER,
                            );
                            if res > SOLVE_ACCEPT {
                                return Err(Error::numerical(format!(
                                    "kernel solve stalled: relative residual {res:.2e} after {iters} iterations"
                                )));
                            }
                            *plane = x;
                        }
                    }
                    let mut v = VectorField {
                        grid,
                        x: planes[0].clone(),
                        y: planes[1].clone(),
                    };
                    if let Some(ifc) = iface {
                        let ext = ifc.extension(side);
                        ext.apply_in_place(&mut v.x);
                        ext.apply_in_place(&mut v.y);
                    }
                    *out.part_mut(side) = v;
                }
                match iface {
                    None => Ok(PiecewiseVector::from_smooth(&out.part(Side::Plus).clone())),
                    Some(_) => Ok(out),
                }
            }
        }
    }

    /// Velocity to momentum; see [`InertiaOperator::apply_with_guess`].
    pub fn apply(
        &self,
        iface: Option<&Interface>,
        velocity: &PiecewiseVector,
    ) -> Result<OneFormDensity> {
        self.apply_with_guess(iface, velocity, None)
    }

    /// Velocity to momentum. Direct differentiation for the Helmholtz kind,
    /// a conjugate-gradient solve against the ridged smoothing for the
    /// Gaussian kind; `guess` warm-starts that solve (repeated applications
    /// to slowly-varying fields converge in a few iterations).
    pub fn apply_with_guess(
        &self,
        iface: Option<&Interface>,
        velocity: &PiecewiseVector,
        guess: Option<&OneFormDensity>,
    ) -> Result<OneFormDensity> {
        let grid = velocity.grid();
        check_geometry(grid, iface)?;
        match self.kind {
            InertiaKind::Gaussian { sigma } => {
                check_resolved(grid, sigma)?;
                let kernel = GaussKernel::new(grid, sigma);
                let wq = quad_weights(grid);
                let sides: &[Side] = match iface {
                    None => &[Side::Plus],
                    Some(_) => &[Side::Plus, Side::Minus],
                };
                let mut out = PiecewiseVector::zeros(grid);
                for &side in sides {
                    let mask = match iface {
                        None => vec![1.0; grid.len()],
                        Some(ifc) => side_mask(ifc, side),
                    };
                    let sm = match iface {
                        None => Smoother::unmasked(&kernel, &wq),
                        Some(_) => Smoother::masked(&kernel, &wq, &mask),
                    };
                    let planes = [
                        (&velocity.part(side).x, guess.map(|g| &g.covector.part(side).x)),
                        (&velocity.part(side).y, guess.map(|g| &g.covector.part(side).y)),
                    ];
                    let mut solved: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
                    for (c, (plane, g0)) in planes.into_iter().enumerate() {
                        let rhs = masked_plane(plane, &mask);
                        let mut x = match g0 {
                            Some(g) => masked_plane(g, &mask),
                            None => vec![0.0; grid.len()],
                        };
                        let mut t1 = vec![0.0; grid.len()];
                        let mut t2 = vec![0.0; grid.len()];
                        let (iters, res) = cg_solve(
                            |src, dst| sm.apply(src, &mut t1, &mut t2, dst),
                            &wq,
                            &rhs,
                            &mut x,
                            SOLVE_TOL,
                            SOLVE_MAX_ITER,
                        );
                        if res > SOLVE_ACCEPT {
                            return Err(Error::numerical(format!(
                                "kernel solve stalled: relative residual {res:.2e} after {iters} iterations"
                            )));
                        }
                        solved[c] = x;
                    }
                    let mut m = VectorField {
                        grid,
                        x: solved[0].clone(),
                        y: solved[1].clone(),
                    };
                    if let Some(ifc) = iface {
                        let ext = ifc.extension(side);
                        ext.apply_in_place(&mut m.x);
                        ext.apply_in_place(&mut m.y);
                    }
                    *out.part_mut(side) = m;
                }
                if iface.is_none() {
                    out = PiecewiseVector::from_smooth(&out.part(Side::Plus).clone());
                }
                Ok(OneFormDensity::from_covector(out))
            }
            InertiaKind::Helmholtz {
                alpha,
                gamma,
                order,
            } => {
                let wq = quad_weights(grid);
                let sides: &[Side] = match iface {
                    None => &[Side::Plus],
                    Some(_) => &[Side::Plus, Side::Minus],
                };
                let mut out = PiecewiseVector::zeros(grid);
                for &side in sides {
                    let mask = match iface {
                        None => vec![1.0; grid.len()],
                        Some(ifc) => side_mask(ifc, side),
                    };
                    let lap = MaskedLaplacian::build(grid, &wq, &mask);
                    let mut m = VectorField {
                        grid,
                        x: masked_plane(&velocity.part(side).x, &mask),
                        y: masked_plane(&velocity.part(side).y, &mask),
                    };
                    let mut scratch = vec![0.0; grid.len()];
                    let mut dst = vec![0.0; grid.len()];
                    for plane in [&mut m.x, &mut m.y] {
                        for _ in 0..order {
                            lap.helm(gamma, alpha, plane, &mut scratch, &mut dst);
                            plane.copy_from_slice(&dst);
                        }
                    }
                    if let Some(ifc) = iface {
                        let ext = ifc.extension(side);
                        ext.apply_in_place(&mut m.x);
                        ext.apply_in_place(&mut m.y);
                    }
                    *out.part_mut(side) = m;
                }
                if iface.is_none() {
                    out = PiecewiseVector::from_smooth(&out.part(Side::Plus).clone());
                }
                Ok(OneFormDensity::from_covector(out))
            }
        }
    }
}

fn check_geometry(grid: Grid2, iface: Option<&Interface>) -> Result<()> {
    if let Some(ifc) = iface {
        if ifc.grid() != grid {
            return Err(Error::invalid(
                "field grid does not match the interface grid",
            ));
        }
    }
    Ok(())
}

fn check_resolved(grid: Grid2, sigma: f64) -> Result<()> {
    if sigma < 0.7 * grid.h_max() {
        return Err(Error::invalid(format!(
            "kernel width {sigma} is under-resolved on grid spacing {}",
            grid.h_max()
        )));
    }
    Ok(())
}

fn side_mask(ifc: &Interface, side: Side) -> Vec<f64> {
    let grid = ifc.grid();
    let mut mask = vec![0.0; grid.len()];
    for (k, m) in mask.iter_mut().enumerate() {
        let plus = ifc.is_plus_index(k);
        if (side == Side::Plus) == plus {
            *m = 1.0;
        }
    }
    mask
}

fn masked_plane(values: &[f64], mask: &[f64]) -> Vec<f64> {
    values.iter().zip(mask).map(|(v, m)| v * m).collect()
}

fn smooth_vec(sm: &Smoother, grid: Grid2, m: &VectorField) -> VectorField {
    let mut t1 = vec![0.0; grid.len()];
    let mut t2 = vec![0.0; grid.len()];
    let mut out = VectorField::zeros(grid);
    sm.apply(&m.x, &mut t1, &mut t2, &mut out.x);
    sm.apply(&m.y, &mut t1, &mut t2, &mut out.y);
    out
}

/// Finite-volume five-point Laplacian with per-edge conductances. Edges whose
/// endpoints lie on different sides of the interface are dropped, which is a
/// natural (zero-flux) condition on the cut, and missing edges at the domain
/// boundary give the usual Neumann closure. `W^{-1} A` form: symmetric under
/// the trapezoid inner product.
struct MaskedLaplacian {
    grid: Grid2,
    inv_w: Vec<f64>,
    /// Conductance of the edge from `(i, j)` to `(i + 1, j)`, zero if absent.
    ex: Vec<f64>,
    /// Conductance of the edge from `(i, j)` to `(i, j + 1)`, zero if absent.
    ey: Vec<f64>,
}

impl MaskedLaplacian {
    fn build(grid: Grid2, wq: &[f64], mask: &[f64]) -> Self {
        let mut ex = vec![0.0; grid.len()];
        let mut ey = vec![0.0; grid.len()];
        for j in 0..grid.ny {
            let wy = if j == 0 || j == grid.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..grid.nx {
                let wx = if i == 0 || i == grid.nx - 1 { 0.5 } else { 1.0 };
                let k = grid.idx(i, j);
                if i + 1 < grid.nx && mask[k] > 0.0 && mask[k + 1] > 0.0 {
                    // Shared face spans the cell height, halved on boundary rows.
                    ex[k] = wy * grid.hy / grid.hx;
                }
                if j + 1 < grid.ny && mask[k] > 0.0 && mask[k + grid.nx] > 0.0 {
                    ey[k] = wx * grid.hx / grid.hy;
                }
            }
        }
        let inv_w = wq.iter().map(|w| 1.0 / w).collect();
        MaskedLaplacian {
            grid,
            inv_w,
            ex,
            ey,
        }
    }

    /// `dst = gamma * src - alpha * lap(src)`; `scratch` holds the raw
    /// Laplacian accumulation.
    fn helm(&self, gamma: f64, alpha: f64, src: &[f64], scratch: &mut [f64], dst: &mut [f64]) {
        let g = self.grid;
        scratch.fill(0.0);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                if i + 1 < g.nx && self.ex[k] != 0.0 {
                    let flux = self.ex[k] * (src[k + 1] - src[k]);
                    scratch[k] += flux;
                    scratch[k + 1] -= flux;
                }
                if j + 1 < g.ny && self.ey[k] != 0.0 {
                    let flux = self.ey[k] * (src[k + g.nx] - src[k]);
                    scratch[k] += flux;
                    scratch[k + g.nx] -= flux;
                }
            }
        }
        for k in 0..src.len() {
            dst[k] = gamma * src[k] - alpha * self.inv_w[k] * scratch[k];
        }
    }
}
