//! Separable truncated Gaussian smoothing, its masked symmetrized variant,
//! and the conjugate-gradient driver shared by the kernel solves.
//!
//! Discretization notes:
//!
//! * the 2D kernel is the tensor product of 1D taps
//!   `exp(-d^2 / (2 sigma^2)) / sqrt(2 pi sigma^2)` truncated at radius
//!   `ceil(4 sigma / h)`; the mass beyond the cutoff is `~3e-4` relative so
//!   the analytic normalization is kept instead of renormalizing the taps;
//! * quadrature weights ride inside every smoothing product, which makes the
//!   assembled operator symmetric under the trapezoid inner product: with
//!   `W = diag(weights)` and symmetric kernel matrix `K`, the map
//!   `f -> K W f` satisfies `<KWa, b>_W = <a, KWb>_W` identically;
//! * the masked variant normalizes by `n = K W chi` split symmetrically,
//!   `f -> chi n^{-1/2} K W chi n^{-1/2} f`, so one-sided smoothing keeps the
//!   same symmetry while reproducing constants up to `O(h)` near the cut;
//! * values outside the domain are treated as zero (kernel mass is simply
//!   lost near the outer boundary, as usual for stationary kernels).

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::Grid2;
#[allow(unused_imports)]
use crate::math::FloatExt;

/// Ridge added to every kernel solve. The Gaussian spectrum decays below the
/// round-off floor at grid frequencies, so the bare smoothing operator is not
/// invertible in double precision; a small identity component bounds the
/// inverse by `1/KERNEL_RIDGE` while perturbing smooth-field smoothing at the
/// same `3e-4` relative level as the truncation itself.
pub(crate) const KERNEL_RIDGE: f64 = 3e-4;

/// Trapezoid quadrature weights as a flat per-node vector (includes `hx*hy`).
pub(crate) fn quad_weights(grid: Grid2) -> Vec<f64> {
    let mut w = vec![0.0; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            w[grid.idx(i, j)] = grid.quad_weight(i, j);
        }
    }
    w
}

/// Sampled separable Gaussian taps on a given grid spacing.
pub(crate) struct GaussKernel {
    grid: Grid2,
    rx: usize,
    ry: usize,
    taps_x: Vec<f64>,
    taps_y: Vec<f64>,
}

impl GaussKernel {
    pub fn new(grid: Grid2, sigma: f64) -> Self {
        let taps = |h: f64| -> (usize, Vec<f64>) {
            let r = ((4.0 * sigma / h).ceil() as usize).max(1);
            let norm = 1.0 / (2.0 * core::f64::consts::PI * sigma * sigma).sqrt();
            let mut t = vec![0.0; 2 * r + 1];
            for (k, tap) in t.iter_mut().enumerate() {
                let d = (k as f64 - r as f64) * h;
                *tap = norm * (-d * d / (2.0 * sigma * sigma)).exp();
            }
            (r, t)
        };
        let (rx, taps_x) = taps(grid.hx);
        let (ry, taps_y) = taps(grid.hy);
        GaussKernel {
            grid,
            rx,
            ry,
            taps_x,
            taps_y,
        }
    }

    /// Pure tap convolution `dst = (Kx (x) Ky) * src` with zero extension
    /// outside the domain. `tmp` must have grid length; `src != dst`.
    pub fn convolve(&self, src: &[f64], tmp: &mut [f64], dst: &mut [f64]) {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        // x pass
        for j in 0..ny {
            let row = j * nx;
            for i in 0..nx {
                let lo = self.rx.saturating_sub(i);
                let hi = (2 * self.rx).min(self.rx + nx - 1 - i);
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += self.taps_x[k] * src[row + i + k - self.rx];
                }
                tmp[row + i] = acc;
            }
        }
        // y pass
        for j in 0..ny {
            let lo = self.ry.saturating_sub(j);
            let hi = (2 * self.ry).min(self.ry + ny - 1 - j);
            for i in 0..nx {
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += self.taps_y[k] * tmp[(j + k - self.ry) * nx + i];
                }
                dst[j * nx + i] = acc;
            }
        }
    }
}

/// One side's (or the whole domain's) ridged smoothing operator
/// `f -> s (K W (s f)) + KERNEL_RIDGE * mask * f` with `s = mask * n^{-1/2}`.
/// For the unmasked build `mask = 1` and `s = 1`, i.e. plain convolution.
pub(crate) struct Smoother<'k> {
    kernel: &'k GaussKernel,
    /// Quadrature weights times the 0/1 side mask, folded with `n^{-1/2}`.
    pre: Vec<f64>,
    /// `mask * n^{-1/2}` applied after the convolution (1 for unmasked).
    post: Vec<f64>,
    /// 0/1 side mask for the ridge term (1 everywhere for unmasked).
    mask: Vec<f64>,
}

impl<'k> Smoother<'k> {
    /// Whole-domain smoother: plain weighted convolution plus ridge.
    pub fn unmasked(kernel: &'k GaussKernel, weights: &[f64]) -> Self {
        Smoother {
            kernel,
            pre: weights.to_vec(),
            post: vec![1.0; weights.len()],
            mask: vec![1.0; weights.len()],
        }
    }

    /// One-sided smoother normalized by the side's own kernel mass.
    pub fn masked(kernel: &'k GaussKernel, weights: &[f64], mask: &[f64]) -> Self {
        let n = weights.len();
        let mut chi_w = vec![0.0; n];
        for k in 0..n {
            chi_w[k] = weights[k] * mask[k];
        }
        let mut tmp = vec![0.0; n];
        let mut mass = vec![0.0; n];
        kernel.convolve(&chi_w, &mut tmp, &mut mass);
        // Off the side the mass decays to zero; those rows and columns are
        // masked out anyway, the floor only guards the division.
        let mut post = vec![0.0; n];
        for k in 0..n {
            post[k] = mask[k] / mass[k].max(1e-12).sqrt();
        }
        let mut pre = vec![0.0; n];
        for k in 0..n {
            pre[k] = weights[k] * post[k];
        }
        Smoother {
            kernel,
            pre,
            post,
            mask: mask.to_vec(),
        }
    }

    /// `dst = smooth(src)`; scratch buffers must have grid length.
    pub fn apply(&self, src: &[f64], t1: &mut [f64], t2: &mut [f64], dst: &mut [f64]) {
        for k in 0..src.len() {
            t1[k] = self.pre[k] * src[k];
        }
        self.kernel.convolve(t1, t2, dst);
        for k in 0..src.len() {
            dst[k] = self.post[k] * dst[k] + KERNEL_RIDGE * self.mask[k] * src[k];
        }
    }
}

/// Conjugate gradients for a symmetric positive definite map in the weighted
/// inner product `<a, b> = sum w a b`. `x` holds the initial guess on entry
/// and the solution on exit. Returns `(iterations, relative_residual)`; the
/// caller decides whether a non-converged residual is an error.
pub(crate) fn cg_solve(
    mut matvec: impl FnMut(&[f64], &mut [f64]),
    w: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> (usize, f64) {
    let n = rhs.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for k in 0..n {
            s += w[k] * a[k] * b[k];
        }
        s
    };
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        x.fill(0.0);
        return (0, 0.0);
    }
    let mut ax = vec![0.0; n];
    matvec(x, &mut ax);
    let mut r = vec![0.0; n];
    for k in 0..n {
        r[k] = rhs[k] - ax[k];
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= rel_tol * rhs_norm {
            return (it, rr.sqrt() / rhs_norm);
        }
        matvec(&p, &mut ax);
        let pap = dot(&p, &ax);
        if pap <= 0.0 || pap.is_nan() {
            // Loss of positivity is a round-off signal; report what we have.
            return (it, rr.sqrt() / rhs_norm);
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ax[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    (max_iter, rr.sqrt() / rhs_norm)
}
