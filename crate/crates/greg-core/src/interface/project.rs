//! Normal-continuity projection for two-sided velocities.
//!
//! Sliding motion admits arbitrary tangential disagreement across the
//! interface but requires both sides to carry the same normal velocity,
//! otherwise the sides would separate or overlap.  The projection enforces
//! that constraint: it measures the normal-component mismatch at every
//! boundary sample and cancels it with equal and opposite corrections along
//! the local normal direction on both parts, tapered to zero at the edge of
//! the interface band so far-field values are untouched.  Spreading the
//! corrections across the band matters downstream: one-sided derivative
//! stencils are least accurate in the first rows next to the interface, and
//! parking the whole correction there would stall the first-order
//! convergence of boundary integral identities.
//!
//! Each band node carries a blend of per-sample correction amplitudes,
//! weighted by a Gaussian of the node-to-sample distance at the grid scale,
//! so nodes between two samples split their effect smoothly instead of
//! snapping to whichever is nearest by a round-off margin (a snap can leave
//! a sample with no nodes at all, and its mismatch would survive the
//! projection).  The mismatch at a sample responds linearly to the
//! amplitudes, so the exact amplitudes come from one dense solve against a
//! response matrix that is assembled and factored once per interface.  A
//! single corrected pass drives all sample mismatches to round-off, which
//! makes the projection idempotent to machine precision; the only mismatch
//! that can survive is at a degenerate sample whose response row vanishes
//! (no aligned correction direction anywhere near it), and the returned
//! residual reports it honestly.  Corrections act purely along node
//! normals, so tangential node values are preserved exactly; tangential
//! traces at the samples are preserved exactly for straight interfaces and
//! up to a curvature-proportional term otherwise.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{ScalarField, VectorField};
use crate::interface::marching::BoundarySample;
use crate::interface::piecewise::PiecewiseVector;
#[allow(unused_imports)]
use crate::math::FloatExt;

/// One band node's share of the projection update; its amplitude blend
/// lives in the plan's weight pool.
#[derive(Debug, Clone, Copy)]
struct CorrNode {
    node: u32,
    /// Half the taper factor: corrections split evenly between the sides.
    coeff: f64,
    normal: [f64; 2],
    pool_start: u32,
    pool_len: u32,
}

/// One normalized blend weight: the owning node takes `weight` of sample
/// `sample`'s amplitude.
#[derive(Debug, Clone, Copy)]
struct BlendWeight {
    sample: u32,
    weight: f64,
}

/// Dense LU factorisation with partial pivoting, row-major storage.
#[derive(Debug, Clone)]
struct DenseLu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<u32>,
}

impl DenseLu {
    /// Factors `a` in place; tiny pivots are regularised rather than
    /// rejected because the response matrix is guarded against exact
    /// singularity during assembly.
    fn factor(mut a: Vec<f64>, n: usize) -> DenseLu {
        let mut piv: Vec<u32> = (0..n as u32).collect();
        for col in 0..n {
            let mut best = col;
            let mut best_abs = a[col * n + col].abs();
            for row in col + 1..n {
                let v = a[row * n + col].abs();
                if v > best_abs {
                    best_abs = v;
                    best = row;
                }
            }
            if best != col {
                for c in 0..n {
                    a.swap(col * n + c, best * n + c);
                }
                piv.swap(col, best);
            }
            let mut p = a[col * n + col];
            if p.abs() < 1.0e-14 {
                p = if p < 0.0 { -1.0e-14 } else { 1.0e-14 };
                a[col * n + col] = p;
            }
            for row in col + 1..n {
                let m = a[row * n + col] / p;
                a[row * n + col] = m;
                if m != 0.0 {
                    for c in col + 1..n {
                        a[row * n + c] -= m * a[col * n + c];
                    }
                }
            }
        }
        DenseLu { n, a, piv }
    }

    /// Solves the factored system for `b`, returning the permuted solution.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[i] = b[self.piv[i] as usize];
        }
        for i in 0..n {
            let s: f64 = self.a[i * n..i * n + i]
                .iter()
                .zip(&x[..i])
                .map(|(a, xc)| a * xc)
                .sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = self.a[i * n + i + 1..(i + 1) * n]
                .iter()
                .zip(&x[i + 1..])
                .map(|(a, xc)| a * xc)
                .sum();
            x[i] = (x[i] - s) / self.a[i * n + i];
        }
        x
    }
}

/// Precomputed projection: blended node weights plus the factored response.
#[derive(Debug, Clone)]
pub(super) struct ProjectionPlan {
    nodes: Vec<CorrNode>,
    pool: Vec<BlendWeight>,
    lu: DenseLu,
}

impl ProjectionPlan {
    /// Blends band nodes over nearby samples and factors the response
    /// matrix.
    pub(super) fn build(
        sdf: &ScalarField,
        normals: &VectorField,
        samples: &[BoundarySample],
        band_width: f64,
    ) -> Self {
        let grid = sdf.grid;
        let ns = samples.len();
        let h = grid.h_max();
        let mut nodes: Vec<CorrNode> = Vec::new();
        let mut pool: Vec<BlendWeight> = Vec::new();
        let mut node_index = vec![u32::MAX; grid.len()];
        let mut w_scratch = vec![0.0f64; ns];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let d = sdf.values[k].abs();
                if d > band_width {
                    continue;
                }
                let [x, y] = grid.pos(i, j);
                // Steep inverse-power blend (32nd power of distance): the
                // nearest sample takes essentially all the weight, and only
                // genuine near-ties (distances within a few percent) split
                // evenly instead of snapping on a round-off margin.  The
                // steepness keeps the response matrix essentially the
                // nearest-sample assignment, so solving it does not amplify
                // sample-scale noise in the measured jumps.
                let mut best = f64::INFINITY;
                for smp in samples {
                    let dx = smp.pos[0] - x;
                    let dy = smp.pos[1] - y;
                    best = best.min(dx * dx + dy * dy);
                }
                let floor = 1.0e-12 * h * h;
                let mut total = 0.0;
                for (s, smp) in samples.iter().enumerate() {
                    let dx = smp.pos[0] - x;
                    let dy = smp.pos[1] - y;
                    let r = (best + floor) / (dx * dx + dy * dy + floor);
                    let r4 = (r * r) * (r * r);
                    let r8 = r4 * r4;
                    let q = r8 * r8;
                    w_scratch[s] = q;
                    total += q;
                }
                let start = pool.len() as u32;
                for s in 0..ns {
                    let w = w_scratch[s] / total;
                    if w > 1.0e-14 {
                        pool.push(BlendWeight {
                            sample: s as u32,
                            weight: w,
                        });
                    }
                }
                node_index[k] = nodes.len() as u32;
                nodes.push(CorrNode {
                    node: k as u32,
                    coeff: 0.5 * (1.0 - d / band_width),
                    normal: [normals.x[k], normals.y[k]],
                    pool_start: start,
                    pool_len: pool.len() as u32 - start,
                });
            }
        }

        // Response matrix: m[s][t] is the drop in sample s's normal jump per
        // unit amplitude at sample t.  Corrections are applied with opposite
        // signs to the two parts, hence the factor 2.
        let mut m = vec![0.0f64; ns * ns];
        for (s, smp) in samples.iter().enumerate() {
            let (i0, j0, fx, fy, _, _) = grid.cell_at(smp.pos);
            let stencil = [
                (grid.idx(i0, j0), (1.0 - fx) * (1.0 - fy)),
                (grid.idx(i0 + 1, j0), fx * (1.0 - fy)),
                (grid.idx(i0, j0 + 1), (1.0 - fx) * fy),
                (grid.idx(i0 + 1, j0 + 1), fx * fy),
            ];
            for (k, w) in stencil {
                let ci = node_index[k];
                if ci == u32::MAX || w == 0.0 {
                    continue;
                }
                let cn = &nodes[ci as usize];
                let align = cn.normal[0] * smp.normal[0] + cn.normal[1] * smp.normal[1];
                let gain = 2.0 * w * cn.coeff * align;
                for bw in &pool[cn.pool_start as usize..(cn.pool_start + cn.pool_len) as usize] {
                    m[s * ns + bw.sample as usize] += gain * bw.weight;
                }
            }
        }
        // Samples whose response row or column vanishes (no aligned
        // correction direction near them) cannot be driven; decouple them so
        // the solve stays regular.
        for t in 0..ns {
            let col_max = (0..ns).fold(0.0f64, |acc, s| acc.max(m[s * ns + t].abs()));
            let row_max = (0..ns).fold(0.0f64, |acc, c| acc.max(m[t * ns + c].abs()));
            if col_max < 1.0e-8 || row_max < 1.0e-8 {
                m[t * ns + t] += 1.0;
            }
        }

        let lu = DenseLu::factor(m, ns);
        ProjectionPlan { nodes, pool, lu }
    }

    /// Cancels the normal-component jump at the samples in one pass.
    ///
    /// Returns the final largest absolute normal jump.  Fields whose jump is
    /// already below round-off are returned bit-identical.
    pub(super) fn project(&self, samples: &[BoundarySample], v: &mut PiecewiseVector) -> f64 {
        let scale = 1.0 + v.max_norm();
        let tol = 1.0e-13 * scale;
        let jump_at = |v: &PiecewiseVector, smp: &BoundarySample| {
            let [ax, ay] = v.plus.interp(smp.pos);
            let [bx, by] = v.minus.interp(smp.pos);
            (ax - bx) * smp.normal[0] + (ay - by) * smp.normal[1]
        };
        let jumps: Vec<f64> = samples.iter().map(|s| jump_at(v, s)).collect();
        let resid = jumps.iter().fold(0.0f64, |a, j| a.max(j.abs()));
        if resid <= tol {
            return resid;
        }
        let amp = self.lu.solve(&jumps);
        for cn in &self.nodes {
            let mut a = 0.0;
            for bw in &self.pool[cn.pool_start as usize..(cn.pool_start + cn.pool_len) as usize] {
                a += bw.weight * amp[bw.sample as usize];
            }
            let c = cn.coeff * a;
            let k = cn.node as usize;
            v.plus.x[k] -= c * cn.normal[0];
            v.plus.y[k] -= c * cn.normal[1];
            v.minus.x[k] += c * cn.normal[0];
            v.minus.y[k] += c * cn.normal[1];
        }
        samples
            .iter()
            .fold(0.0f64, |a, s| a.max(jump_at(v, s).abs()))
    }
}
