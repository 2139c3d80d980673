//! One-sided constant-normal extension with a replayable tape.
//!
//! Values living on one side of the interface are extended across it by
//! first-order upwind transport along the outward distance gradient, so the
//! extended field is constant along interface normals.  Nodes are processed
//! in order of increasing unsigned distance, which makes every update read
//! only already-known values; the resulting sequence of two-point convex
//! combinations is recorded as a tape.
//!
//! Recording the tape serves two purposes: repeated extensions against the
//! same geometry replay in linear time, and the exact transpose of the
//! extension operator is available by walking the tape backwards.  The
//! transpose is what turns boundary terms into grid functionals elsewhere,
//! and pairing tests hold to machine precision because the very same tape
//! is used in both directions.
//!
//! The extension is idempotent by construction: values on the source side
//! are never modified, and extended values depend on source values only.

use alloc::vec::Vec;

use crate::grid::{Grid2, ScalarField, VectorField};
#[allow(unused_imports)]
use crate::math::FloatExt;

/// Which side of the interface carries the authoritative values.
///
/// `Plus` is the closed region where the signed distance is non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The region where the signed distance is non-negative.
    Plus,
    /// The region where the signed distance is negative.
    Minus,
}

impl Side {
    /// The opposite side.
    pub fn other(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// One tape entry: `node` becomes a convex combination of two sources.
///
/// `src2 == u32::MAX` marks a single-source entry.
#[derive(Debug, Clone, Copy)]
struct TapeStep {
    node: u32,
    src1: u32,
    w1: f64,
    src2: u32,
    w2: f64,
}

const NO_SRC: u32 = u32::MAX;

/// Precomputed extension of one side's values onto the whole grid.
#[derive(Debug, Clone)]
pub struct ExtensionOp {
    grid: Grid2,
    steps: Vec<TapeStep>,
}

impl ExtensionOp {
    /// Builds the tape that extends values from `side` across the grid.
    ///
    /// `sdf` is the signed distance, `grad` its precomputed gradient and
    /// `chi_plus` the node membership of the positive region.
    pub fn build(sdf: &ScalarField, grad: &VectorField, chi_plus: &[bool], side: Side) -> Self {
        let grid = sdf.grid;
        let n = grid.len();
        let on_side = |k: usize| match side {
            Side::Plus => chi_plus[k],
            Side::Minus => !chi_plus[k],
        };

        // Targets sorted by unsigned distance, nearest to the interface
        // first, so upwind sources are already known when a node is reached.
        let mut targets: Vec<u32> = (0..n as u32).filter(|&k| !on_side(k as usize)).collect();
        targets.sort_by(|&a, &b| {
            let da = sdf.values[a as usize].abs();
            let db = sdf.values[b as usize].abs();
            da.partial_cmp(&db).unwrap_or(core::cmp::Ordering::Equal)
        });

        let mut known: Vec<bool> = (0..n).map(on_side).collect();
        let mut steps = Vec::with_capacity(targets.len());
        let mut pending = targets;

        // The outward direction on the target side is the gradient of the
        // unsigned distance.  Extending plus values means the targets lie in
        // the minus region, where that direction is -grad(sdf).
        let outward_sign = match side {
            Side::Plus => -1.0,
            Side::Minus => 1.0,
        };

        while !pending.is_empty() {
            let mut still_pending = Vec::new();
            let mut progressed = false;
            for &k in &pending {
                let ku = k as usize;
                let i = ku % grid.nx;
                let j = ku / grid.nx;
                let gx = outward_sign * grad.x[ku];
                let gy = outward_sign * grad.y[ku];
                // Upwind neighbours sit opposite the outward direction.
                let nbx = if gx > 0.0 {
                    i.checked_sub(1).map(|ii| grid.idx(ii, j))
                } else if gx < 0.0 {
                    (i + 1 < grid.nx).then(|| grid.idx(i + 1, j))
                } else {
                    None
                };
                let nby = if gy > 0.0 {
                    j.checked_sub(1).map(|jj| grid.idx(i, jj))
                } else if gy < 0.0 {
                    (j + 1 < grid.ny).then(|| grid.idx(i, j + 1))
                } else {
                    None
                };
                let mut wx = gx.abs() / grid.hx;
                let mut wy = gy.abs() / grid.hy;
                let sx = match nbx {
                    Some(m) if known[m] => Some(m),
                    _ => {
                        wx = 0.0;
                        None
                    }
                };
                let sy = match nby {
                    Some(m) if known[m] => Some(m),
                    _ => {
                        wy = 0.0;
                        None
                    }
                };
                let step = match (sx, sy) {
                    (Some(a), Some(b)) => {
                        let tot = wx + wy;
                        TapeStep {
                            node: k,
                            src1: a as u32,
                            w1: wx / tot,
                            src2: b as u32,
                            w2: wy / tot,
                        }
                    }
                    (Some(a), None) if wx > 0.0 => TapeStep {
                        node: k,
                        src1: a as u32,
                        w1: 1.0,
                        src2: NO_SRC,
                        w2: 0.0,
                    },
                    (None, Some(b)) if wy > 0.0 => TapeStep {
                        node: k,
                        src1: b as u32,
                        w1: 1.0,
                        src2: NO_SRC,
                        w2: 0.0,
                    },
                    _ => {
                        still_pending.push(k);
                        continue;
                    }
                };
                known[ku] = true;
                steps.push(step);
                progressed = true;
            }
            if !progressed {
                // Degenerate gradients or stencil dropouts left nodes
                // without an upwind source.  Copy each from its known
                // four-neighbour closest to the interface; the grid is
                // connected, so at least one such node exists per round.
                let mut fallback_hit = false;
                let mut retry = Vec::new();
                for &k in &still_pending {
                    let ku = k as usize;
                    let i = ku % grid.nx;
                    let j = ku / grid.nx;
                    let mut best: Option<(usize, f64)> = None;
                    let mut consider = |m: usize| {
                        if known[m] {
                            let d = sdf.values[m].abs();
                            if best.is_none_or(|(_, bd)| d < bd) {
                                best = Some((m, d));
                            }
                        }
                    };
                    if i > 0 {
                        consider(grid.idx(i - 1, j));
                    }
                    if i + 1 < grid.nx {
                        consider(grid.idx(i + 1, j));
                    }
                    if j > 0 {
                        consider(grid.idx(i, j - 1));
                    }
                    if j + 1 < grid.ny {
                        consider(grid.idx(i, j + 1));
                    }
                    if let Some((m, _)) = best {
                        known[ku] = true;
                        steps.push(TapeStep {
                            node: k,
                            src1: m as u32,
                            w1: 1.0,
                            src2: NO_SRC,
                            w2: 0.0,
                        });
                        fallback_hit = true;
                    } else {
                        retry.push(k);
                    }
                }
                debug_assert!(fallback_hit || retry.is_empty());
                still_pending = retry;
            }
            pending = still_pending;
        }

        ExtensionOp { grid, steps }
    }

    /// Grid the tape was built for.
    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    /// Replays the tape on raw values in place.
    pub fn apply_in_place(&self, values: &mut [f64]) {
        debug_assert_eq!(values.len(), self.grid.len());
        for s in &self.steps {
            let mut v = s.w1 * values[s.src1 as usize];
            if s.src2 != NO_SRC {
                v += s.w2 * values[s.src2 as usize];
            }
            values[s.node as usize] = v;
        }
    }

    /// Extends a scalar field; source-side values pass through unchanged.
    pub fn apply(&self, field: &ScalarField) -> ScalarField {
        let mut out = field.clone();
        self.apply_in_place(&mut out.values);
        out
    }

    /// Extends both components of a vector field.
    pub fn apply_vec(&self, field: &VectorField) -> VectorField {
        let mut out = field.clone();
        self.apply_in_place(&mut out.x);
        self.apply_in_place(&mut out.y);
        out
    }

    /// Applies the exact transpose of the extension to raw values in place.
    ///
    /// Walks the tape backwards, scattering each node's coefficient onto its
    /// sources and zeroing the node, so that
    /// `sum(apply(a) * b) == sum(a * transpose(b))` for all `a`, `b`.
    pub fn transpose_in_place(&self, values: &mut [f64]) {
        debug_assert_eq!(values.len(), self.grid.len());
        for s in self.steps.iter().rev() {
            let g = values[s.node as usize];
            values[s.node as usize] = 0.0;
            values[s.src1 as usize] += s.w1 * g;
            if s.src2 != NO_SRC {
                values[s.src2 as usize] += s.w2 * g;
            }
        }
    }

    /// Transpose acting on a scalar field.
    pub fn transpose(&self, field: &ScalarField) -> ScalarField {
        let mut out = field.clone();
        self.transpose_in_place(&mut out.values);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2;

    fn straight_setup() -> (Grid2, ScalarField, VectorField, Vec<bool>) {
        let grid = Grid2::unit(32, 32).unwrap();
        let sdf = ScalarField::from_fn(grid, |_, y| y - 0.5);
        let grad = sdf.gradient();
        let chi: Vec<bool> = sdf.values.iter().map(|&v| v >= 0.0).collect();
        (grid, sdf, grad, chi)
    }

    #[test]
    fn linear_field_extends_exactly_across_straight_interface() {
        let (grid, sdf, grad, chi) = straight_setup();
        let op = ExtensionOp::build(&sdf, &grad, &chi, Side::Plus);
        let f = ScalarField::from_fn(grid, |x, _| 3.0 * x - 1.0);
        let ext = op.apply(&f);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let [x, _] = grid.pos(i, j);
                assert!(
                    (ext.at(i, j) - (3.0 * x - 1.0)).abs() < 1.0e-12,
                    "node ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn extension_is_idempotent_and_ignores_far_side_input() {
        let (grid, sdf, grad, chi) = straight_setup();
        let op = ExtensionOp::build(&sdf, &grad, &chi, Side::Minus);
        let f = ScalarField::from_fn(grid, |x, y| if y < 0.5 { x * x + y } else { 77.0 });
        let ext = op.apply(&f);
        let ext2 = op.apply(&ext);
        for k in 0..grid.len() {
            assert!((ext.values[k] - ext2.values[k]).abs() < 1.0e-14);
            assert!(ext.values[k] < 10.0, "far-side sentinel leaked");
        }
    }

    #[test]
    fn transpose_is_exact_adjoint() {
        let grid = Grid2::unit(24, 24).unwrap();
        let sdf = ScalarField::from_fn(grid, |x, y| {
            ((x - 0.5).powi(2) + (y - 0.45).powi(2)).sqrt() - 0.22
        });
        let grad = sdf.gradient();
        let chi: Vec<bool> = sdf.values.iter().map(|&v| v >= 0.0).collect();
        for side in [Side::Plus, Side::Minus] {
            let op = ExtensionOp::build(&sdf, &grad, &chi, side);
            // Deterministic pseudo-random fields.
            let a = ScalarField::from_fn(grid, |x, y| (37.0 * x).sin() * (23.0 * y).cos() + x);
            let b = ScalarField::from_fn(grid, |x, y| (11.0 * x + 5.0 * y).sin() - y * y);
            let ea = op.apply(&a);
            let tb = op.transpose(&b);
            let lhs: f64 = ea.values.iter().zip(&b.values).map(|(p, q)| p * q).sum();
            let rhs: f64 = a.values.iter().zip(&tb.values).map(|(p, q)| p * q).sum();
            assert!(
                (lhs - rhs).abs() < 1.0e-12 * (1.0 + lhs.abs()),
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn circle_extension_is_constant_along_normals() {
        let grid = Grid2::unit(64, 64).unwrap();
        let sdf = ScalarField::from_fn(grid, |x, y| {
            ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt() - 0.25
        });
        let grad = sdf.gradient();
        let chi: Vec<bool> = sdf.values.iter().map(|&v| v >= 0.0).collect();
        let op = ExtensionOp::build(&sdf, &grad, &chi, Side::Minus);
        // A function of the angle only is constant along radial normals, so
        // its outward extension should reproduce it approximately.
        let f = ScalarField::from_fn(grid, |x, y| (y - 0.5).atan2(x - 0.5).sin());
        let ext = op.apply(&f);
        let mut worst = 0.0f64;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let [x, y] = grid.pos(i, j);
                let r = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
                // Check a collar outside the circle; first-order transport
                // smears by O(h) per row of travelled distance.
                if r > 0.25 && r < 0.32 {
                    let truth = (y - 0.5).atan2(x - 0.5).sin();
                    worst = worst.max((ext.at(i, j) - truth).abs());
                }
            }
        }
        assert!(worst < 0.08, "normal-constancy drift {worst}");
    }
}
