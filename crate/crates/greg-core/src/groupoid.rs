//! Arrows of the piecewise-deformation groupoid.
//!
//! An arrow carries a source and a target interface together with one
//! deformation map per side. Each map is stored as a full-grid *position*
//! map (node -> mapped point), the smooth extension of the one-sided
//! deformation beyond its own side, so interpolating a map near the
//! interface never mixes values from the two sides. Arrows also cache the
//! per-side inverse position maps: warping an image pulls values back
//! through the inverse (no scattering), while the forward maps serve
//! composition and diagnostics.
//!
//! Accuracy notes. Composition interpolates one position map at the values
//! of another, which is exact for affine maps and second order in the grid
//! spacing for smooth ones; the groupoid laws therefore hold at machine
//! precision where bilinear interpolation reproduces the data (identity
//! laws) and to O(h^2) where it does not (associativity). Inversion runs a
//! fixed-point iteration on displacements, which converges only when the
//! displacement is a contraction; genuinely diffeomorphic maps with large
//! rotation can defeat it, and that failure is reported, not masked.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid2, ScalarField, VectorField};
use crate::interface::{Interface, Side};

/// Fixed-point inversion stops once the displacement residual drops below
/// this fraction of the domain diameter.
const INVERT_TOL: f64 = 1e-6;
/// Iteration cap for the fixed-point inversion.
const INVERT_MAX_ITER: usize = 50;
/// Minimum fraction of side nodes that must land on their own side of the
/// target interface (with a one-cell margin) for an arrow to be accepted.
const SIDE_LANDING_FRACTION: f64 = 0.99;

pub(crate) fn side_name(side: Side) -> &'static str {
    match side {
        Side::Plus => "plus",
        Side::Minus => "minus",
    }
}

/// The identity position map `x -> x`.
pub fn identity_map(grid: Grid2) -> VectorField {
    VectorField::from_fn(grid, |x, y| [x, y])
}

/// One arrow of the piecewise-deformation groupoid: a pair of one-sided
/// deformations between a source and a target interface.
///
/// Invariants held by every constructed arrow: each side map restricted to
/// its side of the source interface lands on the matching side of the
/// target interface (at least 99% of side nodes, one-cell margin), its
/// Jacobian determinant is positive at every node of its side, and both
/// maps push the source interface samples to within one cell of the target
/// interface.
#[derive(Debug, Clone)]
pub struct GroupoidElement {
    gamma_src: Interface,
    gamma_trg: Interface,
    phi_plus: VectorField,
    phi_minus: VectorField,
    inv_phi_plus: VectorField,
    inv_phi_minus: VectorField,
}

impl GroupoidElement {
    /// Builds an arrow from forward position maps, computing the inverse
    /// maps by fixed-point iteration.
    ///
    /// Validates the side-mapping invariants and fails with a descriptive
    /// error when the maps fold, cross the target interface, or cannot be
    /// inverted.
    pub fn from_maps(
        gamma_src: &Interface,
        gamma_trg: &Interface,
        phi_plus: VectorField,
        phi_minus: VectorField,
    ) -> Result<Self> {
        validate_arrow(gamma_src, gamma_trg, &phi_plus, &phi_minus)?;
        let grid = gamma_src.grid();
        let inv_phi_plus = invert_position_map(grid, &phi_plus, None)?;
        let inv_phi_minus = invert_position_map(grid, &phi_minus, None)?;
        Ok(GroupoidElement {
            gamma_src: gamma_src.clone(),
            gamma_trg: gamma_trg.clone(),
            phi_plus,
            phi_minus,
            inv_phi_plus,
            inv_phi_minus,
        })
    }

    /// Builds an arrow from forward and inverse position maps produced
    /// together (flow integration, file reload).
    ///
    /// Validates the same side-mapping invariants as [`Self::from_maps`]
    /// but trusts the supplied inverses; the caller guarantees they match
    /// the forward maps.
    pub fn from_parts(
        gamma_src: &Interface,
        gamma_trg: &Interface,
        phi_plus: VectorField,
        phi_minus: VectorField,
        inv_phi_plus: VectorField,
        inv_phi_minus: VectorField,
    ) -> Result<Self> {
        validate_arrow(gamma_src, gamma_trg, &phi_plus, &phi_minus)?;
        let grid = gamma_src.grid();
        if inv_phi_plus.grid != grid || inv_phi_minus.grid != grid {
            return Err(Error::invalid("inverse maps live on a different grid"));
        }
        Ok(GroupoidElement {
            gamma_src: gamma_src.clone(),
            gamma_trg: gamma_trg.clone(),
            phi_plus,
            phi_minus,
            inv_phi_plus,
            inv_phi_minus,
        })
    }

    /// Grid shared by every part of the arrow.
    pub fn grid(&self) -> Grid2 {
        self.gamma_src.grid()
    }

    /// Source interface (domain decomposition of the maps).
    pub fn gamma_src(&self) -> &Interface {
        &self.gamma_src
    }

    /// Target interface.
    pub fn gamma_trg(&self) -> &Interface {
        &self.gamma_trg
    }

    /// Forward position map of one side.
    pub fn map(&self, side: Side) -> &VectorField {
        match side {
            Side::Plus => &self.phi_plus,
            Side::Minus => &self.phi_minus,
        }
    }

    /// Cached inverse position map of one side.
    pub fn inverse_map(&self, side: Side) -> &VectorField {
        match side {
            Side::Plus => &self.inv_phi_plus,
            Side::Minus => &self.inv_phi_minus,
        }
    }

    /// Smallest Jacobian determinant of one side's forward map over the
    /// nodes of that side (side membership by the source interface).
    ///
    /// Positive values certify the map is locally orientation-preserving
    /// on its piece; the constructors reject non-positive values.
    pub fn min_jacobian(&self, side: Side) -> f64 {
        min_side_jacobian(&self.gamma_src, self.map(side), side)
    }

    /// Inverts the arrow: source and target swap and each side map is
    /// replaced by its inverse.
    ///
    /// The inverse maps are recomputed by the fixed-point iteration
    /// (seeded with the cached inverses, so the cost is usually one
    /// sweep); the cached forward maps become the new inverses exactly.
    pub fn inverse(&self) -> Result<GroupoidElement> {
        let grid = self.grid();
        let inv_plus = invert_position_map(grid, &self.phi_plus, Some(&self.inv_phi_plus))?;
        let inv_minus = invert_position_map(grid, &self.phi_minus, Some(&self.inv_phi_minus))?;
        Ok(GroupoidElement {
            gamma_src: self.gamma_trg.clone(),
            gamma_trg: self.gamma_src.clone(),
            phi_plus: inv_plus,
            phi_minus: inv_minus,
            inv_phi_plus: self.phi_plus.clone(),
            inv_phi_minus: self.phi_minus.clone(),
        })
    }

    /// Warps an image by the arrow: the result at a node reads the image
    /// at the inverse map of that node's side, sides decided by the
    /// target interface.
    pub fn act_on_image(&self, image: &ScalarField) -> Result<ScalarField> {
        let grid = self.grid();
        if image.grid != grid {
            return Err(Error::invalid("image grid does not match the arrow"));
        }
        let mut out = ScalarField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let m = if self.gamma_trg.is_plus_index(k) {
                    &self.inv_phi_plus
                } else {
                    &self.inv_phi_minus
                };
                let q = [m.x[k], m.y[k]];
                let p = grid.pos(i, j);
                // Untouched nodes copy through bitwise so the identity
                // arrow reproduces the image exactly.
                out.values[k] = if q == p { image.values[k] } else { image.interp(q) };
            }
        }
        Ok(out)
    }
}

/// The identity arrow at an interface: both side maps are the identity
/// and source equals target.
pub fn identity_element(gamma: &Interface) -> GroupoidElement {
    let id = identity_map(gamma.grid());
    GroupoidElement {
        gamma_src: gamma.clone(),
        gamma_trg: gamma.clone(),
        phi_plus: id.clone(),
        phi_minus: id.clone(),
        inv_phi_plus: id.clone(),
        inv_phi_minus: id,
    }
}

/// Composes two arrows: `g2` after `g1`, defined when the source of `g2`
/// matches the target of `g1` (signed distances agree to one cell on the
/// union of their bands).
///
/// Each side map composes by interpolating the outer map at the values of
/// the inner one; inverse maps compose in the opposite order. The result
/// keeps `g1`'s source and `g2`'s target exactly.
pub fn compose(g2: &GroupoidElement, g1: &GroupoidElement) -> Result<GroupoidElement> {
    let grid = g1.grid();
    if g2.grid() != grid {
        return Err(Error::invalid("arrows live on different grids"));
    }
    let a = g1.gamma_trg.sdf();
    let b = g2.gamma_src.sdf();
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        if g1.gamma_trg.in_band_index(k) || g2.gamma_src.in_band_index(k) {
            worst = worst.max((a.values[k] - b.values[k]).abs());
        }
    }
    if worst > grid.h_max() {
        return Err(Error::numerical(format!(
            "non-composable arrows: interfaces differ by {worst:.2e} on the band"
        )));
    }
    let comp = |outer: &VectorField, inner: &VectorField| -> VectorField {
        let mut out = VectorField::zeros(grid);
        for k in 0..grid.len() {
            let q = outer.interp([inner.x[k], inner.y[k]]);
            out.x[k] = q[0];
            out.y[k] = q[1];
        }
        out
    };
    Ok(GroupoidElement {
        gamma_src: g1.gamma_src.clone(),
        gamma_trg: g2.gamma_trg.clone(),
        phi_plus: comp(&g2.phi_plus, &g1.phi_plus),
        phi_minus: comp(&g2.phi_minus, &g1.phi_minus),
        inv_phi_plus: comp(&g1.inv_phi_plus, &g2.inv_phi_plus),
        inv_phi_minus: comp(&g1.inv_phi_minus, &g2.inv_phi_minus),
    })
}

/// Inverts a position map by fixed-point iteration on displacements:
/// `u_inv <- -u o (id + u_inv)`, stopping when the residual
/// `sup |u_inv + u o (id + u_inv)|` falls below [`INVERT_TOL`] times the
/// domain diameter.
///
/// Converges when the displacement is a contraction (Lipschitz constant
/// below one); the optional guess seeds the iteration.
fn invert_position_map(
    grid: Grid2,
    phi: &VectorField,
    guess: Option<&VectorField>,
) -> Result<VectorField> {
    let n = grid.len();
    let mut u = VectorField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            let p = grid.pos(i, j);
            u.x[k] = phi.x[k] - p[0];
            u.y[k] = phi.y[k] - p[1];
        }
    }
    // Inverse displacement iterate; -u is the first fixed-point sweep from
    // zero, so starting there saves an iteration.
    let mut vx: Vec<f64> = vec![0.0; n];
    let mut vy: Vec<f64> = vec![0.0; n];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            let p = grid.pos(i, j);
            match guess {
                Some(g) => {
                    vx[k] = g.x[k] - p[0];
                    vy[k] = g.y[k] - p[1];
                }
                None => {
                    vx[k] = -u.x[k];
                    vy[k] = -u.y[k];
                }
            }
        }
    }
    let tol = INVERT_TOL * grid.diameter();
    let mut residual = f64::INFINITY;
    for _ in 0..INVERT_MAX_ITER {
        residual = 0.0;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let p = grid.pos(i, j);
                let w = u.interp([p[0] + vx[k], p[1] + vy[k]]);
                residual = residual.max((vx[k] + w[0]).abs()).max((vy[k] + w[1]).abs());
                vx[k] = -w[0];
                vy[k] = -w[1];
            }
        }
        if residual <= tol {
            let mut out = VectorField::zeros(grid);
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let k = grid.idx(i, j);
                    let p = grid.pos(i, j);
                    out.x[k] = p[0] + vx[k];
                    out.y[k] = p[1] + vy[k];
                }
            }
            return Ok(out);
        }
    }
    Err(Error::numerical(format!(
        "map inversion stalled: residual {residual:.2e} after {INVERT_MAX_ITER} iterations"
    )))
}

/// Smallest Jacobian determinant of a position map over the nodes of one
/// side (central differences, one-sided at the domain boundary).
pub(crate) fn min_side_jacobian(gamma: &Interface, phi: &VectorField, side: Side) -> f64 {
    let grid = phi.grid;
    let gx = ScalarField {
        grid,
        values: phi.x.clone(),
    }
    .gradient();
    let gy = ScalarField {
        grid,
        values: phi.y.clone(),
    }
    .gradient();
    let mut worst = f64::INFINITY;
    for k in 0..grid.len() {
        if gamma.is_plus_index(k) != (side == Side::Plus) {
            continue;
        }
        let det = gx.x[k] * gy.y[k] - gx.y[k] * gy.x[k];
        worst = worst.min(det);
    }
    worst
}

/// Checks the arrow invariants shared by both constructors.
fn validate_arrow(
    gamma_src: &Interface,
    gamma_trg: &Interface,
    phi_plus: &VectorField,
    phi_minus: &VectorField,
) -> Result<()> {
    let grid = gamma_src.grid();
    if gamma_trg.grid() != grid || phi_plus.grid != grid || phi_minus.grid != grid {
        return Err(Error::invalid("arrow parts live on different grids"));
    }
    let h = grid.h_max();
    let sdf_trg = gamma_trg.sdf();
    for side in [Side::Plus, Side::Minus] {
        let phi = match side {
            Side::Plus => phi_plus,
            Side::Minus => phi_minus,
        };
        let det = min_side_jacobian(gamma_src, phi, side);
        if det <= 0.0 {
            return Err(Error::invalid(format!(
                "piecewise map folds on the {} side: min Jacobian {det:.3e}",
                side_name(side)
            )));
        }
        let mut total = 0usize;
        let mut landed = 0usize;
        for k in 0..grid.len() {
            if gamma_src.is_plus_index(k) != (side == Side::Plus) {
                continue;
            }
            total += 1;
            let s = sdf_trg.interp([phi.x[k], phi.y[k]]);
            let ok = match side {
                Side::Plus => s >= -h,
                Side::Minus => s <= h,
            };
            if ok {
                landed += 1;
            }
        }
        if (landed as f64) < SIDE_LANDING_FRACTION * total as f64 {
            let stray = 100.0 * (total - landed) as f64 / total as f64;
            return Err(Error::invalid(format!(
                "piecewise map sends {stray:.1}% of {}-side nodes across the target interface",
                side_name(side)
            )));
        }
    }
    let mut worst = 0.0f64;
    for s in gamma_src.samples() {
        for phi in [phi_plus, phi_minus] {
            let q = phi.interp(s.pos);
            worst = worst.max(sdf_trg.interp(q).abs());
        }
    }
    if worst > h {
        return Err(Error::invalid(format!(
            "pushforward of the source interface strays {worst:.2e} from the target"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn line_interface(grid: Grid2, c: f64) -> Interface {
        let ls = ScalarField::from_fn(grid, |_, y| y - c);
        Interface::build(&ls, None).unwrap()
    }

    fn circle_interface(grid: Grid2, r: f64) -> Interface {
        let ls = ScalarField::from_fn(grid, |x, y| {
            ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt() - r
        });
        Interface::build(&ls, None).unwrap()
    }

    /// Smooth position map that fixes the outer boundary and slides along
    /// the line y = 1/2: the normal displacement carries a (y - 1/2)
    /// factor so each side stays on its side and the line maps to itself.
    fn sliding_map(grid: Grid2, seed: u64, amp: f64) -> VectorField {
        let mut rng = lcg(seed);
        let (a1, a2, b1) = (rng(), rng(), rng());
        let (p1, p2) = (3.0 * rng(), 3.0 * rng());
        VectorField::from_fn(grid, |x, y| {
            let t = 16.0 * x * (1.0 - x) * y * (1.0 - y);
            let t = t * t;
            let sx = a1 * (2.0 * core::f64::consts::PI * x + p1).sin()
                + a2 * (core::f64::consts::PI * y + p2).cos();
            let sy = b1 * (2.0 * core::f64::consts::PI * (x + y)).cos();
            [x + amp * t * sx, y + amp * t * (y - 0.5) * sy]
        })
    }

    fn sliding_arrow(grid: Grid2, ifc: &Interface, seed: u64, amp: f64) -> GroupoidElement {
        GroupoidElement::from_maps(
            ifc,
            ifc,
            sliding_map(grid, seed, amp),
            sliding_map(grid, seed ^ 0x9e37, amp),
        )
        .unwrap()
    }

    /// Arrow translating each side tangentially by a constant (plus side
    /// by `a`, minus side by `-a`).
    fn translation_arrow(grid: Grid2, ifc: &Interface, a: f64) -> GroupoidElement {
        GroupoidElement::from_maps(
            ifc,
            ifc,
            VectorField::from_fn(grid, |x, y| [x + a, y]),
            VectorField::from_fn(grid, |x, y| [x - a, y]),
        )
        .unwrap()
    }

    /// Largest node-wise distance between the stored maps of two arrows.
    fn arrow_distance(a: &GroupoidElement, b: &GroupoidElement) -> f64 {
        let mut worst = 0.0f64;
        for side in [Side::Plus, Side::Minus] {
            for (ma, mb) in [
                (a.map(side), b.map(side)),
                (a.inverse_map(side), b.inverse_map(side)),
            ] {
                for k in 0..ma.grid.len() {
                    worst = worst.max((ma.x[k] - mb.x[k]).abs());
                    worst = worst.max((ma.y[k] - mb.y[k]).abs());
                }
            }
        }
        worst
    }

    /// Largest node-wise displacement of the forward maps from identity.
    fn displacement_from_identity(g: &GroupoidElement) -> f64 {
        let grid = g.grid();
        let mut worst = 0.0f64;
        for side in [Side::Plus, Side::Minus] {
            let m = g.map(side);
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let k = grid.idx(i, j);
                    let p = grid.pos(i, j);
                    worst = worst.max((m.x[k] - p[0]).abs()).max((m.y[k] - p[1]).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn identity_laws_hold() {
        let grid = Grid2::unit(64, 64).unwrap();
        let ifc = line_interface(grid, 0.5);
        let g = sliding_arrow(grid, &ifc, 5, 0.02);
        let left = compose(&identity_element(g.gamma_trg()), &g).unwrap();
        assert!(
            arrow_distance(&left, &g) <= 1e-10,
            "left identity law broke: {}",
            arrow_distance(&left, &g)
        );
        let right = compose(&g, &identity_element(g.gamma_src())).unwrap();
        assert!(
            arrow_distance(&right, &g) <= 1e-6 * grid.diameter(),
            "right identity law broke: {}",
            arrow_distance(&right, &g)
        );
    }

    #[test]
    fn source_and_target_laws_exact() {
        let grid = Grid2::unit(48, 48).unwrap();
        let ifc = line_interface(grid, 0.5);
        let g1 = sliding_arrow(grid, &ifc, 7, 0.015);
        let g2 = sliding_arrow(grid, &ifc, 8, 0.015);
        let c = compose(&g2, &g1).unwrap();
        assert_eq!(c.gamma_src().sdf().values, g1.gamma_src().sdf().values);
        assert_eq!(c.gamma_trg().sdf().values, g2.gamma_trg().sdf().values);
    }

    #[test]
    fn translations_compose_affinely() {
        let grid = Grid2::unit(64, 64).unwrap();
        let ifc = line_interface(grid, 0.5);
        let (a, b) = (0.07, 0.05);
        let c = compose(&translation_arrow(grid, &ifc, b), &translation_arrow(grid, &ifc, a)).unwrap();
        // Compare away from the right edge, where the outer map is read
        // beyond the domain and clamps.
        let mut worst = 0.0f64;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let [x, y] = grid.pos(i, j);
                if x > 1.0 - a - b - 2.0 * grid.hx {
                    continue;
                }
                let k = grid.idx(i, j);
                worst = worst.max((c.map(Side::Plus).x[k] - (x + a + b)).abs());
                worst = worst.max((c.map(Side::Plus).y[k] - y).abs());
                if x < a + b + 2.0 * grid.hx {
                    continue;
                }
                worst = worst.max((c.map(Side::Minus).x[k] - (x - a - b)).abs());
                worst = worst.max((c.map(Side::Minus).y[k] - y).abs());
            }
        }
        assert!(worst <= 1e-12, "affine composition defect {worst}");
    }

    #[test]
    fn associativity_defect_is_second_order() {
        let defect = |n: usize| -> f64 {
            let grid = Grid2::unit(n, n).unwrap();
            let ifc = line_interface(grid, 0.5);
            let g1 = sliding_arrow(grid, &ifc, 21, 0.02);
            let g2 = sliding_arrow(grid, &ifc, 22, 0.02);
            let g3 = sliding_arrow(grid, &ifc, 23, 0.02);
            let left = compose(&compose(&g3, &g2).unwrap(), &g1).unwrap();
            let right = compose(&g3, &compose(&g2, &g1).unwrap()).unwrap();
            arrow_distance(&left, &right)
        };
        // The taper-squared boundary layers of the test arrows are only
        // resolved from 64 nodes up; the coarser pair is pre-asymptotic.
        let (d64, d128) = (defect(64), defect(128));
        assert!(d64 <= 1e-3, "associativity defect too large: {d64}");
        assert!(
            d128 <= d64 / 2.5,
            "associativity defect not second order: {d64} -> {d128}"
        );
    }

    #[test]
    fn inverse_laws_hold() {
        let grid = Grid2::unit(64, 64).unwrap();
        let ifc = line_interface(grid, 0.5);

        let id = identity_element(&ifc);
        let id_inv = id.inverse().unwrap();
        assert!(arrow_distance(&id_inv, &id) == 0.0);

        let g = sliding_arrow(grid, &ifc, 41, 0.02);
        let round = compose(&g.inverse().unwrap(), &g).unwrap();
        let drift = displacement_from_identity(&round);
        assert!(
            drift <= 5e-3 * grid.diameter(),
            "inverse round trip drifted {drift}"
        );

        // Constant tangential translation inverts exactly.
        let t = translation_arrow(grid, &ifc, 0.06);
        let ti = t.inverse().unwrap();
        let mid = grid.idx(32, 40);
        let p = grid.pos(32, 40);
        assert!((ti.map(Side::Plus).x[mid] - (p[0] - 0.06)).abs() <= 1e-9);
        assert!((ti.map(Side::Minus).x[mid] - (p[0] + 0.06)).abs() <= 1e-9);
    }

    #[test]
    fn identity_action_is_exact() {
        let grid = Grid2::unit(48, 48).unwrap();
        let ifc = circle_interface(grid, 0.3);
        let image = ScalarField::from_fn(grid, |x, y| (5.0 * x).sin() * (3.0 * y).cos() + x);
        let warped = identity_element(&ifc).act_on_image(&image).unwrap();
        assert_eq!(warped.values, image.values);
    }

    #[test]
    fn translation_action_shifts_a_bump() {
        let grid = Grid2::unit(96, 96).unwrap();
        let ifc = line_interface(grid, 0.5);
        // Same displacement on both sides: a globally smooth translation
        // written as an arrow.
        let g = GroupoidElement::from_maps(
            &ifc,
            &ifc,
            VectorField::from_fn(grid, |x, y| [x + 0.1, y]),
            VectorField::from_fn(grid, |x, y| [x + 0.1, y]),
        )
        .unwrap();
        let image = ScalarField::from_fn(grid, |x, y| {
            (-((x - 0.35).powi(2) + (y - 0.5).powi(2)) / (2.0 * 0.06f64.powi(2))).exp()
        });
        let warped = g.act_on_image(&image).unwrap();
        let mut best = (0.0, [0.0, 0.0]);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                if warped.values[k] > best.0 {
                    best = (warped.values[k], grid.pos(i, j));
                }
            }
        }
        assert!((best.1[0] - 0.45).abs() <= grid.h_max(), "peak at {:?}", best.1);
        assert!((best.1[1] - 0.5).abs() <= grid.h_max(), "peak at {:?}", best.1);
    }

    #[test]
    fn pure_sliding_reproduces_sheared_image_off_band() {
        let grid = Grid2::unit(64, 64).unwrap();
        let ifc = line_interface(grid, 0.5);
        let d = 0.08;
        // Smooth-edged rectangle; edge width fixed so the comparison is a
        // pure interpolation-error bound.
        let edge = |s: f64| 0.5 * (1.0 + (s / 0.04).tanh());
        let rect = move |x: f64, y: f64| {
            edge(x - 0.25) * edge(0.75 - x) * edge(y - 0.3) * edge(0.7 - y)
        };
        let moving = ScalarField::from_fn(grid, rect);
        let fixed = ScalarField::from_fn(grid, |x, y| {
            if y >= 0.5 {
                rect(x - d, y)
            } else {
                rect(x + d, y)
            }
        });
        let g = translation_arrow(grid, &ifc, d);
        let warped = g.act_on_image(&moving).unwrap();
        let mut worst = 0.0f64;
        for k in 0..grid.len() {
            if ifc.sdf().values[k].abs() <= ifc.band_width() {
                continue;
            }
            worst = worst.max((warped.values[k] - fixed.values[k]).abs());
        }
        assert!(worst <= 2e-2, "sliding mismatch off band {worst}");
    }

    #[test]
    fn composed_arrows_keep_positive_jacobians() {
        let grid = Grid2::unit(48, 48).unwrap();
        let ifc = line_interface(grid, 0.5);
        let g1 = sliding_arrow(grid, &ifc, 61, 0.02);
        let g2 = sliding_arrow(grid, &ifc, 62, 0.02);
        let c = compose(&g2, &g1).unwrap();
        assert!(c.min_jacobian(Side::Plus) > 0.0);
        assert!(c.min_jacobian(Side::Minus) > 0.0);
    }

    #[test]
    fn invalid_arrows_are_rejected() {
        let grid = Grid2::unit(64, 64).unwrap();
        let ifc = line_interface(grid, 0.5);

        // Composition across mismatched interfaces.
        let g1 = sliding_arrow(grid, &ifc, 71, 0.01);
        let other = line_interface(grid, 0.56);
        let g2 = sliding_arrow(grid, &other, 72, 0.01);
        match compose(&g2, &g1) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("non-composable")),
            r => panic!("expected non-composable error, got {r:?}"),
        }

        // A folding map: the x-derivative turns negative near x = 0.
        let fold = VectorField::from_fn(grid, |x, y| [x - 3.2 * x * (1.0 - x), y]);
        match GroupoidElement::from_maps(&ifc, &ifc, fold, identity_map(grid)) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("folds")),
            r => panic!("expected fold error, got {r:?}"),
        }

        // A map that drags the plus side across the interface.
        let cross = VectorField::from_fn(grid, |x, y| [x, y - 0.2]);
        match GroupoidElement::from_maps(&ifc, &ifc, cross, identity_map(grid)) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("across the target")),
            r => panic!("expected side-crossing error, got {r:?}"),
        }

        // Grid mismatch in the image action.
        let g = identity_element(&ifc);
        let small = ScalarField::zeros(Grid2::unit(32, 32).unwrap());
        assert!(g.act_on_image(&small).is_err());
    }

    #[test]
    fn non_contractive_inversion_reports_stall() {
        let grid = Grid2::unit(48, 48).unwrap();
        let ifc = circle_interface(grid, 0.3);
        // Rotation by 120 degrees about the domain center: a genuine
        // diffeomorphism that preserves the circle, but its displacement
        // has Lipschitz constant sqrt(3) > 1 and defeats the fixed point.
        let (c, s) = ((2.0 * core::f64::consts::PI / 3.0).cos(), (2.0 * core::f64::consts::PI / 3.0).sin());
        let rot = VectorField::from_fn(grid, |x, y| {
            let (dx, dy) = (x - 0.5, y - 0.5);
            [0.5 + c * dx - s * dy, 0.5 + s * dx + c * dy]
        });
        match GroupoidElement::from_maps(&ifc, &ifc, rot.clone(), rot) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("stalled"), "got {msg}"),
            r => panic!("expected inversion stall, got {r:?}"),
        }
    }
}
