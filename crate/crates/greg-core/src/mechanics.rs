//! Momentum evolution and its Hamiltonian-structure cross-checks: the
//! smooth coadjoint rate, the two-sided rate across a sliding interface,
//! midpoint shooting, flow integration to a piecewise arrow, the Poisson
//! bracket in two quadrature forms, and the operator representing it.
//!
//! Orientation and sign conventions, fixed here and used everywhere:
//!
//! * interface normals point into the plus region, `jump` is the plus trace
//!   minus the minus trace, and `boundary_integral(g, v)` integrates `g`
//!   against the mean normal speed of `v` (called the flux of `g` below);
//! * the planar specializations `dm(v1, v2) = curl2(m) * (v1 x v2)` and
//!   `i_v dm = curl2(m) * (-v_y, v_x)` stand in for the exterior calculus,
//!   with `v1 x v2 = v1_x v2_y - v1_y v2_x`;
//! * one-sided integration by parts, summed over both sides, reads
//!   `sum_s int_s (v . grad f + div(v) f) = -flux(jump(f), v)` for
//!   admissible `v` (continuous normal component): the plus side's outward
//!   normal on the interface is minus the shared normal, the minus side's is
//!   plus, and averaging the two one-sided traces into the flux costs a
//!   `mean(f) * jump(v . normal)` term that admissibility kills. Every
//!   boundary term below comes from this identity.
//!
//! The two-sided momentum rate carries half weights on its gradient and
//! divergence terms. Paired with the velocity, the curl term drops pointwise
//! and the half-weighted rest equals half the flux of `jump(m . v)`; the
//! moving interface contributes the same flux with the opposite sign through
//! the boundary slot of the energy differential, so the kinetic energy is
//! conserved. The smooth rate carries full weights; under the pairing the
//! interface terms make up the difference exactly, but the pointwise
//! integrands differ, which is why the substitution test below compares
//! paired values and not fields.
//!
//! Accuracy: rates are stencil-accurate (`O(h^2)`) away from the interface
//! band; paired identities (bracket form equivalence, operator duality,
//! energy drift) inherit the first-order accuracy of the one-sided Stokes
//! identity and of the boundary dual; time stepping is second order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::algebroid::{
    dual_anchor, pairing, reg_bracket, t_operator, InertiaOperator, OneFormDensity,
};
use crate::error::{Error, Result};
use crate::grid::{Grid2, ScalarField, VectorField};
use crate::groupoid::{identity_map, min_side_jacobian, side_name, GroupoidElement};
use crate::interface::{Interface, PiecewiseScalar, PiecewiseVector, Side};
#[allow(unused_imports)]
use crate::math::FloatExt;

/// A vector and a boundary scalar: one cotangent direction over a momentum
/// state. The boundary values live at the interface samples with the curve's
/// arclength density absorbed into the sample quadrature weights.
#[derive(Debug, Clone)]
pub struct CotangentDualElement {
    /// Two-sided velocity direction.
    pub v: PiecewiseVector,
    /// Boundary covector values, one per interface sample.
    pub n: Vec<f64>,
}

impl CotangentDualElement {
    /// Wraps the two slots.
    pub fn new(v: PiecewiseVector, n: Vec<f64>) -> Self {
        CotangentDualElement { v, n }
    }

    /// Zero element shaped for an interface.
    pub fn zeros(iface: &Interface) -> Self {
        CotangentDualElement {
            v: PiecewiseVector::zeros(iface.grid()),
            n: vec![0.0; iface.samples().len()],
        }
    }
}

/// A shot trajectory: momentum, interface, and velocity states at the time
/// knots of a unit-time integration.
#[derive(Debug, Clone)]
pub struct MomentumTrajectory {
    /// Increasing knots from 0 to 1 inclusive.
    pub times: Vec<f64>,
    /// Momentum state at each knot.
    pub momenta: Vec<OneFormDensity>,
    /// Interface state at each knot; empty when shooting without one.
    pub interfaces: Vec<Interface>,
    /// Kernel-inverted velocity at each knot (matches its momentum within
    /// solver tolerance by construction).
    pub velocities: Vec<PiecewiseVector>,
}

impl MomentumTrajectory {
    /// Number of stored knots (steps + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// True when no knots are stored (never the case for shot trajectories).
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Interface at a knot; `None` when the trajectory is smooth.
    pub fn interface_at(&self, idx: usize) -> Option<&Interface> {
        self.interfaces.get(idx)
    }

    /// Kinetic energy `0.5 <m, v>` at every knot.
    pub fn hamiltonians(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for idx in 0..self.len() {
            let h = 0.5
                * pairing(
                    self.interface_at(idx),
                    &self.momenta[idx],
                    &self.velocities[idx],
                )?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Smooth coadjoint rate in advective form:
/// `-[v . grad m + (grad v)^T m + m div v]`.
///
/// Both fields must share a grid (no interface in this mode). The companion
/// expansion through the planar exterior calculus is the interface-free
/// branch of [`euler_arnold_rhs`]; the two differ only by where the product
/// rule meets the stencil, which the tests pin at second order.
pub fn epdiff_rhs(m: &VectorField, v: &VectorField) -> VectorField {
    let grid = m.grid;
    assert!(v.grid == grid, "rate arguments live on different grids");
    let gmx = scalar_plane(grid, &m.x).gradient();
    let gmy = scalar_plane(grid, &m.y).gradient();
    let gvx = scalar_plane(grid, &v.x).gradient();
    let gvy = scalar_plane(grid, &v.y).gradient();
    let mut out = VectorField::zeros(grid);
    for k in 0..grid.len() {
        let div = gvx.x[k] + gvy.y[k];
        out.x[k] = -(v.x[k] * gmx.x[k]
            + v.y[k] * gmx.y[k]
            + m.x[k] * gvx.x[k]
            + m.y[k] * gvy.x[k]
            + m.x[k] * div);
        out.y[k] = -(v.x[k] * gmy.x[k]
            + v.y[k] * gmy.y[k]
            + m.x[k] * gvx.y[k]
            + m.y[k] * gvy.y[k]
            + m.y[k] * div);
    }
    out
}

/// Momentum and interface rates of the sliding evolution.
///
/// With an interface the momentum rate is, per side,
/// `-[curl2(m) * (-v_y, v_x) + 1/2 grad(m . v) + 1/2 div(v) m]`
/// built from the one-sided regularized operators and re-extended, and the
/// interface rate is the mean normal speed of `v` at the samples. Without
/// one the rate is the full-weight expansion
/// `-[curl2(m) * (-v_y, v_x) + grad(m . v) + div(v) m]`
/// and the interface rate is empty.
///
/// The caller provides `v` as the kernel inverse of `momentum`; nothing here
/// checks that, the formulas are evaluated as given.
pub fn euler_arnold_rhs(
    momentum: &OneFormDensity,
    velocity: &PiecewiseVector,
    iface: Option<&Interface>,
) -> Result<(PiecewiseVector, Vec<f64>)> {
    let grid = momentum.grid();
    if velocity.grid() != grid {
        return Err(Error::invalid("rate arguments live on different grids"));
    }
    let mw = weighted_covector(momentum);
    match iface {
        Some(ifc) => {
            if ifc.grid() != grid {
                return Err(Error::invalid(
                    "rate arguments do not live on the interface grid",
                ));
            }
            let curl = ifc.reg_curl2(&mw);
            let divv = ifc.reg_div(velocity);
            let ivm = contraction(&mw, velocity);
            let givm = ifc.reg_grad(&ivm);
            let mut rate = PiecewiseVector::zeros(grid);
            for side in [Side::Plus, Side::Minus] {
                let m = mw.part(side);
                let v = velocity.part(side);
                let c = &curl.part(side).values;
                let d = &divv.part(side).values;
                let g = givm.part(side);
                let out = rate.part_mut(side);
                for k in 0..grid.len() {
                    out.x[k] = c[k] * v.y[k] - 0.5 * g.x[k] - 0.5 * d[k] * m.x[k];
                    out.y[k] = -c[k] * v.x[k] - 0.5 * g.y[k] - 0.5 * d[k] * m.y[k];
                }
                let ext = ifc.extension(side);
                ext.apply_in_place(&mut out.x);
                ext.apply_in_place(&mut out.y);
            }
            Ok((rate, ifc.anchor(velocity)))
        }
        None => {
            let m = mw.part(Side::Plus);
            let v = velocity.part(Side::Plus);
            let gmx = scalar_plane(grid, &m.x).gradient();
            let gmy = scalar_plane(grid, &m.y).gradient();
            let gvx = scalar_plane(grid, &v.x).gradient();
            let gvy = scalar_plane(grid, &v.y).gradient();
            let mut ivm = ScalarField::zeros(grid);
            for k in 0..grid.len() {
                ivm.values[k] = m.x[k] * v.x[k] + m.y[k] * v.y[k];
            }
            let givm = ivm.gradient();
            let mut rate = VectorField::zeros(grid);
            for k in 0..grid.len() {
                let curl = gmy.x[k] - gmx.y[k];
                let div = gvx.x[k] + gvy.y[k];
                rate.x[k] = curl * v.y[k] - givm.x[k] - div * m.x[k];
                rate.y[k] = -curl * v.x[k] - givm.y[k] - div * m.y[k];
            }
            Ok((PiecewiseVector::from_smooth(&rate), Vec::new()))
        }
    }
}

/// Integrates the sliding evolution over unit time with the midpoint rule.
///
/// Each step inverts the kernel, evaluates [`euler_arnold_rhs`], advances
/// momentum and interface to the midpoint, re-extends the momentum parts
/// onto the moved masks, and repeats the advance over the full step with the
/// midpoint rates. Passing no interface integrates the smooth system (the
/// trajectory then stores no interfaces).
///
/// Errors: zero `steps`, a time step violating `dt * max|v| <= min spacing`
/// (also enforced by the interface transport itself), or a kernel solve
/// failure.
pub fn shoot(
    m0: &OneFormDensity,
    gamma0: Option<&Interface>,
    steps: usize,
    op: &InertiaOperator,
) -> Result<MomentumTrajectory> {
    if steps == 0 {
        return Err(Error::invalid("shooting needs at least one time step"));
    }
    let grid = m0.grid();
    let dt = 1.0 / steps as f64;
    let mut m = m0.clone();
    let mut ifc = gamma0.cloned();
    let mut v = op.invert(ifc.as_ref(), &m)?;

    let mut traj = MomentumTrajectory {
        times: Vec::with_capacity(steps + 1),
        momenta: Vec::with_capacity(steps + 1),
        interfaces: Vec::new(),
        velocities: Vec::with_capacity(steps + 1),
    };
    let record =
        |t: f64, m: &OneFormDensity, g: Option<&Interface>, v: &PiecewiseVector, traj: &mut MomentumTrajectory| {
            traj.times.push(t);
            traj.momenta.push(m.clone());
            if let Some(g) = g {
                traj.interfaces.push(g.clone());
            }
            traj.velocities.push(v.clone());
        };
    record(0.0, &m, ifc.as_ref(), &v, &mut traj);

    for step in 0..steps {
        check_cfl(grid, &v, dt)?;
        let (rate, _) = euler_arnold_rhs(&m, &v, ifc.as_ref())?;
        let mut m_half = m.clone();
        m_half.covector.axpy(0.5 * dt, &rate);
        let ifc_half = match &ifc {
            Some(g) => {
                let moved = g.advect(&v, 0.5 * dt)?;
                reextend(&moved, &mut m_half);
                Some(moved)
            }
            None => None,
        };
        let v_half = op.invert(ifc_half.as_ref(), &m_half)?;
        check_cfl(grid, &v_half, dt)?;
        let (rate_half, _) = euler_arnold_rhs(&m_half, &v_half, ifc_half.as_ref())?;
        m.covector.axpy(dt, &rate_half);
        if let Some(g) = ifc.take() {
            let moved = g.advect(&v_half, dt)?;
            reextend(&moved, &mut m);
            ifc = Some(moved);
        }
        v = op.invert(ifc.as_ref(), &m)?;
        record(
            (step + 1) as f64 / steps as f64,
            &m,
            ifc.as_ref(),
            &v,
            &mut traj,
        );
    }
    Ok(traj)
}

/// Integrates per-step velocities into a piecewise arrow.
///
/// Each side's forward map follows its own velocity extension with a
/// midpoint particle update; the inverse maps are updated semi-Lagrangian
/// style along backward characteristics; the interface is transported with
/// each step's velocity. The result's source is `gamma0` and its target is
/// the final interface.
///
/// Errors: an empty velocity list, a CFL violation, or a per-side Jacobian
/// losing positivity ("non-diffeomorphic step").
pub fn flow_integrate(
    velocities: &[PiecewiseVector],
    gamma0: &Interface,
) -> Result<GroupoidElement> {
    if velocities.is_empty() {
        return Err(Error::invalid(
            "flow integration needs at least one velocity sample",
        ));
    }
    let grid = gamma0.grid();
    for v in velocities {
        if v.grid() != grid {
            return Err(Error::invalid(
                "flow velocities do not live on the interface grid",
            ));
        }
    }
    let dt = 1.0 / velocities.len() as f64;
    let mut fwd = [identity_map(grid), identity_map(grid)];
    let mut inv = [identity_map(grid), identity_map(grid)];
    let mut ifc = gamma0.clone();
    for (step, v) in velocities.iter().enumerate() {
        check_cfl(grid, v, dt)?;
        let moved = ifc.advect(v, dt)?;
        for (s, side) in [Side::Plus, Side::Minus].into_iter().enumerate() {
            let vf = v.part(side);
            let phi = &mut fwd[s];
            for k in 0..grid.len() {
                let p = [phi.x[k], phi.y[k]];
                let k1 = vf.interp(p);
                let mid = [p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]];
                let k2 = vf.interp(mid);
                phi.x[k] = p[0] + dt * k2[0];
                phi.y[k] = p[1] + dt * k2[1];
            }
            let psi = &inv[s];
            let mut next = VectorField::zeros(grid);
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let k = grid.idx(i, j);
                    let x = grid.pos(i, j);
                    let k1 = [vf.x[k], vf.y[k]];
                    let mid = [x[0] - 0.5 * dt * k1[0], x[1] - 0.5 * dt * k1[1]];
                    let k2 = vf.interp(mid);
                    let back = [x[0] - dt * k2[0], x[1] - dt * k2[1]];
                    let q = psi.interp(back);
                    next.x[k] = q[0];
                    next.y[k] = q[1];
                }
            }
            inv[s] = next;
            let det = min_side_jacobian(gamma0, &fwd[s], side);
            if det <= 0.0 {
                return Err(Error::numerical(format!(
                    "non-diffeomorphic step: the {} forward map folds (min Jacobian {:.3e}) at t = {:.3}",
                    side_name(side),
                    det,
                    (step + 1) as f64 * dt,
                )));
            }
        }
        ifc = moved;
    }
    let [fwd_plus, fwd_minus] = fwd;
    let [inv_plus, inv_minus] = inv;
    GroupoidElement::from_parts(gamma0, &ifc, fwd_plus, fwd_minus, inv_plus, inv_minus)
}

/// Poisson bracket in jump form:
/// `<m, [v1, v2]> + flux(n2 + jump(m . v2), v1) - flux(n1 + jump(m . v1), v2)`.
///
/// Antisymmetric exactly (the expression swaps to its negation term by
/// term); agrees with [`poisson_bracket_div_form`] at first order in `h`.
pub fn poisson_bracket_jump_form(
    iface: &Interface,
    momentum: &OneFormDensity,
    e1: &CotangentDualElement,
    e2: &CotangentDualElement,
) -> Result<f64> {
    check_cotangent(iface, momentum, e1)?;
    check_cotangent(iface, momentum, e2)?;
    let mw = weighted_covector(momentum);
    let bracket = reg_bracket(Some(iface), &e1.v, &e2.v)?;
    let volume = pairing(Some(iface), momentum, &bracket)?;
    let flux1 = boundary_slot(iface, &mw, e1);
    let flux2 = boundary_slot(iface, &mw, e2);
    Ok(volume + iface.boundary_integral(&flux2, &e1.v) - iface.boundary_integral(&flux1, &e2.v))
}

/// Poisson bracket in divergence form:
/// `-int curl2(m) (v1 x v2) - flux(n1, v2) + flux(n2, v1) - int div(v1)
/// (m . v2) + int div(v2) (m . v1)`, all volume terms side-selected by the
/// masks.
pub fn poisson_bracket_div_form(
    iface: &Interface,
    momentum: &OneFormDensity,
    e1: &CotangentDualElement,
    e2: &CotangentDualElement,
) -> Result<f64> {
    check_cotangent(iface, momentum, e1)?;
    check_cotangent(iface, momentum, e2)?;
    let grid = iface.grid();
    let mw = weighted_covector(momentum);
    let curl = iface.reg_curl2(&mw);
    let mut cross = PiecewiseScalar::zeros(grid);
    for side in [Side::Plus, Side::Minus] {
        let a = e1.v.part(side);
        let b = e2.v.part(side);
        let out = cross.part_mut(side);
        for k in 0..grid.len() {
            out.values[k] = a.x[k] * b.y[k] - a.y[k] * b.x[k];
        }
    }
    let div1 = iface.reg_div(&e1.v);
    let div2 = iface.reg_div(&e2.v);
    let ivm1 = contraction(&mw, &e1.v);
    let ivm2 = contraction(&mw, &e2.v);
    let total = -masked_integral(iface, &pw_product(&curl, &cross))
        - iface.boundary_integral(&e1.n, &e2.v)
        + iface.boundary_integral(&e2.n, &e1.v)
        - masked_integral(iface, &pw_product(&div1, &ivm2))
        + masked_integral(iface, &pw_product(&div2, &ivm1));
    Ok(total)
}

/// The operator form of the bracket: rates `(rm, rn)` with
/// `<e2, (rm, rn)> = poisson_bracket(m, e1, e2)` for every `e2`, at the
/// first-order accuracy of the boundary dual. The momentum rate is
/// `-curl2(m) (-v_y, v_x) - div(v) m + transport_dual(m . v) - boundary_dual(n)`
/// per side and the interface rate is the mean normal speed of `v`.
///
/// The transport dual absorbs both the gradient term and the jump flux of
/// `m . v`: pairing it with `w` integrates `div(w) (m . v)` over the sides,
/// which is the one-sided Stokes identity's right-hand side with the
/// gradient term moved across.
pub fn hamiltonian_operator(
    iface: &Interface,
    momentum: &OneFormDensity,
    e: &CotangentDualElement,
) -> Result<(OneFormDensity, Vec<f64>)> {
    check_cotangent(iface, momentum, e)?;
    let grid = iface.grid();
    let mw = weighted_covector(momentum);
    let curl = iface.reg_curl2(&mw);
    let divv = iface.reg_div(&e.v);
    let ivm = contraction(&mw, &e.v);
    let transport = t_operator(iface, &ivm)?;
    let boundary = dual_anchor(iface, &e.n)?;
    let mut rate = PiecewiseVector::zeros(grid);
    for side in [Side::Plus, Side::Minus] {
        let m = mw.part(side);
        let v = e.v.part(side);
        let c = &curl.part(side).values;
        let d = &divv.part(side).values;
        let t = transport.part(side);
        let b = boundary.part(side);
        let out = rate.part_mut(side);
        for k in 0..grid.len() {
            out.x[k] = c[k] * v.y[k] - d[k] * m.x[k] + t.x[k] - b.x[k];
            out.y[k] = -c[k] * v.x[k] - d[k] * m.y[k] + t.y[k] - b.y[k];
        }
        let ext = iface.extension(side);
        ext.apply_in_place(&mut out.x);
        ext.apply_in_place(&mut out.y);
    }
    Ok((OneFormDensity::from_covector(rate), iface.anchor(&e.v)))
}

/// Pairs a cotangent element with a rate pair:
/// `<m-rate, e.v> + int_boundary e.n * interface-rate`.
pub fn cotangent_pairing(
    iface: &Interface,
    rate: &OneFormDensity,
    interface_rate: &[f64],
    e: &CotangentDualElement,
) -> Result<f64> {
    if interface_rate.len() != iface.samples().len() || e.n.len() != iface.samples().len() {
        return Err(Error::invalid(
            "boundary values do not match the interface sample count",
        ));
    }
    let volume = pairing(Some(iface), rate, &e.v)?;
    let prod: Vec<f64> = e
        .n
        .iter()
        .zip(interface_rate)
        .map(|(a, b)| a * b)
        .collect();
    Ok(volume + iface.integrate(&prod))
}

/// `n + jump(m . v)` at the samples: the boundary slot both bracket terms
/// carry.
fn boundary_slot(iface: &Interface, mw: &PiecewiseVector, e: &CotangentDualElement) -> Vec<f64> {
    let ivm = contraction(mw, &e.v);
    let jump = iface.jump(&ivm);
    e.n.iter().zip(jump).map(|(n, j)| n + j).collect()
}

fn check_cotangent(
    iface: &Interface,
    momentum: &OneFormDensity,
    e: &CotangentDualElement,
) -> Result<()> {
    if momentum.grid() != iface.grid() || e.v.grid() != iface.grid() {
        return Err(Error::invalid(
            "bracket arguments do not live on the interface grid",
        ));
    }
    if e.n.len() != iface.samples().len() {
        return Err(Error::invalid(format!(
            "boundary covector has {} values for {} interface samples",
            e.n.len(),
            iface.samples().len()
        )));
    }
    Ok(())
}

/// Covector parts with the explicit density weight folded in, so every
/// formula below sees the full momentum density against plain quadrature.
fn weighted_covector(momentum: &OneFormDensity) -> PiecewiseVector {
    let grid = momentum.grid();
    let mut out = momentum.covector.clone();
    for side in [Side::Plus, Side::Minus] {
        let part = out.part_mut(side);
        for k in 0..grid.len() {
            part.x[k] *= momentum.weight.values[k];
            part.y[k] *= momentum.weight.values[k];
        }
    }
    out
}

/// Per-side pointwise contraction `m . v` on the full grid.
fn contraction(m: &PiecewiseVector, v: &PiecewiseVector) -> PiecewiseScalar {
    let grid = m.grid();
    let mut out = PiecewiseScalar::zeros(grid);
    for side in [Side::Plus, Side::Minus] {
        let a = m.part(side);
        let b = v.part(side);
        let part = out.part_mut(side);
        for k in 0..grid.len() {
            part.values[k] = a.x[k] * b.x[k] + a.y[k] * b.y[k];
        }
    }
    out
}

/// Per-side pointwise product.
fn pw_product(a: &PiecewiseScalar, b: &PiecewiseScalar) -> PiecewiseScalar {
    let grid = a.grid();
    let mut out = PiecewiseScalar::zeros(grid);
    for side in [Side::Plus, Side::Minus] {
        let pa = &a.part(side).values;
        let pb = &b.part(side).values;
        let part = out.part_mut(side);
        for k in 0..grid.len() {
            part.values[k] = pa[k] * pb[k];
        }
    }
    out
}

/// Quadrature of a two-sided scalar with each node's part selected by the
/// side masks.
fn masked_integral(iface: &Interface, f: &PiecewiseScalar) -> f64 {
    let grid = iface.grid();
    let mut sum = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            let side = if iface.is_plus_index(k) {
                Side::Plus
            } else {
                Side::Minus
            };
            sum += grid.quad_weight(i, j) * f.part(side).values[k];
        }
    }
    sum
}

/// Re-extends both covector parts from the masks of a moved interface.
fn reextend(iface: &Interface, momentum: &mut OneFormDensity) {
    for side in [Side::Plus, Side::Minus] {
        let part = momentum.covector.part_mut(side);
        let ext = iface.extension(side);
        ext.apply_in_place(&mut part.x);
        ext.apply_in_place(&mut part.y);
    }
}

fn check_cfl(grid: Grid2, v: &PiecewiseVector, dt: f64) -> Result<()> {
    let speed = dt.abs() * v.max_norm();
    if speed > grid.h_min() * (1.0 + 1e-12) {
        return Err(Error::numerical(format!(
            "time step violates the CFL limit: dt*|v| = {:.3e} exceeds min spacing {:.3e}",
            speed,
            grid.h_min()
        )));
    }
    Ok(())
}

fn scalar_plane(grid: Grid2, values: &[f64]) -> ScalarField {
    ScalarField {
        grid,
        values: values.to_vec(),
    }
}
