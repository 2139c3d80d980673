//! Two-sided fields: independent smooth parts per interface side.
//!
//! A piecewise field stores one full-grid part per side of the interface.
//! Each part is a smooth extension of the side's data across the whole
//! domain, so derivative stencils evaluated anywhere on a part never reach
//! across the discontinuity.  The physically meaningful values of a part
//! are those on its own side plus its trace on the interface; the far-side
//! values are extension ghosts.
//!
//! Parts are plain grid fields, so the smooth-field algebra (axpy, scaling,
//! interpolation) lifts componentwise.  A field constructed from a single
//! smooth grid function has identical parts and behaves exactly like that
//! function under every operation in this crate.

use crate::grid::{Grid2, ScalarField, VectorField};

/// Scalar field with independent values on each side of an interface.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseScalar {
    /// Part carrying the positive side's values, extended across the grid.
    pub plus: ScalarField,
    /// Part carrying the negative side's values, extended across the grid.
    pub minus: ScalarField,
}

impl PiecewiseScalar {
    /// Zero field on `grid`.
    pub fn zeros(grid: Grid2) -> Self {
        PiecewiseScalar {
            plus: ScalarField::zeros(grid),
            minus: ScalarField::zeros(grid),
        }
    }

    /// Wraps two already-extended parts.
    pub fn from_parts(plus: ScalarField, minus: ScalarField) -> Self {
        debug_assert_eq!(plus.grid.len(), minus.grid.len());
        PiecewiseScalar { plus, minus }
    }

    /// Lifts a smooth field: both parts are the same function.
    pub fn from_smooth(field: &ScalarField) -> Self {
        PiecewiseScalar {
            plus: field.clone(),
            minus: field.clone(),
        }
    }

    /// Grid shared by both parts.
    pub fn grid(&self) -> Grid2 {
        self.plus.grid
    }

    /// `self += alpha * other`, per part.
    pub fn axpy(&mut self, alpha: f64, other: &PiecewiseScalar) {
        self.plus.axpy(alpha, &other.plus);
        self.minus.axpy(alpha, &other.minus);
    }

    /// Multiplies both parts by `alpha`.
    pub fn scale(&mut self, alpha: f64) {
        self.plus.scale(alpha);
        self.minus.scale(alpha);
    }

    /// Largest absolute value over both parts.
    pub fn max_abs(&self) -> f64 {
        self.plus.max_abs().max(self.minus.max_abs())
    }

    /// Part for `side`.
    pub fn part(&self, side: super::Side) -> &ScalarField {
        match side {
            super::Side::Plus => &self.plus,
            super::Side::Minus => &self.minus,
        }
    }

    /// Mutable part for `side`.
    pub fn part_mut(&mut self, side: super::Side) -> &mut ScalarField {
        match side {
            super::Side::Plus => &mut self.plus,
            super::Side::Minus => &mut self.minus,
        }
    }
}

/// Vector field with independent values on each side of an interface.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseVector {
    /// Part carrying the positive side's values, extended across the grid.
    pub plus: VectorField,
    /// Part carrying the negative side's values, extended across the grid.
    pub minus: VectorField,
}

impl PiecewiseVector {
    /// Zero field on `grid`.
    pub fn zeros(grid: Grid2) -> Self {
        PiecewiseVector {
            plus: VectorField::zeros(grid),
            minus: VectorField::zeros(grid),
        }
    }

    /// Wraps two already-extended parts.
    pub fn from_parts(plus: VectorField, minus: VectorField) -> Self {
        debug_assert_eq!(plus.grid.len(), minus.grid.len());
        PiecewiseVector { plus, minus }
    }

    /// Lifts a smooth field: both parts are the same function.
    pub fn from_smooth(field: &VectorField) -> Self {
        PiecewiseVector {
            plus: field.clone(),
            minus: field.clone(),
        }
    }

    /// Grid shared by both parts.
    pub fn grid(&self) -> Grid2 {
        self.plus.grid
    }

    /// `self += alpha * other`, per part.
    pub fn axpy(&mut self, alpha: f64, other: &PiecewiseVector) {
        self.plus.axpy(alpha, &other.plus);
        self.minus.axpy(alpha, &other.minus);
    }

    /// Multiplies both parts by `alpha`.
    pub fn scale(&mut self, alpha: f64) {
        self.plus.scale(alpha);
        self.minus.scale(alpha);
    }

    /// Largest Euclidean norm over both parts.
    pub fn max_norm(&self) -> f64 {
        self.plus.max_norm().max(self.minus.max_norm())
    }

    /// Pointwise average of the two parts, a single-valued velocity that
    /// matches both on their normal component after projection.
    pub fn average(&self) -> VectorField {
        let grid = self.grid();
        let mut out = self.plus.clone();
        for k in 0..grid.len() {
            out.x[k] = 0.5 * (self.plus.x[k] + self.minus.x[k]);
            out.y[k] = 0.5 * (self.plus.y[k] + self.minus.y[k]);
        }
        out
    }

    /// Part for `side`.
    pub fn part(&self, side: super::Side) -> &VectorField {
        match side {
            super::Side::Plus => &self.plus,
            super::Side::Minus => &self.minus,
        }
    }

    /// Mutable part for `side`.
    pub fn part_mut(&mut self, side: super::Side) -> &mut VectorField {
        match side {
            super::Side::Plus => &mut self.plus,
            super::Side::Minus => &mut self.minus,
        }
    }
}
