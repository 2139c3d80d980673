//! Boundary quadrature from marching squares.
//!
//! The zero set of the signed distance field is traced cell by cell: each
//! grid cell whose corner signs differ contributes one or two straight
//! segments with endpoints located by linear interpolation along cell edges.
//! Every segment becomes one quadrature sample at its midpoint, weighted by
//! its length, with the unit normal taken from the interpolated distance
//! gradient so that it points into the region where the distance is
//! positive.
//!
//! The ambiguous saddle cases (diagonally opposed corners of equal sign)
//! are resolved by the sign of the cell-centre average, which keeps the
//! traced curve consistent with the bilinear model used everywhere else.
//! Segment endpoints produced by exact zeros can coincide; such zero-length
//! segments are dropped rather than emitted with weight zero.

use alloc::vec::Vec;

use crate::grid::ScalarField;
#[allow(unused_imports)]
use crate::math::FloatExt;

/// One quadrature point on the interface.
#[derive(Debug, Clone, Copy)]
pub struct BoundarySample {
    /// Position of the sample in physical coordinates.
    pub pos: [f64; 2],
    /// Unit normal at the sample, pointing into the positive region.
    pub normal: [f64; 2],
    /// Quadrature weight, the length of the traced segment.
    pub weight: f64,
}

/// Edges of a cell, in the local numbering used by the case table.
#[derive(Clone, Copy, PartialEq)]
enum Edge {
    Bottom,
    Right,
    Top,
    Left,
}

/// Extracts quadrature samples for the zero set of `sdf`.
///
/// `gradient` must be the precomputed gradient field of `sdf`; it supplies
/// normals by bilinear interpolation at segment midpoints.  Returns an empty
/// list when the field has no sign change.
pub fn boundary_samples(
    sdf: &ScalarField,
    gradient: &crate::grid::VectorField,
) -> Vec<BoundarySample> {
    let grid = sdf.grid;
    let mut out = Vec::new();

    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let f00 = sdf.at(i, j);
            let f10 = sdf.at(i + 1, j);
            let f11 = sdf.at(i + 1, j + 1);
            let f01 = sdf.at(i, j + 1);
            let case = (usize::from(f00 >= 0.0))
                | (usize::from(f10 >= 0.0) << 1)
                | (usize::from(f11 >= 0.0) << 2)
                | (usize::from(f01 >= 0.0) << 3);
            if case == 0 || case == 15 {
                continue;
            }

            let [x0, y0] = grid.pos(i, j);
            let cross = |edge: Edge| -> [f64; 2] {
                let (fa, fb, pa, pb) = match edge {
                    Edge::Bottom => (f00, f10, [x0, y0], [x0 + grid.hx, y0]),
                    Edge::Right => (
                        f10,
                        f11,
                        [x0 + grid.hx, y0],
                        [x0 + grid.hx, y0 + grid.hy],
                    ),
                    Edge::Top => (
                        f01,
                        f11,
                        [x0, y0 + grid.hy],
                        [x0 + grid.hx, y0 + grid.hy],
                    ),
                    Edge::Left => (f00, f01, [x0, y0], [x0, y0 + grid.hy]),
                };
                let denom = fa - fb;
                let t = if denom == 0.0 {
                    0.5
                } else {
                    (fa / denom).clamp(0.0, 1.0)
                };
                [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
            };

            // Segment endpoints per case, corners numbered 00,10,11,01.
            let segments: &[(Edge, Edge)] = match case {
                1 | 14 => &[(Edge::Left, Edge::Bottom)],
                2 | 13 => &[(Edge::Bottom, Edge::Right)],
                3 | 12 => &[(Edge::Left, Edge::Right)],
                4 | 11 => &[(Edge::Right, Edge::Top)],
                6 | 9 => &[(Edge::Bottom, Edge::Top)],
                7 | 8 => &[(Edge::Left, Edge::Top)],
                5 => {
                    // Corners 00 and 11 positive; connect by centre sign.
                    if f00 + f10 + f11 + f01 >= 0.0 {
                        &[(Edge::Left, Edge::Top), (Edge::Bottom, Edge::Right)]
                    } else {
                        &[(Edge::Left, Edge::Bottom), (Edge::Right, Edge::Top)]
                    }
                }
                10 => {
                    if f00 + f10 + f11 + f01 >= 0.0 {
                        &[(Edge::Left, Edge::Bottom), (Edge::Right, Edge::Top)]
                    } else {
                        &[(Edge::Left, Edge::Top), (Edge::Bottom, Edge::Right)]
                    }
                }
                _ => unreachable!(),
            };

            for &(ea, eb) in segments {
                let p1 = cross(ea);
                let p2 = cross(eb);
                let len = ((p2[0] - p1[0]).powi(2) + (p2[1] - p1[1]).powi(2)).sqrt();
                if len < 1.0e-12 * grid.h_min() {
                    continue;
                }
                let mid = [0.5 * (p1[0] + p2[0]), 0.5 * (p1[1] + p2[1])];
                let [gx, gy] = gradient.interp(mid);
                let g = (gx * gx + gy * gy).sqrt();
                if g < 1.0e-8 {
                    // The distance gradient vanishes only at degenerate
                    // points; fall back to the segment's left normal, which
                    // matches the into-positive convention for the case
                    // ordering used above.
                    let n = [-(p2[1] - p1[1]) / len, (p2[0] - p1[0]) / len];
                    out.push(BoundarySample {
                        pos: mid,
                        normal: n,
                        weight: len,
                    });
                    continue;
                }
                out.push(BoundarySample {
                    pos: mid,
                    normal: [gx / g, gy / g],
                    weight: len,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2;

    #[test]
    fn straight_line_length_and_normals() {
        let grid = Grid2::unit(64, 64).unwrap();
        let sdf = ScalarField::from_fn(grid, |_, y| y - 0.5);
        let grad = sdf.gradient();
        let samples = boundary_samples(&sdf, &grad);
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        assert!((total - 1.0).abs() < 1.0e-9, "total length {total}");
        for s in &samples {
            assert!((s.pos[1] - 0.5).abs() < 1.0e-9);
            assert!((s.normal[0]).abs() < 1.0e-9);
            assert!((s.normal[1] - 1.0).abs() < 1.0e-9);
        }
    }

    #[test]
    fn circle_perimeter_within_one_percent() {
        let grid = Grid2::unit(64, 64).unwrap();
        let sdf = ScalarField::from_fn(grid, |x, y| {
            ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt() - 0.25
        });
        let grad = sdf.gradient();
        let samples = boundary_samples(&sdf, &grad);
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        let truth = 2.0 * core::f64::consts::PI * 0.25;
        assert!(
            (total - truth).abs() < 0.01 * truth,
            "perimeter {total} vs {truth}"
        );
        // Normals point away from the centre: positive region is outside.
        for s in &samples {
            let rx = s.pos[0] - 0.5;
            let ry = s.pos[1] - 0.5;
            let r = (rx * rx + ry * ry).sqrt();
            let dot = (rx * s.normal[0] + ry * s.normal[1]) / r;
            assert!(dot > 0.99, "normal misaligned: {dot}");
        }
    }
}
