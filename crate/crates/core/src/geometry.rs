//! Oriented 3D boxes and the overlap measures used for motion affinity.
//!
//! Boxes live in a right-handed world frame with `z` pointing up. The heading
//! `a` rotates the box about the vertical axis; `l` is the extent along the
//! heading direction, `w` the lateral extent and `h` the vertical extent.
//! The bird's-eye view (BEV) is the projection onto the `x`/`y` plane.

use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, floor, sin, sqrt};
use thiserror::Error;

/// Guard used for degenerate areas and volumes.
pub const EPS: f64 = 1e-9;

/// A 2D vertex in the ground plane.
pub type Vertex = [f64; 2];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box field `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("box extent `{0}` is negative")]
    NegativeExtent(&'static str),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = a - two_pi * floor((a + PI) / two_pi);
    // `t` is in [-pi, pi) up to rounding; move the lower end to the upper one.
    if t <= -PI {
        t += two_pi;
    }
    if t > PI {
        t -= two_pi;
    }
    t
}

/// Oriented 3D bounding box (center, extents, heading).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub a: f64,
}

impl Box3D {
    /// Builds a validated box with its heading wrapped into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, a: f64) -> Result<Self, GeometryError> {
        let b = Box3D { x, y, z, l, w, h, a: wrap_angle(a) };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from `[x, y, z, l, w, h, a]`.
    pub fn from_array(v: [f64; 7]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.a]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        const NAMES: [&str; 7] = ["x", "y", "z", "l", "w", "h", "a"];
        for (name, v) in NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(name));
            }
        }
        for (name, v) in [("l", self.l), ("w", self.w), ("h", self.h)] {
            if v < 0.0 {
                return Err(GeometryError::NegativeExtent(name));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    fn z_range(&self) -> (f64, f64) {
        (self.z - 0.5 * self.h, self.z + 0.5 * self.h)
    }

    /// Footprint vertices without validation.
    fn footprint(&self) -> [Vertex; 4] {
        let (s, c) = (sin(self.a), cos(self.a));
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        // Local corners in counter-clockwise order; rotation keeps the winding.
        [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)].map(|(u, v)| {
            [self.x + c * u - s * v, self.y + s * u + c * v]
        })
    }
}

/// The four ground-plane corners of `b`, counter-clockwise.
pub fn bev_corners(b: &Box3D) -> Result<[Vertex; 4], GeometryError> {
    b.validate()?;
    Ok(b.footprint())
}

/// Signed shoelace area; positive for counter-clockwise winding.
pub fn polygon_area(poly: &[Vertex]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

#[inline]
fn cross(o: Vertex, a: Vertex, b: Vertex) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Area of the intersection of two convex counter-clockwise polygons.
///
/// Clips `p` against every edge of `q` and measures the remainder with the
/// shoelace formula. Degenerate inputs (area below [`EPS`]) yield 0.
pub fn convex_polygon_intersection_area(p: &[Vertex], q: &[Vertex]) -> f64 {
    if polygon_area(p) < EPS || polygon_area(q) < EPS {
        return 0.0;
    }
    let mut out: Vec<Vertex> = p.to_vec();
    let mut input: Vec<Vertex> = Vec::with_capacity(p.len() + q.len());
    for i in 0..q.len() {
        if out.is_empty() {
            break;
        }
        let e0 = q[i];
        let e1 = q[(i + 1) % q.len()];
        core::mem::swap(&mut input, &mut out);
        out.clear();
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let d_cur = cross(e0, e1, cur);
            let d_prev = cross(e0, e1, prev);
            let cur_in = d_cur >= 0.0;
            let prev_in = d_prev >= 0.0;
            if cur_in != prev_in {
                let t = d_prev / (d_prev - d_cur);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if cur_in {
                out.push(cur);
            }
        }
    }
    polygon_area(&out).max(0.0)
}

/// Ground-plane overlap area of two boxes.
pub fn bev_intersection_area(b1: &Box3D, b2: &Box3D) -> f64 {
    convex_polygon_intersection_area(&b1.footprint(), &b2.footprint())
}

/// Rotated-rectangle IoU of the two footprints.
pub fn bev_iou(b1: &Box3D, b2: &Box3D) -> f64 {
    let inter = bev_intersection_area(b1, b2);
    let union = b1.bev_area() + b2.bev_area() - inter;
    if union <= EPS {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU of two oriented boxes sharing a vertical axis direction.
pub fn iou_3d(b1: &Box3D, b2: &Box3D) -> f64 {
    let (lo1, hi1) = b1.z_range();
    let (lo2, hi2) = b2.z_range();
    let dz = (hi1.min(hi2) - lo1.max(lo2)).max(0.0);
    let inter = if dz > 0.0 { bev_intersection_area(b1, b2) * dz } else { 0.0 };
    let union = b1.volume() + b2.volume() - inter;
    if union <= EPS {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Diagonal of the smallest axis-aligned box holding every corner of both boxes.
pub fn enclosing_diagonal(b1: &Box3D, b2: &Box3D) -> f64 {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for b in [b1, b2] {
        for v in b.footprint() {
            for k in 0..2 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        let (lo, hi) = b.z_range();
        min[2] = min[2].min(lo);
        max[2] = max[2].max(hi);
    }
    let d: [f64; 3] = core::array::from_fn(|k| max[k] - min[k]);
    sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

pub fn center_distance(b1: &Box3D, b2: &Box3D) -> f64 {
    let (dx, dy, dz) = (b1.x - b2.x, b1.y - b2.y, b1.z - b2.z);
    sqrt(dx * dx + dy * dy + dz * dz)
}

/// Normalized center-distance similarity `1 - rho / diagonal`, in `[0, 1]`.
///
/// Coincident point boxes (zero diagonal) score 1.
pub fn distance_term(b1: &Box3D, b2: &Box3D) -> f64 {
    let diag = enclosing_diagonal(b1, b2);
    if diag <= EPS {
        return 1.0;
    }
    (1.0 - center_distance(b1, b2) / diag).clamp(0.0, 1.0)
}

/// 3D-DIoU affinity: distance similarity plus volumetric IoU, in `[0, 2]`.
///
/// Two coincident degenerate boxes score 2 by convention.
pub fn diou_affinity(b1: &Box3D, b2: &Box3D) -> f64 {
    if enclosing_diagonal(b1, b2) <= EPS {
        return 2.0;
    }
    distance_term(b1, b2) + iou_3d(b1, b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cube(x: f64, y: f64, z: f64) -> Box3D {
        Box3D::new(x, y, z, 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    fn unit_square() -> Vec<Vertex> {
        alloc::vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    fn sorted(mut v: Vec<Vertex>) -> Vec<Vertex> {
        for p in v.iter_mut() {
            p[0] = (p[0] * 1e9).round() / 1e9;
            p[1] = (p[1] * 1e9).round() / 1e9;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.5), 0.5);
        assert_abs_diff_eq!(wrap_angle(-0.5 - 4.0 * PI), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn unit_box_corners() {
        let c = bev_corners(&cube(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            sorted(c.to_vec()),
            sorted(alloc::vec![[0.5, 0.5], [0.5, -0.5], [-0.5, 0.5], [-0.5, -0.5]])
        );
        let rotated = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, PI / 2.0).unwrap();
        assert_eq!(sorted(bev_corners(&rotated).unwrap().to_vec()), sorted(c.to_vec()));
        assert!(polygon_area(&c) > 0.0, "corners must be counter-clockwise");
    }

    #[test]
    fn rotated_corners_area() {
        let b = Box3D::new(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, PI / 4.0).unwrap();
        assert_abs_diff_eq!(polygon_area(&bev_corners(&b).unwrap()), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_rejected() {
        let b = Box3D { x: f64::NAN, y: 0.0, z: 0.0, l: 1.0, w: 1.0, h: 1.0, a: 0.0 };
        assert_eq!(bev_corners(&b), Err(GeometryError::NonFinite("x")));
        assert!(Box3D::new(0.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn square_overlaps() {
        let sq = unit_square();
        assert_abs_diff_eq!(convex_polygon_intersection_area(&sq, &sq), 1.0, epsilon = 1e-12);
        let shifted: Vec<Vertex> = sq.iter().map(|p| [p[0] + 0.5, p[1]]).collect();
        assert_abs_diff_eq!(convex_polygon_intersection_area(&sq, &shifted), 0.5, epsilon = 1e-12);
        let degenerate = alloc::vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert_eq!(convex_polygon_intersection_area(&sq, &degenerate), 0.0);
    }

    #[test]
    fn iou_examples() {
        let a = cube(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(iou_3d(&a, &a), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(iou_3d(&a, &cube(0.5, 0.0, 0.0)), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(iou_3d(&a, &cube(10.0, 0.0, 0.0)), 0.0);
        // vertical separation alone
        assert_eq!(iou_3d(&a, &cube(0.0, 0.0, 1.5)), 0.0);
    }

    #[test]
    fn enclosing_diagonal_examples() {
        let a = cube(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(enclosing_diagonal(&a, &a), sqrt(3.0), epsilon = 1e-12);
        assert_abs_diff_eq!(enclosing_diagonal(&a, &cube(9.0, 0.0, 0.0)), sqrt(102.0), epsilon = 1e-12);
        let p = Box3D::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(enclosing_diagonal(&p, &p), 0.0);
    }

    #[test]
    fn diou_examples() {
        let a = cube(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(diou_affinity(&a, &a), 2.0, epsilon = 1e-12);
        let far = diou_affinity(&a, &cube(9.0, 0.0, 0.0));
        assert_abs_diff_eq!(far, 1.0 - 9.0 / sqrt(102.0), epsilon = 1e-12);
        assert_abs_diff_eq!(far, 0.1089, epsilon = 1e-4);
        let p = Box3D::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(diou_affinity(&p, &p), 2.0);
    }

    #[test]
    fn distance_term_monotone() {
        let a = cube(0.0, 0.0, 0.0);
        let mut last = distance_term(&a, &a);
        assert_eq!(last, 1.0);
        for i in 1..50 {
            let d = distance_term(&a, &cube(0.2 * i as f64, 0.1 * i as f64, 0.0));
            assert!(d < last);
            last = d;
        }
    }
}
