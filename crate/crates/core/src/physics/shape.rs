//! Primitive collision shapes.
//!
//! Every shape is expressed in its local frame: cuboids are centered on the
//! origin, cylinders are centered with their axis along local +z.

use glam::{DMat3, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of rim samples per cylinder cap used for contact generation.
const CYLINDER_RIM_SAMPLES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Cuboid { half_extents: [f64; 3] },
    Cylinder { radius: f64, half_height: f64 },
    Sphere { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Cuboid,
    Cylinder,
    Sphere,
}

/// Interior points whose distances to two faces differ by less than this
/// (m) are treated as lying on the edge between them.
const EDGE_TIE_BAND: f64 = 0.005;

/// Distance outside a face plane (m) below which a point still counts as
/// touching that face.
const SURFACE_SKIN: f64 = 1e-5;

impl Shape {
    pub fn cuboid(hx: f64, hy: f64, hz: f64) -> Self {
        Shape::Cuboid {
            half_extents: [hx, hy, hz],
        }
    }

    pub fn cylinder(radius: f64, half_height: f64) -> Self {
        Shape::Cylinder {
            radius,
            half_height,
        }
    }

    pub fn sphere(radius: f64) -> Self {
        Shape::Sphere { radius }
    }

    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Cuboid { .. } => ShapeKind::Cuboid,
            Shape::Cylinder { .. } => ShapeKind::Cylinder,
            Shape::Sphere { .. } => ShapeKind::Sphere,
        }
    }

    /// Dimension slots: half-extents for cuboids, `(radius, half_height, 0)`
    /// for cylinders and `(radius, 0, 0)` for spheres.
    pub fn dimensions(&self) -> [f64; 3] {
        match *self {
            Shape::Cuboid { half_extents } => half_extents,
            Shape::Cylinder {
                radius,
                half_height,
            } => [radius, half_height, 0.0],
            Shape::Sphere { radius } => [radius, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Cuboid { half_extents } => half_extents.iter().all(|h| h.is_finite() && *h > 0.0),
            Shape::Cylinder {
                radius,
                half_height,
            } => radius.is_finite() && half_height.is_finite() && radius > 0.0 && half_height > 0.0,
            Shape::Sphere { radius } => radius.is_finite() && radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidShape(format!("{self:?}")))
        }
    }

    /// Principal moments of inertia for a solid body of uniform density.
    pub fn inertia(&self, mass: f64) -> DVec3 {
        match *self {
            Shape::Cuboid { half_extents: [x, y, z] } => {
                DVec3::new(y * y + z * z, x * x + z * z, x * x + y * y) * (mass / 3.0)
            }
            Shape::Cylinder {
                radius: r,
                half_height: h,
            } => {
                let lateral = mass * (3.0 * r * r + 4.0 * h * h) / 12.0;
                DVec3::new(lateral, lateral, 0.5 * mass * r * r)
            }
            Shape::Sphere { radius } => DVec3::splat(0.4 * mass * radius * radius),
        }
    }

    /// Distance from the center to the lowest point when resting upright.
    pub fn bottom_offset(&self) -> f64 {
        match *self {
            Shape::Cuboid { half_extents } => half_extents[2],
            Shape::Cylinder { half_height, .. } => half_height,
            Shape::Sphere { radius } => radius,
        }
    }

    /// Half-extents of the upright footprint in the shape's own xy frame.
    pub fn footprint_half_extents(&self) -> [f64; 2] {
        match *self {
            Shape::Cuboid { half_extents } => [half_extents[0], half_extents[1]],
            Shape::Cylinder { radius, .. } | Shape::Sphere { radius } => [radius, radius],
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Cuboid { half_extents: [x, y, z] } => (x * x + y * y + z * z).sqrt(),
            Shape::Cylinder {
                radius,
                half_height,
            } => (radius * radius + half_height * half_height).sqrt(),
            Shape::Sphere { radius } => radius,
        }
    }

    /// World-axis-aligned half extents of the shape under rotation `rot`.
    pub fn aabb_half_extents(&self, rot: &DMat3) -> DVec3 {
        match *self {
            Shape::Cuboid { half_extents } => {
                let h = DVec3::from(half_extents);
                let abs = DMat3::from_cols(rot.x_axis.abs(), rot.y_axis.abs(), rot.z_axis.abs());
                abs * h
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let a = rot.z_axis;
                let radial = |c: f64| radius * (1.0 - c * c).max(0.0).sqrt();
                DVec3::new(
                    half_height * a.x.abs() + radial(a.x),
                    half_height * a.y.abs() + radial(a.y),
                    half_height * a.z.abs() + radial(a.z),
                )
            }
            Shape::Sphere { radius } => DVec3::splat(radius),
        }
    }

    /// Exact signed distance from a local-frame point to the surface
    /// (negative inside).
    pub fn sdf(&self, p: DVec3) -> f64 {
        match *self {
            Shape::Cuboid { half_extents } => {
                let q = p.abs() - DVec3::from(half_extents);
                q.max(DVec3::ZERO).length() + q.max_element().min(0.0)
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
            Shape::Sphere { radius } => p.length() - radius,
        }
    }

    /// Signed distance together with the outward unit normal of the closest
    /// surface feature.
    pub fn sdf_with_normal(&self, p: DVec3) -> (f64, DVec3) {
        match *self {
            Shape::Cuboid { half_extents } => {
                let h = DVec3::from(half_extents);
                let q = p.abs() - h;
                let sign = DVec3::new(sign(p.x), sign(p.y), sign(p.z));
                if q.x > 0.0 || q.y > 0.0 || q.z > 0.0 {
                    let out = q.max(DVec3::ZERO);
                    let d = out.length();
                    (d, (out * sign) / d)
                } else if q.x >= q.y && q.x >= q.z {
                    (q.x, DVec3::new(sign.x, 0.0, 0.0))
                } else if q.y >= q.z {
                    (q.y, DVec3::new(0.0, sign.y, 0.0))
                } else {
                    (q.z, DVec3::new(0.0, 0.0, sign.z))
                }
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let radial = if rho > 1e-12 {
                    DVec3::new(p.x / rho, p.y / rho, 0.0)
                } else {
                    DVec3::X
                };
                let axial = DVec3::new(0.0, 0.0, sign(p.z));
                let dr = rho - radius;
                let dz = p.z.abs() - half_height;
                if dr > 0.0 && dz > 0.0 {
                    let d = (dr * dr + dz * dz).sqrt();
                    (d, (radial * dr + axial * dz) / d)
                } else if dr > dz {
                    (dr, radial)
                } else {
                    (dz, axial)
                }
            }
            Shape::Sphere { radius } => {
                let len = p.length();
                let n = if len > 1e-12 { p / len } else { DVec3::Z };
                (len - radius, n)
            }
        }
    }

    /// Like [`Shape::sdf_with_normal`], but for points just inside an edge,
    /// where two faces are nearly equally close, the face is chosen by
    /// which side `hint` (the other body's center, local frame) lies on.
    /// Without this a box flush with a table edge gets pushed sideways off
    /// it by its own bottom corners.
    pub fn contact_normal(&self, p: DVec3, hint: DVec3) -> (f64, DVec3) {
        let (d, n) = self.sdf_with_normal(p);
        match *self {
            Shape::Cuboid { half_extents } => {
                let h = DVec3::from(half_extents);
                let q = p.abs() - h;
                // Points within a hair of a face plane count as on it;
                // edge-on-edge contacts otherwise flip between corner normals.
                if q.max_element() > SURFACE_SKIN {
                    return (d, n);
                }
                let d = q.max_element();
                let mut best: Option<(f64, usize)> = None;
                for i in 0..3 {
                    if q[i] < d - EDGE_TIE_BAND {
                        continue;
                    }
                    let score = sign(p[i]) * hint[i] / h[i];
                    if best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, i));
                    }
                }
                let i = best.map_or(0, |(_, i)| i);
                let mut n = DVec3::ZERO;
                n[i] = sign(p[i]);
                (q[i], n)
            }
            Shape::Cylinder { radius, half_height } => {
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let dr = rho - radius;
                let dz = p.z.abs() - half_height;
                if dr > SURFACE_SKIN || dz > SURFACE_SKIN || (dr - dz).abs() > EDGE_TIE_BAND || rho <= 1e-12 {
                    return (d, n);
                }
                let radial_score = (hint.x * p.x + hint.y * p.y) / rho / radius;
                let axial_score = sign(p.z) * hint.z / half_height;
                if radial_score > axial_score {
                    (dr, DVec3::new(p.x / rho, p.y / rho, 0.0))
                } else {
                    (dz, DVec3::new(0.0, 0.0, sign(p.z)))
                }
            }
            Shape::Sphere { .. } => (d, n),
        }
    }

    /// Surface sample points used as contact features. Spheres have none;
    /// they are handled analytically.
    pub fn sample_points(&self) -> Vec<DVec3> {
        match *self {
            Shape::Cuboid { half_extents } => {
                let h = DVec3::from(half_extents);
                let mut pts = Vec::with_capacity(20);
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            pts.push(h * DVec3::new(sx, sy, sz));
                        }
                    }
                }
                for s1 in [-1.0, 1.0] {
                    for s2 in [-1.0, 1.0] {
                        pts.push(DVec3::new(0.0, s1 * h.y, s2 * h.z));
                        pts.push(DVec3::new(s1 * h.x, 0.0, s2 * h.z));
                        pts.push(DVec3::new(s1 * h.x, s2 * h.y, 0.0));
                    }
                }
                pts
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let mut pts = Vec::with_capacity(2 * CYLINDER_RIM_SAMPLES);
                for z in [-half_height, half_height] {
                    for i in 0..CYLINDER_RIM_SAMPLES {
                        let t = std::f64::consts::TAU * i as f64 / CYLINDER_RIM_SAMPLES as f64;
                        pts.push(DVec3::new(radius * t.cos(), radius * t.sin(), z));
                    }
                }
                pts
            }
            Shape::Sphere { .. } => Vec::new(),
        }
    }

    /// First intersection distance of the ray `origin + t·dir` (t ≥ 0) with
    /// the solid, in the local frame. `dir` need not be normalized.
    pub fn ray_cast(&self, origin: DVec3, dir: DVec3) -> Option<f64> {
        match *self {
            Shape::Cuboid { half_extents } => {
                let h = DVec3::from(half_extents);
                let mut t_min = 0.0_f64;
                let mut t_max = f64::INFINITY;
                for axis in 0..3 {
                    let (o, d, e) = (origin[axis], dir[axis], h[axis]);
                    if d.abs() < 1e-15 {
                        if o.abs() > e {
                            return None;
                        }
                    } else {
                        let inv = 1.0 / d;
                        let (mut t0, mut t1) = ((-e - o) * inv, (e - o) * inv);
                        if t0 > t1 {
                            std::mem::swap(&mut t0, &mut t1);
                        }
                        t_min = t_min.max(t0);
                        t_max = t_max.min(t1);
                        if t_min > t_max {
                            return None;
                        }
                    }
                }
                Some(t_min)
            }
            Shape::Sphere { radius } => {
                let a = dir.length_squared();
                let b = origin.dot(dir);
                let c = origin.length_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                if t >= 0.0 {
                    Some(t)
                } else if c <= 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t >= 0.0 && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                // Lateral surface.
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 1e-15 {
                    let b = origin.x * dir.x + origin.y * dir.y;
                    let c = origin.x * origin.x + origin.y * origin.y - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        for t in [(-b - disc.sqrt()) / a, (-b + disc.sqrt()) / a] {
                            let z = origin.z + t * dir.z;
                            if z.abs() <= half_height {
                                consider(t);
                            }
                        }
                    }
                }
                // Caps.
                if dir.z.abs() > 1e-15 {
                    for zc in [-half_height, half_height] {
                        let t = (zc - origin.z) / dir.z;
                        let x = origin.x + t * dir.x;
                        let y = origin.y + t * dir.y;
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                if self.sdf(origin) <= 0.0 {
                    return Some(0.0);
                }
                best
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use glam::DQuat;

    #[test]
    fn cuboid_inertia_closed_form() {
        let s = Shape::cuboid(0.1, 0.2, 0.3);
        let i = s.inertia(12.0);
        // m/12 (w² + h²) with full widths
        assert!((i.x - 1.0 * (0.4f64.powi(2) + 0.6f64.powi(2))).abs() < 1e-12);
        assert!((i.z - 1.0 * (0.2f64.powi(2) + 0.4f64.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn sdf_matches_normal_variant() {
        let shapes = [
            Shape::cuboid(0.05, 0.07, 0.03),
            Shape::cylinder(0.04, 0.06),
            Shape::sphere(0.05),
        ];
        let pts = [
            DVec3::new(0.01, 0.02, -0.01),
            DVec3::new(0.2, -0.1, 0.05),
            DVec3::new(0.0, 0.0, 0.3),
            DVec3::new(0.049, 0.0, 0.0),
        ];
        for s in shapes {
            for p in pts {
                let (d, n) = s.sdf_with_normal(p);
                assert!((d - s.sdf(p)).abs() < 1e-12, "{s:?} {p}");
                assert!((n.length() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_ray_hits_tops() {
        let down = DVec3::new(0.0, 0.0, -1.0);
        let origin = DVec3::new(0.01, 0.01, 1.0);
        let t = Shape::cuboid(0.05, 0.05, 0.05).ray_cast(origin, down).unwrap();
        assert!((1.0 - t - 0.05).abs() < 1e-12);
        let t = Shape::cylinder(0.05, 0.1).ray_cast(origin, down).unwrap();
        assert!((1.0 - t - 0.1).abs() < 1e-12);
        let t = Shape::sphere(0.05).ray_cast(DVec3::new(0.0, 0.0, 1.0), down).unwrap();
        assert!((1.0 - t - 0.05).abs() < 1e-12);
        assert!(Shape::sphere(0.05)
            .ray_cast(DVec3::new(0.06, 0.0, 1.0), down)
            .is_none());
    }

    #[test]
    fn rotated_aabb_covers_samples() {
        let rot = DMat3::from_quat(DQuat::from_euler(glam::EulerRot::XYZ, 0.3, -0.7, 1.1));
        for s in [Shape::cuboid(0.05, 0.02, 0.08), Shape::cylinder(0.04, 0.09)] {
            let half = s.aabb_half_extents(&rot);
            for p in s.sample_points() {
                let w = rot * p;
                assert!(w.abs().cmple(half + 1e-12).all(), "{s:?}");
            }
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Shape::cuboid(0.1, 0.0, 0.1).validate().is_err());
        assert!(Shape::sphere(-1.0).validate().is_err());
        assert!(Shape::cylinder(0.1, 0.1).validate().is_ok());
    }
}
