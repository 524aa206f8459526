//! Narrow-phase contact generation and penetration queries.
//!
//! Cuboids and cylinders exchange surface sample points and test them
//! against the other shape's exact signed distance field. Spheres are
//! resolved analytically from their center. Box-box penetration depth for
//! overlap queries uses the separating axis test.

use glam::{DMat3, DVec3};

use super::body::RigidBody;
use super::shape::Shape;

/// World-frame placement of a body for one collision pass.
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    pub position: DVec3,
    pub rotation: DMat3,
}

impl Pose {
    pub fn of(body: &RigidBody) -> Self {
        Self {
            position: body.state.position,
            rotation: body.rotation(),
        }
    }

    #[inline]
    pub fn to_local(&self, p: DVec3) -> DVec3 {
        self.rotation.transpose() * (p - self.position)
    }

    #[inline]
    pub fn to_world(&self, p: DVec3) -> DVec3 {
        self.rotation * p + self.position
    }
}

/// A single contact between bodies `a` and `b`. The normal points from `a`
/// towards `b`; positive depth means penetration.
#[derive(Clone, Copy, Debug)]
pub struct Contact {
    pub a: usize,
    pub b: usize,
    pub point: DVec3,
    pub normal: DVec3,
    pub depth: f64,
    /// Stable identifier of the generating feature, used for warm starting.
    pub feature: u32,
}

impl Contact {
    pub fn key(&self) -> u64 {
        ((self.a as u64) << 44) | ((self.b as u64) << 24) | self.feature as u64
    }
}

const FEATURE_SPHERE: u32 = 2 << 16;
const EDGE_FEATURE: u32 = 1 << 12;

/// Appends contacts between `a` and `b` whose separation is below `margin`.
pub fn collide(
    (ia, a, pa): (usize, &RigidBody, &Pose),
    (ib, b, pb): (usize, &RigidBody, &Pose),
    margin: f64,
    out: &mut Vec<Contact>,
) {
    match (&a.shape, &b.shape) {
        (Shape::Sphere { radius }, _) => {
            if let Some((point, n_b, depth)) = sphere_against(pa.position, *radius, &b.shape, pb, margin) {
                out.push(Contact {
                    a: ia,
                    b: ib,
                    point,
                    normal: -n_b,
                    depth,
                    feature: FEATURE_SPHERE,
                });
            }
        }
        (_, Shape::Sphere { radius }) => {
            if let Some((point, n_a, depth)) = sphere_against(pb.position, *radius, &a.shape, pa, margin) {
                out.push(Contact {
                    a: ia,
                    b: ib,
                    point,
                    normal: n_a,
                    depth,
                    feature: FEATURE_SPHERE,
                });
            }
        }
        _ => {
            points_against((ia, a, pa), (ib, b, pb), 0, margin, out, false);
            points_against((ib, b, pb), (ia, a, pa), 1 << 16, margin, out, true);
        }
    }
}

/// Sphere at `center` against a shape. Returns the contact point on the
/// sphere, the outward normal of the other shape and the penetration depth.
fn sphere_against(center: DVec3, radius: f64, other: &Shape, pose: &Pose, margin: f64) -> Option<(DVec3, DVec3, f64)> {
    let local = pose.to_local(center);
    if local.length() > other.bounding_radius() + radius + margin {
        return None;
    }
    let (d, n_local) = other.sdf_with_normal(local);
    let sep = d - radius;
    if sep >= margin {
        return None;
    }
    let n = pose.rotation * n_local;
    Some((center - n * radius, n, -sep))
}

/// Sample points of `src` tested against the distance field of `dst`.
fn points_against(
    (is, src, ps): (usize, &RigidBody, &Pose),
    (id, dst, pd): (usize, &RigidBody, &Pose),
    feature_base: u32,
    margin: f64,
    out: &mut Vec<Contact>,
    swapped: bool,
) {
    let reach = dst.shape.bounding_radius() + margin;
    let rel_rot = pd.rotation.transpose() * ps.rotation;
    let rel_pos = pd.rotation.transpose() * (ps.position - pd.position);
    let mut push_point = |local: DVec3, p: DVec3, feature: u32, crossed: Option<usize>| {
        if local.length_squared() > reach * reach {
            return;
        }
        let (d, n_local) = dst.shape.contact_normal(local, rel_pos);
        if d >= margin {
            return;
        }
        // A crossing point only marks where a face ends. Pushing along the
        // crossed plane's own normal would shove the box sideways off it.
        if crossed.is_some_and(|axis| n_local[axis].abs() > 0.5) {
            return;
        }
        let n_dst = pd.rotation * n_local;
        let point = ps.to_world(p);
        // Normal must point from contact.a to contact.b.
        let (a, b, normal) = if swapped { (id, is, n_dst) } else { (is, id, -n_dst) };
        out.push(Contact {
            a,
            b,
            point,
            normal,
            depth: -d,
            feature,
        });
    };
    for (k, p) in src.shape.sample_points().into_iter().enumerate() {
        let local = rel_rot * p + rel_pos;
        push_point(local, p, feature_base | k as u32, None);
    }
    // Where edges of a box cross the face planes of a box beneath it lies
    // the true support boundary; corner and midpoint samples alone leave a
    // box hanging over an edge with too small a support polygon.
    if let (Shape::Cuboid { half_extents: hs }, Shape::Cuboid { half_extents: hd }) = (&src.shape, &dst.shape) {
        let (hs, hd) = (DVec3::from(*hs), DVec3::from(*hd));
        for (e, (p0, p1)) in cuboid_edges(hs).into_iter().enumerate() {
            let (l0, l1) = (rel_rot * p0 + rel_pos, rel_rot * p1 + rel_pos);
            for axis in 0..3 {
                let (a0, a1) = (l0[axis], l1[axis]);
                if (a1 - a0).abs() < 1e-12 {
                    continue;
                }
                for (f, plane) in [-hd[axis], hd[axis]].into_iter().enumerate() {
                    let t = (plane - a0) / (a1 - a0);
                    if !(t > 0.0 && t < 1.0) {
                        continue;
                    }
                    let local = l0 + (l1 - l0) * t;
                    let src_point = p0 + (p1 - p0) * t;
                    push_point(local, src_point, feature_base | EDGE_FEATURE | (e * 6 + axis * 2 + f) as u32, Some(axis));
                }
            }
        }
    }
}

/// The 12 edges of a cuboid with half extents `h`.
fn cuboid_edges(h: DVec3) -> [(DVec3, DVec3); 12] {
    let mut edges = [(DVec3::ZERO, DVec3::ZERO); 12];
    let mut n = 0;
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for su in [-1.0, 1.0] {
            for sv in [-1.0, 1.0] {
                let mut a = DVec3::ZERO;
                a[u] = su * h[u];
                a[v] = sv * h[v];
                let mut b = a;
                a[axis] = -h[axis];
                b[axis] = h[axis];
                edges[n] = (a, b);
                n += 1;
            }
        }
    }
    edges
}

/// Signed penetration depth of two oriented boxes along their minimum
/// separating axis. Negative values mean the boxes are apart.
pub fn obb_penetration(ha: DVec3, pa: &Pose, hb: DVec3, pb: &Pose) -> f64 {
    let t = pb.position - pa.position;
    let axes_a = [pa.rotation.x_axis, pa.rotation.y_axis, pa.rotation.z_axis];
    let axes_b = [pb.rotation.x_axis, pb.rotation.y_axis, pb.rotation.z_axis];
    let project = |axes: &[DVec3; 3], h: DVec3, l: DVec3| {
        h.x * axes[0].dot(l).abs() + h.y * axes[1].dot(l).abs() + h.z * axes[2].dot(l).abs()
    };
    let mut depth = f64::INFINITY;
    let mut test = |l: DVec3| {
        let len = l.length();
        if len < 1e-9 {
            return;
        }
        let l = l / len;
        let d = project(&axes_a, ha, l) + project(&axes_b, hb, l) - t.dot(l).abs();
        depth = depth.min(d);
    };
    for a in axes_a {
        test(a);
    }
    for b in axes_b {
        test(b);
    }
    for a in axes_a {
        for b in axes_b {
            test(a.cross(b));
        }
    }
    depth
}

/// Largest penetration depth between two bodies (≤ 0 when apart).
pub fn penetration_depth(a: &RigidBody, b: &RigidBody) -> f64 {
    let (pa, pb) = (Pose::of(a), Pose::of(b));
    if let (Shape::Cuboid { half_extents: ha }, Shape::Cuboid { half_extents: hb }) = (&a.shape, &b.shape) {
        return obb_penetration(DVec3::from(*ha), &pa, DVec3::from(*hb), &pb);
    }
    let mut contacts = Vec::new();
    collide((0, a, &pa), (1, b, &pb), 0.0, &mut contacts);
    let mut depth = contacts.iter().map(|c| c.depth).fold(f64::NEG_INFINITY, f64::max);
    // Deep containment leaves no surface samples near the boundary.
    let ca = pb.to_local(pa.position);
    let cb = pa.to_local(pb.position);
    depth = depth.max(-b.shape.sdf(ca)).max(-a.shape.sdf(cb));
    depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::body::BodyState;
    use glam::DQuat;

    fn body(shape: Shape, pos: DVec3, yaw: f64) -> RigidBody {
        RigidBody::new(
            shape,
            1.0,
            0.5,
            0.0,
            BodyState::at_rest(pos, DQuat::from_rotation_z(yaw)),
        )
        .unwrap()
    }

    /// Axis-aligned box overlap depth computed directly.
    fn aabb_overlap(ha: DVec3, ca: DVec3, hb: DVec3, cb: DVec3) -> f64 {
        let d = (ha + hb) - (ca - cb).abs();
        d.min_element()
    }

    #[test]
    fn sat_matches_axis_aligned_oracle() {
        let cases = [
            (DVec3::splat(0.05), DVec3::ZERO, DVec3::splat(0.05), DVec3::new(0.099, 0.0, 0.0)),
            (DVec3::new(0.1, 0.02, 0.03), DVec3::ZERO, DVec3::splat(0.05), DVec3::new(0.1, 0.05, 0.0)),
            (DVec3::splat(0.05), DVec3::ZERO, DVec3::splat(0.05), DVec3::new(0.2, 0.0, 0.0)),
        ];
        for (ha, ca, hb, cb) in cases {
            let a = body(Shape::cuboid(ha.x, ha.y, ha.z), ca, 0.0);
            let b = body(Shape::cuboid(hb.x, hb.y, hb.z), cb, 0.0);
            let depth = penetration_depth(&a, &b);
            assert!((depth - aabb_overlap(ha, ca, hb, cb)).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_contact_is_exact() {
        let table = body(Shape::cuboid(0.3, 0.3, 0.35), DVec3::new(0.0, 0.0, 0.35), 0.0);
        let ball = body(Shape::sphere(0.05), DVec3::new(0.0, 0.0, 0.749), 0.0);
        let mut out = Vec::new();
        collide((0, &ball, &Pose::of(&ball)), (1, &table, &Pose::of(&table)), 0.002, &mut out);
        assert_eq!(out.len(), 1);
        assert!((out[0].depth - 0.001).abs() < 1e-12);
        assert!((out[0].normal - DVec3::NEG_Z).length() < 1e-12);
    }

    #[test]
    fn resting_box_produces_bottom_contacts() {
        let table = body(Shape::cuboid(0.3, 0.35, 0.35), DVec3::new(0.0, 0.0, 0.35), 0.0);
        let cube = body(Shape::cuboid(0.05, 0.05, 0.05), DVec3::new(0.0, 0.0, 0.7495), 0.3);
        let mut out = Vec::new();
        collide((0, &table, &Pose::of(&table)), (1, &cube, &Pose::of(&cube)), 0.002, &mut out);
        // 4 corners + 4 bottom edge midpoints
        assert_eq!(out.len(), 8);
        for c in &out {
            assert!((c.normal - DVec3::Z).length() < 1e-12, "table→cube normal is +z");
            assert!((c.depth - 0.0005).abs() < 1e-9);
        }
    }

    #[test]
    fn rotated_sat_detects_diagonal_gap() {
        // Two cubes rotated 45° about z, placed so their corners nearly touch.
        let h = 0.05;
        let diag = h * 2f64.sqrt();
        let a = body(Shape::cuboid(h, h, h), DVec3::ZERO, std::f64::consts::FRAC_PI_4);
        let b = body(Shape::cuboid(h, h, h), DVec3::new(2.0 * diag + 0.01, 0.0, 0.0), std::f64::consts::FRAC_PI_4);
        assert!(penetration_depth(&a, &b) < 0.0);
        let b = body(Shape::cuboid(h, h, h), DVec3::new(2.0 * diag - 0.01, 0.0, 0.0), std::f64::consts::FRAC_PI_4);
        assert!(penetration_depth(&a, &b) > 0.0);
    }
}
