//! Fixed-timestep rigid-body world with a sequential-impulse contact solver.

use glam::{DMat3, DQuat, DVec3};
use serde::{Deserialize, Serialize};

use super::body::RigidBody;
use super::collision::{collide, penetration_depth, Contact, Pose};
use crate::error::{Error, Result};

/// Default integration step (240 Hz).
pub const DEFAULT_DT: f64 = 1.0 / 240.0;
pub const GRAVITY: DVec3 = DVec3::new(0.0, 0.0, -9.81);
/// Penetration allowed before a candidate placement counts as overlapping.
pub const CONTACT_TOLERANCE: f64 = 0.001;

const MAX_SPEED: f64 = 1.0e3;
const MANIFOLD_SIZE: usize = 4;
/// Cosine above which two contact normals count as the same direction.
const MANIFOLD_ALIGNMENT: f64 = 0.95;
/// Scores closer than this count as equal when picking manifold points
/// (m for distances, m² for areas).
const MANIFOLD_TIE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BodyId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub iterations: usize,
    pub baumgarte: f64,
    /// Penetration left uncorrected by the Baumgarte term.
    pub slop: f64,
    /// Contacts are generated up to this separation.
    pub speculative_margin: f64,
    /// Restitution is only applied above this approach speed (m/s).
    pub restitution_threshold: f64,
    pub linear_damping: f64,
    pub angular_damping: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            baumgarte: 0.2,
            slop: 0.0005,
            speculative_margin: 0.002,
            restitution_threshold: 0.5,
            linear_damping: 0.04,
            angular_damping: 0.04,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct CachedImpulse {
    key: u64,
    normal: f64,
    tangent: [f64; 2],
}

#[derive(Clone, Copy, Debug)]
struct SolverContact {
    a: usize,
    b: usize,
    ra: DVec3,
    rb: DVec3,
    normal: DVec3,
    tangents: [DVec3; 2],
    mass_normal: f64,
    mass_tangent: [f64; 2],
    target: f64,
    friction: f64,
    impulse_normal: f64,
    impulse_tangent: [f64; 2],
    key: u64,
}

#[derive(Clone, Debug)]
pub struct World {
    bodies: Vec<RigidBody>,
    pub gravity: DVec3,
    pub dt: f64,
    pub params: SolverParams,
    steps: u64,
    /// Accumulated impulses of the previous step, sorted by contact key.
    cache: Vec<CachedImpulse>,
}

impl Default for World {
    fn default() -> Self {
        Self::new(DEFAULT_DT)
    }
}

impl World {
    pub fn new(dt: f64) -> Self {
        Self {
            bodies: Vec::new(),
            gravity: GRAVITY,
            dt,
            params: SolverParams::default(),
            steps: 0,
            cache: Vec::new(),
        }
    }

    pub fn add_body(&mut self, body: RigidBody) -> BodyId {
        self.bodies.push(body);
        BodyId(self.bodies.len() - 1)
    }

    pub fn bodies(&self) -> &[RigidBody] {
        &self.bodies
    }

    pub fn body(&self, id: BodyId) -> Result<&RigidBody> {
        self.bodies.get(id.0).ok_or(Error::UnknownBody(id.0))
    }

    pub fn body_mut(&mut self, id: BodyId) -> Result<&mut RigidBody> {
        self.bodies.get_mut(id.0).ok_or(Error::UnknownBody(id.0))
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.bodies.iter().map(RigidBody::kinetic_energy).sum()
    }

    /// True iff `candidate` penetrates any body in the world by more than
    /// [`CONTACT_TOLERANCE`].
    pub fn check_overlap(&self, candidate: &RigidBody) -> bool {
        self.max_penetration(candidate) > CONTACT_TOLERANCE
    }

    pub fn max_penetration(&self, candidate: &RigidBody) -> f64 {
        let reach = candidate.shape.bounding_radius();
        self.bodies
            .iter()
            .filter(|b| {
                let limit = reach + b.shape.bounding_radius();
                b.state.position.distance_squared(candidate.state.position) <= limit * limit
            })
            .map(|b| penetration_depth(candidate, b))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Advances the world by one semi-implicit Euler step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.dt;
        let params = self.params;
        let n = self.bodies.len();

        let lin_damp = 1.0 / (1.0 + dt * params.linear_damping);
        let ang_damp = 1.0 / (1.0 + dt * params.angular_damping);
        let mut velocities: Vec<(DVec3, DVec3)> = Vec::with_capacity(n);
        for body in &self.bodies {
            if body.is_static() {
                velocities.push((DVec3::ZERO, DVec3::ZERO));
            } else {
                let v = (body.state.linear_velocity + self.gravity * dt) * lin_damp;
                velocities.push((v, body.state.angular_velocity * ang_damp));
            }
        }

        let poses: Vec<Pose> = self.bodies.iter().map(Pose::of).collect();
        let inv_mass: Vec<f64> = self.bodies.iter().map(RigidBody::inv_mass).collect();
        let inv_inertia: Vec<DMat3> = self
            .bodies
            .iter()
            .zip(&poses)
            .map(|(b, p)| b.inv_inertia_world(&p.rotation))
            .collect();

        let contacts = self.find_contacts(&poses, params.speculative_margin);
        let mut solver: Vec<SolverContact> = contacts
            .iter()
            .map(|c| self.prepare(c, &poses, &velocities, &inv_mass, &inv_inertia, params))
            .collect();

        // Warm start from the previous step's accumulated impulses.
        for sc in &mut solver {
            if let Ok(i) = self.cache.binary_search_by_key(&sc.key, |c| c.key) {
                let cached = self.cache[i];
                sc.impulse_normal = cached.normal;
                sc.impulse_tangent = cached.tangent;
                let p = sc.normal * cached.normal
                    + sc.tangents[0] * cached.tangent[0]
                    + sc.tangents[1] * cached.tangent[1];
                apply_impulse(sc, p, &mut velocities, &inv_mass, &inv_inertia);
            }
        }

        for _ in 0..params.iterations {
            for sc in &mut solver {
                let (va, wa) = velocities[sc.a];
                let (vb, wb) = velocities[sc.b];
                let rel = (vb + wb.cross(sc.rb)) - (va + wa.cross(sc.ra));

                let max_friction = sc.friction * sc.impulse_normal;
                for k in 0..2 {
                    let vt = rel.dot(sc.tangents[k]);
                    let lambda = -vt * sc.mass_tangent[k];
                    let old = sc.impulse_tangent[k];
                    sc.impulse_tangent[k] = (old + lambda).clamp(-max_friction, max_friction);
                    let delta = sc.impulse_tangent[k] - old;
                    apply_impulse(sc, sc.tangents[k] * delta, &mut velocities, &inv_mass, &inv_inertia);
                }

                let (va, wa) = velocities[sc.a];
                let (vb, wb) = velocities[sc.b];
                let vn = ((vb + wb.cross(sc.rb)) - (va + wa.cross(sc.ra))).dot(sc.normal);
                let lambda = (sc.target - vn) * sc.mass_normal;
                let old = sc.impulse_normal;
                sc.impulse_normal = (old + lambda).max(0.0);
                let delta = sc.impulse_normal - old;
                apply_impulse(sc, sc.normal * delta, &mut velocities, &inv_mass, &inv_inertia);
            }
        }

        self.cache.clear();
        self.cache.extend(solver.iter().map(|sc| CachedImpulse {
            key: sc.key,
            normal: sc.impulse_normal,
            tangent: sc.impulse_tangent,
        }));
        self.cache.sort_unstable_by_key(|c| c.key);

        self.steps += 1;
        for (i, body) in self.bodies.iter_mut().enumerate() {
            if body.is_static() {
                continue;
            }
            let (v, w) = velocities[i];
            let state = &mut body.state;
            state.linear_velocity = v;
            state.angular_velocity = w;
            state.position += v * dt;
            let spin = DQuat::from_xyzw(w.x, w.y, w.z, 0.0) * state.orientation;
            state.orientation = (state.orientation + spin * (0.5 * dt)).normalize();
            if !state.is_finite() || v.length() > MAX_SPEED || w.length() > MAX_SPEED {
                return Err(Error::SimulationDiverged {
                    body: i,
                    step: self.steps,
                });
            }
        }
        Ok(())
    }

    fn find_contacts(&self, poses: &[Pose], margin: f64) -> Vec<Contact> {
        let n = self.bodies.len();
        let half: Vec<DVec3> = self
            .bodies
            .iter()
            .zip(poses)
            .map(|(b, p)| b.shape.aabb_half_extents(&p.rotation) + DVec3::splat(margin))
            .collect();
        let mut contacts = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&self.bodies[i], &self.bodies[j]);
                if a.is_static() && b.is_static() {
                    continue;
                }
                let gap = (poses[i].position - poses[j].position).abs() - (half[i] + half[j]);
                if gap.max_element() > 0.0 {
                    continue;
                }
                let start = contacts.len();
                collide((i, a, &poses[i]), (j, b, &poses[j]), margin, &mut contacts);
                if contacts.len() - start > MANIFOLD_SIZE {
                    let reduced = reduce_manifold(&contacts[start..]);
                    contacts.truncate(start);
                    contacts.extend(reduced);
                }
            }
        }
        contacts
    }

    fn prepare(
        &self,
        c: &Contact,
        poses: &[Pose],
        velocities: &[(DVec3, DVec3)],
        inv_mass: &[f64],
        inv_inertia: &[DMat3],
        params: SolverParams,
    ) -> SolverContact {
        let (a, b) = (c.a, c.b);
        let ra = c.point - poses[a].position;
        let rb = c.point - poses[b].position;
        let n = c.normal;
        let t0 = if n.z.abs() < 0.9 {
            n.cross(DVec3::Z).normalize()
        } else {
            n.cross(DVec3::X).normalize()
        };
        let t1 = n.cross(t0);
        let eff = |d: DVec3| {
            let k = inv_mass[a]
                + inv_mass[b]
                + d.dot((inv_inertia[a] * ra.cross(d)).cross(ra) + (inv_inertia[b] * rb.cross(d)).cross(rb));
            if k > 0.0 {
                1.0 / k
            } else {
                0.0
            }
        };

        let (va, wa) = velocities[a];
        let (vb, wb) = velocities[b];
        let vn = ((vb + wb.cross(rb)) - (va + wa.cross(ra))).dot(n);
        let mut target = if c.depth > params.slop {
            params.baumgarte / self.dt * (c.depth - params.slop)
        } else if c.depth < 0.0 {
            c.depth / self.dt
        } else {
            0.0
        };
        let restitution = self.bodies[a].restitution.max(self.bodies[b].restitution);
        if restitution > 0.0 && -vn > params.restitution_threshold {
            target = target.max(-restitution * vn);
        }

        SolverContact {
            a,
            b,
            ra,
            rb,
            normal: n,
            tangents: [t0, t1],
            mass_normal: eff(n),
            mass_tangent: [eff(t0), eff(t1)],
            target,
            friction: (self.bodies[a].friction * self.bodies[b].friction).sqrt(),
            impulse_normal: 0.0,
            impulse_tangent: [0.0; 2],
            key: c.key(),
        }
    }
}

/// Keeps four contacts spanning the largest area among those sharing the
/// deepest contact's normal, plus the two deepest of the rest. Selection
/// within the aligned set is purely geometric so that small rocking does
/// not change the chosen set between steps. Without the alignment filter,
/// speculative contacts beside an edge win the area test and the support
/// points underneath get dropped.
fn reduce_manifold(contacts: &[Contact]) -> Vec<Contact> {
    let deepest = (0..contacts.len())
        .max_by(|&i, &j| contacts[i].depth.total_cmp(&contacts[j].depth).then(j.cmp(&i)))
        .unwrap_or(0);
    let normal = contacts[deepest].normal;
    let (aligned, other): (Vec<Contact>, Vec<Contact>) =
        contacts.iter().partition(|c| c.normal.dot(normal) > MANIFOLD_ALIGNMENT);
    let mut kept = spread(&aligned, normal);
    let mut rest: Vec<usize> = (0..other.len()).collect();
    rest.sort_by(|&i, &j| other[j].depth.total_cmp(&other[i].depth).then(i.cmp(&j)));
    kept.extend(rest.into_iter().take(2).map(|i| other[i]));
    kept
}

fn spread(contacts: &[Contact], normal: DVec3) -> Vec<Contact> {
    if contacts.len() <= MANIFOLD_SIZE {
        return contacts.to_vec();
    }
    let axis = if normal.z.abs() < 0.9 { normal.cross(DVec3::Z) } else { normal.cross(DVec3::X) }.normalize();
    // Near ties go to the lowest feature id so that rounding noise does not
    // swap contacts between steps and throw away their warm-start impulses.
    let pick = |score: &dyn Fn(&Contact) -> f64, taken: &[usize]| {
        let free = || (0..contacts.len()).filter(|i| !taken.contains(i));
        let best = free().map(|i| score(&contacts[i])).fold(f64::NEG_INFINITY, f64::max);
        free()
            .filter(|&i| score(&contacts[i]) >= best - MANIFOLD_TIE)
            .min_by_key(|&i| (contacts[i].feature, i))
    };
    let first = pick(&|c| c.point.dot(axis), &[]).unwrap_or(0);
    let p0 = contacts[first].point;
    let mut taken = vec![first];
    let Some(second) = pick(&|c| c.point.distance_squared(p0), &taken) else {
        return taken.iter().map(|&i| contacts[i]).collect();
    };
    taken.push(second);
    let p1 = contacts[second].point;
    let signed_area = |c: &Contact| (p1 - p0).cross(c.point - p0).dot(normal);
    if let Some(third) = pick(&|c| signed_area(c).abs(), &taken) {
        taken.push(third);
        // The fourth point lies on the opposite side of the p0-p1 diagonal.
        let side = signed_area(&contacts[third]).signum();
        if let Some(fourth) = pick(&|c| -side * signed_area(c), &taken) {
            taken.push(fourth);
        }
    }
    taken.iter().map(|&i| contacts[i]).collect()
}

#[inline]
fn apply_impulse(
    sc: &SolverContact,
    p: DVec3,
    velocities: &mut [(DVec3, DVec3)],
    inv_mass: &[f64],
    inv_inertia: &[DMat3],
) {
    let (a, b) = (sc.a, sc.b);
    velocities[a].0 -= p * inv_mass[a];
    velocities[a].1 -= inv_inertia[a] * sc.ra.cross(p);
    velocities[b].0 += p * inv_mass[b];
    velocities[b].1 += inv_inertia[b] * sc.rb.cross(p);
}
