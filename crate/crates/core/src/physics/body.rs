use glam::{DMat3, DQuat, DVec3};
use serde::{Deserialize, Serialize};

use super::shape::Shape;
use crate::error::{Error, Result};

/// Kinematic state of a rigid body. Velocities are expressed in the world
/// frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub position: DVec3,
    pub orientation: DQuat,
    pub linear_velocity: DVec3,
    pub angular_velocity: DVec3,
}

impl BodyState {
    pub fn at_rest(position: DVec3, orientation: DQuat) -> Self {
        Self {
            position,
            orientation,
            linear_velocity: DVec3::ZERO,
            angular_velocity: DVec3::ZERO,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.orientation.is_finite()
            && self.linear_velocity.is_finite()
            && self.angular_velocity.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub shape: Shape,
    /// Zero marks a static body.
    pub mass: f64,
    pub friction: f64,
    pub restitution: f64,
    /// Principal moments of inertia in the body frame.
    pub inertia: DVec3,
    pub state: BodyState,
}

impl RigidBody {
    pub fn new(shape: Shape, mass: f64, friction: f64, restitution: f64, state: BodyState) -> Result<Self> {
        shape.validate()?;
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(Error::InvalidShape(format!("mass must be >= 0, got {mass}")));
        }
        if !(friction >= 0.0) || !(0.0..1.0).contains(&restitution) {
            return Err(Error::InvalidShape(format!(
                "friction {friction} / restitution {restitution} out of range"
            )));
        }
        Ok(Self {
            shape,
            mass,
            friction,
            restitution,
            inertia: shape.inertia(mass),
            state,
        })
    }

    pub fn new_static(shape: Shape, friction: f64, position: DVec3, orientation: DQuat) -> Result<Self> {
        Self::new(shape, 0.0, friction, 0.0, BodyState::at_rest(position, orientation))
    }

    pub fn is_static(&self) -> bool {
        self.mass == 0.0
    }

    pub fn inv_mass(&self) -> f64 {
        if self.is_static() {
            0.0
        } else {
            1.0 / self.mass
        }
    }

    pub fn inv_inertia_world(&self, rot: &DMat3) -> DMat3 {
        if self.is_static() {
            return DMat3::ZERO;
        }
        let inv = DMat3::from_diagonal(self.inertia.recip());
        *rot * inv * rot.transpose()
    }

    pub fn rotation(&self) -> DMat3 {
        DMat3::from_quat(self.state.orientation)
    }

    pub fn kinetic_energy(&self) -> f64 {
        if self.is_static() {
            return 0.0;
        }
        let rot = self.rotation();
        let w_local = rot.transpose() * self.state.angular_velocity;
        0.5 * self.mass * self.state.linear_velocity.length_squared()
            + 0.5 * (self.inertia * w_local * w_local).element_sum()
    }
}
