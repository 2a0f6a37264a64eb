//! Double-integrator plant: ẋ_p = x_v, ẋ_v = u.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, Vector};

/// Default simulation step (50 Hz).
pub const DEFAULT_DT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vector,
    pub velocity: Vector,
}

impl RobotState {
    pub fn new(position: Vector, velocity: Vector) -> Result<Self> {
        check_dim(position.dim())?;
        velocity.ensure_dim(position.dim())?;
        position.ensure_finite("position")?;
        velocity.ensure_finite("velocity")?;
        Ok(Self { position, velocity })
    }

    pub fn at_rest(position: Vector) -> Self {
        Self {
            position,
            velocity: Vector::zeros(position.dim()),
        }
    }

    pub fn dim(&self) -> usize {
        self.position.dim()
    }
}

/// Acceleration command sent to the vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlInput(pub Vector);

impl ControlInput {
    pub fn zeros(dim: usize) -> Self {
        Self(Vector::zeros(dim))
    }

    pub fn acceleration(&self) -> &Vector {
        &self.0
    }
}

/// Semi-implicit Euler step: the velocity is advanced first and the new
/// velocity drives the position update.
pub fn step(state: &RobotState, u: &ControlInput, dt: f64) -> Result<RobotState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    u.0.ensure_dim(state.dim())?;
    u.0.ensure_finite("control input")?;
    state.position.ensure_finite("position")?;
    state.velocity.ensure_finite("velocity")?;

    let velocity = state.velocity + u.0 * dt;
    let position = state.position + velocity * dt;
    Ok(RobotState { position, velocity })
}
