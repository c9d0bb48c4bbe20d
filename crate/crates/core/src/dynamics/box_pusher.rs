//! Kinematic planar box pusher.
//!
//! The state is the box pose (x, y, θ). A mode selects which of the four
//! sides is pushed (a single contact point at the edge midpoint), which in
//! the body frame turns into a push direction offset of a·π/2. The controls
//! are the push speed v and the push angle ψ, the latter limited to a ±70°
//! motion cone about the face normal. Pushing off-center rotates the box at
//! rate c_ω·v·sin ψ. With the four symmetric sides the model behaves like a
//! Dubins car whose "gear" re-orients the drive direction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{se2_state_difference, wrap_se2_state, DynamicsError, HybridDynamics, ModelSpec, State};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxPusherParams {
    /// Integration step [s].
    pub dt: f64,
    /// Maximum push speed [m/s]; the minimum is 0 (no pulling).
    pub speed_max: f64,
    /// Motion-cone half angle [rad].
    pub push_angle_max: f64,
    /// Rotation produced per meter of off-axis pushing [rad/m].
    pub rotation_gain: f64,
}

impl Default for BoxPusherParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            speed_max: 1.0,
            push_angle_max: 70.0_f64.to_radians(),
            rotation_gain: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxPusher {
    spec: ModelSpec,
    params: BoxPusherParams,
}

impl BoxPusher {
    pub fn new(params: BoxPusherParams) -> Result<Self, DynamicsError> {
        if params.speed_max <= 0.0 || params.push_angle_max <= 0.0 {
            return Err(DynamicsError::InvalidSpec(
                "speed_max and push_angle_max must be positive".into(),
            ));
        }
        let lo = DVector::from_vec(vec![0.0, -params.push_angle_max]);
        let hi = DVector::from_vec(vec![params.speed_max, params.push_angle_max]);
        let spec = ModelSpec {
            state_dim: 3,
            control_dim: 2,
            num_modes: 4,
            control_bounds: vec![(lo, hi); 4],
            dt: params.dt,
        };
        spec.validate()?;
        Ok(Self { spec, params })
    }

    pub fn params(&self) -> &BoxPusherParams {
        &self.params
    }
}

impl HybridDynamics for BoxPusher {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn step_mode_raw(&self, x: &State, u: &DVector<f64>, mode: usize) -> DVector<f64> {
        let (v, psi) = (u[0], u[1]);
        let dt = self.params.dt;
        let dir = x.heading() + mode as f64 * std::f64::consts::FRAC_PI_2 + psi;
        DVector::from_vec(vec![
            x.vector()[0] + dt * v * dir.cos(),
            x.vector()[1] + dt * v * dir.sin(),
            x.vector()[2] + dt * self.params.rotation_gain * v * psi.sin(),
        ])
    }

    fn mode_jacobians(
        &self,
        x: &State,
        u: &DVector<f64>,
        mode: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let (v, psi) = (u[0], u[1]);
        let dt = self.params.dt;
        let c = self.params.rotation_gain;
        let dir = x.heading() + mode as f64 * std::f64::consts::FRAC_PI_2 + psi;
        let (sin_d, cos_d) = dir.sin_cos();

        let mut a = DMatrix::identity(3, 3);
        a[(0, 2)] = -dt * v * sin_d;
        a[(1, 2)] = dt * v * cos_d;

        let mut b = DMatrix::zeros(3, 2);
        b[(0, 0)] = dt * cos_d;
        b[(0, 1)] = -dt * v * sin_d;
        b[(1, 0)] = dt * sin_d;
        b[(1, 1)] = dt * v * cos_d;
        b[(2, 0)] = dt * c * psi.sin();
        b[(2, 1)] = dt * c * v * psi.cos();
        (a, b)
    }

    fn wrap_state(&self, v: DVector<f64>) -> State {
        wrap_se2_state(v)
    }

    fn state_difference(&self, a: &State, b: &State) -> DVector<f64> {
        se2_state_difference(a, b)
    }
}
