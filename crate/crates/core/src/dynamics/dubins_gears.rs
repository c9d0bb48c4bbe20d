//! Dubins car with gears: the mode picks one of a fixed set of forward (or
//! reverse) speeds, the continuous control is the turn rate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{se2_state_difference, wrap_se2_state, DynamicsError, HybridDynamics, ModelSpec, State};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DubinsGearsParams {
    /// Integration step [s].
    pub dt: f64,
    /// Per-gear longitudinal speed [m/s]; negative values reverse.
    pub speeds: Vec<f64>,
    /// Turn-rate limit [rad/s].
    pub omega_max: f64,
}

impl Default for DubinsGearsParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            speeds: vec![0.4, 1.0, 2.0, -0.4],
            omega_max: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DubinsGears {
    spec: ModelSpec,
    params: DubinsGearsParams,
}

impl DubinsGears {
    pub fn new(params: DubinsGearsParams) -> Result<Self, DynamicsError> {
        if params.speeds.is_empty() {
            return Err(DynamicsError::InvalidSpec("need at least one gear".into()));
        }
        if params.omega_max <= 0.0 {
            return Err(DynamicsError::InvalidSpec("omega_max must be positive".into()));
        }
        let lo = DVector::from_vec(vec![-params.omega_max]);
        let hi = DVector::from_vec(vec![params.omega_max]);
        let spec = ModelSpec {
            state_dim: 3,
            control_dim: 1,
            num_modes: params.speeds.len(),
            control_bounds: vec![(lo, hi); params.speeds.len()],
            dt: params.dt,
        };
        spec.validate()?;
        Ok(Self { spec, params })
    }

    pub fn params(&self) -> &DubinsGearsParams {
        &self.params
    }
}

impl HybridDynamics for DubinsGears {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn step_mode_raw(&self, x: &State, u: &DVector<f64>, mode: usize) -> DVector<f64> {
        let s = self.params.speeds[mode];
        let dt = self.params.dt;
        let theta = x.heading();
        DVector::from_vec(vec![
            x.vector()[0] + dt * s * theta.cos(),
            x.vector()[1] + dt * s * theta.sin(),
            x.vector()[2] + dt * u[0],
        ])
    }

    fn mode_jacobians(
        &self,
        x: &State,
        _u: &DVector<f64>,
        mode: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = self.params.speeds[mode];
        let dt = self.params.dt;
        let theta = x.heading();

        let mut a = DMatrix::identity(3, 3);
        a[(0, 2)] = -dt * s * theta.sin();
        a[(1, 2)] = dt * s * theta.cos();

        let mut b = DMatrix::zeros(3, 1);
        b[(2, 0)] = dt;
        (a, b)
    }

    fn wrap_state(&self, v: DVector<f64>) -> State {
        wrap_se2_state(v)
    }

    fn state_difference(&self, a: &State, b: &State) -> DVector<f64> {
        se2_state_difference(a, b)
    }
}
