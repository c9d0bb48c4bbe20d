//! Hybrid dynamical systems: a family of per-mode discrete-time dynamics
//! `x_{t+1} = f_a(x_t, u_t)` plus the smooth relaxation obtained by weighting
//! the modes with a probability vector, `f̂(x, u, p) = Σ_a p_a f_a(x, u)`.

mod box_pusher;
mod dubins_gears;

pub use box_pusher::{BoxPusher, BoxPusherParams};
pub use dubins_gears::{DubinsGears, DubinsGearsParams};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("mode probabilities must be in [0,1] and sum to 1 (got sum {0})")]
    InvalidSimplex(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}

/// Static description of a hybrid model: dimensions, per-mode control
/// bounds, and the integration step.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    /// State dimension n.
    pub state_dim: usize,
    /// Continuous control dimension m.
    pub control_dim: usize,
    /// Number of discrete modes N_a.
    pub num_modes: usize,
    /// Per-mode (lower, upper) control bounds.
    pub control_bounds: Vec<(DVector<f64>, DVector<f64>)>,
    /// Integration step [s].
    pub dt: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.num_modes == 0 {
            return Err(DynamicsError::InvalidSpec("need at least one mode".into()));
        }
        if self.dt <= 0.0 {
            return Err(DynamicsError::InvalidSpec(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.control_bounds.len() != self.num_modes {
            return Err(DynamicsError::InvalidSpec(
                "one bounds pair per mode required".into(),
            ));
        }
        for (lo, hi) in &self.control_bounds {
            if lo.len() != self.control_dim || hi.len() != self.control_dim {
                return Err(DynamicsError::InvalidSpec(
                    "bounds dimension != control dimension".into(),
                ));
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                return Err(DynamicsError::InvalidSpec(
                    "lower bound exceeds upper bound".into(),
                ));
            }
        }
        Ok(())
    }

    /// Componentwise intersection of the per-mode boxes. Under the mode
    /// relaxation a single `u` is shared by every mode at a timestep, so the
    /// intersection is the admissible set.
    pub fn effective_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = self.control_bounds[0].0.clone();
        let mut hi = self.control_bounds[0].1.clone();
        for (l, h) in &self.control_bounds[1..] {
            lo.zip_apply(l, |a, b| *a = a.max(b));
            hi.zip_apply(h, |a, b| *a = a.min(b));
        }
        (lo, hi)
    }
}

/// Continuous state vector. For the bundled planar models the leading three
/// components are an SE(2) configuration (x, y, θ) with θ in (−π, π].
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    v: DVector<f64>,
}

impl State {
    pub fn new(v: DVector<f64>) -> Self {
        Self { v }
    }

    /// SE(2) configuration state; wraps the heading.
    pub fn se2(x: f64, y: f64, theta: f64) -> Self {
        Self::new(DVector::from_vec(vec![x, y, wrap_angle(theta)]))
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.v
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.v[0], self.v[1])
    }

    pub fn heading(&self) -> f64 {
        self.v[2]
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|c| c.is_finite())
    }
}

/// Continuous control u stacked with a mode-probability vector p.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedControl {
    u: DVector<f64>,
    p: DVector<f64>,
}

impl AugmentedControl {
    /// Validates that `p` lies on the probability simplex.
    pub fn new(u: DVector<f64>, p: DVector<f64>) -> Result<Self, DynamicsError> {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
            return Err(DynamicsError::InvalidSimplex(sum));
        }
        Ok(Self { u, p })
    }

    /// No validation; intended for derivative checks and solver internals
    /// where `p` may temporarily leave the simplex.
    pub fn new_unchecked(u: DVector<f64>, p: DVector<f64>) -> Self {
        Self { u, p }
    }

    /// Zero-information control: uniform mode probabilities.
    pub fn uniform(u: DVector<f64>, num_modes: usize) -> Self {
        let p = DVector::from_element(num_modes, 1.0 / num_modes as f64);
        Self { u, p }
    }

    pub fn one_hot(u: DVector<f64>, mode: usize, num_modes: usize) -> Self {
        let mut p = DVector::zeros(num_modes);
        p[mode] = 1.0;
        Self { u, p }
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    /// Stacked vector [u; p] in the layout used by the solver.
    pub fn stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.u.len() + self.p.len());
        out.rows_mut(0, self.u.len()).copy_from(&self.u);
        out.rows_mut(self.u.len(), self.p.len()).copy_from(&self.p);
        out
    }

    /// Most likely mode.
    pub fn argmax_mode(&self) -> usize {
        self.p
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.total_cmp(b))
            .map(|(i, _)| i)
            .expect("at least one mode")
    }
}

/// Discrete-time hybrid dynamics with analytic derivatives.
pub trait HybridDynamics {
    fn spec(&self) -> &ModelSpec;

    /// Single-mode step before any heading wrap.
    fn step_mode_raw(&self, x: &State, u: &DVector<f64>, mode: usize) -> DVector<f64>;

    /// Jacobians (∂f_a/∂x, ∂f_a/∂u) of the raw single-mode step.
    fn mode_jacobians(&self, x: &State, u: &DVector<f64>, mode: usize)
        -> (DMatrix<f64>, DMatrix<f64>);

    /// Normalization applied after integration (SE(2) models wrap θ).
    fn wrap_state(&self, v: DVector<f64>) -> State {
        State::new(v)
    }

    /// Difference `a − b` in the state's tangent space (SE(2) models wrap the
    /// heading component).
    fn state_difference(&self, a: &State, b: &State) -> DVector<f64> {
        a.vector() - b.vector()
    }

    /// Steps the dynamics of a single mode.
    fn step_mode(&self, x: &State, u: &DVector<f64>, mode: usize) -> State {
        assert!(
            mode < self.spec().num_modes,
            "mode index {mode} out of range (N_a = {})",
            self.spec().num_modes
        );
        self.wrap_state(self.step_mode_raw(x, u, mode))
    }

    /// Steps the relaxed dynamics `Σ_a p_a f_a(x, u)`, wrapping afterwards.
    fn step_hybrid(&self, x: &State, uc: &AugmentedControl) -> State {
        let mut sum = DVector::zeros(self.spec().state_dim);
        for (a, &pa) in uc.p().iter().enumerate() {
            if pa != 0.0 {
                sum += self.step_mode_raw(x, uc.u(), a) * pa;
            }
        }
        self.wrap_state(sum)
    }

    /// Derivatives of the relaxed dynamics: `A = ∂f̂/∂x`,
    /// `B = [∂f̂/∂u, ∂f̂/∂p]` with `∂f̂/∂p_a = f_a(x, u)`.
    fn linearize(&self, x: &State, uc: &AugmentedControl) -> (DMatrix<f64>, DMatrix<f64>) {
        let spec = self.spec();
        let (n, m, na) = (spec.state_dim, spec.control_dim, spec.num_modes);
        let mut a_mat = DMatrix::zeros(n, n);
        let mut b_mat = DMatrix::zeros(n, m + na);
        for mode in 0..na {
            let pa = uc.p()[mode];
            if pa != 0.0 {
                let (fa_x, fa_u) = self.mode_jacobians(x, uc.u(), mode);
                a_mat += fa_x * pa;
                b_mat.view_mut((0, 0), (n, m)).add_assign_scaled(&fa_u, pa);
            }
            b_mat
                .view_mut((0, m + mode), (n, 1))
                .copy_from(&self.step_mode_raw(x, uc.u(), mode));
        }
        (a_mat, b_mat)
    }
}

trait AddAssignScaled {
    fn add_assign_scaled(&mut self, other: &DMatrix<f64>, scale: f64);
}

impl AddAssignScaled for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_scaled(&mut self, other: &DMatrix<f64>, scale: f64) {
        self.zip_apply(other, |a, b| *a += scale * b);
    }
}

/// The bundled models, dispatched by world-file name.
#[derive(Debug, Clone)]
pub enum Model {
    BoxPusher(BoxPusher),
    DubinsGears(DubinsGears),
}

impl HybridDynamics for Model {
    fn spec(&self) -> &ModelSpec {
        match self {
            Model::BoxPusher(m) => m.spec(),
            Model::DubinsGears(m) => m.spec(),
        }
    }

    fn step_mode_raw(&self, x: &State, u: &DVector<f64>, mode: usize) -> DVector<f64> {
        match self {
            Model::BoxPusher(m) => m.step_mode_raw(x, u, mode),
            Model::DubinsGears(m) => m.step_mode_raw(x, u, mode),
        }
    }

    fn mode_jacobians(
        &self,
        x: &State,
        u: &DVector<f64>,
        mode: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            Model::BoxPusher(m) => m.mode_jacobians(x, u, mode),
            Model::DubinsGears(m) => m.mode_jacobians(x, u, mode),
        }
    }

    fn wrap_state(&self, v: DVector<f64>) -> State {
        match self {
            Model::BoxPusher(m) => m.wrap_state(v),
            Model::DubinsGears(m) => m.wrap_state(v),
        }
    }

    fn state_difference(&self, a: &State, b: &State) -> DVector<f64> {
        match self {
            Model::BoxPusher(m) => m.state_difference(a, b),
            Model::DubinsGears(m) => m.state_difference(a, b),
        }
    }
}

/// Wrap helper shared by the SE(2) models: heading lives at index 2.
pub(crate) fn wrap_se2_state(mut v: DVector<f64>) -> State {
    v[2] = wrap_angle(v[2]);
    State::new(v)
}

pub(crate) fn se2_state_difference(a: &State, b: &State) -> DVector<f64> {
    let mut d = a.vector() - b.vector();
    d[2] = wrap_angle(d[2]);
    d
}
