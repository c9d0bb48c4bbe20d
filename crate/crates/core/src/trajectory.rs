//! State–control trajectories over a fixed horizon.

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{AugmentedControl, HybridDynamics, State};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("need one more state than controls (states {states}, controls {controls})")]
    LengthMismatch { states: usize, controls: usize },
    #[error("trajectory must contain at least one control")]
    Empty,
}

/// Cost of a trajectory split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub control: f64,
    pub switching: f64,
    pub terminal: f64,
}

/// Horizon-T sequence of (state, control) pairs plus the terminal state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    states: Vec<State>,
    controls: Vec<AugmentedControl>,
    /// Filled in by the pipeline once the trajectory has been costed.
    pub breakdown: Option<CostBreakdown>,
}

impl Trajectory {
    pub fn new(
        states: Vec<State>,
        controls: Vec<AugmentedControl>,
    ) -> Result<Self, TrajectoryError> {
        if controls.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if states.len() != controls.len() + 1 {
            return Err(TrajectoryError::LengthMismatch {
                states: states.len(),
                controls: controls.len(),
            });
        }
        Ok(Self {
            states,
            controls,
            breakdown: None,
        })
    }

    /// Simulates the controls forward from `x0`; the result is dynamically
    /// consistent by construction.
    pub fn rollout<M: HybridDynamics + ?Sized>(
        model: &M,
        x0: State,
        controls: Vec<AugmentedControl>,
    ) -> Self {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0);
        for uc in &controls {
            let next = model.step_hybrid(states.last().expect("nonempty"), uc);
            states.push(next);
        }
        Self {
            states,
            controls,
            breakdown: None,
        }
    }

    /// Number of control steps T.
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn controls(&self) -> &[AugmentedControl] {
        &self.controls
    }

    pub fn state(&self, t: usize) -> &State {
        &self.states[t]
    }

    pub fn control(&self, t: usize) -> &AugmentedControl {
        &self.controls[t]
    }

    pub fn terminal_state(&self) -> &State {
        self.states.last().expect("nonempty")
    }

    /// Largest per-step dynamics violation `‖x_{t+1} − f̂(x_t, û_t)‖_∞`.
    pub fn max_defect<M: HybridDynamics + ?Sized>(&self, model: &M) -> f64 {
        let mut worst = 0.0f64;
        for t in 0..self.horizon() {
            let predicted = model.step_hybrid(&self.states[t], &self.controls[t]);
            let defect: DVector<f64> = predicted.vector() - self.states[t + 1].vector();
            worst = worst.max(defect.amax());
        }
        worst
    }

    /// Most likely mode per step.
    pub fn mode_sequence(&self) -> Vec<usize> {
        self.controls.iter().map(|c| c.argmax_mode()).collect()
    }

    /// Number of steps whose most likely mode differs from the next step's.
    pub fn mode_switch_count(&self) -> usize {
        let modes = self.mode_sequence();
        modes.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{BoxPusher, BoxPusherParams};
    use nalgebra::DVector;

    #[test]
    fn rollout_is_consistent() {
        let model = BoxPusher::new(BoxPusherParams::default()).unwrap();
        let controls = (0..10)
            .map(|t| {
                AugmentedControl::one_hot(
                    DVector::from_vec(vec![0.5, 0.1 * (t as f64 - 5.0) / 5.0]),
                    t % 4,
                    4,
                )
            })
            .collect();
        let traj = Trajectory::rollout(&model, State::se2(1.0, 2.0, 0.3), controls);
        assert_eq!(traj.horizon(), 10);
        assert_eq!(traj.states().len(), 11);
        assert_eq!(traj.max_defect(&model), 0.0);
    }

    #[test]
    fn mode_switches_counted_on_argmax_changes() {
        let model = BoxPusher::new(BoxPusherParams::default()).unwrap();
        let u = DVector::from_vec(vec![0.2, 0.0]);
        let controls = vec![
            AugmentedControl::one_hot(u.clone(), 0, 4),
            AugmentedControl::one_hot(u.clone(), 0, 4),
            AugmentedControl::one_hot(u.clone(), 2, 4),
            AugmentedControl::one_hot(u.clone(), 1, 4),
            AugmentedControl::one_hot(u.clone(), 1, 4),
        ];
        let traj = Trajectory::rollout(&model, State::se2(0.0, 0.0, 0.0), controls);
        assert_eq!(traj.mode_sequence(), vec![0, 0, 2, 1, 1]);
        assert_eq!(traj.mode_switch_count(), 2);
    }

    #[test]
    fn length_mismatch_rejected() {
        let u = AugmentedControl::one_hot(DVector::zeros(2), 0, 4);
        let s = State::se2(0.0, 0.0, 0.0);
        assert!(Trajectory::new(vec![s.clone(), s.clone()], vec![u.clone(), u.clone()]).is_err());
        assert!(Trajectory::new(vec![s.clone()], vec![]).is_err());
    }
}
