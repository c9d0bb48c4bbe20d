//! Differential dynamic programming for the relaxed hybrid system.
//!
//! The backward pass builds a quadratic model of the cost-to-go
//! (Gauss-Newton, no second-order dynamics tensors) and computes the control
//! update from a constrained QP honoring the box bounds on u and the
//! probability-simplex coupling on p. The forward pass rolls the feedback law
//! out with a backtracking line search; trust is managed with a Levenberg
//! diagonal shift on Q_uu.

pub mod boxqp;
pub mod simplex;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{AugmentedControl, HybridDynamics};
use crate::trajectory::Trajectory;
use boxqp::{constrained_qp_step, SimplexBlock};
use simplex::project_to_simplex;

/// Dynamics-consistency tolerance for solver inputs.
pub const DEFECT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DdpError {
    #[error("trajectory violates dynamics by {defect:e} at step {step}")]
    InconsistentTrajectory { step: usize, defect: f64 },
    #[error("Q_uu not positive definite at step {0}; increase regularization")]
    NotPositiveDefinite(usize),
    #[error("rollout diverged to a non-finite state")]
    RolloutDiverged,
    #[error("regularization exhausted without a usable backward pass")]
    RegularizationExhausted,
}

/// Quadratic expansion of the running cost around a nominal point. The
/// control direction covers the stacked [u; p] coordinates.
#[derive(Debug, Clone)]
pub struct CostExpansion {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

/// Cost to minimize: running terms per step plus a terminal term, both with
/// analytic first and second derivatives.
pub trait CostModel {
    fn running(&self, t: usize, x: &crate::dynamics::State, uc: &AugmentedControl) -> f64;
    fn running_expansion(
        &self,
        t: usize,
        x: &crate::dynamics::State,
        uc: &AugmentedControl,
    ) -> CostExpansion;
    fn terminal(&self, x: &crate::dynamics::State) -> f64;
    fn terminal_expansion(&self, x: &crate::dynamics::State) -> (DVector<f64>, DMatrix<f64>);

    /// Invoked by the solver after every accepted iteration; continuation
    /// schedules hook in here.
    fn on_accepted_iteration(&mut self) {}

    /// While true the solver keeps iterating even when the cost has stopped
    /// improving under the current schedule state.
    fn continuation_active(&self) -> bool {
        false
    }
}

/// Quadratic approximation of the state-action value around the nominal.
#[derive(Debug, Clone)]
pub struct QExpansion {
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
    pub q_ux: DMatrix<f64>,
}

/// Quadratic approximation of the value function.
#[derive(Debug, Clone)]
pub struct ValueExpansion {
    pub v_x: DVector<f64>,
    pub v_xx: DMatrix<f64>,
}

/// One step of the feedback law: `δû = α·k + K·δx`.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub feedforward: DVector<f64>,
    pub gains: DMatrix<f64>,
}

/// Per-timestep feedback policy plus the expected-improvement model
/// `ΔV(α) = α·linear + α²·quadratic`.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    pub steps: Vec<PolicyStep>,
    pub linear: f64,
    pub quadratic: f64,
}

impl FeedbackPolicy {
    /// Predicted cost reduction for step scale `α` (non-negative).
    pub fn expected_reduction(&self, alpha: f64) -> f64 {
        (-(alpha * self.linear + alpha * alpha * self.quadratic)).max(0.0)
    }
}

/// Total cost of an arbitrary state/control sequence (no consistency
/// requirement).
pub fn total_cost<C: CostModel + ?Sized>(traj: &Trajectory, cost: &C) -> f64 {
    let mut sum = 0.0;
    for t in 0..traj.horizon() {
        sum += cost.running(t, traj.state(t), traj.control(t));
    }
    sum + cost.terminal(traj.terminal_state())
}

/// Assembles the Q expansion at one step from the cost expansion and the
/// linearized dynamics (Gauss-Newton: second-order dynamics terms dropped).
pub fn assemble_q<M, C>(
    model: &M,
    cost: &C,
    t: usize,
    x: &crate::dynamics::State,
    uc: &AugmentedControl,
    value: &ValueExpansion,
) -> QExpansion
where
    M: HybridDynamics + ?Sized,
    C: CostModel + ?Sized,
{
    let (a_mat, b_mat) = model.linearize(x, uc);
    let exp = cost.running_expansion(t, x, uc);
    let q_x = &exp.lx + a_mat.transpose() * &value.v_x;
    let q_u = &exp.lu + b_mat.transpose() * &value.v_x;
    let q_xx = symmetrize(&exp.lxx + a_mat.transpose() * &value.v_xx * &a_mat);
    let q_ux = &exp.lux + b_mat.transpose() * &value.v_xx * &a_mat;
    let q_uu = symmetrize(&exp.luu + b_mat.transpose() * &value.v_xx * &b_mat);
    QExpansion {
        q_x,
        q_u,
        q_xx,
        q_uu,
        q_ux,
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Backward value recursion producing the constrained feedback policy.
///
/// `freeze_modes` pins the probability block: no feedforward and zero
/// feedback rows for p, so the rollout's mode choice cannot drift.
pub fn backward_pass<M, C>(
    traj: &Trajectory,
    model: &M,
    cost: &C,
    mu: f64,
    freeze_modes: bool,
) -> Result<FeedbackPolicy, DdpError>
where
    M: HybridDynamics + ?Sized,
    C: CostModel + ?Sized,
{
    for t in 0..traj.horizon() {
        let predicted = model.step_hybrid(traj.state(t), traj.control(t));
        let defect = (predicted.vector() - traj.state(t + 1).vector()).amax();
        if defect > DEFECT_TOL {
            return Err(DdpError::InconsistentTrajectory { step: t, defect });
        }
    }

    let spec = model.spec();
    let (m, na) = (spec.control_dim, spec.num_modes);
    let dim = m + na;
    let (lo_eff, hi_eff) = spec.effective_bounds();

    let (v_x, v_xx) = cost.terminal_expansion(traj.terminal_state());
    let mut value = ValueExpansion { v_x, v_xx };
    let mut steps: Vec<PolicyStep> = Vec::with_capacity(traj.horizon());
    let mut linear = 0.0;
    let mut quadratic = 0.0;

    for t in (0..traj.horizon()).rev() {
        let x = traj.state(t);
        let uc = traj.control(t);
        let q = assemble_q(model, cost, t, x, uc, &value);

        let q_uu_reg = &q.q_uu + DMatrix::identity(dim, dim) * mu;
        if q_uu_reg.clone().cholesky().is_none() {
            return Err(DdpError::NotPositiveDefinite(t));
        }

        let mut lo = DVector::zeros(dim);
        let mut hi = DVector::zeros(dim);
        for i in 0..m {
            lo[i] = (lo_eff[i] - uc.u()[i]).min(0.0);
            hi[i] = (hi_eff[i] - uc.u()[i]).max(0.0);
        }
        for a in 0..na {
            if freeze_modes {
                lo[m + a] = 0.0;
                hi[m + a] = 0.0;
            } else {
                lo[m + a] = (-uc.p()[a]).min(0.0);
                hi[m + a] = (1.0 - uc.p()[a]).max(0.0);
            }
        }
        let block = if freeze_modes {
            None
        } else {
            Some(SimplexBlock { start: m, len: na })
        };

        let qp = constrained_qp_step(&q_uu_reg, &q.q_u, &lo, &hi, block);
        let gains = qp.feedback_gains(&q.q_ux);
        let k = qp.step;

        linear += k.dot(&q.q_u);
        quadratic += 0.5 * (&q.q_uu * &k).dot(&k);

        value.v_x = &q.q_x
            + gains.transpose() * (&q.q_uu * &k)
            + gains.transpose() * &q.q_u
            + q.q_ux.transpose() * &k;
        value.v_xx = symmetrize(
            &q.q_xx
                + gains.transpose() * &q.q_uu * &gains
                + gains.transpose() * &q.q_ux
                + q.q_ux.transpose() * &gains,
        );

        steps.push(PolicyStep {
            feedforward: k,
            gains,
        });
    }
    steps.reverse();
    Ok(FeedbackPolicy {
        steps,
        linear,
        quadratic,
    })
}

/// Line-search rollout: applies the scaled policy around the nominal, clamps
/// u to its box, projects p back onto the simplex, and re-integrates.
pub fn forward_pass<M, C>(
    traj: &Trajectory,
    model: &M,
    cost: &C,
    policy: &FeedbackPolicy,
    alpha: f64,
    freeze_modes: bool,
) -> Result<(Trajectory, f64), DdpError>
where
    M: HybridDynamics + ?Sized,
    C: CostModel + ?Sized,
{
    let spec = model.spec();
    let (m, na) = (spec.control_dim, spec.num_modes);
    let (lo_eff, hi_eff) = spec.effective_bounds();

    let mut states = Vec::with_capacity(traj.horizon() + 1);
    let mut controls = Vec::with_capacity(traj.horizon());
    let mut running_sum = 0.0;
    states.push(traj.state(0).clone());

    for t in 0..traj.horizon() {
        let x = states.last().expect("nonempty").clone();
        let dx = model.state_difference(&x, traj.state(t));
        let step = &policy.steps[t];
        let du = &step.feedforward * alpha + &step.gains * dx;

        let mut u_new = traj.control(t).u().clone();
        u_new += du.rows(0, m);
        for i in 0..m {
            u_new[i] = u_new[i].clamp(lo_eff[i], hi_eff[i]);
        }
        let p_new = if freeze_modes {
            traj.control(t).p().clone()
        } else {
            let mut p = traj.control(t).p().clone();
            p += du.rows(m, na);
            project_to_simplex(&p)
        };
        let uc = AugmentedControl::new_unchecked(u_new, p_new);

        running_sum += cost.running(t, &x, &uc);
        let next = model.step_hybrid(&x, &uc);
        if !next.is_finite() {
            return Err(DdpError::RolloutDiverged);
        }
        controls.push(uc);
        states.push(next);
    }
    let total = running_sum + cost.terminal(states.last().expect("nonempty"));
    let rolled = Trajectory::new(states, controls).expect("rollout lengths are consistent");
    Ok((rolled, total))
}

/// Knobs of the iteration loop.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative cost-change tolerance for convergence.
    pub tol: f64,
    pub mu_init: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub alpha_min: f64,
    /// Minimum ratio of actual to expected reduction for acceptance.
    pub accept_ratio: f64,
    /// Pin the mode-probability block (no feedforward or feedback on p).
    pub freeze_modes: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-7,
            mu_init: 1e-6,
            mu_min: 1e-8,
            mu_max: 1e10,
            alpha_min: 1e-4,
            accept_ratio: 0.1,
            freeze_modes: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Accepted step changed the cost by less than the tolerance.
    CostTolerance,
    /// Expected improvement below tolerance before stepping.
    GradientTolerance,
    MaxIterations,
    /// Regularization hit its cap with no accepted step.
    RegularizationLimit,
}

#[derive(Debug, Clone)]
pub struct AcceptedIteration {
    /// Nominal cost under the coefficients active when the step was taken.
    pub cost_before: f64,
    pub cost_after: f64,
    pub alpha: f64,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub accepted: Vec<AcceptedIteration>,
    /// Rollouts rejected by the caller's trajectory guard.
    pub guard_rejections: usize,
    pub stop: StopReason,
    pub final_cost: f64,
}

#[derive(Debug)]
pub struct SolveOutput {
    pub trajectory: Trajectory,
    pub policy: FeedbackPolicy,
    pub stats: SolveStats,
}

/// Iterates backward/forward passes with a backtracking line search until
/// the cost stops improving. See [`solve_guarded`] for the guard hook.
pub fn solve<M, C>(
    initial: &Trajectory,
    model: &M,
    cost: &mut C,
    options: &SolveOptions,
) -> Result<SolveOutput, DdpError>
where
    M: HybridDynamics + ?Sized,
    C: CostModel + ?Sized,
{
    solve_guarded(initial, model, cost, options, None)
}

/// Like [`solve`], with an optional acceptance guard: rollouts for which the
/// guard returns false are treated like failed steps (the line search shrinks
/// α, and the iteration is rejected if no scale passes).
pub fn solve_guarded<M, C>(
    initial: &Trajectory,
    model: &M,
    cost: &mut C,
    options: &SolveOptions,
    guard: Option<&dyn Fn(&Trajectory) -> bool>,
) -> Result<SolveOutput, DdpError>
where
    M: HybridDynamics + ?Sized,
    C: CostModel + ?Sized,
{
    // Re-roll from the stored controls so the nominal is exactly consistent.
    let mut traj = Trajectory::rollout(model, initial.state(0).clone(), initial.controls().to_vec());
    if traj.states().iter().any(|s| !s.is_finite()) {
        return Err(DdpError::RolloutDiverged);
    }

    let mut mu = options.mu_init;
    let mut accepted: Vec<AcceptedIteration> = Vec::new();
    let mut guard_rejections = 0usize;
    let mut last_policy: Option<FeedbackPolicy> = None;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0usize;

    'outer: for _ in 0..options.max_iters {
        iterations += 1;
        let continuation = cost.continuation_active();
        let cost_now = total_cost(&traj, cost);

        // Backward pass, escalating regularization as needed.
        let policy = loop {
            match backward_pass(&traj, model, cost, mu, options.freeze_modes) {
                Ok(p) => break p,
                Err(DdpError::NotPositiveDefinite(_)) => {
                    mu = (mu * 2.0).max(options.mu_min);
                    if mu > options.mu_max {
                        stop = StopReason::RegularizationLimit;
                        break 'outer;
                    }
                }
                Err(e) => return Err(e),
            }
        };

        let expected_full = -(policy.linear + policy.quadratic);
        if !continuation && expected_full.abs() < options.tol * (1.0 + cost_now.abs()) {
            last_policy = Some(policy);
            stop = StopReason::GradientTolerance;
            break;
        }

        let mut alpha = 1.0;
        let mut step_accepted = false;
        let mut any_finite = false;
        while alpha >= options.alpha_min {
            match forward_pass(&traj, model, cost, &policy, alpha, options.freeze_modes) {
                Err(DdpError::RolloutDiverged) => {}
                Err(e) => return Err(e),
                Ok((candidate, candidate_cost)) => {
                    any_finite = true;
                    if let Some(check) = guard {
                        if !check(&candidate) {
                            guard_rejections += 1;
                            alpha *= 0.5;
                            continue;
                        }
                    }
                    let expected = policy.expected_reduction(alpha);
                    let actual = cost_now - candidate_cost;
                    if actual >= options.accept_ratio * expected - 1e-12 {
                        accepted.push(AcceptedIteration {
                            cost_before: cost_now,
                            cost_after: candidate_cost,
                            alpha,
                            mu,
                        });
                        traj = candidate;
                        cost.on_accepted_iteration();
                        mu = (mu * 0.5).max(options.mu_min);
                        step_accepted = true;
                        if !continuation && actual.abs() < options.tol * (1.0 + cost_now.abs()) {
                            last_policy = Some(policy);
                            stop = StopReason::CostTolerance;
                            break 'outer;
                        }
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        last_policy = Some(policy);

        if !step_accepted {
            if !any_finite && guard_rejections == 0 {
                return Err(DdpError::RolloutDiverged);
            }
            mu *= 2.0;
            if mu > options.mu_max {
                stop = StopReason::RegularizationLimit;
                break;
            }
        }
    }

    // Policy around the final trajectory; fall back to the last one computed
    // if the final expansion needs more regularization than allowed.
    let policy = {
        let mut final_mu = mu.max(options.mu_min);
        loop {
            match backward_pass(&traj, model, cost, final_mu, options.freeze_modes) {
                Ok(p) => break p,
                Err(DdpError::NotPositiveDefinite(_)) if final_mu <= options.mu_max => {
                    final_mu *= 2.0;
                }
                _ => match last_policy {
                    Some(p) => break p,
                    None => return Err(DdpError::RegularizationExhausted),
                },
            }
        }
    };

    let final_cost = total_cost(&traj, cost);
    Ok(SolveOutput {
        trajectory: traj,
        policy,
        stats: SolveStats {
            iterations,
            accepted,
            guard_rejections,
            stop,
            final_cost,
        },
    })
}

/// Time-invariant quadratic cost `½ xᵀQx + ½ uᵀRu` with terminal `½ xᵀQf x`;
/// the probability block carries no cost.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub state_weight: DMatrix<f64>,
    pub control_weight: DMatrix<f64>,
    pub terminal_weight: DMatrix<f64>,
}

impl CostModel for QuadraticCost {
    fn running(&self, _t: usize, x: &crate::dynamics::State, uc: &AugmentedControl) -> f64 {
        let xv = x.vector();
        let u = uc.u();
        0.5 * (&self.state_weight * xv).dot(xv) + 0.5 * (&self.control_weight * u).dot(u)
    }

    fn running_expansion(
        &self,
        _t: usize,
        x: &crate::dynamics::State,
        uc: &AugmentedControl,
    ) -> CostExpansion {
        let n = x.dim();
        let m = uc.u().len();
        let na = uc.p().len();
        let dim = m + na;
        let mut lu = DVector::zeros(dim);
        lu.rows_mut(0, m).copy_from(&(&self.control_weight * uc.u()));
        let mut luu = DMatrix::zeros(dim, dim);
        luu.view_mut((0, 0), (m, m)).copy_from(&self.control_weight);
        CostExpansion {
            lx: &self.state_weight * x.vector(),
            lu,
            lxx: self.state_weight.clone(),
            luu,
            lux: DMatrix::zeros(dim, n),
        }
    }

    fn terminal(&self, x: &crate::dynamics::State) -> f64 {
        0.5 * (&self.terminal_weight * x.vector()).dot(x.vector())
    }

    fn terminal_expansion(&self, x: &crate::dynamics::State) -> (DVector<f64>, DMatrix<f64>) {
        (
            &self.terminal_weight * x.vector(),
            self.terminal_weight.clone(),
        )
    }
}
