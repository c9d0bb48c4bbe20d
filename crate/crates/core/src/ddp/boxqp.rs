//! Box- and simplex-constrained quadratic program for the control update.
//!
//! Minimizes `½ δᵀH δ + gᵀδ` subject to per-coordinate box bounds and, on an
//! optional block of mode-probability coordinates, the coupling `Σ δp = 0`.
//! The equality is eliminated by expressing the block's last coordinate as
//! the negated sum of the others; the reduced problem is then solved with a
//! primal active-set method whose Newton steps come from small KKT systems.
//! Every iterate is feasible and the objective never increases, so even a
//! capped run returns a usable step.

use nalgebra::{DMatrix, DVector, LU};

/// Contiguous block of coordinates that must satisfy `Σ δ = 0` in addition
/// to their box bounds.
#[derive(Debug, Clone, Copy)]
pub struct SimplexBlock {
    pub start: usize,
    pub len: usize,
}

/// Solution of one constrained control-update QP.
#[derive(Debug)]
pub struct QpSolution {
    /// Optimal step in the full coordinate space.
    pub step: DVector<f64>,
    /// Coordinates pinned by an active bound (or fixed outright); the
    /// feedback rows for these coordinates are zero.
    pub clamped: Vec<bool>,
    pub iterations: usize,
    elimination: DMatrix<f64>,
    kkt: Option<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    reduced_dim: usize,
    active_count: usize,
}

impl QpSolution {
    /// Feedback gains `K = argmin` of the same QP with gradient columns
    /// `q_ux`, holding the final active set: active coordinates get zero
    /// rows and the simplex block's rows sum to zero columnwise.
    pub fn feedback_gains(&self, q_ux: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.elimination.nrows();
        let n = q_ux.ncols();
        let Some(kkt) = &self.kkt else {
            return DMatrix::zeros(d, n);
        };
        let reduced = self.elimination.transpose() * q_ux;
        let mut rhs = DMatrix::zeros(self.reduced_dim + self.active_count, n);
        rhs.view_mut((0, 0), (self.reduced_dim, n)).copy_from(&(-reduced));
        let solved = kkt.solve(&rhs).expect("KKT factorization is nonsingular");
        let gains_reduced = solved.view((0, 0), (self.reduced_dim, n)).into_owned();
        &self.elimination * gains_reduced
    }
}

const MAX_ITERATIONS: usize = 100;
const LAMBDA_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-12;

/// Solves the constrained QP; `h` must be positive definite.
pub fn constrained_qp_step(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    simplex: Option<SimplexBlock>,
) -> QpSolution {
    let d = g.len();
    assert_eq!(h.nrows(), d);
    assert_eq!(h.ncols(), d);
    assert_eq!(lower.len(), d);
    assert_eq!(upper.len(), d);

    // Coordinates fixed at zero take no part in the optimization.
    let fixed: Vec<bool> = (0..d)
        .map(|i| lower[i] == 0.0 && upper[i] == 0.0)
        .collect();
    if let Some(block) = simplex {
        assert!(
            (block.start..block.start + block.len).all(|i| !fixed[i]),
            "simplex coordinates must not be fixed; drop the block instead"
        );
    }

    // Dependent coordinate eliminated by the simplex equality.
    let dependent = simplex.map(|b| b.start + b.len - 1);
    let reduced_index: Vec<Option<usize>> = {
        let mut next = 0usize;
        (0..d)
            .map(|i| {
                if fixed[i] || Some(i) == dependent {
                    None
                } else {
                    let j = next;
                    next += 1;
                    Some(j)
                }
            })
            .collect()
    };
    let ny = reduced_index.iter().flatten().count();

    // Linear map from reduced variables back to the full step.
    let mut e_map = DMatrix::zeros(d, ny);
    for (i, idx) in reduced_index.iter().enumerate() {
        if let Some(j) = idx {
            e_map[(i, *j)] = 1.0;
        }
    }
    let block_reduced: Vec<usize> = simplex
        .map(|b| {
            (b.start..b.start + b.len - 1)
                .map(|i| reduced_index[i].expect("simplex coords are free"))
                .collect()
        })
        .unwrap_or_default();
    if let Some(dep) = dependent {
        for &j in &block_reduced {
            e_map[(dep, j)] = -1.0;
        }
    }

    if ny == 0 {
        return QpSolution {
            step: DVector::zeros(d),
            clamped: vec![true; d],
            iterations: 0,
            elimination: e_map,
            kkt: None,
            reduced_dim: 0,
            active_count: 0,
        };
    }

    let h_red = e_map.transpose() * h * &e_map;
    let g_red = e_map.transpose() * g;

    // Constraint list `aᵀy ≤ b`, deduplicated on identical normals.
    let mut constraints: Vec<(DVector<f64>, f64, ConstraintTag)> = Vec::new();
    let mut push = |a: DVector<f64>, b: f64, tag: ConstraintTag| {
        for (ea, eb, _) in constraints.iter_mut() {
            if (&a - &*ea).amax() < 1e-12 {
                *eb = eb.min(b);
                return;
            }
        }
        constraints.push((a, b, tag));
    };
    for i in 0..d {
        let Some(j) = reduced_index[i] else { continue };
        let mut a = DVector::zeros(ny);
        a[j] = 1.0;
        push(a, upper[i].max(0.0), ConstraintTag::Box(i));
        let mut a = DVector::zeros(ny);
        a[j] = -1.0;
        push(a, (-lower[i]).max(0.0), ConstraintTag::Box(i));
    }
    if let Some(dep) = dependent {
        if !block_reduced.is_empty() {
            // lower[dep] ≤ −Σ z ≤ upper[dep]
            let mut a = DVector::zeros(ny);
            for &j in &block_reduced {
                a[j] = 1.0;
            }
            push(a.clone(), (-lower[dep]).max(0.0), ConstraintTag::Sum);
            push(-a, upper[dep].max(0.0), ConstraintTag::Sum);
        }
    }

    let mut y = DVector::zeros(ny);
    let mut working: Vec<usize> = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (y_star, lambda, lu) = solve_eqp(&h_red, &g_red, &constraints, &working);
        let direction = &y_star - &y;
        if direction.amax() <= STEP_TOL {
            // EQP optimum reached; release the worst bound or stop.
            let mut worst = None;
            for slot in 0..working.len() {
                let l = lambda[slot];
                if l < -LAMBDA_TOL && worst.map_or(true, |(_, wl)| l < wl) {
                    worst = Some((slot, l));
                }
            }
            match worst {
                Some((slot, _)) => {
                    working.remove(slot);
                }
                None => {
                    return finish(y, working, constraints, e_map, lu, ny, iterations, d, &fixed, dependent);
                }
            }
            continue;
        }

        // Longest feasible step toward the EQP optimum.
        let mut t = 1.0f64;
        let mut blocking: Option<usize> = None;
        for (ci, (a, b, _)) in constraints.iter().enumerate() {
            if working.contains(&ci) {
                continue;
            }
            let along = a.dot(&direction);
            if along > 1e-14 {
                let ti = (b - a.dot(&y)) / along;
                if ti < t - 1e-14 {
                    t = ti.max(0.0);
                    blocking = Some(ci);
                }
            }
        }
        y += direction * t;
        if let Some(ci) = blocking {
            if is_independent(&constraints, &working, ci, ny) {
                working.push(ci);
                working.sort_unstable();
            } else {
                // Degenerate geometry; the current iterate is feasible and
                // no worse than the start, so stop here.
                return finish(y, working, constraints, e_map, lu, ny, iterations, d, &fixed, dependent);
            }
        }
    }

    let (_, _, lu) = solve_eqp(&h_red, &g_red, &constraints, &working);
    finish(y, working, constraints, e_map, lu, ny, iterations, d, &fixed, dependent)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConstraintTag {
    Box(usize),
    Sum,
}

fn solve_eqp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    constraints: &[(DVector<f64>, f64, ConstraintTag)],
    working: &[usize],
) -> (DVector<f64>, DVector<f64>, LU<f64, nalgebra::Dyn, nalgebra::Dyn>) {
    let ny = g.len();
    let nw = working.len();
    let mut kkt = DMatrix::zeros(ny + nw, ny + nw);
    kkt.view_mut((0, 0), (ny, ny)).copy_from(h);
    for (slot, &ci) in working.iter().enumerate() {
        let a = &constraints[ci].0;
        for j in 0..ny {
            kkt[(j, ny + slot)] = a[j];
            kkt[(ny + slot, j)] = a[j];
        }
    }
    let mut rhs = DVector::zeros(ny + nw);
    rhs.rows_mut(0, ny).copy_from(&(-g));
    for (slot, &ci) in working.iter().enumerate() {
        rhs[ny + slot] = constraints[ci].1;
    }
    let lu = kkt.lu();
    let sol = lu
        .solve(&rhs)
        .expect("working set kept independent, KKT is nonsingular");
    (
        sol.rows(0, ny).into_owned(),
        sol.rows(ny, nw).into_owned(),
        lu,
    )
}

fn is_independent(
    constraints: &[(DVector<f64>, f64, ConstraintTag)],
    working: &[usize],
    candidate: usize,
    ny: usize,
) -> bool {
    if working.len() + 1 > ny {
        return false;
    }
    let mut rows = DMatrix::zeros(working.len() + 1, ny);
    for (slot, &ci) in working.iter().enumerate() {
        rows.row_mut(slot).copy_from(&constraints[ci].0.transpose());
    }
    rows.row_mut(working.len())
        .copy_from(&constraints[candidate].0.transpose());
    rows.rank(1e-10) == working.len() + 1
}

#[allow(clippy::too_many_arguments)]
fn finish(
    y: DVector<f64>,
    working: Vec<usize>,
    constraints: Vec<(DVector<f64>, f64, ConstraintTag)>,
    e_map: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    ny: usize,
    iterations: usize,
    d: usize,
    fixed: &[bool],
    dependent: Option<usize>,
) -> QpSolution {
    let step = &e_map * &y;
    let mut clamped = vec![false; d];
    for (i, &f) in fixed.iter().enumerate() {
        if f {
            clamped[i] = true;
        }
    }
    for &ci in &working {
        match constraints[ci].2 {
            ConstraintTag::Box(i) => clamped[i] = true,
            ConstraintTag::Sum => {
                if let Some(dep) = dependent {
                    clamped[dep] = true;
                }
            }
        }
    }
    if let Some(dep) = dependent {
        // A one-mode block leaves the dependent coordinate pinned at zero.
        if e_map.row(dep).amax() == 0.0 {
            clamped[dep] = true;
        }
    }
    let active_count = working.len();
    QpSolution {
        step,
        clamped,
        iterations,
        elimination: e_map,
        kkt: Some(lu),
        reduced_dim: ny,
        active_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn objective(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * (h * x).dot(x) + g.dot(x)
    }

    #[test]
    fn interior_optimum() {
        let h = DMatrix::identity(3, 3);
        let g = DVector::from_element(3, -0.1);
        let lo = DVector::from_element(3, -10.0);
        let hi = DVector::from_element(3, 10.0);
        let sol = constrained_qp_step(&h, &g, &lo, &hi, None);
        for i in 0..3 {
            assert_relative_eq!(sol.step[i], 0.1, epsilon = 1e-12);
            assert!(!sol.clamped[i]);
        }
    }

    #[test]
    fn one_dimensional_clamp() {
        let h = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::from_element(1, -4.0);
        let lo = DVector::from_element(1, -1.0);
        let hi = DVector::from_element(1, 1.0);
        let sol = constrained_qp_step(&h, &g, &lo, &hi, None);
        assert_relative_eq!(sol.step[0], 1.0, epsilon = 1e-12);
        assert!(sol.clamped[0]);
    }

    #[test]
    fn simplex_block_matches_brute_force_grid() {
        // Three modes at uniform probability; the feasible slice is
        // parameterized by the first two deltas.
        let h = DMatrix::identity(3, 3);
        let g = DVector::from_vec(vec![-1.0, 0.0, 1.0]);
        let third = 1.0 / 3.0;
        let lo = DVector::from_element(3, -third);
        let hi = DVector::from_element(3, 1.0 - third);
        let sol = constrained_qp_step(&h, &g, &lo, &hi, Some(SimplexBlock { start: 0, len: 3 }));

        assert!(sol.step.iter().sum::<f64>().abs() < 1e-10);
        for i in 0..3 {
            assert!(sol.step[i] >= lo[i] - 1e-10 && sol.step[i] <= hi[i] + 1e-10);
        }

        let mut best = f64::INFINITY;
        let steps = 1000;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = lo[0] + (hi[0] - lo[0]) * i as f64 / steps as f64;
                let b = lo[1] + (hi[1] - lo[1]) * j as f64 / steps as f64;
                let c = -a - b;
                if c < lo[2] - 1e-12 || c > hi[2] + 1e-12 {
                    continue;
                }
                let x = DVector::from_vec(vec![a, b, c]);
                best = best.min(objective(&h, &g, &x));
            }
        }
        let found = objective(&h, &g, &sol.step);
        assert!(
            (found - best).abs() <= 1e-4,
            "qp {found} vs brute force {best}"
        );
        assert!(found <= best + 1e-9);
    }

    #[test]
    fn two_mode_block_handles_duplicate_constraints() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let g = DVector::from_vec(vec![-3.0, 2.0]);
        let p = [0.4, 0.6];
        let lo = DVector::from_vec(vec![-p[0], -p[1]]);
        let hi = DVector::from_vec(vec![1.0 - p[0], 1.0 - p[1]]);
        let sol = constrained_qp_step(&h, &g, &lo, &hi, Some(SimplexBlock { start: 0, len: 2 }));
        assert!(sol.step.iter().sum::<f64>().abs() < 1e-10);
        assert!(sol.step[0] >= lo[0] - 1e-10 && sol.step[0] <= hi[0] + 1e-10);
        // One free dimension: optimum is δ = (0.6, −0.6) clipped by the box.
        assert_relative_eq!(sol.step[0], 0.6, epsilon = 1e-9);
        assert_relative_eq!(sol.step[1], -0.6, epsilon = 1e-9);
    }

    #[test]
    fn fixed_coordinates_stay_zero_and_produce_zero_gains() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let g = DVector::from_vec(vec![-1.0, -1.0]);
        let lo = DVector::from_vec(vec![-5.0, 0.0]);
        let hi = DVector::from_vec(vec![5.0, 0.0]);
        let sol = constrained_qp_step(&h, &g, &lo, &hi, None);
        assert_relative_eq!(sol.step[0], 1.0, epsilon = 1e-12);
        assert_eq!(sol.step[1], 0.0);
        assert!(sol.clamped[1]);
        let gains = sol.feedback_gains(&DMatrix::from_row_slice(2, 1, &[0.7, 0.9]));
        assert_eq!(gains[(1, 0)], 0.0);
        assert_relative_eq!(gains[(0, 0)], -0.7, epsilon = 1e-12);
    }

    #[test]
    fn objective_never_worse_than_zero_step() {
        // Random PD instances with and without the simplex block.
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(42);
        for trial in 0..200 {
            let d = rng.gen_range(1..6);
            let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let h = &m * m.transpose() + DMatrix::identity(d, d) * 0.3;
            let g = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let lo = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..-0.01));
            let hi = DVector::from_fn(d, |_, _| rng.gen_range(0.01..1.0));
            let simplex = if trial % 2 == 0 && d >= 2 {
                Some(SimplexBlock { start: 0, len: d })
            } else {
                None
            };
            let sol = constrained_qp_step(&h, &g, &lo, &hi, simplex);
            for i in 0..d {
                assert!(sol.step[i] >= lo[i] - 1e-9 && sol.step[i] <= hi[i] + 1e-9);
            }
            if simplex.is_some() {
                assert!(sol.step.iter().sum::<f64>().abs() < 1e-10);
            }
            assert!(objective(&h, &g, &sol.step) <= 1e-12);
        }
    }
}
