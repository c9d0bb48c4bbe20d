//! Euclidean projection onto the probability simplex (sort-based).

use nalgebra::DVector;

/// Projects `v` onto `{ x : x ≥ 0, Σ x = 1 }` in Euclidean norm.
pub fn project_to_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    assert!(n >= 1, "simplex projection needs at least one coordinate");
    let mut sorted: Vec<f64> = v.iter().cloned().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = sorted[0] - 1.0;
    for (i, &ui) in sorted.iter().enumerate() {
        cumulative += ui;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            threshold = t;
        }
    }
    DVector::from_fn(n, |i, _| (v[i] - threshold).max(0.0))
}
