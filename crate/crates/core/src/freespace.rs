//! Convex free-space approximation: grows obstacle-free convex regions from
//! seed points and answers membership/projection queries against their union.
//!
//! Region growing alternates two steps around a Chebyshev center: separate
//! every inflated obstacle from the center with the hyperplane through its
//! closest point, then recenter on the largest inscribed ball of the
//! resulting polytope. The inscribed-ball problem is a three-variable linear
//! program solved exactly by enumerating active-constraint vertices.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{ConvexPolygon, Halfspace, Point2};

/// Tolerance for region membership tests. Slightly looser than the cyclic
/// projection tolerance so projected points always pass.
pub const MEMBERSHIP_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum FreespaceError {
    #[error("empty region: halfspace set has no interior")]
    EmptyRegion,
    #[error("region is unbounded; cannot place an inscribed ball")]
    Unbounded,
    #[error("seed in collision with an inflated obstacle")]
    SeedInCollision,
    #[error("seed outside the world bounds")]
    SeedOutOfBounds,
    #[error("free space needs at least one region")]
    NoRegions,
}

/// Center and radius of the largest ball inscribed in `{x : aᵢ·x ≤ bᵢ}`.
///
/// Maximizes r subject to `aᵢ·c + r ≤ bᵢ` (unit normals). The optimum of
/// this three-variable LP lies where three constraints are active, or on a
/// degenerate face with two; both candidate sets are enumerated and checked
/// for feasibility. When the optimal center is not unique (slabs, corridors)
/// the distinct optimal candidates are averaged, which picks the midpoint of
/// the optimal face and keeps region growing stable under symmetry.
pub fn chebyshev_center(halfspaces: &[Halfspace]) -> Result<(Point2, f64), FreespaceError> {
    let k = halfspaces.len();
    if k < 2 {
        return Err(FreespaceError::Unbounded);
    }
    let row = |h: &Halfspace| Vector3::new(h.normal.x, h.normal.y, 1.0);
    let feasible = |c: &Vector3<f64>| {
        halfspaces
            .iter()
            .all(|h| h.normal.x * c.x + h.normal.y * c.y + c.z <= h.offset + 1e-7)
    };

    let mut candidates: Vec<Vector3<f64>> = Vec::new();
    let mut consider = |candidate: Vector3<f64>| {
        if candidate.iter().all(|v| v.is_finite()) && feasible(&candidate) {
            candidates.push(candidate);
        }
    };

    // Vertices with three active constraints.
    for i in 0..k {
        for j in (i + 1)..k {
            for l in (j + 1)..k {
                let m = Matrix3::from_rows(&[
                    row(&halfspaces[i]).transpose(),
                    row(&halfspaces[j]).transpose(),
                    row(&halfspaces[l]).transpose(),
                ]);
                let rhs = Vector3::new(
                    halfspaces[i].offset,
                    halfspaces[j].offset,
                    halfspaces[l].offset,
                );
                if let Some(solution) = m.lu().solve(&rhs) {
                    consider(solution);
                }
            }
        }
    }

    // Two active constraints: optimal only when the ascent direction lies in
    // the active normals' span, i.e. the solution line is level in r. The
    // minimum-norm solution picks a deterministic point on that line.
    for i in 0..k {
        for j in (i + 1)..k {
            let a = row(&halfspaces[i]);
            let b = row(&halfspaces[j]);
            let null = a.cross(&b);
            if null.norm() < 1e-12 || null.z.abs() > 1e-9 {
                continue; // parallel rows or r varies along the line
            }
            let gram = Matrix2::new(a.dot(&a), a.dot(&b), b.dot(&a), b.dot(&b));
            let rhs = Vector2::new(halfspaces[i].offset, halfspaces[j].offset);
            if let Some(coeffs) = gram.lu().solve(&rhs) {
                consider(a * coeffs.x + b * coeffs.y);
            }
        }
    }

    let r_max = candidates
        .iter()
        .map(|c| c.z)
        .fold(f64::NEG_INFINITY, f64::max);
    if !r_max.is_finite() || r_max <= 0.0 {
        return Err(FreespaceError::EmptyRegion);
    }
    let mut optimal: Vec<Vector3<f64>> = Vec::new();
    for c in candidates.iter().filter(|c| c.z >= r_max - 1e-9) {
        if optimal
            .iter()
            .all(|o| (o.x - c.x).hypot(o.y - c.y) > 1e-9)
        {
            optimal.push(*c);
        }
    }
    let center = optimal.iter().sum::<Vector3<f64>>() / optimal.len() as f64;
    Ok((Point2::new(center.x, center.y), r_max))
}

/// One collision-free convex polytope.
#[derive(Debug, Clone)]
pub struct ConvexRegion {
    pub halfspaces: Vec<Halfspace>,
    pub seed: Point2,
    pub chebyshev_center: Point2,
    pub chebyshev_radius: f64,
}

impl ConvexRegion {
    pub fn contains(&self, pt: Point2) -> bool {
        self.halfspaces.iter().all(|h| h.contains(pt, MEMBERSHIP_TOL))
    }

    /// Cyclic projection onto the halfspace intersection: sweeps over the
    /// faces until a full sweep moves the point by less than 1e-9, or 100
    /// sweeps.
    pub fn project(&self, pt: Point2) -> Point2 {
        let mut p = pt;
        for _ in 0..100 {
            let before = p;
            for h in &self.halfspaces {
                p = h.project(p);
            }
            if p.distance(before) < 1e-9 {
                break;
            }
        }
        p
    }

    /// Vertices of the region polygon (for rendering and sampling), ordered
    /// counter-clockwise around the Chebyshev center.
    pub fn polygon_vertices(&self) -> Vec<Point2> {
        let hs = &self.halfspaces;
        let mut verts: Vec<Point2> = Vec::new();
        for i in 0..hs.len() {
            for j in (i + 1)..hs.len() {
                let det = hs[i].normal.cross(hs[j].normal);
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (hs[i].offset * hs[j].normal.y - hs[j].offset * hs[i].normal.y) / det;
                let y = (hs[i].normal.x * hs[j].offset - hs[j].normal.x * hs[i].offset) / det;
                let v = Point2::new(x, y);
                if hs.iter().all(|h| h.contains(v, 1e-6))
                    && verts.iter().all(|w| w.distance(v) > 1e-7)
                {
                    verts.push(v);
                }
            }
        }
        let c = self.chebyshev_center;
        verts.sort_by(|a, b| {
            let aa = (a.y - c.y).atan2(a.x - c.x);
            let ab = (b.y - c.y).atan2(b.x - c.x);
            aa.total_cmp(&ab)
        });
        verts
    }
}

/// Grows a convex obstacle-free region around `seed`.
///
/// Iterates separating hyperplanes (through each obstacle's closest point to
/// the current center, facing the center) with Chebyshev recentering until
/// the radius settles within 1e-6 or 20 iterations. The committed halfspaces
/// always keep the seed feasible: an iteration that would cut the seed off
/// reverts to the previous set and stops.
pub fn grow_region(
    obstacles_inflated: &[ConvexPolygon],
    bounds: &ConvexPolygon,
    seed: Point2,
) -> Result<ConvexRegion, FreespaceError> {
    if !bounds.contains(seed) {
        return Err(FreespaceError::SeedOutOfBounds);
    }
    if obstacles_inflated.iter().any(|o| o.contains(seed)) {
        return Err(FreespaceError::SeedInCollision);
    }

    let bounds_faces = bounds.halfspaces();
    let separators = |center: Point2| -> Option<Vec<Halfspace>> {
        obstacles_inflated
            .iter()
            .map(|obs| {
                let (closest, dist) = obs.closest_point(center);
                if dist < 1e-12 {
                    return None;
                }
                let outward = (closest - center).scale(1.0 / dist);
                Halfspace::through(closest, outward).ok()
            })
            .collect()
    };

    let mut center = seed;
    let mut committed: Option<(Vec<Halfspace>, Point2, f64)> = None;
    for _ in 0..20 {
        let Some(mut faces) = separators(center) else { break };
        faces.extend(bounds_faces.iter().cloned());
        if faces.iter().any(|h| !h.contains(seed, 1e-9)) {
            break; // would cut off the seed; keep the previous region
        }
        let (new_center, radius) = chebyshev_center(&faces)?;
        let converged = committed
            .as_ref()
            .map_or(false, |(_, _, prev)| (radius - prev).abs() < 1e-6);
        committed = Some((faces, new_center, radius));
        center = new_center;
        if converged {
            break;
        }
    }

    let (halfspaces, chebyshev_center, chebyshev_radius) =
        committed.ok_or(FreespaceError::EmptyRegion)?;
    Ok(ConvexRegion {
        halfspaces,
        seed,
        chebyshev_center,
        chebyshev_radius,
    })
}

/// Union of convex regions approximating the collision-free configuration
/// space. Orientation is ignored: obstacle inflation is expected to cover
/// the body's circumscribed radius.
#[derive(Debug, Clone)]
pub struct FreeSpace {
    regions: Vec<ConvexRegion>,
    world_bounds: ConvexPolygon,
}

impl FreeSpace {
    pub fn new(
        regions: Vec<ConvexRegion>,
        world_bounds: ConvexPolygon,
    ) -> Result<Self, FreespaceError> {
        if regions.is_empty() {
            return Err(FreespaceError::NoRegions);
        }
        Ok(Self {
            regions,
            world_bounds,
        })
    }

    pub fn regions(&self) -> &[ConvexRegion] {
        &self.regions
    }

    pub fn world_bounds(&self) -> &ConvexPolygon {
        &self.world_bounds
    }

    /// Index of the first region containing `position`, if any.
    pub fn membership(&self, position: Point2) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(position))
    }

    /// Nearest point of the region union: the identity for members,
    /// otherwise the per-region cyclic projection with the smallest
    /// displacement (ties break to the lower region index).
    pub fn project_to_free(&self, position: Point2) -> Point2 {
        if self.membership(position).is_some() {
            return position;
        }
        let mut best: Option<(f64, Point2)> = None;
        for region in &self.regions {
            let projected = region.project(position);
            let displacement = projected.distance(position);
            if best.map_or(true, |(d, _)| displacement < d - 1e-12) {
                best = Some((displacement, projected));
            }
        }
        best.expect("at least one region").1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn square(min: f64, max: f64) -> ConvexPolygon {
        ConvexPolygon::rectangle(Point2::new(min, min), Point2::new(max, max)).unwrap()
    }

    #[test]
    fn chebyshev_of_unit_square() {
        let faces = square(0.0, 1.0).halfspaces();
        let (c, r) = chebyshev_center(&faces).unwrap();
        assert_relative_eq!(c.x, 0.5, epsilon = 1e-9);
        assert_relative_eq!(c.y, 0.5, epsilon = 1e-9);
        assert_relative_eq!(r, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn chebyshev_of_right_triangle_is_incenter() {
        // Legs 3 and 4: the incenter radius is (a + b − c)/2 = 1 at (1, 1).
        let tri = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(3.0, 0.0),
            Point2::new(0.0, 4.0),
        ])
        .unwrap();
        let (c, r) = chebyshev_center(&tri.halfspaces()).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-9);
        assert_relative_eq!(c.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(c.y, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn chebyshev_of_slab_returns_min_norm_center() {
        let faces = vec![
            Halfspace::new(Point2::new(1.0, 0.0), 1.0).unwrap(),
            Halfspace::new(Point2::new(-1.0, 0.0), 1.0).unwrap(),
        ];
        let (c, r) = chebyshev_center(&faces).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-9);
        assert_relative_eq!(c.x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(c.y, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn chebyshev_rejects_empty_and_unbounded_sets() {
        let empty = vec![
            Halfspace::new(Point2::new(1.0, 0.0), -1.0).unwrap(),
            Halfspace::new(Point2::new(-1.0, 0.0), -1.0).unwrap(),
        ];
        assert!(matches!(
            chebyshev_center(&empty),
            Err(FreespaceError::EmptyRegion)
        ));
        let single = vec![Halfspace::new(Point2::new(1.0, 0.0), 1.0).unwrap()];
        assert!(chebyshev_center(&single).is_err());
    }

    #[test]
    fn grow_in_empty_world_fills_bounds() {
        let bounds = square(0.0, 10.0);
        let region = grow_region(&[], &bounds, Point2::new(5.0, 5.0)).unwrap();
        assert_relative_eq!(region.chebyshev_radius, 5.0, epsilon = 1e-6);
        assert_relative_eq!(region.chebyshev_center.x, 5.0, epsilon = 1e-6);
        assert_relative_eq!(region.chebyshev_center.y, 5.0, epsilon = 1e-6);
        assert_eq!(region.halfspaces.len(), 4);
    }

    #[test]
    fn grow_beside_square_obstacle() {
        let bounds = square(0.0, 10.0);
        let obstacle = square(4.0, 6.0);
        let seed = Point2::new(2.0, 5.0);
        let region = grow_region(std::slice::from_ref(&obstacle), &bounds, seed).unwrap();
        assert!(region.contains(seed));
        // The separating face through the obstacle's closest point to the
        // seed is the vertical line x = 4.
        let face = &region.halfspaces[0];
        assert_relative_eq!(face.normal.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(face.normal.y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(face.offset, 4.0, epsilon = 1e-9);
        // No region point may fall strictly inside the obstacle.
        let mut rng = StdRng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 10_000 {
            let p = Point2::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
            if !region.contains(p) {
                continue;
            }
            checked += 1;
            let strictly_inside = obstacle
                .halfspaces()
                .iter()
                .all(|h| h.signed_distance(p) < -1e-9);
            assert!(!strictly_inside, "{p:?} inside the obstacle");
        }
    }

    #[test]
    fn grow_rejects_colliding_or_out_of_bounds_seeds() {
        let bounds = square(0.0, 10.0);
        let obstacle = square(4.0, 6.0);
        assert!(matches!(
            grow_region(std::slice::from_ref(&obstacle), &bounds, Point2::new(5.0, 5.0)),
            Err(FreespaceError::SeedInCollision)
        ));
        assert!(matches!(
            grow_region(&[], &bounds, Point2::new(-1.0, 5.0)),
            Err(FreespaceError::SeedOutOfBounds)
        ));
    }

    #[test]
    fn grow_is_deterministic() {
        let bounds = square(0.0, 10.0);
        let obstacles = vec![square(4.0, 6.0), square(7.0, 9.0)];
        let a = grow_region(&obstacles, &bounds, Point2::new(2.0, 2.0)).unwrap();
        let b = grow_region(&obstacles, &bounds, Point2::new(2.0, 2.0)).unwrap();
        assert_eq!(a.halfspaces.len(), b.halfspaces.len());
        for (ha, hb) in a.halfspaces.iter().zip(&b.halfspaces) {
            assert_eq!(ha.normal, hb.normal);
            assert_eq!(ha.offset, hb.offset);
        }
    }

    #[test]
    fn region_contains_seed_and_chebyshev_ball() {
        let bounds = square(0.0, 10.0);
        let obstacles = vec![square(3.0, 5.0), square(6.5, 8.5)];
        let seed = Point2::new(1.5, 6.0);
        let region = grow_region(&obstacles, &bounds, seed).unwrap();
        assert!(region.contains(seed));
        for k in 0..64 {
            let ang = k as f64 / 64.0 * std::f64::consts::TAU;
            let p = region.chebyshev_center
                + Point2::new(ang.cos(), ang.sin()).scale(region.chebyshev_radius * 0.999);
            assert!(region.contains(p));
        }
    }

    fn two_region_freespace() -> FreeSpace {
        let bounds = square(0.0, 10.0);
        let obstacle = square(4.0, 6.0);
        let left = grow_region(std::slice::from_ref(&obstacle), &bounds, Point2::new(2.0, 5.0)).unwrap();
        let right = grow_region(std::slice::from_ref(&obstacle), &bounds, Point2::new(8.0, 5.0)).unwrap();
        FreeSpace::new(vec![left, right], bounds).unwrap()
    }

    #[test]
    fn membership_prefers_lower_index() {
        let fs = two_region_freespace();
        assert_eq!(fs.membership(Point2::new(2.0, 5.0)), Some(0));
        assert_eq!(fs.membership(Point2::new(8.0, 5.0)), Some(1));
        assert_eq!(fs.membership(Point2::new(5.0, 5.0)), None);
        // Region seeds are members by construction.
        for (i, r) in fs.regions().iter().enumerate() {
            assert_eq!(fs.membership(r.seed), Some(i).min(fs.membership(r.seed)));
        }
        // Both regions cover the top corridor; the first one wins.
        let overlap = Point2::new(5.0, 9.5);
        assert!(fs.regions()[0].contains(overlap) && fs.regions()[1].contains(overlap));
        assert_eq!(fs.membership(overlap), Some(0));
    }

    #[test]
    fn projection_is_identity_for_members_and_lands_in_union() {
        let fs = two_region_freespace();
        let free = Point2::new(2.0, 5.0);
        assert_eq!(fs.project_to_free(free), free);

        let inside_obstacle = Point2::new(4.9, 5.0);
        let projected = fs.project_to_free(inside_obstacle);
        assert!(fs.membership(projected).is_some());
        assert_relative_eq!(projected.x, 4.0, epsilon = 1e-6);

        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..500 {
            let p = Point2::new(rng.gen_range(-2.0..12.0), rng.gen_range(-2.0..12.0));
            let q = fs.project_to_free(p);
            assert!(fs.membership(q).is_some(), "projection of {p:?} missed");
        }
    }

    #[test]
    fn single_region_projection_matches_single_face() {
        let bounds = square(0.0, 1.0);
        let region = grow_region(&[], &bounds, Point2::new(0.5, 0.5)).unwrap();
        let fs = FreeSpace::new(vec![region], bounds).unwrap();
        let projected = fs.project_to_free(Point2::new(2.0, 0.5));
        assert_relative_eq!(projected.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(projected.y, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn equidistant_projection_prefers_lower_region_index() {
        // Two slim regions left/right of a wide wall; midline points are
        // equidistant.
        let bounds = square(0.0, 10.0);
        let wall = ConvexPolygon::rectangle(Point2::new(4.0, -0.5), Point2::new(6.0, 10.5));
        let wall = wall.unwrap();
        let left = grow_region(std::slice::from_ref(&wall), &bounds, Point2::new(2.0, 5.0)).unwrap();
        let right = grow_region(std::slice::from_ref(&wall), &bounds, Point2::new(8.0, 5.0)).unwrap();
        let fs = FreeSpace::new(vec![left, right], bounds).unwrap();
        let projected = fs.project_to_free(Point2::new(5.0, 5.0));
        assert!(projected.x <= 4.0 + 1e-9, "lower-index region should win");
    }

    #[test]
    fn region_polygon_vertices_enclose_center() {
        let bounds = square(0.0, 10.0);
        let obstacle = square(4.0, 6.0);
        let region = grow_region(std::slice::from_ref(&obstacle), &bounds, Point2::new(2.0, 5.0)).unwrap();
        let verts = region.polygon_vertices();
        assert!(verts.len() >= 3);
        let poly = ConvexPolygon::new(verts).unwrap();
        assert!(poly.contains(region.chebyshev_center));
        assert!(poly.contains(region.seed));
    }
}
