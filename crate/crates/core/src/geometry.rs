//! 2D geometric primitives: points, halfspaces, and strictly convex polygons.
//!
//! Obstacles are convex polygons with counter-clockwise vertex order; anything
//! non-convex is modelled as several convex pieces. Containment treats the
//! boundary as inside, while segment/interior intersection treats grazing
//! contact as a miss, so visibility edges may run exactly through inflated
//! corners.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for geometric predicates (containment, tangency).
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is not strictly convex with counter-clockwise winding")]
    NotConvex,
    #[error("polygon has repeated vertices")]
    RepeatedVertex,
    #[error("inflation margin must be non-negative, got {0}")]
    NegativeMargin(f64),
    #[error("halfspace normal must be nonzero")]
    ZeroNormal,
}

/// A point (or vector) in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product, positive when `other` is
    /// counter-clockwise from `self`.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    /// Unit vector in the same direction; `None` for near-zero length.
    pub fn normalized(self) -> Option<Point2> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Closed halfspace `{ x : a·x ≤ b }` with unit normal `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Point2,
    pub offset: f64,
}

impl Halfspace {
    /// Builds a halfspace from a (not necessarily unit) normal; the offset is
    /// rescaled so membership is unchanged.
    pub fn new(normal: Point2, offset: f64) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if n < 1e-12 {
            return Err(GeometryError::ZeroNormal);
        }
        Ok(Self {
            normal: normal.scale(1.0 / n),
            offset: offset / n,
        })
    }

    /// Halfspace whose boundary passes through `point` with outward `normal`.
    pub fn through(point: Point2, normal: Point2) -> Result<Self, GeometryError> {
        let unit = normal.normalized().ok_or(GeometryError::ZeroNormal)?;
        Ok(Self {
            normal: unit,
            offset: unit.dot(point),
        })
    }

    /// `a·x − b`; non-positive inside.
    pub fn signed_distance(&self, pt: Point2) -> f64 {
        self.normal.dot(pt) - self.offset
    }

    pub fn contains(&self, pt: Point2, tol: f64) -> bool {
        self.signed_distance(pt) <= tol
    }

    /// Projects `pt` onto this halfspace (identity when already inside).
    pub fn project(&self, pt: Point2) -> Point2 {
        let d = self.signed_distance(pt);
        if d <= 0.0 {
            pt
        } else {
            pt - self.normal.scale(d)
        }
    }
}

/// Strictly convex polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl TryFrom<Vec<Point2>> for ConvexPolygon {
    type Error = GeometryError;
    fn try_from(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        ConvexPolygon::new(vertices)
    }
}

impl From<ConvexPolygon> for Vec<Point2> {
    fn from(poly: ConvexPolygon) -> Vec<Point2> {
        poly.vertices
    }
}

impl ConvexPolygon {
    /// Validates ≥3 distinct vertices and strict convexity (every cross
    /// product of consecutive edges positive).
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if vertices[i].distance(vertices[j]) < 1e-12 {
                    return Err(GeometryError::RepeatedVertex);
                }
            }
        }
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if (b - a).cross(c - b) <= 0.0 {
                return Err(GeometryError::NotConvex);
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle helper.
    pub fn rectangle(min: Point2, max: Point2) -> Result<Self, GeometryError> {
        Self::new(vec![
            min,
            Point2::new(max.x, min.y),
            max,
            Point2::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    /// Outward-facing halfspaces of the polygon's edges, in edge order.
    pub fn halfspaces(&self) -> Vec<Halfspace> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                let edge = b - a;
                // CCW winding: outward normal is the edge rotated clockwise.
                let normal = Point2::new(edge.y, -edge.x);
                Halfspace::through(a, normal).expect("validated polygon edges are nonzero")
            })
            .collect()
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.vertices.len() as f64;
        let sum = self
            .vertices
            .iter()
            .fold(Point2::new(0.0, 0.0), |acc, &v| acc + v);
        sum.scale(1.0 / n)
    }

    /// True iff `pt` is inside or on the boundary.
    pub fn contains(&self, pt: Point2) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b - a).cross(pt - a) >= -GEOM_EPS
        })
    }

    /// Nearest point of the polygon (interior included) and its distance.
    pub fn closest_point(&self, pt: Point2) -> (Point2, f64) {
        if self.contains(pt) {
            return (pt, 0.0);
        }
        let n = self.vertices.len();
        let mut best = (self.vertices[0], f64::INFINITY);
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let candidate = closest_on_segment(a, b, pt);
            let d = candidate.distance(pt);
            if d < best.1 {
                best = (candidate, d);
            }
        }
        best
    }

    /// Offsets every edge's supporting halfspace outward by `margin` and
    /// intersects adjacent boundary lines (miter join). The result contains
    /// the disc Minkowski sum of the polygon.
    pub fn inflate(&self, margin: f64) -> Result<ConvexPolygon, GeometryError> {
        if margin < 0.0 {
            return Err(GeometryError::NegativeMargin(margin));
        }
        if margin == 0.0 {
            return Ok(self.clone());
        }
        let faces = self.halfspaces();
        let n = faces.len();
        let mut vertices = Vec::with_capacity(n);
        for i in 0..n {
            // New vertex at the intersection of offset edges i and i+1;
            // this replaces original vertex i+1.
            let f0 = &faces[i];
            let f1 = &faces[(i + 1) % n];
            let b0 = f0.offset + margin;
            let b1 = f1.offset + margin;
            let det = f0.normal.cross(f1.normal);
            debug_assert!(det.abs() > 1e-12, "strictly convex edges are non-parallel");
            let x = (b0 * f1.normal.y - b1 * f0.normal.y) / det;
            let y = (f0.normal.x * b1 - f1.normal.x * b0) / det;
            vertices.push(Point2::new(x, y));
        }
        vertices.rotate_right(1);
        ConvexPolygon::new(vertices)
    }

    /// True iff the open segment `pq` meets the polygon's interior. Touching
    /// the boundary (tangency, passing through a corner) does not count.
    pub fn segment_intersects(&self, p: Point2, q: Point2) -> bool {
        // Clip the segment parameter interval against every face, then check
        // that the midpoint of the surviving interval is strictly interior.
        let d = q - p;
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for face in self.halfspaces() {
            let fp = face.signed_distance(p);
            let slope = face.normal.dot(d);
            if slope.abs() < 1e-15 {
                if fp > GEOM_EPS {
                    return false; // parallel and fully outside this face
                }
                continue;
            }
            let t = -fp / slope;
            if slope > 0.0 {
                t1 = t1.min(t); // leaving the halfspace
            } else {
                t0 = t0.max(t); // entering the halfspace
            }
            if t0 >= t1 {
                return false;
            }
        }
        if t1 - t0 <= GEOM_EPS {
            return false;
        }
        let mid = p + d.scale(0.5 * (t0 + t1));
        self.halfspaces()
            .iter()
            .all(|f| f.signed_distance(mid) < -GEOM_EPS)
    }

    /// Radius of the smallest circle centered at the centroid containing the
    /// polygon.
    pub fn circumradius(&self) -> f64 {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|v| v.distance(c))
            .fold(0.0, f64::max)
    }
}

fn closest_on_segment(a: Point2, b: Point2, pt: Point2) -> Point2 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 < 1e-24 {
        return a;
    }
    let t = ((pt - a).dot(ab) / len2).clamp(0.0, 1.0);
    a + ab.scale(t)
}

/// Wraps an angle to the interval (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = theta % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}
