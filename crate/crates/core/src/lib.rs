//! Trajectory optimization for hybrid dynamical systems (discrete modes ×
//! continuous controls) in cluttered planar environments.
//!
//! The pipeline approximates the free space as a union of convex regions,
//! plans geometric initializations with a visibility graph (one per homotopy
//! class) or a kinodynamic RRT, relaxes the discrete mode choice into a
//! probability vector, and runs a two-stage constrained DDP: first an
//! obstacle-free tracking solve that collapses the mode relaxation, then a
//! collision-constrained solve with the mode sequence frozen.

pub mod ddp;
pub mod dynamics;
pub mod freespace;
pub mod geometry;
pub mod trajectory;

pub use dynamics::{
    AugmentedControl, BoxPusher, BoxPusherParams, DubinsGears, DubinsGearsParams, HybridDynamics,
    Model, ModelSpec, State,
};
pub use geometry::{ConvexPolygon, Halfspace, Point2};
pub use trajectory::{CostBreakdown, Trajectory};
