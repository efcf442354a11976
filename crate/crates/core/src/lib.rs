//! Mirror-assisted alignment of a virtual robot to a real one.

pub mod camera;
pub mod manifold;
pub mod mesh;
pub mod robot;
pub mod session;
pub mod sim;
pub mod stats;
pub mod triangulate;
