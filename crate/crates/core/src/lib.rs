//! RGB-D visual odometry: feature front end, map, pose solver, tracker and
//! trajectory evaluation.

pub mod dataset;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod matcher;
pub mod model_runtime;
pub mod posesolver;
pub mod synthscene;
pub mod tracker;
pub mod worldmap;
