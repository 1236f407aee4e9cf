//! Simplified LiDAR–inertial odometry: IMU preintegration between frames, a
//! voxel-plane map, and a joint Gauss–Newton update over pose, velocity and biases.

pub mod lio;
pub mod map;
pub mod preintegration;

pub use lio::{associate, lio_update, lio_update_from, normal_matrix, point_to_plane, residual_imu, residual_lidar, Correspondence, LioOutcome, LioParams, RobotState};
pub use map::{LocalMap, MapParams, Plane};
pub use preintegration::{preintegrate, ImuNoise, Preintegrated};
