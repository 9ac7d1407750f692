//! Haptic teleoperation of virtual mock-ups with collision-stopped motion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod device;
pub mod geometry;
pub mod kinematics;
pub mod mapping;
pub mod par;
pub mod protocol;
pub mod runner;
mod serde_vec3;
pub mod servo;
pub mod session;
