//! Core building blocks for scheduled auxiliary control: task rewards,
//! environments, networks, off-policy evaluation, learning and scheduling.

pub mod env;
pub mod learner;
pub mod nn;
pub mod retrace;
pub mod rewards;
pub mod scheduler;
pub mod tasks;
pub mod trajectory;
