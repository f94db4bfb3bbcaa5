//! A self-contained multi-agent traffic-behavior curriculum laboratory.
//!
//! A 2D unsignalized-intersection simulator in which a MARL teacher
//! coordinates NPC vehicles at a commanded difficulty `lambda` in [-1, 1]
//! (1 = altruistic traffic, -1 = adversarial traffic), and an automatic
//! curriculum alternately trains the teacher and a PPO student driver.
//!
//! See the crate examples for runnable tours of each capability and the
//! `traffic-curriculum` binary for the training/evaluation CLI.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod eval;
pub mod lane_graph;
pub mod math;
pub mod nn;
pub mod observation;
pub mod ppo;
pub mod rewards;
pub mod rng;
pub mod scenario_log;
pub mod sim;
pub mod student;
pub mod teacher;
