#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod design;
pub mod error;
pub mod explorer;
pub mod harness;
pub mod linalg;
pub mod lsvi;
pub mod mdp;
pub mod planner;
pub mod policy;
pub mod scalar;

pub use error::{Error, Result};

pub type Matrix = linalg::Matrix<f64>;
pub type Mdp = mdp::LinearMdp<f64>;
pub type Features = mdp::FeatureTable<f64>;
pub type Reward = mdp::RewardFunction<f64>;
pub type Policy = policy::DeterministicPolicy<f64>;
pub type Mixture = policy::MixturePolicy<f64>;
pub type Set = policy::PolicySet<f64>;
pub type Data = lsvi::Dataset<f64>;
pub type Model = lsvi::LsviModel<f64>;
