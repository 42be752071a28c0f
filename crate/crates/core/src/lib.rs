//! Risk-sensitive satisficing (RS) contextual bandits.
//!
//! The crate is organized bottom-up:
//!
//! - [`numeric`]: dense matrices, Cholesky solves, softmax, a bias-free ReLU
//!   network trained with Adam, and finite-difference gradient checking.
//! - [`bandit`]: the policy contract, regret accounting and the basic RS value.
//! - [`env`]: synthetic linear-reward data and the Statlog-Shuttle adapter.
//! - [`linear`]: LinGreedy, LinUCB, LinTS and RegLinRS (kNN trial-ratio estimate).
//! - [`reliability`]: the interchangeable reliability estimators used by NeuralRS.
//! - [`neural`]: NeuralRS, NeuralUCB and NeuralTS on a shared network.
//! - [`harness`]: seeded multi-run simulation, aggregation and result files.

pub mod bandit;
pub mod env;
pub mod harness;
pub mod linear;
pub mod neural;
pub mod numeric;
pub mod reliability;

pub use bandit::{Policy, PolicyError, RegretTrace, StepOutcome};
pub use env::{BanditDataset, RewardKind};
pub use harness::{ExperimentConfig, Hyperparams, PolicyKind, PolicySpec};
pub use reliability::ReliabilityKind;
