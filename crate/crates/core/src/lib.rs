//! Learning cooperative policies from pairwise trajectory preferences, using
//! linearly mixed local value tables, with exact oracles for the small
//! instances used in testing.

pub mod checkpoint;
pub mod dataset;
pub mod env;
pub mod factorization;
pub mod losses;
pub mod optim;
pub mod oracles;
pub mod policy;
pub mod trainer;

pub use dataset::{PreferencePair, Trajectory, Transition};
pub use env::EnvSpec;
pub use factorization::{Hyper, LocalTables, MixWeights, MixingParams, TableShape};
pub use policy::{PolicyTable, SoftmaxPolicy};
pub use trainer::{Method, TrainConfig, TrainOutput};
