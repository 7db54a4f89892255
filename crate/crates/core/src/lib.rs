//! Networked multi-agent reinforcement learning with emergent discrete
//! communication.
//!
//! The crate bundles everything a self-contained experiment needs:
//!
//! - [`graphnet`] — junction-graph topologies and road-blocking perturbations
//! - [`traffic`] — a deterministic cellular-automaton traffic microsimulator
//! - [`obsgrid`] — per-agent partial observations as structured occupancy grids
//! - [`diffcore`] — a reverse-mode differentiation tape and the neural
//!   primitives the policies are built from
//! - [`agentpolicy`] — the per-agent encoder/communicator/selector policy and
//!   the one-tick-delay message bus
//! - [`trainer`] — episode rollouts, REINFORCE with a mean-reward baseline,
//!   robust training, and evaluation
//! - [`baselines`] — fixed-time, SOTL, independent DQN, and the
//!   fixed-protocol/blank-message/blind ablation wrappers
//! - [`langlab`] — PMI matrices, truncated SVD embeddings, tf-idf profiles,
//!   and cluster metrics for analysing the emergent language

pub mod agentpolicy;
pub mod baselines;
pub mod diffcore;
pub mod graphnet;
pub mod langlab;
pub mod obsgrid;
pub mod rngstream;
pub mod stats;
pub mod traffic;
pub mod trainer;
