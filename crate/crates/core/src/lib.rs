//! Sparse-from-scratch training of deep deterministic and soft actor-critic
//! agents: masked networks, topology evolution, a dynamic-capacity replay
//! buffer, multi-step targets, and FLOPs/model-size accounting.

pub mod accounting;
pub mod agents;
pub mod envs;
pub mod error;
pub mod io;
pub mod net;
pub mod policy;
pub mod replay;
pub mod sparsity;
pub mod targets;
pub mod verify;

pub use accounting::{Algorithm, FlopsReport};
pub use agents::{train, MetricsRow, Profile, TopologyMode, TrainConfig, TrainResult};
pub use envs::{make_env, Env, EnvSpec, StepResult};
pub use error::{Error, Result};
pub use net::{Adam, Gradients, Head, MaskedLinear, Mlp};
pub use replay::{BufferConfig, DynamicBuffer, NStepSegment, Transition};
pub use sparsity::{EvolutionSchedule, GrowMode, SparsityAllocation};
pub use targets::TargetConfig;
