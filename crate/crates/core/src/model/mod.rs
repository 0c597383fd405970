//! Small differentiable models, datasets, client partitioning and the local
//! SGD / global step primitives of FedAvg.

mod dataset;
mod local;
mod net;
mod param;
mod partition;

pub use dataset::{Dataset, Example};
pub use local::{local_update_run, LocalRun};
pub(crate) use net::argmax;
pub use net::{Architecture, Model, ModelSpec};
pub use param::{apply_global_step, ParamVector};
pub use partition::{partition, ClientShard, PartitionScheme};
