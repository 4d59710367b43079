pub mod checkpoint;
pub mod network;
pub mod params;
pub mod spec;

pub use checkpoint::{model_checkpoint, model_from_checkpoint, Checkpoint};
pub use network::{build_network, param_decls, ForwardCache, Gradients, Model, NetInput, Network, ParamDecl, ParamRole};
pub use params::{Param, ParamId, ParamStore, Partition, SgdStep};
pub use spec::{ConvSpec, FusionSpec, LayerKind, LayerSpec, NetworkSpec, Stream};
