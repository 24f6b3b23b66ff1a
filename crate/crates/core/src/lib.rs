//! Content-aware network control: topology and path selection, the
//! controller/element wire protocol, content metadata, the controller
//! itself, emulated data-plane elements, and the two-link queueing model.

pub mod controller;
pub mod dataplane;
pub mod metadata;
pub mod netmodel;
pub mod protocol;
pub mod scenario;
pub mod simeval;

pub use controller::{Controller, ControllerConfig, ControllerError, ContentRequest, Decision, TeObjective};
pub use metadata::{ContentMetadata, MetadataStore, SizeSource};
pub use netmodel::{load_topology, Graph, LinkIdx, NodeId, NodeKind, Path};
pub use protocol::{decode, encode, Action, Capabilities, CodecError, FiveTuple, FlowMatch, FlowMod, Message};
