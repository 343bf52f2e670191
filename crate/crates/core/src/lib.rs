//! Spiking-network engine that stores knowledge-graph triples as learned
//! connectivity between neuron populations.

pub mod engram;
pub mod error;
pub mod kg;
pub mod network;
pub mod neuron;
pub mod par;
pub mod params;
pub mod plasticity;
pub mod protocol;
pub mod query;
pub mod snapshot;
pub mod stimulus;

pub use engram::{similarity, Engram, EngramRegistry, SmoothedReadout, SymbolKind, TraceLog};
pub use error::{Error, Result};
pub use network::{derive_seed, Network};
pub use neuron::{step_network, step_network_seq, NetworkState, Polarity, SpikeRaster};
pub use params::Params;
pub use plasticity::{stdp_delta, PlasticityMode, RewardSchedule, SynapseTable};
pub use stimulus::{poisson_stimulus, StimulusPlan};
pub use kg::{bind_symbols, mask_split, parse_relation_meta, parse_triples, DatasetSplit, RelationMeta, Triple};
pub use snapshot::{load_snapshot, save_snapshot};
pub use protocol::{encode_graph, encode_triple, run_induction, sweep_inhibitory_ratio, train_transitivity};
pub use query::{export_reasoning_trace, query, verify_triple, QueryResult};
