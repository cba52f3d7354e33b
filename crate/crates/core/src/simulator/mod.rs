//! Synthetic ground truth: temple scenes, match streams, evaluation, and small
//! generators used by the module-level trials.

pub mod cluster_ring;
pub mod evaluate;
pub mod rotation_graph;
pub mod scene;
pub mod stream;

pub use scene::{generate_temple, Scene, SceneParams};
pub use stream::{arrival_order, generate_stream, EdgeLabel, MatchEvent, NoiseParams, Ordering, StreamParams};
pub use evaluate::{evaluate, Evaluation, Metrics, ModelComponent};
