//! Progressive structure from motion.
//!
//! Views arrive one at a time with verified pairwise geometry. The engine keeps a
//! viewgraph, clusters it on neighborhood overlap, reconstructs each cluster locally
//! (recycling structure across topology changes and resetting models that disagree
//! with robustly averaged rotations), and places the cluster models in a common frame
//! through a Sim(3) pose graph. A synthetic scene simulator with rotationally symmetric
//! structure drives the whole thing end to end.

pub mod clustering;
pub mod features;
pub mod geometry;
pub mod local_reconstruction;
pub mod par;
pub mod pipeline;
pub mod registration;
pub mod rotation_averaging;
pub mod simulator;
pub mod viewgraph;

pub use clustering::{ClusterId, Partition, TopologyDelta};
pub use geometry::{CameraPose, Intrinsics, Sim3};
pub use viewgraph::{RelativeGeometry, ViewGraph, ViewId, ViewPair};
