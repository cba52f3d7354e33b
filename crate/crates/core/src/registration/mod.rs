//! Placing cluster reconstructions in a common frame.

pub mod constraints;
pub mod estimate;
pub mod pose_graph;
pub mod similarity;

pub use constraints::{collect_constraints, ConstraintConfig, ConstraintReport, EdgeVerdict, PairVerdict};
pub use estimate::{estimate_sim3_closed_form, ransac_sim3, RansacConfig, Sim3Error};
pub use pose_graph::{optimize_cluster_poses, ClusterEdge, ClusterGraph, PoseGraphConfig, PoseGraphReport};
pub use similarity::{neighborhood_similarity, SimilarityScore};
