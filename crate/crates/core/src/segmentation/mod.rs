//! Warm-user segmentation: k-means in embedding space, per-segment popular tracks,
//! cold-user assignment and segment descriptions.

mod io;
mod kmeans;
mod segments;

pub use kmeans::{kmeans, nearest_centroid, KMeansConfig, KMeansFit};
pub use segments::{
    assign_segment, describe_segment, rank_by_popularity, segment_top_items, AssignMetric,
    PopularityMeasure, SegmentProfile, Segmentation,
};
