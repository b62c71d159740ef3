//! Road segmentation, stop attribution and the segment-by-coach-day
//! stop-duration matrix.

mod cluster;
mod matrix;
mod route;

pub use cluster::{
    affinity_propagation, contiguous_runs, propagate, similarity_matrix, ApParams, ClusterPartition, Preference,
};
pub use matrix::{
    assemble_matrix, build_matrix, column_keys, merge_rows, partition_matrix, smooth_split, AssemblyConfig,
    AssemblyReport, ColumnKey, DurationMatrix, DurationShare, StopEvent,
};
pub use route::{project_event, segment_route, Projection, RoadSegment, RoutePolyline};
