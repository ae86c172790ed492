//! From predicted maps to counts, detections and tracklets.

mod detect;
mod flow;
mod io;

pub use detect::{count_from_density, localize, Detection, NmsConfig};
pub use flow::{
    build_flow_graph, detection_cost, solve_min_cost_flow, track, Arc, ArcKind, FlowGraph,
    FlowParams, FlowSolution, Node, Tracklet,
};
pub use io::{read_detections, read_tracklets, write_detections, write_tracklets};
