//! Request and response bodies shared by the HTTP server and its client.

use serde::{Deserialize, Serialize};

use crate::clustering::GraphExport;
use crate::geometry::Point3;
use crate::grid::CellIndex;
use crate::interaction::GestureConfig;
use crate::representative::{Action, Decision};
use crate::session::ClusterParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRequest {
    /// Path on the server; relative paths resolve against its data directory.
    pub manifest: String,
    /// Properties for variance and evaluation; all when omitted.
    #[serde(default)]
    pub properties: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum VoiRequest {
    /// Replace the VOI with exactly these cells.
    Cells { cells: Vec<CellIndex> },
    /// Replace the VOI with the active cells whose centers lie in the box.
    Volume { anchor: Point3, free: Point3 },
    /// Flip one cell.
    Toggle { cell: CellIndex },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiResponse {
    pub revision: u64,
    pub hash: String,
    pub cells: Vec<CellIndex>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done,
    Failed,
    /// Finished after the VOI changed; the result was dropped.
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job: u64,
    pub state: JobState,
    #[serde(default)]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub graph: GraphExport,
    pub stale: bool,
    pub members: Vec<usize>,
    /// Non-members by outlier score, highest first.
    pub ranking: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub candidate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecideRequest {
    pub candidate: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecideResponse {
    pub revision: u64,
    pub members: Vec<usize>,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphStatus {
    None,
    Current,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub revision: u64,
    pub manifest: Option<String>,
    pub realizations: Vec<String>,
    pub properties: Vec<String>,
    pub dims: (usize, usize, usize),
    pub active_cells: usize,
    pub voi_cells: usize,
    pub voi_hash: String,
    pub params: ClusterParams,
    pub graph: GraphStatus,
    pub members: Option<Vec<usize>>,
    pub decisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub trace: String,
    #[serde(default)]
    pub config: Option<GestureConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub commands: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable code, e.g. `workflow_order`.
    pub error: String,
    pub message: String,
}
