//! One analysis session: ensemble, VOI, clustering and the refinement audit.
//!
//! Clustering is split into [`AnalysisSession::prepare_clustering`],
//! [`ClusterJob::run`] and [`AnalysisSession::install_graph`] so that a
//! server can run the expensive middle step off its request path and drop
//! the result if the VOI changed meanwhile.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{GraphStatus, SessionSnapshot, VoiRequest};
use crate::clustering::{self, ClusterGraph, ClusteringError};
use crate::ensemble::{self, EnsembleError, RealizationEnsemble, VarianceModel};
use crate::grid::CellIndex;
use crate::representative::{
    self, Action, CandidateReport, Decision, RepresentativeError, RepresentativeSet,
};
use crate::similarity::{self, SimilarityError, DEFAULT_BINS};
use crate::spatialquery::{self, CutResult, FrustumLens, QueryError, SelectionVolume, VoiSelection};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("out of order: {0}")]
    WorkflowOrder(String),
    #[error("the cluster graph predates the current volume of interest")]
    StaleGraph,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("replay diverged: {0}")]
    ReplayMismatch(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Representative(#[from] RepresentativeError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

impl SessionError {
    /// Stable code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::WorkflowOrder(_) => "workflow_order",
            SessionError::StaleGraph => "stale_graph",
            SessionError::InvalidParams(_) => "invalid_params",
            SessionError::ReplayMismatch(_) => "replay_mismatch",
            SessionError::Ensemble(EnsembleError::Io { .. }) => "io",
            SessionError::Ensemble(_) => "ensemble",
            SessionError::Similarity(_) => "similarity",
            SessionError::Clustering(_) => "clustering",
            SessionError::Representative(_) => "representative",
            SessionError::Query(_) => "query",
        }
    }
}

pub type Result<T, E = SessionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub k: usize,
    pub seed: u64,
    pub bins: usize,
    /// Kernel bandwidth; the median pairwise distance when omitted.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Property compared by mutual information; the first session property
    /// when omitted.
    #[serde(default)]
    pub property: Option<String>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            k: 3,
            seed: 0,
            bins: DEFAULT_BINS,
            sigma: None,
            property: None,
        }
    }
}

/// Everything needed to replay an analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub manifest: Option<String>,
    pub properties: Vec<String>,
    pub voi: Vec<CellIndex>,
    pub voi_hash: String,
    pub params: ClusterParams,
    pub initial: Vec<usize>,
    pub decisions: Vec<Decision>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
struct GraphState {
    graph: Arc<ClusterGraph>,
    voi_epoch: u64,
}

/// Inputs of one clustering run, detached from the session.
#[derive(Debug, Clone)]
pub struct ClusterJob {
    ensemble: Arc<RealizationEnsemble>,
    voi: VoiSelection,
    property: String,
    params: ClusterParams,
    voi_epoch: u64,
}

impl ClusterJob {
    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    /// Similarity, distances, kernel k-means, centers and embedding.
    pub fn run(&self) -> Result<ClusterGraph> {
        let sim = similarity::similarity_matrix(&self.ensemble, &self.property, &self.voi, self.params.bins)?;
        let d = similarity::to_distance(&sim);
        Ok(clustering::build_cluster_graph(
            &d,
            self.params.k,
            self.params.seed,
            self.params.sigma,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisSession {
    ensemble: Arc<RealizationEnsemble>,
    manifest: Option<String>,
    properties: Vec<String>,
    variance: Arc<VarianceModel>,
    voi: VoiSelection,
    voi_epoch: u64,
    params: ClusterParams,
    graph: Option<GraphState>,
    set: Option<RepresentativeSet>,
    revision: u64,
}

impl AnalysisSession {
    /// Session over an in-memory ensemble; `properties` defaults to all.
    pub fn new(
        ensemble: Arc<RealizationEnsemble>,
        manifest: Option<String>,
        properties: Option<Vec<String>>,
    ) -> Result<Self> {
        let properties = properties.unwrap_or_else(|| ensemble.property_names().to_vec());
        let variance = ensemble::compute_variance(&ensemble, &properties, &ensemble.all_indices())?;
        Ok(Self {
            ensemble,
            manifest,
            properties,
            variance: Arc::new(variance),
            voi: VoiSelection::default(),
            voi_epoch: 0,
            params: ClusterParams::default(),
            graph: None,
            set: None,
            revision: 0,
        })
    }

    pub fn load(path: &Path, properties: Option<Vec<String>>) -> Result<Self> {
        let ens = ensemble::load_manifest(path)?;
        Self::new(Arc::new(ens), Some(path.display().to_string()), properties)
    }

    pub fn ensemble(&self) -> &Arc<RealizationEnsemble> {
        &self.ensemble
    }

    pub fn properties(&self) -> &[String] {
        &self.properties
    }

    pub fn variance(&self) -> &Arc<VarianceModel> {
        &self.variance
    }

    pub fn voi(&self) -> &VoiSelection {
        &self.voi
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn graph(&self) -> Option<&Arc<ClusterGraph>> {
        self.graph.as_ref().map(|g| &g.graph)
    }

    pub fn graph_status(&self) -> GraphStatus {
        match &self.graph {
            None => GraphStatus::None,
            Some(g) if g.voi_epoch == self.voi_epoch => GraphStatus::Current,
            Some(_) => GraphStatus::Stale,
        }
    }

    pub fn representative_set(&self) -> Option<&RepresentativeSet> {
        self.set.as_ref()
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let grid = self.ensemble.grid();
        SessionSnapshot {
            revision: self.revision,
            manifest: self.manifest.clone(),
            realizations: self.ensemble.realizations().iter().map(|r| r.id.clone()).collect(),
            properties: self.properties.clone(),
            dims: grid.dims(),
            active_cells: grid.active().iter().filter(|&&a| a).count(),
            voi_cells: self.voi.len(),
            voi_hash: self.voi.hash_hex(),
            params: self.params.clone(),
            graph: self.graph_status(),
            members: self.set.as_ref().map(|s| s.members().to_vec()),
            decisions: self.set.as_ref().map_or(0, |s| s.decisions().len()),
        }
    }

    fn bump(&mut self) {
        self.revision += 1;
    }

    pub fn set_voi(&mut self, voi: VoiSelection) {
        self.voi = voi.with_revision(self.voi_epoch + 1);
        self.voi_epoch += 1;
        self.bump();
    }

    pub fn apply_voi(&mut self, req: &VoiRequest) -> Result<&VoiSelection> {
        let grid = self.ensemble.grid();
        let next = match req {
            VoiRequest::Cells { cells } => VoiSelection::from_cells(grid, cells)?,
            VoiRequest::Volume { anchor, free } => {
                let vol = SelectionVolume::new(*anchor, *free);
                VoiSelection::from_linear(grid, spatialquery::cells_in_volume(grid, &vol))?
            }
            VoiRequest::Toggle { cell } => spatialquery::toggle_cell(&self.voi, grid, *cell)?,
        };
        self.set_voi(next);
        Ok(&self.voi)
    }

    fn resolve_property(&self, params: &ClusterParams) -> Result<String> {
        let property = params
            .property
            .clone()
            .unwrap_or_else(|| self.properties[0].clone());
        if !self.ensemble.property_names().contains(&property) {
            return Err(EnsembleError::UnknownProperty(property).into());
        }
        Ok(property)
    }

    fn validate_params(&self, params: &ClusterParams) -> Result<()> {
        let r = self.ensemble.count();
        if params.k == 0 || params.k > r {
            return Err(SessionError::InvalidParams(format!("k must be in 1..={r}, got {}", params.k)));
        }
        if params.bins < 2 {
            return Err(SessionError::InvalidParams(format!("bins must be at least 2, got {}", params.bins)));
        }
        if let Some(s) = params.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(SessionError::InvalidParams(format!("sigma must be positive, got {s}")));
            }
        }
        self.resolve_property(params)?;
        Ok(())
    }

    /// Validates `params` and snapshots the inputs of a clustering run.
    pub fn prepare_clustering(&self, params: ClusterParams) -> Result<ClusterJob> {
        if self.voi.is_empty() {
            return Err(SessionError::WorkflowOrder(
                "select a non-empty volume of interest before clustering".into(),
            ));
        }
        self.validate_params(&params)?;
        Ok(ClusterJob {
            ensemble: self.ensemble.clone(),
            voi: self.voi.clone(),
            property: self.resolve_property(&params)?,
            params,
            voi_epoch: self.voi_epoch,
        })
    }

    /// Installs a finished graph and resets the representative set to its
    /// centers. Returns false, changing nothing, if the VOI moved on.
    pub fn install_graph(&mut self, job: &ClusterJob, graph: ClusterGraph) -> bool {
        if job.voi_epoch != self.voi_epoch {
            return false;
        }
        self.set = Some(representative::initial_set(&graph));
        self.graph = Some(GraphState {
            graph: Arc::new(graph),
            voi_epoch: job.voi_epoch,
        });
        self.params = job.params.clone();
        self.bump();
        true
    }

    pub fn run_clustering(&mut self, params: ClusterParams) -> Result<&Arc<ClusterGraph>> {
        let job = self.prepare_clustering(params)?;
        let graph = job.run()?;
        self.install_graph(&job, graph);
        Ok(&self.graph.as_ref().expect("just installed").graph)
    }

    fn current_graph(&self) -> Result<(&ClusterGraph, &RepresentativeSet)> {
        let state = self
            .graph
            .as_ref()
            .ok_or_else(|| SessionError::WorkflowOrder("cluster before evaluating candidates".into()))?;
        if state.voi_epoch != self.voi_epoch {
            return Err(SessionError::StaleGraph);
        }
        let set = self.set.as_ref().expect("set exists with graph");
        Ok((&state.graph, set))
    }

    /// Non-members by outlier score.
    pub fn ranking(&self) -> Result<Vec<(usize, f64)>> {
        let state = self
            .graph
            .as_ref()
            .ok_or_else(|| SessionError::WorkflowOrder("no cluster graph yet".into()))?;
        Ok(representative::rank_outliers(&state.graph, self.set.as_ref().expect("set exists with graph")))
    }

    pub fn evaluate(&self, candidate: usize) -> Result<CandidateReport> {
        let (graph, set) = self.current_graph()?;
        Ok(representative::evaluate_candidate(
            set,
            graph,
            &self.ensemble,
            &self.properties,
            &self.voi,
            candidate,
        )?)
    }

    pub fn decide(&mut self, candidate: usize, action: Action) -> Result<&Decision> {
        let report = self.evaluate(candidate)?;
        let set = self.set.as_ref().expect("evaluate checked the graph");
        let next = match action {
            Action::Accept => representative::accept(set, candidate, &report)?,
            Action::Reject => representative::reject(set, candidate, &report)?,
        };
        self.set = Some(next);
        self.bump();
        Ok(self.set.as_ref().and_then(|s| s.decisions().last()).expect("just recorded"))
    }

    /// Pure: classifies the current grid against `lens`, sparing the VOI.
    pub fn lens_query(&self, lens: &FrustumLens) -> CutResult {
        spatialquery::classify_cells(self.ensemble.grid(), &self.voi, lens)
    }

    pub fn export(&self) -> Result<SessionFile> {
        let set = self
            .set
            .as_ref()
            .ok_or_else(|| SessionError::WorkflowOrder("nothing to export before clustering".into()))?;
        Ok(SessionFile {
            manifest: self.manifest.clone(),
            properties: self.properties.clone(),
            voi: self.voi.cell_indices(self.ensemble.grid()),
            voi_hash: self.voi.hash_hex(),
            params: self.params.clone(),
            initial: set.initial().to_vec(),
            decisions: set.decisions().to_vec(),
            members: set.members().to_vec(),
        })
    }

    /// Rebuilds a session from an exported file: re-selects the VOI, re-runs
    /// clustering and replays every decision, checking each recorded result.
    pub fn replay(file: &SessionFile, ensemble: Arc<RealizationEnsemble>) -> Result<Self> {
        let mut s = Self::new(ensemble, file.manifest.clone(), Some(file.properties.clone()))?;
        let voi = VoiSelection::from_cells(s.ensemble.grid(), &file.voi)?;
        if voi.hash_hex() != file.voi_hash {
            return Err(SessionError::ReplayMismatch(format!(
                "VOI hash {} differs from recorded {}",
                voi.hash_hex(),
                file.voi_hash
            )));
        }
        s.set_voi(voi);
        s.run_clustering(file.params.clone())?;
        let set = s.set.as_ref().expect("clustered");
        if set.initial() != file.initial.as_slice() {
            return Err(SessionError::ReplayMismatch(format!(
                "initial set {:?} differs from recorded {:?}",
                set.initial(),
                file.initial
            )));
        }
        for d in &file.decisions {
            if d.candidate >= s.ensemble.count() {
                return Err(RepresentativeError::UnknownNode(d.candidate).into());
            }
        }
        let replayed = RepresentativeSet::replay(&file.initial, &file.decisions)?;
        if replayed.members() != file.members.as_slice() {
            return Err(SessionError::ReplayMismatch(format!(
                "members {:?} differ from recorded {:?}",
                replayed.members(),
                file.members
            )));
        }
        s.set = Some(replayed);
        s.bump();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{generate_synthetic_ensemble, SyntheticSpec};

    fn small() -> (AnalysisSession, Vec<usize>) {
        let spec = SyntheticSpec {
            dims: (8, 8, 2),
            realizations_per_family: 4,
            ..SyntheticSpec::default()
        };
        let syn = generate_synthetic_ensemble(&spec).unwrap();
        let channel = syn.channel_cells();
        (AnalysisSession::new(Arc::new(syn.ensemble), None, None).unwrap(), channel)
    }

    #[test]
    fn cluster_requires_voi() {
        let (mut s, _) = small();
        assert!(matches!(
            s.run_clustering(ClusterParams::default()),
            Err(SessionError::WorkflowOrder(_))
        ));
        assert!(matches!(s.evaluate(0), Err(SessionError::WorkflowOrder(_))));
    }

    #[test]
    fn voi_change_makes_graph_stale() {
        let (mut s, channel) = small();
        let grid = s.ensemble().grid().clone();
        s.set_voi(VoiSelection::from_linear(&grid, channel.clone()).unwrap());
        s.run_clustering(ClusterParams::default()).unwrap();
        assert_eq!(s.graph_status(), GraphStatus::Current);
        let outsider = s.ranking().unwrap()[0].0;
        assert!(s.evaluate(outsider).is_ok());
        s.apply_voi(&VoiRequest::Toggle { cell: grid.cell_index(channel[0]) }).unwrap();
        assert_eq!(s.graph_status(), GraphStatus::Stale);
        assert!(matches!(s.decide(outsider, Action::Accept), Err(SessionError::StaleGraph)));
    }

    #[test]
    fn late_job_is_discarded() {
        let (mut s, channel) = small();
        let grid = s.ensemble().grid().clone();
        s.set_voi(VoiSelection::from_linear(&grid, channel.clone()).unwrap());
        let job = s.prepare_clustering(ClusterParams::default()).unwrap();
        let graph = job.run().unwrap();
        s.set_voi(VoiSelection::from_linear(&grid, channel[1..].to_vec()).unwrap());
        let before = s.revision();
        assert!(!s.install_graph(&job, graph));
        assert_eq!(s.revision(), before);
        assert_eq!(s.graph_status(), GraphStatus::None);
    }

    #[test]
    fn mutators_bump_revision() {
        let (mut s, channel) = small();
        let grid = s.ensemble().grid().clone();
        let r0 = s.revision();
        s.set_voi(VoiSelection::from_linear(&grid, channel).unwrap());
        let r1 = s.revision();
        s.run_clustering(ClusterParams::default()).unwrap();
        let r2 = s.revision();
        let c = s.ranking().unwrap()[0].0;
        s.decide(c, Action::Reject).unwrap();
        assert!(r0 < r1 && r1 < r2 && r2 < s.revision());
    }

    #[test]
    fn export_replays() {
        let (mut s, channel) = small();
        let grid = s.ensemble().grid().clone();
        s.set_voi(VoiSelection::from_linear(&grid, channel).unwrap());
        s.run_clustering(ClusterParams { seed: 5, ..ClusterParams::default() }).unwrap();
        let ranked = s.ranking().unwrap();
        s.decide(ranked[0].0, Action::Accept).unwrap();
        s.decide(ranked[1].0, Action::Reject).unwrap();
        let file = s.export().unwrap();
        let json = serde_json::to_string(&file).unwrap();
        let back: SessionFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, file);
        let r = AnalysisSession::replay(&back, s.ensemble().clone()).unwrap();
        assert_eq!(r.voi().iter().collect::<Vec<_>>(), s.voi().iter().collect::<Vec<_>>());
        assert_eq!(r.representative_set().unwrap().members(), s.representative_set().unwrap().members());

        let mut forged = file.clone();
        forged.members.push(999);
        assert!(matches!(
            AnalysisSession::replay(&forged, s.ensemble().clone()),
            Err(SessionError::ReplayMismatch(_))
        ));
    }
}
