//! Realization ensembles, variance models and the synthetic channel generator.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Vec3};
use crate::grid::{self, CellIndex, CornerPointGrid, GridError};
use crate::spatialquery::VoiSelection;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("an ensemble needs at least two realizations, got {0}")]
    TooFewRealizations(usize),
    #[error("unknown property {0}")]
    UnknownProperty(String),
    #[error("realization {realization} has no field for property {property}")]
    MissingField {
        realization: String,
        property: String,
    },
    #[error("variance needs at least two distinct realizations, got {0}")]
    SubsetTooSmall(usize),
    #[error("realization index {index} out of range (ensemble has {count})")]
    SubsetOutOfRange { index: usize, count: usize },
    #[error("the volume of interest is empty")]
    EmptyVoi,
    #[error("variance models cover different cells")]
    CoverageMismatch,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Grid { path: PathBuf, source: GridError },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
}

pub type Result<T, E = EnsembleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub id: String,
    /// Per-cell values keyed by property name; inactive cells are stored but
    /// never read by statistics.
    pub fields: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationEnsemble {
    grid: CornerPointGrid,
    property_names: Vec<String>,
    realizations: Vec<Realization>,
}

impl RealizationEnsemble {
    pub fn new(
        grid: CornerPointGrid,
        property_names: Vec<String>,
        realizations: Vec<Realization>,
    ) -> Result<Self> {
        if realizations.len() < 2 {
            return Err(EnsembleError::TooFewRealizations(realizations.len()));
        }
        for r in &realizations {
            for p in &property_names {
                match r.fields.get(p) {
                    Some(values) if values.len() == grid.cell_count() => {}
                    Some(values) => {
                        return Err(EnsembleError::Grid {
                            path: PathBuf::from(&r.id),
                            source: GridError::PropertyLength {
                                name: p.clone(),
                                expected: grid.cell_count(),
                                found: values.len(),
                            },
                        })
                    }
                    None => {
                        return Err(EnsembleError::MissingField {
                            realization: r.id.clone(),
                            property: p.clone(),
                        })
                    }
                }
            }
        }
        Ok(Self {
            grid,
            property_names,
            realizations,
        })
    }

    pub fn grid(&self) -> &CornerPointGrid {
        &self.grid
    }

    pub fn property_names(&self) -> &[String] {
        &self.property_names
    }

    pub fn count(&self) -> usize {
        self.realizations.len()
    }

    pub fn realizations(&self) -> &[Realization] {
        &self.realizations
    }

    pub fn field(&self, realization: usize, property: &str) -> Result<&[f64]> {
        if !self.property_names.iter().any(|p| p == property) {
            return Err(EnsembleError::UnknownProperty(property.to_string()));
        }
        let r = self
            .realizations
            .get(realization)
            .ok_or(EnsembleError::SubsetOutOfRange {
                index: realization,
                count: self.count(),
            })?;
        Ok(&r.fields[property])
    }

    /// Values of one realization's property gathered over `cells`.
    pub fn gather(&self, realization: usize, property: &str, cells: &[usize]) -> Result<Vec<f64>> {
        let field = self.field(realization, property)?;
        Ok(cells.iter().map(|&c| field[c]).collect())
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.count()).collect()
    }
}

/// Per-cell variance combined over properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    /// Linear cell indices carrying a value, ascending.
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
    /// Realizations the model was computed from, ascending.
    pub subset: Vec<usize>,
    pub properties: Vec<String>,
}

impl VarianceModel {
    pub fn value_at(&self, cell: usize) -> Option<f64> {
        self.cells
            .binary_search(&cell)
            .ok()
            .map(|pos| self.values[pos])
    }
}

fn normalized_subset(ens: &RealizationEnsemble, subset: &[usize]) -> Result<Vec<usize>> {
    let mut s = subset.to_vec();
    s.sort_unstable();
    s.dedup();
    if let Some(&index) = s.iter().find(|&&i| i >= ens.count()) {
        return Err(EnsembleError::SubsetOutOfRange {
            index,
            count: ens.count(),
        });
    }
    if s.len() < 2 {
        return Err(EnsembleError::SubsetTooSmall(s.len()));
    }
    Ok(s)
}

fn check_properties(ens: &RealizationEnsemble, props: &[String]) -> Result<()> {
    if props.is_empty() {
        return Err(EnsembleError::UnknownProperty(String::new()));
    }
    for p in props {
        if !ens.property_names.contains(p) {
            return Err(EnsembleError::UnknownProperty(p.clone()));
        }
    }
    Ok(())
}

/// Unbiased per-cell variance of each property over `subset`, each field
/// normalized by its own maximum over active cells, then averaged across
/// properties.
pub fn compute_variance(
    ens: &RealizationEnsemble,
    props: &[String],
    subset: &[usize],
) -> Result<VarianceModel> {
    check_properties(ens, props)?;
    let subset = normalized_subset(ens, subset)?;
    let cells = ens.grid.active_cells();
    let n = subset.len() as f64;
    let mut combined = vec![0.0; cells.len()];
    for prop in props {
        let fields: Vec<&[f64]> = subset
            .iter()
            .map(|&r| ens.realizations[r].fields[prop].as_slice())
            .collect();
        let raw: Vec<f64> = cells
            .iter()
            .map(|&c| {
                // shifted by the first sample so equal values give exactly 0
                let x0 = fields[0][c];
                let mean = fields.iter().map(|f| f[c] - x0).sum::<f64>() / n;
                fields.iter().map(|f| (f[c] - x0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        for (acc, v) in combined.iter_mut().zip(&raw) {
            if max > 0.0 {
                *acc += v / max;
            }
        }
    }
    let np = props.len() as f64;
    combined.iter_mut().for_each(|v| *v /= np);
    Ok(VarianceModel {
        cells,
        values: combined,
        subset,
        properties: props.to_vec(),
    })
}

/// [`compute_variance`] restricted to the cells of `voi`.
pub fn variance_over_voi(
    ens: &RealizationEnsemble,
    props: &[String],
    subset: &[usize],
    voi: &VoiSelection,
) -> Result<VarianceModel> {
    if voi.is_empty() {
        return Err(EnsembleError::EmptyVoi);
    }
    let full = compute_variance(ens, props, subset)?;
    let mut cells = Vec::with_capacity(voi.len());
    let mut values = Vec::with_capacity(voi.len());
    for (c, v) in full.cells.iter().zip(&full.values) {
        if voi.contains(*c) {
            cells.push(*c);
            values.push(*v);
        }
    }
    if cells.is_empty() {
        return Err(EnsembleError::EmptyVoi);
    }
    Ok(VarianceModel {
        cells,
        values,
        ..full
    })
}

/// Cells whose variance changed by more than this count as changed.
pub const CHANGE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaAggregates {
    pub mean_abs_change: f64,
    pub max_abs_change: f64,
    pub changed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDelta {
    pub cells: Vec<usize>,
    /// `after − before` per cell.
    pub delta: Vec<f64>,
    pub aggregates: DeltaAggregates,
}

pub fn variance_delta(before: &VarianceModel, after: &VarianceModel) -> Result<VarianceDelta> {
    if before.cells != after.cells {
        return Err(EnsembleError::CoverageMismatch);
    }
    let delta: Vec<f64> = after
        .values
        .iter()
        .zip(&before.values)
        .map(|(a, b)| a - b)
        .collect();
    let n = delta.len();
    let aggregates = if n == 0 {
        DeltaAggregates {
            mean_abs_change: 0.0,
            max_abs_change: 0.0,
            changed_fraction: 0.0,
        }
    } else {
        DeltaAggregates {
            mean_abs_change: delta.iter().map(|d| d.abs()).sum::<f64>() / n as f64,
            max_abs_change: delta.iter().fold(0.0, |m, d| m.max(d.abs())),
            changed_fraction: delta.iter().filter(|d| d.abs() > CHANGE_THRESHOLD).count()
                as f64
                / n as f64,
        }
    };
    Ok(VarianceDelta {
        cells: before.cells.clone(),
        delta,
        aggregates,
    })
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: String,
    pub properties: Vec<String>,
    pub realizations: Vec<ManifestRealization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRealization {
    pub id: String,
    pub files: BTreeMap<String, String>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an ensemble from a manifest; relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<RealizationEnsemble> {
    let manifest: Manifest =
        serde_json::from_str(&read_text(path)?).map_err(|e| EnsembleError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let grid_path = base.join(&manifest.grid);
    let grid = grid::parse_grid(&read_text(&grid_path)?).map_err(|source| EnsembleError::Grid {
        path: grid_path.clone(),
        source,
    })?;

    // several properties may share one file; parse each file once
    let mut cache: BTreeMap<PathBuf, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut realizations = Vec::with_capacity(manifest.realizations.len());
    for entry in &manifest.realizations {
        let mut fields = BTreeMap::new();
        for prop in &manifest.properties {
            let rel = entry.files.get(prop).ok_or_else(|| EnsembleError::MissingField {
                realization: entry.id.clone(),
                property: prop.clone(),
            })?;
            let file = base.join(rel);
            if !cache.contains_key(&file) {
                let parsed = grid::parse_properties(&read_text(&file)?, grid.cell_count())
                    .map_err(|source| EnsembleError::Grid {
                        path: file.clone(),
                        source,
                    })?;
                cache.insert(file.clone(), parsed);
            }
            let values = cache[&file]
                .get(prop)
                .ok_or_else(|| EnsembleError::Grid {
                    path: file.clone(),
                    source: GridError::MissingKeyword {
                        keyword: prop.clone(),
                    },
                })?
                .clone();
            fields.insert(prop.clone(), values);
        }
        realizations.push(Realization {
            id: entry.id.clone(),
            fields,
        });
    }
    RealizationEnsemble::new(grid, manifest.properties, realizations)
}

// ---------------------------------------------------------------------------
// Synthetic ensembles

/// One channel scenario: orientation, width (cells) and property contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFamily {
    pub angle_deg: f64,
    pub width: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: (usize, usize, usize),
    pub spacing: [f64; 3],
    pub realizations_per_family: usize,
    pub seed: u64,
    pub families: Vec<ScenarioFamily>,
    /// Porosity outside the channel.
    pub base: f64,
    pub noise_std: f64,
    /// Moving-average half-widths along i, j, k.
    pub smoothing: [usize; 3],
    pub sinuosity_amplitude: f64,
    pub sinuosity_wavelength: f64,
    /// Uniform lateral shift of a realization's channel, in cells.
    pub jitter: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dims: (20, 20, 5),
            spacing: [10.0, 10.0, 2.0],
            realizations_per_family: 20,
            seed: 7,
            families: vec![
                ScenarioFamily {
                    angle_deg: 0.0,
                    width: 4.0,
                    contrast: 0.12,
                },
                ScenarioFamily {
                    angle_deg: 60.0,
                    width: 4.0,
                    contrast: 0.12,
                },
                ScenarioFamily {
                    angle_deg: 120.0,
                    width: 4.0,
                    contrast: 0.12,
                },
            ],
            base: 0.12,
            noise_std: 0.02,
            smoothing: [2, 1, 0],
            sinuosity_amplitude: 1.5,
            sinuosity_wavelength: 12.0,
            jitter: 0.5,
        }
    }
}

pub const SYNTHETIC_PROPERTIES: [&str; 2] = ["PERMX", "PORO"];

#[derive(Debug, Clone)]
pub struct SyntheticEnsemble {
    pub ensemble: RealizationEnsemble,
    /// Family of each realization; for test oracles only.
    pub family_labels: Vec<usize>,
    /// Unshifted channel footprint of each family.
    pub family_masks: Vec<Vec<bool>>,
    /// Channel footprint actually rasterized into each realization.
    pub channel_masks: Vec<Vec<bool>>,
}

impl SyntheticEnsemble {
    /// Active cells inside any family's nominal channel.
    pub fn channel_cells(&self) -> Vec<usize> {
        let grid = self.ensemble.grid();
        (0..grid.cell_count())
            .filter(|&c| grid.is_active(c) && self.family_masks.iter().any(|m| m[c]))
            .collect()
    }
}

fn validate_spec(spec: &SyntheticSpec) -> Result<()> {
    let bad = |m: &str| Err(EnsembleError::InvalidSpec(m.to_string()));
    let (ni, nj, nk) = spec.dims;
    if ni == 0 || nj == 0 || nk == 0 {
        return bad("dims must be positive");
    }
    if spec.families.is_empty() {
        return bad("at least one scenario family is required");
    }
    if spec.families.len() * spec.realizations_per_family < 2 {
        return bad("at least two realizations are required");
    }
    if spec.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return bad("spacing must be positive");
    }
    if !(spec.noise_std.is_finite() && spec.noise_std >= 0.0) {
        return bad("noise_std must be non-negative");
    }
    if !(spec.sinuosity_wavelength.is_finite() && spec.sinuosity_wavelength > 0.0) {
        return bad("sinuosity_wavelength must be positive");
    }
    if !(spec.jitter.is_finite() && spec.jitter >= 0.0) {
        return bad("jitter must be non-negative");
    }
    for f in &spec.families {
        if !(f.width.is_finite() && f.width > 0.0) {
            return bad("family width must be positive");
        }
        if !f.contrast.is_finite() || !f.angle_deg.is_finite() {
            return bad("family parameters must be finite");
        }
    }
    Ok(())
}

/// Channel membership by cell-center position in cell units.
fn channel_mask(
    dims: (usize, usize, usize),
    family: &ScenarioFamily,
    spec: &SyntheticSpec,
    shift: f64,
) -> Vec<bool> {
    let (ni, nj, nk) = dims;
    let theta = family.angle_deg.to_radians();
    let (u, w) = ((theta.cos(), theta.sin()), (-theta.sin(), theta.cos()));
    let (cx, cy) = (ni as f64 / 2.0, nj as f64 / 2.0);
    let mut plan = vec![false; ni * nj];
    for j in 0..nj {
        for i in 0..ni {
            let (px, py) = (i as f64 + 0.5 - cx, j as f64 + 0.5 - cy);
            let along = px * u.0 + py * u.1;
            let across = px * w.0 + py * w.1;
            let centerline = spec.sinuosity_amplitude
                * (std::f64::consts::TAU * along / spec.sinuosity_wavelength).sin()
                + shift;
            plan[i + ni * j] = (across - centerline).abs() <= family.width / 2.0;
        }
    }
    (0..ni * nj * nk).map(|c| plan[c % (ni * nj)]).collect()
}

/// Separable moving average with windows truncated at the grid boundary.
fn smooth(field: &[f64], dims: (usize, usize, usize), half: [usize; 3]) -> Vec<f64> {
    let (ni, nj, nk) = dims;
    let strides = [1, ni, ni * nj];
    let sizes = [ni, nj, nk];
    let mut cur = field.to_vec();
    for axis in 0..3 {
        if half[axis] == 0 {
            continue;
        }
        let mut next = vec![0.0; cur.len()];
        for (c, out) in next.iter_mut().enumerate() {
            let pos = (c / strides[axis]) % sizes[axis];
            let lo = pos.saturating_sub(half[axis]);
            let hi = (pos + half[axis]).min(sizes[axis] - 1);
            let base = c - pos * strides[axis];
            let sum: f64 = (lo..=hi).map(|q| cur[base + q * strides[axis]]).sum();
            *out = sum / (hi - lo + 1) as f64;
        }
        cur = next;
    }
    cur
}

/// Shifts and scales the entries selected by `mask` to zero mean and unit
/// standard deviation.
fn standardize(field: &mut [f64], mask: &[bool], select: bool) {
    let idx: Vec<usize> = (0..field.len()).filter(|&c| mask[c] == select).collect();
    if idx.is_empty() {
        return;
    }
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&c| field[c]).sum::<f64>() / n;
    let var = idx.iter().map(|&c| (field[c] - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for &c in &idx {
        field[c] = if sd > 0.0 {
            (field[c] - mean) / sd
        } else {
            0.0
        };
    }
}

/// Permeability derived from porosity (mD).
pub fn permeability_from_porosity(poro: f64) -> f64 {
    10f64.powf(0.5 + 10.0 * poro)
}

/// Generates a channelized ensemble; a pure function of `spec`.
///
/// Porosity is `base + contrast·[in channel] + noise_std·z`, where `z` is a
/// smoothed white-noise field standardized separately inside and outside the
/// channel, so within every realization the in-channel mean exceeds the
/// background mean by exactly `contrast`.
pub fn generate_synthetic_ensemble(spec: &SyntheticSpec) -> Result<SyntheticEnsemble> {
    validate_spec(spec)?;
    let dims = spec.dims;
    let grid = CornerPointGrid::regular(
        dims,
        Point3::new(0.0, 0.0, 1000.0),
        Vec3::new(spec.spacing[0], spec.spacing[1], spec.spacing[2]),
    )
    .map_err(|e| EnsembleError::InvalidSpec(e.to_string()))?;
    let cells = grid.cell_count();
    let family_masks: Vec<Vec<bool>> = spec
        .families
        .iter()
        .map(|f| channel_mask(dims, f, spec, 0.0))
        .collect();

    let mut realizations = Vec::new();
    let mut family_labels = Vec::new();
    let mut channel_masks = Vec::new();
    for (fi, family) in spec.families.iter().enumerate() {
        for m in 0..spec.realizations_per_family {
            let r = fi * spec.realizations_per_family + m;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(r as u64 + 1);
            let shift = if spec.jitter > 0.0 {
                rng.random_range(-spec.jitter..=spec.jitter)
            } else {
                0.0
            };
            let mask = channel_mask(dims, family, spec, shift);
            let white: Vec<f64> = (0..cells).map(|_| rng.sample(StandardNormal)).collect();
            let mut noise = smooth(&white, dims, spec.smoothing);
            standardize(&mut noise, &mask, true);
            standardize(&mut noise, &mask, false);
            let poro: Vec<f64> = (0..cells)
                .map(|c| {
                    let contrast = if mask[c] { family.contrast } else { 0.0 };
                    spec.base + contrast + spec.noise_std * noise[c]
                })
                .collect();
            let perm = poro.iter().map(|&p| permeability_from_porosity(p)).collect();
            let mut fields = BTreeMap::new();
            fields.insert("PORO".to_string(), poro);
            fields.insert("PERMX".to_string(), perm);
            realizations.push(Realization {
                id: format!("r{r:03}"),
                fields,
            });
            family_labels.push(fi);
            channel_masks.push(mask);
        }
    }
    let ensemble = RealizationEnsemble::new(
        grid,
        SYNTHETIC_PROPERTIES.iter().map(|s| s.to_string()).collect(),
        realizations,
    )?;
    Ok(SyntheticEnsemble {
        ensemble,
        family_labels,
        family_masks,
        channel_masks,
    })
}

/// Labels and channel VOI written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLabels {
    pub family_labels: Vec<usize>,
    pub families: Vec<ScenarioFamily>,
    pub seed: u64,
}

/// VOI file: a plain list of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiFile {
    pub cells: Vec<CellIndex>,
}

/// Writes `manifest.json`, `grid.grdecl`, one property file per realization,
/// `labels.json` and `channel_voi.json` into `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, synthetic: &SyntheticEnsemble, spec: &SyntheticSpec) -> Result<PathBuf> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EnsembleError::Io { path, source }
    };
    std::fs::create_dir_all(dir.join("realizations")).map_err(io(dir))?;
    let ens = &synthetic.ensemble;
    let grid_path = dir.join("grid.grdecl");
    std::fs::write(&grid_path, grid::write_grid(ens.grid())).map_err(io(&grid_path))?;

    let mut entries = Vec::new();
    for r in ens.realizations() {
        let rel = format!("realizations/{}.grdecl", r.id);
        let mut text = String::new();
        for (name, values) in &r.fields {
            grid::write_property(&mut text, name, values);
        }
        let path = dir.join(&rel);
        std::fs::write(&path, text).map_err(io(&path))?;
        entries.push(ManifestRealization {
            id: r.id.clone(),
            files: r.fields.keys().map(|k| (k.clone(), rel.clone())).collect(),
        });
    }
    let manifest = Manifest {
        grid: "grid.grdecl".into(),
        properties: ens.property_names().to_vec(),
        realizations: entries,
    };
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    write_json(
        &dir.join("labels.json"),
        &SyntheticLabels {
            family_labels: synthetic.family_labels.clone(),
            families: spec.families.clone(),
            seed: spec.seed,
        },
    )?;
    let voi = VoiFile {
        cells: synthetic
            .channel_cells()
            .into_iter()
            .map(|c| ens.grid().cell_index(c))
            .collect(),
    };
    write_json(&dir.join("channel_voi.json"), &voi)?;
    Ok(manifest_path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    })
}
