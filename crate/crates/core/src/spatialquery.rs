//! Volume-of-interest selection and the cutaway lens.
//!
//! The lens is a view frustum anchored at the viewer. Non-VOI cells wholly
//! inside it are culled; cells crossing its boundary are clipped exactly and
//! keep the material outside the frustum, with the exposed cut faces ("caps")
//! carrying the normal of the frustum plane that produced them.
//!
//! Clipping works on the cell's fixed six-tetrahedron split, so twisted
//! corner-point cells go through the same convex routine as regular ones.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Quaternion, UnitQuaternion};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    area_vector, enclosed_volume, planar_hull, ray_triangle, split_polygon, Plane, Point3, Vec3,
};
use crate::grid::{CellIndex, CornerPointGrid, GridError, HexCell, TETRAHEDRA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("cell ({}, {}, {}) is inactive", .0.i, .0.j, .0.k)]
    InactiveCell(CellIndex),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid lens: {0}")]
    InvalidLens(String),
}

pub type Result<T, E = QueryError> = std::result::Result<T, E>;

// ---------------------------------------------------------------------------
// VOI

/// Set of active cells (linear indices) with a revision counter bumped on
/// every change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiSelection {
    cells: BTreeSet<usize>,
    revision: u64,
}

impl VoiSelection {
    pub fn from_linear(grid: &CornerPointGrid, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for c in cells {
            let idx = grid.cell_index(c);
            if c >= grid.cell_count() {
                return Err(GridError::IndexOutOfRange {
                    i: idx.i,
                    j: idx.j,
                    k: idx.k,
                }
                .into());
            }
            if !grid.is_active(c) {
                return Err(QueryError::InactiveCell(idx));
            }
            set.insert(c);
        }
        Ok(Self {
            cells: set,
            revision: 0,
        })
    }

    pub fn from_cells(grid: &CornerPointGrid, cells: &[CellIndex]) -> Result<Self> {
        let linear = cells
            .iter()
            .map(|&c| grid.linear_index(c))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_linear(grid, linear)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, linear: usize) -> bool {
        self.cells.contains(&linear)
    }

    /// Linear indices, ascending.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().copied()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn with_revision(mut self, revision: u64) -> Self {
        self.revision = revision;
        self
    }

    pub fn cell_indices(&self, grid: &CornerPointGrid) -> Vec<CellIndex> {
        self.iter().map(|c| grid.cell_index(c)).collect()
    }

    /// Short content hash of the cell set (hex).
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.cells {
            h.update((*c as u64).to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Flips membership of one active cell.
pub fn toggle_cell(voi: &VoiSelection, grid: &CornerPointGrid, idx: CellIndex) -> Result<VoiSelection> {
    let linear = grid.linear_index(idx)?;
    if !grid.is_active(linear) {
        return Err(QueryError::InactiveCell(idx));
    }
    let mut next = voi.clone();
    if !next.cells.remove(&linear) {
        next.cells.insert(linear);
    }
    next.revision += 1;
    Ok(next)
}

/// World-axis-aligned box spanned by an anchor and a free corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionVolume {
    pub anchor: Point3,
    pub free: Point3,
}

impl SelectionVolume {
    pub fn new(anchor: Point3, free: Point3) -> Self {
        Self { anchor, free }
    }

    pub fn min(&self) -> Point3 {
        self.anchor.inf(&self.free)
    }

    pub fn max(&self) -> Point3 {
        self.anchor.sup(&self.free)
    }

    pub fn is_degenerate(&self) -> bool {
        (self.max() - self.min()).min() <= 0.0
    }

    /// Inclusive containment; a degenerate box contains nothing.
    pub fn contains(&self, p: &Point3) -> bool {
        if self.is_degenerate() {
            return false;
        }
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// The eight corners, where the grab handles sit.
    pub fn handles(&self) -> [Point3; 8] {
        let (lo, hi) = (self.min(), self.max());
        std::array::from_fn(|c| {
            Point3::new(
                if c & 1 == 0 { lo.x } else { hi.x },
                if c & 2 == 0 { lo.y } else { hi.y },
                if c & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }
}

/// Active cells whose center lies in the volume.
pub fn cells_in_volume(grid: &CornerPointGrid, vol: &SelectionVolume) -> BTreeSet<usize> {
    if vol.is_degenerate() {
        return BTreeSet::new();
    }
    grid.active_cells()
        .into_iter()
        .filter(|&c| vol.contains(&grid.hex(c).center()))
        .collect()
}

// ---------------------------------------------------------------------------
// Lens

/// Wire form of a lens; orientation is `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensParams {
    pub apex: [f64; 3],
    pub orientation: [f64; 4],
    pub near: f64,
    pub far: f64,
    pub half_horizontal: f64,
    pub half_vertical: f64,
}

/// View frustum looking down its local −Z axis (+X right, +Y up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LensParams", into = "LensParams")]
pub struct FrustumLens {
    apex: Point3,
    orientation: UnitQuaternion<f64>,
    near: f64,
    far: f64,
    half_horizontal: f64,
    half_vertical: f64,
    planes: [Plane; 6],
}

/// Quaternions further than this from unit norm are rejected; closer ones
/// are renormalized.
const QUATERNION_TOL: f64 = 1e-6;

impl TryFrom<LensParams> for FrustumLens {
    type Error = QueryError;

    fn try_from(p: LensParams) -> Result<Self> {
        let [w, x, y, z] = p.orientation;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > QUATERNION_TOL {
            return Err(QueryError::InvalidLens(format!(
                "orientation norm {} is not 1",
                q.norm()
            )));
        }
        FrustumLens::new(
            Point3::from(p.apex),
            UnitQuaternion::from_quaternion(q),
            p.near,
            p.far,
            p.half_horizontal,
            p.half_vertical,
        )
    }
}

impl From<FrustumLens> for LensParams {
    fn from(l: FrustumLens) -> Self {
        let q = l.orientation.quaternion();
        LensParams {
            apex: l.apex.into(),
            orientation: [q.w, q.i, q.j, q.k],
            near: l.near,
            far: l.far,
            half_horizontal: l.half_horizontal,
            half_vertical: l.half_vertical,
        }
    }
}

impl FrustumLens {
    pub fn new(
        apex: Point3,
        orientation: UnitQuaternion<f64>,
        near: f64,
        far: f64,
        half_horizontal: f64,
        half_vertical: f64,
    ) -> Result<Self> {
        let all_finite = apex.iter().all(|v| v.is_finite())
            && [near, far, half_horizontal, half_vertical]
                .iter()
                .all(|v| v.is_finite());
        if !all_finite {
            return Err(QueryError::InvalidLens("non-finite parameter".into()));
        }
        if !(near > 0.0 && near < far) {
            return Err(QueryError::InvalidLens(format!(
                "need 0 < near < far, got near={near} far={far}"
            )));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        for h in [half_horizontal, half_vertical] {
            if !(h > 0.0 && h < half_pi) {
                return Err(QueryError::InvalidLens(format!(
                    "half-angle {h} outside (0, pi/2)"
                )));
            }
        }
        let forward = orientation * -Vec3::z();
        let right = orientation * Vec3::x();
        let up = orientation * Vec3::y();
        let (sh, ch) = half_horizontal.sin_cos();
        let (sv, cv) = half_vertical.sin_cos();
        let planes = [
            Plane::through(&(apex + forward * near), forward),
            Plane::through(&(apex + forward * far), -forward),
            Plane::through(&apex, right * ch + forward * sh),
            Plane::through(&apex, -right * ch + forward * sh),
            Plane::through(&apex, up * cv + forward * sv),
            Plane::through(&apex, -up * cv + forward * sv),
        ];
        Ok(Self {
            apex,
            orientation,
            near,
            far,
            half_horizontal,
            half_vertical,
            planes,
        })
    }

    /// Lens at `apex` looking along `forward`, with `up` fixing the roll.
    pub fn looking(
        apex: Point3,
        forward: Vec3,
        up: Vec3,
        near: f64,
        far: f64,
        half_horizontal: f64,
        half_vertical: f64,
    ) -> Result<Self> {
        let orientation = UnitQuaternion::face_towards(&-forward, &up);
        Self::new(apex, orientation, near, far, half_horizontal, half_vertical)
    }

    pub fn apex(&self) -> Point3 {
        self.apex
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.orientation
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn half_angles(&self) -> (f64, f64) {
        (self.half_horizontal, self.half_vertical)
    }

    pub fn forward(&self) -> Vec3 {
        self.orientation * -Vec3::z()
    }

    /// Inward-facing planes: near, far, then the four sides.
    pub fn planes(&self) -> &[Plane; 6] {
        &self.planes
    }
}

/// Smallest inward signed distance to the six planes: positive strictly
/// inside the frustum, non-positive elsewhere.
pub fn signed_distance(point: &Point3, lens: &FrustumLens) -> f64 {
    lens.planes
        .iter()
        .map(|p| p.signed_distance(point))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Retained,
    Culled,
    Clipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceKind {
    Original,
    Cap,
}

/// Polygon of a clipped cell's surface, wound counter-clockwise seen from
/// outside the retained material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub vertices: Vec<Point3>,
    pub kind: FaceKind,
    /// Outward normal for original faces; the generating frustum plane's
    /// normal for caps.
    pub normal: Vec3,
    /// Index into [`FrustumLens::planes`] for caps.
    pub plane: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippedCell {
    pub faces: Vec<Face>,
    pub cell_volume: f64,
    pub retained_volume: f64,
    pub removed_volume: f64,
    /// Zero-volume input; `faces` is empty.
    pub degenerate: bool,
}

impl ClippedCell {
    pub fn caps(&self) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(|f| f.kind == FaceKind::Cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tag {
    Boundary,
    Internal,
    Cap(usize),
}

#[derive(Debug, Clone)]
struct PolyFace {
    verts: Vec<Point3>,
    tag: Tag,
}

/// Outward-wound faces of tetrahedron `(v0, v1, v2, v3)` assuming positive
/// orientation: the two boundary faces of a cell tetrahedron come first.
fn tet_faces(v: [Point3; 4]) -> Vec<PolyFace> {
    vec![
        PolyFace {
            verts: vec![v[0], v[2], v[1]],
            tag: Tag::Boundary,
        },
        PolyFace {
            verts: vec![v[1], v[2], v[3]],
            tag: Tag::Boundary,
        },
        PolyFace {
            verts: vec![v[0], v[1], v[3]],
            tag: Tag::Internal,
        },
        PolyFace {
            verts: vec![v[0], v[3], v[2]],
            tag: Tag::Internal,
        },
    ]
}

/// Keeps the part of a convex polyhedron on the inside of `plane`, closing
/// it with a cap. `winding` is −1 for inverted (negative-volume) input.
fn clip_inside(faces: Vec<PolyFace>, plane: &Plane, index: usize, winding: f64, tol: f64) -> Vec<PolyFace> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut on_plane = Vec::new();
    for f in faces {
        let (inside, _) = split_polygon(&f.verts, plane);
        if inside.is_empty() {
            continue;
        }
        on_plane.extend(
            inside
                .iter()
                .filter(|p| plane.signed_distance(p).abs() <= tol)
                .copied(),
        );
        out.push(PolyFace {
            verts: inside,
            tag: f.tag,
        });
    }
    if out.is_empty() {
        return out;
    }
    let cap = planar_hull(&on_plane, &(-plane.normal * winding));
    if cap.len() >= 3 && area_vector(&cap).norm() > tol * tol {
        out.push(PolyFace {
            verts: cap,
            tag: Tag::Cap(index),
        });
    }
    out
}

fn face_volume(faces: &[PolyFace]) -> f64 {
    enclosed_volume(faces.iter().map(|f| f.verts.as_slice()))
}

/// Clips one cell against the lens, keeping the material outside it.
pub fn clip_cell(cell: &HexCell, lens: &FrustumLens) -> ClippedCell {
    let volume = cell.volume();
    let scale = cell.extent().max(1.0);
    let tol = 1e-9 * scale;
    if volume.value.abs() <= 1e-14 * scale.powi(3) {
        return ClippedCell {
            faces: Vec::new(),
            cell_volume: 0.0,
            retained_volume: 0.0,
            removed_volume: 0.0,
            degenerate: true,
        };
    }
    let planes = lens.planes();
    let mut faces = Vec::new();
    let mut removed_volume = 0.0;
    let mut caps: BTreeMap<usize, Vec<Vec<Point3>>> = BTreeMap::new();

    for (t, corners) in TETRAHEDRA.iter().enumerate() {
        let verts = corners.map(|c| cell.corners[c]);
        let tet = tet_faces(verts);
        let signed = crate::grid::tet_volume(&verts[0], &verts[1], &verts[2], &verts[3]);
        if signed == 0.0 {
            continue;
        }
        let winding = signed.signum();

        // surface outside the frustum: successive split of the boundary faces
        for f in tet.iter().filter(|f| f.tag == Tag::Boundary) {
            let mut rest = f.verts.clone();
            for plane in planes {
                let (inside, outside) = split_polygon(&rest, plane);
                if !outside.is_empty() {
                    let normal = area_vector(&outside).normalize() * winding;
                    faces.push(Face {
                        vertices: outside,
                        kind: FaceKind::Original,
                        normal,
                        plane: None,
                    });
                }
                rest = inside;
                if rest.is_empty() {
                    break;
                }
            }
        }

        // material inside the frustum
        let mut piece = tet;
        for (i, plane) in planes.iter().enumerate() {
            piece = clip_inside(piece, plane, i, winding, tol);
            if piece.is_empty() {
                break;
            }
        }
        removed_volume += face_volume(&piece);
        for f in piece {
            if let Tag::Cap(i) = f.tag {
                // reversed: outward for the retained material
                let mut v = f.verts;
                v.reverse();
                caps.entry(i).or_default().push(v);
            }
        }
        let _ = t;
    }

    for (i, pieces) in caps {
        let normal = planes[i].normal;
        let total: f64 = pieces.iter().map(|p| area_vector(p).dot(&normal)).sum();
        let all: Vec<Point3> = pieces.iter().flatten().copied().collect();
        let hull = planar_hull(&all, &normal);
        let hull_area = area_vector(&hull).dot(&normal);
        let merged = total > 0.0 && (hull_area - total).abs() <= 1e-9 * hull_area.max(1e-300);
        let polygons = if merged { vec![hull] } else { pieces };
        for vertices in polygons {
            faces.push(Face {
                vertices,
                kind: FaceKind::Cap,
                normal,
                plane: Some(i),
            });
        }
    }

    let retained_volume = enclosed_volume(faces.iter().map(|f| f.vertices.as_slice()));
    ClippedCell {
        faces,
        cell_volume: volume.value,
        retained_volume,
        removed_volume,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutResult {
    /// Active cells, ascending linear index.
    pub cells: Vec<usize>,
    pub statuses: Vec<CellStatus>,
    pub clipped: BTreeMap<usize, ClippedCell>,
}

impl CutResult {
    pub fn empty() -> Self {
        Self {
            cells: Vec::new(),
            statuses: Vec::new(),
            clipped: BTreeMap::new(),
        }
    }

    /// Status of a cell; cells the result does not mention are retained.
    pub fn status(&self, linear: usize) -> CellStatus {
        match self.cells.binary_search(&linear) {
            Ok(pos) => self.statuses[pos],
            Err(_) => CellStatus::Retained,
        }
    }

    pub fn count(&self, status: CellStatus) -> usize {
        self.statuses.iter().filter(|&&s| s == status).count()
    }
}

fn classify_one(hex: &HexCell, lens: &FrustumLens) -> (CellStatus, Option<ClippedCell>) {
    let inside: Vec<bool> = hex
        .corners
        .iter()
        .map(|c| signed_distance(c, lens) > 0.0)
        .collect();
    if inside.iter().all(|&b| b) {
        return (CellStatus::Culled, None);
    }
    if inside.iter().any(|&b| b) {
        return (CellStatus::Clipped, Some(clip_cell(hex, lens)));
    }
    // no corner inside: a plane with every corner behind it separates them
    let separated = lens.planes().iter().any(|p| {
        hex.corners.iter().all(|c| p.signed_distance(c) <= 0.0)
    });
    if separated {
        return (CellStatus::Retained, None);
    }
    // the frustum may still poke through a face
    let clipped = clip_cell(hex, lens);
    if clipped.removed_volume > 1e-12 * clipped.cell_volume.abs() {
        (CellStatus::Clipped, Some(clipped))
    } else {
        (CellStatus::Retained, None)
    }
}

/// Classifies every active cell against the lens. VOI cells are always
/// retained.
pub fn classify_cells(grid: &CornerPointGrid, voi: &VoiSelection, lens: &FrustumLens) -> CutResult {
    let cells = grid.active_cells();
    let results: Vec<(CellStatus, Option<ClippedCell>)> = cells
        .par_iter()
        .map(|&c| {
            if voi.contains(c) {
                (CellStatus::Retained, None)
            } else {
                classify_one(&grid.hex(c), lens)
            }
        })
        .collect();
    let mut statuses = Vec::with_capacity(cells.len());
    let mut clipped = BTreeMap::new();
    for (&c, (status, clip)) in cells.iter().zip(results) {
        statuses.push(status);
        if let Some(clip) = clip {
            clipped.insert(c, clip);
        }
    }
    CutResult {
        cells,
        statuses,
        clipped,
    }
}

// ---------------------------------------------------------------------------
// Picking

/// Whether `p` lies in the cell's tetrahedral split.
pub fn point_in_cell(hex: &HexCell, p: &Point3) -> bool {
    hex.tetrahedra().iter().any(|t| point_in_tet(t, p))
}

fn point_in_tet(t: &[Point3; 4], p: &Point3) -> bool {
    let vol = crate::grid::tet_volume(&t[0], &t[1], &t[2], &t[3]);
    if vol == 0.0 {
        return false;
    }
    let sub = [
        crate::grid::tet_volume(p, &t[1], &t[2], &t[3]),
        crate::grid::tet_volume(&t[0], p, &t[2], &t[3]),
        crate::grid::tet_volume(&t[0], &t[1], p, &t[3]),
        crate::grid::tet_volume(&t[0], &t[1], &t[2], p),
    ];
    sub.iter().all(|s| s * vol.signum() >= -1e-15 * vol.abs())
}

fn boundary_triangles(hex: &HexCell) -> Vec<[Point3; 3]> {
    let mut tris = Vec::with_capacity(12);
    for [a, b, c, d] in TETRAHEDRA {
        let v = hex.corners;
        tris.push([v[a], v[c], v[b]]);
        tris.push([v[b], v[c], v[d]]);
    }
    tris
}

fn nearest_hit<'a>(origin: &Point3, dir: &Vec3, polys: impl Iterator<Item = &'a [Point3]>) -> Option<f64> {
    let mut best: Option<f64> = None;
    for poly in polys {
        for w in poly[1..].windows(2) {
            if let Some(t) = ray_triangle(origin, dir, [&poly[0], &w[0], &w[1]]) {
                if t >= 0.0 && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
        }
    }
    best
}

/// Ray entry distance into one cell given its cut status.
fn entry_distance(
    hex: &HexCell,
    status: CellStatus,
    clipped: Option<&ClippedCell>,
    origin: &Point3,
    dir: &Vec3,
    lens_inside: impl Fn(&Point3) -> bool,
) -> Option<f64> {
    match (status, clipped) {
        (CellStatus::Culled, _) => None,
        (CellStatus::Clipped, Some(clip)) => {
            if point_in_cell(hex, origin) && !lens_inside(origin) {
                return Some(0.0);
            }
            nearest_hit(origin, dir, clip.faces.iter().map(|f| f.vertices.as_slice()))
        }
        _ => {
            if point_in_cell(hex, origin) {
                return Some(0.0);
            }
            let tris = boundary_triangles(hex);
            nearest_hit(origin, dir, tris.iter().map(|t| t.as_slice()))
        }
    }
}

/// Nearest active cell hit by the ray. Culled cells are transparent; clipped
/// cells are hit on their retained surface.
pub fn pick_cell(
    grid: &CornerPointGrid,
    origin: &Point3,
    dir: &Vec3,
    cut: Option<(&CutResult, &FrustumLens)>,
) -> Option<CellIndex> {
    if dir.norm() == 0.0 {
        return None;
    }
    let mut best: Option<(f64, usize)> = None;
    for c in grid.active_cells() {
        let hex = grid.hex(c);
        let (status, clipped) = match cut {
            Some((cut, _)) => (cut.status(c), cut.clipped.get(&c)),
            None => (CellStatus::Retained, None),
        };
        let inside = |p: &Point3| cut.is_some_and(|(_, lens)| signed_distance(p, lens) > 0.0);
        if let Some(t) = entry_distance(&hex, status, clipped, origin, dir, inside) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, c));
            }
        }
    }
    best.map(|(_, c)| grid.cell_index(c))
}
