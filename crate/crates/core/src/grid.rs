//! Corner-point grids: GRDECL-subset parsing and writing, cell geometry.
//!
//! A grid hangs `(ni+1)·(nj+1)` pillar lines over the model; every cell owns
//! eight corner depths (`ZCORN`) that are interpolated along its four bounding
//! pillars. World coordinates keep the file's depth axis as `z`, so a corner
//! at depth `d` has `z == d`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("missing keyword {keyword}")]
    MissingKeyword { keyword: String },
    #[error("{keyword} at offset {offset}: expected {expected} values, found {found}")]
    ArityMismatch {
        keyword: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{keyword}: malformed number {token:?} at offset {offset}")]
    MalformedNumber {
        keyword: String,
        offset: usize,
        token: String,
    },
    #[error("{keyword} at offset {offset} is not terminated by '/'")]
    Unterminated { keyword: String, offset: usize },
    #[error("keyword {keyword} appears twice (second at offset {offset})")]
    DuplicateKeyword { keyword: String, offset: usize },
    #[error("expected a keyword at offset {offset}, found {token:?}")]
    UnexpectedToken { offset: usize, token: String },
    #[error("grid dimensions must be positive, got {ni}x{nj}x{nk}")]
    InvalidDimensions { ni: usize, nj: usize, nk: usize },
    #[error("pillar {index} has coincident top and bottom points")]
    DegeneratePillar { index: usize },
    #[error("cell ({i}, {j}, {k}) is outside the grid")]
    IndexOutOfRange { i: usize, j: usize, k: usize },
    #[error("property {name} has {found} values, expected {expected}")]
    PropertyLength {
        name: String,
        expected: usize,
        found: usize,
    },
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;

/// Zero-based `(i, j, k)` cell address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl CellIndex {
    pub fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pillar {
    pub top: Point3,
    pub bottom: Point3,
}

impl Pillar {
    /// Point on the pillar line at the given depth.
    pub fn at_depth(&self, depth: f64) -> Point3 {
        let dz = self.bottom.z - self.top.z;
        if dz.abs() < 1e-300 {
            return Point3::new(self.top.x, self.top.y, depth);
        }
        let t = (depth - self.top.z) / dz;
        let p = self.top + (self.bottom - self.top) * t;
        Point3::new(p.x, p.y, depth)
    }
}

/// Eight corners of one cell, ordered `ci + 2·cj + 4·ck` (top face first).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexCell {
    pub corners: [Point3; 8],
}

/// Corner-index quadruples `(0, a, b, 7)` of the fixed 6-tetrahedron split
/// around the `0–7` diagonal. Faces `(0, a, b)` and `(a, b, 7)` of each
/// tetrahedron lie on the cell boundary.
pub const TETRAHEDRA: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

/// Signed volume of tetrahedron `abcd`; positive for the corner ordering used
/// by [`TETRAHEDRA`] on a well-formed cell.
pub fn tet_volume(a: &Point3, b: &Point3, c: &Point3, d: &Point3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

impl HexCell {
    pub fn center(&self) -> Point3 {
        let sum = self
            .corners
            .iter()
            .fold(Vec3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / 8.0)
    }

    pub fn tetrahedra(&self) -> [[Point3; 4]; 6] {
        TETRAHEDRA.map(|t| t.map(|c| self.corners[c]))
    }

    pub fn volume(&self) -> CellVolume {
        let mut value = 0.0;
        let mut non_convex = false;
        let scale = self.extent().max(1e-300);
        for [a, b, c, d] in self.tetrahedra() {
            let v = tet_volume(&a, &b, &c, &d);
            if v < -1e-12 * scale * scale * scale {
                non_convex = true;
            }
            value += v;
        }
        if value.abs() < 1e-14 * scale * scale * scale {
            value = 0.0;
        }
        CellVolume {
            value,
            non_convex: non_convex || value < 0.0,
        }
    }

    /// Largest bounding-box side.
    pub fn extent(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).amax()
    }

    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = self.corners[0];
        let mut hi = self.corners[0];
        for p in &self.corners[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

/// Cell volume with a flag raised when part of the tetrahedral split is
/// inverted (a twisted or non-convex cell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellVolume {
    pub value: f64,
    pub non_convex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerPointGrid {
    dims: (usize, usize, usize),
    pillars: Vec<Pillar>,
    zcorn: Vec<f64>,
    active: Vec<bool>,
    properties: BTreeMap<String, Vec<f64>>,
}

impl CornerPointGrid {
    pub fn new(
        dims: (usize, usize, usize),
        pillars: Vec<Pillar>,
        zcorn: Vec<f64>,
        active: Vec<bool>,
        properties: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let (ni, nj, nk) = dims;
        if ni == 0 || nj == 0 || nk == 0 {
            return Err(GridError::InvalidDimensions { ni, nj, nk });
        }
        let cells = ni * nj * nk;
        let arity = |keyword: &str, expected, found| GridError::ArityMismatch {
            keyword: keyword.to_string(),
            offset: 0,
            expected,
            found,
        };
        if pillars.len() != (ni + 1) * (nj + 1) {
            return Err(arity("COORD", 6 * (ni + 1) * (nj + 1), 6 * pillars.len()));
        }
        if zcorn.len() != 8 * cells {
            return Err(arity("ZCORN", 8 * cells, zcorn.len()));
        }
        if active.len() != cells {
            return Err(arity("ACTNUM", cells, active.len()));
        }
        if let Some(index) = pillars.iter().position(|p| p.top == p.bottom) {
            return Err(GridError::DegeneratePillar { index });
        }
        for (name, values) in &properties {
            if values.len() != cells {
                return Err(GridError::PropertyLength {
                    name: name.clone(),
                    expected: cells,
                    found: values.len(),
                });
            }
        }
        Ok(Self {
            dims,
            pillars,
            zcorn,
            active,
            properties,
        })
    }

    /// Regular box grid with vertical pillars; `origin` is the top corner of
    /// cell `(0, 0, 0)` and depth grows with `k`.
    pub fn regular(dims: (usize, usize, usize), origin: Point3, spacing: Vec3) -> Result<Self> {
        let (ni, nj, nk) = dims;
        let depth_top = origin.z;
        let depth_bottom = origin.z + spacing.z * nk as f64;
        let mut pillars = Vec::with_capacity((ni + 1) * (nj + 1));
        for pj in 0..=nj {
            for pi in 0..=ni {
                let x = origin.x + spacing.x * pi as f64;
                let y = origin.y + spacing.y * pj as f64;
                pillars.push(Pillar {
                    top: Point3::new(x, y, depth_top),
                    bottom: Point3::new(x, y, depth_bottom),
                });
            }
        }
        let mut zcorn = vec![0.0; 8 * ni * nj * nk];
        for k in 0..nk {
            for ck in 0..2 {
                let d = origin.z + spacing.z * (k + ck) as f64;
                for j in 0..nj {
                    for cj in 0..2 {
                        for i in 0..ni {
                            for ci in 0..2 {
                                zcorn[zcorn_index(dims, i, j, k, ci, cj, ck)] = d;
                            }
                        }
                    }
                }
            }
        }
        Self::new(dims, pillars, zcorn, vec![true; ni * nj * nk], BTreeMap::new())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn cell_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn pillars(&self) -> &[Pillar] {
        &self.pillars
    }

    pub fn zcorn(&self) -> &[f64] {
        &self.zcorn
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, linear: usize) -> bool {
        self.active.get(linear).copied().unwrap_or(false)
    }

    pub fn properties(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.properties
    }

    pub fn property(&self, name: &str) -> Option<&[f64]> {
        self.properties.get(name).map(Vec::as_slice)
    }

    pub fn set_property(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.cell_count() {
            return Err(GridError::PropertyLength {
                name: name.to_string(),
                expected: self.cell_count(),
                found: values.len(),
            });
        }
        self.properties.insert(name.to_string(), values);
        Ok(())
    }

    pub fn set_active(&mut self, linear: usize, active: bool) {
        self.active[linear] = active;
    }

    pub fn contains(&self, idx: CellIndex) -> bool {
        idx.i < self.dims.0 && idx.j < self.dims.1 && idx.k < self.dims.2
    }

    pub fn linear_index(&self, idx: CellIndex) -> Result<usize> {
        if !self.contains(idx) {
            return Err(GridError::IndexOutOfRange {
                i: idx.i,
                j: idx.j,
                k: idx.k,
            });
        }
        let (ni, nj, _) = self.dims;
        Ok(idx.i + ni * (idx.j + nj * idx.k))
    }

    pub fn cell_index(&self, linear: usize) -> CellIndex {
        let (ni, nj, _) = self.dims;
        CellIndex {
            i: linear % ni,
            j: (linear / ni) % nj,
            k: linear / (ni * nj),
        }
    }

    /// Linear indices of active cells, ascending.
    pub fn active_cells(&self) -> Vec<usize> {
        (0..self.cell_count()).filter(|&c| self.active[c]).collect()
    }

    pub fn cell_corners(&self, idx: CellIndex) -> Result<HexCell> {
        self.linear_index(idx)?;
        let (ni, _, _) = self.dims;
        let corners = std::array::from_fn(|c| {
            let (ci, cj, ck) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let pillar = &self.pillars[(idx.i + ci) + (ni + 1) * (idx.j + cj)];
            pillar.at_depth(self.zcorn[zcorn_index(self.dims, idx.i, idx.j, idx.k, ci, cj, ck)])
        });
        Ok(HexCell { corners })
    }

    pub fn cell_center(&self, idx: CellIndex) -> Result<Point3> {
        Ok(self.cell_corners(idx)?.center())
    }

    pub fn cell_volume(&self, idx: CellIndex) -> Result<CellVolume> {
        Ok(self.cell_corners(idx)?.volume())
    }

    pub(crate) fn hex(&self, linear: usize) -> HexCell {
        self.cell_corners(self.cell_index(linear))
            .expect("linear index within grid")
    }
}

/// Position of a corner depth in the `ZCORN` array.
pub fn zcorn_index(
    dims: (usize, usize, usize),
    i: usize,
    j: usize,
    k: usize,
    ci: usize,
    cj: usize,
    ck: usize,
) -> usize {
    let (ni, nj, _) = dims;
    ((2 * k + ck) * 2 * nj + (2 * j + cj)) * 2 * ni + 2 * i + ci
}

// ---------------------------------------------------------------------------
// GRDECL subset

/// Section markers that carry no data.
const BARE_KEYWORDS: [&str; 4] = ["GRID", "ECHO", "NOECHO", "EDIT"];

struct Token<'a> {
    offset: usize,
    text: &'a str,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let body = match line.find("--") {
            Some(pos) => &line[..pos],
            None => line,
        };
        let mut cursor = 0;
        for word in body.split_whitespace() {
            let rel = body[cursor..].find(word).unwrap() + cursor;
            cursor = rel + word.len();
            let mut offset = line_start + rel;
            // split '/' off either end so "1 2/" and "/1" both tokenize
            let mut rest = word;
            while !rest.is_empty() {
                if let Some(stripped) = rest.strip_prefix('/') {
                    tokens.push(Token { offset, text: "/" });
                    rest = stripped;
                    offset += 1;
                    continue;
                }
                let end = rest.find('/').unwrap_or(rest.len());
                tokens.push(Token {
                    offset,
                    text: &rest[..end],
                });
                rest = &rest[end..];
                offset += end;
            }
        }
        line_start += line.len();
    }
    tokens
}

struct Record<'a> {
    offset: usize,
    data: Vec<Token<'a>>,
}

fn is_keyword(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic())
}

fn split_records(text: &str) -> Result<Vec<(String, Record<'_>)>> {
    let tokens = tokenize(text);
    let mut records: Vec<(String, Record<'_>)> = Vec::new();
    let mut iter = tokens.into_iter();
    while let Some(tok) = iter.next() {
        if !is_keyword(tok.text) {
            return Err(GridError::UnexpectedToken {
                offset: tok.offset,
                token: tok.text.to_string(),
            });
        }
        let name = tok.text.to_ascii_uppercase();
        if BARE_KEYWORDS.contains(&name.as_str()) {
            continue;
        }
        let mut data = Vec::new();
        let mut terminated = false;
        for t in iter.by_ref() {
            if t.text == "/" {
                terminated = true;
                break;
            }
            data.push(t);
        }
        if !terminated {
            return Err(GridError::Unterminated {
                keyword: name,
                offset: tok.offset,
            });
        }
        if records.iter().any(|(n, _)| *n == name) {
            return Err(GridError::DuplicateKeyword {
                keyword: name,
                offset: tok.offset,
            });
        }
        records.push((
            name,
            Record {
                offset: tok.offset,
                data,
            },
        ));
    }
    Ok(records)
}

fn parse_number(keyword: &str, tok: &Token<'_>, raw: &str) -> Result<f64> {
    let malformed = || GridError::MalformedNumber {
        keyword: keyword.to_string(),
        offset: tok.offset,
        token: tok.text.to_string(),
    };
    let v: f64 = raw.parse().map_err(|_| malformed())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed())
    }
}

/// Expands `n*v` repeats and parses every value of a record.
fn expand_numbers(keyword: &str, record: &Record<'_>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(record.data.len());
    for tok in &record.data {
        match tok.text.split_once('*') {
            Some((count, value)) => {
                let n: usize = count.parse().map_err(|_| GridError::MalformedNumber {
                    keyword: keyword.to_string(),
                    offset: tok.offset,
                    token: tok.text.to_string(),
                })?;
                if n == 0 || value.is_empty() {
                    return Err(GridError::MalformedNumber {
                        keyword: keyword.to_string(),
                        offset: tok.offset,
                        token: tok.text.to_string(),
                    });
                }
                let v = parse_number(keyword, tok, value)?;
                out.extend(std::iter::repeat_n(v, n));
            }
            None => out.push(parse_number(keyword, tok, tok.text)?),
        }
    }
    Ok(out)
}

fn check_arity(keyword: &str, record: &Record<'_>, values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(GridError::ArityMismatch {
            keyword: keyword.to_string(),
            offset: record.offset,
            expected,
            found: values.len(),
        });
    }
    Ok(())
}

fn take_record<'a>(
    records: &mut Vec<(String, Record<'a>)>,
    keyword: &str,
) -> Option<Record<'a>> {
    let pos = records.iter().position(|(n, _)| n == keyword)?;
    Some(records.remove(pos).1)
}

fn parse_specgrid(record: &Record<'_>) -> Result<(usize, usize, usize)> {
    if record.data.len() < 3 {
        return Err(GridError::ArityMismatch {
            keyword: "SPECGRID".into(),
            offset: record.offset,
            expected: 3,
            found: record.data.len(),
        });
    }
    let mut dims = [0usize; 3];
    for (slot, tok) in dims.iter_mut().zip(&record.data) {
        *slot = tok.text.parse().map_err(|_| GridError::MalformedNumber {
            keyword: "SPECGRID".into(),
            offset: tok.offset,
            token: tok.text.to_string(),
        })?;
    }
    let [ni, nj, nk] = dims;
    if ni == 0 || nj == 0 || nk == 0 {
        return Err(GridError::InvalidDimensions { ni, nj, nk });
    }
    Ok((ni, nj, nk))
}

/// Parses a GRDECL-subset grid. Keywords other than `SPECGRID`, `COORD`,
/// `ZCORN` and `ACTNUM` become per-cell properties.
pub fn parse_grid(text: &str) -> Result<CornerPointGrid> {
    let mut records = split_records(text)?;
    let missing = |k: &str| GridError::MissingKeyword {
        keyword: k.to_string(),
    };
    let spec = take_record(&mut records, "SPECGRID").ok_or_else(|| missing("SPECGRID"))?;
    let coord = take_record(&mut records, "COORD").ok_or_else(|| missing("COORD"))?;
    let zcorn = take_record(&mut records, "ZCORN").ok_or_else(|| missing("ZCORN"))?;
    let actnum = take_record(&mut records, "ACTNUM");

    let dims = parse_specgrid(&spec)?;
    let (ni, nj, nk) = dims;
    let cells = ni * nj * nk;

    let coord_values = expand_numbers("COORD", &coord)?;
    check_arity("COORD", &coord, &coord_values, 6 * (ni + 1) * (nj + 1))?;
    let pillars: Vec<Pillar> = coord_values
        .chunks_exact(6)
        .map(|c| Pillar {
            top: Point3::new(c[0], c[1], c[2]),
            bottom: Point3::new(c[3], c[4], c[5]),
        })
        .collect();

    let zcorn_values = expand_numbers("ZCORN", &zcorn)?;
    check_arity("ZCORN", &zcorn, &zcorn_values, 8 * cells)?;

    let active = match actnum {
        Some(record) => {
            let values = expand_numbers("ACTNUM", &record)?;
            check_arity("ACTNUM", &record, &values, cells)?;
            values.iter().map(|&v| v != 0.0).collect()
        }
        None => vec![true; cells],
    };

    let mut properties = BTreeMap::new();
    for (name, record) in records {
        let values = expand_numbers(&name, &record)?;
        check_arity(&name, &record, &values, cells)?;
        properties.insert(name, values);
    }

    CornerPointGrid::new(dims, pillars, zcorn_values, active, properties)
}

/// Parses a file made only of per-cell property keywords, checking each
/// against `cells` values.
pub fn parse_properties(text: &str, cells: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (name, record) in split_records(text)? {
        let values = expand_numbers(&name, &record)?;
        check_arity(&name, &record, &values, cells)?;
        out.insert(name, values);
    }
    Ok(out)
}

const VALUES_PER_LINE: usize = 8;

fn write_values(out: &mut String, values: &[f64]) {
    let mut on_line = 0;
    let mut i = 0;
    while i < values.len() {
        let v = values[i];
        let mut run = 1;
        while i + run < values.len() && values[i + run].to_bits() == v.to_bits() {
            run += 1;
        }
        if on_line == VALUES_PER_LINE {
            out.push('\n');
            on_line = 0;
        }
        out.push(' ');
        if run > 1 {
            let _ = write!(out, "{run}*{v}");
        } else {
            let _ = write!(out, "{v}");
        }
        on_line += 1;
        i += run;
    }
    out.push_str("\n/\n");
}

/// Writes one property keyword block.
pub fn write_property(out: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(out, "{name}");
    write_values(out, values);
}

pub fn write_grid(grid: &CornerPointGrid) -> String {
    let (ni, nj, nk) = grid.dims;
    let mut out = String::new();
    let _ = writeln!(out, "SPECGRID\n {ni} {nj} {nk} 1 F /\n");
    out.push_str("COORD\n");
    for p in &grid.pillars {
        let _ = writeln!(
            out,
            " {} {} {} {} {} {}",
            p.top.x, p.top.y, p.top.z, p.bottom.x, p.bottom.y, p.bottom.z
        );
    }
    out.push_str("/\n\nZCORN\n");
    write_values(&mut out, &grid.zcorn);
    if grid.active.iter().any(|a| !a) {
        out.push_str("\nACTNUM\n");
        let flags: Vec<f64> = grid
            .active
            .iter()
            .map(|&a| if a { 1.0 } else { 0.0 })
            .collect();
        write_values(&mut out, &flags);
    }
    for (name, values) in &grid.properties {
        out.push('\n');
        write_property(&mut out, name, values);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const UNIT_CUBE: &str = "SPECGRID\n1 1 1 1 F /\nCOORD\n\
        0 0 0 0 0 1\n1 0 0 1 0 1\n0 1 0 0 1 1\n1 1 0 1 1 1 /\n\
        ZCORN\n4*0 4*1 /\n";

    #[test]
    fn unit_cube_corners_are_cube_vertices() {
        let grid = parse_grid(UNIT_CUBE).unwrap();
        assert_eq!(grid.dims(), (1, 1, 1));
        assert!(grid.is_active(0));
        let hex = grid.cell_corners(CellIndex::new(0, 0, 0)).unwrap();
        for (c, p) in hex.corners.iter().enumerate() {
            let expected = Point3::new((c & 1) as f64, ((c >> 1) & 1) as f64, (c >> 2) as f64);
            assert_eq!(*p, expected, "corner {c}");
        }
        let center = grid.cell_center(CellIndex::new(0, 0, 0)).unwrap();
        assert_eq!(center, Point3::new(0.5, 0.5, 0.5));
        let vol = grid.cell_volume(CellIndex::new(0, 0, 0)).unwrap();
        assert!((vol.value - 1.0).abs() < 1e-15);
        assert!(!vol.non_convex);
    }

    #[test]
    fn every_tetrahedron_is_positive_on_the_unit_cube() {
        let grid = parse_grid(UNIT_CUBE).unwrap();
        let hex = grid.cell_corners(CellIndex::new(0, 0, 0)).unwrap();
        for [a, b, c, d] in hex.tetrahedra() {
            assert!((tet_volume(&a, &b, &c, &d) - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn short_zcorn_is_arity_mismatch() {
        let text = UNIT_CUBE.replace("4*0 4*1", "3*0 4*1");
        match parse_grid(&text) {
            Err(GridError::ArityMismatch {
                keyword,
                expected,
                found,
                ..
            }) => {
                assert_eq!(keyword, "ZCORN");
                assert_eq!(expected, 8);
                assert_eq!(found, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn named_errors() {
        let no_coord = "SPECGRID\n1 1 1 /\nZCORN\n8*0 /\n";
        assert_eq!(
            parse_grid(no_coord),
            Err(GridError::MissingKeyword {
                keyword: "COORD".into()
            })
        );
        let bad = UNIT_CUBE.replace("4*1", "4*1x");
        assert!(matches!(
            parse_grid(&bad),
            Err(GridError::MalformedNumber { keyword, token, .. }) if keyword == "ZCORN" && token == "4*1x"
        ));
        let unterminated = UNIT_CUBE.trim_end().trim_end_matches('/');
        assert!(matches!(
            parse_grid(unterminated),
            Err(GridError::Unterminated { keyword, .. }) if keyword == "ZCORN"
        ));
        let zero_repeat = UNIT_CUBE.replace("4*0", "0*0 4*0");
        assert!(matches!(
            parse_grid(&zero_repeat),
            Err(GridError::MalformedNumber { .. })
        ));
    }

    #[test]
    fn error_offsets_point_at_the_token() {
        let text = UNIT_CUBE.replace("4*1", "4*q");
        let Err(GridError::MalformedNumber { offset, .. }) = parse_grid(&text) else {
            panic!("expected malformed number");
        };
        assert_eq!(&text[offset..offset + 3], "4*q");
    }

    #[test]
    fn comments_and_attached_slashes() {
        let text = "-- header\nSPECGRID -- dims\n 1 1 1 1 F/\nCOORD\n\
            0 0 0 0 0 1 1 0 0 1 0 1 0 1 0 0 1 1 1 1 0 1 1 1/\nZCORN 4*0 4*1/\n\
            ACTNUM 0 /\nPORO 0.25/";
        let grid = parse_grid(text).unwrap();
        assert!(!grid.is_active(0));
        assert_eq!(grid.property("PORO"), Some(&[0.25][..]));
    }

    #[test]
    fn vertical_pillar_depth_is_exact() {
        let pillar = Pillar {
            top: Point3::new(3.0, 4.0, 10.0),
            bottom: Point3::new(3.0, 4.0, 20.0),
        };
        let p = pillar.at_depth(13.7);
        assert_eq!(p, Point3::new(3.0, 4.0, 13.7));
    }

    #[test]
    fn slanted_pillar_matches_line_interpolation() {
        let pillar = Pillar {
            top: Point3::new(0.0, 0.0, 0.0),
            bottom: Point3::new(2.0, -1.0, 4.0),
        };
        // depth 1 is a quarter of the way down
        let p = pillar.at_depth(1.0);
        assert!((p.x - 0.5).abs() < 1e-15);
        assert!((p.y + 0.25).abs() < 1e-15);
        assert_eq!(p.z, 1.0);
    }

    #[test]
    fn out_of_range_index() {
        let grid = parse_grid(UNIT_CUBE).unwrap();
        assert_eq!(
            grid.cell_corners(CellIndex::new(1, 0, 0)),
            Err(GridError::IndexOutOfRange { i: 1, j: 0, k: 0 })
        );
    }

    #[test]
    fn scaled_cube_has_volume_eight() {
        let grid =
            CornerPointGrid::regular((1, 1, 1), Point3::origin(), Vec3::new(2.0, 2.0, 2.0)).unwrap();
        let v = grid.cell_volume(CellIndex::new(0, 0, 0)).unwrap();
        assert!((v.value - 8.0).abs() < 1e-14);
    }

    #[test]
    fn pinched_cell_has_zero_volume() {
        let text = UNIT_CUBE.replace("4*0 4*1", "8*0.5");
        let grid = parse_grid(&text).unwrap();
        let v = grid.cell_volume(CellIndex::new(0, 0, 0)).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn inverted_cell_raises_warning() {
        let text = UNIT_CUBE.replace("4*0 4*1", "4*1 4*0");
        let grid = parse_grid(&text).unwrap();
        let v = grid.cell_volume(CellIndex::new(0, 0, 0)).unwrap();
        assert!(v.non_convex);
        assert!(v.value < 0.0);
    }

    #[test]
    fn write_emits_actnum_only_when_needed() {
        let mut grid = parse_grid(UNIT_CUBE).unwrap();
        assert!(!write_grid(&grid).contains("ACTNUM"));
        grid.set_active(0, false);
        let text = write_grid(&grid);
        assert!(text.contains("ACTNUM"));
        assert_eq!(parse_grid(&text).unwrap(), grid);
    }
}
