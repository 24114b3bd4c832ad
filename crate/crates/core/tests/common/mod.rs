//! Independent oracles shared by the integration tests. None of these call
//! into the code under test beyond plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use repsel_core::geometry::{Point3, Vec3};
use repsel_core::grid::{CornerPointGrid, Pillar};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Mutual information by direct summation over sample pairs.
pub fn brute_force_mi(a: &[f64], b: &[f64], bins: usize) -> (f64, f64, f64) {
    let bin = |xs: &[f64]| -> Vec<usize> {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        xs.iter()
            .map(|&x| {
                if hi > lo {
                    let k = ((x - lo) / (hi - lo) * bins as f64).floor() as usize;
                    k.min(bins - 1)
                } else {
                    0
                }
            })
            .collect()
    };
    let (ba, bb) = (bin(a), bin(b));
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in ba.iter().zip(&bb) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    let mut keys: Vec<_> = joint.keys().copied().collect();
    keys.sort();
    let mi = keys
        .iter()
        .map(|k| {
            let p = joint[k];
            p * (p / (pa[&k.0] * pb[&k.1])).ln()
        })
        .sum::<f64>();
    let h = |m: &HashMap<usize, f64>| {
        let mut ks: Vec<_> = m.keys().copied().collect();
        ks.sort();
        ks.iter().map(|k| -m[k] * m[k].ln()).sum::<f64>()
    };
    (mi, h(&pa), h(&pb))
}

/// Kernel k-means objective from its closed form per cluster:
/// `Σ_c [Σ_{i∈c} K_ii − (1/|c|) Σ_{i,j∈c} K_ij]`.
pub fn objective_oracle(k: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for c in 0..clusters {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let diag: f64 = members.iter().map(|&i| k[(i, i)]).sum();
        let block: f64 = members
            .iter()
            .flat_map(|&i| members.iter().map(move |&j| (i, j)))
            .map(|(i, j)| k[(i, j)])
            .sum();
        total += diag - block / members.len() as f64;
    }
    total
}

/// Minimum objective over every split of `n` nodes into two nonempty groups.
pub fn exhaustive_bipartition(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let mut best = f64::INFINITY;
    // node 0 fixed in group 0 to skip mirrored labelings
    for mask in 0u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n)
            .map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize })
            .collect();
        if labels.iter().all(|&l| l == 0) {
            continue;
        }
        best = best.min(objective_oracle(k, &labels));
    }
    best
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            ]
        })
        .collect()
}

pub fn pairwise(points: &[[f64; 3]]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |a, b| {
        let (p, q) = (points[a], points[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    })
}

/// Parametric entry of a ray into a convex polyhedron given by outward
/// face planes `(normal, point)` (Cyrus–Beck). `None` on a miss.
pub fn cyrus_beck(origin: &Point3, dir: &Vec3, planes: &[(Vec3, Point3)]) -> Option<f64> {
    let (mut t_in, mut t_out) = (0.0f64, f64::INFINITY);
    for (n, p) in planes {
        let denom = n.dot(dir);
        let num = n.dot(&(p - origin));
        if denom.abs() < 1e-15 {
            if num < 0.0 {
                return None;
            }
            continue;
        }
        let t = num / denom;
        if denom < 0.0 {
            t_in = t_in.max(t);
        } else {
            t_out = t_out.min(t);
        }
        if t_in > t_out {
            return None;
        }
    }
    Some(t_in)
}

/// Outward face planes of a positively oriented tetrahedron.
pub fn tet_planes(t: &[Point3; 4]) -> Vec<(Vec3, Point3)> {
    let faces = [(0, 2, 1, 3), (0, 1, 3, 2), (0, 3, 2, 1), (1, 2, 3, 0)];
    faces
        .iter()
        .map(|&(a, b, c, opp)| {
            let mut n = (t[b] - t[a]).cross(&(t[c] - t[a]));
            if n.dot(&(t[opp] - t[a])) > 0.0 {
                n = -n;
            }
            (n, t[a])
        })
        .collect()
}

/// Inverts the trilinear map of a hexahedron by Newton iteration and reports
/// whether the local coordinates land in the unit cube.
pub fn inside_trilinear(corners: &[Point3; 8], p: &Point3) -> bool {
    let map = |u: f64, v: f64, w: f64| -> (Point3, [Vec3; 3]) {
        let mut x = Vec3::zeros();
        let mut d = [Vec3::zeros(); 3];
        for (c, q) in corners.iter().enumerate() {
            let (ci, cj, ck) = ((c & 1) as f64, ((c >> 1) & 1) as f64, (c >> 2) as f64);
            let fu = if ci == 1.0 { u } else { 1.0 - u };
            let fv = if cj == 1.0 { v } else { 1.0 - v };
            let fw = if ck == 1.0 { w } else { 1.0 - w };
            let su = if ci == 1.0 { 1.0 } else { -1.0 };
            let sv = if cj == 1.0 { 1.0 } else { -1.0 };
            let sw = if ck == 1.0 { 1.0 } else { -1.0 };
            x += q.coords * fu * fv * fw;
            d[0] += q.coords * su * fv * fw;
            d[1] += q.coords * fu * sv * fw;
            d[2] += q.coords * fu * fv * sw;
        }
        (Point3::from(x), d)
    };
    let mut uvw = Vec3::new(0.5, 0.5, 0.5);
    for _ in 0..50 {
        let (x, d) = map(uvw.x, uvw.y, uvw.z);
        let j = nalgebra::Matrix3::from_columns(&d);
        let Some(inv) = j.try_inverse() else {
            return false;
        };
        let step = inv * (p - x);
        uvw += step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    uvw.iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c))
}

/// Random grid with slanted pillars, jittered depths, some inactive cells and
/// one or two properties.
pub fn random_grid(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> CornerPointGrid {
    let (ni, nj, nk) = dims;
    let mut pillars = Vec::new();
    for pj in 0..=nj {
        for pi in 0..=ni {
            let x = pi as f64 * 10.0 + rng.random_range(-2.0..2.0);
            let y = pj as f64 * 10.0 + rng.random_range(-2.0..2.0);
            let top = Point3::new(x, y, rng.random_range(0.0..5.0));
            let bottom = Point3::new(
                x + rng.random_range(-3.0..3.0),
                y + rng.random_range(-3.0..3.0),
                200.0 + rng.random_range(0.0..5.0),
            );
            pillars.push(Pillar { top, bottom });
        }
    }
    let cells = ni * nj * nk;
    let mut zcorn = vec![0.0; 8 * cells];
    for k in 0..nk {
        for ck in 0..2 {
            for j in 0..nj {
                for cj in 0..2 {
                    for i in 0..ni {
                        for ci in 0..2 {
                            let base = 1000.0 + 10.0 * (k + ck) as f64;
                            let idx = ((2 * k + ck) * 2 * nj + 2 * j + cj) * 2 * ni + 2 * i + ci;
                            zcorn[idx] = base + rng.random_range(-1.0..1.0);
                        }
                    }
                }
            }
        }
    }
    let active: Vec<bool> = (0..cells).map(|_| rng.random_bool(0.85)).collect();
    let mut props = BTreeMap::new();
    props.insert("PORO".to_string(), (0..cells).map(|_| rng.random_range(0.0..0.35)).collect());
    if rng.random_bool(0.5) {
        // runs exercise the n*v shorthand
        let v = rng.random_range(1.0..500.0);
        props.insert("PERMX".to_string(), (0..cells).map(|c| if c % 3 == 0 { 7.5 } else { v }).collect());
    }
    CornerPointGrid::new(dims, pillars, zcorn, active, props).unwrap()
}

/// Writes a grid in a layout unlike the crate's writer: scientific notation
/// at 15 digits, one value per line, comments sprinkled in, no runs.
pub fn alt_format(grid: &CornerPointGrid) -> String {
    let (ni, nj, nk) = grid.dims();
    let mut out = String::from("-- alternate layout\nGRID\n");
    let _ = writeln!(out, "SPECGRID\n{ni} {nj} {nk} 1 F\n/");
    out.push_str("COORD -- pillars\n");
    for p in grid.pillars() {
        for v in [p.top.x, p.top.y, p.top.z, p.bottom.x, p.bottom.y, p.bottom.z] {
            let _ = writeln!(out, "{v:.14e}");
        }
    }
    out.push_str("/\nZCORN\n");
    for v in grid.zcorn() {
        let _ = writeln!(out, "{v:.14e}");
    }
    out.push_str("/\nACTNUM\n");
    for a in grid.active() {
        let _ = write!(out, "{} ", u8::from(*a));
    }
    out.push_str("/\n");
    for (name, values) in grid.properties() {
        let _ = writeln!(out, "{name}");
        for v in values {
            let _ = writeln!(out, "  {v:.14e}  -- value");
        }
        out.push_str("/\n");
    }
    out
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Numeric equality of two grids within `tol` (relative above 1).
pub fn grids_match(a: &CornerPointGrid, b: &CornerPointGrid, tol: f64) -> Result<(), String> {
    if a.dims() != b.dims() {
        return Err(format!("dims {:?} vs {:?}", a.dims(), b.dims()));
    }
    if a.active() != b.active() {
        return Err("ACTNUM differs".into());
    }
    for (p, q) in a.pillars().iter().zip(b.pillars()) {
        for (x, y) in p.top.iter().chain(p.bottom.iter()).zip(q.top.iter().chain(q.bottom.iter())) {
            if !close(*x, *y, tol) {
                return Err(format!("COORD {x} vs {y}"));
            }
        }
    }
    for (x, y) in a.zcorn().iter().zip(b.zcorn()) {
        if !close(*x, *y, tol) {
            return Err(format!("ZCORN {x} vs {y}"));
        }
    }
    if a.properties().keys().ne(b.properties().keys()) {
        return Err("property names differ".into());
    }
    for (name, va) in a.properties() {
        for (x, y) in va.iter().zip(&b.properties()[name]) {
            if !close(*x, *y, tol) {
                return Err(format!("{name} {x} vs {y}"));
            }
        }
    }
    Ok(())
}
