mod common;

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repsel_core::ensemble::{compute_variance, Realization, RealizationEnsemble};
use repsel_core::geometry::{Point3, Vec3};
use repsel_core::grid::{self, CellIndex, CornerPointGrid, HexCell};
use repsel_core::spatialquery::{classify_cells, pick_cell, CellStatus, FrustumLens, VoiSelection};

fn load(name: &str) -> CornerPointGrid {
    grid::parse_grid(&std::fs::read_to_string(common::data_path(name)).unwrap()).unwrap()
}

/// Corner of the slanted sample in closed form: pillars run from
/// `(10p, 10q, 0)` to `(10p + 2, 10q + 1, 20)`, tops dip 0.5 per column and
/// 0.2 per row from 5.0, the base sits 4 below.
fn slanted_corner(i: usize, j: usize, c: usize) -> Point3 {
    let (p, q, top) = ((i + (c & 1)) as f64, (j + ((c >> 1) & 1)) as f64, c >> 2);
    let z = 5.0 + 0.5 * p + 0.2 * q + 4.0 * top as f64;
    Point3::new(10.0 * p + 0.1 * z, 10.0 * q + 0.05 * z, z)
}

#[test]
fn slanted_sample_matches_closed_form() {
    let g = load("sample_2x2x1.grdecl");
    for j in 0..2 {
        for i in 0..2 {
            let hex = g.cell_corners(CellIndex::new(i, j, 0)).unwrap();
            for c in 0..8 {
                let want = slanted_corner(i, j, c);
                assert!((hex.corners[c] - want).norm() < 1e-12, "cell ({i},{j}) corner {c}");
            }
            let center = (0..8).map(|c| slanted_corner(i, j, c).coords).sum::<Vec3>() / 8.0;
            assert!((hex.center().coords - center).norm() < 1e-12);

            // depth and lateral position are affine in the corner indices,
            // so each cell is a parallelepiped
            let o = slanted_corner(i, j, 0);
            let jac = Matrix3::from_columns(&[
                slanted_corner(i, j, 1) - o,
                slanted_corner(i, j, 2) - o,
                slanted_corner(i, j, 4) - o,
            ]);
            let v = hex.volume();
            assert!((v.value - jac.determinant().abs()).abs() < 1e-9, "{} vs {}", v.value, jac.determinant());
            assert!(!v.non_convex);
        }
    }
    assert_eq!(g.property("PORO").unwrap(), &[0.21, 0.18, 0.25, 0.12]);
}

#[test]
fn faulted_sample_is_axis_aligned_boxes() {
    let g = load("sample_4x3x2.grdecl");
    assert_eq!(g.dims(), (4, 3, 2));
    assert!(!g.is_active(5));
    assert_eq!(g.active_cells().len(), 23);
    for c in g.active_cells() {
        let idx = g.cell_index(c);
        let hex = g.cell_corners(idx).unwrap();
        let (lo, hi) = hex.bounds();
        let size = hi - lo;
        assert!((hex.volume().value - size.x * size.y * size.z).abs() < 1e-9);
        assert!((size.x - 10.0).abs() < 1e-12 && (size.y - 10.0).abs() < 1e-12);
        let top = if idx.k == 0 { 100.0 } else { 105.0 } + if idx.i >= 2 { 3.0 } else { 0.0 } + 0.25 * idx.j as f64;
        assert!((lo.z - top).abs() < 1e-12, "cell {c}: top {} vs {top}", lo.z);
    }
}

fn sampled_volume(hex: &HexCell, rng: &mut ChaCha8Rng, inside: impl Fn(&Point3) -> bool) -> f64 {
    let (lo, hi) = hex.bounds();
    let span = hi - lo;
    let n = 60_000;
    let hits = (0..n)
        .filter(|_| inside(&(lo + span.component_mul(&Vec3::new(rng.random(), rng.random(), rng.random())))))
        .count();
    span.x * span.y * span.z * hits as f64 / n as f64
}

/// Frustum of a random convex quadrilateral shrunk towards an apex: every
/// face is planar, so the volume has a closed form.
fn random_frustum(rng: &mut ChaCha8Rng) -> (HexCell, f64) {
    let (w, d) = (rng.random_range(5.0..20.0), rng.random_range(5.0..20.0));
    let base = [
        Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
        Point3::new(w + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
        Point3::new(rng.random_range(-1.0..1.0), d + rng.random_range(-1.0..1.0), 0.0),
        Point3::new(w + rng.random_range(-1.0..1.0), d + rng.random_range(-1.0..1.0), 0.0),
    ];
    let apex = Point3::new(rng.random_range(0.0..w), rng.random_range(0.0..d), rng.random_range(5.0..15.0));
    let s: f64 = rng.random_range(0.5..0.9);
    let corners = std::array::from_fn(|c| {
        let b = base[c & 3];
        if c < 4 {
            b
        } else {
            apex + (b - apex) * s
        }
    });
    let area = 0.5 * (base[3] - base[0]).cross(&(base[2] - base[1])).norm();
    let h = apex.z * (1.0 - s);
    (HexCell { corners }, h / 3.0 * area * (1.0 + s + s * s))
}

#[test]
fn planar_faced_volume_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let (hex, exact) = random_frustum(&mut rng);
        let v = hex.volume();
        assert!(!v.non_convex);
        assert!((v.value - exact).abs() <= 1e-9 * exact, "trial {trial}: {} vs {exact}", v.value);
    }
    for trial in 0..10 {
        let (hex, exact) = random_frustum(&mut rng);
        let est = sampled_volume(&hex, &mut rng, |p| common::inside_trilinear(&hex.corners, p));
        assert!((est - exact).abs() / exact < 0.01, "trial {trial}: sampled {est} vs {exact}");
    }
}

#[test]
fn warped_volume_matches_rejection_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..20 {
        let size = Vec3::new(rng.random_range(5.0..20.0), rng.random_range(5.0..20.0), rng.random_range(1.0..5.0));
        let corners: [Point3; 8] = std::array::from_fn(|c| {
            let unit = Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, (c >> 2) as f64);
            let jitter = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            Point3::from((unit + jitter).component_mul(&size))
        });
        let hex = HexCell { corners };
        let planes: Vec<_> = hex.tetrahedra().iter().map(common::tet_planes).collect();
        let est = sampled_volume(&hex, &mut rng, |p| {
            planes.iter().any(|t| t.iter().all(|(n, q)| n.dot(&(p - q)) <= 0.0))
        });
        let v = hex.volume().value;
        assert!((est - v).abs() / v < 0.01, "trial {trial}: sampled {est} vs {v}");
    }
}

fn two_property_ensemble(rng: &mut ChaCha8Rng, n: usize) -> RealizationEnsemble {
    let g = load("sample_4x3x2.grdecl");
    let cells = g.cell_count();
    let realizations = (0..n)
        .map(|r| {
            let mut fields = BTreeMap::new();
            fields.insert("A".to_string(), (0..cells).map(|_| rng.random_range(0.0..1.0)).collect());
            fields.insert("B".to_string(), (0..cells).map(|_| rng.random_range(-100.0..100.0)).collect());
            Realization {
                id: format!("r{r}"),
                fields,
            }
        })
        .collect();
    RealizationEnsemble::new(g, vec!["A".into(), "B".into()], realizations).unwrap()
}

#[test]
fn variance_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let ens = two_property_ensemble(&mut rng, 9);
    let subset = [0, 2, 3, 7, 8];
    let props = ["A".to_string(), "B".to_string()];
    let model = compute_variance(&ens, &props, &subset).unwrap();
    let active = ens.grid().active_cells();
    assert_eq!(model.cells, active);

    let raw = |prop: &str, c: usize| {
        let xs: Vec<f64> = subset.iter().map(|&r| ens.field(r, prop).unwrap()[c]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let max_a = active.iter().map(|&c| raw("A", c)).fold(0.0, f64::max);
    let max_b = active.iter().map(|&c| raw("B", c)).fold(0.0, f64::max);
    for (&c, &v) in model.cells.iter().zip(&model.values) {
        let want = 0.5 * (raw("A", c) / max_a + raw("B", c) / max_b);
        assert!((v - want).abs() < 1e-12, "cell {c}: {v} vs {want}");
    }
    let peak = model.values.iter().copied().fold(0.0, f64::max);
    assert!(peak <= 1.0 + 1e-15);
}

#[test]
fn variance_of_identical_members_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ens = two_property_ensemble(&mut rng, 2);
    let copy = Realization {
        id: "copy".into(),
        ..ens.realizations()[0].clone()
    };
    let mut all = ens.realizations().to_vec();
    all.push(copy);
    ens = RealizationEnsemble::new(ens.grid().clone(), ens.property_names().to_vec(), all).unwrap();
    let m = compute_variance(&ens, &["A".into()], &[0, 2]).unwrap();
    assert!(m.values.iter().all(|&v| v == 0.0));
}

fn oracle_entry(g: &CornerPointGrid, c: usize, origin: &Point3, dir: &Vec3) -> Option<f64> {
    let hex = g.cell_corners(g.cell_index(c)).unwrap();
    hex.tetrahedra()
        .iter()
        .filter_map(|t| common::cyrus_beck(origin, dir, &common::tet_planes(t)))
        .min_by(f64::total_cmp)
}

#[test]
fn pick_agrees_with_cyrus_beck() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = load("sample_4x3x2.grdecl");
    let mut hits = 0;
    for trial in 0..400 {
        let origin = Point3::new(
            rng.random_range(-20.0..60.0),
            rng.random_range(-20.0..50.0),
            rng.random_range(60.0..150.0),
        );
        let target = Point3::new(rng.random_range(0.0..40.0), rng.random_range(0.0..30.0), rng.random_range(100.0..120.0));
        let dir = target - origin;
        let picked = pick_cell(&g, &origin, &dir, None);
        let best = g
            .active_cells()
            .into_iter()
            .filter_map(|c| oracle_entry(&g, c, &origin, &dir).map(|t| (t, c)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match (picked, best) {
            (None, None) => {}
            (Some(idx), Some((t, _))) => {
                let c = g.linear_index(idx).unwrap();
                let tc = oracle_entry(&g, c, &origin, &dir).expect("picked cell is not hit");
                assert!((tc - t).abs() <= 1e-9 * (1.0 + t), "trial {trial}: picked at {tc}, nearest at {t}");
                hits += 1;
            }
            (p, b) => panic!("trial {trial}: picked {p:?}, oracle {b:?}"),
        }
    }
    assert!(hits > 100);
}

#[test]
fn pick_skips_culled_cells() {
    let g = load("sample_4x3x2.grdecl");
    // lens from above: the upper layer is swallowed, the far plane cuts the lower one
    let lens = FrustumLens::looking(
        Point3::new(5.0, 15.0, 50.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 1.0, 0.0),
        10.0,
        58.0,
        0.6,
        0.6,
    )
    .unwrap();
    let cut = classify_cells(&g, &VoiSelection::default(), &lens);
    let origin = Point3::new(5.0, 15.0, 50.0);
    let down = Vec3::new(0.0, 0.0, 1.0);
    let plain = pick_cell(&g, &origin, &down, None).unwrap();
    assert_eq!(plain, CellIndex::new(0, 1, 0));
    assert_eq!(cut.status(g.linear_index(plain).unwrap()), CellStatus::Culled);
    let through = pick_cell(&g, &origin, &down, Some((&cut, &lens))).unwrap();
    assert_eq!(through, CellIndex::new(0, 1, 1));
}
