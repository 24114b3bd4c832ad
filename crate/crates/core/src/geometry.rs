//! Small geometric primitives shared by the grid, lens and gesture code.

use serde::{Deserialize, Serialize};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

/// Oriented plane `normal · p + offset = 0`; the positive side is "inside".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    /// Plane through `point` with the given (normalized here) inward normal.
    pub fn through(point: &Point3, normal: Vec3) -> Self {
        let normal = normal.normalize();
        Self {
            normal,
            offset: -normal.dot(&point.coords),
        }
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }
}

/// Vertices closer than this to a plane count as lying on it.
pub const PLANE_EPS: f64 = 1e-12;

/// Splits a planar convex polygon by `plane` into its `(inside, outside)`
/// parts (Sutherland–Hodgman). Either part may be empty.
pub fn split_polygon(poly: &[Point3], plane: &Plane) -> (Vec<Point3>, Vec<Point3>) {
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    let n = poly.len();
    if n == 0 {
        return (inside, outside);
    }
    let dist: Vec<f64> = poly
        .iter()
        .map(|p| {
            let d = plane.signed_distance(p);
            if d.abs() <= PLANE_EPS {
                0.0
            } else {
                d
            }
        })
        .collect();
    for a in 0..n {
        let b = (a + 1) % n;
        let (pa, pb) = (poly[a], poly[b]);
        let (da, db) = (dist[a], dist[b]);
        if da >= 0.0 {
            inside.push(pa);
        }
        if da <= 0.0 {
            outside.push(pa);
        }
        if (da > 0.0 && db < 0.0) || (da < 0.0 && db > 0.0) {
            let t = da / (da - db);
            let x = pa + (pb - pa) * t;
            inside.push(x);
            outside.push(x);
        }
    }
    (clean_polygon(inside), clean_polygon(outside))
}

/// Removes consecutive duplicates; returns empty when fewer than three
/// distinct vertices remain.
fn clean_polygon(mut poly: Vec<Point3>) -> Vec<Point3> {
    poly.dedup_by(|a, b| (*a - *b).norm() <= PLANE_EPS);
    if poly.len() > 1 && (poly[0] - poly[poly.len() - 1]).norm() <= PLANE_EPS {
        poly.pop();
    }
    if poly.len() < 3 || area_vector(&poly).norm() <= PLANE_EPS * PLANE_EPS {
        Vec::new()
    } else {
        poly
    }
}

/// Twice-area-weighted normal halved: its norm is the polygon area and its
/// direction follows the right-hand rule over the vertex order.
pub fn area_vector(poly: &[Point3]) -> Vec3 {
    let mut acc = Vec3::zeros();
    if poly.len() < 3 {
        return acc;
    }
    let o = poly[0];
    for w in poly[1..].windows(2) {
        acc += (w[0] - o).cross(&(w[1] - o));
    }
    acc * 0.5
}

/// Volume enclosed by closed, outward-wound polygon faces.
pub fn enclosed_volume<'a>(faces: impl IntoIterator<Item = &'a [Point3]>) -> f64 {
    let mut vol = 0.0;
    for face in faces {
        if face.len() < 3 {
            continue;
        }
        let o = face[0];
        for w in face[1..].windows(2) {
            vol += o.coords.dot(&w[0].coords.cross(&w[1].coords));
        }
    }
    vol / 6.0
}

/// Orders points lying on a common plane counter-clockwise around `normal`.
pub fn order_on_plane(points: &mut Vec<Point3>, normal: &Vec3) {
    if points.is_empty() {
        return;
    }
    let centroid = Point3::from(
        points.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / points.len() as f64,
    );
    let u = any_perpendicular(normal);
    let v = normal.cross(&u);
    points.sort_by(|a, b| {
        let (da, db) = (*a - centroid, *b - centroid);
        let ta = da.dot(&v).atan2(da.dot(&u));
        let tb = db.dot(&v).atan2(db.dot(&u));
        ta.total_cmp(&tb)
    });
    points.dedup_by(|a, b| (*a - *b).norm() <= 1e-10);
    if points.len() > 1 && (points[0] - points[points.len() - 1]).norm() <= 1e-10 {
        points.pop();
    }
}

/// Convex hull of coplanar points, counter-clockwise around `normal`.
pub fn planar_hull(points: &[Point3], normal: &Vec3) -> Vec<Point3> {
    let u = any_perpendicular(normal);
    let v = normal.normalize().cross(&u);
    let mut pts: Vec<(f64, f64, Point3)> = points
        .iter()
        .map(|p| (p.coords.dot(&u), p.coords.dot(&v), *p))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-12 && (a.1 - b.1).abs() <= 1e-12);
    if pts.len() < 3 {
        return pts.into_iter().map(|p| p.2).collect();
    }
    let cross = |o: &(f64, f64, Point3), a: &(f64, f64, Point3), b: &(f64, f64, Point3)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64, Point3)> = Vec::with_capacity(pts.len() * 2);
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 1e-18 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 1e-18 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull.into_iter().map(|p| p.2).collect()
}

pub fn any_perpendicular(n: &Vec3) -> Vec3 {
    let n = n.normalize();
    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    n.cross(&seed).normalize()
}

/// Ray–triangle intersection (Möller–Trumbore); returns the ray parameter.
pub fn ray_triangle(origin: &Point3, dir: &Vec3, tri: [&Point3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some(e2.dot(&qvec) * inv)
}
