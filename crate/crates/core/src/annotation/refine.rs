use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{AnnotationError, Shape};

/// Douglas–Peucker tolerance for refined outlines, in voxels.
const SIMPLIFY_TOLERANCE: f64 = 0.5;

/// Borrowed row-major 2D scalar image.
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f32],
}

impl<'a> SliceView<'a> {
    pub fn new(width: usize, height: usize, data: &'a [f32]) -> Result<Self, AnnotationError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(AnnotationError::InvalidParams(format!(
                "{} values for a {width}x{height} slice",
                data.len()
            )));
        }
        Ok(SliceView { width, height, data })
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x] as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {n}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrowParams {
    /// (x, y) = (column, row).
    pub seed: [usize; 2],
    pub low: f64,
    pub high: f64,
    pub connectivity: Connectivity,
    pub max_region: usize,
}

/// Voxels connected to the seed whose values lie in `[low, high]`.
pub fn region_grow(slice: &SliceView, p: &RegionGrowParams) -> Result<Vec<bool>, AnnotationError> {
    if !(p.low <= p.high) || p.max_region == 0 {
        return Err(AnnotationError::InvalidParams("need low <= high and max_region >= 1".into()));
    }
    let [sx, sy] = p.seed;
    if sx >= slice.width || sy >= slice.height {
        return Err(AnnotationError::InvalidParams(format!(
            "seed ({sx}, {sy}) outside the {}x{} slice",
            slice.width, slice.height
        )));
    }
    let in_band = |v: f64| v >= p.low && v <= p.high;
    let seed_value = slice.at(sx, sy);
    if !in_band(seed_value) {
        return Err(AnnotationError::SeedOutOfBand {
            value: seed_value,
            low: p.low,
            high: p.high,
        });
    }
    let (w, h) = (slice.width as isize, slice.height as isize);
    let mut mask = vec![false; slice.width * slice.height];
    let mut queue = VecDeque::from([(sx, sy)]);
    mask[sy * slice.width + sx] = true;
    let mut count = 1;
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in p.connectivity.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let i = ny * slice.width + nx;
            if mask[i] || !in_band(slice.at(nx, ny)) {
                continue;
            }
            count += 1;
            if count > p.max_region {
                return Err(AnnotationError::RegionCapExceeded(p.max_region));
            }
            mask[i] = true;
            queue.push_back((nx, ny));
        }
    }
    Ok(mask)
}

type Key = (i64, i64);

/// Closed iso-0.5 contours of a binary mask, as vertex loops on cell-edge
/// midpoints. The mask is implicitly padded with background, so every loop
/// is closed. Saddle cells join the two foreground corners under 8-connectivity
/// and separate them under 4-connectivity.
pub fn marching_squares(mask: &[bool], width: usize, height: usize, connectivity: Connectivity) -> Vec<Vec<[f64; 2]>> {
    let m = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && mask[y as usize * width + x as usize];
    let mut adjacency: BTreeMap<Key, Vec<Key>> = BTreeMap::new();
    let mut link = |p: Key, q: Key| {
        adjacency.entry(p).or_default().push(q);
        adjacency.entry(q).or_default().push(p);
    };
    for cy in -1..height as i64 {
        for cx in -1..width as i64 {
            let (a, b, c, d) = (m(cx, cy), m(cx + 1, cy), m(cx + 1, cy + 1), m(cx, cy + 1));
            let top = (2 * cx + 1, 2 * cy);
            let right = (2 * cx + 2, 2 * cy + 1);
            let bottom = (2 * cx + 1, 2 * cy + 2);
            let left = (2 * cx, 2 * cy + 1);
            let crossings: Vec<Key> = [(a != b, top), (b != c, right), (d != c, bottom), (a != d, left)]
                .into_iter()
                .filter_map(|(x, k)| x.then_some(k))
                .collect();
            match crossings.len() {
                2 => link(crossings[0], crossings[1]),
                4 => {
                    // a == c != b == d
                    let join_ac = a == (connectivity == Connectivity::Eight);
                    if join_ac {
                        link(top, right);
                        link(bottom, left);
                    } else {
                        link(left, top);
                        link(right, bottom);
                    }
                }
                _ => {}
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut loops = Vec::new();
    for &start in adjacency.keys() {
        if seen.contains(&start) {
            continue;
        }
        let mut ring = vec![start];
        seen.insert(start);
        let (mut prev, mut cur) = (start, adjacency[&start][0]);
        while cur != start {
            ring.push(cur);
            seen.insert(cur);
            let n = &adjacency[&cur];
            let next = if n[0] == prev { n[1] } else { n[0] };
            prev = cur;
            cur = next;
        }
        loops.push(ring.iter().map(|&(x, y)| [x as f64 / 2.0, y as f64 / 2.0]).collect());
    }
    loops
}

/// Shoelace area; positive for counter-clockwise loops in (x, y).
pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn simplify_open(pts: &[[f64; 2]], tol: f64, out: &mut Vec<[f64; 2]>) {
    let last = pts.len() - 1;
    let (mut far, mut dmax) = (0, 0.0);
    for (i, p) in pts.iter().enumerate().take(last).skip(1) {
        let d = point_segment_distance(*p, pts[0], pts[last]);
        if d > dmax {
            far = i;
            dmax = d;
        }
    }
    if dmax > tol {
        simplify_open(&pts[..=far], tol, out);
        out.pop();
        simplify_open(&pts[far..], tol, out);
    } else {
        out.push(pts[0]);
        out.push(pts[last]);
    }
}

/// Douglas–Peucker over a closed loop, split at vertex 0 and the vertex
/// farthest from it.
pub fn douglas_peucker(poly: &[[f64; 2]], tol: f64) -> Vec<[f64; 2]> {
    if poly.len() <= 3 {
        return poly.to_vec();
    }
    let d0 = |p: &[f64; 2]| (p[0] - poly[0][0]).powi(2) + (p[1] - poly[0][1]).powi(2);
    let far = (1..poly.len()).fold(1, |best, i| if d0(&poly[i]) > d0(&poly[best]) { i } else { best });
    let mut first = Vec::new();
    simplify_open(&poly[..=far], tol, &mut first);
    let mut closing: Vec<[f64; 2]> = poly[far..].to_vec();
    closing.push(poly[0]);
    let mut second = Vec::new();
    simplify_open(&closing, tol, &mut second);
    first.pop();
    second.pop();
    first.extend(second);
    first
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_touch(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let (d1, d2) = (orient(q1, q2, p1), orient(q1, q2, p2));
    let (d3, d4) = (orient(p1, p2, q1), orient(p1, p2, q2));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True if the closed polygon has at least 3 distinct vertices and no two
/// non-adjacent edges touch.
pub fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let edge = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (c, d) = edge(j);
            if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Seeded region grow followed by outline extraction: the largest
/// marching-squares loop of the region mask, counter-clockwise in (x, y),
/// simplified with Douglas–Peucker at 0.5 voxel. If simplification would
/// break simplicity the unsimplified outline is returned.
pub fn semi_auto_refine(slice: &SliceView, params: &RegionGrowParams) -> Result<Shape, AnnotationError> {
    let mask = region_grow(slice, params)?;
    let loops = marching_squares(&mask, slice.width, slice.height, params.connectivity);
    let mut outline = loops
        .into_iter()
        .max_by(|a, b| signed_area(a).abs().total_cmp(&signed_area(b).abs()))
        .expect("a non-empty region has an outline");
    if signed_area(&outline) < 0.0 {
        outline.reverse();
    }
    let simplified = douglas_peucker(&outline, SIMPLIFY_TOLERANCE);
    let points = if simplified.len() >= 3 && signed_area(&simplified) > 0.0 && is_simple(&simplified) {
        simplified
    } else {
        outline
    };
    Ok(Shape::Polygon { points })
}
