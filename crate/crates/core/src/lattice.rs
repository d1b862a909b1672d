//! Lattice models: self-avoiding walks on ℤ², loop-erased random walk and
//! the percolation exploration process on the triangular lattice.

use crate::error::{domain, Error, Result};
use crate::rng::{map_replicas, RngStream};
use crate::stats::Estimate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub type Site = (i32, i32);

const STEPS: [Site; 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Nearest-neighbour path on ℤ².
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WalkPath(Vec<Site>);

impl WalkPath {
    pub fn new(points: Vec<Site>) -> Result<Self> {
        if let Some(k) = points
            .windows(2)
            .position(|w| (w[1].0 - w[0].0).abs() + (w[1].1 - w[0].1).abs() != 1)
        {
            return domain(format!("step {} is not a nearest-neighbour step", k + 1));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Site] {
        &self.0
    }

    /// Number of steps.
    pub fn len(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_self_avoiding(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.0.len());
        self.0.iter().all(|p| seen.insert(*p))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in &self.0 {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Self-avoiding walks

pub const SAW_LIMIT: usize = 16;

struct SawCounter {
    visited: Vec<bool>,
    side: i32,
    counts: Vec<u64>,
    bridges: Vec<u64>,
}

impl SawCounter {
    fn idx(&self, p: Site) -> usize {
        ((p.1 + self.side / 2) * self.side + p.0 + self.side / 2) as usize
    }

    fn dfs(&mut self, p: Site, depth: usize, bridge: bool, xmax: i32) {
        self.counts[depth] += 1;
        if bridge && p.0 >= xmax {
            self.bridges[depth] += 1;
        }
        if depth + 1 == self.counts.len() {
            return;
        }
        for (dx, dy) in STEPS {
            let q = (p.0 + dx, p.1 + dy);
            let i = self.idx(q);
            if !self.visited[i] {
                self.visited[i] = true;
                self.dfs(q, depth + 1, bridge && q.0 > 0, xmax.max(q.0));
                self.visited[i] = false;
            }
        }
    }
}

/// (J_k, b_k) for k = 0..=n: self-avoiding walks and bridges of length k.
/// Bridges satisfy 0 < x_j ≤ x_k for 1 ≤ j ≤ k.
fn saw_and_bridge_counts(n: usize) -> Result<(Vec<u64>, Vec<u64>)> {
    if n > SAW_LIMIT {
        return domain(format!("exact enumeration is limited to n ≤ {SAW_LIMIT}"));
    }
    let side = 2 * n as i32 + 3;
    let mut c = SawCounter {
        visited: vec![false; (side * side) as usize],
        side,
        counts: vec![0; n + 1],
        bridges: vec![0; n + 1],
    };
    if n == 0 {
        return Ok((vec![1], vec![1]));
    }
    // fix the first step east and multiply by the four rotations
    let o = c.idx((0, 0));
    let e = c.idx((1, 0));
    c.visited[o] = true;
    c.visited[e] = true;
    c.dfs((1, 0), 1, true, 1);
    let mut counts: Vec<u64> = c.counts.iter().map(|k| 4 * k).collect();
    counts[0] = 1;
    let mut bridges = c.bridges;
    bridges[0] = 1;
    Ok((counts, bridges))
}

/// Number of self-avoiding walks of length n from the origin.
pub fn saw_count(n: usize) -> Result<u64> {
    Ok(saw_and_bridge_counts(n)?.0[n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectiveBounds {
    pub n: usize,
    pub counts: Vec<u64>,
    pub bridges: Vec<u64>,
    /// min_k J_k^{1/k}: J is submultiplicative.
    pub upper: f64,
    /// max_k b_k^{1/k}: bridges are supermultiplicative.
    pub lower: f64,
    /// 1+√2, the growth rate of partially directed walks (E, N, S steps with
    /// no immediate reversal), all of which are self-avoiding.
    pub lower_directed: f64,
}

pub fn connective_bounds(n: usize) -> Result<ConnectiveBounds> {
    if n == 0 {
        return domain("need n ≥ 1");
    }
    let (counts, bridges) = saw_and_bridge_counts(n)?;
    let roots = |v: &[u64]| -> Vec<f64> { (1..=n).map(|k| (v[k] as f64).powf(1.0 / k as f64)).collect() };
    Ok(ConnectiveBounds {
        n,
        upper: roots(&counts).into_iter().fold(f64::INFINITY, f64::min),
        lower: roots(&bridges).into_iter().fold(0.0, f64::max),
        lower_directed: 1.0 + 2f64.sqrt(),
        counts,
        bridges,
    })
}

// ---------------------------------------------------------------------------
// Loop erasure

/// Chronological loop erasure.
pub fn loop_erase(path: &WalkPath) -> WalkPath {
    let mut out: Vec<Site> = Vec::new();
    let mut index: HashMap<Site, usize> = HashMap::new();
    for &p in path.points() {
        if let Some(&k) = index.get(&p) {
            for q in out.drain(k + 1..) {
                index.remove(&q);
            }
        } else {
            index.insert(p, out.len());
            out.push(p);
        }
    }
    WalkPath(out)
}

// ---------------------------------------------------------------------------
// Loop-erased random walk in a rectangle

/// Interior sites {0..width} × {0..height}; everything else is boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDomain {
    pub width: i32,
    pub height: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Bottom,
    Top,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSet {
    AnyBoundary,
    Side { side: Side },
    Sites { sites: Vec<Site> },
}

impl GridDomain {
    pub fn new(width: i32, height: i32) -> Result<Self> {
        if width < 1 || height < 1 {
            return domain("grid must have at least one interior site");
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, p: Site) -> bool {
        (0..self.width).contains(&p.0) && (0..self.height).contains(&p.1)
    }

    /// Boundary sites adjacent to the interior (corners excluded).
    pub fn boundary(&self) -> impl Iterator<Item = Site> + '_ {
        let (w, h) = (self.width, self.height);
        (0..w)
            .flat_map(move |x| [(x, -1), (x, h)])
            .chain((0..h).flat_map(move |y| [(-1, y), (w, y)]))
    }

    pub fn side_of(&self, p: Site) -> Option<Side> {
        match p {
            (_, -1) => Some(Side::Bottom),
            (_, y) if y == self.height => Some(Side::Top),
            (-1, _) => Some(Side::Left),
            (x, _) if x == self.width => Some(Side::Right),
            _ => None,
        }
    }

    fn is_target(&self, t: &TargetSet, p: Site) -> bool {
        match t {
            TargetSet::AnyBoundary => true,
            TargetSet::Side { side } => self.side_of(p) == Some(*side),
            TargetSet::Sites { sites } => sites.contains(&p),
        }
    }

    fn reachable(&self, t: &TargetSet) -> bool {
        self.boundary().any(|p| self.is_target(t, p))
    }

    /// Simple random walk from `start` until it first leaves the domain.
    pub fn walk_to_boundary<R: Rng + ?Sized>(&self, start: Site, rng: &mut R) -> WalkPath {
        let mut pts = vec![start];
        let mut p = start;
        while self.contains(p) {
            let (dx, dy) = STEPS[rng.random_range(0..4)];
            p = (p.0 + dx, p.1 + dy);
            pts.push(p);
        }
        WalkPath(pts)
    }

    /// Discrete harmonic measure from `start` of every boundary site, by
    /// Gauss–Seidel with over-relaxation on the whole grid. Returned in the
    /// order of [`GridDomain::boundary`].
    pub fn harmonic_measure(&self, start: Site, tol: f64) -> Result<Vec<(Site, f64)>> {
        if !self.contains(start) {
            return domain("start must be an interior site");
        }
        // Green's function G(start, ·) solves ΔG = −δ_start; the exit law is
        // G at the neighbour of each boundary site divided by 4.
        let (w, h) = (self.width as usize, self.height as usize);
        let mut g = vec![0.0f64; w * h];
        let at = |x: i32, y: i32, g: &[f64]| -> f64 {
            if x < 0 || y < 0 || x >= w as i32 || y >= h as i32 {
                0.0
            } else {
                g[y as usize * w + x as usize]
            }
        };
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / w.max(h) as f64).sin());
        for sweep in 0.. {
            let mut delta: f64 = 0.0;
            for y in 0..h as i32 {
                for x in 0..w as i32 {
                    let src = if (x, y) == start { 1.0 } else { 0.0 };
                    let nb = at(x + 1, y, &g) + at(x - 1, y, &g) + at(x, y + 1, &g) + at(x, y - 1, &g);
                    let i = y as usize * w + x as usize;
                    let new = (nb + 4.0 * src) / 4.0;
                    let d = omega * (new - g[i]);
                    g[i] += d;
                    delta = delta.max(d.abs());
                }
            }
            if delta < tol {
                break;
            }
            if sweep > 1_000_000 {
                return Err(Error::Numerical {
                    step: sweep,
                    detail: "Gauss–Seidel did not converge".into(),
                });
            }
        }
        Ok(self
            .boundary()
            .map(|p| {
                let inner = (p.0.clamp(0, self.width - 1), p.1.clamp(0, self.height - 1));
                (p, at(inner.0, inner.1, &g) / 4.0)
            })
            .collect())
    }
}

/// Loop-erased random walk from `start` to `target`: a simple random walk
/// run until it leaves the domain, retried until the exit lies in the
/// target set, then loop-erased. The last point is the exit site.
pub fn sample_lerw<R: Rng + ?Sized>(dom: &GridDomain, start: Site, target: &TargetSet, rng: &mut R) -> Result<WalkPath> {
    if !dom.contains(start) {
        return domain("start must be an interior site");
    }
    if !dom.reachable(target) {
        return Err(Error::Config("target set has no boundary site adjacent to the domain".into()));
    }
    loop {
        let w = dom.walk_to_boundary(start, rng);
        if dom.is_target(target, *w.0.last().unwrap()) {
            return Ok(loop_erase(&w));
        }
    }
}

// ---------------------------------------------------------------------------
// Percolation on the triangular lattice

/// Axial neighbour directions, counter-clockwise from angle 0; site (i, j)
/// sits at i + j·e^{iπ/3}.
const TRI: [Site; 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

/// Site colouring of the triangle {i, j ≥ 0, i + j ≤ N} with corners
/// a = (0, 0), b = (N, 0), c = (0, N). Boundary: the column i = −1 is
/// white, the row j = −1 is black, and the row i + j = N + 1 is where the
/// exploration stops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangularColoring {
    pub n: i32,
    /// true = white; indexed by j·(N+1) + i.
    white: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    White,
    Black,
    Exit,
}

impl TriangularColoring {
    pub fn new(n: i32, white: Vec<bool>) -> Result<Self> {
        if n < 1 {
            return Err(Error::Config("triangle needs N ≥ 1".into()));
        }
        if white.len() != ((n + 1) * (n + 1)) as usize {
            return Err(Error::Config("colour vector does not match the triangle".into()));
        }
        Ok(Self { n, white })
    }

    pub fn uniform(n: i32, white: bool) -> Result<Self> {
        Self::new(n, vec![white; ((n + 1) * (n + 1)) as usize])
    }

    pub fn random<R: Rng + ?Sized>(n: i32, rng: &mut R) -> Result<Self> {
        let len = ((n + 1) * (n + 1)) as usize;
        Self::new(n, (0..len).map(|_| rng.random::<bool>()).collect())
    }

    fn idx(&self, s: Site) -> usize {
        (s.1 * (self.n + 1) + s.0) as usize
    }

    pub fn is_white(&self, s: Site) -> Option<bool> {
        self.in_triangle(s).then(|| self.white[self.idx(s)])
    }

    pub fn set(&mut self, s: Site, white: bool) {
        if self.in_triangle(s) {
            let i = self.idx(s);
            self.white[i] = white;
        }
    }

    pub fn in_triangle(&self, s: Site) -> bool {
        s.0 >= 0 && s.1 >= 0 && s.0 + s.1 <= self.n
    }

    fn cell(&self, s: Site) -> Cell {
        if s.0 + s.1 > self.n {
            Cell::Exit
        } else if s.0 < 0 {
            if s.1 >= 0 {
                Cell::White
            } else {
                Cell::Black
            }
        } else if s.1 < 0 {
            Cell::Black
        } else if self.white[self.idx(s)] {
            Cell::White
        } else {
            Cell::Black
        }
    }

    /// Colour flip composed with the reflection (i, j) ↦ (j, i), which
    /// swaps the two boundary arcs and so preserves the boundary condition.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for j in 0..=self.n {
            for i in 0..=self.n - j {
                let k = out.idx((j, i));
                out.white[k] = !self.white[self.idx((i, j))];
            }
        }
        out
    }
}

/// Interface from corner a to the far side: a sequence of (white, black)
/// site pairs, i.e. edges of the hexagonal dual crossed by the path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exploration {
    pub edges: Vec<(Site, Site)>,
    /// The white site of the last edge, on the row i + j = N.
    pub exit_white: Site,
}

impl Exploration {
    /// A white path joins side ac to the sites of the far side with j ≤ m.
    pub fn crosses(&self, m: i32) -> bool {
        self.exit_white.1 <= m
    }

    pub fn touched(&self) -> impl Iterator<Item = Site> + '_ {
        self.edges.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Explores the interface with white on the left, starting between the
/// white and black boundary arcs at corner a. Each step looks at the third
/// site of the triangle ahead and keeps white on the left.
pub fn percolation_exploration(col: &TriangularColoring) -> Exploration {
    let mut w: Site = (-1, 0);
    let mut b: Site = (0, -1);
    let mut edges = vec![(w, b)];
    loop {
        let k = TRI
            .iter()
            .position(|d| (w.0 + d.0, w.1 + d.1) == b)
            .expect("interface sites are adjacent");
        let d = TRI[(k + 1) % 6];
        let s = (w.0 + d.0, w.1 + d.1);
        match col.cell(s) {
            Cell::Exit => {
                return Exploration { edges, exit_white: w };
            }
            Cell::White => w = s,
            Cell::Black => b = s,
        }
        edges.push((w, b));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEstimate {
    pub x: f64,
    /// Far-side split at ⌊xN⌋ and ⌈xN⌉.
    pub floor: Estimate,
    pub ceil: Estimate,
}

/// White crossing probability from side ac to the part of the far side
/// within relative distance x of corner b, for each x, on shared colourings.
pub fn triangle_crossing_mc(xs: &[f64], n: i32, replicas: u64, stream: RngStream) -> Result<Vec<CrossingEstimate>> {
    if xs.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return domain("x must lie in [0, 1]");
    }
    let exits = map_replicas(stream, 0, replicas, |rng, _| {
        let col = TriangularColoring::random(n, rng).expect("valid size");
        percolation_exploration(&col).exit_white.1
    });
    Ok(xs
        .iter()
        .map(|&x| {
            let lo = (x * n as f64).floor() as i32;
            let hi = (x * n as f64).ceil() as i32;
            let count = |m: i32| exits.iter().filter(|&&j| j <= m).count() as u64;
            CrossingEstimate {
                x,
                floor: Estimate::proportion(count(lo), replicas),
                ceil: Estimate::proportion(count(hi), replicas),
            }
        })
        .collect())
}
