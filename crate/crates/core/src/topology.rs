//! Node placement, mobility, neighbour queries and density.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("need at least {needed} nodes, got {got}")]
    TooFewNodes { needed: usize, got: usize },
    #[error("node {0} out of range")]
    NoSuchNode(usize),
    #[error("positions span zero area")]
    ZeroArea,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Brownian motion with an outward drift and short-range repulsion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityParams {
    pub enabled: bool,
    /// Brownian intensity, m/√s.
    pub sigma: f64,
    /// Speed of the drift away from the population centroid, m/s.
    pub k_attract: f64,
    /// Repulsion strength, m³/s: speed `k_repel / d²` away from each node
    /// closer than `r0`.
    pub k_repel: f64,
    pub r0: f64,
    pub step_dt: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            enabled: false,
            sigma: 5.0,
            k_attract: 0.05,
            k_repel: 50.0,
            r0: 10.0,
            step_dt: 1.0,
        }
    }
}

/// `n` independent uniform points in `[0, side]²`.
pub fn place_uniform(n: usize, side_m: f64, rng: &mut RngStream) -> Vec<Position> {
    (0..n)
        .map(|_| {
            let x = rng.uniform() * side_m;
            let y = rng.uniform() * side_m;
            Position::new(x, y)
        })
        .collect()
}

pub fn centroid(positions: &[Position]) -> Position {
    let n = positions.len().max(1) as f64;
    let (sx, sy) = positions
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Position::new(sx / n, sy / n)
}

fn cell_of(p: &Position, size: f64) -> (i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

/// Advances every node by one mobility step of length `dt`. Nodes are not
/// confined to the deployment square.
pub fn step_mobility(
    positions: &[Position],
    params: &MobilityParams,
    rng: &mut RngStream,
    dt: f64,
) -> Vec<Position> {
    let c = centroid(positions);
    let noise_scale = params.sigma * dt.sqrt();
    let min_sep = 0.05 * params.r0;

    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let use_repulsion = params.k_repel != 0.0 && params.r0 > 0.0;
    if use_repulsion {
        for (i, p) in positions.iter().enumerate() {
            buckets.entry(cell_of(p, params.r0)).or_default().push(i);
        }
    }

    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let gx: f64 = StandardNormal.sample(rng);
            let gy: f64 = StandardNormal.sample(rng);
            let mut vx = 0.0;
            let mut vy = 0.0;

            let ox = p.x - c.x;
            let oy = p.y - c.y;
            let r = (ox * ox + oy * oy).sqrt();
            if r > 0.0 {
                vx += params.k_attract * ox / r;
                vy += params.k_attract * oy / r;
            }

            if use_repulsion {
                let (cx, cy) = cell_of(p, params.r0);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        let Some(bucket) = buckets.get(&(cx + dx, cy + dy)) else {
                            continue;
                        };
                        for &j in bucket {
                            if j == i {
                                continue;
                            }
                            let q = positions[j];
                            let d = p.distance(&q);
                            if d >= params.r0 {
                                continue;
                            }
                            let (ux, uy) = if d > 0.0 {
                                ((p.x - q.x) / d, (p.y - q.y) / d)
                            } else if i < j {
                                (-1.0, 0.0)
                            } else {
                                (1.0, 0.0)
                            };
                            let mag = params.k_repel / d.max(min_sep).powi(2);
                            vx += mag * ux;
                            vy += mag * uy;
                        }
                    }
                }
            }

            Position::new(p.x + noise_scale * gx + dt * vx, p.y + noise_scale * gy + dt * vy)
        })
        .collect()
}

/// Uniform-grid spatial index for exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    positions: &'a [Position],
    min_x: f64,
    min_y: f64,
    cell: f64,
    nx: i64,
    ny: i64,
    cells: Vec<Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    pub fn build(positions: &'a [Position]) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in positions {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let n = positions.len().max(1) as f64;
        let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
        let cell = (span / n.sqrt()).max(1e-9);
        let nx = (((max_x - min_x) / cell).floor() as i64 + 1).max(1);
        let ny = (((max_y - min_y) / cell).floor() as i64 + 1).max(1);
        let mut cells = vec![Vec::new(); (nx * ny) as usize];
        let mut idx = NeighborIndex {
            positions,
            min_x,
            min_y,
            cell,
            nx,
            ny,
            cells: Vec::new(),
        };
        for (i, p) in positions.iter().enumerate() {
            let (cx, cy) = idx.cell_coords(p);
            cells[(cy * nx + cx) as usize].push(i);
        }
        idx.cells = cells;
        idx
    }

    fn cell_coords(&self, p: &Position) -> (i64, i64) {
        let cx = ((p.x - self.min_x) / self.cell).floor() as i64;
        let cy = ((p.y - self.min_y) / self.cell).floor() as i64;
        (cx.clamp(0, self.nx - 1), cy.clamp(0, self.ny - 1))
    }

    /// Nearest other node to `i`, ties to the lowest id.
    pub fn nearest(&self, i: usize) -> Option<(usize, f64)> {
        let p = self.positions.get(i)?;
        let (cx, cy) = self.cell_coords(p);
        let mut best: Option<(f64, usize)> = None;
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            for (x, y) in ring_cells(cx, cy, ring) {
                if x < 0 || y < 0 || x >= self.nx || y >= self.ny {
                    continue;
                }
                for &j in &self.cells[(y * self.nx + x) as usize] {
                    if j == i {
                        continue;
                    }
                    let d2 = p.distance_sq(&self.positions[j]);
                    let better = match best {
                        None => true,
                        Some((bd, bj)) => d2 < bd || (d2 == bd && j < bj),
                    };
                    if better {
                        best = Some((d2, j));
                    }
                }
            }
            // Anything in ring + 1 or beyond is at least ring * cell away.
            if let Some((bd, _)) = best {
                let bound = ring as f64 * self.cell;
                if bd < bound * bound {
                    break;
                }
            }
        }
        best.map(|(d2, j)| (j, d2.sqrt()))
    }
}

fn ring_cells(cx: i64, cy: i64, ring: i64) -> Vec<(i64, i64)> {
    if ring == 0 {
        return vec![(cx, cy)];
    }
    let mut out = Vec::with_capacity((8 * ring) as usize);
    for dx in -ring..=ring {
        out.push((cx + dx, cy - ring));
        out.push((cx + dx, cy + ring));
    }
    for dy in (-ring + 1)..ring {
        out.push((cx - ring, cy + dy));
        out.push((cx + ring, cy + dy));
    }
    out
}

/// Exact nearest node to `i` by Euclidean distance; ties go to the lowest id.
pub fn nearest_neighbor(i: usize, positions: &[Position]) -> Result<(usize, f64), TopologyError> {
    if positions.len() < 2 {
        return Err(TopologyError::TooFewNodes {
            needed: 2,
            got: positions.len(),
        });
    }
    if i >= positions.len() {
        return Err(TopologyError::NoSuchNode(i));
    }
    NeighborIndex::build(positions)
        .nearest(i)
        .ok_or(TopologyError::NoSuchNode(i))
}

/// Nearest neighbour of every node, sharing one index.
pub fn all_nearest_neighbors(positions: &[Position]) -> Result<Vec<(usize, f64)>, TopologyError> {
    if positions.len() < 2 {
        return Err(TopologyError::TooFewNodes {
            needed: 2,
            got: positions.len(),
        });
    }
    let idx = NeighborIndex::build(positions);
    Ok((0..positions.len())
        .map(|i| idx.nearest(i).expect("at least two nodes"))
        .collect())
}

fn cross(o: &Position, a: &Position, b: &Position) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain).
pub fn convex_hull(positions: &[Position]) -> Vec<Position> {
    let mut pts: Vec<Position> = positions.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Position> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Position> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub fn polygon_area(poly: &[Position]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a.x * b.y - b.x * a.y;
    }
    twice.abs() / 2.0
}

fn bounding_box_area(positions: &[Position]) -> f64 {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in positions {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    ((max_x - min_x) * (max_y - min_y)).max(0.0)
}

/// Nodes per square metre over the convex hull, falling back to the
/// bounding box when the hull is degenerate.
pub fn density(positions: &[Position]) -> Result<f64, TopologyError> {
    if positions.is_empty() {
        return Err(TopologyError::TooFewNodes { needed: 1, got: 0 });
    }
    let mut area = polygon_area(&convex_hull(positions));
    if area <= 0.0 {
        area = bounding_box_area(positions);
    }
    if area <= 0.0 {
        return Err(TopologyError::ZeroArea);
    }
    Ok(positions.len() as f64 / area)
}
