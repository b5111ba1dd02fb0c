//! Shortest-path grids: two query cells, random obstacles, and a label on
//! every cell that lies on at least one shortest 4-connected path between
//! the queries.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBSTACLE_RATE: f64 = 0.1;
pub const RESAMPLE_BUDGET: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSample {
    pub size: usize,
    pub queries: [(usize, usize); 2],
    pub obstacles: Vec<bool>,
    pub labels: Vec<bool>,
    /// Shortest-path length between the queries.
    pub distance: usize,
}

impl GridSample {
    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.size + c
    }

    pub fn is_query(&self, r: usize, c: usize) -> bool {
        self.queries.contains(&(r, c))
    }

    /// Three characters per cell (query, obstacle, label) with rows on
    /// separate lines, preceded by a header line.
    pub fn to_text(&self) -> String {
        let mut out = format!("grid {} {}\n", self.size, self.distance);
        for r in 0..self.size {
            for c in 0..self.size {
                let i = self.index(r, c);
                out.push(if self.is_query(r, c) { 'Q' } else { '.' });
                out.push(if self.obstacles[i] { '#' } else { '.' });
                out.push(if self.labels[i] { '*' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("grid text: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 3 || header[0] != "grid" {
            return Err(bad("missing header"));
        }
        let size: usize = header[1].parse().map_err(|_| bad("size"))?;
        let distance: usize = header[2].parse().map_err(|_| bad("distance"))?;
        let mut obstacles = vec![false; size * size];
        let mut labels = vec![false; size * size];
        let mut queries = Vec::new();
        for r in 0..size {
            let line = lines.next().ok_or_else(|| bad("too few rows"))?;
            let cells: Vec<char> = line.chars().collect();
            if cells.len() != 3 * size {
                return Err(bad("row width"));
            }
            for c in 0..size {
                let i = r * size + c;
                if cells[3 * c] == 'Q' {
                    queries.push((r, c));
                }
                obstacles[i] = cells[3 * c + 1] == '#';
                labels[i] = cells[3 * c + 2] == '*';
            }
        }
        if queries.len() != 2 {
            return Err(bad("expected exactly two queries"));
        }
        Ok(Self {
            size,
            queries: [queries[0], queries[1]],
            obstacles,
            labels,
            distance,
        })
    }

    /// Row-major flag vectors for the query and obstacle input channels.
    pub fn channels(&self) -> (Vec<bool>, Vec<bool>) {
        let mut q = vec![false; self.size * self.size];
        for &(r, c) in &self.queries {
            q[self.index(r, c)] = true;
        }
        (q, self.obstacles.clone())
    }
}

/// BFS distances from `start` over obstacle-free cells; `None` if unreachable.
pub fn bfs_distances(size: usize, obstacles: &[bool], start: (usize, usize)) -> Vec<Option<usize>> {
    let mut dist = vec![None; size * size];
    let s = start.0 * size + start.1;
    if obstacles[s] {
        return dist;
    }
    dist[s] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * size + c].expect("queued cells have a distance");
        for (nr, nc) in neighbors(size, r, c) {
            let j = nr * size + nc;
            if !obstacles[j] && dist[j].is_none() {
                dist[j] = Some(d + 1);
                queue.push_back((nr, nc));
            }
        }
    }
    dist
}

pub fn neighbors(size: usize, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push((r - 1, c));
    }
    if r + 1 < size {
        out.push((r + 1, c));
    }
    if c > 0 {
        out.push((r, c - 1));
    }
    if c + 1 < size {
        out.push((r, c + 1));
    }
    out.into_iter()
}

/// Cells on at least one shortest path: `d₁(c) + d₂(c) = d₁(q₂)`.
pub fn shortest_path_labels(
    size: usize,
    obstacles: &[bool],
    q1: (usize, usize),
    q2: (usize, usize),
) -> Option<(Vec<bool>, usize)> {
    let d1 = bfs_distances(size, obstacles, q1);
    let d2 = bfs_distances(size, obstacles, q2);
    let total = d1[q2.0 * size + q2.1]?;
    let labels = d1
        .iter()
        .zip(&d2)
        .map(|(a, b)| matches!((a, b), (Some(a), Some(b)) if a + b == total))
        .collect();
    Some((labels, total))
}

/// Samples a grid whose queries are connected by a shortest path of length
/// at most `max_distance`.
pub fn generate_grid<R: Rng + ?Sized>(rng: &mut R, max_distance: usize, size: usize) -> Result<GridSample> {
    if max_distance < 2 {
        return Err(Error::Config(format!("phase distance must be at least 2, got {max_distance}")));
    }
    if size < max_distance + 2 {
        return Err(Error::Config(format!(
            "grid size {size} too small for distance {max_distance}"
        )));
    }
    let cells = size * size;
    for _ in 0..RESAMPLE_BUDGET {
        let q1 = (rng.random_range(0..size), rng.random_range(0..size));
        // Second query within Manhattan distance of the phase cap.
        let candidates: Vec<(usize, usize)> = (0..cells)
            .map(|i| (i / size, i % size))
            .filter(|&(r, c)| {
                let m = r.abs_diff(q1.0) + c.abs_diff(q1.1);
                m >= 1 && m <= max_distance
            })
            .collect();
        let q2 = candidates[rng.random_range(0..candidates.len())];
        let mut obstacles = vec![false; cells];
        for (i, o) in obstacles.iter_mut().enumerate() {
            let cell = (i / size, i % size);
            let draw = rng.random::<f64>() < OBSTACLE_RATE;
            *o = draw && cell != q1 && cell != q2;
        }
        if let Some((labels, distance)) = shortest_path_labels(size, &obstacles, q1, q2) {
            if distance <= max_distance {
                // Row-major query order, matching the text encoding.
                return Ok(GridSample {
                    size,
                    queries: [q1.min(q2), q1.max(q2)],
                    obstacles,
                    labels,
                    distance,
                });
            }
        }
    }
    Err(Error::ResampleBudget(RESAMPLE_BUDGET))
}

/// Human-readable rendering used by the CLI.
pub fn render(sample: &GridSample) -> String {
    let mut out = String::new();
    for r in 0..sample.size {
        for c in 0..sample.size {
            let i = sample.index(r, c);
            let ch = if sample.is_query(r, c) {
                'Q'
            } else if sample.obstacles[i] {
                '#'
            } else if sample.labels[i] {
                '*'
            } else {
                '.'
            };
            let _ = write!(out, "{ch}");
        }
        out.push('\n');
    }
    out
}
