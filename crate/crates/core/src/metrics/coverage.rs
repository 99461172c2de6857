//! Visited-cell accounting against the map's visitable set.

use crate::error::{Error, Result};
use crate::sim::OccupancyMap;

/// Tracks which visitable cells the agent has occupied, when each was first
/// reached, and how often. Coverage is |visited| / |visitable|, which is
/// non-decreasing in steps and only ever changed by stepping, never by
/// training.
#[derive(Debug, Clone)]
pub struct CoverageTracker {
    width: usize,
    visitable: Vec<bool>,
    visitable_count: usize,
    visited: Vec<bool>,
    visited_count: usize,
    counts: Vec<u64>,
    first_visit: Vec<Option<u64>>,
    steps_tracked: u64,
    start: (usize, usize),
}

impl CoverageTracker {
    pub fn new(map: &OccupancyMap) -> Self {
        let n = map.width() * map.height();
        let mut visitable = vec![false; n];
        for (c, r) in map.visitable_cells() {
            visitable[r * map.width() + c] = true;
        }
        CoverageTracker {
            width: map.width(),
            visitable,
            visitable_count: map.visitable_count(),
            visited: vec![false; n],
            visited_count: 0,
            counts: vec![0; n],
            first_visit: vec![None; n],
            steps_tracked: 0,
            start: map.start(),
        }
    }

    /// Record the agent occupying a cell at a given step. A pose outside
    /// the visitable set indicates a simulator bug and is a hard error.
    pub fn update(&mut self, col: usize, row: usize, step: u64) -> Result<()> {
        let idx = row * self.width + col;
        if !self.visitable.get(idx).copied().unwrap_or(false) {
            return Err(Error::Metrics(format!(
                "pose ({col},{row}) is outside the visitable set"
            )));
        }
        self.counts[idx] += 1;
        self.steps_tracked += 1;
        if !self.visited[idx] {
            self.visited[idx] = true;
            self.visited_count += 1;
            self.first_visit[idx] = Some(step);
        }
        Ok(())
    }

    pub fn coverage(&self) -> f64 {
        self.visited_count as f64 / self.visitable_count as f64
    }

    pub fn visited_count(&self) -> usize {
        self.visited_count
    }

    pub fn visitable_count(&self) -> usize {
        self.visitable_count
    }

    pub fn steps_tracked(&self) -> u64 {
        self.steps_tracked
    }

    pub fn count_at(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.width + col]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn first_visit(&self, col: usize, row: usize) -> Option<u64> {
        self.first_visit[row * self.width + col]
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    /// After a map mutation, grow the visitable set with any newly
    /// reachable cells. Cells keep their visitable status once known, so
    /// historical visits stay valid; removing an obstacle can enlarge the
    /// denominator.
    pub fn extend_visitable(&mut self, map: &OccupancyMap) {
        for (c, r) in map.visitable_cells() {
            let idx = r * self.width + c;
            if !self.visitable[idx] {
                self.visitable[idx] = true;
                self.visitable_count += 1;
            }
        }
    }
}
