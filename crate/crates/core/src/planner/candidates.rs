//! Candidate viewpoints with cached scores and lazy greedy selection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Utility, ViewGraph, Viewpoint};
use crate::error::{Error, Result};
use crate::occupancy::OccupancyMap;

#[derive(Debug, Clone, Copy)]
struct Entry {
    score: f64,
    id: usize,
    /// Map version the score was computed on; `None` if never scored.
    version: Option<u64>,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Highest score first, then lowest id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub id: usize,
    pub score: f64,
    pub version: u64,
    /// Utility evaluations spent on this selection.
    pub evals: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    heap: BinaryHeap<Entry>,
    member: Vec<bool>,
}

impl CandidateSet {
    fn set_member(&mut self, id: usize, v: bool) {
        if self.member.len() <= id {
            self.member.resize(id + 1, false);
        }
        self.member[id] = v;
    }

    pub fn contains(&self, id: usize) -> bool {
        self.member.get(id).copied().unwrap_or(false)
    }

    /// Adds an unscored candidate; no-op if already present.
    pub fn insert(&mut self, id: usize) {
        if !self.contains(id) {
            self.set_member(id, true);
            self.heap.push(Entry { score: f64::INFINITY, id, version: None });
        }
    }

    /// Puts back a previously selected candidate with its last score.
    pub fn reinsert(&mut self, id: usize, score: f64, version: u64) {
        if !self.contains(id) {
            self.set_member(id, true);
            self.heap.push(Entry { score, id, version: Some(version) });
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let mut dropped = Vec::new();
        self.heap.retain(|e| {
            let k = keep(e.id);
            if !k {
                dropped.push(e.id);
            }
            k
        });
        for id in dropped {
            self.member[id] = false;
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.heap.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        ids
    }

    fn rescore_all(&mut self, utility: &dyn Utility, map: &OccupancyMap, graph: &ViewGraph, only_stale: bool) -> Result<usize> {
        let version = map.version();
        let mut entries = std::mem::take(&mut self.heap).into_vec();
        entries.sort_unstable_by_key(|e| e.id);
        let stale: Vec<usize> = (0..entries.len()).filter(|&i| !only_stale || entries[i].version != Some(version)).collect();
        if !stale.is_empty() {
            let views: Vec<&Viewpoint> = stale.iter().map(|&i| graph.get(entries[i].id)).collect();
            let scores = utility.score(map, &views)?;
            for (&i, s) in stale.iter().zip(scores) {
                entries[i].score = s;
                entries[i].version = Some(version);
            }
        }
        self.heap = BinaryHeap::from(entries);
        Ok(stale.len())
    }

    /// Removes and returns the argmax candidate (ties to the lowest id).
    ///
    /// Lazy mode pops the best cached entry and accepts it if its score is
    /// current, otherwise rescoring and reinserting it; this is exact
    /// whenever scores never increase as the map is updated. Utilities that
    /// prefer batches get every stale candidate rescored at once. Exhaustive
    /// mode rescores everything.
    pub fn select(&mut self, utility: &dyn Utility, map: &OccupancyMap, graph: &ViewGraph, exhaustive: bool) -> Result<Selection> {
        if self.heap.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let version = map.version();
        let mut evals = 0;
        if exhaustive || utility.batch_rescore() {
            evals += self.rescore_all(utility, map, graph, !exhaustive)?;
        }
        loop {
            let top = self.heap.pop().ok_or(Error::EmptyCandidates)?;
            if top.version == Some(version) {
                self.member[top.id] = false;
                return Ok(Selection { id: top.id, score: top.score, version, evals });
            }
            let s = utility.score(map, &[graph.get(top.id)])?[0];
            evals += 1;
            self.heap.push(Entry { score: s, id: top.id, version: Some(version) });
        }
    }
}
