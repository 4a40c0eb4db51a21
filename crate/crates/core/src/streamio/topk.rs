//! Bounded top-K selection: best score first, ties broken by lower id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub doc: usize,
    pub score: f32,
}

impl Ranked {
    /// `Less` means `self` ranks ahead of `other`.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.doc.cmp(&other.doc))
    }
}

// Heap order puts the worst-ranked entry on top.
#[derive(Debug, Clone, Copy)]
struct Entry(Ranked);

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
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
pub struct TopKHeap {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl TopKHeap {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k),
        }
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, doc: usize, score: f32) {
        if self.k == 0 {
            return;
        }
        let e = Entry(Ranked { doc, score });
        if self.heap.len() < self.k {
            self.heap.push(e);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if e < *worst {
                *worst = e;
            }
        }
    }

    pub fn merge(&mut self, other: TopKHeap) {
        for Entry(r) in other.heap {
            self.push(r.doc, r.score);
        }
    }

    /// Bytes reserved for entries.
    pub fn bytes(&self) -> usize {
        self.heap.capacity() * std::mem::size_of::<Entry>()
    }

    pub fn into_sorted(self) -> Vec<Ranked> {
        self.heap.into_sorted_vec().into_iter().map(|Entry(r)| r).collect()
    }
}

/// Full ranking of `scores`, best first, ties by lower id.
pub fn rank_all(scores: &[f32]) -> Vec<Ranked> {
    let mut v: Vec<Ranked> = scores
        .iter()
        .enumerate()
        .map(|(doc, &score)| Ranked { doc, score })
        .collect();
    v.sort_by(Ranked::rank_cmp);
    v
}
