//! Open-tour TSP over asymmetric cost matrices.
//!
//! Node 0 is the fixed start; nodes `1..m` are goals. A tour visits every
//! goal once and does not return to the start. Small matrices are solved
//! exactly by dynamic programming over goal subsets; larger ones by local
//! search (directed Or-opt, segment-reversal 2-opt, node exchange) from
//! greedy tours.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest matrix accepted by [`brute_force_open_tour`].
pub const BRUTE_FORCE_LIMIT: usize = 10;

/// Relative improvement a move must achieve to be accepted.
const IMPROVEMENT_TOL: f64 = 1e-12;

/// Largest matrix [`solve_open_tour`] solves exactly.
pub const EXACT_LIMIT: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TspError {
    #[error("cost matrix must be square with at least one node")]
    Empty,
    #[error("cost matrix has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("entry ({0}, {1}) is negative or not finite")]
    BadEntry(usize, usize),
    #[error("diagonal entry ({0}, {0}) is nonzero")]
    NonzeroDiagonal(usize),
    #[error("brute force supports at most {BRUTE_FORCE_LIMIT} nodes, got {0}")]
    SizeLimit(usize),
    #[error("order is not a permutation of 1..{0}")]
    InvalidOrder(usize),
}

/// Dense row-major matrix of nonnegative from-to costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self, TspError> {
        if size == 0 {
            return Err(TspError::Empty);
        }
        if entries.len() != size * size {
            return Err(TspError::Shape { expected: size * size, got: entries.len() });
        }
        for i in 0..size {
            for j in 0..size {
                let v = entries[i * size + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(TspError::BadEntry(i, j));
                }
            }
            if entries[i * size + i] != 0.0 {
                return Err(TspError::NonzeroDiagonal(i));
            }
        }
        Ok(Self { size, entries })
    }

    /// Builds the matrix from a cost function; the diagonal is forced to zero.
    pub fn from_fn(size: usize, mut cost: impl FnMut(usize, usize) -> f64) -> Result<Self, TspError> {
        let mut entries = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                entries.push(if i == j { 0.0 } else { cost(i, j) });
            }
        }
        Self::new(size, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn scaled(&self, c: f64) -> CostMatrix {
        CostMatrix { size: self.size, entries: self.entries.iter().map(|v| v * c).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    /// Goal nodes in visiting order (a permutation of `1..size`).
    pub order: Vec<usize>,
    pub cost: f64,
}

impl Tour {
    pub fn first(&self) -> Option<usize> {
        self.order.first().copied()
    }
}

fn path_cost(m: &CostMatrix, order: &[usize]) -> f64 {
    let mut prev = 0;
    let mut total = 0.0;
    for &v in order {
        total += m.get(prev, v);
        prev = v;
    }
    total
}

/// Cost of an open tour starting at node 0.
pub fn tour_cost(m: &CostMatrix, order: &[usize]) -> Result<f64, TspError> {
    let n = m.size();
    let mut seen = vec![false; n];
    if order.len() != n - 1 {
        return Err(TspError::InvalidOrder(n));
    }
    for &v in order {
        if v == 0 || v >= n || seen[v] {
            return Err(TspError::InvalidOrder(n));
        }
        seen[v] = true;
    }
    Ok(path_cost(m, order))
}

/// Greedy construction: always move to the cheapest unvisited goal
/// (lowest index on ties).
pub fn nearest_neighbor_tour(m: &CostMatrix) -> Tour {
    greedy_from(m, &[])
}

/// Greedy completion of a fixed prefix.
fn greedy_from(m: &CostMatrix, prefix: &[usize]) -> Tour {
    let n = m.size();
    let mut visited = vec![false; n];
    visited[0] = true;
    let mut order = Vec::with_capacity(n.saturating_sub(1));
    for &v in prefix {
        visited[v] = true;
        order.push(v);
    }
    let mut current = order.last().copied().unwrap_or(0);
    while order.len() + 1 < n {
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for j in 1..n {
            if !visited[j] && (best == usize::MAX || m.get(current, j) < best_cost) {
                best = j;
                best_cost = m.get(current, j);
            }
        }
        visited[best] = true;
        order.push(best);
        current = best;
    }
    let cost = path_cost(m, &order);
    Tour { order, cost }
}

fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - IMPROVEMENT_TOL * current.abs()
}

/// Open-tour solver: exact up to [`EXACT_LIMIT`] nodes, otherwise
/// [`heuristic_open_tour`].
pub fn solve_open_tour(m: &CostMatrix) -> Tour {
    if m.size() <= EXACT_LIMIT {
        held_karp(m)
    } else {
        heuristic_open_tour(m)
    }
}

/// Local search from the nearest-neighbor tour and from a greedy tour for
/// each choice of first goal. Exact for fewer than three nodes.
pub fn heuristic_open_tour(m: &CostMatrix) -> Tour {
    let n = m.size();
    let mut best = local_search(m, nearest_neighbor_tour(m));
    for first in 1..n {
        if best.order.first() == Some(&first) {
            continue;
        }
        let t = local_search(m, greedy_from(m, &[first]));
        if improves(t.cost, best.cost) {
            best = t;
        }
    }
    best
}

/// Dynamic program over (visited goal subset, last goal).
fn held_karp(m: &CostMatrix) -> Tour {
    let goals = m.size() - 1;
    if goals == 0 {
        return Tour { order: Vec::new(), cost: 0.0 };
    }
    let full = (1usize << goals) - 1;
    let mut best = vec![f64::INFINITY; (full + 1) * goals];
    let mut parent = vec![usize::MAX; (full + 1) * goals];
    for j in 0..goals {
        best[(1 << j) * goals + j] = m.get(0, j + 1);
    }
    for set in 1..=full {
        for last in 0..goals {
            let c = best[set * goals + last];
            if set & (1 << last) == 0 || !c.is_finite() {
                continue;
            }
            for next in 0..goals {
                if set & (1 << next) != 0 {
                    continue;
                }
                let to = (set | 1 << next) * goals + next;
                let cand = c + m.get(last + 1, next + 1);
                if cand < best[to] {
                    best[to] = cand;
                    parent[to] = last;
                }
            }
        }
    }
    let mut last = (0..goals).min_by(|&a, &b| best[full * goals + a].total_cmp(&best[full * goals + b])).expect("goals");
    let mut set = full;
    let mut order = Vec::with_capacity(goals);
    while last != usize::MAX {
        order.push(last + 1);
        let prev = parent[set * goals + last];
        set &= !(1 << last);
        last = prev;
    }
    order.reverse();
    let cost = path_cost(m, &order);
    Tour { order, cost }
}

fn local_search(m: &CostMatrix, start: Tour) -> Tour {
    let n = m.size();
    if n <= 3 {
        return start;
    }
    let mut budget = 50 * n * n;
    let Tour { mut order, mut cost } = start;
    let mut scratch = Vec::with_capacity(order.len());
    // each pass returns after its first accepted move, or false once the
    // neighbourhood is exhausted or the attempt budget runs out
    while or_opt_pass(m, &mut order, &mut cost, &mut scratch, &mut budget)
        || two_opt_pass(m, &mut order, &mut cost, &mut scratch, &mut budget)
        || exchange_pass(m, &mut order, &mut cost, &mut scratch, &mut budget)
    {}
    Tour { order, cost }
}

/// Swaps two goals. Returns after the first accepted move.
fn exchange_pass(m: &CostMatrix, order: &mut Vec<usize>, cost: &mut f64, scratch: &mut Vec<usize>, budget: &mut usize) -> bool {
    let len = order.len();
    for i in 0..len {
        for j in (i + 2)..len {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            scratch.clear();
            scratch.extend_from_slice(order);
            scratch.swap(i, j);
            let c = path_cost(m, scratch);
            if improves(c, *cost) {
                order.clone_from(scratch);
                *cost = c;
                return true;
            }
        }
    }
    false
}

/// Moves a segment of 1..=3 goals to another position, keeping its
/// direction. Returns after the first accepted move.
fn or_opt_pass(m: &CostMatrix, order: &mut Vec<usize>, cost: &mut f64, scratch: &mut Vec<usize>, budget: &mut usize) -> bool {
    let len = order.len();
    for seg_len in 1..=3usize.min(len.saturating_sub(1)) {
        for start in 0..=(len - seg_len) {
            for insert in 0..=(len - seg_len) {
                if insert == start {
                    continue;
                }
                if *budget == 0 {
                    return false;
                }
                *budget -= 1;
                scratch.clear();
                let rest: Vec<usize> = order[..start].iter().chain(&order[start + seg_len..]).copied().collect();
                scratch.extend_from_slice(&rest[..insert]);
                scratch.extend_from_slice(&order[start..start + seg_len]);
                scratch.extend_from_slice(&rest[insert..]);
                let c = path_cost(m, scratch);
                if improves(c, *cost) {
                    order.clone_from(scratch);
                    *cost = c;
                    return true;
                }
            }
        }
    }
    false
}

/// Reverses `order[i..=j]`; every directed edge in and around the span is
/// re-evaluated because the matrix is asymmetric.
fn two_opt_pass(m: &CostMatrix, order: &mut Vec<usize>, cost: &mut f64, scratch: &mut Vec<usize>, budget: &mut usize) -> bool {
    let len = order.len();
    for i in 0..len {
        for j in (i + 1)..len {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            scratch.clear();
            scratch.extend_from_slice(order);
            scratch[i..=j].reverse();
            let c = path_cost(m, scratch);
            if improves(c, *cost) {
                order.clone_from(scratch);
                *cost = c;
                return true;
            }
        }
    }
    false
}

/// Exact optimum by enumerating all `(m-1)!` orders in lexicographic order;
/// the first optimal order wins ties.
pub fn brute_force_open_tour(m: &CostMatrix) -> Result<Tour, TspError> {
    let n = m.size();
    if n > BRUTE_FORCE_LIMIT {
        return Err(TspError::SizeLimit(n));
    }
    let mut perm: Vec<usize> = (1..n).collect();
    let mut best = Tour { cost: path_cost(m, &perm), order: perm.clone() };
    while next_permutation(&mut perm) {
        let c = path_cost(m, &perm);
        if c < best.cost {
            best = Tour { order: perm.clone(), cost: c };
        }
    }
    Ok(best)
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).expect("successor exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}
