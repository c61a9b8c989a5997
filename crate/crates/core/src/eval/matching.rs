//! One-to-one matching of predicted and ground-truth edge pixels within a
//! distance tolerance.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Matching counts for one binarized map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Counts {
    pub fn new(true_pos: usize, false_pos: usize, false_neg: usize) -> Self {
        Self {
            true_pos,
            false_pos,
            false_neg,
        }
    }

    /// Precision, 1 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        let d = self.true_pos + self.false_pos;
        if d == 0 { 1.0 } else { self.true_pos as f64 / d as f64 }
    }

    /// Recall, 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        let d = self.true_pos + self.false_neg;
        if d == 0 { 1.0 } else { self.true_pos as f64 / d as f64 }
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts::new(self.true_pos + o.true_pos, self.false_pos + o.false_pos, self.false_neg + o.false_neg)
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

/// Result of [`correspond`]; `pairs` holds `(pred index, gt index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    pub counts: Counts,
    pub pairs: Vec<(usize, usize)>,
}

/// Matching radius in pixels: `tolerance × diagonal`, rounded half up, at
/// least 1.
pub fn match_radius(tolerance: f64, height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((tolerance * diag + 0.5).floor() as usize).max(1)
}

/// Offsets within Euclidean distance `radius`, nearest first.
fn disc(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    v.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));
    v
}

/// Maximum-cardinality matching between `pred` and `gt` pixels at distance
/// at most `radius`, via Hopcroft–Karp.
pub fn correspond(pred: &[(usize, usize)], gt: &[(usize, usize)], radius: usize) -> Correspondence {
    let adj = feasible_pairs(pred, gt, radius);
    let pairs = hopcroft_karp(&adj, gt.len());
    let tp = pairs.len();
    Correspondence {
        counts: Counts::new(tp, pred.len() - tp, gt.len() - tp),
        pairs,
    }
}

fn feasible_pairs(pred: &[(usize, usize)], gt: &[(usize, usize)], radius: usize) -> Vec<Vec<usize>> {
    if pred.is_empty() || gt.is_empty() {
        return vec![Vec::new(); pred.len()];
    }
    let h = gt.iter().chain(pred).map(|p| p.0).max().unwrap_or(0) + 1;
    let w = gt.iter().chain(pred).map(|p| p.1).max().unwrap_or(0) + 1;
    let mut lookup = vec![usize::MAX; h * w];
    for (j, &(y, x)) in gt.iter().enumerate() {
        lookup[y * w + x] = j;
    }
    let offsets = disc(radius);
    pred.iter()
        .map(|&(y, x)| {
            offsets
                .iter()
                .filter_map(|&(dy, dx)| {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy < 0 || xx < 0 || yy as usize >= h || xx as usize >= w {
                        return None;
                    }
                    let j = lookup[yy as usize * w + xx as usize];
                    (j != usize::MAX).then_some(j)
                })
                .collect()
        })
        .collect()
}

const FREE: usize = usize::MAX;

/// Hopcroft–Karp over a left-side adjacency list.
pub fn hopcroft_karp(adj: &[Vec<usize>], n_right: usize) -> Vec<(usize, usize)> {
    let n_left = adj.len();
    let mut left_match = vec![FREE; n_left];
    let mut right_match = vec![FREE; n_right];
    let mut dist = vec![0usize; n_left];
    let mut queue = VecDeque::new();
    loop {
        // Layer the graph from every free left vertex.
        queue.clear();
        let mut found = false;
        for u in 0..n_left {
            if left_match[u] == FREE {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = FREE;
            }
        }
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let m = right_match[v];
                if m == FREE {
                    found = true;
                } else if dist[m] == FREE {
                    dist[m] = dist[u] + 1;
                    queue.push_back(m);
                }
            }
        }
        if !found {
            break;
        }
        let mut next = vec![0usize; n_left];
        for u in 0..n_left {
            if left_match[u] == FREE {
                augment(u, adj, &mut left_match, &mut right_match, &mut dist, &mut next);
            }
        }
    }
    left_match
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v != FREE)
        .map(|(u, &v)| (u, v))
        .collect()
}

/// Iterative layered DFS from free vertex `root`.
fn augment(
    root: usize,
    adj: &[Vec<usize>],
    left_match: &mut [usize],
    right_match: &mut [usize],
    dist: &mut [usize],
    next: &mut [usize],
) -> bool {
    let mut stack = vec![root];
    while let Some(&u) = stack.last() {
        if next[u] == adj[u].len() {
            dist[u] = FREE;
            stack.pop();
            continue;
        }
        let v = adj[u][next[u]];
        let m = right_match[v];
        if m == FREE {
            // Flip the alternating path held on the stack.
            let mut v = v;
            while let Some(u) = stack.pop() {
                let prev = left_match[u];
                left_match[u] = v;
                right_match[v] = u;
                v = prev;
            }
            return true;
        }
        if dist[m] != FREE && dist[m] == dist[u] + 1 {
            stack.push(m);
        } else {
            next[u] += 1;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_rounds_half_up() {
        assert_eq!(match_radius(0.0075, 64, 64), 1);
        assert_eq!(match_radius(0.5 / 5.0, 3, 4), 1);
        assert_eq!(match_radius(0.25, 6, 8), 3);
        assert_eq!(match_radius(0.011, 321, 481), 6);
    }

    #[test]
    fn empty_sets() {
        let c = correspond(&[], &[(1, 1)], 2);
        assert_eq!(c.counts, Counts::new(0, 0, 1));
        assert_eq!(c.counts.precision(), 1.0);
        assert_eq!(correspond(&[(0, 0)], &[], 2).counts, Counts::new(0, 1, 0));
    }

    #[test]
    fn needs_augmenting_path() {
        // Greedy pairs p0-g0 and leaves p1 stranded; the maximum is 2.
        let adj = vec![vec![0, 1], vec![0]];
        let m = hopcroft_karp(&adj, 2);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn diagonal_is_outside_unit_radius() {
        assert_eq!(correspond(&[(0, 0)], &[(1, 1)], 1).counts.true_pos, 0);
        assert_eq!(correspond(&[(0, 0)], &[(1, 1)], 2).counts.true_pos, 1);
    }
}
