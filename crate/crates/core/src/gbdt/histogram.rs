//! Gradient histograms and best-split search over them.

use std::ops::{Add, AddAssign, Sub};

use rayon::prelude::*;

use super::binning::{BinMapper, FeatureBins};
use super::tree::{BinSet, SplitRule};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinStats {
    pub grad: f64,
    pub hess: f64,
    pub count: u32,
}

impl Add for BinStats {
    type Output = BinStats;
    fn add(self, o: BinStats) -> BinStats {
        BinStats {
            grad: self.grad + o.grad,
            hess: self.hess + o.hess,
            count: self.count + o.count,
        }
    }
}

impl AddAssign for BinStats {
    fn add_assign(&mut self, o: BinStats) {
        *self = *self + o;
    }
}

impl Sub for BinStats {
    type Output = BinStats;
    fn sub(self, o: BinStats) -> BinStats {
        BinStats {
            grad: self.grad - o.grad,
            hess: self.hess - o.hess,
            count: self.count - o.count,
        }
    }
}

/// Row-major-per-feature binned matrix: `columns[feature][row]`.
#[derive(Debug, Clone)]
pub struct BinnedData {
    pub n_rows: usize,
    pub columns: Vec<Vec<u8>>,
}

/// Flat per-leaf histogram; feature `f` owns `bins[offsets[f]..offsets[f + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    offsets: Vec<usize>,
    bins: Vec<BinStats>,
}

impl Histogram {
    pub fn zeros(mapper: &BinMapper) -> Self {
        let mut offsets = Vec::with_capacity(mapper.features.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for f in &mapper.features {
            total += f.n_bins();
            offsets.push(total);
        }
        Self {
            offsets,
            bins: vec![BinStats::default(); total],
        }
    }

    pub fn feature(&self, f: usize) -> &[BinStats] {
        &self.bins[self.offsets[f]..self.offsets[f + 1]]
    }

    /// Accumulates the given rows. Each feature is summed sequentially in row
    /// order, so the result does not depend on how features are scheduled.
    pub fn build(
        mapper: &BinMapper,
        data: &BinnedData,
        rows: &[u32],
        grad: &[f64],
        hess: &[f64],
        active: &[bool],
    ) -> Self {
        let mut hist = Self::zeros(mapper);
        let ordered: Vec<(f64, f64)> = rows.iter().map(|&r| (grad[r as usize], hess[r as usize])).collect();
        let mut slices = Vec::with_capacity(mapper.features.len());
        let mut rest = hist.bins.as_mut_slice();
        for w in hist.offsets.windows(2) {
            let (head, tail) = rest.split_at_mut(w[1] - w[0]);
            slices.push(head);
            rest = tail;
        }
        slices
            .into_par_iter()
            .enumerate()
            .filter(|(f, _)| active[*f])
            .for_each(|(f, slice)| {
                let column = &data.columns[f];
                for (&r, &(g, h)) in rows.iter().zip(&ordered) {
                    let bin = &mut slice[column[r as usize] as usize];
                    bin.grad += g;
                    bin.hess += h;
                    bin.count += 1;
                }
            });
        hist
    }

    /// `self - other`, bin by bin.
    pub fn subtract(&self, other: &Histogram) -> Histogram {
        Histogram {
            offsets: self.offsets.clone(),
            bins: self.bins.iter().zip(&other.bins).map(|(a, b)| *a - *b).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub rule: SplitRule,
    pub default_left: bool,
    pub gain: f64,
    pub left: BinStats,
    pub right: BinStats,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitConstraints {
    pub lambda_l2: f64,
    pub min_data_in_leaf: u32,
}

#[inline]
fn score(s: BinStats, lambda: f64) -> f64 {
    s.grad * s.grad / (s.hess + lambda)
}

/// Tracks the best of a stream of (left, right) partitions. Only strictly
/// better gains replace the incumbent, so the earliest candidate wins ties.
struct Best<'a> {
    parent: BinStats,
    parent_score: f64,
    c: &'a SplitConstraints,
    found: Option<(f64, BinStats, BinStats, bool, usize)>,
}

impl<'a> Best<'a> {
    fn new(parent: BinStats, c: &'a SplitConstraints) -> Self {
        Self {
            parent,
            parent_score: score(parent, c.lambda_l2),
            c,
            found: None,
        }
    }

    /// Offers the partition with `left` non-missing stats, trying the
    /// missing bin on each side.
    fn offer(&mut self, left: BinStats, missing: BinStats, position: usize) {
        let right = self.parent - missing - left;
        for (l, r, default_left) in [(left + missing, right, true), (left, right + missing, false)] {
            let min = self.c.min_data_in_leaf.max(1);
            if l.count < min || r.count < min {
                continue;
            }
            let gain = score(l, self.c.lambda_l2) + score(r, self.c.lambda_l2) - self.parent_score;
            if gain > 0.0 && self.found.is_none_or(|f| gain > f.0) {
                self.found = Some((gain, l, r, default_left, position));
            }
        }
    }
}

pub fn best_split_for_feature(
    feature: usize,
    bins: &FeatureBins,
    hist: &[BinStats],
    parent: BinStats,
    c: &SplitConstraints,
) -> Option<SplitCandidate> {
    let missing = hist[0];
    let mut best = Best::new(parent, c);
    match bins {
        FeatureBins::Numeric { .. } => {
            let mut left = BinStats::default();
            for (b, stats) in hist.iter().enumerate().take(hist.len() - 1).skip(1) {
                if stats.count == 0 {
                    continue;
                }
                left += *stats;
                best.offer(left, missing, b);
            }
            let (gain, l, r, default_left, b) = best.found?;
            Some(SplitCandidate {
                feature,
                rule: SplitRule::Numeric {
                    threshold_bin: b as u8,
                    threshold: bins.upper_edge(b as u8),
                },
                default_left,
                gain,
                left: l,
                right: r,
            })
        }
        FeatureBins::Categorical { .. } => {
            let mut order: Vec<usize> = (1..hist.len()).filter(|&b| hist[b].count > 0).collect();
            order.sort_by(|&a, &b| {
                let ra = hist[a].grad / hist[a].hess;
                let rb = hist[b].grad / hist[b].hess;
                ra.total_cmp(&rb).then(a.cmp(&b))
            });
            let mut left = BinStats::default();
            for (k, &b) in order.iter().enumerate().take(order.len().saturating_sub(1)) {
                left += hist[b];
                best.offer(left, missing, k + 1);
            }
            let (gain, l, r, default_left, k) = best.found?;
            Some(SplitCandidate {
                feature,
                rule: SplitRule::Categorical {
                    left_bins: order[..k].iter().map(|&b| b as u8).collect::<BinSet>(),
                },
                default_left,
                gain,
                left: l,
                right: r,
            })
        }
    }
}

/// Best split over all active features; ties go to the lowest feature index.
pub fn best_split(
    mapper: &BinMapper,
    hist: &Histogram,
    parent: BinStats,
    active: &[bool],
    c: &SplitConstraints,
) -> Option<SplitCandidate> {
    let per_feature: Vec<Option<SplitCandidate>> = (0..mapper.features.len())
        .into_par_iter()
        .map(|f| {
            if !active[f] {
                return None;
            }
            best_split_for_feature(f, &mapper.features[f], hist.feature(f), parent, c)
        })
        .collect();
    let mut best: Option<SplitCandidate> = None;
    for cand in per_feature.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| cand.gain > b.gain) {
            best = Some(cand);
        }
    }
    best
}
