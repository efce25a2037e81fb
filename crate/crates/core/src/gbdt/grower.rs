//! Leaf-wise (best-first) growth of a single regression tree on gradients.

use std::ops::Range;

use super::binning::BinMapper;
use super::histogram::{best_split, BinStats, BinnedData, Histogram, SplitCandidate, SplitConstraints};
use super::tree::{Tree, TreeNode};

pub(crate) struct GrowConfig {
    pub num_leaves: usize,
    pub max_depth: i32,
    pub learning_rate: f64,
    pub constraints: SplitConstraints,
}

struct Leaf {
    node: usize,
    rows: Range<usize>,
    stats: BinStats,
    depth: usize,
    hist: Option<Histogram>,
    best: Option<SplitCandidate>,
}

/// A grown tree plus, for every leaf, the slice of `rows` it owns.
pub(crate) struct GrownTree {
    pub tree: Tree,
    pub leaves: Vec<(Range<usize>, f64)>,
}

pub(crate) struct Grower<'a> {
    pub mapper: &'a BinMapper,
    pub data: &'a BinnedData,
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub active: &'a [bool],
    pub config: &'a GrowConfig,
}

impl Grower<'_> {
    fn can_split(&self, count: u32, depth: usize) -> bool {
        let min = self.config.constraints.min_data_in_leaf.max(1);
        count >= 2 * min && (self.config.max_depth <= 0 || depth < self.config.max_depth as usize)
    }

    fn make_leaf(&self, node: usize, rows: Range<usize>, stats: BinStats, depth: usize, hist: Histogram) -> Leaf {
        let (hist, best) = if self.can_split(stats.count, depth) {
            let best = best_split(self.mapper, &hist, stats, self.active, &self.config.constraints);
            // A leaf with no admissible split never needs its histogram again.
            (best.is_some().then_some(hist), best)
        } else {
            (None, None)
        };
        Leaf {
            node,
            rows,
            stats,
            depth,
            hist,
            best,
        }
    }

    /// Grows one tree. `rows` must hold every training row index; on return
    /// it is permuted so that each leaf owns a contiguous range.
    pub fn grow(&self, rows: &mut [u32]) -> GrownTree {
        let mut root_stats = BinStats::default();
        for &r in rows.iter() {
            root_stats += BinStats {
                grad: self.grad[r as usize],
                hess: self.hess[r as usize],
                count: 1,
            };
        }
        let root_hist = Histogram::build(self.mapper, self.data, rows, self.grad, self.hess, self.active);
        let mut nodes = vec![TreeNode::Leaf {
            value: 0.0,
            count: rows.len(),
        }];
        let mut leaves = vec![self.make_leaf(0, 0..rows.len(), root_stats, 0, root_hist)];
        let mut scratch: Vec<u32> = Vec::with_capacity(rows.len());

        while leaves.len() < self.config.num_leaves {
            let mut pick: Option<usize> = None;
            for (i, leaf) in leaves.iter().enumerate() {
                if let Some(b) = &leaf.best {
                    if pick.is_none_or(|p| b.gain > leaves[p].best.as_ref().unwrap().gain) {
                        pick = Some(i);
                    }
                }
            }
            let Some(index) = pick else { break };
            let parent = &mut leaves[index];
            let split = parent.best.take().expect("picked leaf has a split");
            let parent_hist = parent.hist.take().expect("splittable leaf keeps its histogram");
            let range = parent.rows.clone();
            let depth = parent.depth;
            let parent_node = parent.node;

            // Stable partition of the leaf's rows.
            let column = &self.data.columns[split.feature];
            scratch.clear();
            let mut write = range.start;
            for i in range.clone() {
                let r = rows[i];
                let bin = column[r as usize];
                let left = if bin == 0 {
                    split.default_left
                } else {
                    split.rule.goes_left(bin)
                };
                if left {
                    rows[write] = r;
                    write += 1;
                } else {
                    scratch.push(r);
                }
            }
            rows[write..range.end].copy_from_slice(&scratch);
            debug_assert_eq!(write - range.start, split.left.count as usize);
            let left_rows = range.start..write;
            let right_rows = write..range.end;

            let (left_hist, right_hist) = if left_rows.len() <= right_rows.len() {
                let small = Histogram::build(
                    self.mapper,
                    self.data,
                    &rows[left_rows.clone()],
                    self.grad,
                    self.hess,
                    self.active,
                );
                let large = parent_hist.subtract(&small);
                (small, large)
            } else {
                let small = Histogram::build(
                    self.mapper,
                    self.data,
                    &rows[right_rows.clone()],
                    self.grad,
                    self.hess,
                    self.active,
                );
                let large = parent_hist.subtract(&small);
                (large, small)
            };

            let left_node = nodes.len();
            let right_node = left_node + 1;
            nodes.push(TreeNode::Leaf {
                value: 0.0,
                count: left_rows.len(),
            });
            nodes.push(TreeNode::Leaf {
                value: 0.0,
                count: right_rows.len(),
            });
            nodes[parent_node] = TreeNode::Internal {
                feature: split.feature,
                rule: split.rule.clone(),
                default_left: split.default_left,
                left: left_node,
                right: right_node,
                gain: split.gain,
                count: range.len(),
            };

            leaves[index] = self.make_leaf(left_node, left_rows, split.left, depth + 1, left_hist);
            leaves.push(self.make_leaf(right_node, right_rows, split.right, depth + 1, right_hist));
        }

        let lambda = self.config.constraints.lambda_l2;
        let mut out = Vec::with_capacity(leaves.len());
        for leaf in &leaves {
            let value = -leaf.stats.grad / (leaf.stats.hess + lambda) * self.config.learning_rate;
            nodes[leaf.node] = TreeNode::Leaf {
                value,
                count: leaf.rows.len(),
            };
            out.push((leaf.rows.clone(), value));
        }
        GrownTree {
            tree: Tree { nodes },
            leaves: out,
        }
    }
}
