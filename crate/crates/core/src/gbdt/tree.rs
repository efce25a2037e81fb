use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Set of categorical bins, stored as a 256-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinSet([u64; 4]);

impl BinSet {
    pub fn insert(&mut self, bin: u8) {
        self.0[(bin >> 6) as usize] |= 1 << (bin & 63);
    }

    #[inline]
    pub fn contains(&self, bin: u8) -> bool {
        self.0[(bin >> 6) as usize] & (1 << (bin & 63)) != 0
    }

    pub fn bins(&self) -> Vec<u8> {
        (0..=255u8).filter(|&b| self.contains(b)).collect()
    }
}

impl FromIterator<u8> for BinSet {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        let mut set = BinSet::default();
        iter.into_iter().for_each(|b| set.insert(b));
        set
    }
}

impl Serialize for BinSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.bins().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<u8>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// Non-missing bins `1..=threshold_bin` go left. `threshold` is the raw
    /// upper edge of that bin, kept for reading the model.
    Numeric { threshold_bin: u8, threshold: f64 },
    /// Listed bins go left, every other non-missing bin goes right.
    Categorical { left_bins: BinSet },
}

impl SplitRule {
    /// Routing for a non-missing bin.
    #[inline]
    pub fn goes_left(&self, bin: u8) -> bool {
        match self {
            SplitRule::Numeric { threshold_bin, .. } => bin <= *threshold_bin,
            SplitRule::Categorical { left_bins } => left_bins.contains(bin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        rule: SplitRule,
        /// Where rows with a missing value (bin 0) go.
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
        count: usize,
    },
    Leaf {
        /// Additive log-odds contribution, already scaled by the learning rate.
        value: f64,
        count: usize,
    },
}

/// Binary tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Index of the leaf a row reaches, given a lookup from feature to bin.
    #[inline]
    pub fn leaf_index(&self, bin_of: impl Fn(usize) -> u8) -> usize {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { .. } => return node,
                TreeNode::Internal {
                    feature,
                    rule,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let bin = bin_of(*feature);
                    let go_left = if bin == 0 { *default_left } else { rule.goes_left(bin) };
                    node = if go_left { *left } else { *right };
                }
            }
        }
    }

    #[inline]
    pub fn predict(&self, bin_of: impl Fn(usize) -> u8) -> f64 {
        match &self.nodes[self.leaf_index(bin_of)] {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Internal { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn internal_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Internal { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Leaf { count, .. } => Some(*count),
                TreeNode::Internal { .. } => None,
            })
            .collect()
    }
}
