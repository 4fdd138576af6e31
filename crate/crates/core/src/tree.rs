//! The search-space partition tree.
//!
//! Nodes live in an arena and refer to samples by index into the datasets
//! the tree owns, so routing a sample never copies it. Deleted nodes leave a
//! hole; ids are never reused within one tree.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::TaskDataset;
use crate::error::{Error, Result};
use crate::partition::{fit_classifier, kmeans_two, label_good_bad, Classifier, ClassifierKind, RegionPath, Side, Sign};
use crate::similarity::{weight_for_rank, SimilarityConfig, SimilarityState};

/// Which samples drive splitting decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Source samples only; potentials are pooled source means.
    Prelearn,
    /// Target samples only; potentials mix weighted sources and the target.
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcbMode {
    /// The potential stands in for the whole exploitation term.
    #[default]
    Potential,
    /// The potential is divided by the visit count, as a value sum would be.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterFeatures {
    /// Location and normalized objective.
    #[default]
    PointAndValue,
    PointOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// A node splits only when it holds more than this many stage samples.
    pub theta: usize,
    pub gamma: f64,
    pub cp: f64,
    pub ucb_mode: UcbMode,
    pub cluster_features: ClusterFeatures,
    pub classifier: ClassifierKind,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            theta: 10,
            gamma: 0.99,
            cp: 0.1,
            ucb_mode: UcbMode::Potential,
            cluster_features: ClusterFeatures::PointAndValue,
            classifier: ClassifierKind::LogisticRegression,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Present iff the node is internal; its good side is the left child.
    pub classifier: Option<Classifier>,
    pub path: RegionPath,
    /// Per source task, indices of that task's samples inside the node.
    pub source_pools: Vec<Vec<usize>>,
    pub target_pool: Vec<usize>,
    pub n_visits: usize,
    pub potential: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.left.is_none()
    }

    pub fn depth(&self) -> usize {
        self.path.depth()
    }

    pub fn n_source(&self) -> usize {
        self.source_pools.iter().map(Vec::len).sum()
    }

    pub fn n_target(&self) -> usize {
        self.target_pool.len()
    }
}

/// Source term plus target term, with the source term decayed by
/// `gamma^(t-1)`. Each entry of `sources` is `(weight, mean y)` for a task
/// with samples in the node; an empty slice or zero total weight gives a
/// zero source term, and a missing target mean counts as zero.
pub fn potential_value(sources: &[(f64, f64)], target_mean: Option<f64>, gamma: f64, t: usize) -> f64 {
    let wsum: f64 = sources.iter().map(|(w, _)| w).sum();
    let source_term = if wsum > 0.0 {
        sources.iter().map(|(w, y)| w * y).sum::<f64>() / wsum
    } else {
        0.0
    };
    let decay = gamma.powi(t.saturating_sub(1).min(i32::MAX as usize) as i32);
    decay * source_term + target_mean.unwrap_or(0.0)
}

/// Upper confidence score of a child with `n_node` samples under a parent
/// with `n_parent`. An empty child scores infinity.
pub fn ucb_score(potential: f64, n_parent: usize, n_node: usize, cp: f64, mode: UcbMode) -> f64 {
    if n_node == 0 {
        return f64::INFINITY;
    }
    let n = n_node as f64;
    let exploit = match mode {
        UcbMode::Potential => potential,
        UcbMode::Literal => potential / n,
    };
    let explore = if n_parent > 0 {
        2.0 * cp * (2.0 * (n_parent as f64).ln() / n).sqrt()
    } else {
        0.0
    };
    exploit + explore
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: usize,
    pub parent: Option<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub depth: usize,
    pub potential: f64,
    pub n_visits: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub classifier: Option<Classifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub root: usize,
    /// Live nodes in breadth-first order.
    pub nodes: Vec<NodeSnapshot>,
}

struct Split {
    classifier: Classifier,
}

#[derive(Debug, Clone)]
pub struct PartitionTree {
    config: TreeConfig,
    weighting: SimilarityConfig,
    nodes: Vec<Option<TreeNode>>,
    root: usize,
    sources: Vec<TaskDataset>,
    target: TaskDataset,
    similarity: Option<SimilarityState>,
    reconstructions: usize,
}

impl PartitionTree {
    /// A root-only tree holding every source sample.
    pub fn new(
        config: TreeConfig,
        weighting: SimilarityConfig,
        sources: Vec<TaskDataset>,
        target: TaskDataset,
    ) -> Result<Self> {
        if let Some(s) = sources.iter().find(|s| s.dim() != target.dim()) {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: s.dim(),
            });
        }
        let source_pools: Vec<Vec<usize>> = sources.iter().map(|s| (0..s.len()).collect()).collect();
        let target_pool: Vec<usize> = (0..target.len()).collect();
        let root = TreeNode {
            id: 0,
            parent: None,
            left: None,
            right: None,
            classifier: None,
            path: RegionPath::root(),
            n_visits: source_pools.iter().map(Vec::len).sum::<usize>() + target_pool.len(),
            source_pools,
            target_pool,
            potential: 0.0,
        };
        let mut tree = Self {
            config,
            weighting,
            nodes: vec![Some(root)],
            root: 0,
            sources,
            target,
            similarity: None,
            reconstructions: 0,
        };
        let stage = tree.default_stage();
        tree.refresh_potential(0, stage);
        Ok(tree)
    }

    /// Builds the tree from source data alone, splitting every node with
    /// more than `theta` clusterable source samples.
    pub fn prelearn(
        config: TreeConfig,
        weighting: SimilarityConfig,
        sources: Vec<TaskDataset>,
        target: TaskDataset,
    ) -> Result<Self> {
        let mut tree = Self::new(config, weighting, sources, target)?;
        tree.expand_recursively(tree.root, Stage::Prelearn);
        Ok(tree)
    }

    fn default_stage(&self) -> Stage {
        if self.target.is_empty() {
            Stage::Prelearn
        } else {
            Stage::Optimize
        }
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn root_id(&self) -> usize {
        self.root
    }

    pub fn root(&self) -> &TreeNode {
        self.node(self.root)
    }

    /// Panics if `id` was deleted.
    pub fn node(&self, id: usize) -> &TreeNode {
        self.nodes[id].as_ref().expect("node id refers to a live node")
    }

    fn node_mut(&mut self, id: usize) -> &mut TreeNode {
        self.nodes[id].as_mut().expect("node id refers to a live node")
    }

    pub fn contains_node(&self, id: usize) -> bool {
        self.nodes.get(id).is_some_and(Option::is_some)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.nodes().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.breadth_first()
            .into_iter()
            .filter(|&id| self.node(id).is_leaf())
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.nodes().map(TreeNode::depth).max().unwrap_or(0)
    }

    pub fn sources(&self) -> &[TaskDataset] {
        &self.sources
    }

    pub fn target(&self) -> &TaskDataset {
        &self.target
    }

    /// Number of target evaluations so far.
    pub fn iteration(&self) -> usize {
        self.target.len()
    }

    pub fn similarity(&self) -> Option<&SimilarityState> {
        self.similarity.as_ref()
    }

    /// Subtrees deleted by reconstruction since the tree was built.
    pub fn reconstructions(&self) -> usize {
        self.reconstructions
    }

    pub fn breadth_first(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            out.push(id);
            let n = self.node(id);
            queue.extend(n.left);
            queue.extend(n.right);
        }
        out
    }

    /// Ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Pooled mean normalized objective of every source sample in the node;
    /// zero for a node without source samples.
    pub fn potential_prelearn(&self, id: usize) -> f64 {
        let node = self.node(id);
        let (sum, count) = node
            .source_pools
            .iter()
            .enumerate()
            .flat_map(|(k, pool)| pool.iter().map(move |&i| (k, i)))
            .fold((0.0, 0usize), |(s, c), (k, i)| (s + self.sources[k].sample(i).y_norm, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// `(weight, mean y)` for every source task with samples in the node.
    /// Tasks are re-ranked among the contributors by the global order.
    pub fn node_source_terms(&self, id: usize) -> Vec<(usize, f64, f64)> {
        let node = self.node(id);
        let contributing: Vec<usize> = (0..self.sources.len())
            .filter(|&k| !node.source_pools[k].is_empty())
            .collect();
        let weights: Vec<f64> = match &self.similarity {
            Some(state) => {
                let n_m = contributing.len();
                state
                    .local_ranks(&contributing)
                    .into_iter()
                    .map(|r| weight_for_rank(r, n_m, &self.weighting))
                    .collect()
            }
            None => vec![1.0; contributing.len()],
        };
        contributing
            .iter()
            .zip(weights)
            .map(|(&k, w)| {
                let pool = &node.source_pools[k];
                let mean = pool.iter().map(|&i| self.sources[k].sample(i).y_norm).sum::<f64>()
                    / pool.len() as f64;
                (k, w, mean)
            })
            .collect()
    }

    pub fn target_mean(&self, id: usize) -> Option<f64> {
        let pool = &self.node(id).target_pool;
        if pool.is_empty() {
            None
        } else {
            Some(pool.iter().map(|&i| self.target.sample(i).y_norm).sum::<f64>() / pool.len() as f64)
        }
    }

    /// Potential under the current weights with `t` target evaluations.
    pub fn potential_optimize(&self, id: usize) -> f64 {
        let terms: Vec<(f64, f64)> = self
            .node_source_terms(id)
            .into_iter()
            .map(|(_, w, y)| (w, y))
            .collect();
        potential_value(&terms, self.target_mean(id), self.config.gamma, self.iteration())
    }

    fn compute_potential(&self, id: usize, stage: Stage) -> f64 {
        match stage {
            Stage::Prelearn => self.potential_prelearn(id),
            Stage::Optimize => self.potential_optimize(id),
        }
    }

    fn refresh_potential(&mut self, id: usize, stage: Stage) {
        let p = self.compute_potential(id, stage);
        self.node_mut(id).potential = p;
    }

    pub fn ucb(&self, id: usize) -> f64 {
        let node = self.node(id);
        let n_parent = node.parent.map_or(node.n_visits, |p| self.node(p).n_visits);
        ucb_score(node.potential, n_parent, node.n_visits, self.config.cp, self.config.ucb_mode)
    }

    /// Descends from the root by UCB, preferring the left child on ties.
    pub fn select_leaf(&self) -> usize {
        let mut cur = self.root;
        loop {
            let node = self.node(cur);
            match (node.left, node.right) {
                (Some(l), Some(r)) => {
                    cur = if self.ucb(r) > self.ucb(l) { r } else { l };
                }
                _ => return cur,
            }
        }
    }

    fn stage_samples(&self, id: usize, stage: Stage) -> Vec<(Vec<f64>, f64)> {
        let node = self.node(id);
        match stage {
            Stage::Prelearn => node
                .source_pools
                .iter()
                .enumerate()
                .flat_map(|(k, pool)| {
                    pool.iter().map(move |&i| {
                        let s = self.sources[k].sample(i);
                        (s.x.clone(), s.y_norm)
                    })
                })
                .collect(),
            Stage::Optimize => node
                .target_pool
                .iter()
                .map(|&i| {
                    let s = self.target.sample(i);
                    (s.x.clone(), s.y_norm)
                })
                .collect(),
        }
    }

    fn split_seed(&self, id: usize, count: usize) -> u64 {
        // splitmix64 finalizer over (seed, node, count)
        let mut z = self
            .config
            .seed
            .wrapping_add((id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add((count as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn try_split(&self, id: usize, stage: Stage) -> Option<Split> {
        let samples = self.stage_samples(id, stage);
        if samples.len() <= self.config.theta {
            return None;
        }
        let features: Vec<Vec<f64>> = samples
            .iter()
            .map(|(x, y)| match self.config.cluster_features {
                ClusterFeatures::PointAndValue => x.iter().copied().chain(std::iter::once(*y)).collect(),
                ClusterFeatures::PointOnly => x.clone(),
            })
            .collect();
        let clusters = kmeans_two(&features, self.split_seed(id, samples.len()))?;
        let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
        let good_label = label_good_bad(&ys, &clusters.labels);
        let good: Vec<bool> = clusters.labels.iter().map(|&l| l == good_label).collect();
        let xs: Vec<Vec<f64>> = samples.into_iter().map(|(x, _)| x).collect();
        let (classifier, acc) = fit_classifier(&xs, &good, self.config.classifier).ok()?;
        if acc <= 0.5 {
            return None;
        }
        let n_good = xs.iter().filter(|x| classifier.is_good(x)).count();
        if n_good == 0 || n_good == xs.len() {
            return None;
        }
        Some(Split { classifier })
    }

    /// Whether the node holds more than `theta` stage samples that cluster
    /// into two groups a classifier can tell apart.
    pub fn is_splitable(&self, id: usize, stage: Stage) -> bool {
        self.node(id).is_leaf() && self.try_split(id, stage).is_some()
    }

    fn route(&self, id: usize, classifier: &Classifier) -> [(Vec<Vec<usize>>, Vec<usize>); 2] {
        let node = self.node(id);
        let mut good_src = vec![Vec::new(); self.sources.len()];
        let mut bad_src = vec![Vec::new(); self.sources.len()];
        for (k, pool) in node.source_pools.iter().enumerate() {
            for &i in pool {
                if classifier.is_good(&self.sources[k].sample(i).x) {
                    good_src[k].push(i);
                } else {
                    bad_src[k].push(i);
                }
            }
        }
        let (good_tgt, bad_tgt): (Vec<usize>, Vec<usize>) = node
            .target_pool
            .iter()
            .partition(|&&i| classifier.is_good(&self.target.sample(i).x));
        [(good_src, good_tgt), (bad_src, bad_tgt)]
    }

    fn attach_children(&mut self, id: usize, classifier: Classifier, stage: Stage) -> (usize, usize) {
        let [good, bad] = self.route(id, &classifier);
        let parent_path = self.node(id).path.clone();
        let mut ids = [0usize; 2];
        for (slot, ((src, tgt), side)) in [(good, Side::Good), (bad, Side::Bad)].into_iter().enumerate() {
            let child_id = self.nodes.len();
            let n_visits = src.iter().map(Vec::len).sum::<usize>() + tgt.len();
            self.nodes.push(Some(TreeNode {
                id: child_id,
                parent: Some(id),
                left: None,
                right: None,
                classifier: None,
                path: parent_path.child(&classifier, side),
                source_pools: src,
                target_pool: tgt,
                n_visits,
                potential: 0.0,
            }));
            self.refresh_potential(child_id, stage);
            ids[slot] = child_id;
        }
        let node = self.node_mut(id);
        node.classifier = Some(classifier);
        node.left = Some(ids[0]);
        node.right = Some(ids[1]);
        (ids[0], ids[1])
    }

    /// Splits a splitable leaf. The child with the higher potential always
    /// ends up on the left, as the good side of the stored classifier.
    pub fn expand(&mut self, id: usize, stage: Stage) -> Option<(usize, usize)> {
        if !self.node(id).is_leaf() {
            return None;
        }
        let Split { classifier } = self.try_split(id, stage)?;
        let (l, r) = self.attach_children(id, classifier.clone(), stage);
        if self.node(l).potential >= self.node(r).potential {
            return Some((l, r));
        }
        self.delete_subtree(id);
        let mut flipped = classifier;
        flipped.good_side = match flipped.good_side {
            Sign::Positive => Sign::Negative,
            Sign::Negative => Sign::Positive,
        };
        let (l, r) = self.attach_children(id, flipped, stage);
        // boundary points can move when the side flips; keep whichever
        // order scores better
        if self.node(l).potential < self.node(r).potential {
            let node = self.node_mut(id);
            std::mem::swap(&mut node.left, &mut node.right);
            return Some((r, l));
        }
        Some((l, r))
    }

    /// Expands `id` and its descendants while they stay splitable.
    pub fn expand_recursively(&mut self, id: usize, stage: Stage) {
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if let Some((l, r)) = self.expand(cur, stage) {
                stack.push(r);
                stack.push(l);
            }
        }
    }

    /// Removes every descendant of `id`, leaving it a leaf. Its pools
    /// already hold the union of the deleted pools.
    fn delete_subtree(&mut self, id: usize) {
        let mut stack: Vec<usize> = {
            let node = self.node_mut(id);
            node.classifier = None;
            [node.left.take(), node.right.take()].into_iter().flatten().collect()
        };
        while let Some(cur) = stack.pop() {
            if let Some(n) = self.nodes[cur].take() {
                stack.extend(n.left);
                stack.extend(n.right);
            }
        }
    }

    /// Appends a target evaluation (normalized coordinates) to the target
    /// dataset without placing it in the tree. Returns its sample index.
    pub fn add_target_sample(&mut self, x: Vec<f64>, y_raw: f64) -> usize {
        self.target.push(x, y_raw)
    }

    /// Records target sample `sample` in `leaf` and all its ancestors.
    pub fn backpropagate(&mut self, leaf: usize, sample: usize) {
        for id in self.path_to(leaf) {
            let node = self.node_mut(id);
            node.target_pool.push(sample);
            node.n_visits += 1;
        }
    }

    /// Installs the similarity state and recomputes every node's potential
    /// for the optimization stage.
    pub fn update_all_potentials(&mut self, state: Option<SimilarityState>) {
        self.similarity = state;
        for id in self.breadth_first() {
            self.refresh_potential(id, Stage::Optimize);
        }
    }

    /// Deletes every subtree whose right child outscores its left child and
    /// re-expands the emptied node while it is splitable. Returns the number
    /// of subtrees rebuilt.
    pub fn treeify(&mut self, stage: Stage) -> usize {
        let mut rebuilt = 0;
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            let node = self.node(id);
            let (Some(l), Some(r)) = (node.left, node.right) else {
                continue;
            };
            if self.node(l).potential < self.node(r).potential {
                self.delete_subtree(id);
                self.expand_recursively(id, stage);
                rebuilt += 1;
            }
            let node = self.node(id);
            queue.extend(node.left);
            queue.extend(node.right);
        }
        self.reconstructions += rebuilt;
        rebuilt
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        let nodes = self
            .breadth_first()
            .into_iter()
            .map(|id| {
                let n = self.node(id);
                NodeSnapshot {
                    id,
                    parent: n.parent,
                    left: n.left,
                    right: n.right,
                    depth: n.depth(),
                    potential: n.potential,
                    n_visits: n.n_visits,
                    n_source: n.n_source(),
                    n_target: n.n_target(),
                    classifier: n.classifier.clone(),
                }
            })
            .collect();
        TreeSnapshot {
            root: self.root,
            nodes,
        }
    }

    /// Structural invariants that must hold between iterations. Returns a
    /// description of every violation found.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let root = self.root();
        if root.n_target() != self.target.len() {
            out.push(format!(
                "root holds {} target samples, dataset has {}",
                root.n_target(),
                self.target.len()
            ));
        }
        for (k, s) in self.sources.iter().enumerate() {
            if root.source_pools[k].len() != s.len() {
                out.push(format!("root holds {} samples of source {k}, dataset has {}", root.source_pools[k].len(), s.len()));
            }
        }
        let leaf_total: usize = self.leaves().iter().map(|&l| self.node(l).n_visits).sum();
        if leaf_total != root.n_visits {
            out.push(format!("leaves hold {leaf_total} samples, root {}", root.n_visits));
        }
        for id in self.breadth_first() {
            let n = self.node(id);
            if n.n_visits != n.n_source() + n.n_target() {
                out.push(format!("node {id}: visit count {} != pool size", n.n_visits));
            }
            if n.is_leaf() != n.classifier.is_none() || n.left.is_some() != n.right.is_some() {
                out.push(format!("node {id}: leaf status and classifier disagree"));
            }
            let (Some(l), Some(r)) = (n.left, n.right) else {
                continue;
            };
            let (ln, rn) = (self.node(l), self.node(r));
            if ln.potential < rn.potential {
                out.push(format!("node {id}: left potential {} < right {}", ln.potential, rn.potential));
            }
            if ln.parent != Some(id) || rn.parent != Some(id) {
                out.push(format!("node {id}: child parent links broken"));
            }
            if !is_partition(&n.target_pool, &ln.target_pool, &rn.target_pool) {
                out.push(format!("node {id}: target pool is not split by its children"));
            }
            for k in 0..self.sources.len() {
                if !is_partition(&n.source_pools[k], &ln.source_pools[k], &rn.source_pools[k]) {
                    out.push(format!("node {id}: source {k} pool is not split by its children"));
                }
            }
        }
        out
    }
}

fn is_partition(whole: &[usize], a: &[usize], b: &[usize]) -> bool {
    let mut joined: Vec<usize> = a.iter().chain(b).copied().collect();
    let mut whole = whole.to_vec();
    joined.sort_unstable();
    whole.sort_unstable();
    joined == whole
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{RawRecord, SearchDomain, TaskRole};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn source(id: &str, points: Vec<(Vec<f64>, f64)>) -> TaskDataset {
        let dim = points[0].0.len();
        let recs: Vec<RawRecord> = points.into_iter().map(|(x, y)| RawRecord { x, y }).collect();
        TaskDataset::from_records(id, TaskRole::Source, &SearchDomain::unit(dim), &recs).unwrap()
    }

    fn bimodal(n: usize, seed: u64) -> TaskDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|i| {
                let (c, y) = if i % 2 == 0 { (0.2, 1.0) } else { (0.8, 0.0) };
                let x = vec![c + 0.05 * rng.random::<f64>(), c + 0.05 * rng.random::<f64>()];
                (x, y + 0.01 * rng.random::<f64>())
            })
            .collect();
        source("bimodal", pts)
    }

    fn empty_target(dim: usize) -> TaskDataset {
        TaskDataset::new("target", TaskRole::Target, dim)
    }

    #[test]
    fn potential_equation_examples() {
        assert!((potential_value(&[(1.0, 0.6)], Some(0.3), 0.99, 1) - 0.9).abs() < 1e-12);
        assert!((potential_value(&[], Some(0.4), 0.3, 1) - 0.4).abs() < 1e-12);
        let p = potential_value(&[(1.0, 0.8), (3.0, 0.4)], Some(0.1), 0.5, 3);
        assert!((p - 0.225).abs() < 1e-12);
        assert_eq!(potential_value(&[(1.0, 0.5)], None, 0.0, 2), 0.0);
    }

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb_score(0.37, 20, 10, 0.0, UcbMode::Potential), 0.37);
        let v = ucb_score(0.5, 20, 10, 0.1, UcbMode::Potential);
        let expected = 0.5 + 0.2 * (2.0 * 20f64.ln() / 10.0).sqrt();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.6548).abs() < 1e-4);
        assert!(ucb_score(0.5, 55, 5, 0.1, UcbMode::Potential) > ucb_score(0.5, 55, 50, 0.1, UcbMode::Potential));
        assert!((ucb_score(0.5, 20, 10, 0.0, UcbMode::Literal) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn prelearn_small_dataset_is_root_only() {
        let s = source("s", (0..5).map(|i| (vec![i as f64 / 5.0, 0.5], i as f64)).collect());
        let tree = PartitionTree::prelearn(TreeConfig::default(), SimilarityConfig::default(), vec![s], empty_target(2)).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.select_leaf(), tree.root_id());
    }

    #[test]
    fn prelearn_bimodal_splits_with_good_left() {
        let tree = PartitionTree::prelearn(
            TreeConfig::default(),
            SimilarityConfig::default(),
            vec![bimodal(40, 1)],
            empty_target(2),
        )
        .unwrap();
        assert!(tree.depth() >= 1);
        assert!(tree.invariant_violations().is_empty(), "{:?}", tree.invariant_violations());
        for n in tree.nodes().filter(|n| !n.is_leaf()) {
            let (l, r) = (tree.node(n.left.unwrap()), tree.node(n.right.unwrap()));
            assert!(tree.potential_prelearn(l.id) >= tree.potential_prelearn(r.id));
        }
    }

    #[test]
    fn pooled_prelearn_potential() {
        let a = source("a", vec![(vec![0.1], 0.0), (vec![0.2], 1.0)]);
        let b = source("b", vec![(vec![0.3], 2.0), (vec![0.4], 4.0), (vec![0.5], 3.0)]);
        let tree = PartitionTree::new(TreeConfig::default(), SimilarityConfig::default(), vec![a, b], empty_target(1)).unwrap();
        // normalized ys {0, 1} and {0, 1, 0.5}
        assert!((tree.potential_prelearn(0) - 2.5 / 5.0).abs() < 1e-12);
        assert_eq!(tree.root().potential, tree.potential_prelearn(0));
    }

    #[test]
    fn backpropagation_touches_the_path_only() {
        let mut tree = PartitionTree::prelearn(
            TreeConfig::default(),
            SimilarityConfig::default(),
            vec![bimodal(60, 2)],
            empty_target(2),
        )
        .unwrap();
        let leaf = tree.select_leaf();
        let path = tree.path_to(leaf);
        let before: Vec<usize> = tree.nodes().map(|n| n.n_visits).collect();
        let idx = tree.add_target_sample(vec![0.2, 0.2], 1.0);
        tree.backpropagate(leaf, idx);
        let after: Vec<usize> = tree.nodes().map(|n| n.n_visits).collect();
        let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();
        assert_eq!(changed, path.len());
        assert_eq!(tree.root().n_target(), 1);
    }

    #[test]
    fn treeify_rebuilds_violating_subtree() {
        let mut tree = PartitionTree::prelearn(
            TreeConfig::default(),
            SimilarityConfig::default(),
            vec![bimodal(40, 3)],
            empty_target(2),
        )
        .unwrap();
        let root = tree.root_id();
        let (l, r) = (tree.root().left.unwrap(), tree.root().right.unwrap());
        tree.node_mut(r).potential = tree.node(l).potential + 1.0;
        let rebuilt = tree.treeify(Stage::Prelearn);
        assert!(rebuilt >= 1);
        assert!(tree.invariant_violations().is_empty());
        assert_eq!(tree.root().n_source(), 40);
        assert_eq!(tree.root_id(), root);
        // deleted ids are not reused
        assert!(!tree.contains_node(r) || tree.node(r).parent == Some(root));
    }

    #[test]
    fn treeify_is_idempotent() {
        let mut tree = PartitionTree::prelearn(
            TreeConfig::default(),
            SimilarityConfig::default(),
            vec![bimodal(80, 4)],
            empty_target(2),
        )
        .unwrap();
        tree.treeify(Stage::Prelearn);
        let once = tree.snapshot();
        assert_eq!(tree.treeify(Stage::Prelearn), 0);
        assert_eq!(tree.snapshot(), once);
    }
}
