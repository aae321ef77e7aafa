//! pUCT tree search over a learned latent model.
//!
//! Many independent trees advance in lockstep: every simulation step
//! descends each tree to a leaf, then a single batched model call expands
//! all of those leaves at once.

use serde::{Deserialize, Serialize};

use crate::data::{argmax, Segment};
use crate::error::{Error, Result};
use crate::improve::{n_step_target, select_rows, window_latents, ImprovementTargets, DEFAULT_DISCOUNT};
use crate::math::Tensor;
use crate::model::{LatentModel, LatentState, NetworkWeights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub simulations: usize,
    /// Deepest node that may be expanded; 0 means unlimited.
    pub max_depth: usize,
    pub c1: f64,
    pub c2: f64,
    pub discount: f64,
    /// Visit-count temperature for policy targets.
    pub temperature: f64,
    pub normalize_q: bool,
    pub unvisited: UnvisitedValue,
}

/// Value estimate given to an edge before its first visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnvisitedValue {
    /// Zero, the bottom of the normalized range once two values are known.
    Zero,
    /// The parent's predicted value, so an untried action ranks above any
    /// tried action that turned out worse than the parent.
    ParentValue,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            simulations: 4,
            max_depth: 0,
            c1: 1.25,
            c2: 19652.0,
            discount: DEFAULT_DISCOUNT,
            temperature: 1.0,
            normalize_q: true,
            unvisited: UnvisitedValue::ParentValue,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.simulations == 0 || self.c1 <= 0.0 || self.c2 <= 0.0 || self.temperature <= 0.0 {
            return Err(Error::Config(format!("invalid search settings {self:?}")));
        }
        Ok(())
    }
}

/// Running bounds of every edge value seen in one tree, plus node values
/// when those stand in for unvisited edges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMaxStats {
    pub min: f64,
    pub max: f64,
}

impl Default for MinMaxStats {
    fn default() -> Self {
        MinMaxStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl MinMaxStats {
    pub fn update(&mut self, q: f64) {
        self.min = self.min.min(q);
        self.max = self.max.max(q);
    }

    /// Maps `q` into `[0, 1]`; returns `q` unchanged until two distinct values were seen.
    pub fn normalize(&self, q: f64) -> f64 {
        if self.max > self.min {
            (q - self.min) / (self.max - self.min)
        } else {
            q
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchNode {
    pub latent: Vec<f32>,
    pub prior: Vec<f32>,
    /// Value predicted at this node.
    pub value: f64,
    /// Reward predicted on the edge into this node; zero at the root.
    pub reward: f64,
    pub depth: usize,
    pub children: Vec<Option<usize>>,
    pub visits: Vec<u32>,
    pub value_sum: Vec<f64>,
}

impl SearchNode {
    fn new(latent: Vec<f32>, prior: Vec<f32>, value: f64, reward: f64, depth: usize) -> Self {
        let actions = prior.len();
        SearchNode {
            latent,
            prior,
            value,
            reward,
            depth,
            children: vec![None; actions],
            visits: vec![0; actions],
            value_sum: vec![0.0; actions],
        }
    }

    pub fn total_visits(&self) -> u32 {
        self.visits.iter().sum()
    }

    /// Mean backed-up return of edge `a`; zero before the first visit.
    pub fn q(&self, a: usize) -> f64 {
        if self.visits[a] == 0 {
            0.0
        } else {
            self.value_sum[a] / self.visits[a] as f64
        }
    }
}

/// pUCT choice at `node`; ties go to the lowest action index.
pub fn select_action_puct(node: &SearchNode, stats: &MinMaxStats, config: &SearchConfig) -> usize {
    let total = node.total_visits() as f64;
    let exploration = total.sqrt() * (config.c1 + ((total + config.c2 + 1.0) / config.c2).ln());
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for a in 0..node.prior.len() {
        let raw = match (node.visits[a], config.unvisited) {
            (0, UnvisitedValue::Zero) => None,
            (0, UnvisitedValue::ParentValue) => Some(node.value),
            _ => Some(node.q(a)),
        };
        let q = match raw {
            None => 0.0,
            Some(q) if config.normalize_q => stats.normalize(q),
            Some(q) => q,
        };
        let score = q + node.prior[a] as f64 * exploration / (1.0 + node.visits[a] as f64);
        if score > best_score {
            best = a;
            best_score = score;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
    pub stats: MinMaxStats,
}

impl SearchTree {
    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn root_visits(&self) -> &[u32] {
        &self.nodes[0].visits
    }

    pub fn root_q(&self) -> Vec<f64> {
        let root = self.root();
        (0..root.prior.len()).map(|a| root.q(a)).collect()
    }

    /// `Σ_a n(a)/N · Q(a)` at the root.
    pub fn root_value(&self) -> f64 {
        let root = self.root();
        let total = root.total_visits() as f64;
        (0..root.prior.len())
            .map(|a| root.visits[a] as f64 / total * root.q(a))
            .sum()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn policy_target(&self, temperature: f64) -> Result<Vec<f32>> {
        mcts_policy_target(self.root_visits(), temperature)
    }

    fn backup(&mut self, path: &[(usize, usize)], leaf_value: f64, discount: f64) {
        let mut g = leaf_value;
        for &(node, a) in path.iter().rev() {
            let child = self.nodes[node].children[a].expect("visited edge has a child");
            g = self.nodes[child].reward + discount * g;
            let n = &mut self.nodes[node];
            n.visits[a] += 1;
            n.value_sum[a] += g;
            let q = n.q(a);
            self.stats.update(q);
        }
    }
}

enum Leaf {
    Expand { parent: usize, action: usize },
    Bootstrap,
}

/// Searches from every row of `roots` in lockstep.
pub fn run_search_batch<M: LatentModel + ?Sized>(model: &M, roots: &Tensor, config: &SearchConfig) -> Vec<SearchTree> {
    let (priors, values) = model.predict_rows(roots);
    let mut trees: Vec<SearchTree> = priors
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(r, (prior, value))| {
            let mut stats = MinMaxStats::default();
            if config.unvisited == UnvisitedValue::ParentValue {
                stats.update(value);
            }
            SearchTree {
                nodes: vec![SearchNode::new(roots.row(r).to_vec(), prior, value, 0.0, 0)],
                stats,
            }
        })
        .collect();
    let width = roots.cols();

    for _ in 0..config.simulations {
        let mut paths = Vec::with_capacity(trees.len());
        let mut expand_rows = Vec::new();
        let mut expand_actions = Vec::new();
        for tree in &trees {
            let mut node = 0;
            let mut path = Vec::new();
            let leaf = loop {
                let current = &tree.nodes[node];
                if config.max_depth > 0 && current.depth >= config.max_depth {
                    break Leaf::Bootstrap;
                }
                let a = select_action_puct(current, &tree.stats, config);
                path.push((node, a));
                match current.children[a] {
                    Some(child) => node = child,
                    None => break Leaf::Expand { parent: node, action: a },
                }
            };
            if let Leaf::Expand { parent, action } = leaf {
                expand_rows.extend_from_slice(&tree.nodes[parent].latent);
                expand_actions.push(action);
            }
            paths.push((path, leaf, node));
        }

        let expanded = if expand_actions.is_empty() {
            None
        } else {
            let latents = Tensor::new([expand_actions.len(), width], expand_rows).expect("latent rows");
            let (rewards, next) = model.step_rows(&latents, &expand_actions);
            let (priors, values) = model.predict_rows(&next);
            Some((rewards, next, priors, values))
        };

        let mut e = 0;
        for (tree, (path, leaf, node)) in trees.iter_mut().zip(paths) {
            let leaf_value = match leaf {
                Leaf::Bootstrap => tree.nodes[node].value,
                Leaf::Expand { parent, action } => {
                    let (rewards, next, priors, values) = expanded.as_ref().expect("expansion batch");
                    let depth = tree.nodes[parent].depth + 1;
                    let child = SearchNode::new(next.row(e).to_vec(), priors[e].clone(), values[e], rewards[e], depth);
                    tree.nodes.push(child);
                    let id = tree.nodes.len() - 1;
                    tree.nodes[parent].children[action] = Some(id);
                    if config.unvisited == UnvisitedValue::ParentValue {
                        tree.stats.update(values[e]);
                    }
                    e += 1;
                    values[e - 1]
                }
            };
            tree.backup(&path, leaf_value, config.discount);
        }
    }
    trees
}

pub fn run_search<M: LatentModel + ?Sized>(model: &M, root: &LatentState, config: &SearchConfig) -> SearchTree {
    let roots = Tensor::new([1, root.0.len()], root.0.clone()).expect("latent row");
    run_search_batch(model, &roots, config).remove(0)
}

/// `p(a) = n(a)^{1/T} / Σ_b n(b)^{1/T}`.
pub fn mcts_policy_target(visits: &[u32], temperature: f64) -> Result<Vec<f32>> {
    if visits.iter().all(|&n| n == 0) {
        return Err(Error::Config("policy target needs at least one root visit".into()));
    }
    let max = *visits.iter().max().expect("non-empty") as f64;
    let powered: Vec<f64> = visits
        .iter()
        .map(|&n| (n as f64 / max).powf(1.0 / temperature))
        .collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.iter().map(|p| (p / total) as f32).collect())
}

/// n-step value target for window index `j`, bootstrapped with the root value
/// of a fresh search at `o_{t+j+n}`.
pub fn mcts_value_target<M: LatentModel + ?Sized>(
    target: &NetworkWeights,
    model: &M,
    segment: &Segment,
    j: usize,
    n: usize,
    config: &SearchConfig,
) -> Result<f64> {
    if n == 0 || j + n >= segment.len() {
        return Err(Error::Config(format!("index {j} with {n} TD steps does not fit the window")));
    }
    let bootstrap = if segment.in_episode(j + n) {
        run_search(model, &target.represent(segment.observation(j + n))?, config).root_value()
    } else {
        0.0
    };
    Ok(n_step_target(&segment.rewards, j, n, config.discount, bootstrap))
}

/// Searches from every in-episode observation of every window with the target
/// network. Policy targets are root visit distributions, value targets are
/// n-step returns bootstrapped with the visit-weighted root value.
pub fn mcts_targets_batch(
    target: &NetworkWeights,
    segments: &[Segment],
    unroll: usize,
    td_steps: usize,
    config: &SearchConfig,
) -> Result<Vec<ImprovementTargets>> {
    config.validate()?;
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let stride = segments[0].len();
    if stride < unroll + td_steps + 1 {
        return Err(Error::Config("window shorter than K + n + 1".into()));
    }
    let latents = window_latents(target, segments)?;
    let roots: Vec<usize> = segments
        .iter()
        .enumerate()
        .flat_map(|(b, s)| (0..stride).filter(|&i| s.in_episode(i)).map(move |i| b * stride + i))
        .collect();
    let trees = run_search_batch(target, &select_rows(&latents, roots.iter().copied()), config);
    let mut tree_at = vec![None; segments.len() * stride];
    for (tree, &row) in trees.iter().zip(&roots) {
        tree_at[row] = Some(tree);
    }

    let actions = target.architecture().action_count;
    segments
        .iter()
        .enumerate()
        .map(|(b, seg)| {
            let mut t = ImprovementTargets {
                policy: Vec::with_capacity(unroll + 1),
                value: Vec::with_capacity(unroll + 1),
                behavior_advantage: vec![0.0; unroll + 1],
                policy_mask: Vec::with_capacity(unroll + 1),
            };
            for j in 0..=unroll {
                let policy = match tree_at[b * stride + j] {
                    Some(tree) => tree.policy_target(config.temperature)?,
                    None => vec![1.0 / actions as f32; actions],
                };
                t.policy.push(policy);
                t.policy_mask.push(seg.in_episode(j));
                let bootstrap = tree_at[b * stride + j + td_steps].map_or(0.0, SearchTree::root_value);
                t.value.push(n_step_target(&seg.rewards, j, td_steps, config.discount, bootstrap));
            }
            Ok(t)
        })
        .collect()
}

/// Greedy search-based actions for a batch of observations.
pub fn mzu_act_batch(weights: &NetworkWeights, observations: &Tensor, config: &SearchConfig) -> Result<Vec<usize>> {
    let roots = weights.represent_batch(observations)?;
    Ok(run_search_batch(weights, &roots, config)
        .iter()
        .map(|tree| {
            let visits: Vec<f32> = tree.root_visits().iter().map(|&n| n as f32).collect();
            argmax(&visits)
        })
        .collect())
}

pub fn mzu_act(weights: &NetworkWeights, observation: &[f32], config: &SearchConfig) -> Result<usize> {
    let obs = Tensor::new([1, observation.len()], observation.to_vec())?;
    Ok(mzu_act_batch(weights, &obs, config)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;
    use crate::improve::{one_step_q, value_target};
    use crate::model::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node(prior: Vec<f32>, visits: Vec<u32>, q: Vec<f64>) -> SearchNode {
        let mut n = SearchNode::new(vec![], prior, 0.0, 0.0, 0);
        n.value_sum = q.iter().zip(&visits).map(|(q, &v)| q * v as f64).collect();
        n.visits = visits;
        n
    }

    #[test]
    fn puct_cases() {
        let cfg = SearchConfig::default();
        let stats = MinMaxStats::default();
        assert_eq!(select_action_puct(&node(vec![0.2, 0.8], vec![0, 0], vec![0.0, 0.0]), &stats, &cfg), 0);
        assert_eq!(select_action_puct(&node(vec![0.5, 0.5], vec![3, 1], vec![0.4, 0.4]), &stats, &cfg), 1);
        assert_eq!(select_action_puct(&node(vec![0.8, 0.2], vec![1, 1], vec![0.0, 0.0]), &stats, &cfg), 0);
    }

    #[test]
    fn visit_targets() {
        assert_eq!(mcts_policy_target(&[3, 1], 1.0).unwrap(), vec![0.75, 0.25]);
        assert_eq!(mcts_policy_target(&[2, 2], 0.3).unwrap(), vec![0.5, 0.5]);
        let cold = mcts_policy_target(&[3, 1], 0.01).unwrap();
        assert!(cold[0] > 0.999_999);
        assert!(mcts_policy_target(&[0, 0], 1.0).is_err());
    }

    fn net(seed: u64) -> NetworkWeights {
        NetworkWeights::new(Architecture::for_env(EnvId::MountainCar), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn root_visits_sum_to_budget_and_depth_is_capped() {
        let n = net(0);
        let s = n.represent(&[-0.5, 0.0, 0.0]).unwrap();
        for sims in 1..=12 {
            for depth in [0, 1, 2] {
                let cfg = SearchConfig {
                    simulations: sims,
                    max_depth: depth,
                    ..SearchConfig::default()
                };
                let tree = run_search(&n, &s, &cfg);
                assert_eq!(tree.root().total_visits() as usize, sims);
                if depth > 0 {
                    assert!(tree.max_depth() <= depth);
                }
            }
        }
        let one = run_search(&n, &s, &SearchConfig { simulations: 1, ..SearchConfig::default() });
        assert_eq!(one.nodes.len(), 2);
        assert_eq!(one.root_visits().iter().filter(|&&v| v == 1).count(), 1);
    }

    #[test]
    fn single_simulation_bootstrap_is_the_child_q() {
        let n = net(1);
        let s = n.represent(&[-0.4, 0.01, 0.1]).unwrap();
        let tree = run_search(&n, &s, &SearchConfig { simulations: 1, ..SearchConfig::default() });
        let a = tree.root_visits().iter().position(|&v| v == 1).unwrap();
        assert!((tree.root_value() - tree.root().q(a)).abs() < 1e-12);
    }

    #[test]
    fn depth_one_search_recovers_one_step_q() {
        let n = net(2);
        let s = n.represent(&[-0.3, -0.02, 0.5]).unwrap();
        let cfg = SearchConfig {
            simulations: 60,
            max_depth: 1,
            discount: 0.9,
            ..SearchConfig::default()
        };
        let tree = run_search(&n, &s, &cfg);
        for a in 0..3 {
            assert!(tree.root_visits()[a] > 0);
            assert!((tree.root().q(a) - one_step_q(&n, &s, a, 0.9)).abs() < 1e-5);
        }
    }

    #[test]
    fn batched_search_matches_single_searches() {
        let n = net(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs: Vec<f32> = (0..15).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let latents = n.represent_batch(&Tensor::new([5, 3], obs).unwrap()).unwrap();
        let cfg = SearchConfig {
            simulations: 7,
            ..SearchConfig::default()
        };
        let batch = run_search_batch(&n, &latents, &cfg);
        for (r, tree) in batch.iter().enumerate() {
            let single = run_search(&n, &LatentState(latents.row(r).to_vec()), &cfg);
            assert_eq!(tree.root_visits(), single.root_visits());
            assert_eq!(tree.root_q(), single.root_q());
        }
    }

    #[test]
    fn permuting_priors_permutes_targets() {
        struct Tilted(Vec<f32>);
        impl LatentModel for Tilted {
            fn action_count(&self) -> usize {
                self.0.len()
            }
            fn predict_rows(&self, l: &Tensor) -> (Vec<Vec<f32>>, Vec<f64>) {
                (vec![self.0.clone(); l.rows()], vec![0.5; l.rows()])
            }
            fn step_rows(&self, l: &Tensor, _: &[usize]) -> (Vec<f64>, Tensor) {
                (vec![0.0; l.rows()], l.clone())
            }
        }
        let cfg = SearchConfig {
            simulations: 9,
            ..SearchConfig::default()
        };
        let a = run_search(&Tilted(vec![0.1, 0.6, 0.3]), &LatentState(vec![0.0]), &cfg);
        let b = run_search(&Tilted(vec![0.1, 0.3, 0.6]), &LatentState(vec![0.0]), &cfg);
        let (pa, pb) = (a.policy_target(1.0).unwrap(), b.policy_target(1.0).unwrap());
        assert_eq!((pa[0], pa[1], pa[2]), (pb[0], pb[2], pb[1]));
    }

    #[test]
    fn zero_discount_value_target_is_first_reward() {
        let n = net(4);
        let mut tr = crate::data::Trajectory::new(3);
        for t in 0..9 {
            tr.push(&[-0.5, 0.0, t as f32 / 10.0], t % 3, t as f32);
        }
        let seg = Segment::cut(&tr, 0, 2, 8, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let cfg = SearchConfig {
            discount: 0.0,
            ..SearchConfig::default()
        };
        assert_eq!(mcts_value_target(&n, &n, &seg, 0, 3, &cfg).unwrap(), seg.rewards[0] as f64);
    }

    #[test]
    fn predicted_value_bootstrap_reproduces_one_step_target() {
        let n = net(6);
        let mut tr = crate::data::Trajectory::new(3);
        for t in 0..12 {
            tr.push(&[-0.5 + t as f32 * 0.01, 0.001, t as f32 / 12.0], t % 3, -1.0);
        }
        let seg = Segment::cut(&tr, 0, 1, 8, 3, &mut ChaCha8Rng::seed_from_u64(0));
        for j in 0..=5 {
            let predicted = n.predict(&n.represent(seg.observation(j + 3)).unwrap()).value;
            let injected = n_step_target(&seg.rewards, j, 3, 0.95, predicted);
            assert!((injected - value_target(&n, &seg, j, 3, 0.95).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn acting_is_repeatable_and_first_pick_with_one_simulation() {
        let n = net(5);
        let obs = [-0.45, 0.003, 0.2];
        let cfg = SearchConfig::default();
        let a = mzu_act(&n, &obs, &cfg).unwrap();
        assert_eq!(a, mzu_act(&n, &obs, &cfg).unwrap());
        let one = SearchConfig {
            simulations: 1,
            ..SearchConfig::default()
        };
        let root = run_search(&n, &n.represent(&obs).unwrap(), &SearchConfig { simulations: 0, ..one });
        let first = select_action_puct(root.root(), &root.stats, &one);
        assert_eq!(mzu_act(&n, &obs, &one).unwrap(), first);
    }
}
