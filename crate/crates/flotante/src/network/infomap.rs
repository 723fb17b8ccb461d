//! Two-level map-equation minimization.
//!
//! The random walker's visit rates come from a power iteration with uniform
//! teleportation; teleportation steps are not encoded (only link-following
//! flow enters and exits modules). The codelength of a partition M is
//!
//! ```text
//! L(M) = plogp(q) - sum_m plogp(enter_m) - sum_m plogp(exit_m)
//!        + sum_m plogp(exit_m + visit_m) - sum_a plogp(p_a)
//! ```
//!
//! with `q` the total module-entering flow and `plogp(x) = x log2 x`. The
//! optimizer runs Louvain-style node-moving passes, aggregates modules into
//! super-nodes and repeats until no move improves the codelength. All
//! randomness is the seeded visit order, so results are reproducible.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stats::plogp;

/// Teleportation probability of the stationary-distribution walk.
pub const TELEPORTATION: f64 = 0.15;

const CONVERGENCE: f64 = 1e-15;
const MIN_GAIN: f64 = 1e-13;

/// A directed graph reduced to stationary visit rates and link flows.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    visit: Vec<f64>,
    /// Link flows, self-loops excluded (they never cross a module border).
    out: Vec<Vec<(u32, f64)>>,
    inc: Vec<Vec<(u32, f64)>>,
    /// Constant node term of the map equation.
    node_term: f64,
}

impl FlowGraph {
    /// Compute flows for `n` nodes and directed weighted edges. Duplicate
    /// edges accumulate; self-loop weight counts toward out-strength (the
    /// walker follows it and stays put) but carries no border flow.
    pub fn build(n: usize, edges: &[(u32, u32, f64)], teleport: f64) -> FlowGraph {
        assert!(n > 0, "flow graph needs at least one node");
        // Sorted keys keep every floating-point sum order-deterministic.
        let mut weights: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for &(src, dst, w) in edges {
            debug_assert!(w > 0.0, "edge weights must be positive");
            *weights.entry((src, dst)).or_insert(0.0) += w;
        }
        let mut strength = vec![0.0f64; n];
        for (&(src, _), &w) in &weights {
            strength[src as usize] += w;
        }

        let visit = stationary_distribution(n, &weights, &strength, teleport);

        let mut out: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let mut inc: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for (&(src, dst), &w) in &weights {
            if src == dst {
                continue;
            }
            let s = src as usize;
            let flow = (1.0 - teleport) * visit[s] * w / strength[s];
            out[s].push((dst, flow));
            inc[dst as usize].push((src, flow));
        }
        for adj in out.iter_mut().chain(inc.iter_mut()) {
            adj.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let node_term = visit.iter().map(|&p| plogp(p)).sum();
        FlowGraph {
            visit,
            out,
            inc,
            node_term,
        }
    }

    pub fn len(&self) -> usize {
        self.visit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visit.is_empty()
    }

    pub fn visit_rates(&self) -> &[f64] {
        &self.visit
    }
}

fn stationary_distribution(
    n: usize,
    weights: &BTreeMap<(u32, u32), f64>,
    strength: &[f64],
    teleport: f64,
) -> Vec<f64> {
    let uniform = 1.0 / n as f64;
    let mut p = vec![uniform; n];
    let mut next = vec![0.0f64; n];
    for _ in 0..100_000 {
        let dangling: f64 = (0..n).filter(|&i| strength[i] == 0.0).map(|i| p[i]).sum();
        let base = teleport * uniform + (1.0 - teleport) * dangling * uniform;
        next.iter_mut().for_each(|x| *x = base);
        for (&(src, dst), &w) in weights {
            let s = src as usize;
            next[dst as usize] += (1.0 - teleport) * p[s] * w / strength[s];
        }
        let delta: f64 = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if delta < CONVERGENCE {
            break;
        }
    }
    p
}

/// Result of the optimizer on an indexed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPartition {
    pub assignment: Vec<u32>,
    pub codelength: f64,
    pub num_modules: usize,
    /// Codelength after every node-moving pass, across all aggregation
    /// levels. Non-increasing by construction; asserted in tests.
    pub pass_codelengths: Vec<f64>,
}

/// Direct evaluation of the two-level map equation for an arbitrary
/// assignment. Independent of the optimizer's incremental bookkeeping; used
/// to cross-check it.
pub fn evaluate_codelength(graph: &FlowGraph, assignment: &[u32]) -> f64 {
    assert_eq!(assignment.len(), graph.len());
    let modules = assignment.iter().map(|&m| m as usize).max().unwrap_or(0) + 1;
    let mut enter = vec![0.0f64; modules];
    let mut exit = vec![0.0f64; modules];
    let mut visit = vec![0.0f64; modules];
    for (i, &m) in assignment.iter().enumerate() {
        visit[m as usize] += graph.visit[i];
        for &(j, flow) in &graph.out[i] {
            if assignment[j as usize] != m {
                exit[m as usize] += flow;
                enter[assignment[j as usize] as usize] += flow;
            }
        }
    }
    let q: f64 = enter.iter().sum();
    let mut length = plogp(q) - graph.node_term;
    for m in 0..modules {
        length -= plogp(enter[m]);
        length -= plogp(exit[m]);
        length += plogp(exit[m] + visit[m]);
    }
    length
}

#[derive(Debug, Clone, Copy, Default)]
struct ModuleStats {
    enter: f64,
    exit: f64,
    visit: f64,
    size: u32,
}

/// One aggregation level: nodes are either original nodes or whole modules.
struct Level {
    visit: Vec<f64>,
    out: Vec<Vec<(u32, f64)>>,
    inc: Vec<Vec<(u32, f64)>>,
}

struct Optimizer<'a> {
    level: &'a Level,
    node_term: f64,
    assignment: Vec<u32>,
    stats: Vec<ModuleStats>,
    q: f64,
    spl_enter: f64,
    spl_exit: f64,
    spl_total: f64,
}

impl<'a> Optimizer<'a> {
    fn new(level: &'a Level, node_term: f64) -> Optimizer<'a> {
        let n = level.visit.len();
        let mut stats = Vec::with_capacity(n);
        for i in 0..n {
            stats.push(ModuleStats {
                enter: level.inc[i].iter().map(|e| e.1).sum(),
                exit: level.out[i].iter().map(|e| e.1).sum(),
                visit: level.visit[i],
                size: 1,
            });
        }
        let q = stats.iter().map(|s| s.enter).sum();
        let spl_enter = stats.iter().map(|s| plogp(s.enter)).sum();
        let spl_exit = stats.iter().map(|s| plogp(s.exit)).sum();
        let spl_total = stats.iter().map(|s| plogp(s.exit + s.visit)).sum();
        Optimizer {
            level,
            node_term,
            assignment: (0..n as u32).collect(),
            stats,
            q,
            spl_enter,
            spl_exit,
            spl_total,
        }
    }

    fn codelength(&self) -> f64 {
        plogp(self.q) - self.spl_enter - self.spl_exit + self.spl_total - self.node_term
    }

    /// Run node-moving passes until a full pass makes no move. Returns the
    /// codelength recorded after each pass and the total number of moves.
    fn optimize(&mut self, rng: &mut ChaCha8Rng, max_passes: usize) -> (Vec<f64>, usize) {
        let n = self.level.visit.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::new();
        let mut total_moves = 0usize;
        for _ in 0..max_passes {
            order.shuffle(rng);
            let mut moves = 0usize;
            for &node in &order {
                if self.try_move(node) {
                    moves += 1;
                }
            }
            history.push(self.codelength());
            total_moves += moves;
            if moves == 0 {
                break;
            }
        }
        (history, total_moves)
    }

    fn try_move(&mut self, node: usize) -> bool {
        let current = self.assignment[node];
        let p_node = self.level.visit[node];
        let mut flow_to: HashMap<u32, f64> = HashMap::new();
        let mut flow_from: HashMap<u32, f64> = HashMap::new();
        let mut out_total = 0.0;
        let mut in_total = 0.0;
        for &(j, f) in &self.level.out[node] {
            out_total += f;
            *flow_to.entry(self.assignment[j as usize]).or_insert(0.0) += f;
        }
        for &(j, f) in &self.level.inc[node] {
            in_total += f;
            *flow_from.entry(self.assignment[j as usize]).or_insert(0.0) += f;
        }

        let to_a = flow_to.get(&current).copied().unwrap_or(0.0);
        let from_a = flow_from.get(&current).copied().unwrap_or(0.0);
        let a = self.stats[current as usize];
        // Module A with the node removed.
        let a2 = ModuleStats {
            enter: (a.enter - (in_total - from_a) + to_a).max(0.0),
            exit: (a.exit - (out_total - to_a) + from_a).max(0.0),
            visit: (a.visit - p_node).max(0.0),
            size: a.size - 1,
        };

        // Candidate targets: modules adjacent through any flow, plus a fresh
        // singleton when the node is not already alone.
        let mut candidates: Vec<u32> = flow_to.keys().chain(flow_from.keys()).copied().collect();
        candidates.sort_unstable();
        candidates.dedup();
        candidates.retain(|&m| m != current);
        let fresh = if a.size > 1 {
            self.stats.iter().position(|s| s.size == 0).map(|m| m as u32)
        } else {
            None
        };
        if let Some(fresh) = fresh {
            candidates.push(fresh);
        }
        if candidates.is_empty() {
            return false;
        }

        let mut best: Option<(f64, u32, ModuleStats, ModuleStats)> = None;
        for &target in &candidates {
            let b = self.stats[target as usize];
            let to_b = flow_to.get(&target).copied().unwrap_or(0.0);
            let from_b = flow_from.get(&target).copied().unwrap_or(0.0);
            let b2 = ModuleStats {
                enter: (b.enter + (in_total - from_b) - to_b).max(0.0),
                exit: (b.exit + (out_total - to_b) - from_b).max(0.0),
                visit: b.visit + p_node,
                size: b.size + 1,
            };
            let dq = (a2.enter + b2.enter) - (a.enter + b.enter);
            let delta = plogp(self.q + dq) - plogp(self.q)
                - (plogp(a2.enter) + plogp(b2.enter) - plogp(a.enter) - plogp(b.enter))
                - (plogp(a2.exit) + plogp(b2.exit) - plogp(a.exit) - plogp(b.exit))
                + (plogp(a2.exit + a2.visit) + plogp(b2.exit + b2.visit)
                    - plogp(a.exit + a.visit)
                    - plogp(b.exit + b.visit));
            if delta < -MIN_GAIN && best.as_ref().is_none_or(|(d, ..)| delta < *d) {
                best = Some((delta, target, a2, b2));
            }
        }

        let Some((_, target, a2, b2)) = best else {
            return false;
        };
        let b = self.stats[target as usize];
        self.q += (a2.enter + b2.enter) - (a.enter + b.enter);
        self.spl_enter += plogp(a2.enter) + plogp(b2.enter) - plogp(a.enter) - plogp(b.enter);
        self.spl_exit += plogp(a2.exit) + plogp(b2.exit) - plogp(a.exit) - plogp(b.exit);
        self.spl_total += plogp(a2.exit + a2.visit) + plogp(b2.exit + b2.visit)
            - plogp(a.exit + a.visit)
            - plogp(b.exit + b.visit);
        self.stats[current as usize] = a2;
        self.stats[target as usize] = b2;
        self.assignment[node] = target;
        true
    }
}

/// Minimize the two-level map equation: seeded node-moving passes with
/// module aggregation until no move improves the codelength.
pub fn two_level_partition(
    graph: &FlowGraph,
    seed: u64,
    max_passes: usize,
) -> Result<IndexPartition> {
    if graph.is_empty() {
        return Err(Error::data("cannot partition an empty flow graph"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = Level {
        visit: graph.visit.clone(),
        out: graph.out.clone(),
        inc: graph.inc.clone(),
    };
    // assignment of original nodes to current top-level modules
    let mut assignment: Vec<u32> = (0..graph.len() as u32).collect();
    let mut pass_codelengths = Vec::new();
    let mut codelength;

    loop {
        let mut optimizer = Optimizer::new(&level, graph.node_term);
        let (history, moves) = optimizer.optimize(&mut rng, max_passes);
        codelength = optimizer.codelength();
        pass_codelengths.extend_from_slice(&history);

        // Renumber this level's modules densely.
        let mut remap: HashMap<u32, u32> = HashMap::new();
        for &m in &optimizer.assignment {
            let next = remap.len() as u32;
            remap.entry(m).or_insert(next);
        }
        let module_count = remap.len();
        let level_assignment: Vec<u32> =
            optimizer.assignment.iter().map(|m| remap[m]).collect();
        for slot in assignment.iter_mut() {
            *slot = level_assignment[*slot as usize];
        }
        if moves == 0 || module_count == level.visit.len() {
            break;
        }

        // Aggregate modules into super-nodes for the next round; intra-module
        // flow becomes a self-loop and is dropped (it never crosses a border
        // again).
        let mut visit = vec![0.0f64; module_count];
        for (i, &m) in level_assignment.iter().enumerate() {
            visit[m as usize] += level.visit[i];
        }
        let mut flows: HashMap<(u32, u32), f64> = HashMap::new();
        for (i, adj) in level.out.iter().enumerate() {
            let mi = level_assignment[i];
            for &(j, f) in adj {
                let mj = level_assignment[j as usize];
                if mi != mj {
                    *flows.entry((mi, mj)).or_insert(0.0) += f;
                }
            }
        }
        let mut out: Vec<Vec<(u32, f64)>> = vec![Vec::new(); module_count];
        let mut inc: Vec<Vec<(u32, f64)>> = vec![Vec::new(); module_count];
        let mut sorted: Vec<((u32, u32), f64)> = flows.into_iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        for ((src, dst), f) in sorted {
            out[src as usize].push((dst, f));
            inc[dst as usize].push((src, f));
        }
        level = Level { visit, out, inc };
    }

    // Order modules by descending visit mass, ties by smallest member index.
    let num_modules = assignment.iter().map(|&m| m as usize).max().unwrap_or(0) + 1;
    let mut mass = vec![0.0f64; num_modules];
    let mut first_member = vec![u32::MAX; num_modules];
    for (i, &m) in assignment.iter().enumerate() {
        mass[m as usize] += graph.visit[i];
        first_member[m as usize] = first_member[m as usize].min(i as u32);
    }
    let mut order: Vec<usize> = (0..num_modules).collect();
    order.sort_by(|&a, &b| {
        mass[b]
            .partial_cmp(&mass[a])
            .unwrap()
            .then(first_member[a].cmp(&first_member[b]))
    });
    let mut rank = vec![0u32; num_modules];
    for (new_id, &old) in order.iter().enumerate() {
        rank[old] = new_id as u32;
    }
    let assignment: Vec<u32> = assignment.iter().map(|&m| rank[m as usize]).collect();

    debug_assert!(
        (codelength - evaluate_codelength(graph, &assignment)).abs() < 1e-9,
        "incremental codelength drifted from direct evaluation"
    );
    Ok(IndexPartition {
        assignment,
        codelength,
        num_modules,
        pass_codelengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric_edges(pairs: &[(u32, u32)], w: f64) -> Vec<(u32, u32, f64)> {
        pairs
            .iter()
            .flat_map(|&(a, b)| [(a, b, w), (b, a, w)])
            .collect()
    }

    fn clique(offset: u32, size: u32) -> Vec<(u32, u32)> {
        let mut edges = Vec::new();
        for i in 0..size {
            for j in (i + 1)..size {
                edges.push((offset + i, offset + j));
            }
        }
        edges
    }

    #[test]
    fn single_node_has_zero_codelength() {
        let graph = FlowGraph::build(1, &[], TELEPORTATION);
        let partition = two_level_partition(&graph, 7, 100).unwrap();
        assert_eq!(partition.num_modules, 1);
        assert!(partition.codelength.abs() < 1e-12);
    }

    #[test]
    fn two_disconnected_cliques_split() {
        let mut pairs = clique(0, 4);
        pairs.extend(clique(4, 4));
        let edges = symmetric_edges(&pairs, 1.0);
        let graph = FlowGraph::build(8, &edges, TELEPORTATION);
        let partition = two_level_partition(&graph, 42, 100).unwrap();
        assert_eq!(partition.num_modules, 2);
        for i in 0..4 {
            assert_eq!(partition.assignment[i], partition.assignment[0]);
            assert_eq!(partition.assignment[4 + i], partition.assignment[4]);
        }
        assert_ne!(partition.assignment[0], partition.assignment[4]);
    }

    #[test]
    fn codelength_matches_direct_evaluation() {
        let mut pairs = clique(0, 5);
        pairs.extend(clique(5, 5));
        pairs.push((0, 5));
        let edges = symmetric_edges(&pairs, 1.0);
        let graph = FlowGraph::build(10, &edges, TELEPORTATION);
        let partition = two_level_partition(&graph, 3, 100).unwrap();
        let direct = evaluate_codelength(&graph, &partition.assignment);
        assert!((partition.codelength - direct).abs() < 1e-9);
    }

    #[test]
    fn passes_never_increase_codelength() {
        let mut pairs = clique(0, 5);
        pairs.extend(clique(5, 5));
        pairs.extend(clique(10, 5));
        pairs.push((0, 5));
        pairs.push((5, 10));
        pairs.push((10, 0));
        let edges = symmetric_edges(&pairs, 1.0);
        let graph = FlowGraph::build(15, &edges, TELEPORTATION);
        let partition = two_level_partition(&graph, 11, 100).unwrap();
        for w in partition.pass_codelengths.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "pass increased codelength: {w:?}");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut pairs = clique(0, 6);
        pairs.extend(clique(6, 6));
        pairs.push((2, 8));
        let edges = symmetric_edges(&pairs, 1.0);
        let graph = FlowGraph::build(12, &edges, TELEPORTATION);
        let a = two_level_partition(&graph, 99, 100).unwrap();
        let b = two_level_partition(&graph, 99, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_invariant_under_uniform_scaling() {
        let mut pairs = clique(0, 5);
        pairs.extend(clique(5, 5));
        pairs.push((1, 6));
        let graph1 = FlowGraph::build(10, &symmetric_edges(&pairs, 1.0), TELEPORTATION);
        let graph7 = FlowGraph::build(10, &symmetric_edges(&pairs, 7.0), TELEPORTATION);
        let a = two_level_partition(&graph1, 5, 100).unwrap();
        let b = two_level_partition(&graph7, 5, 100).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert!((a.codelength - b.codelength).abs() < 1e-9);
    }
}
