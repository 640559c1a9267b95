//! Potts-model community detection by simulated annealing.
//!
//! Energy of a partition σ of an undirected weighted graph:
//! `H = -Σ_{i<j} (A_ij - γ s_i s_j / 2S) δ(σ_i, σ_j)`
//! with `s` the node strengths and `S` the total edge weight.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::convgraph::ConversationGraph;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    /// Sorted neighbour lists, symmetric, no self-loops.
    adj: Vec<Vec<(usize, f64)>>,
    strength: Vec<f64>,
    total: f64,
}

impl UndirectedGraph {
    /// Duplicate pairs are summed; self-loops and non-positive weights dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!("edge ({i},{j}) outside {n} nodes")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!("edge weight {w} must be finite and non-negative")));
            }
            if i != j && w > 0.0 {
                adj[i].push((j, w));
                adj[j].push((i, w));
            }
        }
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
            list.dedup_by(|next, kept| {
                if next.0 == kept.0 {
                    kept.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        let strength: Vec<f64> = adj.iter().map(|l| l.iter().map(|&(_, w)| w).sum()).collect();
        let total = strength.iter().sum::<f64>() / 2.0;
        Ok(UndirectedGraph { adj, strength, total })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn strength(&self, i: usize) -> f64 {
        self.strength[i]
    }

    pub fn total_weight(&self) -> f64 {
        self.total
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj[i]
            .binary_search_by_key(&j, |&(n, _)| n)
            .map(|p| self.adj[i][p].1)
            .unwrap_or(0.0)
    }

    /// Edges with i < j.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().filter(move |&&(j, _)| j > i).map(move |&(j, w)| (i, j, w)))
    }

    fn scaled(&self, factor: f64) -> UndirectedGraph {
        UndirectedGraph {
            adj: self
                .adj
                .iter()
                .map(|l| l.iter().map(|&(j, w)| (j, w * factor)).collect())
                .collect(),
            strength: self.strength.iter().map(|s| s * factor).collect(),
            total: self.total * factor,
        }
    }
}

/// Undirected weight of {i, j} is `w(i→j) + w(j→i)`.
pub fn symmetrize(graph: &ConversationGraph) -> UndirectedGraph {
    let edges: Vec<(usize, usize, f64)> = graph.edges().collect();
    UndirectedGraph::from_edges(graph.node_count(), &edges).expect("conversation graph edges are in range and non-negative")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpinglassConfig {
    pub gamma: f64,
    pub spins_max: usize,
    pub start_temp: f64,
    pub stop_temp: f64,
    pub cooling: f64,
    pub sweeps_per_temp: usize,
    /// Independent annealing runs with seeds `seed, seed+1, ...`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SpinglassConfig {
    fn default() -> Self {
        SpinglassConfig {
            gamma: 1.0,
            spins_max: 25,
            start_temp: 1.0,
            stop_temp: 0.01,
            cooling: 0.99,
            sweeps_per_temp: 50,
            restarts: 1,
            seed: 0,
        }
    }
}

impl SpinglassConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.spins_max >= 1
            && self.stop_temp > 0.0
            && self.stop_temp < self.start_temp
            && self.cooling > 0.0
            && self.cooling < 1.0
            && self.sweeps_per_temp >= 1
            && self.restarts >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "spinglass needs gamma > 0, spins_max >= 1, 0 < stop_temp < start_temp, 0 < cooling < 1, sweeps and restarts >= 1; got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Community id per node, dense and numbered by lowest member node.
    pub membership: Vec<usize>,
    pub count: usize,
    pub hamiltonian: f64,
    /// Seed of the annealing run that produced this partition.
    pub seed: u64,
    /// Moves of the final greedy pass that raised the energy; always 0.
    pub uphill_moves: usize,
}

impl Partition {
    pub fn from_membership(membership: Vec<usize>) -> Self {
        let (membership, count) = canonical(&membership);
        Partition {
            membership,
            count,
            hamiltonian: f64::NAN,
            seed: 0,
            uphill_moves: 0,
        }
    }

    pub fn members(&self, community: usize) -> Vec<usize> {
        (0..self.membership.len()).filter(|&i| self.membership[i] == community).collect()
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bucket\tcommunity")?;
        for (b, c) in self.membership.iter().enumerate() {
            writeln!(out, "{b}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut membership = Vec::new();
        for (line_no, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parsed = line
                .split_once('\t')
                .and_then(|(b, c)| Some((b.parse::<usize>().ok()?, c.parse::<usize>().ok()?)));
            match parsed {
                Some((b, c)) if b == membership.len() => membership.push(c),
                _ => return Err(Error::parse("partition.tsv", line_no + 1, "expected bucket<TAB>community in bucket order")),
            }
        }
        Ok(Partition::from_membership(membership))
    }
}

/// Renumbers communities densely in order of first appearance.
fn canonical(spins: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = spins
        .iter()
        .map(|&s| {
            let next = map.len();
            *map.entry(s).or_insert(next)
        })
        .collect();
    (out, map.len())
}

pub fn hamiltonian(graph: &UndirectedGraph, membership: &[usize], gamma: f64) -> f64 {
    let two_s = 2.0 * graph.total_weight();
    let c = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut k = vec![0.0; c];
    let mut k_sq = vec![0.0; c];
    for (i, &m) in membership.iter().enumerate() {
        k[m] += graph.strength(i);
        k_sq[m] += graph.strength(i) * graph.strength(i);
    }
    let internal: f64 = graph
        .edges()
        .filter(|&(i, j, _)| membership[i] == membership[j])
        .map(|(_, _, w)| w)
        .sum();
    let null: f64 = (0..c).map(|m| (k[m] * k[m] - k_sq[m]) / 2.0).sum();
    -(internal - gamma * null / two_s)
}

/// `Q = Σ_c (w_cc / S - (s_c / 2S)^2)`.
pub fn modularity(graph: &UndirectedGraph, membership: &[usize]) -> Result<f64> {
    if membership.len() != graph.node_count() {
        return Err(Error::InvalidParameter("partition does not cover the graph".into()));
    }
    let s = graph.total_weight();
    if s <= 0.0 {
        return Err(Error::Degenerate("modularity of a graph with zero total weight".into()));
    }
    let c = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; c];
    let mut strength = vec![0.0; c];
    for (i, j, w) in graph.edges() {
        if membership[i] == membership[j] {
            internal[membership[i]] += w;
        }
    }
    for (i, &m) in membership.iter().enumerate() {
        strength[m] += graph.strength(i);
    }
    Ok((0..c).map(|m| internal[m] / s - (strength[m] / (2.0 * s)).powi(2)).sum())
}

/// Working state: spins plus per-spin strength totals.
struct State<'a> {
    g: &'a UndirectedGraph,
    gamma_over_2s: f64,
    spin: Vec<usize>,
    k: Vec<f64>,
    /// Scratch: weight from the current node into each spin.
    link: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(g: &'a UndirectedGraph, gamma: f64, spin: Vec<usize>, q: usize) -> Self {
        let mut k = vec![0.0; q];
        for (i, &s) in spin.iter().enumerate() {
            k[s] += g.strength(i);
        }
        State {
            g,
            gamma_over_2s: gamma / (2.0 * g.total_weight()),
            spin,
            k,
            link: vec![0.0; q],
        }
    }

    /// Fills `energy[c]`: the energy of node v's pairs if v sat in spin c.
    fn node_energies(&mut self, v: usize, energy: &mut [f64]) {
        self.link.iter_mut().for_each(|x| *x = 0.0);
        for &(j, w) in self.g.neighbors(v) {
            self.link[self.spin[j]] += w;
        }
        let sv = self.g.strength(v);
        let own = self.spin[v];
        for (c, e) in energy.iter_mut().enumerate() {
            let kc = if c == own { self.k[c] - sv } else { self.k[c] };
            *e = -(self.link[c] - self.gamma_over_2s * sv * kc);
        }
    }

    fn move_node(&mut self, v: usize, to: usize) {
        let sv = self.g.strength(v);
        self.k[self.spin[v]] -= sv;
        self.k[to] += sv;
        self.spin[v] = to;
    }

    /// Steepest single-node descent until no move lowers the energy.
    /// Returns (moves, uphill moves measured on the full Hamiltonian).
    fn greedy(&mut self, gamma: f64) -> (usize, usize) {
        let q = self.k.len();
        let mut energy = vec![0.0; q];
        let (mut moves, mut uphill) = (0, 0);
        let tol = 1e-12 * (1.0 + self.g.total_weight());
        loop {
            let mut changed = false;
            for v in 0..self.spin.len() {
                self.node_energies(v, &mut energy);
                let own = self.spin[v];
                let best = (0..q).fold(own, |b, c| if energy[c] < energy[b] - tol { c } else { b });
                if best != own {
                    let before = hamiltonian(self.g, &self.spin, gamma);
                    self.move_node(v, best);
                    if hamiltonian(self.g, &self.spin, gamma) > before + tol {
                        uphill += 1;
                    }
                    moves += 1;
                    changed = true;
                }
            }
            if !changed {
                return (moves, uphill);
            }
        }
    }

    /// Splits every spin into connected components over positive-strength
    /// nodes; zero-strength nodes stay with their spin's first component.
    /// Skipped when the result would need more than `q` spins.
    fn split_components(&mut self) -> bool {
        let n = self.spin.len();
        let q = self.k.len();
        let mut comp = vec![usize::MAX; n];
        let mut comps: Vec<usize> = Vec::new(); // spin of each component
        for start in 0..n {
            if comp[start] != usize::MAX || self.g.strength(start) == 0.0 {
                continue;
            }
            let id = comps.len();
            comps.push(self.spin[start]);
            let mut stack = vec![start];
            comp[start] = id;
            while let Some(v) = stack.pop() {
                for &(j, _) in self.g.neighbors(v) {
                    if comp[j] == usize::MAX && self.spin[j] == self.spin[v] {
                        comp[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        let mut first_of_spin = vec![usize::MAX; q];
        for (id, &s) in comps.iter().enumerate() {
            if first_of_spin[s] == usize::MAX {
                first_of_spin[s] = id;
            }
        }
        let used_spins = (0..q).filter(|&s| self.spin.contains(&s)).count();
        let extra = comps.len() - first_of_spin.iter().filter(|&&f| f != usize::MAX).count();
        if extra == 0 || used_spins + extra > q {
            return false;
        }
        let mut free = (0..q).filter(|s| !self.spin.contains(s));
        let mut new_spin = vec![0; comps.len()];
        for (id, &s) in comps.iter().enumerate() {
            new_spin[id] = if first_of_spin[s] == id { s } else { free.next().expect("spare spin counted above") };
        }
        for v in 0..n {
            if comp[v] != usize::MAX && new_spin[comp[v]] != self.spin[v] {
                self.move_node(v, new_spin[comp[v]]);
            }
        }
        true
    }
}

fn anneal(graph: &UndirectedGraph, config: &SpinglassConfig, seed: u64) -> Partition {
    let n = graph.node_count();
    let q = config.spins_max;
    let mut rng = rng::substream(seed, "spinglass");
    let spins: Vec<usize> = (0..n).map(|_| rng.random_range(0..q)).collect();
    let mut state = State::new(graph, config.gamma, spins, q);
    let mut energy = vec![0.0; q];
    let mut prob = vec![0.0; q];
    let mut temp = config.start_temp;
    while temp > config.stop_temp {
        let mut changes = 0;
        for _ in 0..config.sweeps_per_temp {
            for v in 0..n {
                state.node_energies(v, &mut energy);
                let e_min = energy.iter().copied().fold(f64::INFINITY, f64::min);
                let mut total = 0.0;
                for c in 0..q {
                    prob[c] = (-(energy[c] - e_min) / temp).exp();
                    total += prob[c];
                }
                let mut u = rng.random::<f64>() * total;
                let mut pick = q - 1;
                for (c, &p) in prob.iter().enumerate() {
                    if u < p {
                        pick = c;
                        break;
                    }
                    u -= p;
                }
                if pick != state.spin[v] {
                    state.move_node(v, pick);
                    changes += 1;
                }
            }
        }
        if changes == 0 {
            break;
        }
        temp *= config.cooling;
    }
    let mut uphill = 0;
    for _ in 0..n.max(1) {
        uphill += state.greedy(config.gamma).1;
        if !state.split_components() {
            break;
        }
    }
    uphill += state.greedy(config.gamma).1;
    let (membership, count) = canonical(&state.spin);
    Partition {
        membership,
        count,
        hamiltonian: 0.0,
        seed,
        uphill_moves: uphill,
    }
}

pub fn spinglass(graph: &UndirectedGraph, config: &SpinglassConfig) -> Result<Partition> {
    config.validate()?;
    if graph.edge_count() == 0 {
        return Err(Error::Degenerate("community detection on an edgeless graph".into()));
    }
    let mean_w = 2.0 * graph.total_weight() / (2 * graph.edge_count()) as f64;
    // unit mean edge weight keeps the temperature schedule scale-free
    let scaled = graph.scaled(1.0 / mean_w);
    let mut best: Option<Partition> = None;
    for r in 0..config.restarts as u64 {
        let mut p = anneal(&scaled, config, config.seed.wrapping_add(r));
        p.hamiltonian = hamiltonian(graph, &p.membership, config.gamma);
        log::debug!("spinglass seed {}: {} communities, H = {}", p.seed, p.count, p.hamiltonian);
        if best.as_ref().is_none_or(|b| p.hamiltonian < b.hamiltonian) {
            best = Some(p);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    pub(crate) fn two_cliques() -> UndirectedGraph {
        let mut e = Vec::new();
        for base in [0, 5] {
            for i in 0..5 {
                for j in i + 1..5 {
                    e.push((base + i, base + j, 1.0));
                }
            }
        }
        e.push((4, 5, 1.0));
        UndirectedGraph::from_edges(10, &e).unwrap()
    }

    fn brute_hamiltonian(g: &UndirectedGraph, m: &[usize], gamma: f64) -> f64 {
        let n = g.node_count();
        let two_s = 2.0 * g.total_weight();
        let mut h = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if m[i] == m[j] {
                    h -= g.weight(i, j) - gamma * g.strength(i) * g.strength(j) / two_s;
                }
            }
        }
        h
    }

    #[test]
    fn symmetrize_sums_directions() {
        use crate::convgraph::{build_graph, AssignmentMap, Transition};
        use crate::corpus::DyadKey;
        let mut a = AssignmentMap::new();
        a.insert("x".into(), vec![(0, 1.0)]);
        a.insert("y".into(), vec![(1, 1.0)]);
        let t = |f: &str, s: &str| Transition {
            first: f.into(),
            second: s.into(),
            dyad: DyadKey::new("u", "v"),
        };
        let g = build_graph(&[t("x", "y"), t("x", "y"), t("y", "x"), t("y", "x"), t("y", "x")], &a, 3).unwrap();
        let u = symmetrize(&g);
        assert_eq!(u.weight(0, 1), 5.0);
        assert_eq!(u.weight(1, 0), 5.0);
        assert_eq!(u.node_count(), 3);
        let single = build_graph(&[t("x", "y")], &a, 2).unwrap();
        assert_eq!(symmetrize(&single).weight(0, 1), 1.0);
        let empty = symmetrize(&ConversationGraph::new(0));
        assert_eq!((empty.node_count(), empty.edge_count()), (0, 0));
    }

    #[test]
    fn two_cliques_recovered_every_seed() {
        let g = two_cliques();
        for seed in 0..20 {
            let p = spinglass(&g, &SpinglassConfig { seed, ..Default::default() }).unwrap();
            assert_eq!(p.membership, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1], "seed {seed}");
            assert_eq!(p.uphill_moves, 0);
        }
    }

    #[test]
    fn disconnected_cliques_never_share_a_community() {
        let mut e = Vec::new();
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    e.push((base + i, base + j, 1.0));
                }
            }
        }
        let g = UndirectedGraph::from_edges(8, &e).unwrap();
        for seed in 0..5 {
            let p = spinglass(&g, &SpinglassConfig { seed, ..Default::default() }).unwrap();
            assert_eq!(p.membership, vec![0, 0, 0, 0, 1, 1, 1, 1]);
            assert!((modularity(&g, &p.membership).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let g = two_cliques();
        let c = SpinglassConfig {
            seed: 9,
            spins_max: 3,
            ..Default::default()
        };
        let a = spinglass(&g, &c).unwrap();
        assert_eq!(a, spinglass(&g, &c).unwrap());
        assert!(a.count <= 3);
    }

    #[test]
    fn restarts_pick_lowest_energy() {
        let g = two_cliques();
        let c = SpinglassConfig {
            restarts: 3,
            sweeps_per_temp: 2,
            ..Default::default()
        };
        let best = spinglass(&g, &c).unwrap();
        for r in 0..3 {
            let single = spinglass(&g, &SpinglassConfig { restarts: 1, seed: r, ..c.clone() }).unwrap();
            assert!(best.hamiltonian <= single.hamiltonian);
        }
    }

    #[test]
    fn edgeless_graph_rejected() {
        let g = UndirectedGraph::from_edges(3, &[]).unwrap();
        assert!(spinglass(&g, &SpinglassConfig::default()).is_err());
        assert!(modularity(&g, &[0, 0, 0]).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let g = two_cliques();
        for c in [
            SpinglassConfig { cooling: 1.0, ..Default::default() },
            SpinglassConfig { stop_temp: 2.0, ..Default::default() },
            SpinglassConfig { spins_max: 0, ..Default::default() },
        ] {
            assert!(spinglass(&g, &c).is_err());
        }
    }

    #[test]
    fn modularity_examples() {
        let g = two_cliques();
        assert!(modularity(&g, &[0; 10]).unwrap().abs() < 1e-15);
        // clique split at random: Q stays near zero on average
        let mut e = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                e.push((i, j, 1.0));
            }
        }
        let k10 = UndirectedGraph::from_edges(10, &e).unwrap();
        let mut total = 0.0;
        for seed in 0..50 {
            let mut nodes: Vec<usize> = (0..10).collect();
            nodes.shuffle(&mut rng::rng_from_seed(seed));
            let mut m = vec![0; 10];
            for &v in &nodes[5..] {
                m[v] = 1;
            }
            total += modularity(&k10, &m).unwrap();
        }
        assert!(total / 50.0 < 0.01);
    }

    #[test]
    fn partition_tsv_round_trip() {
        let p = Partition::from_membership(vec![3, 3, 1, 0]);
        assert_eq!(p.membership, vec![0, 0, 1, 2]);
        let mut buf = Vec::new();
        p.write_tsv(&mut buf).unwrap();
        assert_eq!(Partition::read_tsv(&buf[..]).unwrap().membership, p.membership);
        assert!(Partition::read_tsv(&b"bucket\tcommunity\n1\t0\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn hamiltonian_matches_pairwise_sum(
            edges in prop::collection::vec((0usize..7, 0usize..7, 0.1f64..3.0), 1..20),
            m in prop::collection::vec(0usize..3, 7),
            gamma in 0.2f64..2.0,
        ) {
            let g = UndirectedGraph::from_edges(7, &edges).unwrap();
            prop_assume!(g.total_weight() > 0.0);
            let h = hamiltonian(&g, &m, gamma);
            prop_assert!((h - brute_hamiltonian(&g, &m, gamma)).abs() < 1e-9);
            // gamma = 1 links energy and modularity: Q = -H/S - Σ_i s_i²/(2S)²
            let q = modularity(&g, &m).unwrap();
            let s = g.total_weight();
            let self_terms: f64 = (0..7).map(|i| g.strength(i).powi(2)).sum::<f64>() / (4.0 * s * s);
            prop_assert!((q - (-hamiltonian(&g, &m, 1.0) / s - self_terms)).abs() < 1e-9);
        }
    }
}
