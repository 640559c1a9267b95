//! Reply transitions between messages and the bucket-level conversation graph.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{DyadIndex, DyadKey, MessageStore};
use crate::error::{Error, Result};
use crate::nmf::BucketList;

/// Bucket memberships keyed by message id.
pub type AssignmentMap = BTreeMap<String, BucketList>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub first: String,
    pub second: String,
    pub dyad: DyadKey,
}

/// Every adjacent opposite-direction pair in each dyad timeline. A message
/// can close one transition and open the next.
pub fn extract_transitions(dyads: &DyadIndex, store: &MessageStore) -> Vec<Transition> {
    let mut out = Vec::new();
    for dyad in dyads.dyads() {
        for pair in dyad.message_ids.windows(2) {
            let (Some(a), Some(b)) = (store.get(&pair[0]), store.get(&pair[1])) else {
                continue;
            };
            if a.sender != b.sender {
                out.push(Transition {
                    first: pair[0].clone(),
                    second: pair[1].clone(),
                    dyad: dyad.users.clone(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversationGraph {
    k: usize,
    edges: BTreeMap<(usize, usize), f64>,
    message_mass: Vec<f64>,
    /// Transitions dropped because an endpoint had no assignment.
    pub skipped: usize,
}

impl ConversationGraph {
    pub fn new(k: usize) -> Self {
        ConversationGraph {
            k,
            edges: BTreeMap::new(),
            message_mass: vec![0.0; k],
            skipped: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.k
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in (src, dst) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn weight(&self, src: usize, dst: usize) -> f64 {
        self.edges.get(&(src, dst)).copied().unwrap_or(0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    pub fn message_mass(&self) -> &[f64] {
        &self.message_mass
    }

    pub fn write_edges<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "src\tdst\tweight")?;
        for (i, j, w) in self.edges() {
            writeln!(out, "{i}\t{j}\t{w}")?;
        }
        Ok(())
    }

    /// Node table; `top_terms[b]` is joined with "; ".
    pub fn write_nodes<W: Write>(&self, top_terms: &[Vec<String>], mut out: W) -> Result<()> {
        writeln!(out, "bucket\tmessage_mass\ttop_terms")?;
        for b in 0..self.k {
            let terms = top_terms.get(b).map(|t| t.join("; ")).unwrap_or_default();
            writeln!(out, "{b}\t{}\t{terms}", self.message_mass[b])?;
        }
        Ok(())
    }

    /// Inverse of `write_edges` + `write_nodes`.
    pub fn read_tsv<E: BufRead, N: BufRead>(edges: E, nodes: N) -> Result<Self> {
        let mut mass = Vec::new();
        for (line_no, line) in nodes.lines().enumerate().skip(1) {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut f = line.split('\t');
            let parse_err = |m: &str| Error::parse("nodes.tsv", line_no + 1, m);
            let b: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("bad bucket"))?;
            let m: f64 = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err("bad message mass"))?;
            if b != mass.len() {
                return Err(parse_err("buckets must be listed in order"));
            }
            mass.push(m);
        }
        let mut g = ConversationGraph::new(mass.len());
        g.message_mass = mass;
        for (line_no, line) in edges.lines().enumerate().skip(1) {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let parsed = (f.len() == 3)
                .then(|| Some((f[0].parse::<usize>().ok()?, f[1].parse::<usize>().ok()?, f[2].parse::<f64>().ok()?)))
                .flatten();
            match parsed {
                Some((i, j, w)) if i < g.k && j < g.k && i != j && w >= 0.0 => {
                    g.edges.insert((i, j), w);
                }
                _ => return Err(Error::parse("edges.tsv", line_no + 1, "expected src<TAB>dst<TAB>weight")),
            }
        }
        Ok(g)
    }
}

/// Accumulates `p(x, b_i) · p(y, b_j)` on edge `b_i → b_j` for every
/// transition and every bucket pair with `b_i != b_j`.
pub fn build_graph(transitions: &[Transition], assignments: &AssignmentMap, k: usize) -> Result<ConversationGraph> {
    let mut g = ConversationGraph::new(k);
    let check = |list: &BucketList| -> Result<()> {
        match list.iter().find(|&&(b, _)| b >= k) {
            Some(&(b, _)) => Err(Error::InvalidParameter(format!("bucket {b} out of range for k = {k}"))),
            None => Ok(()),
        }
    };
    for list in assignments.values() {
        check(list)?;
        for &(b, p) in list {
            g.message_mass[b] += p;
        }
    }
    // sorted before summation so the result does not depend on input order
    let mut contributions: Vec<(usize, usize, f64)> = Vec::new();
    for t in transitions {
        let (Some(bx), Some(by)) = (assignments.get(&t.first), assignments.get(&t.second)) else {
            g.skipped += 1;
            continue;
        };
        for &(i, pi) in bx {
            for &(j, pj) in by {
                if i != j {
                    contributions.push((i, j, pi * pj));
                }
            }
        }
    }
    contributions.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    for (i, j, w) in contributions {
        *g.edges.entry((i, j)).or_insert(0.0) += w;
    }
    if g.skipped > 0 {
        log::warn!("{} transitions skipped for missing assignments", g.skipped);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_dyads, Message};
    use proptest::prelude::*;

    fn msg(id: &str, s: &str, r: &str, t: u64) -> Message {
        Message {
            id: id.into(),
            sender: s.into(),
            recipient: r.into(),
            timestamp: t,
            text: String::new(),
        }
    }

    fn transitions_of(dirs: &[bool]) -> Vec<(String, String)> {
        let msgs: Vec<Message> = dirs
            .iter()
            .enumerate()
            .map(|(i, &fwd)| {
                let (s, r) = if fwd { ("u", "v") } else { ("v", "u") };
                msg(&format!("m{i}"), s, r, i as u64)
            })
            .collect();
        let dyads = build_dyads(&msgs);
        let store = MessageStore::new(msgs).unwrap();
        extract_transitions(&dyads, &store)
            .into_iter()
            .map(|t| (t.first, t.second))
            .collect()
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        (a.into(), b.into())
    }

    #[test]
    fn transition_examples() {
        assert_eq!(transitions_of(&[true, false]), vec![pair("m0", "m1")]);
        assert_eq!(transitions_of(&[true, true, false]), vec![pair("m1", "m2")]);
        assert_eq!(transitions_of(&[true, false, true]), vec![pair("m0", "m1"), pair("m1", "m2")]);
        assert!(transitions_of(&[true, true]).is_empty());
    }

    fn t(a: &str, b: &str) -> Transition {
        Transition {
            first: a.into(),
            second: b.into(),
            dyad: DyadKey::new("u", "v"),
        }
    }

    fn amap(entries: &[(&str, BucketList)]) -> AssignmentMap {
        entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn hard_assignment_single_edge() {
        let a = amap(&[("x", vec![(2, 0.7)]), ("y", vec![(5, 0.9)])]);
        let g = build_graph(&[t("x", "y")], &a, 6).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!((g.weight(2, 5) - 0.63).abs() < 1e-15);
        assert_eq!(g.weight(5, 2), 0.0);
    }

    #[test]
    fn self_loops_dropped() {
        let a = amap(&[("x", vec![(3, 1.0)]), ("y", vec![(3, 1.0)])]);
        let g = build_graph(&[t("x", "y")], &a, 4).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.message_mass()[3], 2.0);
    }

    #[test]
    fn soft_product_rule() {
        let a = amap(&[("x", vec![(0, 0.6), (1, 0.4)]), ("y", vec![(2, 1.0)])]);
        let g = build_graph(&[t("x", "y")], &a, 3).unwrap();
        assert_eq!(g.weight(0, 2), 0.6);
        assert_eq!(g.weight(1, 2), 0.4);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn missing_assignment_counted() {
        let a = amap(&[("x", vec![(0, 1.0)])]);
        let g = build_graph(&[t("x", "y"), t("y", "x")], &a, 2).unwrap();
        assert_eq!(g.skipped, 2);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn out_of_range_bucket_rejected() {
        let a = amap(&[("x", vec![(4, 1.0)])]);
        assert!(build_graph(&[], &a, 3).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let a = amap(&[("x", vec![(0, 0.6), (1, 0.4)]), ("y", vec![(2, 1.0)]), ("z", vec![(0, 1.0)])]);
        let g = build_graph(&[t("x", "y"), t("y", "z")], &a, 3).unwrap();
        let (mut e, mut n) = (Vec::new(), Vec::new());
        g.write_edges(&mut e).unwrap();
        g.write_nodes(&[vec!["a b".into(), "c".into()]], &mut n).unwrap();
        assert!(String::from_utf8_lossy(&n).contains("0\t1.6\ta b; c"));
        let back = ConversationGraph::read_tsv(&e[..], &n[..]).unwrap();
        assert_eq!(back.edges, g.edges);
        assert_eq!(back.message_mass, g.message_mass);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<BucketList>, Vec<(usize, usize)>)> {
        let list = prop::collection::vec((0usize..5, 0.01f64..1.0), 1..4);
        (prop::collection::vec(list, 2..8)).prop_flat_map(|lists| {
            let n = lists.len();
            (Just(lists), prop::collection::vec((0..n, 0..n), 0..30))
        })
    }

    proptest! {
        #[test]
        fn conservation_and_order_invariance((lists, pairs) in arb_case(), rot in 0usize..30) {
            let a: AssignmentMap = lists.iter().enumerate().map(|(i, l)| (format!("m{i}"), l.clone())).collect();
            let ts: Vec<Transition> = pairs.iter().map(|&(x, y)| t(&format!("m{x}"), &format!("m{y}"))).collect();
            let g = build_graph(&ts, &a, 5).unwrap();
            let mut expected = 0.0;
            for &(x, y) in &pairs {
                for &(i, pi) in &lists[x] {
                    for &(j, pj) in &lists[y] {
                        if i != j { expected += pi * pj; }
                    }
                }
            }
            prop_assert!((g.total_weight() - expected).abs() < 1e-9);
            prop_assert!(g.edges().all(|(i, j, w)| i != j && w >= 0.0));
            let mut rotated = ts.clone();
            if !rotated.is_empty() {
                let r = rot % rotated.len();
                rotated.rotate_left(r);
                rotated.reverse();
            }
            prop_assert_eq!(build_graph(&rotated, &a, 5).unwrap(), g);
        }
    }
}
