//! User-level communication network decomposed by DoI.

mod inequality;
mod lexicon;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Message;
use crate::doi::MessageDois;
use crate::error::{Error, Result};
use crate::textprep::raw_tokens;

pub use inequality::{
    assortativity, degree_pearson, jackknife, lorenz_gini, rewired_baseline, wealth, Assortativity, AssortativityConfig,
    Lorenz, WealthMode,
};
pub use lexicon::{lexicon_ratio, Lexicon};
pub use report::{analyze, AnalysisConfig, AnalysisReport, DoiReport, Metadata, StrengthReport};

/// One message as an arc between users.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub message_id: String,
    pub source: usize,
    pub target: usize,
    pub timestamp: u64,
    pub tokens: usize,
    /// (DoI, p) descending.
    pub dois: Vec<(usize, f64)>,
}

impl Arc {
    fn dyad(&self) -> (usize, usize) {
        (self.source.min(self.target), self.source.max(self.target))
    }
}

/// How a message's DoI memberships count towards per-DoI tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribution {
    /// The message counts once, for its top DoI.
    #[default]
    Top,
    /// Fractional credit `p(m,D) / Σ_D p(m,D)`.
    Fractional,
}

impl Attribution {
    fn credit(self, dois: &[(usize, f64)], n_dois: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_dois];
        match self {
            Attribution::Top => {
                if let Some(&(d, _)) = dois.first() {
                    out[d] = 1.0;
                }
            }
            Attribution::Fractional => {
                let total: f64 = dois.iter().map(|&(_, p)| p).sum();
                if total > 0.0 {
                    for &(d, p) in dois {
                        out[d] += p / total;
                    }
                } else if let Some(&(d, _)) = dois.first() {
                    out[d] = 1.0;
                }
            }
        }
        out
    }
}

/// Directed multigraph over users; one arc per assigned message.
#[derive(Debug, Clone)]
pub struct CommGraph {
    users: Vec<String>,
    arcs: Vec<Arc>,
    doi_count: usize,
    /// Arc indices per dyad, time-ordered.
    dyads: BTreeMap<(usize, usize), Vec<usize>>,
}

impl CommGraph {
    /// Messages without an assignment are left out.
    pub fn build(messages: &[Message], assignments: &[MessageDois], doi_count: usize) -> Result<Self> {
        let by_id: HashMap<&str, &MessageDois> = assignments.iter().map(|a| (a.message_id.as_str(), a)).collect();
        let kept: Vec<(&Message, &MessageDois)> = messages
            .iter()
            .filter_map(|m| by_id.get(m.id.as_str()).map(|a| (m, *a)))
            .collect();
        let users: Vec<String> = kept
            .iter()
            .flat_map(|(m, _)| [m.sender.clone(), m.recipient.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let mut arcs = Vec::with_capacity(kept.len());
        for (m, a) in kept {
            if let Some(&(d, _)) = a.dois.iter().find(|&&(d, _)| d >= doi_count) {
                return Err(Error::InvalidParameter(format!("message {} assigned to unknown DoI {d}", m.id)));
            }
            arcs.push(Arc {
                message_id: m.id.clone(),
                source: index[m.sender.as_str()],
                target: index[m.recipient.as_str()],
                timestamp: m.timestamp,
                tokens: raw_tokens(&m.text).len(),
                dois: a.dois.clone(),
            });
        }
        arcs.sort_by(|a, b| (a.timestamp, &a.message_id).cmp(&(b.timestamp, &b.message_id)));
        let mut dyads: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, a) in arcs.iter().enumerate() {
            dyads.entry(a.dyad()).or_default().push(i);
        }
        Ok(CommGraph {
            users,
            arcs,
            doi_count,
            dyads,
        })
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn doi_count(&self) -> usize {
        self.doi_count
    }

    pub fn dyad_count(&self) -> usize {
        self.dyads.len()
    }

    /// Time-ordered arc indices per unordered user pair.
    pub fn dyads(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<usize>)> {
        self.dyads.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoiSubgraph {
    pub doi: usize,
    /// Indices into the parent graph's arcs.
    pub arcs: Vec<usize>,
    pub nodes: BTreeSet<usize>,
    pub dyads: BTreeSet<(usize, usize)>,
}

impl DoiSubgraph {
    pub fn message_count(&self) -> usize {
        self.arcs.len()
    }

    /// (source, target) pairs, one per arc.
    pub fn arc_pairs(&self, comm: &CommGraph) -> Vec<(usize, usize)> {
        self.arcs.iter().map(|&i| (comm.arcs[i].source, comm.arcs[i].target)).collect()
    }
}

/// Arcs whose message lists `doi` among its DoIs.
pub fn induce_subgraph(comm: &CommGraph, doi: usize) -> Result<DoiSubgraph> {
    if doi >= comm.doi_count {
        return Err(Error::Unknown {
            kind: "DoI",
            name: doi.to_string(),
        });
    }
    let arcs: Vec<usize> = (0..comm.arcs.len())
        .filter(|&i| comm.arcs[i].dois.iter().any(|&(d, _)| d == doi))
        .collect();
    let nodes = arcs.iter().flat_map(|&i| [comm.arcs[i].source, comm.arcs[i].target]).collect();
    let dyads = arcs.iter().map(|&i| comm.arcs[i].dyad()).collect();
    Ok(DoiSubgraph { doi, arcs, nodes, dyads })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub nodes: f64,
    pub dyads: f64,
    pub messages: f64,
}

pub fn coverage(sub: &DoiSubgraph, comm: &CommGraph) -> Result<Coverage> {
    if comm.arcs.is_empty() {
        return Err(Error::Degenerate("coverage over an empty communication graph".into()));
    }
    Ok(Coverage {
        nodes: sub.nodes.len() as f64 / comm.users.len() as f64,
        dyads: sub.dyads.len() as f64 / comm.dyads.len() as f64,
        messages: sub.arcs.len() as f64 / comm.arcs.len() as f64,
    })
}

/// `min(n_uv, n_vu) / max(n_uv, n_vu)`.
pub fn dyad_reciprocity(n_uv: usize, n_vu: usize) -> f64 {
    let hi = n_uv.max(n_vu);
    if hi == 0 {
        return 0.0;
    }
    n_uv.min(n_vu) as f64 / hi as f64
}

/// Unweighted mean of dyad reciprocity over all dyads with a message.
pub fn reciprocity(arcs: &[(usize, usize)]) -> Option<f64> {
    let mut counts: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for &(s, t) in arcs {
        let e = counts.entry((s.min(t), s.max(t))).or_default();
        if s < t {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    if counts.is_empty() {
        return None;
    }
    Some(counts.values().map(|&(a, b)| dyad_reciprocity(a, b)).sum::<f64>() / counts.len() as f64)
}

/// Per-DoI share of each dyad's messages, averaged over dyads.
pub fn tie_share(comm: &CommGraph, attribution: Attribution) -> Vec<f64> {
    let k = comm.doi_count;
    let mut total = vec![0.0; k];
    for arcs in comm.dyads.values() {
        let mut share = vec![0.0; k];
        for &i in arcs {
            for (d, c) in attribution.credit(&comm.arcs[i].dois, k).into_iter().enumerate() {
                share[d] += c;
            }
        }
        for d in 0..k {
            total[d] += share[d] / arcs.len() as f64;
        }
    }
    let n = comm.dyads.len().max(1) as f64;
    total.into_iter().map(|t| t / n).collect()
}

/// `|A ∩ B| / |A ∪ B|`, 0 for two empty sets.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Conversation length (family A) or step index (family B).
    pub x: usize,
    /// Dyads contributing to this point.
    pub dyads: usize,
    /// Mean per-DoI proportion.
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionCurves {
    /// By total conversation length.
    pub by_length: Vec<CurvePoint>,
    /// By position of the message in its conversation.
    pub by_step: Vec<CurvePoint>,
}

pub fn evolution_curves(comm: &CommGraph, attribution: Attribution) -> EvolutionCurves {
    let k = comm.doi_count;
    let mut by_len: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    let mut by_step: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for arcs in comm.dyads.values() {
        let credits: Vec<Vec<f64>> = arcs.iter().map(|&i| attribution.credit(&comm.arcs[i].dois, k)).collect();
        let e = by_len.entry(arcs.len()).or_insert_with(|| (0, vec![0.0; k]));
        e.0 += 1;
        for c in &credits {
            for d in 0..k {
                e.1[d] += c[d] / arcs.len() as f64;
            }
        }
        for (n, c) in credits.iter().enumerate() {
            let e = by_step.entry(n + 1).or_insert_with(|| (0, vec![0.0; k]));
            e.0 += 1;
            for d in 0..k {
                e.1[d] += c[d];
            }
        }
    }
    let finish = |m: BTreeMap<usize, (usize, Vec<f64>)>| -> Vec<CurvePoint> {
        m.into_iter()
            .map(|(x, (n, sums))| CurvePoint {
                x,
                dyads: n,
                shares: sums.into_iter().map(|s| s / n as f64).collect(),
            })
            .collect()
    };
    EvolutionCurves {
        by_length: finish(by_len),
        by_step: finish(by_step),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// (x, mean y, count)
    pub points: Vec<(f64, f64, usize)>,
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares over `(x, y)` points.
pub fn ols(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if points.is_empty() || sxx == 0.0 {
        return Err(Error::Degenerate("least squares needs at least two distinct x values".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Mean dyad reciprocity per conversation length, with a linear fit over
/// the per-length means.
pub fn reciprocity_vs_length(comm: &CommGraph) -> Result<LinearFit> {
    let mut by_len: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&(u, _), arcs) in &comm.dyads {
        let out = arcs.iter().filter(|&&i| comm.arcs[i].source == u).count();
        let e = by_len.entry(arcs.len()).or_default();
        e.0 += dyad_reciprocity(out, arcs.len() - out);
        e.1 += 1;
    }
    let points: Vec<(f64, f64, usize)> = by_len
        .into_iter()
        .map(|(l, (sum, n))| (l as f64, sum / n as f64, n))
        .collect();
    let (slope, intercept) = ols(&points.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>())?;
    Ok(LinearFit {
        points,
        slope,
        intercept,
    })
}
