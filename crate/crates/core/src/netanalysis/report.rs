use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    assortativity, coverage, evolution_curves, induce_subgraph, jaccard, lexicon_ratio, lorenz_gini, reciprocity,
    reciprocity_vs_length, tie_share, wealth, Assortativity, AssortativityConfig, Attribution, CommGraph, Coverage,
    DoiSubgraph, EvolutionCurves, Lexicon, LinearFit, Lorenz, WealthMode,
};
use crate::corpus::Message;
use crate::doi::{DoiModel, MessageDois};
use crate::error::{Error, Result};
use crate::textprep::raw_tokens;

/// Optional per-user side information.
#[derive(Debug, Clone, Default)]
pub struct Metadata {
    /// Declared contacts; the communication graph's neighbours are used
    /// when absent.
    pub neighbors: Option<BTreeMap<String, BTreeSet<String>>>,
    pub groups: Option<BTreeMap<String, BTreeSet<String>>>,
    pub items: Option<BTreeMap<String, BTreeSet<String>>>,
    /// Unordered user pairs declaring a kinship relation.
    pub kinship: Option<BTreeSet<(String, String)>>,
}

impl Metadata {
    /// Two-column CSV `user,member` with header, one membership per row.
    pub fn read_memberships<R: Read>(input: R) -> Result<BTreeMap<String, BTreeSet<String>>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, rec) in csv::Reader::from_reader(input).records().enumerate() {
            let rec = rec?;
            match (rec.get(0), rec.get(1)) {
                (Some(u), Some(m)) if !u.trim().is_empty() => {
                    out.entry(u.trim().to_owned()).or_default().insert(m.trim().to_owned());
                }
                _ => return Err(Error::parse("metadata", i + 2, "expected user,member")),
            }
        }
        Ok(out)
    }

    /// CSV `dyad,relation` with the dyad written `u|v`.
    pub fn read_kinship<R: Read>(input: R) -> Result<BTreeSet<(String, String)>> {
        let mut out = BTreeSet::new();
        for (i, rec) in csv::Reader::from_reader(input).records().enumerate() {
            let rec = rec?;
            let pair = rec.get(0).and_then(|d| d.split_once('|'));
            let Some((u, v)) = pair else {
                return Err(Error::parse("kinship", i + 2, "dyad must be written u|v"));
            };
            let (u, v) = (u.trim().to_owned(), v.trim().to_owned());
            out.insert(if u <= v { (u, v) } else { (v, u) });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub attribution: Attribution,
    pub wealth: WealthMode,
    pub assortativity: AssortativityConfig,
    /// Lexicon categories to report; all categories when empty.
    pub lexicon_categories: Vec<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            attribution: Attribution::Top,
            wealth: WealthMode::InDegree,
            assortativity: AssortativityConfig::default(),
            lexicon_categories: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthReport {
    pub sigma_n: f64,
    pub sigma_g: Option<f64>,
    pub sigma_i: Option<f64>,
    /// Mean total conversation length of the DoI's dyads.
    pub conv_len: f64,
    /// Mean token count of the DoI's messages.
    pub msg_len: f64,
    pub lexicon: BTreeMap<String, f64>,
    pub kinship: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoiReport {
    pub id: usize,
    pub label: String,
    pub coverage: Coverage,
    pub reciprocity: Option<f64>,
    pub tie_share: f64,
    pub strength: StrengthReport,
    pub lorenz: Option<Lorenz>,
    pub assortativity: Option<Assortativity>,
    /// Metrics left undefined for this DoI, with the reason.
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub doi: usize,
    pub attribution: Attribution,
    /// "conv_len" or "msg_len".
    pub quantity: String,
    /// (value, cumulative probability)
    pub cdf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub users: usize,
    pub dyads: usize,
    pub messages: usize,
    pub reciprocity: Option<f64>,
    pub dois: Vec<DoiReport>,
    pub evolution: EvolutionCurves,
    pub reciprocity_fit: Option<LinearFit>,
    pub distributions: Vec<Distribution>,
}

fn weighted_cdf(mut samples: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    samples.retain(|&(_, w)| w > 0.0);
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut cum = 0.0;
    for (v, w) in samples {
        cum += w;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = cum / total,
            _ => out.push((v, cum / total)),
        }
    }
    if let Some(last) = out.last_mut() {
        last.1 = 1.0;
    }
    out
}

fn mean_jaccard(
    sub: &DoiSubgraph,
    users: &[String],
    sets: &BTreeMap<String, BTreeSet<String>>,
    exclude_pair: bool,
) -> f64 {
    if sub.dyads.is_empty() {
        return 0.0;
    }
    let empty = BTreeSet::new();
    let total: f64 = sub
        .dyads
        .iter()
        .map(|&(u, v)| {
            let (nu, nv) = (&users[u], &users[v]);
            let mut a = sets.get(nu).unwrap_or(&empty).clone();
            let mut b = sets.get(nv).unwrap_or(&empty).clone();
            if exclude_pair {
                a.remove(nv);
                b.remove(nu);
            }
            jaccard(&a, &b)
        })
        .sum();
    total / sub.dyads.len() as f64
}

/// Every per-DoI network quantity, plus the corpus-wide curves.
pub fn analyze(
    messages: &[Message],
    assignments: &[MessageDois],
    model: &DoiModel,
    metadata: &Metadata,
    lexicon: Option<&Lexicon>,
    config: &AnalysisConfig,
) -> Result<AnalysisReport> {
    let comm = CommGraph::build(messages, assignments, model.len())?;
    if comm.arcs().is_empty() {
        return Err(Error::Degenerate("no assigned message to analyze".into()));
    }
    let users = comm.users();
    let all_pairs: Vec<(usize, usize)> = comm.arcs().iter().map(|a| (a.source, a.target)).collect();
    let shares = tie_share(&comm, config.attribution);
    let dyad_len: HashMap<(usize, usize), usize> = comm.dyads().map(|(&k, v)| (k, v.len())).collect();

    let comm_neighbors: BTreeMap<String, BTreeSet<String>> = {
        let mut m: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for &(u, v) in dyad_len.keys() {
            m.entry(users[u].clone()).or_default().insert(users[v].clone());
            m.entry(users[v].clone()).or_default().insert(users[u].clone());
        }
        m
    };
    let categories: Vec<String> = match lexicon {
        Some(lex) if config.lexicon_categories.is_empty() => lex.categories().map(str::to_owned).collect(),
        Some(_) => config.lexicon_categories.clone(),
        None => Vec::new(),
    };
    let texts: HashMap<&str, &str> = if lexicon.is_some() {
        messages.iter().map(|m| (m.id.as_str(), m.text.as_str())).collect()
    } else {
        HashMap::new()
    };

    let mut dois = Vec::with_capacity(model.len());
    for d in 0..model.len() {
        let sub = induce_subgraph(&comm, d)?;
        let pairs = sub.arc_pairs(&comm);
        let mut undefined = Vec::new();
        let neighbors = metadata.neighbors.as_ref();
        let lexicon_scores = match lexicon {
            Some(lex) => {
                let tokens: Vec<String> = sub
                    .arcs
                    .iter()
                    .flat_map(|&i| raw_tokens(texts[comm.arcs()[i].message_id.as_str()]))
                    .collect();
                let cats: Vec<&str> = categories.iter().map(String::as_str).collect();
                categories.iter().cloned().zip(lexicon_ratio(&tokens, lex, &cats)?).collect()
            }
            None => BTreeMap::new(),
        };
        let strength = StrengthReport {
            sigma_n: mean_jaccard(&sub, users, neighbors.unwrap_or(&comm_neighbors), neighbors.is_none()),
            sigma_g: metadata.groups.as_ref().map(|g| mean_jaccard(&sub, users, g, false)),
            sigma_i: metadata.items.as_ref().map(|g| mean_jaccard(&sub, users, g, false)),
            conv_len: if sub.dyads.is_empty() {
                0.0
            } else {
                sub.dyads.iter().map(|k| dyad_len[k] as f64).sum::<f64>() / sub.dyads.len() as f64
            },
            msg_len: if sub.arcs.is_empty() {
                0.0
            } else {
                sub.arcs.iter().map(|&i| comm.arcs()[i].tokens as f64).sum::<f64>() / sub.arcs.len() as f64
            },
            lexicon: lexicon_scores,
            kinship: metadata.kinship.as_ref().map(|kin| {
                let hits = sub
                    .dyads
                    .iter()
                    .filter(|&&(u, v)| kin.contains(&(users[u].clone(), users[v].clone())))
                    .count();
                hits as f64 / sub.dyads.len().max(1) as f64
            }),
        };
        let lorenz = match lorenz_gini(&wealth(&comm, &sub, config.wealth)) {
            Ok(l) => Some(l),
            Err(e) => {
                undefined.push(format!("gini: {e}"));
                None
            }
        };
        let assort = match assortativity(&pairs, &config.assortativity) {
            Ok(a) => Some(a),
            Err(e) => {
                undefined.push(format!("assortativity: {e}"));
                None
            }
        };
        dois.push(DoiReport {
            id: d,
            label: model.label(d),
            coverage: coverage(&sub, &comm)?,
            reciprocity: reciprocity(&pairs),
            tie_share: shares[d],
            strength,
            lorenz,
            assortativity: assort,
            undefined,
        });
    }

    let mut distributions = Vec::new();
    for attribution in [Attribution::Top, Attribution::Fractional] {
        let credit: Vec<Vec<f64>> = comm.arcs().iter().map(|a| attribution.credit(&a.dois, model.len())).collect();
        for d in 0..model.len() {
            let conv: Vec<(f64, f64)> = comm
                .dyads()
                .map(|(_, arcs)| {
                    let w = arcs.iter().map(|&i| credit[i][d]).sum::<f64>() / arcs.len() as f64;
                    (arcs.len() as f64, w)
                })
                .collect();
            let msg: Vec<(f64, f64)> = comm
                .arcs()
                .iter()
                .zip(&credit)
                .map(|(a, c)| (a.tokens as f64, c[d]))
                .collect();
            for (quantity, samples) in [("conv_len", conv), ("msg_len", msg)] {
                distributions.push(Distribution {
                    doi: d,
                    attribution,
                    quantity: quantity.into(),
                    cdf: weighted_cdf(samples),
                });
            }
        }
    }

    Ok(AnalysisReport {
        users: users.len(),
        dyads: comm.dyad_count(),
        messages: comm.arcs().len(),
        reciprocity: reciprocity(&all_pairs),
        dois,
        evolution: evolution_curves(&comm, config.attribution),
        reciprocity_fit: reciprocity_vs_length(&comm).ok(),
        distributions,
    })
}

impl AnalysisReport {
    /// Plot-ready tables, one per figure.
    pub fn write_tsvs(&self, dir: &Path) -> Result<()> {
        let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        let label = |d: usize| self.dois[d].label.as_str();

        let mut f = create("fig3_distributions.tsv")?;
        writeln!(f, "doi\tattribution\tquantity\tvalue\tcdf")?;
        for dist in &self.distributions {
            let attr = match dist.attribution {
                Attribution::Top => "top",
                Attribution::Fractional => "fractional",
            };
            for &(v, c) in &dist.cdf {
                writeln!(f, "{}\t{attr}\t{}\t{v}\t{c}", label(dist.doi), dist.quantity)?;
            }
        }
        f.flush()?;

        let mut f = create("fig4_evolution.tsv")?;
        writeln!(f, "family\tx\tdyads\tdoi\tshare")?;
        for (family, points) in [("length", &self.evolution.by_length), ("step", &self.evolution.by_step)] {
            for p in points {
                for (d, s) in p.shares.iter().enumerate() {
                    writeln!(f, "{family}\t{}\t{}\t{}\t{s}", p.x, p.dyads, label(d))?;
                }
            }
        }
        f.flush()?;

        let mut f = create("fig5_reciprocity.tsv")?;
        writeln!(f, "length\treciprocity\tdyads\tfitted")?;
        if let Some(fit) = &self.reciprocity_fit {
            for &(x, y, n) in &fit.points {
                writeln!(f, "{x}\t{y}\t{n}\t{}", fit.intercept + fit.slope * x)?;
            }
        }
        f.flush()?;

        let mut f = create("fig6_lorenz.tsv")?;
        writeln!(f, "doi\tpopulation_share\twealth_share\tgini")?;
        for d in &self.dois {
            if let Some(l) = &d.lorenz {
                for &(p, w) in &l.points {
                    writeln!(f, "{}\t{p}\t{w}\t{}", d.label, l.gini)?;
                }
            }
        }
        f.flush()?;

        let mut f = create("fig7_assortativity.tsv")?;
        writeln!(f, "doi\tr\tstderr\tbaseline\tarcs")?;
        for d in &self.dois {
            if let Some(a) = &d.assortativity {
                writeln!(f, "{}\t{}\t{}\t{}\t{}", d.label, a.r, a.stderr, a.baseline, a.arcs)?;
            }
        }
        f.flush()?;
        Ok(())
    }
}
