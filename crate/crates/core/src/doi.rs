//! Domains of Interaction: communities of buckets and message membership.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::convgraph::AssignmentMap;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nmf::rank_terms;
use crate::textprep::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Doi {
    pub id: usize,
    pub buckets: Vec<usize>,
    pub top_terms: Vec<(String, f64)>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoiModel {
    pub dois: Vec<Doi>,
    /// DoI id per bucket.
    pub bucket_doi: Vec<usize>,
}

impl DoiModel {
    pub fn len(&self) -> usize {
        self.dois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dois.is_empty()
    }

    pub fn label(&self, id: usize) -> String {
        self.dois[id].label.clone().unwrap_or_else(|| format!("doi{id}"))
    }

    /// Attaches human labels; ids not in the model are an error.
    pub fn set_labels(&mut self, labels: &BTreeMap<usize, String>) -> Result<()> {
        for (&id, label) in labels {
            let doi = self
                .dois
                .get_mut(id)
                .ok_or_else(|| Error::InvalidParameter(format!("no DoI with id {id}")))?;
            doi.label = Some(label.clone());
        }
        Ok(())
    }

    /// Parses a `doi,label` CSV with header.
    pub fn read_labels<R: Read>(input: R) -> Result<BTreeMap<usize, String>> {
        let mut out = BTreeMap::new();
        let mut rdr = csv::Reader::from_reader(input);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::parse("labels", i + 2, "expected integer DoI id"))?;
            let label = rec.get(1).ok_or_else(|| Error::parse("labels", i + 2, "missing label"))?;
            out.insert(id, label.trim().to_owned());
        }
        Ok(out)
    }
}

/// One DoI per community; top terms ranked by W weight summed over its buckets.
pub fn form_dois(partition: &Partition, w: &DenseMatrix, vocab: &Vocabulary, n_terms: usize) -> Result<DoiModel> {
    if partition.membership.len() != w.cols() {
        return Err(Error::InvalidParameter(format!(
            "partition covers {} buckets but W has {}",
            partition.membership.len(),
            w.cols()
        )));
    }
    let mut dois = Vec::with_capacity(partition.count);
    for id in 0..partition.count {
        let buckets = partition.members(id);
        let scores: Vec<f64> = (0..w.rows())
            .map(|t| buckets.iter().map(|&b| w[(t, b)]).sum())
            .collect();
        dois.push(Doi {
            id,
            buckets,
            top_terms: rank_terms(&scores, vocab, n_terms.min(vocab.len()))?,
            label: None,
        });
    }
    Ok(DoiModel {
        dois,
        bucket_doi: partition.membership.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageDois {
    pub message_id: String,
    /// (DoI id, p) sorted by p descending, ties by id.
    pub dois: Vec<(usize, f64)>,
}

/// `p(m, D)` is the largest probability among m's buckets that lie in D.
pub fn assign_messages(assignments: &AssignmentMap, model: &DoiModel) -> Result<Vec<MessageDois>> {
    let mut out = Vec::with_capacity(assignments.len());
    for (id, buckets) in assignments {
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for &(b, p) in buckets {
            let d = *model
                .bucket_doi
                .get(b)
                .ok_or_else(|| Error::InvalidParameter(format!("bucket {b} not covered by the DoI model")))?;
            let e = best.entry(d).or_insert(p);
            *e = e.max(p);
        }
        let mut dois: Vec<(usize, f64)> = best.into_iter().collect();
        dois.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.push(MessageDois {
            message_id: id.clone(),
            dois,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct JsonDoi {
    id: usize,
    label: String,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    message_id: String,
    dois: Vec<JsonDoi>,
}

pub fn write_assignments<W: Write>(assignments: &[MessageDois], model: &DoiModel, mut out: W) -> Result<()> {
    for a in assignments {
        let line = JsonLine {
            message_id: a.message_id.clone(),
            dois: a
                .dois
                .iter()
                .map(|&(id, p)| JsonDoi {
                    id,
                    label: model.label(id),
                    p,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_assignments<R: BufRead>(input: R) -> Result<Vec<MessageDois>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonLine = serde_json::from_str(&line).map_err(|e| Error::parse("assignments", i + 1, e.to_string()))?;
        out.push(MessageDois {
            message_id: parsed.message_id,
            dois: parsed.dois.into_iter().map(|d| (d.id, d.p)).collect(),
        });
    }
    Ok(out)
}
