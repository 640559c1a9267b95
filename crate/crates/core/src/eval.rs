//! Scoring DoI assignments against editorial labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::doi::{DoiModel, MessageDois};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Consensus labels per message; an empty set marks an unlabeled message.
    pub labels: BTreeMap<String, BTreeSet<String>>,
    /// annotator → message → labels.
    pub annotators: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

fn split_labels(field: &str) -> BTreeSet<String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

impl GroundTruth {
    pub fn from_consensus(labels: impl IntoIterator<Item = (String, BTreeSet<String>)>) -> Self {
        GroundTruth {
            labels: labels.into_iter().collect(),
            annotators: BTreeMap::new(),
        }
    }

    /// CSV with header `message_id,labels[,annotator_id]`; labels are
    /// `;`-separated. Rows without an annotator give the consensus. When no
    /// such rows exist the consensus keeps labels chosen by a strict
    /// majority of the annotators who saw the message.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (Some(id_col), Some(label_col)) = (col("message_id"), col("labels")) else {
            return Err(Error::parse("ground truth", 1, "header must contain message_id and labels"));
        };
        let ann_col = col("annotator_id");
        let mut truth = GroundTruth::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id = rec
                .get(id_col)
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| Error::parse("ground truth", i + 2, "missing message_id"))?
                .trim()
                .to_owned();
            let labels = split_labels(rec.get(label_col).unwrap_or(""));
            match ann_col.and_then(|c| rec.get(c)).map(str::trim).filter(|a| !a.is_empty()) {
                Some(a) => {
                    truth.annotators.entry(a.to_owned()).or_default().insert(id, labels);
                }
                None => {
                    truth.labels.insert(id, labels);
                }
            }
        }
        if truth.labels.is_empty() {
            let mut votes: BTreeMap<&String, (usize, BTreeMap<&String, usize>)> = BTreeMap::new();
            for per_msg in truth.annotators.values() {
                for (id, labels) in per_msg {
                    let e = votes.entry(id).or_default();
                    e.0 += 1;
                    for l in labels {
                        *e.1.entry(l).or_default() += 1;
                    }
                }
            }
            let consensus: Vec<(String, BTreeSet<String>)> = votes
                .into_iter()
                .map(|(id, (n, counts))| {
                    let keep = counts.into_iter().filter(|&(_, c)| 2 * c > n).map(|(l, _)| l.clone()).collect();
                    (id.clone(), keep)
                })
                .collect();
            truth.labels = consensus.into_iter().collect();
        }
        Ok(truth)
    }

    pub fn alphabet(&self) -> BTreeSet<String> {
        self.labels.values().flatten().cloned().collect()
    }

    /// Messages carrying at least one label.
    pub fn labeled(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.labels.iter().filter(|(_, l)| !l.is_empty())
    }

    /// Macro-averaged Fleiss kappa over messages seen by every annotator.
    pub fn kappa(&self) -> Result<f64> {
        let annotators: Vec<_> = self.annotators.values().collect();
        if annotators.len() < 2 {
            return Err(Error::InvalidParameter("kappa needs at least two annotators".into()));
        }
        let items: Vec<&String> = annotators[0]
            .keys()
            .filter(|id| annotators.iter().all(|a| a.contains_key(*id)))
            .collect();
        let alphabet: BTreeSet<&String> = annotators.iter().flat_map(|a| a.values().flatten()).collect();
        let ratings: Vec<Vec<Vec<bool>>> = annotators
            .iter()
            .map(|a| {
                items
                    .iter()
                    .map(|id| alphabet.iter().map(|l| a[*id].contains(*l)).collect())
                    .collect()
            })
            .collect();
        fleiss_kappa(&ratings)
    }
}

/// Ordered, de-duplicated label list per message.
pub fn label_lists(assignments: &[MessageDois], model: &DoiModel) -> BTreeMap<String, Vec<String>> {
    assignments
        .iter()
        .map(|a| {
            let mut labels: Vec<String> = Vec::with_capacity(a.dois.len());
            for &(d, _) in &a.dois {
                let l = model.label(d);
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
            (a.message_id.clone(), labels)
        })
        .collect()
}

/// Labels each DoI with the editorial label most often attached to
/// messages whose top DoI it is (ties to the lexicographically smallest).
pub fn majority_labels(assignments: &[MessageDois], truth: &GroundTruth) -> BTreeMap<usize, String> {
    let mut votes: BTreeMap<usize, BTreeMap<&String, usize>> = BTreeMap::new();
    for a in assignments {
        let (Some(&(d, _)), Some(labels)) = (a.dois.first(), truth.labels.get(&a.message_id)) else {
            continue;
        };
        for l in labels {
            *votes.entry(d).or_default().entry(l).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .filter_map(|(d, counts)| {
            let best = counts.iter().map(|(_, &c)| c).max()?;
            counts.into_iter().find(|&(_, c)| c == best).map(|(l, _)| (d, l.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Soft,
    Hard,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(MatchMode::Soft),
            "hard" => Ok(MatchMode::Hard),
            _ => Err(Error::Unknown {
                kind: "match mode",
                name: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    Perfect,
    First,
    Partial,
    None,
}

/// Checked in order perfect, first, partial; hard mode keeps only `L[0]`
/// and admits perfect or none.
pub fn classify(l_algo: &[String], s_edit: &BTreeSet<String>, mode: MatchMode) -> MatchKind {
    let list = match mode {
        MatchMode::Hard => &l_algo[..l_algo.len().min(1)],
        MatchMode::Soft => l_algo,
    };
    let set: BTreeSet<&String> = list.iter().collect();
    if !set.is_empty() && set.len() == s_edit.len() && set.iter().all(|l| s_edit.contains(*l)) {
        return MatchKind::Perfect;
    }
    if mode == MatchMode::Hard {
        return MatchKind::None;
    }
    if list.first().is_some_and(|l| s_edit.contains(l)) {
        MatchKind::First
    } else if list.iter().any(|l| s_edit.contains(l)) {
        MatchKind::Partial
    } else {
        MatchKind::None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub perfect: f64,
    pub first: f64,
    pub partial: f64,
    pub none: f64,
    pub precision: f64,
    pub scored: usize,
    /// Labeled messages without any DoI assignment (not scored).
    pub unassigned: usize,
}

#[derive(Default)]
struct Tally {
    counts: [usize; 4],
    precision: f64,
    n: usize,
}

impl Tally {
    fn add(&mut self, list: &[String], truth: &BTreeSet<String>, mode: MatchMode) {
        let kind = classify(list, truth, mode);
        self.counts[kind as usize] += 1;
        let list = if mode == MatchMode::Hard { &list[..list.len().min(1)] } else { list };
        let correct = list.iter().filter(|l| truth.contains(*l)).count();
        self.precision += correct as f64 / list.len() as f64;
        self.n += 1;
    }

    fn report(&self, unassigned: usize) -> MatchReport {
        let n = self.n.max(1) as f64;
        MatchReport {
            perfect: self.counts[0] as f64 / n,
            first: self.counts[1] as f64 / n,
            partial: self.counts[2] as f64 / n,
            none: self.counts[3] as f64 / n,
            precision: self.precision / n,
            scored: self.n,
            unassigned,
        }
    }
}

pub fn match_assignments(
    lists: &BTreeMap<String, Vec<String>>,
    truth: &GroundTruth,
    mode: MatchMode,
) -> Result<MatchReport> {
    let alphabet = truth.alphabet();
    let mut tally = Tally::default();
    let mut unassigned = 0;
    for (id, s_edit) in truth.labeled() {
        match lists.get(id).filter(|l| !l.is_empty()) {
            Some(list) => {
                if let Some(bad) = list.iter().find(|l| !alphabet.contains(*l)) {
                    return Err(Error::AlphabetMismatch(format!(
                        "assigned label {bad:?} on message {id:?} is not among the ground-truth labels {alphabet:?}"
                    )));
                }
                tally.add(list, s_edit, mode);
            }
            None => unassigned += 1,
        }
    }
    if tally.n == 0 {
        return Err(Error::Degenerate("no labeled message has an assignment".into()));
    }
    Ok(tally.report(unassigned))
}

/// Scores uniformly random label lists whose lengths follow `sizes`, the
/// empirical list-length sample of the real assignments. Trial t uses seed
/// `seed + t`; the report averages all trials.
pub fn random_baseline(
    truth: &GroundTruth,
    alphabet: &[String],
    sizes: &[usize],
    trials: usize,
    seed: u64,
    mode: MatchMode,
) -> Result<MatchReport> {
    if trials == 0 || alphabet.is_empty() || sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidParameter(
            "random baseline needs trials >= 1, a non-empty alphabet and positive list sizes".into(),
        ));
    }
    let mut tally = Tally::default();
    let mut list = Vec::with_capacity(alphabet.len());
    for t in 0..trials as u64 {
        let mut rng = rng::substream(seed.wrapping_add(t), "random-baseline");
        for (_, s_edit) in truth.labeled() {
            let size = (*sizes.choose(&mut rng).expect("sizes non-empty")).min(alphabet.len());
            list.clear();
            let mut pool: Vec<&String> = alphabet.iter().collect();
            for _ in 0..size {
                let i = rng.random_range(0..pool.len());
                list.push(pool.swap_remove(i).clone());
            }
            tally.add(&list, s_edit, mode);
        }
    }
    if tally.n == 0 {
        return Err(Error::Degenerate("ground truth has no labeled message".into()));
    }
    let mut r = tally.report(0);
    r.scored /= trials;
    Ok(r)
}

/// `ratings[annotator][item][label]`; one binary Fleiss computation per
/// label, macro-averaged. A label on which chance agreement is 1 scores 1.
pub fn fleiss_kappa(ratings: &[Vec<Vec<bool>>]) -> Result<f64> {
    let n_raters = ratings.len();
    if n_raters < 2 {
        return Err(Error::InvalidParameter("kappa needs at least two annotators".into()));
    }
    let n_items = ratings[0].len();
    let n_labels = ratings[0].first().map_or(0, Vec::len);
    let consistent = ratings
        .iter()
        .all(|r| r.len() == n_items && r.iter().all(|item| item.len() == n_labels));
    if !consistent || n_items == 0 || n_labels == 0 {
        return Err(Error::InvalidParameter(
            "every annotator must rate the same non-empty item and label sets".into(),
        ));
    }
    let n = n_raters as f64;
    let mut total = 0.0;
    for l in 0..n_labels {
        let mut p_bar = 0.0;
        let mut positives = 0.0;
        for i in 0..n_items {
            let yes = ratings.iter().filter(|r| r[i][l]).count() as f64;
            let no = n - yes;
            p_bar += (yes * yes + no * no - n) / (n * (n - 1.0));
            positives += yes;
        }
        p_bar /= n_items as f64;
        let p1 = positives / (n * n_items as f64);
        let p_e = p1 * p1 + (1.0 - p1) * (1.0 - p1);
        total += if (1.0 - p_e).abs() < 1e-15 { 1.0 } else { (p_bar - p_e) / (1.0 - p_e) };
    }
    Ok(total / n_labels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(labels: &[&str]) -> BTreeSet<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    fn list(labels: &[&str]) -> Vec<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn taxonomy_examples() {
        use MatchKind::*;
        assert_eq!(classify(&list(&["Sta"]), &set(&["Sta"]), MatchMode::Soft), Perfect);
        assert_eq!(classify(&list(&["Sta", "Sup"]), &set(&["Sup"]), MatchMode::Soft), Partial);
        assert_eq!(classify(&list(&["Sup", "Sta"]), &set(&["Sup"]), MatchMode::Soft), First);
        assert_eq!(classify(&list(&["Kno"]), &set(&["Sta"]), MatchMode::Soft), None);
        assert_eq!(classify(&list(&["Sup", "Sta"]), &set(&["Sta", "Sup"]), MatchMode::Soft), Perfect);
        assert_eq!(classify(&list(&["Sup", "Sta"]), &set(&["Sup"]), MatchMode::Hard), Perfect);
        assert_eq!(classify(&list(&["Sta", "Sup"]), &set(&["Sup"]), MatchMode::Hard), None);
    }

    fn truth(rows: &[(&str, &[&str])]) -> GroundTruth {
        GroundTruth::from_consensus(rows.iter().map(|(id, l)| (id.to_string(), set(l))))
    }

    #[test]
    fn precision_bounds() {
        let t = truth(&[("a", &["x"]), ("b", &["y"])]);
        let right: BTreeMap<String, Vec<String>> = [("a".into(), list(&["x"])), ("b".into(), list(&["y"]))].into();
        let wrong: BTreeMap<String, Vec<String>> = [("a".into(), list(&["y"])), ("b".into(), list(&["x"]))].into();
        let r = match_assignments(&right, &t, MatchMode::Soft).unwrap();
        assert_eq!((r.precision, r.perfect), (1.0, 1.0));
        let w = match_assignments(&wrong, &t, MatchMode::Soft).unwrap();
        assert_eq!((w.precision, w.none), (0.0, 1.0));
    }

    #[test]
    fn unlabeled_and_unassigned_excluded() {
        let t = truth(&[("a", &["x"]), ("b", &[]), ("c", &["x"])]);
        let lists: BTreeMap<String, Vec<String>> = [("a".into(), list(&["x", "y"])), ("b".into(), list(&["x"]))].into();
        let t2 = truth(&[("a", &["x"]), ("b", &[]), ("c", &["x"]), ("d", &["y"])]);
        let r = match_assignments(&lists, &t2, MatchMode::Soft).unwrap();
        assert_eq!((r.scored, r.unassigned), (1, 2));
        assert_eq!(r.first, 1.0);
        assert_eq!(r.precision, 0.5);
        // "y" is absent from this truth's alphabet
        assert!(matches!(match_assignments(&lists, &t, MatchMode::Soft), Err(Error::AlphabetMismatch(_))));
    }

    #[test]
    fn degenerate_random_baselines() {
        let one = truth(&[("a", &["x"]), ("b", &["x"])]);
        let r = random_baseline(&one, &list(&["x"]), &[1], 10, 0, MatchMode::Soft).unwrap();
        assert_eq!(r.perfect, 1.0);
        assert_eq!(r.scored, 2);
        let three = truth(&[("a", &["x"])]);
        let r = random_baseline(&three, &list(&["x", "y", "z"]), &[1], 10_000, 3, MatchMode::Soft).unwrap();
        assert!((r.perfect - 1.0 / 3.0).abs() < 0.02, "{}", r.perfect);
        assert!(random_baseline(&three, &list(&["x"]), &[1], 0, 0, MatchMode::Soft).is_err());
    }

    #[test]
    fn kappa_golden_values() {
        let col = |v: &[u8]| -> Vec<Vec<bool>> { v.iter().map(|&b| vec![b == 1]).collect() };
        assert_eq!(fleiss_kappa(&[col(&[1, 0, 1, 1]), col(&[1, 0, 1, 1])]).unwrap(), 1.0);
        // agree, agree, disagree, disagree with balanced marginals: chance level
        assert!(fleiss_kappa(&[col(&[1, 0, 1, 0]), col(&[1, 0, 0, 1])]).unwrap().abs() < 1e-12);
        // P̄ = 1/2, p = 3/4, P̄e = 5/8
        let k = fleiss_kappa(&[col(&[1, 1, 1, 0]), col(&[1, 1, 0, 1])]).unwrap();
        assert!((k + 1.0 / 3.0).abs() < 1e-12);
        // constant category everywhere: chance agreement 1
        assert_eq!(fleiss_kappa(&[col(&[1, 1]), col(&[1, 1])]).unwrap(), 1.0);
        assert!(fleiss_kappa(&[col(&[1])]).is_err());
        assert!(fleiss_kappa(&[col(&[1, 0]), col(&[1])]).is_err());
    }

    #[test]
    fn csv_consensus_and_majority() {
        let csv = "message_id,labels,annotator_id\nm1,status;support,\nm2,,\nm1,status,a\nm1,status;support,b\n";
        let t = GroundTruth::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.labels["m1"], set(&["status", "support"]));
        assert!(t.labels["m2"].is_empty());
        assert_eq!(t.annotators.len(), 2);

        let csv = "message_id,labels,annotator_id\nm1,x;y,a\nm1,x,b\nm1,x;z,c\nm2,y,a\nm2,y,b\nm2,x,c\n";
        let t = GroundTruth::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.labels["m1"], set(&["x"]));
        assert_eq!(t.labels["m2"], set(&["y"]));
        // per label: x = 1/4, y = -1/3, z = -1/5
        let k = t.kappa().unwrap();
        let expected = -17.0 / 180.0;
        assert!((k - expected).abs() < 1e-12, "{k} vs {expected}");

        let plain = "message_id,labels\nm1,a\n";
        assert_eq!(GroundTruth::read_csv(plain.as_bytes()).unwrap().labels.len(), 1);
        assert!(GroundTruth::read_csv("id,labels\nm1,a\n".as_bytes()).is_err());
    }

    #[test]
    fn majority_labels_from_truth() {
        let t = truth(&[("a", &["x"]), ("b", &["x"]), ("c", &["y"]), ("d", &["y", "x"])]);
        let md = |id: &str, d: usize| MessageDois {
            message_id: id.into(),
            dois: vec![(d, 1.0)],
        };
        let m = majority_labels(&[md("a", 0), md("b", 0), md("c", 1), md("d", 1)], &t);
        assert_eq!(m[&0], "x");
        // DoI 1 sees y twice and x once
        assert_eq!(m[&1], "y");
    }
}
