//! Synthetic conversation corpora with planted interaction domains.
//!
//! Each domain owns a pool of synthetic tokens (`d0_t0017`) split into
//! topics. Messages draw tokens from one topic of their domain, with a small
//! leakage into other domains' pools. Within a dyad, each next message stays
//! in the previous message's domain with probability `reciprocation`; the
//! first message's domain (and the target of a switch) follows the start
//! distribution, optionally with a decaying preference for domain 0.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, DyadKey, Message};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Surface stopwords mixed into messages in quasi-natural mode.
pub const QUASI_NATURAL_STOPWORDS: &[&str] = &["the", "and", "of", "to", "you", "is", "in", "my"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// Dyads are uniformly random user pairs.
    Uniform,
    /// Dyads opening in domain 0 go from a non-hub user to one of `hubs`
    /// hub users; other dyads are uniform.
    StatusStar { hubs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub domains: usize,
    /// Defaults to status/support/knowledge for up to three domains.
    pub domain_names: Option<Vec<String>>,
    pub vocab_per_domain: usize,
    pub topics_per_domain: usize,
    /// Probability that a token leaks from another domain's pool.
    pub overlap: f64,
    pub users: usize,
    pub dyads: usize,
    pub mean_conv_len: f64,
    pub mean_msg_len: f64,
    /// Probability that the next message stays in the current domain.
    pub reciprocation: f64,
    /// Probability that the next message comes from the other user.
    pub reply_prob: f64,
    /// Relative weights of the domains for opening messages (uniform if None).
    pub start_weights: Option<Vec<f64>>,
    /// Domain 0's start weight at step n is `w0 · decay^(n-1)`.
    pub status_decay: Option<f64>,
    pub topology: Topology,
    /// Per-dyad reply probability uniform in [0,1], with longer expected
    /// conversations for more reciprocal dyads.
    pub survival_bias: bool,
    /// Prefix every message with a few stopwords.
    pub quasi_natural: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            domains: 3,
            domain_names: None,
            vocab_per_domain: 60,
            topics_per_domain: 3,
            overlap: 0.05,
            users: 4000,
            dyads: 5000,
            mean_conv_len: 4.0,
            mean_msg_len: 8.0,
            reciprocation: 0.95,
            reply_prob: 0.8,
            start_weights: None,
            status_decay: None,
            topology: Topology::Uniform,
            survival_bias: false,
            quasi_natural: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.domains < 2 {
            return bad("synthetic corpus needs at least 2 domains".into());
        }
        if !(0.0..0.5).contains(&self.overlap) {
            return bad(format!("overlap {} must lie in [0, 0.5)", self.overlap));
        }
        if !(0.0..=1.0).contains(&self.reciprocation) || !(0.0..=1.0).contains(&self.reply_prob) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.users < 2 || self.dyads == 0 || self.topics_per_domain == 0 {
            return bad("users >= 2, dyads >= 1 and topics_per_domain >= 1 required".into());
        }
        if self.mean_conv_len < 1.0 || self.mean_msg_len <= 0.0 {
            return bad("mean conversation length must be >= 1 and message length > 0".into());
        }
        if self.vocab_per_domain < self.topics_per_domain {
            return bad(format!(
                "infeasible: {} tokens per domain cannot fill {} topics of at least one token",
                self.vocab_per_domain, self.topics_per_domain
            ));
        }
        let max_pairs = self.users * (self.users - 1) / 2;
        if self.dyads > max_pairs {
            return bad(format!("infeasible: {} dyads exceed {} user pairs", self.dyads, max_pairs));
        }
        if let Topology::StatusStar { hubs } = self.topology {
            if hubs == 0 || hubs >= self.users {
                return bad("status-star topology needs 1 <= hubs < users".into());
            }
        }
        if let Some(w) = &self.start_weights {
            if w.len() != self.domains || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return bad("start_weights must be non-negative, one per domain, not all zero".into());
            }
        }
        if let Some(names) = &self.domain_names {
            if names.len() != self.domains {
                return bad("domain_names must list one name per domain".into());
            }
        }
        if let Some(l) = self.status_decay {
            if !(0.0..=1.0).contains(&l) {
                return bad("status_decay must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        match &self.domain_names {
            Some(n) => n.clone(),
            None if self.domains <= 3 => ["status", "support", "knowledge"][..self.domains]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            None => (0..self.domains).map(|d| format!("d{d}")).collect(),
        }
    }

    fn base_weights(&self) -> Vec<f64> {
        let w = self
            .start_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.domains]);
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    /// Start distribution at conversation step `n` (1-based).
    pub fn start_distribution(&self, n: usize) -> Vec<f64> {
        let base = self.base_weights();
        let Some(decay) = self.status_decay else {
            return base;
        };
        let first = base[0] * decay.powi(n as i32 - 1);
        let rest: f64 = base[1..].iter().sum();
        let mut q = vec![first];
        for &b in &base[1..] {
            q.push(if rest > 0.0 { (1.0 - first) * b / rest } else { (1.0 - first) / (self.domains - 1) as f64 });
        }
        q
    }

    /// Domain transition probabilities into step `n` from domain `from`.
    fn transition(&self, n: usize, from: usize) -> Vec<f64> {
        let q = self.start_distribution(n);
        let others: f64 = q.iter().enumerate().filter(|&(d, _)| d != from).map(|(_, p)| p).sum();
        (0..self.domains)
            .map(|d| {
                if d == from {
                    self.reciprocation
                } else if others > 0.0 {
                    (1.0 - self.reciprocation) * q[d] / others
                } else {
                    (1.0 - self.reciprocation) / (self.domains - 1) as f64
                }
            })
            .collect()
    }

    /// Expected per-domain proportion of the n-th message, n = 1..=steps.
    pub fn expected_step_curve(&self, steps: usize) -> Vec<Vec<f64>> {
        let mut curve = Vec::with_capacity(steps);
        let mut pi = self.start_distribution(1);
        for n in 1..=steps {
            if n > 1 {
                let mut next = vec![0.0; self.domains];
                for (c, &pc) in pi.iter().enumerate() {
                    for (d, t) in self.transition(n, c).into_iter().enumerate() {
                        next[d] += pc * t;
                    }
                }
                pi = next;
            }
            curve.push(pi.clone());
        }
        curve
    }
}

/// First step at which domain 0's proportion drops below another domain's.
pub fn crossover_step(curve: &[Vec<f64>]) -> Option<usize> {
    curve.iter().position(|p| p[1..].iter().any(|&o| o > p[0])).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedStats {
    pub domain_names: Vec<String>,
    pub message_count: usize,
    pub dyad_count: usize,
    /// Fraction of messages planted in each domain.
    pub label_marginals: Vec<f64>,
    /// Expected domain mix at steps 1..=20.
    pub expected_step_curve: Vec<Vec<f64>>,
    pub expected_crossover: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub messages: Vec<Message>,
    /// Planted domain index per message, parallel to `messages`.
    pub domains: Vec<usize>,
    /// Planted topic index (within its domain) per message.
    pub topics: Vec<usize>,
    /// Planted per-dyad domain shares.
    pub dyad_shares: Vec<(DyadKey, Vec<f64>)>,
    pub stats: PlantedStats,
}

impl SynthCorpus {
    pub fn label_of(&self, i: usize) -> &str {
        &self.stats.domain_names[self.domains[i]]
    }

    /// Writes `corpus.jsonl`, `labels.csv` and `manifest.json` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        corpus::write_jsonl(&self.messages, BufWriter::new(File::create(dir.join("corpus.jsonl"))?))?;
        let mut w = csv::Writer::from_writer(File::create(dir.join("labels.csv"))?);
        w.write_record(["message_id", "labels"])?;
        for (i, m) in self.messages.iter().enumerate() {
            w.write_record([m.id.as_str(), self.label_of(i)])?;
        }
        w.flush()?;
        #[derive(Serialize)]
        struct Manifest<'a> {
            spec: &'a SynthSpec,
            planted: &'a PlantedStats,
        }
        let mut out = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(
            &mut out,
            &Manifest {
                spec: &self.spec,
                planted: &self.stats,
            },
        )?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

fn sample_index(rng: &mut StreamRng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn token(domain: usize, idx: usize) -> String {
    format!("d{domain}_t{idx:04}")
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = rng::substream(spec.seed, "synth");
    let names = spec.names();
    let d_count = spec.domains;
    let v = spec.vocab_per_domain;
    let topic_bounds: Vec<(usize, usize)> = (0..spec.topics_per_domain)
        .map(|s| (s * v / spec.topics_per_domain, (s + 1) * v / spec.topics_per_domain))
        .collect();
    let msg_len = Poisson::new(spec.mean_msg_len).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let hubs = match spec.topology {
        Topology::StatusStar { hubs } => hubs,
        Topology::Uniform => 0,
    };
    let user = |i: usize| format!("u{i:05}");

    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut messages = Vec::new();
    let mut domains = Vec::new();
    let mut topics = Vec::new();
    let mut dyad_shares = Vec::with_capacity(spec.dyads);

    for dyad in 0..spec.dyads {
        let first = sample_index(&mut rng, &spec.start_distribution(1));
        let (a, b) = loop {
            let (a, b) = if hubs > 0 && first == 0 {
                (rng.random_range(hubs..spec.users), rng.random_range(0..hubs))
            } else {
                let a = rng.random_range(0..spec.users);
                let b = rng.random_range(0..spec.users - 1);
                (a, if b >= a { b + 1 } else { b })
            };
            if used.insert((a.min(b), a.max(b))) {
                break (a, b);
            }
        };
        let (reply_prob, mean_len) = if spec.survival_bias {
            let q: f64 = rng.random();
            (q, 1.0 + (spec.mean_conv_len - 1.0) * q)
        } else {
            (spec.reply_prob, spec.mean_conv_len)
        };
        let len = 1 + Geometric::new(1.0 / mean_len)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(&mut rng) as usize;

        let mut counts = vec![0usize; d_count];
        let mut sender_is_a = true;
        let mut domain = first;
        for step in 1..=len {
            if step > 1 {
                if rng.random::<f64>() < reply_prob {
                    sender_is_a = !sender_is_a;
                }
                domain = sample_index(&mut rng, &spec.transition(step, domain));
            }
            let topic = rng.random_range(0..spec.topics_per_domain);
            let (lo, hi) = topic_bounds[topic];
            let n_tokens = (msg_len.sample(&mut rng) as usize).max(1);
            let mut words: Vec<String> = Vec::with_capacity(n_tokens + 2);
            if spec.quasi_natural {
                for _ in 0..2 {
                    words.push(QUASI_NATURAL_STOPWORDS[rng.random_range(0..QUASI_NATURAL_STOPWORDS.len())].to_owned());
                }
            }
            for _ in 0..n_tokens {
                if spec.overlap > 0.0 && rng.random::<f64>() < spec.overlap {
                    let mut other = rng.random_range(0..d_count - 1);
                    if other >= domain {
                        other += 1;
                    }
                    words.push(token(other, rng.random_range(0..v)));
                } else {
                    words.push(token(domain, rng.random_range(lo..hi)));
                }
            }
            let (s, r) = if sender_is_a { (a, b) } else { (b, a) };
            messages.push(Message {
                id: format!("m{dyad:06}_{step:04}"),
                sender: user(s),
                recipient: user(r),
                timestamp: step as u64,
                text: words.join(" "),
            });
            domains.push(domain);
            topics.push(topic);
            counts[domain] += 1;
        }
        dyad_shares.push((
            DyadKey::new(&user(a), &user(b)),
            counts.iter().map(|&c| c as f64 / len as f64).collect(),
        ));
    }

    let mut marginals = vec![0.0; d_count];
    for &d in &domains {
        marginals[d] += 1.0;
    }
    let total = domains.len() as f64;
    marginals.iter_mut().for_each(|x| *x /= total);
    let curve = spec.expected_step_curve(20);
    let stats = PlantedStats {
        domain_names: names,
        message_count: messages.len(),
        dyad_count: spec.dyads,
        label_marginals: marginals,
        expected_crossover: crossover_step(&curve),
        expected_step_curve: curve,
    };
    Ok(SynthCorpus {
        spec: spec.clone(),
        messages,
        domains,
        topics,
        dyad_shares,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_dyads, corpus_stats, load_messages, InputFormat, LoadOptions};
    use crate::textprep::raw_tokens;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            users: 300,
            dyads: 400,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a.messages, b.messages);
        assert_ne!(a.messages, generate(&small(6)).unwrap().messages);
    }

    #[test]
    fn infeasible_specs_rejected() {
        let s = SynthSpec {
            vocab_per_domain: 2,
            topics_per_domain: 3,
            ..small(0)
        };
        assert!(generate(&s).is_err());
        let s = SynthSpec { users: 10, dyads: 46, ..small(0) };
        assert!(generate(&s).is_err());
        let s = SynthSpec { domains: 1, ..small(0) };
        assert!(generate(&s).is_err());
    }

    #[test]
    fn pure_domains_without_leakage() {
        let s = SynthSpec {
            reciprocation: 1.0,
            overlap: 0.0,
            ..small(1)
        };
        let c = generate(&s).unwrap();
        for (i, m) in c.messages.iter().enumerate() {
            let prefix = format!("d{}_", c.domains[i]);
            assert!(m.text.split(' ').all(|t| t.starts_with(&prefix)));
        }
        for (_, shares) in &c.dyad_shares {
            assert!(shares.iter().any(|&x| x == 1.0));
        }
    }

    #[test]
    fn label_marginals_within_three_sigma() {
        let c = generate(&SynthSpec {
            dyads: 3000,
            users: 3000,
            ..small(2)
        })
        .unwrap();
        // uniform start and symmetric switching keep every domain at 1/3
        let n = c.messages.len() as f64;
        // messages within a dyad are correlated; inflate the variance by the mean dyad length
        let sigma = (1.0 / 3.0 * 2.0 / 3.0 * 4.0 / n).sqrt();
        for &p in &c.stats.label_marginals {
            assert!((p - 1.0 / 3.0).abs() < 3.0 * sigma, "{p} vs 1/3 (sigma {sigma})");
        }
    }

    #[test]
    fn short_conversation_calibration() {
        let c = generate(&SynthSpec {
            mean_conv_len: 1.75,
            dyads: 20_000,
            users: 20_000,
            ..small(3)
        })
        .unwrap();
        let dyads = build_dyads(&c.messages);
        let stats = corpus_stats(&c.messages, &dyads, |t| raw_tokens(t).len()).unwrap();
        assert!((stats.conv_len_mean - 1.75).abs() < 0.05 * 1.75, "{}", stats.conv_len_mean);
        assert_eq!(stats.conv_len_median, 1.0);
    }

    #[test]
    fn half_reciprocation_balances_transitions() {
        let c = generate(&SynthSpec {
            domains: 2,
            reciprocation: 0.5,
            dyads: 4000,
            users: 4000,
            ..small(4)
        })
        .unwrap();
        let (mut same, mut diff) = (0usize, 0usize);
        for w in c.messages.windows(2).zip(c.domains.windows(2)) {
            let (m, d) = w;
            let same_dyad = m[0].id[..7] == m[1].id[..7];
            if same_dyad && m[0].sender != m[1].sender {
                if d[0] == d[1] {
                    same += 1;
                } else {
                    diff += 1;
                }
            }
        }
        let ratio = same as f64 / diff as f64;
        assert!((ratio - 1.0).abs() < 0.1, "intra/inter ratio {ratio}");
    }

    #[test]
    fn decaying_status_curve_is_monotone() {
        let s = SynthSpec {
            status_decay: Some(0.5),
            start_weights: Some(vec![0.9, 0.05, 0.05]),
            reciprocation: 0.5,
            ..small(0)
        };
        let curve = s.expected_step_curve(15);
        for w in curve.windows(2) {
            assert!(w[1][0] < w[0][0]);
        }
        for p in &curve {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(crossover_step(&curve), Some(4));
    }

    #[test]
    fn files_round_trip_through_loader() {
        let c = generate(&SynthSpec {
            quasi_natural: true,
            ..small(7)
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.write_files(dir.path()).unwrap();
        let loaded = load_messages(&dir.path().join("corpus.jsonl"), InputFormat::Jsonl, LoadOptions::default()).unwrap();
        assert_eq!(loaded.messages, c.messages);
        assert!(dir.path().join("labels.csv").exists());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["planted"]["message_count"], c.messages.len());
    }

    #[test]
    fn status_star_routes_status_openers_to_hubs() {
        let c = generate(&SynthSpec {
            topology: Topology::StatusStar { hubs: 10 },
            ..small(8)
        })
        .unwrap();
        let hub_names: Vec<String> = (0..10).map(|i| format!("u{i:05}")).collect();
        for (i, m) in c.messages.iter().enumerate() {
            if m.id.ends_with("_0001") && c.domains[i] == 0 {
                assert!(hub_names.contains(&m.recipient));
                assert!(!hub_names.contains(&m.sender));
            }
        }
    }
}
