//! Message ingestion and dyadic indexing.
//!
//! A corpus is a flat list of directed messages. Messages between the same
//! two users, in either direction, form one dyad whose timeline is ordered by
//! `(timestamp, id)`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One directed, timestamped text communication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub sender: String,
    pub recipient: String,
    pub timestamp: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::InvalidParameter(format!("unknown input format {other:?}"))),
        }
    }
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(InputFormat::Jsonl),
            "csv" => Some(InputFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Skip malformed records instead of failing on the first one.
    pub skip_malformed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub messages: Vec<Message>,
    pub self_messages_skipped: usize,
    /// 1-based line numbers of malformed records skipped in skip mode.
    pub malformed_lines: Vec<usize>,
}

pub fn load_messages(path: &Path, format: InputFormat, options: LoadOptions) -> Result<LoadReport> {
    let file = File::open(path)?;
    read_messages(BufReader::new(file), format, options, &path.display().to_string())
}

pub fn read_messages<R: BufRead>(
    reader: R,
    format: InputFormat,
    options: LoadOptions,
    source_name: &str,
) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut accept = |report: &mut LoadReport, line: usize, parsed: Result<Message>| -> Result<()> {
        let msg = match parsed {
            Ok(m) => m,
            Err(e) if options.skip_malformed => {
                log::warn!("{source_name}: skipping malformed line {line}: {e}");
                report.malformed_lines.push(line);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        if msg.sender == msg.recipient {
            report.self_messages_skipped += 1;
            return Ok(());
        }
        if seen.insert(msg.id.clone(), line).is_some() {
            return Err(Error::DuplicateId(msg.id));
        }
        report.messages.push(msg);
        Ok(())
    };

    match format {
        InputFormat::Jsonl => {
            for (i, line) in reader.lines().enumerate() {
                let line_no = i + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<Message>(&line)
                    .map_err(|e| Error::parse(source_name, line_no, e));
                accept(&mut report, line_no, parsed)?;
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
            let headers = rdr.headers()?.clone();
            let expected = ["id", "sender", "recipient", "timestamp", "text"];
            for col in expected {
                if !headers.iter().any(|h| h == col) {
                    return Err(Error::parse(source_name, 1, format!("missing column {col:?}")));
                }
            }
            for record in rdr.records() {
                let (line_no, parsed) = match record {
                    Ok(rec) => {
                        let line_no = rec.position().map_or(0, |p| p.line() as usize);
                        let parsed = rec
                            .deserialize::<Message>(Some(&headers))
                            .map_err(|e| Error::parse(source_name, line_no, e));
                        (line_no, parsed)
                    }
                    Err(e) => {
                        let line_no = e.position().map_or(0, |p| p.line() as usize);
                        (line_no, Err(Error::parse(source_name, line_no, e)))
                    }
                };
                accept(&mut report, line_no, parsed)?;
            }
        }
    }
    Ok(report)
}

pub fn write_jsonl<W: Write>(messages: &[Message], mut out: W) -> Result<()> {
    for m in messages {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Messages indexed by id. Immutable after construction.
#[derive(Debug, Clone, Default)]
pub struct MessageStore {
    messages: Vec<Message>,
    index: HashMap<String, usize>,
}

impl MessageStore {
    pub fn new(messages: Vec<Message>) -> Result<Self> {
        let mut index = HashMap::with_capacity(messages.len());
        for (i, m) in messages.iter().enumerate() {
            if index.insert(m.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(m.id.clone()));
            }
        }
        Ok(MessageStore { messages, index })
    }

    pub fn get(&self, id: &str) -> Option<&Message> {
        self.index.get(id).map(|&i| &self.messages[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// Unordered user pair, stored with the lexicographically smaller id first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DyadKey(pub String, pub String);

impl DyadKey {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            DyadKey(a.to_owned(), b.to_owned())
        } else {
            DyadKey(b.to_owned(), a.to_owned())
        }
    }

    pub fn of(message: &Message) -> Self {
        DyadKey::new(&message.sender, &message.recipient)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dyad {
    pub users: DyadKey,
    /// Message ids in `(timestamp, id)` order.
    pub message_ids: Vec<String>,
}

impl Dyad {
    pub fn len(&self) -> usize {
        self.message_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.message_ids.is_empty()
    }
}

/// Dyads sorted by user pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DyadIndex {
    dyads: Vec<Dyad>,
}

impl DyadIndex {
    pub fn dyads(&self) -> &[Dyad] {
        &self.dyads
    }

    pub fn len(&self) -> usize {
        self.dyads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dyads.is_empty()
    }

    pub fn get(&self, key: &DyadKey) -> Option<&Dyad> {
        self.dyads
            .binary_search_by(|d| d.users.cmp(key))
            .ok()
            .map(|i| &self.dyads[i])
    }

    pub fn message_count(&self) -> usize {
        self.dyads.iter().map(Dyad::len).sum()
    }
}

pub fn build_dyads(messages: &[Message]) -> DyadIndex {
    let mut groups: BTreeMap<DyadKey, Vec<(u64, &str)>> = BTreeMap::new();
    for m in messages {
        groups.entry(DyadKey::of(m)).or_default().push((m.timestamp, &m.id));
    }
    let dyads = groups
        .into_iter()
        .map(|(users, mut seq)| {
            seq.sort_unstable();
            Dyad {
                users,
                message_ids: seq.into_iter().map(|(_, id)| id.to_owned()).collect(),
            }
        })
        .collect();
    DyadIndex { dyads }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub user_count: usize,
    pub dyad_count: usize,
    pub message_count: usize,
    pub conv_len_mean: f64,
    pub conv_len_median: f64,
    pub msg_len_mean: f64,
    pub msg_len_median: f64,
}

pub fn corpus_stats<F>(messages: &[Message], dyads: &DyadIndex, count_tokens: F) -> Result<CorpusStats>
where
    F: Fn(&str) -> usize,
{
    if messages.is_empty() || dyads.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut users: Vec<&str> = messages
        .iter()
        .flat_map(|m| [m.sender.as_str(), m.recipient.as_str()])
        .collect();
    users.sort_unstable();
    users.dedup();

    let conv: Vec<f64> = dyads.dyads().iter().map(|d| d.len() as f64).collect();
    let lens: Vec<f64> = messages.iter().map(|m| count_tokens(&m.text) as f64).collect();
    Ok(CorpusStats {
        user_count: users.len(),
        dyad_count: dyads.len(),
        message_count: messages.len(),
        conv_len_mean: mean(&conv),
        conv_len_median: median(&conv),
        msg_len_mean: mean(&lens),
        msg_len_median: median(&lens),
    })
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(id: &str, s: &str, r: &str, t: u64) -> Message {
        Message {
            id: id.into(),
            sender: s.into(),
            recipient: r.into(),
            timestamp: t,
            text: "x".into(),
        }
    }

    fn jsonl(input: &str, skip: bool) -> Result<LoadReport> {
        read_messages(
            input.as_bytes(),
            InputFormat::Jsonl,
            LoadOptions { skip_malformed: skip },
            "test",
        )
    }

    #[test]
    fn loads_single_record() {
        let r = jsonl(r#"{"id":"1","sender":"u","recipient":"v","timestamp":10,"text":"hi"}"#, false).unwrap();
        assert_eq!(r.messages.len(), 1);
        assert_eq!(r.messages[0].text, "hi");
    }

    #[test]
    fn self_message_is_skipped() {
        let r = jsonl(r#"{"id":"1","sender":"u","recipient":"u","timestamp":10,"text":"hi"}"#, false).unwrap();
        assert!(r.messages.is_empty());
        assert_eq!(r.self_messages_skipped, 1);
    }

    #[test]
    fn malformed_line_reported_or_skipped() {
        let input = concat!(
            r#"{"id":"1","sender":"u","recipient":"v","timestamp":1,"text":"a"}"#,
            "\n",
            r#"{"id":"2","sender":"u","recipient":"v","timestamp":-4,"text":"b"}"#,
            "\n",
            r#"{"id":"3","sender":"v","recipient":"u","timestamp":3,"text":"c"}"#,
            "\n"
        );
        match jsonl(input, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let r = jsonl(input, true).unwrap();
        assert_eq!(r.messages.len(), 2);
        assert_eq!(r.malformed_lines, vec![2]);
        assert_eq!(r.messages[1].id, "3");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = concat!(
            r#"{"id":"1","sender":"u","recipient":"v","timestamp":1,"text":"a"}"#,
            "\n",
            r#"{"id":"1","sender":"v","recipient":"u","timestamp":2,"text":"b"}"#
        );
        assert!(matches!(jsonl(input, true), Err(Error::DuplicateId(id)) if id == "1"));
    }

    #[test]
    fn csv_with_quoted_text() {
        let input = "id,sender,recipient,timestamp,text\n1,u,v,5,\"hello, \"\"world\"\"\"\n2,v,u,6,plain\n";
        let r = read_messages(input.as_bytes(), InputFormat::Csv, LoadOptions::default(), "t").unwrap();
        assert_eq!(r.messages.len(), 2);
        assert_eq!(r.messages[0].text, "hello, \"world\"");
    }

    #[test]
    fn csv_missing_column_is_an_error() {
        let input = "id,sender,timestamp,text\n1,u,5,x\n";
        assert!(read_messages(input.as_bytes(), InputFormat::Csv, LoadOptions::default(), "t").is_err());
    }

    #[test]
    fn csv_bad_row_names_line() {
        let input = "id,sender,recipient,timestamp,text\n1,u,v,5,a\n2,u,v,notanumber,b\n";
        match read_messages(input.as_bytes(), InputFormat::Csv, LoadOptions::default(), "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dyads_merge_directions() {
        let idx = build_dyads(&[msg("1", "u", "v", 1), msg("2", "v", "u", 2)]);
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.dyads()[0].message_ids, vec!["1", "2"]);
    }

    #[test]
    fn distinct_pairs_give_distinct_dyads() {
        let idx = build_dyads(&[msg("1", "u", "v", 1), msg("2", "u", "w", 2)]);
        assert_eq!(idx.len(), 2);
    }

    #[test]
    fn timestamp_ties_break_by_id() {
        let idx = build_dyads(&[msg("b", "v", "u", 5), msg("a", "u", "v", 5)]);
        assert_eq!(idx.dyads()[0].message_ids, vec!["a", "b"]);
    }

    #[test]
    fn conv_len_stats() {
        let msgs = vec![
            msg("1", "a", "b", 1),
            msg("2", "c", "d", 1),
            msg("3", "d", "c", 2),
            msg("4", "c", "d", 3),
        ];
        let idx = build_dyads(&msgs);
        let s = corpus_stats(&msgs, &idx, |_| 1).unwrap();
        assert_eq!(s.conv_len_mean, 2.0);
        assert_eq!(s.conv_len_median, 2.0);
        assert_eq!(s.user_count, 4);
        assert_eq!(s.dyad_count, 2);
    }

    #[test]
    fn msg_len_stats() {
        let mut m = msg("1", "a", "b", 1);
        m.text = "hello world".into();
        let msgs = vec![m];
        let idx = build_dyads(&msgs);
        let s = corpus_stats(&msgs, &idx, |t| crate::textprep::raw_tokens(t).len()).unwrap();
        assert_eq!(s.msg_len_mean, 2.0);
        assert_eq!(s.msg_len_median, 2.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            corpus_stats(&[], &DyadIndex::default(), |_| 0),
            Err(Error::EmptyCorpus)
        ));
    }

    fn arb_messages() -> impl Strategy<Value = Vec<Message>> {
        prop::collection::vec((0u8..5, 0u8..5, 0u64..6), 1..40).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .filter(|(_, (s, r, _))| s != r)
                .map(|(i, (s, r, t))| msg(&format!("m{i:03}"), &format!("u{s}"), &format!("u{r}"), t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn dyad_index_partitions_and_orders(msgs in arb_messages(), seed in any::<u64>()) {
            let idx = build_dyads(&msgs);
            prop_assert_eq!(idx.message_count(), msgs.len());
            let store = MessageStore::new(msgs.clone()).unwrap();
            for d in idx.dyads() {
                for w in d.message_ids.windows(2) {
                    let (a, b) = (store.get(&w[0]).unwrap(), store.get(&w[1]).unwrap());
                    prop_assert!((a.timestamp, &a.id) < (b.timestamp, &b.id));
                }
            }
            // any input order gives the same index
            let mut shuffled = msgs.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_mul(i + 7) % n;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(build_dyads(&shuffled), idx);
        }
    }
}
