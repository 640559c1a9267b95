use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
struct Category {
    words: HashSet<String>,
    prefixes: Vec<String>,
}

/// Category word lists: `[category]` header lines followed by one entry per
/// line; a trailing `*` makes the entry a prefix.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    categories: BTreeMap<String, Category>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::default();
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_owned();
                lex.categories.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some(cat) = current.as_ref() else {
                return Err(Error::parse("lexicon", i + 1, "entry before any [category] header"));
            };
            let entry = lex.categories.get_mut(cat).expect("header inserted");
            let word = line.to_lowercase();
            match word.strip_suffix('*') {
                Some(prefix) => entry.prefixes.push(prefix.to_owned()),
                None => {
                    entry.words.insert(word);
                }
            }
        }
        Ok(lex)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn matches(&self, category: &str, token: &str) -> Result<bool> {
        let c = self.categories.get(category).ok_or_else(|| Error::Unknown {
            kind: "lexicon category",
            name: category.into(),
        })?;
        Ok(c.words.contains(token) || c.prefixes.iter().any(|p| token.starts_with(p.as_str())))
    }
}

/// Fraction of `tokens` matching each category; 0 for no tokens.
pub fn lexicon_ratio(tokens: &[String], lexicon: &Lexicon, categories: &[&str]) -> Result<Vec<f64>> {
    categories
        .iter()
        .map(|c| {
            let mut hits = 0usize;
            for t in tokens {
                if lexicon.matches(c, t)? {
                    hits += 1;
                }
            }
            Ok(if tokens.is_empty() { 0.0 } else { hits as f64 / tokens.len() as f64 })
        })
        .collect()
}
