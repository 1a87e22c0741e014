//! Tokenization and vocabulary construction shared by the corpus and
//! embedding pipelines.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved id for sequence padding. Its embedding row is pinned to zero.
pub const PAD_ID: usize = 0;
/// Reserved id for tokens outside the training vocabulary.
pub const UNK_ID: usize = 1;
/// Number of reserved ids preceding real tokens.
pub const RESERVED_IDS: usize = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation
/// from each token, drop tokens that end up empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let stripped = raw.trim_matches(|c: char| c.is_ascii_punctuation());
            if stripped.is_empty() {
                None
            } else {
                Some(stripped.to_lowercase())
            }
        })
        .collect()
}

/// Token table with dense ids. Id 0 is PAD, id 1 is UNK; real tokens start
/// at id 2, ordered by descending training frequency with lexicographic
/// tie-break, so construction is deterministic across runs.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build the vocabulary from tokenized training documents.
    pub fn build<'a, I>(docs: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for token in doc {
                *counts.entry(token.as_str()).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ordered: Vec<(&str, u64)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Vocab::reserved_only();
        for (token, _) in ordered {
            let id = vocab.id_to_token.len();
            vocab.token_to_id.insert(token.to_string(), id);
            vocab.id_to_token.push(token.to_string());
        }
        Ok(vocab)
    }

    fn reserved_only() -> Vocab {
        Vocab {
            token_to_id: HashMap::new(),
            id_to_token: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        }
    }

    /// Id for `token`; UNK for anything unseen. Never fails.
    pub fn lookup(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Id for `token` if it is a real (non-reserved) vocabulary entry.
    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Total number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }

    /// Non-reserved tokens in id order (id 2 first).
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token[RESERVED_IDS..].iter().map(String::as_str)
    }

    /// Persist as plain UTF-8 text, one token per line; the token on line
    /// `i` (0-based) has id `i + 2`, reserved ids are not written.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for token in self.tokens() {
            writeln!(out, "{token}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocab::reserved_only();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let token = line.map_err(|e| Error::io(path, e))?;
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    row: lineno + 1,
                    msg: "vocab lines must hold exactly one non-empty token".into(),
                });
            }
            if vocab.token_to_id.contains_key(&token) {
                return Err(Error::Parse {
                    row: lineno + 1,
                    msg: format!("duplicate token `{token}`"),
                });
            }
            let id = vocab.id_to_token.len();
            vocab.token_to_id.insert(token.clone(), id);
            vocab.id_to_token.push(token);
        }
        if vocab.size() == RESERVED_IDS {
            return Err(Error::EmptyCorpus);
        }
        Ok(vocab)
    }
}
