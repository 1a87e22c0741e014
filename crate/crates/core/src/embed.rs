//! Trainable word-embedding table, initialized from a word2vec-format
//! binary file where coverage allows.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::text::{Vocab, PAD_ID, RESERVED_IDS};
use crate::Scalar;

/// Out-of-file rows are drawn uniformly from this range. Small next to
/// typical word2vec norms so pretrained geometry dominates early training.
pub const OOV_INIT_BOUND: f64 = 0.05;

/// Embedding matrix, one row per vocabulary id. All rows are trainable
/// except PAD, which stays the zero vector forever.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F: Scalar> {
    pub weights: Array2<F>,
    /// `false` freezes the row against optimizer updates (only PAD today).
    pub row_trainable: Vec<bool>,
}

impl<F: Scalar> EmbeddingTable<F> {
    /// Table with every row drawn uniform in `[-OOV_INIT_BOUND, OOV_INIT_BOUND]`
    /// except PAD (zeros). Used when no pretrained file is given.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingTable<F> {
        let mut weights = Array2::zeros((vocab_size, dim));
        for id in 0..vocab_size {
            if id == PAD_ID {
                continue;
            }
            for d in 0..dim {
                weights[[id, d]] =
                    F::from_f(rng.random_range(-OOV_INIT_BOUND..=OOV_INIT_BOUND));
            }
        }
        EmbeddingTable {
            row_trainable: trainable_mask(vocab_size),
            weights,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }
}

fn trainable_mask(vocab_size: usize) -> Vec<bool> {
    (0..vocab_size).map(|id| id != PAD_ID).collect()
}

/// Counts of vocabulary tokens found in (or absent from) the pretrained file.
/// `hits + misses == vocab size − 2` (reserved ids are not looked up).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageReport {
    pub hits: usize,
    pub misses: usize,
}

/// How a row got its pretrained value. Exact-case matches beat lowercase
/// fallbacks; among lowercase fallbacks the first file entry wins.
#[derive(Clone, Copy, PartialEq)]
enum Fill {
    Empty,
    Lowercase,
    Exact,
}

/// Stream a word2vec binary file and build the embedding table: vocabulary
/// rows take their file vector when present (exact token first, lowercased
/// fallback second); absent rows and UNK are drawn uniform in ±0.05 from
/// `rng` in ascending id order.
pub fn load_word2vec_binary<F: Scalar>(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<(EmbeddingTable<F>, CoverageReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut header = Vec::new();
    reader
        .read_until(b'\n', &mut header)
        .map_err(|e| Error::io(path, e))?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Format("embedding header is not ASCII".into()))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad embedding header {header:?}")))?;
    let file_dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad embedding header {header:?}")))?;
    if parts.next().is_some() {
        return Err(Error::Format(format!("bad embedding header {header:?}")));
    }
    if file_dim != dim {
        return Err(Error::DimMismatch {
            what: "embedding file",
            expected: dim,
            found: file_dim,
        });
    }

    let vocab_size = vocab.size();
    let mut weights: Array2<F> = Array2::zeros((vocab_size, dim));
    let mut fill = vec![Fill::Empty; vocab_size];
    let mut token_buf = Vec::new();
    let mut vector = vec![0f32; dim];
    for entry in 0..count {
        token_buf.clear();
        let n = reader
            .read_until(b' ', &mut token_buf)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 || *token_buf.last().unwrap() != b' ' {
            return Err(Error::Format(format!(
                "truncated embedding file: token {entry} of {count} missing"
            )));
        }
        let token = String::from_utf8_lossy(&token_buf);
        let token = token.trim();
        reader
            .read_f32_into::<LittleEndian>(&mut vector)
            .map_err(|_| {
                Error::Format(format!(
                    "truncated embedding file: vector {entry} of {count} incomplete"
                ))
            })?;

        let (id, exact) = match vocab.id_of(token) {
            Some(id) => (Some(id), true),
            None => (vocab.id_of(&token.to_lowercase()), false),
        };
        let Some(id) = id else { continue };
        let should_write = if exact {
            fill[id] = Fill::Exact;
            true
        } else if fill[id] == Fill::Empty {
            fill[id] = Fill::Lowercase;
            true
        } else {
            false
        };
        if should_write {
            for (d, &v) in vector.iter().enumerate() {
                weights[[id, d]] = F::from_f(v as f64);
            }
        }
    }

    let mut hits = 0;
    for id in RESERVED_IDS..vocab_size {
        if fill[id] != Fill::Empty {
            hits += 1;
        }
    }
    // Misses (UNK included) draw in ascending id order so a given seed
    // always produces the same table.
    for id in 0..vocab_size {
        if id == PAD_ID || fill[id] != Fill::Empty {
            continue;
        }
        for d in 0..dim {
            weights[[id, d]] = F::from_f(rng.random_range(-OOV_INIT_BOUND..=OOV_INIT_BOUND));
        }
    }

    let report = CoverageReport {
        hits,
        misses: vocab_size - RESERVED_IDS - hits,
    };
    Ok((
        EmbeddingTable {
            row_trainable: trainable_mask(vocab_size),
            weights,
        },
        report,
    ))
}

/// Write a word2vec binary file. `trailing_newline` toggles the optional
/// `\n` after each vector; real Google News files carry it, but readers must
/// accept both. Fixture writer for tests and tooling.
pub fn write_word2vec_binary(
    path: &Path,
    entries: &[(String, Vec<f32>)],
    trailing_newline: bool,
) -> Result<()> {
    let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(writer, "{} {}\n", entries.len(), dim).map_err(io)?;
    for (token, vector) in entries {
        if vector.len() != dim {
            return Err(Error::DimMismatch {
                what: "fixture vector",
                expected: dim,
                found: vector.len(),
            });
        }
        writer.write_all(token.as_bytes()).map_err(io)?;
        writer.write_all(b" ").map_err(io)?;
        for &v in vector {
            writer.write_f32::<LittleEndian>(v).map_err(io)?;
        }
        if trailing_newline {
            writer.write_all(b"\n").map_err(io)?;
        }
    }
    writer.flush().map_err(io)?;
    Ok(())
}

/// Stack the embeddings of one id sequence into an (L × D) matrix.
pub fn lookup_sequence<F: Scalar>(table: &EmbeddingTable<F>, ids: &[usize]) -> Array2<F> {
    let mut out = Array2::zeros((ids.len(), table.dim()));
    for (t, &id) in ids.iter().enumerate() {
        out.row_mut(t).assign(&table.weights.row(id));
    }
    out
}

/// Stack a batch of equal-length id sequences into a (B × L × D) block.
pub fn lookup_batch<F: Scalar>(table: &EmbeddingTable<F>, batch: &[Vec<usize>]) -> Array3<F> {
    let seq_len = batch.first().map(Vec::len).unwrap_or(0);
    let mut out = Array3::zeros((batch.len(), seq_len, table.dim()));
    for (b, ids) in batch.iter().enumerate() {
        debug_assert_eq!(ids.len(), seq_len);
        for (t, &id) in ids.iter().enumerate() {
            for d in 0..table.dim() {
                out[[b, t, d]] = table.weights[[id, d]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::UNK_ID;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab_of(tokens: &[&str]) -> Vocab {
        let docs: Vec<Vec<String>> = tokens
            .iter()
            .map(|t| vec![t.to_string()])
            .collect();
        let refs: Vec<&[String]> = docs.iter().map(Vec::as_slice).collect();
        Vocab::build(refs).unwrap()
    }

    fn load_fixture(
        entries: &[(String, Vec<f32>)],
        vocab: &Vocab,
        dim: usize,
        trailing_newline: bool,
    ) -> Result<(EmbeddingTable<f32>, CoverageReport)> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.bin");
        write_word2vec_binary(&path, entries, trailing_newline).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        load_word2vec_binary(&path, vocab, dim, &mut rng)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let vocab = vocab_of(&["alpha", "beta"]);
        let entries = vec![
            ("alpha".to_string(), vec![1.5f32, -2.25, 3.0e-8]),
            ("beta".to_string(), vec![0.0f32, -0.0, f32::MIN_POSITIVE]),
        ];
        for newline in [true, false] {
            let (table, report) = load_fixture(&entries, &vocab, 3, newline).unwrap();
            let a = vocab.id_of("alpha").unwrap();
            let b = vocab.id_of("beta").unwrap();
            for d in 0..3 {
                assert_eq!(table.weights[[a, d]].to_bits(), entries[0].1[d].to_bits());
                assert_eq!(table.weights[[b, d]].to_bits(), entries[1].1[d].to_bits());
            }
            assert_eq!(report, CoverageReport { hits: 2, misses: 0 });
        }
    }

    #[test]
    fn oov_rows_stay_in_init_range() {
        let vocab = vocab_of(&["alpha", "missing"]);
        let entries = vec![("alpha".to_string(), vec![1.0f32, 2.0])];
        let (table, report) = load_fixture(&entries, &vocab, 2, true).unwrap();
        assert_eq!(report, CoverageReport { hits: 1, misses: 1 });
        let id = vocab.id_of("missing").unwrap();
        for d in 0..2 {
            let v = table.weights[[id, d]];
            assert!((-0.05..=0.05).contains(&v), "{v} outside init range");
            assert!(v != 0.0, "miss row should be randomized");
        }
        // UNK is a miss too.
        assert!(table.weights.row(UNK_ID).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pad_row_is_zero_and_frozen() {
        let vocab = vocab_of(&["alpha"]);
        let entries = vec![("alpha".to_string(), vec![1.0f32])];
        let (table, _) = load_fixture(&entries, &vocab, 1, true).unwrap();
        assert!(table.weights.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert!(!table.row_trainable[PAD_ID]);
        assert!(table.row_trainable[UNK_ID]);
    }

    #[test]
    fn truncated_vector_table_is_rejected() {
        let vocab = vocab_of(&["alpha"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.bin");
        let entries: Vec<(String, Vec<f32>)> = (0..4)
            .map(|i| (format!("w{i}"), vec![i as f32, 0.0]))
            .collect();
        write_word2vec_binary(&path, &entries, false).unwrap();
        // Claim five entries while only four exist.
        let bytes = std::fs::read(&path).unwrap();
        let patched = [b"5 2\n".as_slice(), bytes.splitn(2, |&b| b == b'\n').nth(1).unwrap()]
            .concat();
        std::fs::write(&path, patched).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let err = load_word2vec_binary::<f32>(&path, &vocab, 2, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn truncated_mid_vector_is_rejected() {
        let vocab = vocab_of(&["alpha"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.bin");
        write_word2vec_binary(&path, &[("alpha".to_string(), vec![1.0f32, 2.0])], false)
            .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let err = load_word2vec_binary::<f32>(&path, &vocab, 2, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let vocab = vocab_of(&["alpha"]);
        let entries = vec![("alpha".to_string(), vec![1.0f32, 2.0, 3.0])];
        let err = load_fixture(&entries, &vocab, 2, true).unwrap_err();
        assert!(matches!(
            err,
            Error::DimMismatch { expected: 2, found: 3, .. }
        ));
    }

    #[test]
    fn exact_case_beats_lowercase_fallback() {
        let vocab = vocab_of(&["apple"]);
        let id = vocab.id_of("apple").unwrap();
        // Exact entry after a cased one: exact wins regardless of order.
        let entries = vec![
            ("Apple".to_string(), vec![9.0f32]),
            ("apple".to_string(), vec![1.0f32]),
        ];
        let (table, _) = load_fixture(&entries, &vocab, 1, true).unwrap();
        assert_eq!(table.weights[[id, 0]], 1.0);

        let entries = vec![
            ("apple".to_string(), vec![1.0f32]),
            ("Apple".to_string(), vec![9.0f32]),
        ];
        let (table, _) = load_fixture(&entries, &vocab, 1, true).unwrap();
        assert_eq!(table.weights[[id, 0]], 1.0);

        // No exact entry: first lowercase-equivalent wins.
        let entries = vec![
            ("APPLE".to_string(), vec![7.0f32]),
            ("Apple".to_string(), vec![9.0f32]),
        ];
        let (table, report) = load_fixture(&entries, &vocab, 1, true).unwrap();
        assert_eq!(table.weights[[id, 0]], 7.0);
        assert_eq!(report.hits, 1);
    }

    #[test]
    fn lookup_sequence_matches_rows() {
        let vocab = vocab_of(&["alpha", "beta"]);
        let entries = vec![
            ("alpha".to_string(), vec![1.0f32, 2.0]),
            ("beta".to_string(), vec![3.0f32, 4.0]),
        ];
        let (table, _) = load_fixture(&entries, &vocab, 2, true).unwrap();
        let a = vocab.id_of("alpha").unwrap();
        let b = vocab.id_of("beta").unwrap();
        let m = lookup_sequence(&table, &[b, a, PAD_ID]);
        assert_eq!(m.shape(), &[3, 2]);
        assert_eq!(m.row(0), table.weights.row(b));
        assert_eq!(m.row(1), table.weights.row(a));
        assert!(m.row(2).iter().all(|&v| v == 0.0));

        let all_pad = lookup_sequence(&table, &[PAD_ID; 4]);
        assert!(all_pad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lookup_batch_stacks_sequences() {
        let vocab = vocab_of(&["alpha", "beta"]);
        let entries = vec![
            ("alpha".to_string(), vec![1.0f32, 2.0]),
            ("beta".to_string(), vec![3.0f32, 4.0]),
        ];
        let (table, _) = load_fixture(&entries, &vocab, 2, true).unwrap();
        let a = vocab.id_of("alpha").unwrap();
        let batch = vec![vec![a, PAD_ID], vec![PAD_ID, a]];
        let block = lookup_batch(&table, &batch);
        assert_eq!(block.shape(), &[2, 2, 2]);
        assert_eq!(block[[0, 0, 1]], 2.0);
        assert_eq!(block[[1, 1, 0]], 1.0);
        assert_eq!(block[[0, 1, 0]], 0.0);
    }

    #[test]
    fn random_table_is_deterministic_per_seed() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(3);
        let mut rng_b = ChaCha8Rng::seed_from_u64(3);
        let a: EmbeddingTable<f32> = EmbeddingTable::random(5, 4, &mut rng_a);
        let b: EmbeddingTable<f32> = EmbeddingTable::random(5, 4, &mut rng_b);
        assert_eq!(a, b);
        assert!(a.weights.row(PAD_ID).iter().all(|&v| v == 0.0));
    }
}
