//! Pretrained embedding matrices with a vocabulary and a word-frequency model.
//!
//! Vectors are kept as `f32`, the precision of every supported file format, so
//! that a load/store cycle is lossless. Arithmetic elsewhere widens to `f64`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidArgument("vocabulary must not be empty".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token `{w}`")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// An `n × N` embedding matrix (one column per word) plus frequency weights.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    vocab: Vocabulary,
    vectors: DMatrix<f32>,
    freq: Vec<f64>,
    source_tag: String,
}

impl EmbeddingSet {
    /// Builds a set with uniform frequencies.
    pub fn new(vocab: Vocabulary, vectors: DMatrix<f32>, source_tag: impl Into<String>) -> Result<Self> {
        let n_words = vocab.len();
        let freq = vec![1.0 / n_words as f64; n_words];
        Self::with_frequencies(vocab, vectors, freq, source_tag)
    }

    pub fn with_frequencies(
        vocab: Vocabulary,
        vectors: DMatrix<f32>,
        freq: Vec<f64>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if vectors.ncols() != vocab.len() {
            return Err(Error::Dimension(format!(
                "{} vectors for {} tokens",
                vectors.ncols(),
                vocab.len()
            )));
        }
        if vectors.nrows() < 2 {
            return Err(Error::Dimension(format!("embedding dimension {} < 2", vectors.nrows())));
        }
        if let Some((i, _)) = vectors.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let word = vocab.word(i / vectors.nrows());
            return Err(Error::NonFinite(format!("vector of `{word}`")));
        }
        validate_freq(&freq, vocab.len())?;
        Ok(EmbeddingSet { vocab, vectors, freq, source_tag: source_tag.into() })
    }

    /// Builds a set from `f64` columns, rounding to `f32` storage.
    pub fn from_columns(words: Vec<String>, columns: &[DVector<f64>], source_tag: &str) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("columns differ in length".into()));
        }
        let vectors = DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r] as f32);
        Self::new(Vocabulary::new(words)?, vectors, source_tag)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Embedding dimension `n`.
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// Vocabulary size `N`.
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> &DMatrix<f32> {
        &self.vectors
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn index_of(&self, token: &str) -> Result<usize> {
        self.vocab.get(token).ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn word(&self, i: usize) -> &str {
        self.vocab.word(i)
    }

    pub fn column(&self, i: usize) -> &[f32] {
        let n = self.dim();
        &self.vectors.as_slice()[i * n..(i + 1) * n]
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.column(i).iter().map(|&v| v as f64))
    }

    /// Gathers the given words into an `n × m` matrix.
    pub fn gather(&self, indices: &[usize]) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            for (dst, &src) in out.column_mut(c).iter_mut().zip(self.column(i)) {
                *dst = src as f64;
            }
        }
        out
    }

    pub fn set_frequencies(self, mode: &FrequencyMode) -> Result<Self> {
        let freq = match mode {
            FrequencyMode::Uniform => vec![1.0; self.len()],
            FrequencyMode::Zipf => (0..self.len()).map(|r| 1.0 / (r as f64 + 1.0)).collect(),
            FrequencyMode::Counts(path) => {
                let counts = read_counts(path)?;
                counts_to_weights(&self.vocab, &counts)?
            }
        };
        self.with_raw_weights(freq)
    }

    /// Replaces the frequency model with `weights` normalized to sum 1.
    pub fn with_raw_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::Dimension(format!("{} weights for {} words", weights.len(), self.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("frequency weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("frequency weights sum to zero".into()));
        }
        self.freq = weights.into_iter().map(|w| w / total).collect();
        validate_freq(&self.freq, self.len())?;
        Ok(self)
    }
}

fn validate_freq(freq: &[f64], n_words: usize) -> Result<()> {
    if freq.len() != n_words {
        return Err(Error::Dimension(format!("{} frequencies for {} words", freq.len(), n_words)));
    }
    if freq.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidArgument("frequencies must be finite and >= 0".into()));
    }
    let total: f64 = freq.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("frequencies sum to {total}, expected 1")));
    }
    Ok(())
}

/// Where word frequencies come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FrequencyMode {
    /// Weight `1 / (rank + 1)` by file order; pretrained files are frequency sorted.
    Zipf,
    Uniform,
    /// A `token SP count` file. Words missing from it get the smallest count present.
    Counts(PathBuf),
}

impl std::str::FromStr for FrequencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zipf" => Ok(FrequencyMode::Zipf),
            "uniform" => Ok(FrequencyMode::Uniform),
            _ => match s.strip_prefix("counts:") {
                Some(path) => Ok(FrequencyMode::Counts(PathBuf::from(path))),
                None => Err(Error::InvalidArgument(format!(
                    "frequency mode `{s}` (expected zipf, uniform or counts:<path>)"
                ))),
            },
        }
    }
}

pub fn read_counts(path: &Path) -> Result<HashMap<String, f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut counts = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let (Some(token), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(path, lineno + 1, "expected `token count`"));
        };
        let count: f64 = count
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno + 1, format!("bad count `{count}`")))?;
        if !(count > 0.0) || !count.is_finite() {
            return Err(Error::parse(path, lineno + 1, format!("non-positive count {count}")));
        }
        counts.insert(token.to_string(), count);
    }
    Ok(counts)
}

pub fn counts_to_weights(vocab: &Vocabulary, counts: &HashMap<String, f64>) -> Result<Vec<f64>> {
    if let Some((token, &c)) = counts.iter().find(|(_, &c)| !(c > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive count {c} for `{token}`")));
    }
    let floor = counts.values().copied().fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::InvalidArgument("counts file has no entries".into()));
    }
    Ok(vocab.words().iter().map(|w| counts.get(w).copied().unwrap_or(floor)).collect())
}

/// Loads a GloVe-style text file: `token v1 ... vn` per line.
pub fn load_text_embeddings(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_text_embeddings(BufReader::new(file), path, limit)
}

pub fn read_text_embeddings<R: BufRead>(reader: R, path: &Path, limit: Option<usize>) -> Result<EmbeddingSet> {
    let mut words = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        if limit.is_some_and(|l| words.len() >= l) {
            break;
        }
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let start = data.len();
        for f in fields {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, format!("non-numeric field `{f}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno + 1, format!("non-finite value `{f}`")));
            }
            data.push(v);
        }
        let n = data.len() - start;
        if words.is_empty() {
            dim = n;
        } else if n != dim {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("dimension {n} differs from {dim} on the first line"),
            ));
        }
        words.push(token.to_string());
    }
    if words.is_empty() {
        return Err(Error::parse(path, 0, "empty embedding file"));
    }
    let vectors = DMatrix::from_vec(dim, words.len(), data);
    let vocab = Vocabulary::new(words).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    EmbeddingSet::new(vocab, vectors, tag_from_path(path))
}

pub fn write_text_embeddings(es: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        for i in 0..es.len() {
            write!(w, "{}", es.word(i))?;
            for v in es.column(i) {
                // `{}` on f32 prints the shortest string that parses back exactly.
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Loads a word2vec binary file: `N SP n LF` header, then per word the token,
/// one space and `n` little-endian `f32`s. A newline between records is tolerated.
pub fn load_word2vec_binary(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_binary(BufReader::new(file), path, limit)
}

pub fn read_word2vec_binary<R: BufRead>(mut reader: R, path: &Path, limit: Option<usize>) -> Result<EmbeddingSet> {
    let bad = |msg: String| Error::format("word2vec", format!("{}: {msg}", path.display()));
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace();
    let (Some(count), Some(dim), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(bad(format!("malformed header `{}`", header.trim_end())));
    };
    let count: usize = count.parse().map_err(|_| bad(format!("bad word count `{count}`")))?;
    let dim: usize = dim.parse().map_err(|_| bad(format!("bad dimension `{dim}`")))?;
    let take = limit.map_or(count, |l| l.min(count));
    if take == 0 {
        return Err(bad("no records".into()));
    }

    let mut words = Vec::with_capacity(take);
    let mut data = Vec::with_capacity(take * dim);
    let mut buf = vec![0u8; 4 * dim];
    for record in 0..take {
        let mut token = Vec::new();
        reader.read_until(b' ', &mut token).map_err(|e| Error::io(path, e))?;
        if token.last() != Some(&b' ') {
            return Err(bad(format!("truncated at record {record}: header claims {count} words")));
        }
        token.pop();
        while token.first() == Some(&b'\n') {
            token.remove(0);
        }
        let token = String::from_utf8(token).map_err(|_| bad(format!("record {record}: token is not UTF-8")))?;
        reader.read_exact(&mut buf).map_err(|_| bad(format!("truncated vector at record {record}")))?;
        for chunk in buf.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("vector of `{token}` in {}", path.display())));
            }
            data.push(v);
        }
        words.push(token);
    }
    let vectors = DMatrix::from_vec(dim, words.len(), data);
    let vocab = Vocabulary::new(words).map_err(|e| bad(e.to_string()))?;
    EmbeddingSet::new(vocab, vectors, tag_from_path(path))
}

pub fn write_word2vec_binary(es: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{} {}", es.len(), es.dim())?;
        for i in 0..es.len() {
            w.write_all(es.word(i).as_bytes())?;
            w.write_all(b" ")?;
            for v in es.column(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Picks the loader from the extension: `.bin` is word2vec binary, anything else text.
pub fn load_embeddings(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => load_word2vec_binary(path, limit),
        _ => load_text_embeddings(path, limit),
    }
}

fn tag_from_path(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn text(s: &str) -> Result<EmbeddingSet> {
        read_text_embeddings(Cursor::new(s.as_bytes()), Path::new("mem"), None)
    }

    fn w2v(bytes: &[u8]) -> Result<EmbeddingSet> {
        read_word2vec_binary(Cursor::new(bytes), Path::new("mem"), None)
    }

    fn record(token: &str, values: &[f32]) -> Vec<u8> {
        let mut out = token.as_bytes().to_vec();
        out.push(b' ');
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    #[test]
    fn text_identity_vectors() {
        let es = text("a 1 0 0\nb 0 1 0\n").unwrap();
        assert_eq!((es.len(), es.dim()), (2, 3));
        assert_eq!(es.column(0), &[1.0, 0.0, 0.0]);
        assert_eq!(es.column(1), &[0.0, 1.0, 0.0]);
        assert_eq!(es.freq(), &[0.5, 0.5]);
    }

    #[test]
    fn text_errors() {
        assert!(matches!(text("a 1 0\nb 1 0 0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(text("a 1 0\na 0 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(text("a 1 x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(text(""), Err(Error::Parse { .. })));
        assert!(text("a 1 nan\n").is_err());
        // n >= 2
        assert!(text("a 1\n").is_err());
    }

    #[test]
    fn text_limit_keeps_file_order() {
        let es = read_text_embeddings(Cursor::new("c 1 2\na 3 4\nb 5 6\n"), Path::new("mem"), Some(2)).unwrap();
        assert_eq!(es.vocab().words(), &["c".to_string(), "a".to_string()]);
    }

    #[test]
    fn tokens_are_case_sensitive() {
        let es = text("Apple 1 0\napple 0 1\n").unwrap();
        assert_eq!(es.index_of("Apple").unwrap(), 0);
        assert_eq!(es.index_of("apple").unwrap(), 1);
        assert!(es.index_of("APPLE").is_err());
    }

    #[test]
    fn word2vec_header_and_records() {
        let mut bytes = b"2 3\n".to_vec();
        bytes.extend(record("a", &[1.0, 2.0, 3.0]));
        bytes.extend(b"\n");
        bytes.extend(record("b", &[4.0, 5.0, 6.5]));
        let es = w2v(&bytes).unwrap();
        assert_eq!((es.len(), es.dim()), (2, 3));
        assert_eq!(es.word(1), "b");
        assert_eq!(es.column(1), &[4.0, 5.0, 6.5]);
    }

    #[test]
    fn word2vec_truncation() {
        let mut bytes = b"3 2\n".to_vec();
        bytes.extend(record("a", &[1.0, 2.0]));
        bytes.extend(record("b", &[3.0, 4.0]));
        assert!(matches!(w2v(&bytes), Err(Error::Format { .. })));
        // cut mid-vector
        let mut bytes = b"1 2\n".to_vec();
        bytes.extend(&record("a", &[1.0, 2.0])[..5]);
        assert!(matches!(w2v(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn frequency_modes() {
        let es = text("a 1 0\nb 0 1\n").unwrap().set_frequencies(&FrequencyMode::Zipf).unwrap();
        assert!((es.freq()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((es.freq()[1] - 1.0 / 3.0).abs() < 1e-15);

        let es = text("a 1 0\nb 0 1\nc 1 1\nd 2 2\n").unwrap().set_frequencies(&FrequencyMode::Uniform).unwrap();
        assert_eq!(es.freq(), &[0.25; 4]);
    }

    #[test]
    fn counts_weights() {
        let vocab = Vocabulary::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let counts: HashMap<String, f64> = [("a".to_string(), 30.0), ("b".to_string(), 10.0)].into();
        // c is absent and takes the minimum present count
        assert_eq!(counts_to_weights(&vocab, &counts).unwrap(), vec![30.0, 10.0, 10.0]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.txt");
        std::fs::write(&path, "a 30\nb 10\n").unwrap();
        let es = text("a 1 0\nb 0 1\n").unwrap().set_frequencies(&FrequencyMode::Counts(path.clone())).unwrap();
        assert_eq!(es.freq(), &[0.75, 0.25]);

        std::fs::write(&path, "a 30\nb 0\n").unwrap();
        assert!(read_counts(&path).is_err());
    }

    #[test]
    fn frequency_mode_parse() {
        assert_eq!("zipf".parse::<FrequencyMode>().unwrap(), FrequencyMode::Zipf);
        assert_eq!(
            "counts:/tmp/x".parse::<FrequencyMode>().unwrap(),
            FrequencyMode::Counts("/tmp/x".into())
        );
        assert!("bogus".parse::<FrequencyMode>().is_err());
    }
}
