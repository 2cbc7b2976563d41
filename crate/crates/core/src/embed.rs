//! Word-vector channels: reading pre-trained vectors, initializing words the
//! vectors don't cover, and assembling the one or two channels each model
//! variant uses.

use std::fmt;
use std::io::{BufRead, ErrorKind, Write};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{Vocabulary, PAD_ID};
use crate::rng::{seeded, RAND_INIT_STREAM, UNKNOWN_INIT_STREAM};

/// Half-width used for unknown words when no variance estimate exists, and
/// for every word of the randomly initialized variant.
pub const DEFAULT_UNIFORM_RANGE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("bad header")]
    BadHeader,
    #[error("truncated record")]
    TruncatedRecord,
    #[error("vector file has dimension {found}, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("line {line}: {reason}")]
    BadTextRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// The four model variants, distinguished by how words are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Every word randomly initialized, then trained.
    Rand,
    /// Pre-trained vectors, frozen.
    Static,
    /// Pre-trained vectors, fine-tuned.
    NonStatic,
    /// A frozen copy and a fine-tuned copy of the pre-trained vectors.
    Multichannel,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rand, Variant::Static, Variant::NonStatic, Variant::Multichannel];

    pub fn needs_pretrained(self) -> bool {
        self != Variant::Rand
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rand => "rand",
            Variant::Static => "static",
            Variant::NonStatic => "non-static",
            Variant::Multichannel => "multichannel",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rand" => Ok(Variant::Rand),
            "static" => Ok(Variant::Static),
            "non-static" | "nonstatic" => Ok(Variant::NonStatic),
            "multichannel" => Ok(Variant::Multichannel),
            other => Err(format!("unknown variant {other:?} (rand, static, non-static, multichannel)")),
        }
    }
}

/// A `V x k` matrix of word vectors, row per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingChannel {
    matrix: Vec<f64>,
    dim: usize,
    pub trainable: bool,
}

impl EmbeddingChannel {
    pub fn zeros(vocab_size: usize, dim: usize, trainable: bool) -> Self {
        assert!(dim >= 1 && vocab_size >= 1);
        EmbeddingChannel { matrix: vec![0.0; vocab_size * dim], dim, trainable }
    }

    /// Wraps a row-major matrix. Row 0 is forced to zero.
    pub fn from_matrix(mut matrix: Vec<f64>, dim: usize, trainable: bool) -> Self {
        assert!(dim >= 1 && !matrix.is_empty() && matrix.len().is_multiple_of(dim), "matrix is not V x {dim}");
        matrix[..dim].fill(0.0);
        EmbeddingChannel { matrix, dim, trainable }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.len() / self.dim
    }

    #[inline]
    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.matrix[start..start + self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.matrix[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    /// Raw access for optimizers. Callers must leave the pad row at zero or
    /// call [`Self::zero_pad_row`] afterwards.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.matrix
    }

    pub fn zero_pad_row(&mut self) {
        self.row_mut(PAD_ID).fill(0.0);
    }
}

/// One `(word, vector)` record of a word2vec file.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub word: String,
    pub values: Vec<f32>,
}

/// Streams the records of a word2vec binary file: an ASCII `<count> <dim>\n`
/// header, then per record the word, one space and `dim` little-endian f32
/// values, optionally followed by a newline.
pub struct Word2VecReader<R> {
    reader: R,
    count: usize,
    dim: usize,
    read: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> Word2VecReader<R> {
    pub fn new(mut reader: R) -> Result<Self> {
        let mut header = Vec::new();
        reader.read_until(b'\n', &mut header)?;
        if header.last() != Some(&b'\n') {
            return Err(EmbedError::BadHeader);
        }
        let header = std::str::from_utf8(&header).map_err(|_| EmbedError::BadHeader)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [count, dim] = fields[..] else {
            return Err(EmbedError::BadHeader);
        };
        let count = count.parse().map_err(|_| EmbedError::BadHeader)?;
        let dim: usize = dim.parse().map_err(|_| EmbedError::BadHeader)?;
        if dim == 0 {
            return Err(EmbedError::BadHeader);
        }
        Ok(Word2VecReader { reader, count, dim, read: 0, buf: vec![0; dim * 4] })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn next_record(&mut self) -> Result<VectorRecord> {
        let mut word = Vec::new();
        self.reader.read_until(b' ', &mut word)?;
        if word.pop() != Some(b' ') {
            return Err(EmbedError::TruncatedRecord);
        }
        self.reader.read_exact(&mut self.buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => EmbedError::TruncatedRecord,
            _ => EmbedError::Io(e),
        })?;
        let values = self
            .buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if self.reader.fill_buf()?.first() == Some(&b'\n') {
            self.reader.consume(1);
        }
        Ok(VectorRecord { word: String::from_utf8_lossy(&word).into_owned(), values })
    }
}

impl<R: BufRead> Iterator for Word2VecReader<R> {
    type Item = Result<VectorRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read == self.count {
            return None;
        }
        self.read += 1;
        let record = self.next_record();
        if record.is_err() {
            self.read = self.count;
        }
        Some(record)
    }
}

pub fn write_word2vec_binary<W: Write>(mut w: W, records: &[VectorRecord]) -> std::io::Result<()> {
    let dim = records.first().map_or(0, |r| r.values.len());
    writeln!(w, "{} {}", records.len(), dim)?;
    for r in records {
        assert_eq!(r.values.len(), dim, "ragged vector records");
        w.write_all(r.word.as_bytes())?;
        w.write_all(b" ")?;
        for v in &r.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads `word v1 ... vk` lines. A leading `<count> <dim>` header line, as
/// written by the word2vec tool in text mode, is skipped.
pub fn read_word2vec_text<R: BufRead>(reader: R) -> Result<Vec<VectorRecord>> {
    let mut out: Vec<VectorRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if idx == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let bad = |reason: String| EmbedError::BadTextRecord { line: idx + 1, reason };
        let values = rest
            .iter()
            .map(|v| v.parse::<f32>().map_err(|e| bad(format!("{v:?}: {e}"))))
            .collect::<Result<Vec<f32>>>()?;
        if let Some(first) = out.first() {
            if first.values.len() != values.len() {
                return Err(bad(format!("expected {} values, found {}", first.values.len(), values.len())));
            }
        }
        if values.is_empty() {
            return Err(bad("no values".into()));
        }
        out.push(VectorRecord { word: word.to_string(), values });
    }
    Ok(out)
}

pub fn write_word2vec_text<W: Write>(mut w: W, records: &[VectorRecord]) -> std::io::Result<()> {
    for r in records {
        w.write_all(r.word.as_bytes())?;
        for v in &r.values {
            write!(w, " {v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Pre-trained rows gathered for one vocabulary.
#[derive(Debug, Clone)]
pub struct Pretrained {
    /// `V x k`, zero where no vector was found.
    pub matrix: Vec<f64>,
    pub dim: usize,
    /// Indexed by vocabulary id; the pad id is never matched.
    pub matched: Vec<bool>,
}

impl Pretrained {
    pub fn matched_count(&self) -> usize {
        self.matched.iter().filter(|&&m| m).count()
    }
}

/// Pulls the rows of `vocab`'s words out of a record stream. A file word
/// that equals a vocabulary word exactly always wins; otherwise the first
/// file word whose lowercase form equals a still-unfilled vocabulary word
/// fills it.
pub fn match_records<I>(records: I, file_dim: usize, vocab: &Vocabulary, dim: usize) -> Result<Pretrained>
where
    I: IntoIterator<Item = Result<VectorRecord>>,
{
    if file_dim != dim {
        return Err(EmbedError::DimMismatch { expected: dim, found: file_dim });
    }
    let v = vocab.len();
    let mut matrix = vec![0.0; v * dim];
    let mut exact = vec![false; v];
    let mut matched = vec![false; v];
    for record in records {
        let record = record?;
        let (id, is_exact) = match vocab.id(&record.word) {
            Some(id) => (id, true),
            None => match vocab.id(&record.word.to_lowercase()) {
                Some(id) => (id, false),
                None => continue,
            },
        };
        let id = id as usize;
        if id == PAD_ID as usize || exact[id] || (!is_exact && matched[id]) {
            continue;
        }
        for (dst, &src) in matrix[id * dim..(id + 1) * dim].iter_mut().zip(&record.values) {
            *dst = f64::from(src);
        }
        matched[id] = true;
        exact[id] = is_exact;
    }
    Ok(Pretrained { matrix, dim, matched })
}

/// Streams a word2vec binary file, keeping only rows for `vocab`'s words.
pub fn parse_word2vec_binary<R: BufRead>(reader: R, vocab: &Vocabulary, dim: usize) -> Result<Pretrained> {
    let records = Word2VecReader::new(reader)?;
    let file_dim = records.dim();
    match_records(records, file_dim, vocab, dim)
}

pub fn parse_word2vec_text<R: BufRead>(reader: R, vocab: &Vocabulary, dim: usize) -> Result<Pretrained> {
    let records = read_word2vec_text(reader)?;
    let file_dim = records.first().map_or(dim, |r| r.values.len());
    match_records(records.into_iter().map(Ok), file_dim, vocab, dim)
}

/// Half-width and seed of a uniform `U[-a, a]` draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub a: f64,
    pub seed: u64,
}

/// How rows without a pre-trained vector are filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnknownInit {
    /// `U[-a, a]` with a fixed half-width.
    Uniform(f64),
    /// `U[-a, a]` with `a` chosen so the draws share the pooled variance of
    /// the matched entries.
    VarianceMatched,
}

/// Pooled population variance of every entry in the matched rows.
pub fn pooled_variance(matrix: &[f64], dim: usize, matched: &[bool]) -> Option<f64> {
    let rows = || {
        matched
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(id, _)| &matrix[id * dim..(id + 1) * dim])
    };
    let count = rows().count() * dim;
    if count == 0 {
        return None;
    }
    let mean = rows().flatten().sum::<f64>() / count as f64;
    let var = rows().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / count as f64;
    Some(var)
}

/// Half-width whose uniform distribution has variance `variance`:
/// `Var(U[-a, a]) = a^2 / 3`. Falls back to [`DEFAULT_UNIFORM_RANGE`] for a
/// zero or missing estimate.
pub fn matched_half_width(variance: Option<f64>) -> f64 {
    match variance {
        Some(v) if v > 0.0 => (3.0 * v).sqrt(),
        _ => DEFAULT_UNIFORM_RANGE,
    }
}

/// Fills every unmatched non-pad row from `U[-a, a]` and returns the `a`
/// used. Rows are drawn in id order.
pub fn variance_matched_init(pretrained: &mut Pretrained, init: UnknownInit, seed: u64) -> f64 {
    let dim = pretrained.dim;
    let a = match init {
        UnknownInit::Uniform(a) => a,
        UnknownInit::VarianceMatched => {
            matched_half_width(pooled_variance(&pretrained.matrix, dim, &pretrained.matched))
        }
    };
    let mut rng = seeded(seed, UNKNOWN_INIT_STREAM);
    for (id, &m) in pretrained.matched.iter().enumerate().skip(1) {
        if !m {
            for x in &mut pretrained.matrix[id * dim..(id + 1) * dim] {
                *x = rng.gen_range(-a..=a);
            }
        }
    }
    a
}

/// A channel with every non-pad row drawn from `U[-a, a]`.
pub fn uniform_channel(vocab_size: usize, dim: usize, init: InitSpec) -> EmbeddingChannel {
    let mut rng = seeded(init.seed, RAND_INIT_STREAM);
    let mut channel = EmbeddingChannel::zeros(vocab_size, dim, true);
    for x in &mut channel.matrix[dim..] {
        *x = rng.gen_range(-init.a..=init.a);
    }
    channel
}

/// Builds the channels of `variant` from a fully initialized `base`. The
/// random variant ignores `base`'s values and only keeps its shape.
pub fn assemble_channels(variant: Variant, base: &EmbeddingChannel, rand_init: InitSpec) -> Vec<EmbeddingChannel> {
    let with_flag = |trainable| EmbeddingChannel { trainable, ..base.clone() };
    match variant {
        Variant::Rand => vec![uniform_channel(base.vocab_size(), base.dim(), rand_init)],
        Variant::Static => vec![with_flag(false)],
        Variant::NonStatic => vec![with_flag(true)],
        Variant::Multichannel => vec![with_flag(false), with_flag(true)],
    }
}
