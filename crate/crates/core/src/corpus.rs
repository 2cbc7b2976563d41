//! Labeled sentence datasets: tokenization, vocabularies, padding and
//! cross-validation fold plans.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::seeded;

/// Reserved token occupying id 0. The tokenizer never emits `<` or `>`, so
/// this string cannot come out of raw text.
pub const PAD_TOKEN: &str = "<pad>";
pub const PAD_ID: u32 = 0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token {0:?} is reserved for padding")]
    ReservedToken(String),
    #[error("duplicate vocabulary entry {0:?}")]
    DuplicateWord(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("need at least {folds} examples for {folds} folds, got {examples}")]
    TooFewForFolds { examples: usize, folds: usize },
    #[error("cross-validation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("dev split needs at least 10 examples, got {0}")]
    TooFewForDev(usize),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

const CONTRACTIONS: [&str; 5] = ["ll", "ve", "re", "s", "d"];

/// Lowercases `raw` and splits it into tokens.
///
/// Contractions (`n't 's 've 're 'd 'll`) are detached from their host word,
/// the marks `, ! ? ( )` become tokens of their own and every other
/// non-alphanumeric character acts as whitespace.
pub fn clean_and_tokenize(raw: &str) -> Vec<String> {
    let lowered = raw.to_lowercase();
    let mut tokens = Vec::new();
    let mut chunk: Vec<char> = Vec::new();
    for c in lowered.chars() {
        if c.is_alphanumeric() || c == '\'' {
            chunk.push(c);
        } else {
            split_chunk(&chunk, &mut tokens);
            chunk.clear();
            if matches!(c, ',' | '!' | '?' | '(' | ')') {
                tokens.push(c.to_string());
            }
        }
    }
    split_chunk(&chunk, &mut tokens);
    tokens
}

// `chunk` holds only alphanumerics and apostrophes.
fn split_chunk(chunk: &[char], out: &mut Vec<String>) {
    let boundary = |pos: usize| pos == chunk.len() || chunk[pos] == '\'';
    let mut word = String::new();
    let mut i = 0;
    while i < chunk.len() {
        let c = chunk[i];
        if c != '\'' {
            word.push(c);
            i += 1;
            continue;
        }
        if word.ends_with('n') && chunk.get(i + 1) == Some(&'t') && boundary(i + 2) {
            word.pop();
            flush(&mut word, out);
            out.push("n't".to_string());
            i += 2;
            continue;
        }
        let suffix = CONTRACTIONS.iter().find(|suf| {
            let end = i + 1 + suf.len();
            end <= chunk.len()
                && suf.chars().zip(&chunk[i + 1..end]).all(|(a, &b)| a == b)
                && boundary(end)
        });
        flush(&mut word, out);
        match suffix {
            Some(suf) => {
                out.push(format!("'{suf}"));
                i += 1 + suf.len();
            }
            None => i += 1,
        }
    }
    flush(&mut word, out);
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// Bidirectional word/id mapping with the padding token at id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, u32>,
    id_to_word: Vec<String>,
}

impl Vocabulary {
    /// A vocabulary holding only the padding token.
    pub fn new() -> Self {
        let mut word_to_id = HashMap::new();
        word_to_id.insert(PAD_TOKEN.to_string(), PAD_ID);
        Vocabulary {
            word_to_id,
            id_to_word: vec![PAD_TOKEN.to_string()],
        }
    }

    /// Rebuilds a vocabulary from its id-ordered word list. The first entry
    /// must be the padding token.
    pub fn from_id_order<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut iter = words.into_iter();
        match iter.next().map(Into::into) {
            Some(first) if first == PAD_TOKEN => {}
            Some(first) => return Err(CorpusError::Malformed {
                line: 0,
                reason: format!("vocabulary must start with {PAD_TOKEN}, found {first:?}"),
            }),
            None => return Err(CorpusError::EmptyCorpus),
        }
        let mut vocab = Vocabulary::new();
        for word in iter {
            let word = word.into();
            if word == PAD_TOKEN {
                return Err(CorpusError::ReservedToken(word));
            }
            if vocab.word_to_id.contains_key(&word) {
                return Err(CorpusError::DuplicateWord(word));
            }
            vocab.insert(word);
        }
        Ok(vocab)
    }

    fn insert(&mut self, word: String) -> u32 {
        let id = self.id_to_word.len() as u32;
        self.word_to_id.insert(word.clone(), id);
        self.id_to_word.push(word);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    /// Always false: the padding token is present.
    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.id_to_word.get(id as usize).map(String::as_str)
    }

    /// Words in id order, padding token first.
    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Builds a vocabulary over tokenized sentences. Ids follow first occurrence.
pub fn build_vocabulary<S: AsRef<[String]>>(sentences: &[S]) -> Result<Vocabulary> {
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut vocab = Vocabulary::new();
    for sentence in sentences {
        for token in sentence.as_ref() {
            if token == PAD_TOKEN {
                return Err(CorpusError::ReservedToken(token.clone()));
            }
            if !vocab.word_to_id.contains_key(token) {
                vocab.insert(token.clone());
            }
        }
    }
    Ok(vocab)
}

/// Maps tokens to ids and right-pads with [`PAD_ID`] up to `max_width`, so
/// the widest filter always has at least one window. Unknown tokens map to
/// the padding id.
pub fn encode_and_pad(tokens: &[String], vocab: &Vocabulary, max_width: usize) -> Vec<u32> {
    assert!(max_width >= 1, "window width must be at least 1");
    let mut ids: Vec<u32> = tokens
        .iter()
        .map(|t| vocab.id(t).unwrap_or(PAD_ID))
        .collect();
    if ids.len() < max_width {
        ids.resize(max_width, PAD_ID);
    }
    ids
}

/// One encoded sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub token_ids: Vec<u32>,
    pub label: usize,
}

/// A line of a dataset file before encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTokens {
    pub label: usize,
    pub tokens: Vec<String>,
}

/// Reads the `<label><TAB><sentence>` format. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_labeled<R: BufRead>(reader: R) -> Result<Vec<LabeledTokens>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed { line: idx + 1, reason };
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected <label><TAB><sentence>".into()))?;
        let label = label
            .trim()
            .parse::<usize>()
            .map_err(|e| malformed(format!("bad label {label:?}: {e}")))?;
        out.push(LabeledTokens {
            label,
            tokens: clean_and_tokenize(text),
        });
    }
    Ok(out)
}

pub fn write_labeled<W: std::io::Write>(mut w: W, rows: &[(usize, &str)]) -> std::io::Result<()> {
    for (label, text) in rows {
        writeln!(w, "{label}\t{text}")?;
    }
    Ok(())
}

/// Which examples of a [`Dataset`] belong to which standard partition.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub num_classes: usize,
    pub split: Option<Split>,
}

impl Dataset {
    /// Encodes labeled token lists against `vocab`. The class count is one
    /// more than the largest label unless `num_classes` is given.
    pub fn encode(
        rows: &[LabeledTokens],
        vocab: &Vocabulary,
        max_width: usize,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let observed = rows.iter().map(|r| r.label).max().unwrap_or(0) + 1;
        let num_classes = num_classes.unwrap_or(observed);
        if let Some(bad) = rows.iter().find(|r| r.label >= num_classes) {
            return Err(CorpusError::LabelOutOfRange { label: bad.label, num_classes });
        }
        let examples = rows
            .iter()
            .map(|r| Example {
                token_ids: encode_and_pad(&r.tokens, vocab, max_width),
                label: r.label,
            })
            .collect();
        Ok(Dataset { examples, num_classes, split: None })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Example> {
        indices.iter().map(|&i| self.examples[i].clone()).collect()
    }
}

/// Assignment of every example to one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FoldPlan {
    fold_of: Vec<usize>,
    n_folds: usize,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn fold_of(&self, example: usize) -> usize {
        self.fold_of[example]
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// Examples held out in `fold`, in index order.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Examples of every other fold, in index order.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    /// `<example-index><TAB><fold-id>` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, f) in self.fold_of.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{f}");
        }
        out
    }
}

/// Shuffled round-robin fold assignment.
pub fn assign_folds(n_examples: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(CorpusError::TooFewFolds(n_folds));
    }
    if n_examples < n_folds {
        return Err(CorpusError::TooFewForFolds { examples: n_examples, folds: n_folds });
    }
    let mut order: Vec<usize> = (0..n_examples).collect();
    order.shuffle(&mut seeded(seed, crate::rng::FOLD_STREAM));
    let mut fold_of = vec![0; n_examples];
    for (pos, &example) in order.iter().enumerate() {
        fold_of[example] = pos % n_folds;
    }
    Ok(FoldPlan { fold_of, n_folds })
}

/// Randomly carves `round(fraction * N)` of `indices` off as a dev set.
/// Both halves come back sorted.
pub fn select_dev_split(
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = indices.len();
    if n < 10 {
        return Err(CorpusError::TooFewForDev(n));
    }
    let dev_len = (fraction * n as f64).round() as usize;
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut seeded(seed, crate::rng::DEV_STREAM));
    let mut dev = shuffled[..dev_len].to_vec();
    let mut train = shuffled[dev_len..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    Ok((train, dev))
}

/// Table-style corpus statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub num_classes: usize,
    pub mean_length: f64,
    pub size: usize,
    pub vocab_size: usize,
    pub pretrained_matches: Option<usize>,
    pub test_size: Option<usize>,
}

impl CorpusStats {
    /// `vocab_size` excludes the padding token.
    pub fn compute(rows: &[LabeledTokens], vocab: &Vocabulary, test_size: Option<usize>) -> Self {
        let total: usize = rows.iter().map(|r| r.tokens.len()).sum();
        CorpusStats {
            num_classes: rows.iter().map(|r| r.label).max().map_or(0, |m| m + 1),
            mean_length: if rows.is_empty() { 0.0 } else { total as f64 / rows.len() as f64 },
            size: rows.len(),
            vocab_size: vocab.len() - 1,
            pretrained_matches: None,
            test_size,
        }
    }

    pub fn to_tsv(&self) -> String {
        let pre = self
            .pretrained_matches
            .map_or_else(|| "-".to_string(), |m| m.to_string());
        let test = self.test_size.map_or_else(|| "CV".to_string(), |t| t.to_string());
        format!(
            "c\t{}\nl\t{:.1}\nN\t{}\n|V|\t{}\n|V_pre|\t{}\ntest\t{}\n",
            self.num_classes, self.mean_length, self.size, self.vocab_size, pre, test
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(clean_and_tokenize("Hello World"), toks(&["hello", "world"]));
        assert_eq!(clean_and_tokenize("don't stop!"), toks(&["do", "n't", "stop", "!"]));
        assert!(clean_and_tokenize("").is_empty());
    }

    #[test]
    fn tokenizer_contractions_and_marks() {
        assert_eq!(
            clean_and_tokenize("It's what we'd've said, (they'll) agree?"),
            toks(&["it", "'s", "what", "we", "'d", "'ve", "said", ",", "(", "they", "'ll", ")", "agree", "?"])
        );
        assert_eq!(clean_and_tokenize("can't"), toks(&["ca", "n't"]));
        // stray apostrophes and other symbols separate words
        assert_eq!(clean_and_tokenize("'quoted' rock'n'roll -- $5.99"), toks(&["quoted", "rock", "n", "roll", "5", "99"]));
        assert_eq!(clean_and_tokenize("  a\t\tb \n"), toks(&["a", "b"]));
    }

    #[test]
    fn vocabulary_examples() {
        let v = build_vocabulary(&[toks(&["a", "b"]), toks(&["b", "c"])]).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), Some(1));
        assert_eq!(v.id("c"), Some(3));
        assert_eq!(v.word(0), Some(PAD_TOKEN));

        let only_pad = build_vocabulary(&[Vec::<String>::new()]).unwrap();
        assert_eq!(only_pad.len(), 1);

        let empty: [Vec<String>; 0] = [];
        assert_eq!(build_vocabulary(&empty).unwrap_err().to_string(), "empty corpus");
    }

    #[test]
    fn vocabulary_from_id_order_rejects_bad_lists() {
        assert!(Vocabulary::from_id_order(["x"]).is_err());
        assert!(Vocabulary::from_id_order([PAD_TOKEN, "a", "a"]).is_err());
        let v = Vocabulary::from_id_order([PAD_TOKEN, "a", "b"]).unwrap();
        assert_eq!(v.id("b"), Some(2));
    }

    #[test]
    fn padding_examples() {
        let v = build_vocabulary(&[toks(&["a", "b", "c", "d", "e", "f", "g"])]).unwrap();
        assert_eq!(encode_and_pad(&toks(&["a"]), &v, 5), vec![1, 0, 0, 0, 0]);
        let seven = toks(&["a", "b", "c", "d", "e", "f", "g"]);
        assert_eq!(encode_and_pad(&seven, &v, 5).len(), 7);
        assert_eq!(encode_and_pad(&toks(&["zzz", "a"]), &v, 1), vec![PAD_ID, 1]);
    }

    #[test]
    fn fold_examples() {
        let plan = assign_folds(10, 10, 3).unwrap();
        assert!(plan.fold_sizes().iter().all(|&s| s == 1));

        let plan = assign_folds(10662, 10, 3).unwrap();
        assert!(plan.fold_sizes().iter().all(|&s| s == 1066 || s == 1067));
        assert_eq!(plan, assign_folds(10662, 10, 3).unwrap());
        assert_ne!(plan, assign_folds(10662, 10, 4).unwrap());

        assert!(assign_folds(9, 10, 0).is_err());
        assert!(assign_folds(9, 1, 0).is_err());
    }

    #[test]
    fn fold_tsv_lines() {
        let plan = assign_folds(3, 3, 0).unwrap();
        let tsv = plan.to_tsv();
        assert_eq!(tsv.lines().count(), 3);
        assert!(tsv.starts_with("0\t"));
    }

    #[test]
    fn dev_split_examples() {
        let idx: Vec<usize> = (0..100).collect();
        let (train, dev) = select_dev_split(&idx, 0.1, 1).unwrap();
        assert_eq!((train.len(), dev.len()), (90, 10));

        let idx: Vec<usize> = (0..10662).collect();
        let (train, dev) = select_dev_split(&idx, 0.1, 1).unwrap();
        assert_eq!(dev.len(), 1066);
        assert_eq!(train.len() + dev.len(), 10662);

        let (_, dev2) = select_dev_split(&idx, 0.1, 2).unwrap();
        assert_eq!(dev2.len(), 1066);
        assert_ne!(dev, dev2);

        assert!(matches!(select_dev_split(&idx[..9], 0.1, 0), Err(CorpusError::TooFewForDev(9))));
    }

    #[test]
    fn reads_dataset_lines() {
        let text = "1\tA fine film!\n\n0\tNot good .\r\n";
        let rows = read_labeled(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].tokens, toks(&["a", "fine", "film", "!"]));
        assert_eq!(rows[1].label, 0);

        let err = read_labeled("1\tok\nnolabel here\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let err = read_labeled("x\tok\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1:"), "{err}");
    }

    #[test]
    fn dataset_labels_checked() {
        let rows = vec![LabeledTokens { label: 3, tokens: toks(&["a"]) }];
        let v = build_vocabulary(&[toks(&["a"])]).unwrap();
        assert!(Dataset::encode(&rows, &v, 2, Some(2)).is_err());
        let ds = Dataset::encode(&rows, &v, 2, None).unwrap();
        assert_eq!(ds.num_classes, 4);
    }

    fn clean_token() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z0-9]{1,8}",
            prop::sample::select(vec![",", "!", "?", "(", ")", "n't", "'s", "'ve", "'re", "'d", "'ll"])
                .prop_map(str::to_string),
        ]
    }

    proptest! {
        #[test]
        fn tokenization_is_idempotent(tokens in prop::collection::vec(clean_token(), 0..20)) {
            prop_assert_eq!(clean_and_tokenize(&tokens.join(" ")), tokens);
        }

        #[test]
        fn tokenizing_twice_is_stable(raw in "\\PC{0,60}") {
            let once = clean_and_tokenize(&raw);
            prop_assert_eq!(clean_and_tokenize(&once.join(" ")), once);
        }

        #[test]
        fn vocabulary_round_trips(sentences in prop::collection::vec(prop::collection::vec("[a-z]{1,4}", 0..6), 1..6)) {
            let v = build_vocabulary(&sentences).unwrap();
            for w in v.words() {
                prop_assert_eq!(v.word(v.id(w).unwrap()), Some(w.as_str()));
            }
            let again = Vocabulary::from_id_order(v.words().iter().cloned()).unwrap();
            prop_assert_eq!(again, v);
        }

        #[test]
        fn fold_sizes_balanced(n in 2usize..400, folds in 2usize..12, seed: u64) {
            prop_assume!(n >= folds);
            let sizes = assign_folds(n, folds, seed).unwrap().fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn padded_length_covers_width(len in 0usize..10, width in 1usize..8) {
            let v = Vocabulary::new();
            let tokens = vec!["x".to_string(); len];
            prop_assert!(encode_and_pad(&tokens, &v, width).len() >= width.max(len));
        }
    }
}
