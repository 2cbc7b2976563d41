//! Glue between the pieces: vocabulary over every provided split, encoded
//! datasets, and freshly initialized models for each variant.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::corpus::{build_vocabulary, Dataset, LabeledTokens, Split, Vocabulary};
use crate::embed::{self, assemble_channels, EmbeddingChannel, InitSpec, Pretrained};
use crate::net::ModelParams;
use crate::optim::TrainConfig;
use crate::Error;

/// Encoded examples of every split with one shared vocabulary.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub dataset: Dataset,
}

impl Prepared {
    /// The vocabulary covers all three splits; `split` is set only when a
    /// dev or test file was given.
    pub fn new(
        train: &[LabeledTokens],
        dev: Option<&[LabeledTokens]>,
        test: Option<&[LabeledTokens]>,
        max_width: usize,
    ) -> Result<Self, Error> {
        let parts: Vec<&[LabeledTokens]> = [Some(train), dev, test].into_iter().flatten().collect();
        let all: Vec<LabeledTokens> = parts.concat();
        let token_lists: Vec<&[String]> = all.iter().map(|r| r.tokens.as_slice()).collect();
        let vocab = build_vocabulary(&token_lists)?;
        let mut dataset = Dataset::encode(&all, &vocab, max_width, None)?;
        if dev.is_some() || test.is_some() {
            let n_train = train.len();
            let n_dev = dev.map_or(0, <[_]>::len);
            let n_test = test.map_or(0, <[_]>::len);
            dataset.split = Some(Split {
                train: (0..n_train).collect(),
                dev: (n_train..n_train + n_dev).collect(),
                test: (n_train + n_dev..n_train + n_dev + n_test).collect(),
            });
        }
        Ok(Prepared { vocab, dataset })
    }
}

/// Reads vectors for `vocab` from a word2vec file; `.txt`/`.vec` files are
/// read as text, anything else as binary.
pub fn load_vectors(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<Pretrained, Error> {
    let reader = BufReader::new(File::open(path)?);
    let text = matches!(path.extension().and_then(|e| e.to_str()), Some("txt" | "vec"));
    let pre = if text {
        embed::parse_word2vec_text(reader, vocab, dim)?
    } else {
        embed::parse_word2vec_binary(reader, vocab, dim)?
    };
    Ok(pre)
}

/// The embedding channels of `config.variant`. Every variant except the
/// random one needs `pretrained`.
pub fn build_channels(
    vocab: &Vocabulary,
    config: &TrainConfig,
    pretrained: Option<Pretrained>,
) -> Result<Vec<EmbeddingChannel>, Error> {
    let rand_init = InitSpec { a: config.rand_init_range, seed: config.seed };
    let base = match pretrained {
        Some(mut pre) => {
            let a = embed::variance_matched_init(&mut pre, config.unknown_init, config.seed);
            log::info!("{} of {} words pre-trained; unknown words drawn from U[-{a:.4}, {a:.4}]", pre.matched_count(), vocab.len() - 1);
            EmbeddingChannel::from_matrix(pre.matrix, config.dim, false)
        }
        None if config.variant.needs_pretrained() => {
            return Err(Error::Validation(format!("{} variant requires --vectors", config.variant)))
        }
        None => EmbeddingChannel::zeros(vocab.len(), config.dim, true),
    };
    Ok(assemble_channels(config.variant, &base, rand_init))
}

pub fn init_model(
    vocab: &Vocabulary,
    num_classes: usize,
    config: &TrainConfig,
    pretrained: Option<Pretrained>,
) -> Result<ModelParams, Error> {
    let channels = build_channels(vocab, config, pretrained)?;
    Ok(ModelParams::init(channels, &config.architecture(num_classes), config.seed)?)
}
