//! Synthetic trigger-bigram corpus shared by the integration suites.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sentcnn::corpus::LabeledTokens;
use sentcnn::embed::VectorRecord;

pub const FILLERS: usize = 200;
pub const BIGRAMS: usize = 5;

fn filler(i: usize) -> String {
    format!("f{i}")
}

fn trigger(i: usize) -> String {
    format!("t{i}")
}

/// The five label-determining bigrams `(t0 t1) .. (t8 t9)`.
pub fn trigger_bigrams() -> Vec<(String, String)> {
    (0..BIGRAMS).map(|b| (trigger(2 * b), trigger(2 * b + 1))).collect()
}

pub fn has_trigger(tokens: &[String]) -> bool {
    let bigrams = trigger_bigrams();
    tokens
        .windows(2)
        .any(|w| bigrams.iter().any(|(a, b)| &w[0] == a && &w[1] == b))
}

/// Binary sentences labelled 1 exactly when one of the trigger bigrams
/// occurs. Negatives carry distractors: lone trigger words and reversed
/// trigger pairs, so single words never decide the label.
pub fn trigger_corpus(n: usize, seed: u64) -> Vec<LabeledTokens> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bigrams = trigger_bigrams();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let label = out.len() % 2;
        let len = rng.gen_range(8..=16);
        let mut tokens: Vec<String> = (0..len).map(|_| filler(rng.gen_range(0..FILLERS))).collect();
        if rng.gen_bool(0.6) {
            let (a, b) = &bigrams[rng.gen_range(0..BIGRAMS)];
            let pos = rng.gen_range(0..len - 1);
            tokens[pos] = b.clone();
            tokens[pos + 1] = a.clone();
        }
        if rng.gen_bool(0.5) {
            let pos = rng.gen_range(0..len);
            tokens[pos] = trigger(rng.gen_range(0..2 * BIGRAMS));
        }
        if label == 1 {
            let (a, b) = &bigrams[rng.gen_range(0..BIGRAMS)];
            let pos = rng.gen_range(0..len - 1);
            tokens[pos] = a.clone();
            tokens[pos + 1] = b.clone();
        }
        if has_trigger(&tokens) != (label == 1) {
            continue;
        }
        out.push(LabeledTokens { label, tokens });
    }
    out.shuffle(&mut rng);
    out
}

/// "Pre-trained" vectors where every first word of a trigger bigram sits
/// near one centre and every second word near another; fillers are random.
/// Every tenth filler has no vector.
pub fn planted_vectors(dim: usize, seed: u64) -> Vec<VectorRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let centre = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..dim).map(|_| rng.gen_range(-0.5f32..0.5)).collect() };
    let first = centre(&mut rng);
    let second = centre(&mut rng);
    let mut records = Vec::new();
    for t in 0..2 * BIGRAMS {
        let c = if t % 2 == 0 { &first } else { &second };
        records.push(VectorRecord {
            word: trigger(t),
            values: c.iter().map(|x| x + rng.gen_range(-0.05f32..0.05)).collect(),
        });
    }
    for f in (0..FILLERS).filter(|f| f % 10 != 9) {
        records.push(VectorRecord { word: filler(f), values: (0..dim).map(|_| rng.gen_range(-0.3f32..0.3)).collect() });
    }
    records
}

pub const SENTIMENT_WORDS: usize = 5;

/// Sentiment-like sentences: label 1 holds one of `p0..p4`, label 0 one of
/// `n0..n4`, the rest is filler. `p0` is the most frequent positive word.
pub fn sentiment_corpus(n: usize, seed: u64) -> Vec<LabeledTokens> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let len = rng.gen_range(6..=12);
            let mut tokens: Vec<String> = (0..len).map(|_| filler(rng.gen_range(0..FILLERS))).collect();
            let w = if rng.gen_bool(0.4) { 0 } else { rng.gen_range(0..SENTIMENT_WORDS) };
            tokens[rng.gen_range(0..len)] = format!("{}{w}", if label == 1 { 'p' } else { 'n' });
            LabeledTokens { label, tokens }
        })
        .collect()
}

/// Vectors where `p0` sits closer to the negative words than to the other
/// positive words, the way antonyms share contexts in word2vec space.
pub fn sentiment_vectors(dim: usize, seed: u64) -> Vec<VectorRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut random = |scale: f32| -> Vec<f32> { (0..dim).map(|_| rng.gen_range(-scale..scale)).collect() };
    let shared = random(0.5);
    let positive = random(0.5);
    let mix = |parts: &[(&Vec<f32>, f32)], noise: Vec<f32>| -> Vec<f32> {
        (0..dim).map(|d| noise[d] + parts.iter().map(|(v, w)| v[d] * w).sum::<f32>()).collect()
    };
    let mut records = vec![VectorRecord { word: "p0".into(), values: mix(&[(&shared, 1.0), (&positive, 0.3)], random(0.2)) }];
    for i in 1..SENTIMENT_WORDS {
        records.push(VectorRecord { word: format!("p{i}"), values: mix(&[(&shared, 0.6), (&positive, 1.0)], random(0.2)) });
    }
    for i in 0..SENTIMENT_WORDS {
        records.push(VectorRecord { word: format!("n{i}"), values: mix(&[(&shared, 1.0)], random(0.2)) });
    }
    for f in 0..FILLERS {
        records.push(VectorRecord { word: filler(f), values: random(0.4) });
    }
    records
}
