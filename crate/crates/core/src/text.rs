//! Transcript vectors from per-token, per-layer encoder outputs.
//!
//! A sentence vector is the mean over its tokens of each token's 12 layer
//! outputs summed together; a transcript vector is the mean of its sentence
//! vectors. Precomputed stacks loaded from an archive and stacks produced by
//! [`StubEncoder`] go through the same functions.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use crate::cohort::{DiaryTokenStack, ParticipantId, Token, TokenLayers, TOKEN_LAYERS, TOKEN_WIDTH};
use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptVector(pub Vec<f64>);

impl TranscriptVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Deterministic stand-in for a pretrained text encoder.
///
/// Layer `l` of token `w` is a unit-norm vector of 768 standard normal draws
/// seeded by `seed.derive_with("stub-token", [w, l])`, so the same token maps to
/// the same stack everywhere. Stacks are cached and shared.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    seed: Seed,
    cache: HashMap<String, TokenLayers>,
}

impl StubEncoder {
    pub fn new(seed: Seed) -> Self {
        StubEncoder {
            seed,
            cache: HashMap::new(),
        }
    }

    pub fn token(&mut self, text: &str) -> Token {
        let layers = match self.cache.get(text) {
            Some(l) => l.clone(),
            None => {
                let l = stub_layers(self.seed, text);
                self.cache.insert(text.to_string(), l.clone());
                l
            }
        };
        Token {
            text: text.into(),
            layers,
        }
    }

    pub fn encode<S: AsRef<str>>(&mut self, transcript: &[Vec<S>]) -> Result<Vec<Vec<Token>>> {
        if transcript.is_empty() || transcript.iter().any(Vec::is_empty) {
            return Err(Error::invalid("transcript", "needs at least one sentence and no empty sentences"));
        }
        Ok(transcript
            .iter()
            .map(|s| s.iter().map(|w| self.token(w.as_ref())).collect())
            .collect())
    }
}

fn stub_layers(seed: Seed, token: &str) -> TokenLayers {
    let mut values = Vec::with_capacity(TOKEN_LAYERS * TOKEN_WIDTH);
    for layer in 0..TOKEN_LAYERS {
        let mut rng = seed.derive_with("stub-token", &[token.as_bytes(), &[layer as u8]]).rng();
        let v: Vec<f64> = (0..TOKEN_WIDTH).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        values.extend(v.iter().map(|x| (x / norm) as f32));
    }
    TokenLayers::new(values).expect("stub stack has the fixed shape")
}

pub fn stub_encode<S: AsRef<str>>(
    participant_id: ParticipantId,
    ema_timestamp: Timestamp,
    transcript: &[Vec<S>],
    seed: Seed,
) -> Result<DiaryTokenStack> {
    let sentences = StubEncoder::new(seed).encode(transcript)?;
    Ok(DiaryTokenStack {
        participant_id,
        ema_timestamp,
        sentences,
    })
}

/// Sum of the 12 layer outputs of one token.
pub fn token_vector(token: &Token) -> Vec<f64> {
    let mut acc = vec![0.0f64; TOKEN_WIDTH];
    for l in 0..TOKEN_LAYERS {
        for (a, &v) in acc.iter_mut().zip(token.layers.layer(l)) {
            *a += v as f64;
        }
    }
    acc
}

pub fn sentence_vector(tokens: &[Token]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::invalid("sentence", "has no tokens"));
    }
    let mut acc = vec![0.0f64; TOKEN_WIDTH];
    for t in tokens {
        for (a, v) in acc.iter_mut().zip(token_vector(t)) {
            *a += v;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn transcript_vector(sentence_vectors: &[Vec<f64>]) -> Result<TranscriptVector> {
    if sentence_vectors.is_empty() {
        return Err(Error::invalid("transcript", "has no sentences"));
    }
    let mut acc = vec![0.0f64; TOKEN_WIDTH];
    for s in sentence_vectors {
        if s.len() != TOKEN_WIDTH {
            return Err(Error::Shape {
                name: "sentence vector".into(),
                expected: vec![TOKEN_WIDTH],
                actual: vec![s.len()],
            });
        }
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let n = sentence_vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(TranscriptVector(acc))
}

pub fn diary_vector(stack: &DiaryTokenStack) -> Result<TranscriptVector> {
    let sentences = stack
        .sentences
        .iter()
        .map(|s| sentence_vector(s))
        .collect::<Result<Vec<_>>>()?;
    transcript_vector(&sentences)
}
