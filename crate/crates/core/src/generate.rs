//! Seeded sequence generation, the two baselines, and rendering of token
//! sequences back to MIDI.

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::encoding::{
    message_detokenize, parse_chord_token, EncodingError, Token, Vocabulary,
};
use crate::midi::{write_midi, MidiError, NoteEvent, NoteKind};
use crate::model::{forward, init_params, softmax, ModelConfig, ModelState, Parameters};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("seed token {0:?} not in vocabulary")]
    UnknownSeedToken(String),
    #[error("seed sequence is empty")]
    EmptySeed,
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error("model error: {0}")]
    Model(String),
}

/// Next-token selection rule. `Mixed` draws a Bernoulli per step: greedy
/// with probability lambda, otherwise a sample from the full distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingMode {
    Greedy,
    Sampled,
    Mixed { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    /// Logit divisor before softmax; 1.0 reproduces the raw distribution.
    pub temperature: f64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            mode: SamplingMode::Mixed { lambda: 0.5 },
            temperature: 1.0,
        }
    }
}

/// Argmax with ties broken toward the lowest id.
fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn multinomial<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn pick<R: Rng>(probs: &[f64], policy: &SamplingPolicy, rng: &mut R) -> usize {
    match policy.mode {
        SamplingMode::Greedy => argmax(probs),
        SamplingMode::Sampled => multinomial(probs, rng),
        SamplingMode::Mixed { lambda } => {
            if rng.gen::<f64>() < lambda {
                argmax(probs)
            } else {
                multinomial(probs, rng)
            }
        }
    }
}

fn step_distribution(logits: &Array2<f64>, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.row(0).iter().map(|l| l / temperature).collect();
    softmax(&scaled)
}

/// Feed the seed through the model to build state, then autoregressively
/// extend it by `length` tokens. Returns seed ++ generated.
pub fn generate<R: Rng>(
    params: &Parameters,
    config: &ModelConfig,
    vocab: &Vocabulary,
    seed_tokens: &[Token],
    length: usize,
    policy: &SamplingPolicy,
    rng: &mut R,
) -> Result<Vec<Token>, GenerateError> {
    assert!(policy.temperature > 0.0);
    if seed_tokens.is_empty() {
        return Err(GenerateError::EmptySeed);
    }
    let seed_ids: Vec<usize> = seed_tokens
        .iter()
        .map(|t| {
            vocab
                .id(t)
                .ok_or_else(|| GenerateError::UnknownSeedToken(t.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut state = ModelState::zeros(config, 1);
    let mut ids = seed_ids;
    let mut last_logits = None;
    for &id in &ids {
        let cache = forward(params, &mut state, &[vec![id]])
            .map_err(|e| GenerateError::Model(e.to_string()))?;
        last_logits = Some(cache.logits[0].clone());
    }
    for _ in 0..length {
        let logits = last_logits.as_ref().expect("seed non-empty");
        let probs = step_distribution(logits, policy.temperature);
        let next = pick(&probs, policy, rng);
        ids.push(next);
        let cache = forward(params, &mut state, &[vec![next]])
            .map_err(|e| GenerateError::Model(e.to_string()))?;
        last_logits = Some(cache.logits[0].clone());
    }
    Ok(vocab.decode_ids(&ids)?)
}

/// The untrained-model baseline: freshly initialized parameters, then
/// plain generation.
pub fn baseline_untrained<R: Rng>(
    config: &ModelConfig,
    vocab: &Vocabulary,
    seed_tokens: &[Token],
    length: usize,
    policy: &SamplingPolicy,
    init_rng: &mut R,
    sample_rng: &mut R,
) -> Result<Vec<Token>, GenerateError> {
    let params = init_params(config, init_rng);
    generate(&params, config, vocab, seed_tokens, length, policy, sample_rng)
}

/// The weighted-chord baseline: N i.i.d. draws from the vocabulary with
/// probability proportional to corpus count.
pub fn baseline_weighted_chords<R: Rng>(
    vocab: &Vocabulary,
    length: usize,
    rng: &mut R,
) -> Vec<Token> {
    let counts = vocab.counts();
    let total: u64 = counts.iter().sum();
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let mut u = rng.gen_range(0..total);
        let mut picked = counts.len() - 1;
        for (i, &c) in counts.iter().enumerate() {
            if u < c {
                picked = i;
                break;
            }
            u -= c;
        }
        out.push(vocab.token(picked).expect("dense ids").to_string());
    }
    out
}

/// Render message tokens to a format-0 SMF at 480 ticks per beat. Any
/// notes still sounding when the sequence ends are closed so the file
/// stays playable.
pub fn render_message_tokens(tokens: &[Token]) -> Result<Vec<u8>, GenerateError> {
    let mut events = message_detokenize(tokens)?;
    // Close dangling note-ons at the end of the stream.
    let mut open: Vec<u8> = Vec::new();
    for ev in &events {
        match ev.kind {
            NoteKind::On => open.push(ev.pitch),
            NoteKind::Off => {
                if let Some(pos) = open.iter().position(|&p| p == ev.pitch) {
                    open.remove(pos);
                }
            }
        }
    }
    for pitch in open {
        events.push(NoteEvent {
            kind: NoteKind::Off,
            pitch,
            delta: 0,
            track_index: 0,
        });
    }
    Ok(write_midi(&events, 480)?)
}

/// Render chord tokens on an eighth-note grid: each token occupies
/// `ticks_per_eighth` ticks, note-ons at slot start, note-offs at slot
/// end, `"rest"` as pure delta time.
pub fn render_chord_tokens(
    tokens: &[Token],
    ticks_per_eighth: u32,
) -> Result<Vec<u8>, GenerateError> {
    assert!(ticks_per_eighth > 0);
    let mut events: Vec<NoteEvent> = Vec::new();
    let mut silent_ticks: u32 = 0;
    for token in tokens {
        let step = parse_chord_token(token)?;
        if step.pitches.is_empty() {
            silent_ticks += ticks_per_eighth;
            continue;
        }
        for (i, &pitch) in step.pitches.iter().enumerate() {
            events.push(NoteEvent {
                kind: NoteKind::On,
                pitch,
                delta: if i == 0 { silent_ticks } else { 0 },
                track_index: 0,
            });
        }
        silent_ticks = 0;
        for (i, &pitch) in step.pitches.iter().enumerate() {
            events.push(NoteEvent {
                kind: NoteKind::Off,
                pitch,
                delta: if i == 0 { ticks_per_eighth } else { 0 },
                track_index: 0,
            });
        }
    }
    // Trailing rests carry no note events; that silence is dropped.
    Ok(write_midi(&events, 480)?)
}
