//! Token representations and vocabulary.
//!
//! Two representations are supported:
//! - message tokens: one token per note message, `"note-on-60-0"` /
//!   `"note-off-60-480"` with the delta in ticks;
//! - chord tokens: one token per eighth-note time step, ascending pitches
//!   joined by `-` (`"60-64-67"`), with `"rest"` for silent steps and a
//!   random 3-subset when polyphony exceeds 4.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::midi::{MidiFile, NoteEvent, NoteKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodingError {
    #[error("malformed token {0:?}")]
    MalformedToken(String),
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("token {0:?} not in vocabulary")]
    UnknownToken(String),
    #[error("id {0} not in vocabulary")]
    UnknownId(usize),
}

pub type Token = String;

/// Pitches sounding during one eighth-note interval.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TimeStep {
    /// Sorted ascending, deduplicated, all in 0..=127.
    pub pitches: Vec<u8>,
}

impl TimeStep {
    pub fn new(mut pitches: Vec<u8>) -> Self {
        pitches.sort_unstable();
        pitches.dedup();
        TimeStep { pitches }
    }
}

/// Format one note event as a message token.
pub fn message_token(event: &NoteEvent) -> Token {
    let kind = match event.kind {
        NoteKind::On => "on",
        NoteKind::Off => "off",
    };
    format!("note-{}-{}-{}", kind, event.pitch, event.delta)
}

/// One token per event; events must already be flattened to one stream.
pub fn message_tokenize(events: &[NoteEvent]) -> Vec<Token> {
    events.iter().map(message_token).collect()
}

/// Parse a single message token back to a note event (track 0).
pub fn parse_message_token(token: &str) -> Result<NoteEvent, EncodingError> {
    let err = || EncodingError::MalformedToken(token.to_string());
    let rest = token.strip_prefix("note-").ok_or_else(err)?;
    let (kind, rest) = if let Some(r) = rest.strip_prefix("on-") {
        (NoteKind::On, r)
    } else if let Some(r) = rest.strip_prefix("off-") {
        (NoteKind::Off, r)
    } else {
        return Err(err());
    };
    let (pitch_str, delta_str) = rest.split_once('-').ok_or_else(err)?;
    let pitch: u8 = parse_decimal(pitch_str).ok_or_else(err)?;
    if pitch > 127 {
        return Err(err());
    }
    let delta: u32 = parse_decimal(delta_str).ok_or_else(err)?;
    Ok(NoteEvent {
        kind,
        pitch,
        delta,
        track_index: 0,
    })
}

/// Decimal without sign, leading `+`, or leading zeros ("0" itself is fine).
fn parse_decimal<T: std::str::FromStr>(s: &str) -> Option<T> {
    if s.is_empty() || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    if !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Exact inverse of [`message_tokenize`].
pub fn message_detokenize(tokens: &[Token]) -> Result<Vec<NoteEvent>, EncodingError> {
    tokens.iter().map(|t| parse_message_token(t)).collect()
}

/// Sample a normalized file at eighth-note intervals (`ticks_per_beat / 2`
/// ticks per step). A pitch is active at step k when its note-on falls
/// before the step's end and its note-off after the step's start
/// (half-open overlap; a note ending exactly at k·step is inactive at k).
/// Dangling note-ons are closed at end of track; unmatched note-offs are
/// ignored. Trailing silence is trimmed.
pub fn sample_pianoroll(file: &MidiFile) -> Vec<TimeStep> {
    let step_ticks = u64::from(file.ticks_per_beat) / 2;
    if step_ticks == 0 {
        return Vec::new();
    }
    let events = crate::midi::extract_note_events(file);

    let Some(max_track) = events.iter().map(|e| e.track_index).max() else {
        return Vec::new();
    };

    // Pair note-ons with their note-offs into (pitch, start, end) intervals,
    // per track. Last-on-first-off within a pitch.
    let mut pitched: Vec<(u8, u64, u64)> = Vec::new();
    for track in 0..=max_track {
        let mut tick: u64 = 0;
        let mut open: HashMap<u8, Vec<u64>> = HashMap::new();
        let mut track_end: u64 = 0;
        for ev in events.iter().filter(|e| e.track_index == track) {
            tick += u64::from(ev.delta);
            track_end = track_end.max(tick);
            match ev.kind {
                NoteKind::On => open.entry(ev.pitch).or_default().push(tick),
                NoteKind::Off => {
                    if let Some(starts) = open.get_mut(&ev.pitch) {
                        if let Some(start) = starts.pop() {
                            if tick > start {
                                pitched.push((ev.pitch, start, tick));
                            }
                        }
                    }
                }
            }
        }
        let mut dangling: Vec<(u8, u64)> = open
            .into_iter()
            .flat_map(|(p, starts)| starts.into_iter().map(move |s| (p, s)))
            .collect();
        dangling.sort_unstable();
        for (pitch, start) in dangling {
            if track_end > start {
                pitched.push((pitch, start, track_end));
            }
        }
    }

    let Some(last_end) = pitched.iter().map(|&(_, _, e)| e).max() else {
        return Vec::new();
    };
    let num_steps = (last_end + step_ticks - 1) / step_ticks;
    let mut steps: Vec<Vec<u8>> = vec![Vec::new(); num_steps as usize];
    for (pitch, start, end) in pitched {
        let first = start / step_ticks;
        // Active at step k iff start < (k+1)*step and end > k*step.
        let last = (end - 1) / step_ticks;
        for k in first..=last.min(num_steps - 1) {
            steps[k as usize].push(pitch);
        }
    }
    let mut out: Vec<TimeStep> = steps.into_iter().map(TimeStep::new).collect();
    while out.last().is_some_and(|s| s.pitches.is_empty()) {
        out.pop();
    }
    out
}

/// Maximum polyphony kept verbatim in a chord token.
pub const POLYPHONY_CAP: usize = 4;
/// Subset size drawn when a step exceeds the cap.
pub const CAP_SUBSET: usize = 3;

/// Encode one time step as a chord token. Empty steps become `"rest"`;
/// steps over the polyphony cap are reduced to a uniformly random 3-subset.
pub fn encode_timestep<R: Rng>(step: &TimeStep, rng: &mut R) -> Token {
    if step.pitches.is_empty() {
        return "rest".to_string();
    }
    let chosen: Vec<u8> = if step.pitches.len() > POLYPHONY_CAP {
        let idx = sample(rng, step.pitches.len(), CAP_SUBSET);
        let mut picked: Vec<u8> = idx.iter().map(|i| step.pitches[i]).collect();
        picked.sort_unstable();
        picked
    } else {
        step.pitches.clone()
    };
    let mut s = String::new();
    for (i, p) in chosen.iter().enumerate() {
        if i > 0 {
            s.push('-');
        }
        let _ = write!(s, "{p}");
    }
    s
}

/// Parse a chord token (or `"rest"`) back to a time step.
pub fn parse_chord_token(token: &str) -> Result<TimeStep, EncodingError> {
    if token == "rest" {
        return Ok(TimeStep::default());
    }
    let err = || EncodingError::MalformedToken(token.to_string());
    let mut pitches = Vec::new();
    for part in token.split('-') {
        let p: u8 = parse_decimal(part).ok_or_else(err)?;
        if p > 127 {
            return Err(err());
        }
        if let Some(&prev) = pitches.last() {
            if p <= prev {
                return Err(err());
            }
        }
        pitches.push(p);
    }
    if pitches.is_empty() || pitches.len() > POLYPHONY_CAP {
        return Err(err());
    }
    Ok(TimeStep { pitches })
}

/// Bidirectional token <-> dense id map with corpus occurrence counts.
/// Ids are assigned by descending count, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<Token, usize>,
    id_to_token: Vec<Token>,
    counts: Vec<u64>,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<Self, EncodingError> {
        let mut tally: HashMap<&str, u64> = HashMap::new();
        for seq in corpus {
            for tok in seq {
                *tally.entry(tok.as_ref()).or_insert(0) += 1;
            }
        }
        if tally.is_empty() {
            return Err(EncodingError::EmptyCorpus);
        }
        let mut entries: Vec<(&str, u64)> = tally.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let id_to_token: Vec<Token> = entries.iter().map(|(t, _)| t.to_string()).collect();
        let counts: Vec<u64> = entries.iter().map(|&(_, c)| c).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn count(&self, id: usize) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn tokens(&self) -> &[Token] {
        &self.id_to_token
    }

    pub fn total_tokens(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn encode_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>, EncodingError> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| EncodingError::UnknownToken(t.as_ref().to_string()))
            })
            .collect()
    }

    pub fn decode_ids(&self, ids: &[usize]) -> Result<Vec<Token>, EncodingError> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .map(str::to_string)
                    .ok_or(EncodingError::UnknownId(i))
            })
            .collect()
    }

    /// Vocabulary file format: one line per id in id order, "token<TAB>count".
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tok, count) in self.id_to_token.iter().zip(&self.counts) {
            let _ = writeln!(out, "{tok}\t{count}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EncodingError> {
        let mut id_to_token = Vec::new();
        let mut counts = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| EncodingError::MalformedToken(line.to_string()))?;
            let count: u64 = count
                .parse()
                .map_err(|_| EncodingError::MalformedToken(line.to_string()))?;
            id_to_token.push(tok.to_string());
            counts.push(count);
        }
        if id_to_token.is_empty() {
            return Err(EncodingError::EmptyCorpus);
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t): (usize, &Token)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
        })
    }
}

/// Token corpus file format: one piece per line, tokens separated by
/// single spaces.
pub fn corpus_to_text(corpus: &[Vec<Token>]) -> String {
    let mut out = String::new();
    for seq in corpus {
        let _ = writeln!(out, "{}", seq.join(" "));
    }
    out
}

pub fn corpus_from_text(text: &str) -> Vec<Vec<Token>> {
    text.lines()
        .map(|line| line.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect())
        .collect()
}
