//! Corpus statistics and embedding visualization: token frequency
//! reports, t-SNE projection of selected embedding rows, and plot-ready
//! CSV/SVG output.

mod tsne;

pub use tsne::{conditional_affinities, pairwise_affinities, tsne, TsneConfig};

use std::fmt::Write as _;

use ndarray::Array2;
use thiserror::Error;

use crate::encoding::{parse_chord_token, parse_message_token, Vocabulary};
use crate::midi::NoteKind;
use crate::model::Parameters;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("all pairwise distances are zero")]
    DegeneratePoints,
    #[error("embedding selection matched no tokens")]
    EmptySelection,
}

/// Token frequency distribution of a corpus, sorted by descending count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyReport {
    pub total_tokens: u64,
    pub unique_tokens: usize,
    /// (token, count), descending count, ties lexicographic — vocabulary
    /// id order.
    pub entries: Vec<(String, u64)>,
}

impl FrequencyReport {
    /// Fraction of unique tokens occurring fewer than `k` times.
    pub fn fraction_below(&self, k: u64) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let below = self.entries.iter().filter(|(_, c)| *c < k).count();
        below as f64 / self.entries.len() as f64
    }

    /// CSV format: "token,count", one line per token in id order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,count\n");
        for (tok, count) in &self.entries {
            let _ = writeln!(out, "{tok},{count}");
        }
        out
    }
}

pub fn frequency_report(vocab: &Vocabulary) -> FrequencyReport {
    let entries: Vec<(String, u64)> = vocab
        .tokens()
        .iter()
        .zip(vocab.counts())
        .map(|(t, &c)| (t.clone(), c))
        .collect();
    FrequencyReport {
        total_tokens: vocab.total_tokens(),
        unique_tokens: entries.len(),
        entries,
    }
}

/// Which embedding rows to project, with plot labels attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSelection {
    /// Message tokens whose delta equals the given tick count.
    MessageDuration(u32),
    /// Chord tokens encoding exactly one pitch.
    SingleNoteChords,
}

/// One projected embedding with its plot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub token: String,
    pub pitch: u8,
    /// "on", "off", or "note" for single-note chord tokens.
    pub kind: &'static str,
    pub x: f64,
    pub y: f64,
}

fn select_tokens(
    vocab: &Vocabulary,
    selection: EmbeddingSelection,
) -> Vec<(usize, String, u8, &'static str)> {
    let mut out = Vec::new();
    for (id, token) in vocab.tokens().iter().enumerate() {
        match selection {
            EmbeddingSelection::MessageDuration(delta) => {
                if let Ok(ev) = parse_message_token(token) {
                    if ev.delta == delta {
                        let kind = match ev.kind {
                            NoteKind::On => "on",
                            NoteKind::Off => "off",
                        };
                        out.push((id, token.clone(), ev.pitch, kind));
                    }
                }
            }
            EmbeddingSelection::SingleNoteChords => {
                if let Ok(step) = parse_chord_token(token) {
                    if step.pitches.len() == 1 {
                        out.push((id, token.clone(), step.pitches[0], "note"));
                    }
                }
            }
        }
    }
    out
}

/// Gather the selected embedding rows, run t-SNE, and attach labels.
pub fn project_embeddings(
    params: &Parameters,
    vocab: &Vocabulary,
    selection: EmbeddingSelection,
    config: &TsneConfig,
) -> Result<Vec<ProjectedPoint>, AnalysisError> {
    let selected = select_tokens(vocab, selection);
    if selected.is_empty() {
        return Err(AnalysisError::EmptySelection);
    }
    let embed_dim = params.embedding.ncols();
    let mut points = Array2::zeros((selected.len(), embed_dim));
    for (row, (id, _, _, _)) in selected.iter().enumerate() {
        points.row_mut(row).assign(&params.embedding.row(*id));
    }
    let (coords, _) = tsne(&points, config)?;
    Ok(selected
        .into_iter()
        .enumerate()
        .map(|(row, (_, token, pitch, kind))| ProjectedPoint {
            token,
            pitch,
            kind,
            x: coords[[row, 0]],
            y: coords[[row, 1]],
        })
        .collect())
}

/// CSV format: "token,label_pitch,label_kind,x,y".
pub fn projection_to_csv(points: &[ProjectedPoint]) -> String {
    let mut out = String::from("token,label_pitch,label_kind,x,y\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", p.token, p.pitch, p.kind, p.x, p.y);
    }
    out
}

/// Pitch 0..=127 mapped onto a blue-to-red ramp.
fn pitch_color(pitch: u8) -> String {
    let t = f64::from(pitch) / 127.0;
    let r = (t * 255.0).round() as u8;
    let b = ((1.0 - t) * 255.0).round() as u8;
    format!("#{r:02x}00{b:02x}")
}

/// Minimal static SVG scatter: circles for "on", x markers for "off" (and
/// any other kind), color ramp blue to red over pitch.
pub fn projection_to_svg(points: &[ProjectedPoint], size: u32) -> String {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let pad = 10.0;
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let sx = (f64::from(size) - 2.0 * pad) / span(min_x, max_x);
    let sy = (f64::from(size) - 2.0 * pad) / span(min_y, max_y);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    for p in points {
        let cx = pad + (p.x - min_x) * sx;
        let cy = pad + (p.y - min_y) * sy;
        let color = pitch_color(p.pitch);
        if p.kind == "off" {
            let _ = writeln!(
                svg,
                "  <path d=\"M {} {} l 6 6 m 0 -6 l -6 6\" stroke=\"{}\" stroke-width=\"1.5\"/>",
                cx - 3.0,
                cy - 3.0,
                color
            );
        } else {
            let _ = writeln!(
                svg,
                "  <circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>"
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
