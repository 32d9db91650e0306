//! Standard MIDI File (SMF) parsing, writing, tick normalization, and
//! note-event extraction.
//!
//! Only formats 0 and 1 are accepted. Running status is honored on read and
//! never emitted on write. Meta and non-note channel messages are retained
//! in raw form by the parser so write-back stays possible, but the note
//! extraction step drops them (their deltas are folded into the following
//! note event).

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MidiError {
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("track chunk ends mid-event")]
    TruncatedTrack,
    #[error("variable-length quantity longer than 4 bytes")]
    InvalidVlq,
    #[error("invalid event byte 0x{0:02x}")]
    InvalidEvent(u8),
    #[error("pitch {0} out of MIDI range 0..=127")]
    PitchOutOfRange(u32),
}

/// One raw SMF track event: delta ticks, status byte, and data bytes.
/// Meta events keep the type byte as the first data byte; length prefixes
/// are re-derived on write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub delta: u32,
    pub status: u8,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiFile {
    /// SMF format, 0 or 1.
    pub format: u16,
    /// Ticks per quarter note, always positive.
    pub ticks_per_beat: u16,
    pub tracks: Vec<Vec<RawEvent>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoteKind {
    On,
    Off,
}

/// A parsed note message. A note-on with velocity 0 is canonicalized to
/// `Off` at extraction time; velocity magnitude is otherwise discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub kind: NoteKind,
    pub pitch: u8,
    /// Ticks since the previous note event in the same track.
    pub delta: u32,
    pub track_index: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|s| u16::from_be_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
    }

    /// VLQ per the SMF spec: 7 bits per byte, high bit set on all but the
    /// last. At most 4 bytes.
    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for i in 0.. {
            if i == 4 {
                return Err(MidiError::InvalidVlq);
            }
            let b = self.u8().ok_or(MidiError::TruncatedTrack)?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        unreachable!()
    }
}

fn data_len_for_status(status: u8) -> Option<usize> {
    match status & 0xf0 {
        0x80 | 0x90 | 0xa0 | 0xb0 | 0xe0 => Some(2),
        0xc0 | 0xd0 => Some(1),
        _ => None,
    }
}

fn parse_track(reader: &mut Reader) -> Result<Vec<RawEvent>, MidiError> {
    let mut events = Vec::new();
    let mut running_status: Option<u8> = None;
    while reader.remaining() > 0 {
        let delta = reader.vlq()?;
        let first = reader.u8().ok_or(MidiError::TruncatedTrack)?;
        let event = if first == 0xff {
            // Meta event: type byte, VLQ length, payload. Keep the type
            // byte at data[0].
            running_status = None;
            let ty = reader.u8().ok_or(MidiError::TruncatedTrack)?;
            let len = reader.vlq()? as usize;
            let payload = reader.take(len).ok_or(MidiError::TruncatedTrack)?;
            let mut data = Vec::with_capacity(1 + len);
            data.push(ty);
            data.extend_from_slice(payload);
            let is_end = ty == 0x2f;
            let ev = RawEvent {
                delta,
                status: 0xff,
                data,
            };
            if is_end {
                events.push(ev);
                break;
            }
            ev
        } else if first == 0xf0 || first == 0xf7 {
            running_status = None;
            let len = reader.vlq()? as usize;
            let payload = reader.take(len).ok_or(MidiError::TruncatedTrack)?;
            RawEvent {
                delta,
                status: first,
                data: payload.to_vec(),
            }
        } else {
            let (status, first_data) = if first & 0x80 != 0 {
                running_status = Some(first);
                (first, None)
            } else {
                let st = running_status.ok_or(MidiError::InvalidEvent(first))?;
                (st, Some(first))
            };
            let n = data_len_for_status(status).ok_or(MidiError::InvalidEvent(status))?;
            let mut data = Vec::with_capacity(n);
            if let Some(b) = first_data {
                data.push(b);
            }
            while data.len() < n {
                data.push(reader.u8().ok_or(MidiError::TruncatedTrack)?);
            }
            RawEvent {
                delta,
                status,
                data,
            }
        };
        events.push(event);
    }
    Ok(events)
}

/// Parse an SMF byte stream. Formats 0 and 1 only; SMPTE time division is
/// rejected since tokenization is tick-denominated.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile, MidiError> {
    let mut reader = Reader::new(bytes);
    let magic = reader.take(4).ok_or(MidiError::MalformedHeader("too short"))?;
    if magic != b"MThd" {
        return Err(MidiError::MalformedHeader("missing MThd"));
    }
    let header_len = reader
        .u32()
        .ok_or(MidiError::MalformedHeader("truncated header"))?;
    if header_len < 6 {
        return Err(MidiError::MalformedHeader("header too short"));
    }
    let format = reader
        .u16()
        .ok_or(MidiError::MalformedHeader("truncated header"))?;
    let num_tracks = reader
        .u16()
        .ok_or(MidiError::MalformedHeader("truncated header"))?;
    let division = reader
        .u16()
        .ok_or(MidiError::MalformedHeader("truncated header"))?;
    // Skip any extra header bytes a future spec revision might add.
    reader
        .take(header_len as usize - 6)
        .ok_or(MidiError::MalformedHeader("truncated header"))?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::MalformedHeader("SMPTE time division"));
    }
    if division == 0 {
        return Err(MidiError::MalformedHeader("zero ticks per beat"));
    }

    let mut tracks = Vec::new();
    while tracks.len() < num_tracks as usize {
        let id = match reader.take(4) {
            Some(id) => id,
            None => break,
        };
        let len = reader.u32().ok_or(MidiError::TruncatedTrack)? as usize;
        let chunk = reader.take(len).ok_or(MidiError::TruncatedTrack)?;
        if id != b"MTrk" {
            // Alien chunk types are skipped per the SMF spec.
            continue;
        }
        let mut track_reader = Reader::new(chunk);
        tracks.push(parse_track(&mut track_reader)?);
    }
    if tracks.is_empty() {
        return Err(MidiError::MalformedHeader("no track chunks"));
    }
    if format == 0 && tracks.len() != 1 {
        return Err(MidiError::MalformedHeader("format 0 with multiple tracks"));
    }
    Ok(MidiFile {
        format,
        ticks_per_beat: division,
        tracks,
    })
}

/// Round n / d half-to-even in exact integer arithmetic.
fn div_round_half_even(n: u64, d: u64) -> u64 {
    let q = n / d;
    let r = n % d;
    match (2 * r).cmp(&d) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

/// Rescale every delta by `target_tpb / ticks_per_beat`, rounding
/// half-to-even, and stamp the header with the new resolution.
pub fn normalize_ticks(file: &MidiFile, target_tpb: u16) -> MidiFile {
    assert!(target_tpb > 0, "target ticks per beat must be positive");
    let src = u64::from(file.ticks_per_beat);
    let dst = u64::from(target_tpb);
    let tracks = file
        .tracks
        .iter()
        .map(|track| {
            track
                .iter()
                .map(|ev| RawEvent {
                    delta: div_round_half_even(u64::from(ev.delta) * dst, src) as u32,
                    status: ev.status,
                    data: ev.data.clone(),
                })
                .collect()
        })
        .collect();
    MidiFile {
        format: file.format,
        ticks_per_beat: target_tpb,
        tracks,
    }
}

/// Extract note-on/note-off events in file order, per track. Velocity-0
/// note-ons become `Off`. Deltas of dropped messages accumulate into the
/// next note event of the same track.
pub fn extract_note_events(file: &MidiFile) -> Vec<NoteEvent> {
    let mut out = Vec::new();
    for (track_index, track) in file.tracks.iter().enumerate() {
        let mut pending_delta: u32 = 0;
        for ev in track {
            pending_delta = pending_delta.saturating_add(ev.delta);
            let kind = match ev.status & 0xf0 {
                0x90 if ev.data.len() == 2 && ev.data[1] > 0 => NoteKind::On,
                0x90 if ev.data.len() == 2 => NoteKind::Off,
                0x80 if ev.data.len() == 2 => NoteKind::Off,
                _ => continue,
            };
            out.push(NoteEvent {
                kind,
                pitch: ev.data[0] & 0x7f,
                delta: pending_delta,
                track_index,
            });
            pending_delta = 0;
        }
    }
    out
}

/// Concatenate per-track event runs end-to-end: all of track 0's events,
/// then track 1's, and so on, preserving order within each track.
pub fn flatten_tracks(events: &[NoteEvent]) -> Vec<NoteEvent> {
    let mut flat: Vec<NoteEvent> = Vec::with_capacity(events.len());
    let max_track = events.iter().map(|e| e.track_index).max();
    if let Some(max_track) = max_track {
        for track in 0..=max_track {
            flat.extend(events.iter().filter(|e| e.track_index == track));
        }
    }
    flat
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7f) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let mut b = stack[i];
        if i > 0 {
            b |= 0x80;
        }
        out.push(b);
    }
}

/// Velocity written for every note-on; the token representations carry no
/// velocity so a fixed value keeps output deterministic.
pub const WRITE_VELOCITY: u8 = 64;

/// Default tempo written into generated files, microseconds per quarter
/// note (120 BPM).
const TEMPO_120_BPM: [u8; 3] = [0x07, 0xa1, 0x20];

/// Emit a format-0 SMF holding the given events on a single track at fixed
/// velocity, terminated by end-of-track. `parse_midi` followed by
/// `extract_note_events` recovers the same list (with track_index 0).
pub fn write_midi(events: &[NoteEvent], ticks_per_beat: u16) -> Result<Vec<u8>, MidiError> {
    assert!(ticks_per_beat > 0, "ticks per beat must be positive");
    if let Some(ev) = events.iter().find(|e| e.pitch > 127) {
        return Err(MidiError::PitchOutOfRange(u32::from(ev.pitch)));
    }

    let mut track = Vec::new();
    // Tempo meta at delta 0 so players have a pulse; extraction ignores it.
    track.push(0x00);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&TEMPO_120_BPM);
    for ev in events {
        push_vlq(&mut track, ev.delta);
        match ev.kind {
            NoteKind::On => track.extend_from_slice(&[0x90, ev.pitch, WRITE_VELOCITY]),
            NoteKind::Off => track.extend_from_slice(&[0x80, ev.pitch, 0x00]),
        }
    }
    track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes()); // format 0
    out.extend_from_slice(&1u16.to_be_bytes()); // one track
    out.extend_from_slice(&ticks_per_beat.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_vlq(bytes: &[u8]) -> Result<u32, MidiError> {
        Reader::new(bytes).vlq()
    }

    #[test]
    fn vlq_single_zero_byte() {
        assert_eq!(parse_vlq(&[0x00]).unwrap(), 0);
    }

    #[test]
    fn vlq_two_byte_value() {
        // 1*128 + 72 = 200
        assert_eq!(parse_vlq(&[0x81, 0x48]).unwrap(), 200);
    }

    #[test]
    fn vlq_too_long() {
        assert_eq!(
            parse_vlq(&[0x81, 0x81, 0x81, 0x81, 0x01]),
            Err(MidiError::InvalidVlq)
        );
    }

    #[test]
    fn vlq_write_read_roundtrip() {
        for v in [0u32, 1, 127, 128, 200, 16383, 16384, 0x0fff_ffff] {
            let mut buf = Vec::new();
            push_vlq(&mut buf, v);
            assert_eq!(parse_vlq(&buf).unwrap(), v);
        }
    }

    fn middle_c_events() -> Vec<NoteEvent> {
        vec![
            NoteEvent {
                kind: NoteKind::On,
                pitch: 60,
                delta: 0,
                track_index: 0,
            },
            NoteEvent {
                kind: NoteKind::Off,
                pitch: 60,
                delta: 480,
                track_index: 0,
            },
        ]
    }

    #[test]
    fn middle_c_roundtrip() {
        let events = middle_c_events();
        let bytes = write_midi(&events, 480).unwrap();
        let parsed = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.format, 0);
        assert_eq!(parsed.ticks_per_beat, 480);
        assert_eq!(extract_note_events(&parsed), events);
    }

    #[test]
    fn malformed_header_rejected() {
        assert!(matches!(
            parse_midi(b"MThx\x00\x00\x00\x06"),
            Err(MidiError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_midi(b"MT"),
            Err(MidiError::MalformedHeader(_))
        ));
    }

    #[test]
    fn format_2_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&2u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        assert_eq!(parse_midi(&bytes), Err(MidiError::UnsupportedFormat(2)));
    }

    #[test]
    fn truncated_track_rejected() {
        let mut bytes = write_midi(&middle_c_events(), 480).unwrap();
        // Chop the track chunk mid-event but lie about its length.
        let cut = bytes.len() - 3;
        bytes.truncate(cut);
        assert!(matches!(
            parse_midi(&bytes),
            Err(MidiError::TruncatedTrack)
        ));
    }

    #[test]
    fn velocity_zero_note_on_is_off() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        let track: &[u8] = &[
            0x00, 0x90, 60, 100, // note-on
            0x60, 60, 0, // running status note-on velocity 0
            0x00, 0xff, 0x2f, 0x00,
        ];
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(track);
        let events = extract_note_events(&parse_midi(&bytes).unwrap());
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].kind, NoteKind::On);
        assert_eq!(events[1].kind, NoteKind::Off);
        assert_eq!(events[1].delta, 0x60);
    }

    #[test]
    fn dropped_message_delta_accumulates() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        let track: &[u8] = &[
            0x10, 0xb0, 7, 100, // control change at delta 16, dropped
            0x20, 0x90, 64, 80, // note-on at delta 32 -> extracted delta 48
            0x00, 0xff, 0x2f, 0x00,
        ];
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(track);
        let events = extract_note_events(&parse_midi(&bytes).unwrap());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].delta, 0x30);
    }

    #[test]
    fn normalize_factor_two() {
        let file = parse_midi(&write_midi(&middle_c_events(), 480).unwrap()).unwrap();
        let mut halved = file.clone();
        halved.ticks_per_beat = 240;
        for t in &mut halved.tracks {
            for e in t {
                e.delta /= 2;
            }
        }
        let scaled = normalize_ticks(&halved, 480);
        assert_eq!(scaled.ticks_per_beat, 480);
        let events = extract_note_events(&scaled);
        assert_eq!(events[1].delta, 480);
    }

    #[test]
    fn normalize_exact_rational() {
        // 100 * 480 / 96 = 500 exactly
        let file = MidiFile {
            format: 0,
            ticks_per_beat: 96,
            tracks: vec![vec![RawEvent {
                delta: 100,
                status: 0x90,
                data: vec![60, 64],
            }]],
        };
        let scaled = normalize_ticks(&file, 480);
        assert_eq!(scaled.tracks[0][0].delta, 500);
    }

    #[test]
    fn normalize_half_to_even() {
        // 1 * 480 / 960 = 0.5 -> rounds to 0 (even); 3 * 480 / 960 = 1.5 -> 2
        assert_eq!(div_round_half_even(480, 960), 0);
        assert_eq!(div_round_half_even(3 * 480, 960), 2);
    }

    #[test]
    fn normalize_idempotent_at_target() {
        let file = parse_midi(&write_midi(&middle_c_events(), 480).unwrap()).unwrap();
        assert_eq!(normalize_ticks(&file, 480), file);
    }

    #[test]
    fn extract_empty_for_noteless_file() {
        let bytes = write_midi(&[], 480).unwrap();
        let parsed = parse_midi(&bytes).unwrap();
        assert!(extract_note_events(&parsed).is_empty());
    }

    #[test]
    fn flatten_is_identity_on_single_track() {
        let events = middle_c_events();
        assert_eq!(flatten_tracks(&events), events);
    }

    #[test]
    fn flatten_track_major_order() {
        let ev = |pitch: u8, track_index: usize| NoteEvent {
            kind: NoteKind::On,
            pitch,
            delta: 0,
            track_index,
        };
        // Interleaved across 3 tracks, 2 events each.
        let input = vec![ev(1, 0), ev(10, 1), ev(20, 2), ev(2, 0), ev(11, 1), ev(21, 2)];
        let flat = flatten_tracks(&input);
        let pitches: Vec<u8> = flat.iter().map(|e| e.pitch).collect();
        assert_eq!(pitches, vec![1, 2, 10, 11, 20, 21]);
    }

    #[test]
    fn two_tracks_extract_in_track_order() {
        // Build a format-1 file by hand: two tracks, one note each.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&2u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        for pitch in [60u8, 72] {
            let track: &[u8] = &[0x00, 0x90, pitch, 64, 0x00, 0xff, 0x2f, 0x00];
            bytes.extend_from_slice(b"MTrk");
            bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
            bytes.extend_from_slice(track);
        }
        let events = extract_note_events(&parse_midi(&bytes).unwrap());
        assert_eq!(events.len(), 2);
        assert_eq!((events[0].pitch, events[0].track_index), (60, 0));
        assert_eq!((events[1].pitch, events[1].track_index), (72, 1));
    }

    #[test]
    fn write_rejects_out_of_range_pitch() {
        let bad = vec![NoteEvent {
            kind: NoteKind::On,
            pitch: 128,
            delta: 0,
            track_index: 0,
        }];
        assert_eq!(write_midi(&bad, 480), Err(MidiError::PitchOutOfRange(128)));
    }

    fn arb_note_event() -> impl Strategy<Value = NoteEvent> {
        (any::<bool>(), 0u8..=127, 0u32..100_000).prop_map(|(on, pitch, delta)| NoteEvent {
            kind: if on { NoteKind::On } else { NoteKind::Off },
            pitch,
            delta,
            track_index: 0,
        })
    }

    proptest! {
        #[test]
        fn roundtrip_random_events(events in prop::collection::vec(arb_note_event(), 0..100),
                                   tpb in prop::sample::select(vec![96u16, 240, 480])) {
            let bytes = write_midi(&events, tpb).unwrap();
            let parsed = parse_midi(&bytes).unwrap();
            prop_assert_eq!(extract_note_events(&parsed), events);
        }

        #[test]
        fn parse_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
            let _ = parse_midi(&bytes);
        }

        #[test]
        fn normalize_preserves_delta_order(d1 in 0u32..10_000, d2 in 0u32..10_000,
                                           tpb in 1u16..2000, target in 1u16..2000) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let s_lo = div_round_half_even(u64::from(lo) * u64::from(target), u64::from(tpb));
            let s_hi = div_round_half_even(u64::from(hi) * u64::from(target), u64::from(tpb));
            prop_assert!(s_lo <= s_hi);
        }
    }
}
