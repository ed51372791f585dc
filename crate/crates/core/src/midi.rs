//! Standard MIDI File output for generated melodies, a reader for the files
//! this module writes, and the piano-roll JSON the web UI draws.

use serde::{Deserialize, Serialize};

use crate::contour::SERIES_LEN;
use crate::dataset::{PitchSequence, PitchVocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidiSettings {
    pub tempo_bpm: f64,
    pub ticks_per_quarter: u16,
    /// Length of every note in ticks.
    pub note_ticks: u32,
    pub velocity: u8,
    pub channel: u8,
    pub program: u8,
}

impl Default for MidiSettings {
    /// Eighth notes at 120 BPM.
    fn default() -> Self {
        MidiSettings {
            tempo_bpm: 120.0,
            ticks_per_quarter: 480,
            note_ticks: 240,
            velocity: 80,
            channel: 0,
            program: 0,
        }
    }
}

impl MidiSettings {
    fn validate(&self) -> Result<()> {
        if !self.tempo_bpm.is_finite()
            || self.tempo_bpm <= 0.0
            || self.ticks_per_quarter == 0
            || self.ticks_per_quarter > 0x7fff
        {
            return Err(Error::InvalidArgument(
                "tempo and ticks per quarter must be positive".into(),
            ));
        }
        if self.channel > 15
            || self.velocity > 127
            || self.program > 127
            || self.note_ticks >= 1 << 28
        {
            return Err(Error::InvalidArgument("MIDI setting out of range".into()));
        }
        Ok(())
    }
}

/// Minimal-length variable-length quantity.
pub fn write_vlq(buf: &mut Vec<u8>, value: u32) {
    debug_assert!(value < 1 << 28);
    let mut started = false;
    for shift in [21u32, 14, 7] {
        let group = (value >> shift) & 0x7f;
        if started || group != 0 {
            buf.push(group as u8 | 0x80);
            started = true;
        }
    }
    buf.push((value & 0x7f) as u8);
}

fn read_vlq(data: &[u8], pos: &mut usize) -> Result<u32> {
    let mut value = 0u32;
    for _ in 0..4 {
        let b = *data
            .get(*pos)
            .ok_or_else(|| Error::Midi("truncated variable-length quantity".into()))?;
        *pos += 1;
        value = (value << 7) | (b & 0x7f) as u32;
        if b & 0x80 == 0 {
            return Ok(value);
        }
    }
    Err(Error::Midi(
        "variable-length quantity longer than 4 bytes".into(),
    ))
}

/// Format-0 SMF: tempo, program change, then each note as a note-on and a
/// note-off `note_ticks` later, back to back.
pub fn write_midi(
    seq: &PitchSequence,
    vocab: &PitchVocabulary,
    settings: &MidiSettings,
) -> Result<Vec<u8>> {
    settings.validate()?;
    let mut track = Vec::with_capacity(16 * 8 + 16);
    let micros = (60_000_000.0 / settings.tempo_bpm).round() as u32;
    if micros == 0 || micros > 0xff_ffff {
        return Err(Error::InvalidArgument(format!(
            "tempo {} BPM not representable",
            settings.tempo_bpm
        )));
    }
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&micros.to_be_bytes()[1..]);
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xc0 | settings.channel, settings.program]);

    for &token in seq.tokens() {
        let pitch = vocab.midi_low as i32 + token as i32;
        if !(0..=127).contains(&pitch) {
            return Err(Error::InvalidPitch(pitch));
        }
        write_vlq(&mut track, 0);
        track.extend_from_slice(&[0x90 | settings.channel, pitch as u8, settings.velocity]);
        write_vlq(&mut track, settings.note_ticks);
        track.extend_from_slice(&[0x80 | settings.channel, pitch as u8, 0]);
    }
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&settings.ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

fn take<'a>(data: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= data.len());
    match end {
        Some(end) => {
            let s = &data[*pos..end];
            *pos = end;
            Ok(s)
        }
        None => Err(Error::Midi(format!("truncated {what}"))),
    }
}

/// Note-on pitches of a single-track file, in order.
pub fn read_note_pitches(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4, "header")? != b"MThd" {
        return Err(Error::Midi("missing MThd".into()));
    }
    let hlen = u32::from_be_bytes(take(bytes, &mut pos, 4, "header")?.try_into().unwrap()) as usize;
    let header = take(bytes, &mut pos, hlen, "header")?;
    if hlen < 6 {
        return Err(Error::Midi(format!("header length {hlen}")));
    }
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    if format != 0 || ntracks != 1 {
        return Err(Error::Midi(format!(
            "expected format 0 with 1 track, got format {format} with {ntracks}"
        )));
    }
    if take(bytes, &mut pos, 4, "track header")? != b"MTrk" {
        return Err(Error::Midi("missing MTrk".into()));
    }
    let tlen = u32::from_be_bytes(
        take(bytes, &mut pos, 4, "track header")?
            .try_into()
            .unwrap(),
    ) as usize;
    let track = take(bytes, &mut pos, tlen, "track")?;

    let mut pitches = Vec::new();
    let mut p = 0;
    let mut running: Option<u8> = None;
    let mut ended = false;
    while p < track.len() {
        read_vlq(track, &mut p)?;
        let first = *track
            .get(p)
            .ok_or_else(|| Error::Midi("truncated event".into()))?;
        let status = if first & 0x80 != 0 {
            p += 1;
            first
        } else {
            running.ok_or_else(|| Error::Midi("data byte without running status".into()))?
        };
        match status {
            0xff => {
                let kind = take(track, &mut p, 1, "meta event")?[0];
                let len = read_vlq(track, &mut p)? as usize;
                take(track, &mut p, len, "meta event")?;
                if kind == 0x2f {
                    ended = true;
                    break;
                }
            }
            0xf0 | 0xf7 => {
                let len = read_vlq(track, &mut p)? as usize;
                take(track, &mut p, len, "sysex")?;
            }
            0x80..=0xef => {
                running = Some(status);
                let n = if matches!(status & 0xf0, 0xc0 | 0xd0) {
                    1
                } else {
                    2
                };
                let data = take(track, &mut p, n, "channel event")?;
                if status & 0xf0 == 0x90 && data[1] > 0 {
                    pitches.push(data[0]);
                }
            }
            _ => {
                return Err(Error::Midi(format!(
                    "unsupported status byte {status:#04x}"
                )))
            }
        }
    }
    if !ended {
        return Err(Error::Midi("missing end-of-track".into()));
    }
    Ok(pitches)
}

/// Reads back a melody written by [`write_midi`].
pub fn read_midi(bytes: &[u8], vocab: &PitchVocabulary) -> Result<PitchSequence> {
    let pitches = read_note_pitches(bytes)?;
    if pitches.len() != SERIES_LEN {
        return Err(Error::Midi(format!(
            "expected {SERIES_LEN} notes, found {}",
            pitches.len()
        )));
    }
    let mut tokens = [0u8; SERIES_LEN];
    for (t, &p) in tokens.iter_mut().zip(&pitches) {
        *t = vocab.to_token(p)?;
    }
    PitchSequence::new(tokens, vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollNote {
    pub pitch: u8,
    pub start: usize,
    pub dur: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PianoRoll {
    pub notes: Vec<RollNote>,
}

/// One note per eighth-note step.
pub fn pianoroll(seq: &PitchSequence, vocab: &PitchVocabulary) -> PianoRoll {
    PianoRoll {
        notes: seq
            .midi_pitches(vocab)
            .iter()
            .enumerate()
            .map(|(start, &pitch)| RollNote {
                pitch,
                start,
                dur: 1,
            })
            .collect(),
    }
}

pub fn to_pianoroll_json(seq: &PitchSequence, vocab: &PitchVocabulary) -> String {
    serde_json::to_string(&pianoroll(seq, vocab)).expect("piano roll serializes")
}
