//! Standard MIDI File subset: type 0 out, type 0/1 in, note on/off only.
//! Frames map to ticks at 960 ticks per quarter note and 120 bpm, i.e.
//! 1920 ticks per second.

use std::fs;
use std::path::Path;

use super::NoteEvent;
use crate::error::{Error, Result};

pub const DIVISION: u16 = 960;
pub const DEFAULT_TEMPO: u32 = 500_000;
const TICKS_PER_SECOND: f64 = DIVISION as f64 * 1e6 / DEFAULT_TEMPO as f64;
const OFF_VELOCITY: u8 = 64;

fn check_fps(fps: f64) -> Result<()> {
    if !(fps > 0.0 && fps <= TICKS_PER_SECOND) {
        return Err(Error::InvalidArgument(format!(
            "fps {fps} outside (0, {TICKS_PER_SECOND}]"
        )));
    }
    Ok(())
}

pub fn frame_to_tick(frame: usize, fps: f64) -> u64 {
    (frame as f64 * TICKS_PER_SECOND / fps).round() as u64
}

fn write_vlq(out: &mut Vec<u8>, mut v: u64) {
    let mut buf = [0u8; 10];
    let mut i = buf.len() - 1;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = 0x80 | (v & 0x7f) as u8;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

pub fn encode_midi(events: &[NoteEvent], fps: f64) -> Result<Vec<u8>> {
    check_fps(fps)?;
    super::check_no_overlap(events)?;
    // (tick, is_on, note, velocity); offs sort before ons at the same tick
    let mut msgs: Vec<(u64, bool, u8, u8)> = Vec::with_capacity(events.len() * 2);
    for e in events {
        msgs.push((frame_to_tick(e.on_frame, fps), true, e.midi_note, e.velocity));
        msgs.push((frame_to_tick(e.off_frame, fps), false, e.midi_note, OFF_VELOCITY));
    }
    msgs.sort();

    let mut track = Vec::new();
    track.extend_from_slice(&[0x00, 0xFF, 0x51, 0x03]);
    track.extend_from_slice(&DEFAULT_TEMPO.to_be_bytes()[1..]);
    let mut last = 0;
    for (tick, on, note, vel) in msgs {
        write_vlq(&mut track, tick - last);
        last = tick;
        track.extend_from_slice(&[if on { 0x90 } else { 0x80 }, note, vel]);
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("unexpected end of file reading {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u64;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("variable-length quantity longer than 4 bytes"))
    }
}

/// A timed message from any track: tick, then note on/off or tempo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Msg {
    Tempo(u32),
    Off(u8),
    On(u8, u8),
}

fn read_track(r: &mut Reader, end: usize, out: &mut Vec<(u64, usize, Msg)>) -> Result<()> {
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut seq = out.len();
    while r.pos < end {
        tick += r.vlq()?;
        let first = r.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            r.pos -= 1;
            running.ok_or_else(|| r.err("data byte without running status"))?
        };
        let mut push = |m: Msg| {
            out.push((tick, seq, m));
            seq += 1;
        };
        match status {
            0xFF => {
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.take(len)?;
                match kind {
                    0x2F => {
                        r.pos = end;
                        return Ok(());
                    }
                    0x51 if len == 3 => {
                        push(Msg::Tempo(u32::from_be_bytes([0, data[0], data[1], data[2]])))
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let n_data = if matches!(status & 0xF0, 0xC0 | 0xD0) { 1 } else { 2 };
                let data = r.take(n_data)?;
                if data.iter().any(|b| b & 0x80 != 0) {
                    return Err(Error::Parse {
                        offset: r.pos - n_data,
                        message: "data byte with the high bit set".into(),
                    });
                }
                match (status & 0xF0, data) {
                    (0x90, &[note, vel]) if vel > 0 => push(Msg::On(note, vel)),
                    (0x90, &[note, _]) | (0x80, &[note, _]) => push(Msg::Off(note)),
                    _ => {}
                }
            }
            _ => return Err(r.err(format!("unsupported status byte {status:#04x}"))),
        }
    }
    if r.pos > end {
        return Err(r.err("event runs past the end of its track chunk"));
    }
    Ok(())
}

/// Parses note events, converting ticks to frames through the tempo map.
pub fn decode_midi(bytes: &[u8], fps: f64) -> Result<Vec<NoteEvent>> {
    check_fps(fps)?;
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Parse {
        offset: 0,
        message: "file too short for a MIDI header".into(),
    })? != b"MThd"
    {
        return Err(Error::Parse {
            offset: 0,
            message: "missing MThd header".into(),
        });
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(r.err("header chunk shorter than 6 bytes"));
    }
    let format = r.u16()?;
    let n_tracks = r.u16()?;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(Error::Parse {
            offset: 8,
            message: format!("unsupported MIDI format {format}"),
        });
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(Error::Parse {
            offset: 12,
            message: "only ticks-per-quarter division is supported".into(),
        });
    }

    let mut msgs = Vec::new();
    for _ in 0..n_tracks {
        let start = r.pos;
        if r.take(4)? != b"MTrk" {
            return Err(Error::Parse {
                offset: start,
                message: "expected MTrk chunk".into(),
            });
        }
        let len = r.u32()? as usize;
        let end = r.pos + len;
        if end > bytes.len() {
            return Err(r.err("track chunk runs past the end of the file"));
        }
        read_track(&mut r, end, &mut msgs)?;
    }
    // ticks, then tempo before offs before ons, then file order
    msgs.sort_by_key(|&(tick, seq, m)| {
        let rank = match m {
            Msg::Tempo(_) => 0,
            Msg::Off(_) => 1,
            Msg::On(..) => 2,
        };
        (tick, rank, seq)
    });

    let mut tempo = DEFAULT_TEMPO as f64;
    let (mut last_tick, mut seconds) = (0u64, 0.0f64);
    let mut open: [Option<(usize, u8)>; 128] = [None; 128];
    let mut events = Vec::new();
    let close = |open: &mut [Option<(usize, u8)>; 128], note: u8, frame: usize, events: &mut Vec<NoteEvent>| {
        if let Some((on, vel)) = open[note as usize].take() {
            events.push(NoteEvent {
                midi_note: note,
                on_frame: on,
                off_frame: frame.max(on + 1),
                velocity: vel,
            });
        }
    };
    for (tick, _, m) in msgs {
        seconds += (tick - last_tick) as f64 * tempo / 1e6 / division as f64;
        last_tick = tick;
        let frame = (seconds * fps).round() as usize;
        match m {
            Msg::Tempo(t) => tempo = t as f64,
            Msg::Off(note) => close(&mut open, note, frame, &mut events),
            Msg::On(note, vel) => {
                close(&mut open, note, frame, &mut events);
                open[note as usize] = Some((frame, vel));
            }
        }
    }
    let end_frame = (seconds * fps).round() as usize;
    for note in 0..128u8 {
        close(&mut open, note, end_frame, &mut events);
    }
    events.sort_by_key(|e| (e.on_frame, e.midi_note));
    Ok(events)
}

pub fn write_midi(path: impl AsRef<Path>, events: &[NoteEvent], fps: f64) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_midi(events, fps)?).map_err(|e| Error::io(path, e))
}

pub fn read_midi(path: impl AsRef<Path>, fps: f64) -> Result<Vec<NoteEvent>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_midi(&bytes, fps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(note: u8, on: usize, off: usize, vel: u8) -> NoteEvent {
        NoteEvent::new(note, on, off, vel).unwrap()
    }

    #[test]
    fn empty_file_has_only_tempo_and_end() {
        let bytes = encode_midi(&[], 30.0).unwrap();
        let track: &[u8] = &[0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, 0x00, 0xFF, 0x2F, 0x00];
        assert_eq!(&bytes[..8], b"MThd\0\0\0\x06");
        assert_eq!(&bytes[14..18], b"MTrk");
        assert_eq!(&bytes[22..], track);
        assert!(decode_midi(&bytes, 30.0).unwrap().is_empty());
    }

    #[test]
    fn single_note_round_trips() {
        let e = [ev(60, 0, 30, 64)];
        let bytes = encode_midi(&e, 30.0).unwrap();
        assert_eq!(decode_midi(&bytes, 30.0).unwrap(), e);
        // 30 frames at 30 fps is one second, 1920 ticks: VLQ 0x8F 0x00
        assert!(bytes.windows(5).any(|w| w == [0x8F, 0x00, 0x80, 60, 64]));
    }

    #[test]
    fn zero_velocity_note_on_is_note_off() {
        // header + track: on 60 vel 100, 480 ticks later on 60 vel 0 (running status)
        let mut track = vec![0x00, 0x90, 60, 100, 0x83, 0x60, 60, 0];
        track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
        let mut bytes = b"MThd\0\0\0\x06\0\0\0\x01\x03\xC0MTrk".to_vec();
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&track);
        let events = decode_midi(&bytes, 30.0).unwrap();
        // 480 ticks at 960/quarter and 120 bpm is 0.25 s, 7.5 -> 8 frames
        assert_eq!(events, vec![ev(60, 0, 8, 100)]);
    }

    #[test]
    fn malformed_input_reports_offsets() {
        assert!(matches!(decode_midi(b"RIFF", 30.0), Err(Error::Parse { offset: 0, .. })));
        let bytes = encode_midi(&[ev(60, 0, 30, 64)], 30.0).unwrap();
        match decode_midi(&bytes[..bytes.len() - 3], 30.0) {
            Err(Error::Parse { offset, .. }) => assert!(offset >= 14),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn simultaneous_events_round_trip() {
        let e = vec![ev(60, 0, 10, 20), ev(64, 0, 10, 90), ev(60, 10, 25, 127), ev(67, 3, 4, 1)];
        let bytes = encode_midi(&e, 30.0).unwrap();
        let mut back = decode_midi(&bytes, 30.0).unwrap();
        back.sort();
        let mut want = e.clone();
        want.sort();
        assert_eq!(back, want);
        let again = encode_midi(&decode_midi(&bytes, 30.0).unwrap(), 30.0).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn overlapping_events_are_refused() {
        assert!(encode_midi(&[ev(60, 0, 10, 20), ev(60, 5, 12, 20)], 30.0).is_err());
    }
}
