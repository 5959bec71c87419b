//! Incremental parsing of trainer logs.

use slidemil::train::{parse_trainer_line, TrainerEvent};

use crate::types::MetricEvent;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedChunk {
    pub events: Vec<TrainerEvent>,
    pub warnings: Vec<String>,
    /// Bytes up to and including the last newline.
    pub consumed: usize,
    /// The unterminated tail, if any.
    pub partial: String,
}

/// Parse every complete line of `chunk`, which starts at `base_offset` in
/// the log. Lines without the trainer prefix are skipped; malformed trainer
/// lines become warnings.
pub fn parse_log_chunk(chunk: &[u8], base_offset: u64) -> ParsedChunk {
    let consumed = chunk.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut out = ParsedChunk {
        partial: String::from_utf8_lossy(&chunk[consumed..]).into_owned(),
        consumed,
        ..Default::default()
    };
    let mut offset = base_offset;
    for raw in chunk[..consumed].split_inclusive(|&b| b == b'\n') {
        let line = String::from_utf8_lossy(raw);
        match parse_trainer_line(&line) {
            None => {}
            Some(Ok(event)) => out.events.push(event),
            Some(Err(e)) => out.warnings.push(format!("malformed trainer line at byte {offset}: {e}")),
        }
        offset += raw.len() as u64;
    }
    out
}

/// Insert or replace the event with the same (epoch, split). Returns true
/// when the stored set changed.
pub fn upsert_metric(events: &mut Vec<MetricEvent>, event: MetricEvent) -> bool {
    let key = (event.epoch, event.split);
    match events.iter_mut().find(|e| (e.epoch, e.split) == key) {
        Some(existing) if *existing == event => false,
        Some(existing) => {
            *existing = event;
            true
        }
        None => {
            events.push(event);
            events.sort_by_key(|e| (e.epoch, e.split));
            true
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tail_is_not_consumed() {
        let line = br#"[trainer] {"type":"status","state":"running","message":"x"}"#;
        let mut chunk = line.to_vec();
        chunk.extend_from_slice(b"\nnoise\n[trainer] {\"type\":");
        let parsed = parse_log_chunk(&chunk, 0);
        assert_eq!(parsed.events.len(), 1);
        assert_eq!(parsed.consumed, line.len() + 7);
        assert_eq!(parsed.partial, "[trainer] {\"type\":");
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn malformed_lines_warn() {
        let parsed = parse_log_chunk(b"[trainer] {not json}\n", 40);
        assert!(parsed.events.is_empty());
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("byte 40"));
    }
}
