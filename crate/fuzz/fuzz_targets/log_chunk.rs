#![no_main]

use libfuzzer_sys::fuzz_target;
use slidemil_orchestrator::ingest::parse_log_chunk;

fuzz_target!(|data: &[u8]| {
    let parsed = parse_log_chunk(data, 0);
    assert!(parsed.consumed <= data.len());
    assert!(parsed.consumed == 0 || data[parsed.consumed - 1] == b'\n');
    assert!(!parsed.partial.contains('\n'));

    // Splitting at any newline and feeding the halves in order yields the same events.
    if let Some(cut) = data.iter().position(|&b| b == b'\n').map(|i| i + 1) {
        let head = parse_log_chunk(&data[..cut], 0);
        let tail = parse_log_chunk(&data[cut..], cut as u64);
        let mut events = head.events;
        events.extend(tail.events);
        assert_eq!(events, parsed.events);
        assert_eq!(head.warnings.len() + tail.warnings.len(), parsed.warnings.len());
    }
});
