use proptest::prelude::*;
use slidemil::metrics::MetricSet;
use slidemil::train::{EpochMetrics, SplitName, TrainerEvent};
use slidemil_orchestrator::ingest::{parse_log_chunk, upsert_metric};
use slidemil_orchestrator::types::MetricEvent;

fn log_text(epochs: usize) -> Vec<u8> {
    let mut out = String::from("starting\n");
    for e in 0..epochs {
        for split in [SplitName::Train, SplitName::Val] {
            let m = MetricSet { auroc: 0.5 + 0.01 * e as f64, ..MetricSet::default() };
            out.push_str(&TrainerEvent::Epoch(EpochMetrics::new(e, split, 0.6, m, 1e-3)).to_line());
            out.push('\n');
            out.push_str("some stderr noise é\n");
        }
    }
    out.push_str("[trainer] {broken\n");
    out.into_bytes()
}

/// Cursor fold over a log that grows through the given byte lengths.
fn ingest_growing(log: &[u8], cuts: &[usize]) -> (Vec<MetricEvent>, usize) {
    let (mut offset, mut events, mut warnings) = (0usize, Vec::new(), 0);
    for &len in cuts.iter().chain(std::iter::once(&log.len())) {
        let len = len.max(offset);
        let parsed = parse_log_chunk(&log[offset..len], offset as u64);
        for ev in parsed.events {
            if let TrainerEvent::Epoch(p) = ev {
                upsert_metric(&mut events, MetricEvent { job_id: "j".into(), epoch: p.epoch, split: p.split, payload: p });
            }
        }
        warnings += parsed.warnings.len();
        offset += parsed.consumed;
    }
    (events, warnings)
}

proptest! {
    #[test]
    fn any_sequence_of_torn_reads_matches_one_pass(
        mut cuts in proptest::collection::vec(0usize..4000, 0..12),
        replay in proptest::collection::vec(0usize..60, 0..4),
    ) {
        let log = log_text(8);
        cuts.iter_mut().for_each(|c| *c %= log.len() + 1);
        cuts.sort_unstable();
        let full = ingest_growing(&log, &[]);
        prop_assert_eq!(full.0.len(), 16);
        prop_assert_eq!(full.1, 1);
        prop_assert_eq!(ingest_growing(&log, &cuts), full.clone());

        // Replaying already-ingested events changes nothing.
        let mut events = full.0.clone();
        for i in replay {
            let ev = full.0[i % full.0.len()].clone();
            prop_assert!(!upsert_metric(&mut events, ev));
        }
        prop_assert_eq!(events, full.0);
    }
}
