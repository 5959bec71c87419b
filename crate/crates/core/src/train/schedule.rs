use std::f64::consts::PI;

use super::config::Schedule;

/// Multiplier applied at each third of training by the step schedule.
pub const STEP_FACTOR: f64 = 0.1;
/// Warmup starts at this fraction of the base rate.
pub const WARMUP_START: f64 = 0.01;

/// Warmup length: 10% of training, at least 1 and at most 5 epochs.
pub fn warmup_len(total_epochs: usize) -> usize {
    ((0.1 * total_epochs as f64).ceil() as usize).clamp(1, 5)
}

fn cosine(base_lr: f64, progress: f64) -> f64 {
    base_lr * 0.5 * (1.0 + (PI * progress.clamp(0.0, 1.0)).cos())
}

/// Learning rate for `epoch` (0-based) of `total_epochs`.
///
/// The cosine phases span the remaining epochs so the final epoch lands at
/// the end of the decay.
pub fn lr_at(schedule: Schedule, base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    match schedule {
        Schedule::Constant => base_lr,
        Schedule::Step => {
            let thirds = (3 * epoch) / total_epochs.max(1);
            base_lr * STEP_FACTOR.powi(thirds as i32)
        }
        Schedule::Cosine => {
            let span = total_epochs.saturating_sub(1).max(1);
            cosine(base_lr, epoch as f64 / span as f64)
        }
        Schedule::CosineWarmup => {
            let warmup = warmup_len(total_epochs);
            if epoch < warmup {
                base_lr * (WARMUP_START + (1.0 - WARMUP_START) * epoch as f64 / warmup as f64)
            } else {
                let span = total_epochs.saturating_sub(1 + warmup).max(1);
                cosine(base_lr, (epoch - warmup) as f64 / span as f64)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_lengths() {
        assert_eq!(warmup_len(3), 1);
        assert_eq!(warmup_len(10), 1);
        assert_eq!(warmup_len(11), 2);
        assert_eq!(warmup_len(50), 5);
        assert_eq!(warmup_len(200), 5);
    }

    #[test]
    fn warmup_starts_at_one_percent() {
        for total in [3, 10, 50, 200] {
            assert!((lr_at(Schedule::CosineWarmup, 1e-3, 0, total) - 1e-5).abs() < 1e-18);
        }
    }

    #[test]
    fn reaches_base_after_warmup_and_decays_to_near_zero() {
        for total in [3, 10, 50, 200] {
            let w = warmup_len(total);
            assert!((lr_at(Schedule::CosineWarmup, 1.0, w, total) - 1.0).abs() < 1e-12);
            assert!(lr_at(Schedule::CosineWarmup, 1.0, total - 1, total) < 0.01);
        }
    }

    #[test]
    fn continuity() {
        for total in [3, 10, 50, 200] {
            for e in 0..total - 1 {
                let a = lr_at(Schedule::CosineWarmup, 1.0, e, total);
                let b = lr_at(Schedule::CosineWarmup, 1.0, e + 1, total);
                assert!((a - b).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn step_and_constant() {
        assert_eq!(lr_at(Schedule::Constant, 0.3, 17, 50), 0.3);
        assert_eq!(lr_at(Schedule::Step, 1.0, 0, 30), 1.0);
        assert!((lr_at(Schedule::Step, 1.0, 10, 30) - 0.1).abs() < 1e-12);
        assert!((lr_at(Schedule::Step, 1.0, 29, 30) - 0.01).abs() < 1e-12);
    }
}
