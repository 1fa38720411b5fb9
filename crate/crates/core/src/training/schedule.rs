use serde::{Deserialize, Serialize};

/// Step decay: the base rate holds through `start_epoch`, then is multiplied
/// by `factor` once per started `period`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub start_epoch: u32,
    pub period: u32,
    pub factor: f64,
}

impl Default for DecaySchedule {
    fn default() -> Self {
        DecaySchedule {
            start_epoch: 40,
            period: 20,
            factor: 0.1,
        }
    }
}

/// Learning rate for 1-based `epoch`.
pub fn lr_at(epoch: u32, schedule: &DecaySchedule, base_lr: f64) -> f64 {
    if epoch <= schedule.start_epoch {
        return base_lr;
    }
    let decays = (epoch - schedule.start_epoch).div_ceil(schedule.period.max(1));
    base_lr * schedule.factor.powi(decays as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs()
    }

    #[test]
    fn default_schedule_points() {
        let s = DecaySchedule::default();
        assert_eq!(lr_at(1, &s, 1e-2), 1e-2);
        assert_eq!(lr_at(10, &s, 1e-2), 1e-2);
        assert_eq!(lr_at(40, &s, 1e-2), 1e-2);
        assert!(close(lr_at(41, &s, 1e-2), 1e-3));
        assert!(close(lr_at(60, &s, 1e-2), 1e-3));
        assert!(close(lr_at(61, &s, 1e-2), 1e-4));
        assert!(close(lr_at(65, &s, 1e-2), 1e-4));
        assert!(close(lr_at(80, &s, 1e-2), 1e-4));
        assert!(close(lr_at(81, &s, 1e-2), 1e-5));
    }

    #[test]
    fn non_increasing() {
        let s = DecaySchedule::default();
        let mut prev = f64::INFINITY;
        for e in 1..=200 {
            let lr = lr_at(e, &s, 1e-2);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
