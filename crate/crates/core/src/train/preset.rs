use super::loss::LossKind;
use crate::model::Task;
use serde::{Deserialize, Serialize};

pub const MILESTONES: [usize; 4] = [10_000, 15_000, 17_500, 18_750];
pub const FULL_ITERS: usize = 20_000;
pub const DESK_ITERS: usize = 2_000;
/// HR patch edge used at desk scale.
pub const DESK_GT_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPreset {
    pub task: Task,
    pub batch_size: usize,
    pub base_lr: f64,
    pub loss: LossKind,
    pub gt_size: usize,
    pub blocks: usize,
    pub milestones: Vec<usize>,
}

impl TrainPreset {
    pub fn for_task(task: Task) -> Self {
        let (batch_size, base_lr, loss, gt_size) = match task {
            Task::ClassicSr => (4, 1e-4, LossKind::L1, 192),
            Task::LightSr => (2, 2e-4, LossKind::L1, 192),
            Task::Denoise => (4, 1e-4, LossKind::Charbonnier, 128),
            Task::JpegCar => (4, 1e-4, LossKind::Charbonnier, 128),
        };
        Self {
            task,
            batch_size,
            base_lr,
            loss,
            gt_size,
            blocks: task.default_blocks(),
            milestones: MILESTONES.to_vec(),
        }
    }

    /// Milestones scaled by 0.1 and a small HR patch.
    pub fn desk(mut self) -> Self {
        self.milestones = self.milestones.iter().map(|m| m / 10).collect();
        self.gt_size = DESK_GT_SIZE;
        self
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        lr_at(iter, self)
    }
}

/// `base_lr · 0.5^(number of milestones ≤ iter)`.
pub fn lr_at(iter: usize, preset: &TrainPreset) -> f64 {
    let passed = preset.milestones.iter().filter(|&&m| m <= iter).count() as i32;
    preset.base_lr * 0.5f64.powi(passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let p = TrainPreset::for_task(Task::LightSr);
        assert_eq!((p.batch_size, p.base_lr, p.loss, p.gt_size, p.blocks), (2, 2e-4, LossKind::L1, 192, 4));
        let p = TrainPreset::for_task(Task::ClassicSr);
        assert_eq!((p.batch_size, p.base_lr, p.loss, p.gt_size, p.blocks), (4, 1e-4, LossKind::L1, 192, 6));
        for t in [Task::Denoise, Task::JpegCar] {
            let p = TrainPreset::for_task(t);
            assert_eq!((p.batch_size, p.base_lr, p.loss, p.gt_size, p.blocks), (4, 1e-4, LossKind::Charbonnier, 128, 6));
        }
        assert_eq!(TrainPreset::for_task(Task::Denoise).milestones, vec![10000, 15000, 17500, 18750]);
    }

    #[test]
    fn schedule() {
        let p = TrainPreset::for_task(Task::LightSr);
        assert_eq!(p.lr_at(0), 2e-4);
        assert_eq!(p.lr_at(9_999), 2e-4);
        assert_eq!(p.lr_at(12_000), 1e-4);
        assert!((p.lr_at(19_000) - 1.25e-5).abs() < 1e-20);
        assert_eq!(p.clone().desk().milestones, vec![1000, 1500, 1750, 1875]);
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for t in Task::ALL {
            let p = TrainPreset::for_task(t);
            let s = toml::to_string(&p).unwrap();
            assert_eq!(toml::from_str::<TrainPreset>(&s).unwrap(), p);
        }
    }
}
