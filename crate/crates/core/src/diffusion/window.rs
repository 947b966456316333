//! Training windows with boundary duplication.

use crate::rl::Episode;
use crate::sim::HAND_JOINTS;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    /// `obs_horizon` observations, oldest first, flattened.
    pub obs_history: Vec<f64>,
    /// `pred_horizon` actions, flattened.
    pub actions: Vec<f64>,
}

/// One window per start index. Histories before the first step repeat the
/// first observation; action blocks past the end repeat the last action.
pub fn build_training_windows(episode: &Episode, obs_horizon: usize, pred_horizon: usize) -> Vec<TrainingWindow> {
    let n = episode.steps.len();
    (0..n)
        .map(|t| {
            let mut obs_history = Vec::new();
            for k in 0..obs_horizon {
                let idx = (t + k + 1).saturating_sub(obs_horizon);
                obs_history.extend_from_slice(&episode.steps[idx].obs);
            }
            let mut actions = Vec::with_capacity(pred_horizon * HAND_JOINTS);
            for k in 0..pred_horizon {
                actions.extend_from_slice(&episode.steps[(t + k).min(n - 1)].action);
            }
            TrainingWindow { obs_history, actions }
        })
        .collect()
}

/// Conditioning for a live rollout: the last `obs_horizon` observations,
/// repeating the earliest available one when the history is short.
pub fn history_from(observations: &[Vec<f64>], obs_horizon: usize) -> Vec<f64> {
    let n = observations.len();
    let mut out = Vec::new();
    for k in 0..obs_horizon {
        let back = obs_horizon - 1 - k;
        out.extend_from_slice(&observations[(n - 1).saturating_sub(back)]);
    }
    out
}
