use serde::{Deserialize, Serialize};
use tracing::warn;

use super::trajfile::{frame_step, Track};
use crate::error::{Error, Result};

/// History and future of one agent, world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub scene: String,
    pub agent: i64,
    /// Frame number of the first history row.
    pub frame_base: i64,
    pub history: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
}

impl TrajectoryWindow {
    /// Position at the current frame (last history row).
    pub fn current(&self) -> [f64; 2] {
        *self.history.last().expect("window history is non-empty")
    }
}

/// Splits a track into maximal runs of frames spaced exactly `step` apart.
pub fn contiguous_runs(track: &Track, step: i64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=track.len() {
        if i == track.len() || track.frames[i] - track.frames[i - 1] != step {
            if i > start {
                runs.push((start, i));
            }
            start = i;
        }
    }
    runs
}

/// Number of windows a contiguous run of length `len` yields.
pub fn window_count(len: usize, history: usize, future: usize, stride: usize) -> usize {
    if len < history + future {
        0
    } else {
        (len - history - future) / stride + 1
    }
}

/// Slides a `history + future` window over every contiguous run of every track.
pub fn make_windows(
    scene: &str,
    tracks: &[Track],
    history: usize,
    future: usize,
    stride: usize,
) -> Result<Vec<TrajectoryWindow>> {
    if history < 1 || future < 1 || stride < 1 {
        return Err(Error::Invalid("history, future and stride must be at least 1".into()));
    }
    let step = frame_step(tracks);
    let span = history + future;
    let mut out = Vec::new();
    for t in tracks {
        for (a, b) in contiguous_runs(t, step) {
            let n = window_count(b - a, history, future, stride);
            for w in 0..n {
                let s = a + w * stride;
                out.push(TrajectoryWindow {
                    scene: scene.to_string(),
                    agent: t.agent_id,
                    frame_base: t.frames[s],
                    history: t.points[s..s + history].to_vec(),
                    future: t.points[s + history..s + span].to_vec(),
                });
            }
        }
    }
    Ok(out)
}

/// All windows of one named scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneWindows {
    pub name: String,
    pub windows: Vec<TrajectoryWindow>,
}

/// Train on every scene except `held_out`, test on `held_out`.
pub fn leave_one_scene_out(
    scenes: &[SceneWindows],
    held_out: &str,
) -> Result<(Vec<TrajectoryWindow>, Vec<TrajectoryWindow>)> {
    let test = scenes
        .iter()
        .find(|s| s.name == held_out)
        .ok_or_else(|| Error::UnknownScene(held_out.to_string()))?;
    if test.windows.is_empty() {
        warn!("held-out scene '{held_out}' has no windows; the test split is empty");
    }
    let train = scenes
        .iter()
        .filter(|s| s.name != held_out)
        .flat_map(|s| s.windows.iter().cloned())
        .collect();
    Ok((train, test.windows.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(agent: i64, frames: impl IntoIterator<Item = i64>) -> Track {
        let frames: Vec<i64> = frames.into_iter().collect();
        let points = frames.iter().map(|f| [*f as f64, agent as f64]).collect();
        Track { agent_id: agent, frames, points }
    }

    #[test]
    fn window_counts() {
        let t25 = track(1, (0..25).map(|i| i * 10));
        assert_eq!(make_windows("s", &[t25], 8, 12, 1).unwrap().len(), 6);
        let t19 = track(1, (0..19).map(|i| i * 10));
        assert!(make_windows("s", &[t19], 8, 12, 1).unwrap().is_empty());
        let t40 = track(1, (0..40).map(|i| i * 10));
        assert_eq!(make_windows("s", &[t40], 8, 12, 5).unwrap().len(), 5);
        assert!(make_windows("s", &[], 8, 0, 1).is_err());
    }

    #[test]
    fn gaps_split_tracks_and_agents_never_mix() {
        // 22 frames, a gap, then 21 frames.
        let frames = (0..22).chain(30..51).map(|i| i * 10);
        let tracks = vec![track(1, frames), track(2, (0..20).map(|i| i * 10))];
        let ws = make_windows("s", &tracks, 8, 12, 1).unwrap();
        assert_eq!(ws.len(), 3 + 2 + 1);
        for w in &ws {
            assert!(w.history.iter().chain(&w.future).all(|p| p[1] == w.agent as f64));
            let xs: Vec<f64> = w.history.iter().chain(&w.future).map(|p| p[0]).collect();
            assert!(xs.windows(2).all(|p| p[1] - p[0] == 10.0));
            assert_eq!(xs[0], w.frame_base as f64);
        }
    }

    #[test]
    fn leave_one_out_partitions() {
        let names = ["eth", "hotel", "univ", "zara1", "zara2"];
        let scenes: Vec<SceneWindows> = names
            .iter()
            .enumerate()
            .map(|(i, n)| SceneWindows {
                name: n.to_string(),
                windows: make_windows(n, &[track(i as i64, (0..21 + i as i64).map(|f| f * 10))], 8, 12, 1).unwrap(),
            })
            .collect();
        let (train, test) = leave_one_scene_out(&scenes, "eth").unwrap();
        assert!(test.iter().all(|w| w.scene == "eth"));
        let train_scenes: std::collections::BTreeSet<_> = train.iter().map(|w| w.scene.as_str()).collect();
        assert_eq!(train_scenes.len(), 4);
        let total: usize = scenes.iter().map(|s| s.windows.len()).sum();
        assert_eq!(train.len() + test.len(), total);
        assert!(leave_one_scene_out(&scenes, "sdd").is_err());

        let mut with_empty = scenes.clone();
        with_empty.push(SceneWindows { name: "empty".into(), windows: vec![] });
        let (train, test) = leave_one_scene_out(&with_empty, "empty").unwrap();
        assert!(test.is_empty());
        assert_eq!(train.len(), total);
    }
}
