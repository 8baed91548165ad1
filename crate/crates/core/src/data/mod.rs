//! Trajectory ingestion, windowing, scene splits and synthetic scenes.
//!
//! A dataset directory holds, per scene `name`, the trajectory file
//! `name.txt`, the semantic grid `name.sgrid` and optionally the list of
//! true goal anchors `name.anchors.json`.

mod synthetic;
mod trajfile;
mod window;

use std::fs;
use std::path::Path;

pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticScene};
pub use trajfile::{format_trajectories, frame_step, parse_trajectories, parse_trajectory_file, Track};
pub use window::{
    contiguous_runs, leave_one_scene_out, make_windows, window_count, SceneWindows, TrajectoryWindow,
};

use crate::error::{Error, Result};
use crate::goal::SemanticGrid;

/// One scene of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub name: String,
    pub tracks: Vec<Track>,
    pub semantic: SemanticGrid,
    pub anchors: Option<Vec<[f64; 2]>>,
}

impl SceneData {
    pub fn windows(&self, history: usize, future: usize, stride: usize) -> Result<SceneWindows> {
        Ok(SceneWindows {
            name: self.name.clone(),
            windows: make_windows(&self.name, &self.tracks, history, future, stride)?,
        })
    }
}

pub fn write_scene(dir: &Path, scene: &SceneData) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{}.txt", scene.name)), format_trajectories(&scene.tracks))?;
    scene.semantic.save(&dir.join(format!("{}.sgrid", scene.name)))?;
    if let Some(anchors) = &scene.anchors {
        let json = serde_json::to_string_pretty(anchors)?;
        fs::write(dir.join(format!("{}.anchors.json", scene.name)), json + "\n")?;
    }
    Ok(())
}

pub fn read_scene(dir: &Path, name: &str) -> Result<SceneData> {
    let traj = dir.join(format!("{name}.txt"));
    if !traj.exists() {
        return Err(Error::UnknownScene(name.to_string()));
    }
    let grid = dir.join(format!("{name}.sgrid"));
    if !grid.exists() {
        return Err(Error::MissingFile(grid));
    }
    let anchors_path = dir.join(format!("{name}.anchors.json"));
    let anchors = if anchors_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&anchors_path)?)?)
    } else {
        None
    };
    Ok(SceneData {
        name: name.to_string(),
        tracks: parse_trajectory_file(&traj)?,
        semantic: SemanticGrid::load(&grid)?,
        anchors,
    })
}

/// Loads every scene of a dataset directory, ordered by name.
pub fn read_dataset(dir: &Path) -> Result<Vec<SceneData>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Invalid(format!("no trajectory files in {}", dir.display())));
    }
    names.iter().map(|n| read_scene(dir, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseStream;

    #[test]
    fn scene_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig::default();
        let s = generate_synthetic(&cfg, 20, &mut NoiseStream::new(5)).unwrap();
        let scene = SceneData {
            name: "corridor_0".into(),
            tracks: s.tracks,
            semantic: s.semantic,
            anchors: Some(s.anchors),
        };
        write_scene(dir.path(), &scene).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, vec![scene]);
        assert!(matches!(read_scene(dir.path(), "nope"), Err(Error::UnknownScene(_))));
    }
}
