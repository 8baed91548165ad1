//! Multi-goal corridor scenes with known goal anchors.
//!
//! Agents enter along a shared stem, pass a junction, and walk to one of
//! `M` anchors chosen uniformly. Histories therefore look alike while the
//! futures split into `M` modes.

use serde::{Deserialize, Serialize};

use super::trajfile::Track;
use crate::error::{Error, Result};
use crate::goal::{GridSpec, SemanticGrid};
use crate::rng::NoiseStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub grid_height: usize,
    pub grid_width: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    /// Centre of the spawn box and its half extents, meters.
    pub spawn_center: [f64; 2],
    pub spawn_half_extent: [f64; 2],
    /// Waypoints every agent passes, in order, before turning to its anchor.
    pub waypoints: Vec<[f64; 2]>,
    pub anchors: Vec<[f64; 2]>,
    /// Half width of walkable corridors around each path segment, meters.
    pub corridor_half_width: f64,
    /// Obstacle boxes `[x_min, y_min, x_max, y_max]` carved out of the corridors.
    pub obstacles: Vec<[f64; 4]>,
    /// Per-agent speed, meters per frame.
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Per-step heading perturbation, radians.
    pub heading_noise: f64,
    /// Tracks shorter than this are padded by dwelling at the anchor.
    pub min_track_len: usize,
    pub max_steps: usize,
    pub frame_step: i64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            grid_height: 24,
            grid_width: 24,
            resolution: 0.5,
            origin: [0.25, 0.25],
            spawn_center: [6.0, 1.75],
            spawn_half_extent: [0.2, 0.75],
            waypoints: vec![[6.0, 6.5]],
            anchors: vec![[2.75, 8.75], [6.0, 10.5], [9.25, 8.75]],
            corridor_half_width: 1.25,
            obstacles: Vec::new(),
            speed_mean: 0.5,
            speed_std: 0.04,
            heading_noise: 0.08,
            min_track_len: 20,
            max_steps: 400,
            frame_step: 10,
        }
    }
}

impl SyntheticConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid_height, self.grid_width, self.origin, self.resolution)
    }
}

/// Generated tracks with the scene layout and the multimodal ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub tracks: Vec<Track>,
    pub semantic: SemanticGrid,
    pub anchors: Vec<[f64; 2]>,
    /// Anchor index chosen by each agent, aligned with `tracks`.
    pub choices: Vec<usize>,
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

struct Layout {
    grid: GridSpec,
    walkable: Vec<bool>,
}

impl Layout {
    fn new(cfg: &SyntheticConfig) -> Result<Self> {
        let grid = cfg.grid()?;
        let (lo, _) = grid.extent();
        let stem_start = [cfg.spawn_center[0], lo[1].min(cfg.spawn_center[1] - cfg.spawn_half_extent[1])];
        let mut segments = Vec::new();
        let mut hub = stem_start;
        for w in &cfg.waypoints {
            segments.push((hub, *w));
            hub = *w;
        }
        if cfg.waypoints.is_empty() {
            segments.push((stem_start, cfg.spawn_center));
            hub = cfg.spawn_center;
        }
        for a in &cfg.anchors {
            segments.push((hub, *a));
        }
        let walkable = (0..grid.pixels())
            .map(|i| {
                let p = grid.index_center(i);
                let blocked = cfg
                    .obstacles
                    .iter()
                    .any(|o| p[0] >= o[0] && p[0] <= o[2] && p[1] >= o[1] && p[1] <= o[3]);
                !blocked && segments.iter().any(|(a, b)| seg_dist(p, *a, *b) <= cfg.corridor_half_width)
            })
            .collect();
        Ok(Self { grid, walkable })
    }

    fn is_walkable(&self, p: [f64; 2]) -> bool {
        self.grid
            .to_pixel(p)
            .map(|(r, c)| self.walkable[r * self.grid.width + c])
            .unwrap_or(false)
    }

    fn semantic(&self) -> Result<SemanticGrid> {
        let n = self.grid.pixels();
        let mut scores = vec![0.0; 2 * n];
        for (i, w) in self.walkable.iter().enumerate() {
            scores[if *w { i } else { n + i }] = 1.0;
        }
        SemanticGrid::new(self.grid, 2, scores)
    }
}

/// Simulates `n_agents` agents. Fails if an anchor cannot be reached.
pub fn generate_synthetic(cfg: &SyntheticConfig, n_agents: usize, rng: &mut NoiseStream) -> Result<SyntheticScene> {
    if n_agents < 1 {
        return Err(Error::Invalid("need at least one agent".into()));
    }
    if cfg.anchors.is_empty() {
        return Err(Error::Config("synthetic scene needs at least one anchor".into()));
    }
    if !(cfg.speed_mean > 0.0) || cfg.speed_std < 0.0 || cfg.heading_noise < 0.0 {
        return Err(Error::Config("speed_mean must be positive and noise levels non-negative".into()));
    }
    let layout = Layout::new(cfg)?;
    for a in &cfg.anchors {
        if !layout.is_walkable(*a) {
            return Err(Error::Config(format!("anchor ({}, {}) is not on walkable ground", a[0], a[1])));
        }
    }

    let mut tracks = Vec::with_capacity(n_agents);
    let mut choices = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let choice = rng.int_inclusive(0, cfg.anchors.len() - 1);
        let anchor = cfg.anchors[choice];
        let speed = (cfg.speed_mean + cfg.speed_std * rng.normal()).clamp(0.4 * cfg.speed_mean, 2.0 * cfg.speed_mean);
        let mut pos = [
            cfg.spawn_center[0] + cfg.spawn_half_extent[0] * (2.0 * rng.uniform() - 1.0),
            cfg.spawn_center[1] + cfg.spawn_half_extent[1] * (2.0 * rng.uniform() - 1.0),
        ];
        if !layout.is_walkable(pos) {
            return Err(Error::Config("spawn position is not on walkable ground".into()));
        }
        let waypoints: Vec<[f64; 2]> = cfg.waypoints.iter().copied().chain(std::iter::once(anchor)).collect();
        let mut wp = 0;
        let mut points = vec![pos];
        let mut arrived = false;
        for _ in 0..cfg.max_steps {
            if wp + 1 < waypoints.len() && dist(pos, waypoints[wp]) <= speed {
                wp += 1;
            }
            let target = waypoints[wp];
            if wp + 1 == waypoints.len() && dist(pos, target) <= speed {
                points.push(target);
                arrived = true;
                break;
            }
            let base = (target[1] - pos[1]).atan2(target[0] - pos[0]);
            let noisy = base + cfg.heading_noise * rng.normal();
            let step = |h: f64| [pos[0] + speed * h.cos(), pos[1] + speed * h.sin()];
            let next = [noisy, base, base + 0.3, base - 0.3, base + 0.6, base - 0.6]
                .into_iter()
                .map(step)
                .find(|p| layout.is_walkable(*p))
                .ok_or_else(|| Error::Config(format!("agent {i} is boxed in at ({:.2}, {:.2})", pos[0], pos[1])))?;
            pos = next;
            points.push(pos);
        }
        if !arrived {
            return Err(Error::Config(format!(
                "agent {i} did not reach anchor {choice} within {} steps",
                cfg.max_steps
            )));
        }
        while points.len() < cfg.min_track_len {
            points.push(anchor);
        }
        let start = i as i64 * cfg.frame_step;
        tracks.push(Track {
            agent_id: i as i64 + 1,
            frames: (0..points.len() as i64).map(|t| start + t * cfg.frame_step).collect(),
            points,
        });
        choices.push(choice);
    }
    Ok(SyntheticScene {
        tracks,
        semantic: layout.semantic()?,
        anchors: cfg.anchors.clone(),
        choices,
    })
}
