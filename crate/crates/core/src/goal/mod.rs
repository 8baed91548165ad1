//! Heat-map goal estimation.

mod grid;
mod heatmap;
mod select;
mod unet;

pub use grid::{GridSpec, SemanticGrid};
pub use heatmap::{argmax, rasterize_gaussian, HeatMapStack};
pub use select::{kmeans, select_goals, GoalSet, TtstConfig};
pub use unet::{GoalNet, GoalNetConfig, GoalNetTape};
