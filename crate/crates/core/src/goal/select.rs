use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::heatmap::argmax;
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Diverse goals `g_1..g_N` and the common goal, world meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSet {
    pub diverse: Vec<[f64; 2]>,
    pub common: [f64; 2],
}

/// Test-time sampling trick: oversample candidate goals then cluster them
/// down to `N` representatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtstConfig {
    pub samples: usize,
    pub cluster: bool,
    pub iterations: usize,
}

impl Default for TtstConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            cluster: true,
            iterations: 20,
        }
    }
}

/// Cumulative distribution over map pixels for inverse-CDF sampling.
struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    fn new(weights: &[f64]) -> Result<Self> {
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Invalid(format!("goal map holds invalid mass {w}")));
            }
            acc += w;
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Invalid("goal map has zero total mass".into()));
        }
        Ok(Self { cdf })
    }

    fn sample(&self, rng: &mut NoiseStream) -> usize {
        let total = *self.cdf.last().unwrap();
        let u = rng.uniform() * total;
        let i = self.cdf.partition_point(|c| *c <= u);
        // Skip zero-mass pixels that share a cdf value with their successor.
        i.min(self.cdf.len() - 1)
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, *c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lloyd's k-means with seeded farthest-point initialization and a fixed
/// iteration count. Empty clusters keep their previous center.
pub fn kmeans(points: &[[f64; 2]], k: usize, iterations: usize, rng: &mut NoiseStream) -> Result<Vec<[f64; 2]>> {
    if k < 1 || points.len() < k {
        return Err(Error::Invalid(format!("k-means needs 1 <= k <= {} points, got k = {k}", points.len())));
    }
    let mut centers = vec![points[rng.int_inclusive(0, points.len() - 1)]];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(*p, centers[0])).collect();
    while centers.len() < k {
        let far = argmax(&min_d);
        let c = points[far];
        centers.push(c);
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(dist2(*p, c));
        }
    }
    for _ in 0..iterations {
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let j = nearest(*p, &centers);
            sums[j][0] += p[0];
            sums[j][1] += p[1];
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
    }
    Ok(centers)
}

/// Picks the common goal (argmax pixel) and `n` diverse goals sampled from
/// `goal_map`, optionally refined by TTST.
pub fn select_goals(
    goal_map: &[f64],
    grid: &GridSpec,
    n: usize,
    ttst: Option<&TtstConfig>,
    rng: &mut NoiseStream,
) -> Result<GoalSet> {
    if goal_map.len() != grid.pixels() {
        return Err(Error::shape("goal map", grid.pixels(), goal_map.len()));
    }
    if n < 1 {
        return Err(Error::Invalid("need at least one goal".into()));
    }
    let dist = Categorical::new(goal_map)?;
    let common = grid.index_center(argmax(goal_map));
    let diverse = match ttst {
        None => (0..n).map(|_| grid.index_center(dist.sample(rng))).collect(),
        Some(t) => {
            if t.samples < n {
                return Err(Error::Invalid(format!("TTST needs at least N = {n} samples, got {}", t.samples)));
            }
            let pts: Vec<[f64; 2]> = (0..t.samples).map(|_| grid.index_center(dist.sample(rng))).collect();
            if t.cluster {
                kmeans(&pts, n, t.iterations, rng)?
            } else {
                pts[..n].to_vec()
            }
        }
    };
    Ok(GoalSet { diverse, common })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(6, 5, [0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn point_mass_map() {
        let g = grid();
        let mut map = vec![0.0; 30];
        map[13] = 1.0;
        let center = g.index_center(13);
        for ttst in [None, Some(TtstConfig::default())] {
            let set = select_goals(&map, &g, 4, ttst.as_ref(), &mut NoiseStream::new(3)).unwrap();
            assert_eq!(set.common, center);
            assert!(set.diverse.iter().all(|d| *d == center));
        }
    }

    #[test]
    fn degenerate_maps_rejected() {
        let g = grid();
        assert!(select_goals(&[0.0; 30], &g, 2, None, &mut NoiseStream::new(0)).is_err());
        assert!(select_goals(&[0.1; 29], &g, 2, None, &mut NoiseStream::new(0)).is_err());
        let ttst = TtstConfig { samples: 1, ..TtstConfig::default() };
        assert!(select_goals(&[0.1; 30], &g, 2, Some(&ttst), &mut NoiseStream::new(0)).is_err());
    }

    #[test]
    fn common_goal_is_scale_invariant() {
        let g = grid();
        let mut rng = NoiseStream::new(8);
        let map: Vec<f64> = (0..30).map(|_| rng.uniform()).collect();
        let scaled: Vec<f64> = map.iter().map(|v| v * 37.5).collect();
        let a = select_goals(&map, &g, 1, None, &mut NoiseStream::new(1)).unwrap();
        let b = select_goals(&scaled, &g, 1, None, &mut NoiseStream::new(1)).unwrap();
        assert_eq!(a.common, b.common);
    }

    #[test]
    fn unclustered_ttst_equals_plain_sampling() {
        let g = grid();
        let map: Vec<f64> = (0..30).map(|i| (i % 7) as f64 + 0.5).collect();
        let plain = select_goals(&map, &g, 5, None, &mut NoiseStream::new(2)).unwrap();
        let ttst = TtstConfig { samples: 5, cluster: false, iterations: 20 };
        let t = select_goals(&map, &g, 5, Some(&ttst), &mut NoiseStream::new(2)).unwrap();
        assert_eq!(plain, t);
    }

    #[test]
    fn two_pixel_frequencies() {
        let g = grid();
        let mut map = vec![0.0; 30];
        map[4] = 0.9;
        map[21] = 0.1;
        let mut rng = NoiseStream::new(12);
        let first = g.index_center(4);
        let mut hits = 0usize;
        let trials = 10_000;
        for _ in 0..trials {
            let set = select_goals(&map, &g, 2, None, &mut rng).unwrap();
            hits += set.diverse.iter().filter(|d| **d == first).count();
        }
        // Binomial(20000, 0.9): sd = sqrt(20000 * 0.09) = 42.4; allow 4 sd.
        let expected = 0.9 * 2.0 * trials as f64;
        assert!((hits as f64 - expected).abs() < 4.0 * 42.5, "{hits}");
    }

    #[test]
    fn kmeans_recovers_separated_clusters() {
        let mut rng = NoiseStream::new(5);
        let truth = [[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]];
        let pts: Vec<[f64; 2]> = (0..300)
            .map(|i| {
                let c = truth[i % 3];
                [c[0] + 0.3 * rng.normal(), c[1] + 0.3 * rng.normal()]
            })
            .collect();
        let centers = kmeans(&pts, 3, 20, &mut NoiseStream::new(1)).unwrap();
        for t in truth {
            assert!(centers.iter().any(|c| dist2(*c, t) < 0.1), "{centers:?}");
        }
    }
}
