use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::nn::FeatureMap;

/// A stack of `T` per-pixel maps over one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMapStack {
    pub grid: GridSpec,
    pub maps: FeatureMap,
    /// Each channel sums to one.
    pub normalized: bool,
}

impl HeatMapStack {
    pub fn channels(&self) -> usize {
        self.maps.channels
    }

    pub fn channel(&self, t: usize) -> &[f64] {
        self.maps.plane(t)
    }

    /// Rasterizes one Gaussian per position.
    pub fn from_positions(positions: &[[f64; 2]], grid: &GridSpec, sigma_px: f64) -> Result<Self> {
        let mut data = Vec::with_capacity(positions.len() * grid.pixels());
        for p in positions {
            data.extend(rasterize_gaussian(*p, grid, sigma_px)?);
        }
        Ok(Self {
            grid: *grid,
            maps: FeatureMap::from_vec(positions.len(), grid.height, grid.width, data)?,
            normalized: true,
        })
    }

    /// Rescales every channel so its peak is 1.
    pub fn peak_scaled(&self) -> Self {
        let mut maps = self.maps.clone();
        for c in 0..maps.channels {
            let plane = maps.plane_mut(c);
            let peak = plane.iter().cloned().fold(0.0, f64::max);
            if peak > 0.0 {
                plane.iter_mut().for_each(|v| *v /= peak);
            }
        }
        Self {
            grid: self.grid,
            maps,
            normalized: false,
        }
    }
}

/// Isotropic Gaussian centred on `pos`, evaluated at pixel centres and
/// normalized to sum 1. `sigma_px` is in pixels.
pub fn rasterize_gaussian(pos: [f64; 2], grid: &GridSpec, sigma_px: f64) -> Result<Vec<f64>> {
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(Error::Invalid(format!("sigma_px must be positive, got {sigma_px}")));
    }
    grid.to_pixel(pos)?;
    let [pr, pc] = grid.to_pixel_f(pos);
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    // Subtracting the minimum squared distance keeps the peak at exp(0) even
    // for very small sigma.
    let mut d2 = Vec::with_capacity(grid.pixels());
    for r in 0..grid.height {
        for c in 0..grid.width {
            let (dr, dc) = (r as f64 - pr, c as f64 - pc);
            d2.push(dr * dr + dc * dc);
        }
    }
    let min = d2.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut map: Vec<f64> = d2.iter().map(|d| (-(d - min) * inv).exp()).collect();
    let total: f64 = map.iter().sum();
    map.iter_mut().for_each(|v| *v /= total);
    Ok(map)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(24, 24, [0.25, 0.25], 0.5).unwrap()
    }

    #[test]
    fn tiny_sigma_is_a_delta() {
        let g = grid();
        let pos = g.pixel_center(5, 9);
        let map = rasterize_gaussian(pos, &g, 0.05).unwrap();
        assert!((map.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&map), 5 * 24 + 9);
        assert!(map[5 * 24 + 9] > 0.999_999);
    }

    #[test]
    fn invalid_inputs() {
        let g = grid();
        assert!(rasterize_gaussian([-5.0, 1.0], &g, 2.0).is_err());
        assert!(rasterize_gaussian([1.0, 1.0], &g, 0.0).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.2]), 1);
    }

    proptest! {
        #[test]
        fn normalized_and_peaked_at_position(x in 0.0f64..11.99, y in 0.0f64..11.99, sigma in 0.3f64..8.0) {
            let g = grid();
            let map = rasterize_gaussian([x, y], &g, sigma).unwrap();
            prop_assert!((map.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(map.iter().all(|v| v.is_finite() && *v >= 0.0));
            let (r, c) = g.to_pixel([x, y]).unwrap();
            let best = argmax(&map);
            // The peak pixel contains the position, up to exact ties on a cell boundary.
            prop_assert!((map[best] - map[r * 24 + c]).abs() <= 1e-12 * map[best]);
        }
    }
}
