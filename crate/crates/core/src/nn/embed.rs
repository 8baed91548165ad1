/// Sinusoidal embedding of the diffusion index.
///
/// Pairs `(sin(k w_i), cos(k w_i))` with `w_i = 10000^(-i / (dim / 2))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepEmbedding {
    dim: usize,
}

impl StepEmbedding {
    /// `dim` must be even and positive.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2 && dim % 2 == 0, "step embedding width must be even, got {dim}");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, k: usize) -> Vec<f64> {
        let half = self.dim / 2;
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..half {
            let w = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let a = k as f64 * w;
            out.push(a.sin());
            out.push(a.cos());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_steps_distinct_vectors() {
        let e = StepEmbedding::new(16);
        let table: Vec<_> = (1..=100).map(|k| e.embed(k)).collect();
        for i in 0..table.len() {
            assert_eq!(table[i].len(), 16);
            for j in i + 1..table.len() {
                let d: f64 = table[i].iter().zip(&table[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-6, "steps {} and {} collide", i + 1, j + 1);
            }
        }
        assert_eq!(e.embed(7), e.embed(7));
    }
}
