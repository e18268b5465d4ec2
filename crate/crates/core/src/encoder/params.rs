use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::Matrix;
use super::EncoderConfig;

/// Query/key/value projections of one attention head, each `(d/H) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
}

/// Every trainable array of the model.
///
/// Arrays are visited in a fixed order (embedding table, overlap vector,
/// per layer per head `W_q`, `W_k`, `W_v`, classifier weight, bias); the
/// same order is used for initialization, updates and the parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct TieParams {
    pub dim: usize,
    pub heads: usize,
    pub buckets: usize,
    /// Hashed token embedding table, `buckets × dim`.
    pub embeddings: Matrix,
    /// Added to the embedding of page tokens that also occur in the question.
    pub overlap: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub classifier: Vec<f64>,
    pub bias: f64,
}

impl TieParams {
    pub fn zeros(dim: usize, heads: usize, layers: usize, buckets: usize) -> Self {
        let head_dim = dim / heads;
        let head = HeadParams {
            wq: Matrix::zeros(head_dim, dim),
            wk: Matrix::zeros(head_dim, dim),
            wv: Matrix::zeros(head_dim, dim),
        };
        TieParams {
            dim,
            heads,
            buckets,
            embeddings: Matrix::zeros(buckets, dim),
            overlap: vec![0.0; dim],
            layers: vec![
                LayerParams {
                    heads: vec![head; heads],
                };
                layers
            ],
            classifier: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn zeros_like(other: &TieParams) -> Self {
        Self::zeros(other.dim, other.heads, other.layers.len(), other.buckets)
    }

    /// Seeded uniform(−scale, scale) initialization.
    pub fn init_uniform(config: &EncoderConfig, scale: f64) -> Self {
        let mut params = Self::zeros(config.dim, config.heads, config.layers, config.buckets);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dist = Uniform::new_inclusive(-scale, scale);
        for array in params.arrays_mut() {
            for v in array.iter_mut() {
                *v = dist.sample(&mut rng);
            }
        }
        params
    }

    pub fn init(config: &EncoderConfig) -> Self {
        Self::init_uniform(config, super::INIT_SCALE)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embeddings.data, &self.overlap];
        for layer in &self.layers {
            for h in &layer.heads {
                out.push(&h.wq.data);
                out.push(&h.wk.data);
                out.push(&h.wv.data);
            }
        }
        out.push(&self.classifier);
        out.push(std::slice::from_ref(&self.bias));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embeddings.data, &mut self.overlap];
        for layer in &mut self.layers {
            for h in &mut layer.heads {
                out.push(&mut h.wq.data);
                out.push(&mut h.wk.data);
                out.push(&mut h.wv.data);
            }
        }
        out.push(&mut self.classifier);
        out.push(std::slice::from_mut(&mut self.bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`, array by array.
    pub fn add_scaled(&mut self, scale: f64, other: &TieParams) {
        for (dst, src) in self.arrays_mut().into_iter().zip(other.arrays()) {
            super::linalg::axpy(dst, scale, src);
        }
    }

    pub fn same_shape(&self, other: &TieParams) -> bool {
        self.arrays()
            .iter()
            .map(|a| a.len())
            .eq(other.arrays().iter().map(|a| a.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_count() {
        let p = TieParams::zeros(24, 12, 2, 10);
        assert_eq!(p.head_dim(), 2);
        assert_eq!(p.layers[1].heads[11].wv.rows, 2);
        assert_eq!(p.layers[1].heads[11].wv.cols, 24);
        // table + overlap + 2·12·3·(2·24) + classifier + bias
        assert_eq!(p.parameter_count(), 240 + 24 + 2 * 12 * 3 * 48 + 24 + 1);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = EncoderConfig {
            dim: 24,
            heads: 12,
            layers: 1,
            buckets: 16,
            ..EncoderConfig::default()
        };
        let a = TieParams::init(&cfg);
        let b = TieParams::init(&cfg);
        assert_eq!(a, b);
        assert!(a.arrays().iter().all(|x| x.iter().all(|v| v.abs() <= 0.05)));
        let c = TieParams::init(&EncoderConfig { seed: 99, ..cfg });
        assert_ne!(a, c);
    }
}
