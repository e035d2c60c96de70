//! Stand-in prompt encoder: hashed tokens index a fixed random table and the
//! rows are mean-pooled. The empty prompt maps to the zero vector, which is
//! the unconditional embedding used for guidance.

use crate::rng::{fnv1a, named};
use crate::tensor::Tensor;

pub const VOCAB: usize = 4096;

#[derive(Clone, Debug)]
pub struct TextEncoder {
    dim: usize,
    table: Vec<f64>,
}

impl TextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = named(seed, "text-table");
        let table = Tensor::randn([VOCAB, dim], 1.0, &mut rng).to_vec();
        Self { dim, table }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(prompt: &str) -> Vec<usize> {
        prompt
            .split_whitespace()
            .map(|w| (fnv1a(w.to_lowercase().as_bytes()) % VOCAB as u64) as usize)
            .collect()
    }

    pub fn encode(&self, prompt: &str) -> Vec<f64> {
        let toks = Self::tokens(prompt);
        let mut out = vec![0.0; self.dim];
        for &t in &toks {
            out.iter_mut().zip(&self.table[t * self.dim..(t + 1) * self.dim]).for_each(|(o, v)| *o += v);
        }
        if !toks.is_empty() {
            out.iter_mut().for_each(|o| *o /= toks.len() as f64);
        }
        out
    }

    /// `[prompts.len(), dim]`
    pub fn encode_batch(&self, prompts: &[&str]) -> Tensor {
        let v: Vec<f64> = prompts.iter().flat_map(|p| self.encode(p)).collect();
        Tensor::new([prompts.len(), self.dim], v).expect("text batch shape")
    }

    pub fn uncond(&self, batch: usize) -> Tensor {
        Tensor::zeros([batch, self.dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_and_case_insensitive() {
        let enc = TextEncoder::new(8, 1);
        assert_eq!(enc.encode("A Cat"), enc.encode("a cat"));
        assert_ne!(enc.encode("a cat"), enc.encode("a dog"));
        assert_eq!(enc.encode(""), vec![0.0; 8]);
        let one = enc.encode("cat");
        let two = enc.encode("cat cat");
        assert_eq!(one, two);
        assert_eq!(enc.encode_batch(&["x", ""]).shape(), &[2, 8]);
    }
}
