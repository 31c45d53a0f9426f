//! Flat parameter storage with a fixed tensor layout.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Sizes of every part of the scorer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerDims {
    pub vocab: usize,
    pub d_emb: usize,
    /// Tokens on each side seen by the context mixer.
    pub window: usize,
    pub hidden: usize,
    /// Span and arc projection size.
    pub k: usize,
    /// Label projection size.
    pub k_label: usize,
    /// Span score channels.
    pub span_channels: usize,
    /// Classes scored by the labeler (0 disables it).
    pub label_classes: usize,
}

impl ScorerDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("d_emb", self.d_emb),
            ("hidden", self.hidden),
            ("k", self.k),
            ("k_label", self.k_label),
            ("span_channels", self.span_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab < 4 {
            return Err(Error::Config(
                "vocabulary must hold the 4 special tokens".into(),
            ));
        }
        Ok(())
    }

    pub fn fence_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn shape(&self, t: Tensor) -> Vec<usize> {
        use Tensor::*;
        let (h, f, k, kl) = (self.hidden, self.fence_dim(), self.k, self.k_label);
        match t {
            Emb => vec![self.vocab, self.d_emb],
            MixW => vec![h, (2 * self.window + 1) * self.d_emb],
            MixB | FwdB | BwdB => vec![h],
            FwdW | BwdW => vec![h, h],
            CInW | COutW | DInW | DOutW => vec![k, f],
            CInB | COutB | DInB | DOutB => vec![k],
            LInW | LOutW | LHeadW => vec![kl, f],
            LInB | LOutB | LHeadB => vec![kl],
            SpanW => vec![self.span_channels, k + 1, k + 1],
            ArcW => vec![k + 1, k + 1],
            RootV => vec![k + 1],
            LabelT => vec![self.label_classes, kl + 1, kl + 1, kl + 1],
        }
    }
}

/// Every parameter tensor, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tensor {
    Emb,
    MixW,
    MixB,
    FwdW,
    FwdB,
    BwdW,
    BwdB,
    CInW,
    CInB,
    COutW,
    COutB,
    DInW,
    DInB,
    DOutW,
    DOutB,
    LInW,
    LInB,
    LOutW,
    LOutB,
    LHeadW,
    LHeadB,
    SpanW,
    ArcW,
    RootV,
    LabelT,
}

impl Tensor {
    pub const ALL: [Tensor; 25] = [
        Tensor::Emb,
        Tensor::MixW,
        Tensor::MixB,
        Tensor::FwdW,
        Tensor::FwdB,
        Tensor::BwdW,
        Tensor::BwdB,
        Tensor::CInW,
        Tensor::CInB,
        Tensor::COutW,
        Tensor::COutB,
        Tensor::DInW,
        Tensor::DInB,
        Tensor::DOutW,
        Tensor::DOutB,
        Tensor::LInW,
        Tensor::LInB,
        Tensor::LOutW,
        Tensor::LOutB,
        Tensor::LHeadW,
        Tensor::LHeadB,
        Tensor::SpanW,
        Tensor::ArcW,
        Tensor::RootV,
        Tensor::LabelT,
    ];

    pub fn name(self) -> &'static str {
        use Tensor::*;
        match self {
            Emb => "emb",
            MixW => "mix.w",
            MixB => "mix.b",
            FwdW => "fwd.w",
            FwdB => "fwd.b",
            BwdW => "bwd.w",
            BwdB => "bwd.b",
            CInW => "c_in.w",
            CInB => "c_in.b",
            COutW => "c_out.w",
            COutB => "c_out.b",
            DInW => "d_in.w",
            DInB => "d_in.b",
            DOutW => "d_out.w",
            DOutB => "d_out.b",
            LInW => "l_in.w",
            LInB => "l_in.b",
            LOutW => "l_out.w",
            LOutB => "l_out.b",
            LHeadW => "l_head.w",
            LHeadB => "l_head.b",
            SpanW => "span.w",
            ArcW => "arc.w",
            RootV => "root.v",
            LabelT => "label.t",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// All parameters (or gradients) in one contiguous buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    dims: ScorerDims,
    data: Vec<f64>,
    offsets: Vec<usize>,
}

impl Params {
    pub fn zeros(dims: &ScorerDims) -> Self {
        let mut offsets = Vec::with_capacity(Tensor::ALL.len() + 1);
        let mut at = 0;
        for t in Tensor::ALL {
            offsets.push(at);
            at += dims.shape(t).iter().product::<usize>();
        }
        offsets.push(at);
        Params {
            dims: dims.clone(),
            data: vec![0.0; at],
            offsets,
        }
    }

    /// Glorot-uniform matrices, zero biases, small uniform embeddings.
    pub fn init<R: Rng>(dims: &ScorerDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        for t in Tensor::ALL {
            let shape = dims.shape(t);
            let limit = match t {
                Tensor::Emb => 0.5,
                Tensor::MixB | Tensor::FwdB | Tensor::BwdB => 0.0,
                Tensor::CInB | Tensor::COutB | Tensor::DInB | Tensor::DOutB => 0.0,
                Tensor::LInB | Tensor::LOutB | Tensor::LHeadB => 0.0,
                Tensor::RootV => (3.0 / shape[0] as f64).sqrt(),
                Tensor::SpanW | Tensor::ArcW => (3.0 / shape[shape.len() - 1] as f64).sqrt() / 2.0,
                Tensor::LabelT => 0.05,
                _ => (6.0 / (shape[0] + shape[1]) as f64).sqrt(),
            };
            if limit > 0.0 {
                for v in p.get_mut(t) {
                    *v = rng.gen_range(-limit..limit);
                }
            }
        }
        p
    }

    pub fn from_data(dims: &ScorerDims, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(dims);
        if data.len() != p.data.len() {
            return Err(Error::Shape(format!(
                "parameter payload has {} values, layout needs {}",
                data.len(),
                p.data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn dims(&self) -> &ScorerDims {
        &self.dims
    }

    #[inline]
    pub fn get(&self, t: Tensor) -> &[f64] {
        let i = t.index();
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn get_mut(&mut self, t: Tensor) -> &mut [f64] {
        let i = t.index();
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Tensor::ALL
            .into_iter()
            .find(|&t| self.get(t).iter().any(|v| !v.is_finite()))
            .map(Tensor::name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dims() -> ScorerDims {
        ScorerDims {
            vocab: 10,
            d_emb: 3,
            window: 1,
            hidden: 4,
            k: 5,
            k_label: 2,
            span_channels: 2,
            label_classes: 3,
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let d = dims();
        let p = Params::zeros(&d);
        let total: usize = Tensor::ALL
            .iter()
            .map(|&t| d.shape(t).iter().product::<usize>())
            .sum();
        assert_eq!(p.len(), total);
        assert_eq!(p.get(Tensor::LabelT).len(), 3 * 27);
        assert_eq!(p.get(Tensor::MixW).len(), 4 * 9);
    }

    #[test]
    fn init_is_seeded() {
        let a = Params::init(&dims(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let b = Params::init(&dims(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.get(Tensor::MixB).iter().all(|v| *v == 0.0));
        assert!(a.first_non_finite().is_none());
    }
}
