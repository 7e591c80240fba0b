use crate::error::{invalid, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Visibility matrix over the canonical order `[regions | tags | caption]`.
///
/// Region and tag rows see the whole region ∪ tag block. Caption row `k`
/// additionally sees caption positions `0..=k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMaskSpec {
    pub regions: usize,
    pub tags: usize,
    pub caption: usize,
    visible: Vec<bool>,
}

pub fn build_mask(regions: usize, tags: usize, caption: usize) -> Result<AttentionMaskSpec> {
    let side = regions + tags + caption;
    if side == 0 {
        return Err(invalid("attention mask over an empty input"));
    }
    let ctx = regions + tags;
    let mut visible = vec![false; side * side];
    for i in 0..side {
        for j in 0..side {
            visible[i * side + j] = j < ctx || (i >= ctx && j <= i);
        }
    }
    Ok(AttentionMaskSpec {
        regions,
        tags,
        caption,
        visible,
    })
}

impl AttentionMaskSpec {
    pub fn side(&self) -> usize {
        self.regions + self.tags + self.caption
    }

    pub fn is_visible(&self, query: usize, key: usize) -> bool {
        self.visible[query * self.side() + key]
    }

    pub fn row(&self, query: usize) -> &[bool] {
        let s = self.side();
        &self.visible[query * s..(query + 1) * s]
    }

    /// Zero where visible, the precision's mask fill elsewhere.
    pub fn additive<T: Scalar>(&self) -> Tensor<T> {
        let s = self.side();
        let data = self
            .visible
            .iter()
            .map(|&v| if v { T::zero() } else { T::mask_fill() })
            .collect();
        Tensor::matrix(s, s, data).expect("square mask")
    }
}

/// Lower-triangular (inclusive) mask of side `n`, for decoder self-attention.
pub fn causal_additive<T: Scalar>(n: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = T::mask_fill();
        }
    }
    Tensor::matrix(n, n, data).expect("square mask")
}
