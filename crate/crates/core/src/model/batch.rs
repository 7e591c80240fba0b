use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Inputs for one image: region features, tag tokens and caption tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalBatch<T> {
    /// `N × region_dim` feature rows (visual features followed by box values).
    pub regions: Tensor<T>,
    pub tags: Vec<u32>,
    pub caption: Vec<u32>,
}

impl<T: Scalar> MultimodalBatch<T> {
    pub fn new(regions: Tensor<T>, tags: Vec<u32>, caption: Vec<u32>) -> Result<Self> {
        regions.require_matrix("regions")?;
        Ok(Self {
            regions,
            tags,
            caption,
        })
    }

    /// Builds a batch truncated to the configured region/tag/caption limits.
    pub fn truncated(
        regions: Tensor<T>,
        mut tags: Vec<u32>,
        mut caption: Vec<u32>,
        config: &ModelConfig,
    ) -> Result<Self> {
        let (n, f) = regions.require_matrix("regions")?;
        let regions = if n > config.max_regions {
            Tensor::matrix(
                config.max_regions,
                f,
                regions.data()[..config.max_regions * f].to_vec(),
            )?
        } else {
            regions
        };
        tags.truncate(config.max_tags);
        caption.truncate(config.max_caption);
        Self::new(regions, tags, caption)
    }

    pub fn num_regions(&self) -> usize {
        self.regions.rows()
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn caption_len(&self) -> usize {
        self.caption.len()
    }

    /// Row of caption position `k` in the concatenated sequence.
    pub fn caption_row(&self, k: usize) -> usize {
        self.num_regions() + self.num_tags() + k
    }

    pub fn with_caption(&self, caption: Vec<u32>) -> Self {
        Self {
            regions: self.regions.clone(),
            tags: self.tags.clone(),
            caption,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let (_, f) = self.regions.require_matrix("regions")?;
        if f != config.region_dim {
            return Err(Error::Shape {
                op: "region_features",
                lhs: self.regions.shape().to_vec(),
                rhs: vec![self.num_regions(), config.region_dim],
            });
        }
        for &id in self.tags.iter().chain(&self.caption) {
            if id as usize >= config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: config.vocab_size,
                });
            }
        }
        let text = self.tags.len().max(self.caption.len());
        if text > config.max_positions {
            return Err(Error::Invalid(format!(
                "{text} text tokens exceed {} positions",
                config.max_positions
            )));
        }
        if self.num_regions() + self.tags.len() + self.caption.len() == 0 {
            return Err(Error::Invalid("empty input".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> MultimodalBatch<U> {
        MultimodalBatch {
            regions: self.regions.cast(),
            tags: self.tags.clone(),
            caption: self.caption.clone(),
        }
    }
}
