use crate::error::{Error, Result};
use crate::qtensor::QTensor;

/// Evaluation samples, each shaped like one model input, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<QTensor>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(samples: Vec<QTensor>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::Config(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.len()
                )));
            }
        }
        Ok(Self { samples, labels })
    }

    pub fn unlabeled(samples: Vec<QTensor>) -> Self {
        Self { samples, labels: None }
    }

    pub fn samples(&self) -> &[QTensor] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples `range`, keeping labels aligned.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            samples: self.samples[range.clone()].to_vec(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        }
    }
}
