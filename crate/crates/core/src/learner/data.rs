use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::RenderedExample;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    examples: Vec<RenderedExample<T>>,
    role: Role,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(examples: Vec<RenderedExample<T>>, role: Role) -> Result<Self> {
        let first = examples.first().ok_or(Error::EmptyDataset)?;
        let (w, h) = (first.width, first.height);
        for (i, e) in examples.iter().enumerate() {
            if e.width != w || e.height != h || e.pixels.len() != w * h {
                return Err(Error::InvalidArgument(format!(
                    "example {i} is {}x{} with {} pixels, expected {w}x{h}",
                    e.width,
                    e.height,
                    e.pixels.len()
                )));
            }
        }
        Ok(Self { examples, role })
    }

    pub fn examples(&self) -> &[RenderedExample<T>] {
        &self.examples
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_pixels(&self) -> usize {
        self.examples[0].pixels.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.examples[0].width, self.examples[0].height)
    }
}
