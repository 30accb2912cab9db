use serde::{Deserialize, Serialize};

/// Inclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    /// Center in pixel units, measured from the image corner.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1 + 1) as f64 * 0.5,
            (self.y0 + self.y1 + 1) as f64 * 0.5,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxLabel {
    Box(BBox),
    /// The object is entirely out of frame.
    Empty,
}

/// Class id plus the tight box around the silhouette.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub class: usize,
    pub bbox: BoxLabel,
}

impl Label {
    pub fn class_only(class: usize) -> Self {
        Self {
            class,
            bbox: BoxLabel::Empty,
        }
    }
}
