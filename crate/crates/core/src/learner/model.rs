use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::{BoxLabel, Label};
use crate::sampler::rng_from_seed;
use crate::scalar::{logsumexp, Real, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// `½‖outputs − onehot‖²`; with no hidden layers this is linear least squares.
    SquaredError,
}

/// Layer sizes and loss of the downstream model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Adds a box-center regression output pair.
    #[serde(default)]
    pub box_head: bool,
    #[serde(default = "default_box_weight")]
    pub box_weight: f64,
    /// `½·weight_decay·‖θ‖²` added to the training objective only.
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

fn default_box_weight() -> f64 {
    1.0
}

impl Architecture {
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            classes,
            activation: Activation::Tanh,
            loss: LossKind::CrossEntropy,
            box_head: false,
            box_weight: 1.0,
            weight_decay: 0.0,
        }
    }

    pub fn outputs(&self) -> usize {
        self.classes + if self.box_head { 2 } else { 0 }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.outputs());
        w
    }

    /// Parameter ranges `(weights, bias)` per layer; weights are row-major `out × in`.
    pub fn layers(&self) -> Vec<(Range<usize>, Range<usize>)> {
        let w = self.widths();
        let mut at = 0;
        w.windows(2)
            .map(|io| {
                let (i, o) = (io[0], io[1]);
                let wr = at..at + i * o;
                let br = wr.end..wr.end + o;
                at = br.end;
                (wr, br)
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().last().map_or(0, |l| l.1.end)
    }

    /// Slice of θ belonging to the output layer.
    pub fn head_range(&self) -> Range<usize> {
        let (w, b) = self.layers().pop().expect("at least one layer");
        w.start..b.end
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.classes < 2 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad architecture {self:?}")));
        }
        if self.weight_decay < 0.0 || self.box_weight < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Flat parameter vector `θ` with its architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    pub theta: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(arch: Architecture, theta: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.num_params() {
            return Err(Error::LengthMismatch {
                what: "theta",
                expected: arch.num_params(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let m = arch.num_params();
        Self::new(arch, vec![T::zero(); m])
    }

    /// Weights uniform in `±1/√fan_in`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut theta = vec![T::zero(); arch.num_params()];
        let widths = arch.widths();
        for (l, (wr, _)) in arch.layers().into_iter().enumerate() {
            let bound = 1.0 / (widths[l] as f64).sqrt();
            for t in &mut theta[wr] {
                *t = T::c(rng.gen_range(-bound..bound));
            }
        }
        Self::new(arch, theta)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Model outputs for plain pixels.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        check_input(&self.arch, x.len())?;
        Ok(forward(&self.arch, &self.theta, x))
    }

    pub fn predict_class(&self, x: &[T]) -> Result<usize> {
        let out = self.predict(x)?;
        Ok(argmax(&out[..self.arch.classes]))
    }
}

pub(crate) fn check_input(arch: &Architecture, d: usize) -> Result<()> {
    if d != arch.input {
        return Err(Error::LengthMismatch {
            what: "model input",
            expected: arch.input,
            got: d,
        });
    }
    Ok(())
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Network outputs. `theta` and `x` may both live on a tape.
pub fn forward<T: Scalar, R: Real<T>>(arch: &Architecture, theta: &[R], x: &[R]) -> Vec<R> {
    let layers = arch.layers();
    let last = layers.len() - 1;
    let mut h: Vec<R> = x.to_vec();
    for (l, (wr, br)) in layers.into_iter().enumerate() {
        let fan_in = h.len();
        let w = &theta[wr];
        let b = &theta[br];
        h = b
            .iter()
            .enumerate()
            .map(|(o, &bo)| {
                let pre = R::dot(&w[o * fan_in..(o + 1) * fan_in], &h) + bo;
                match (l == last, arch.activation) {
                    (true, _) => pre,
                    (false, Activation::Tanh) => pre.tanh(),
                    (false, Activation::Relu) => pre.relu(),
                }
            })
            .collect();
    }
    h
}

/// Normalized box-center target in `[-1, 1]²`, if the object is in frame.
pub fn box_target(label: &Label, width: usize, height: usize) -> Option<[f64; 2]> {
    match label.bbox {
        BoxLabel::Box(b) => {
            let (cx, cy) = b.center();
            Some([cx / width as f64 * 2.0 - 1.0, cy / height as f64 * 2.0 - 1.0])
        }
        BoxLabel::Empty => None,
    }
}

/// Per-example loss `l(x, θ)` from network outputs.
pub fn loss_from_outputs<T: Scalar, R: Real<T>>(
    arch: &Architecture,
    out: &[R],
    class: usize,
    box_center: Option<[f64; 2]>,
) -> R {
    let logits = &out[..arch.classes];
    let mut l = match arch.loss {
        LossKind::CrossEntropy => logsumexp(logits) - logits[class],
        LossKind::SquaredError => {
            let sq: Vec<R> = logits
                .iter()
                .enumerate()
                .map(|(c, &o)| {
                    let r = if c == class { o - T::one() } else { o };
                    r * r
                })
                .collect();
            R::sum(&sq) * T::c(0.5)
        }
    };
    if let (true, Some(t)) = (arch.box_head, box_center) {
        let (dx, dy) = (out[arch.classes] - T::c(t[0]), out[arch.classes + 1] - T::c(t[1]));
        l = l + (dx * dx + dy * dy) * T::c(0.5 * arch.box_weight);
    }
    l
}

/// `l(x, θ)` for one labelled image.
pub fn example_loss<T: Scalar, R: Real<T>>(
    arch: &Architecture,
    theta: &[R],
    x: &[R],
    class: usize,
    box_center: Option<[f64; 2]>,
) -> R {
    let out = forward(arch, theta, x);
    loss_from_outputs(arch, &out, class, box_center)
}
