use super::tape::{NodeId, Tape};
use super::var::Var;
use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Hessian of a scalar function, applied to vectors without forming it.
///
/// The gradient graph is recorded once at construction; every
/// [`HessianOperator::apply`] is then a single reverse sweep over it.
pub struct HessianOperator<T: Scalar> {
    tape: Tape<T>,
    inputs: Vec<NodeId>,
    grads: Vec<NodeId>,
    loss: T,
    gradient: Vec<T>,
}

impl<T: Scalar> HessianOperator<T> {
    pub fn new<F>(at: &[T], loss_builder: F) -> Result<Self>
    where
        F: for<'t> FnOnce(&[Var<'t, T>]) -> Var<'t, T>,
    {
        let tape = Tape::new();
        let (inputs, grads, loss, gradient) = {
            let theta = tape.vars(at);
            let l = loss_builder(&theta);
            let g = tape.grad_graph(l, &theta)?;
            (
                theta.iter().map(Var::id).collect::<Vec<_>>(),
                g.iter().map(Var::id).collect::<Vec<_>>(),
                l.value(),
                g.iter().map(Real::value).collect::<Vec<_>>(),
            )
        };
        Ok(Self {
            tape,
            inputs,
            grads,
            loss,
            gradient,
        })
    }

    pub fn dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn loss(&self) -> T {
        self.loss
    }

    /// Gradient of the loss at the construction point.
    pub fn gradient(&self) -> &[T] {
        &self.gradient
    }

    /// Size of the recorded graph, in scalar slots.
    pub fn footprint(&self) -> usize {
        self.tape.footprint()
    }

    /// `H · v`
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.inputs.len() {
            return Err(Error::LengthMismatch {
                what: "hvp direction",
                expected: self.inputs.len(),
                got: v.len(),
            });
        }
        self.tape.vjp_ids(&self.grads, v, &self.inputs)
    }
}

/// One-shot Hessian-vector product `∇²L(at) · v`, computed reverse-over-reverse.
pub fn hvp<T, F>(loss_builder: F, at: &[T], v: &[T]) -> Result<Vec<T>>
where
    T: Scalar,
    F: for<'t> FnOnce(&[Var<'t, T>]) -> Var<'t, T>,
{
    if v.len() != at.len() {
        return Err(Error::LengthMismatch {
            what: "hvp direction",
            expected: at.len(),
            got: v.len(),
        });
    }
    HessianOperator::new(at, loss_builder)?.apply(v)
}
