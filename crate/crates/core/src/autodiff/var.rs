use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};


use super::tape::{NodeId, Op, Tape};
use crate::scalar::{dot_values, kernel, sum_values, Real, Scalar};

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    idx: NodeId,
    value: T,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub(crate) fn from_parts(tape: &'t Tape<T>, idx: NodeId, value: T) -> Self {
        Self { tape, idx, value }
    }

    pub fn id(&self) -> NodeId {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    #[inline]
    fn unary(self, op: Op<T>, value: T) -> Self {
        let idx = self.tape.push(op, &[self.idx], value);
        Self::from_parts(self.tape, idx, value)
    }

    #[inline]
    fn binary(self, other: Self, op: Op<T>, value: T) -> Self {
        debug_assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
        let idx = self.tape.push(op, &[self.idx, other.idx], value);
        Self::from_parts(self.tape, idx, value)
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $op:ident, $cop:ident, $sym:tt) => {
        impl<'t, T: Scalar> $trait for Var<'t, T> {
            type Output = Var<'t, T>;
            #[inline]
            fn $method(self, rhs: Self) -> Self {
                let v = self.value $sym rhs.value;
                self.binary(rhs, Op::$op, v)
            }
        }
        impl<'t, T: Scalar> $trait<T> for Var<'t, T> {
            type Output = Var<'t, T>;
            #[inline]
            fn $method(self, rhs: T) -> Self {
                let v = self.value $sym rhs;
                self.unary(Op::$cop(rhs), v)
            }
        }
    };
}

var_binop!(Add, add, Add, AddC, +);
var_binop!(Sub, sub, Sub, SubC, -);
var_binop!(Mul, mul, Mul, MulC, *);
var_binop!(Div, div, Div, DivC, /);

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    #[inline]
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.value)
    }
}

impl<'t, T: Scalar> Real<T> for Var<'t, T> {
    #[inline]
    fn value(&self) -> T {
        self.value
    }

    #[inline]
    fn lift(&self, c: T) -> Self {
        self.tape.var(c)
    }

    fn exp(self) -> Self {
        self.unary(Op::Exp, kernel::exp(self.value))
    }

    fn ln(self) -> Self {
        self.unary(Op::Ln, kernel::ln(self.value))
    }

    fn sin(self) -> Self {
        self.unary(Op::Sin, kernel::sin(self.value))
    }

    fn cos(self) -> Self {
        self.unary(Op::Cos, kernel::cos(self.value))
    }

    fn tanh(self) -> Self {
        self.unary(Op::Tanh, kernel::tanh(self.value))
    }

    fn powf(self, e: T) -> Self {
        self.unary(Op::Pow(e), kernel::pow(self.value, e))
    }

    fn relu(self) -> Self {
        let v = if self.value > T::zero() {
            self.value
        } else {
            T::zero()
        };
        self.unary(Op::Relu, v)
    }

    fn max(self, other: Self) -> Self {
        let v = if self.value >= other.value {
            self.value
        } else {
            other.value
        };
        self.binary(other, Op::Max, v)
    }

    fn sum(xs: &[Self]) -> Self {
        let first = xs.first().expect("sum of empty slice");
        if xs.len() == 1 {
            return *first;
        }
        let v = sum_values(xs.iter().map(|x| x.value));
        let ids: Vec<NodeId> = xs.iter().map(|x| x.idx).collect();
        let idx = first.tape.push(Op::Sum, &ids, v);
        Self::from_parts(first.tape, idx, v)
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot length mismatch");
        let first = a.first().expect("dot of empty slices");
        let v = dot_values(a.iter().zip(b).map(|(x, y)| (x.value, y.value)));
        let ids: Vec<NodeId> = a.iter().chain(b).map(|x| x.idx).collect();
        let idx = first.tape.push(Op::Dot, &ids, v);
        Self::from_parts(first.tape, idx, v)
    }

    fn rsub(self, c: T) -> Self {
        self.unary(Op::RSubC(c), c - self.value)
    }
}
