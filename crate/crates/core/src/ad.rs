//! Scalar abstraction shared by plain evaluation and reverse-mode differentiation.
//!
//! Every differentiable kernel in this crate is written once against [`Real`].
//! Instantiated with `f64` it is an ordinary forward evaluation; instantiated
//! with [`Var`] each arithmetic operation is recorded on a thread-local tape so
//! that [`Tape::gradient`] can return exact derivatives of a scalar output with
//! respect to every recorded input.
//!
//! Operations whose operands are all constants are not recorded, which keeps the
//! tape limited to the part of the computation that actually depends on the
//! differentiation targets.

use std::cell::{Cell, RefCell};
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Numeric type accepted by the differentiable kernels.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
{
    fn constant(value: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Absolute value with subgradient 0 at exactly zero.
    fn abs(self) -> Self;
    /// Same derivative structure with the primal value replaced by `value`
    /// (used to substitute a more accurately rounded value).
    fn with_value(self, value: f64) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn square(self) -> Self {
        self * self
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    fn softplus(self) -> Self {
        let x = self.value();
        if x > 30.0 {
            // ln(1 + y) = y to double precision for y < e^-30
            self + (-self).exp()
        } else {
            (self.exp() + 1.0).ln()
        }
    }
}

impl Real for f64 {
    #[inline]
    fn constant(value: f64) -> Self {
        value
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn abs(self) -> Self {
        KINKS.with(|k| {
            if let Some(h) = k.get() {
                k.set(Some((h ^ (self < 0.0) as u64).wrapping_mul(0x0000_0100_0000_01b3)));
            }
        });
        f64::abs(self)
    }
    #[inline]
    fn with_value(self, value: f64) -> Self {
        value
    }
}

thread_local! {
    static KINKS: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Runs `f` while hashing the sign of every `f64` argument passed to
/// [`Real::abs`]. Two evaluations with equal hashes lie on the same side of
/// every absolute-value kink.
pub fn record_kinks<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = KINKS.with(|k| k.replace(Some(0xcbf2_9ce4_8422_2325)));
    let out = f();
    let h = KINKS.with(|k| k.replace(previous)).unwrap_or(0);
    (out, h)
}

const CONSTANT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

struct TapeState {
    active: bool,
    nodes: Vec<Node>,
}

thread_local! {
    static TAPE: RefCell<TapeState> = const {
        RefCell::new(TapeState { active: false, nodes: Vec::new() })
    };
}

fn push(parents: [u32; 2], partials: [f64; 2]) -> u32 {
    TAPE.with(|tape| {
        let mut tape = tape.borrow_mut();
        debug_assert!(tape.active, "Var arithmetic outside of an active Tape");
        let index = tape.nodes.len() as u32;
        tape.nodes.push(Node { parents, partials });
        index
    })
}

/// A scalar recorded on the current thread's tape (or a constant).
#[derive(Clone, Copy, Debug)]
pub struct Var {
    value: f64,
    index: u32,
}

impl Var {
    #[inline]
    fn unary(value: f64, a: Var, da: f64) -> Var {
        if a.index == CONSTANT {
            Var::constant(value)
        } else {
            Var { value, index: push([a.index, CONSTANT], [da, 0.0]) }
        }
    }

    #[inline]
    fn binary(value: f64, a: Var, da: f64, b: Var, db: f64) -> Var {
        match (a.index == CONSTANT, b.index == CONSTANT) {
            (true, true) => Var::constant(value),
            (false, true) => Var { value, index: push([a.index, CONSTANT], [da, 0.0]) },
            (true, false) => Var { value, index: push([b.index, CONSTANT], [db, 0.0]) },
            (false, false) => Var { value, index: push([a.index, b.index], [da, db]) },
        }
    }

    pub fn is_constant(&self) -> bool {
        self.index == CONSTANT
    }
}

impl Real for Var {
    #[inline]
    fn constant(value: f64) -> Self {
        Var { value, index: CONSTANT }
    }
    #[inline]
    fn value(self) -> f64 {
        self.value
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        Var::unary(s, self, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        Var::unary(e, self, e)
    }
    fn ln(self) -> Self {
        Var::unary(self.value.ln(), self, 1.0 / self.value)
    }
    fn sin(self) -> Self {
        Var::unary(self.value.sin(), self, self.value.cos())
    }
    fn cos(self) -> Self {
        Var::unary(self.value.cos(), self, -self.value.sin())
    }
    fn abs(self) -> Self {
        let slope = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        Var::unary(self.value.abs(), self, slope)
    }
    #[inline]
    fn with_value(self, value: f64) -> Self {
        Var { value, index: self.index }
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, rhs: Var) -> Var {
        Var::binary(self.value + rhs.value, self, 1.0, rhs, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, rhs: Var) -> Var {
        Var::binary(self.value - rhs.value, self, 1.0, rhs, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, rhs: Var) -> Var {
        Var::binary(self.value * rhs.value, self, rhs.value, rhs, self.value)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, rhs: Var) -> Var {
        let q = self.value / rhs.value;
        Var::binary(q, self, 1.0 / rhs.value, rhs, -q / rhs.value)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        Var::unary(-self.value, self, -1.0)
    }
}

impl AddAssign for Var {
    #[inline]
    fn add_assign(&mut self, rhs: Var) {
        *self = *self + rhs;
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, rhs: f64) -> Var {
        Var::unary(self.value + rhs, self, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, rhs: f64) -> Var {
        Var::unary(self.value - rhs, self, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, rhs: f64) -> Var {
        Var::unary(self.value * rhs, self, rhs)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, rhs: f64) -> Var {
        Var::unary(self.value / rhs, self, 1.0 / rhs)
    }
}

/// Exclusive handle on the current thread's tape.
///
/// Only one tape may be active per thread; dropping it releases the recorded
/// nodes. Independent threads (e.g. rayon workers) each get their own tape.
pub struct Tape {
    _not_send: std::marker::PhantomData<*const ()>,
}

impl Tape {
    /// # Panics
    ///
    /// Panics if another `Tape` is already alive on this thread.
    pub fn new() -> Tape {
        TAPE.with(|tape| {
            let mut tape = tape.borrow_mut();
            assert!(!tape.active, "a Tape is already active on this thread");
            tape.active = true;
            tape.nodes.clear();
        });
        Tape { _not_send: std::marker::PhantomData }
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var {
        Var { value, index: push([CONSTANT, CONSTANT], [0.0, 0.0]) }
    }

    pub fn len(&self) -> usize {
        TAPE.with(|tape| tape.borrow().nodes.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Back-propagates from `output`, returning adjoints for every node.
    pub fn gradient(&self, output: Var) -> Gradient {
        TAPE.with(|tape| {
            let tape = tape.borrow();
            let mut adjoints = vec![0.0; tape.nodes.len()];
            if output.index != CONSTANT {
                adjoints[output.index as usize] = 1.0;
                for i in (0..=output.index as usize).rev() {
                    let adjoint = adjoints[i];
                    if adjoint == 0.0 {
                        continue;
                    }
                    let node = tape.nodes[i];
                    for k in 0..2 {
                        let parent = node.parents[k];
                        if parent != CONSTANT {
                            adjoints[parent as usize] += adjoint * node.partials[k];
                        }
                    }
                }
            }
            Gradient { adjoints }
        })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        TAPE.with(|tape| {
            let mut tape = tape.borrow_mut();
            tape.active = false;
            tape.nodes.clear();
        });
    }
}

/// Adjoints produced by [`Tape::gradient`].
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    /// Derivative of the output with respect to `var`; zero for constants.
    pub fn wrt(&self, var: Var) -> f64 {
        if var.index == CONSTANT {
            0.0
        } else {
            self.adjoints.get(var.index as usize).copied().unwrap_or(0.0)
        }
    }
}
