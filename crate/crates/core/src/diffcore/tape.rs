use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::{leaky_f64, logistic_f64, softplus_f64, Scalar};
use super::DiffError;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// A Wengert list. Nodes are appended in evaluation order, so the list is
/// topologically sorted by construction and the reverse sweep is a single
/// backwards pass.
///
/// A tape is single-threaded (interior mutability through `RefCell`). Run one
/// tape per worker and combine the resulting gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// Reverse sweep seeded with `(output, seed)` pairs. Seeds on the same
    /// output accumulate. Constants in the seed list are ignored.
    pub fn gradient(&self, seeds: &[(Var<'_>, f64)]) -> Adjoints {
        let mut adj = vec![0.0; self.len()];
        for (v, s) in seeds {
            if let Some(t) = v.tape {
                debug_assert!(std::ptr::eq(t, self), "seed from a foreign tape");
                adj[v.idx as usize] += *s;
            }
        }
        self.sweep(&mut adj);
        Adjoints { adj }
    }

    fn sweep(&self, adj: &mut [f64]) {
        let nodes = self.nodes.borrow();
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = nodes[i];
            for k in 0..2 {
                if n.parents[k] != NONE {
                    adj[n.parents[k] as usize] += a * n.partials[k];
                }
            }
        }
    }

    pub(crate) fn sweep_raw(&self, adj: &mut [f64]) {
        self.sweep(adj)
    }
}

/// Adjoint values of every node after a reverse sweep.
#[derive(Debug, Clone)]
pub struct Adjoints {
    adj: Vec<f64>,
}

impl Adjoints {
    /// Derivative of the seeded objective with respect to `v` (zero for
    /// constants).
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.tape.is_some() {
            self.adj[v.idx as usize]
        } else {
            0.0
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// A taped scalar. Constants (no tape) participate in arithmetic without
/// adding nodes.
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val,
        }
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    pub(crate) fn index(&self) -> Option<u32> {
        self.tape.map(|_| self.idx)
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => {
                let idx = t.push(Node {
                    parents: [self.idx, NONE],
                    partials: [d, 0.0],
                });
                Var {
                    tape: Some(t),
                    idx,
                    val,
                }
            }
        }
    }

    fn binary(self, o: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, o.tape) {
            (None, None) => Var::constant(val),
            (Some(_), None) => self.unary(val, da),
            (None, Some(_)) => o.unary(val, db),
            (Some(t), Some(u)) => {
                debug_assert!(std::ptr::eq(t, u), "mixing vars from different tapes");
                let idx = t.push(Node {
                    parents: [self.idx, o.idx],
                    partials: [da, db],
                });
                Var {
                    tape: Some(t),
                    idx,
                    val,
                }
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        self.unary(self.val + o, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        self.unary(self.val - o, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.unary(self.val * o, o)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.unary(self.val / o, 1.0 / o)
    }
}

impl<'t> Scalar for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }

    fn val(self) -> f64 {
        self.val
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        // d sqrt at 0 is unbounded; callers guard the argument away from 0
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(s, d)
    }

    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.val.abs(), d)
    }

    fn atan2(self, x: Self) -> Self {
        let (y, xv) = (self.val, x.val);
        let r2 = y * y + xv * xv;
        let (dy, dx) = if r2 > 0.0 {
            (xv / r2, -y / r2)
        } else {
            (0.0, 0.0)
        };
        self.binary(x, y.atan2(xv), dy, dx)
    }

    fn logistic(self) -> Self {
        let s = logistic_f64(self.val);
        self.unary(s, s * (1.0 - s))
    }

    fn softplus(self) -> Self {
        self.unary(softplus_f64(self.val), logistic_f64(self.val))
    }

    fn leaky_relu(self, slope: f64) -> Self {
        let d = if self.val > 0.0 { 1.0 } else { slope };
        self.unary(leaky_f64(self.val, slope), d)
    }

    fn max(self, other: Self) -> Self {
        if other.val > self.val {
            other
        } else {
            self
        }
    }
}

/// A finished recording: the tape plus the positions of its inputs and
/// outputs.
#[derive(Debug)]
pub struct Recording {
    tape: Tape,
    inputs: Vec<u32>,
    outputs: Vec<Option<u32>>,
    values: Vec<f64>,
}

/// Records `f` evaluated at `inputs`.
///
/// ```
/// use halo_core::diffcore::{record, Scalar};
/// let rec = record(&[3.0], |x| vec![x[0] * x[0]]);
/// assert_eq!(rec.outputs(), &[9.0]);
/// assert_eq!(rec.backward(&[1.0]).unwrap(), vec![6.0]);
/// ```
pub fn record<F>(inputs: &[f64], f: F) -> Recording
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Vec<Var<'t>>,
{
    let tape = Tape::new();
    let (inputs_idx, outputs, values) = {
        let xs = tape.vars(inputs);
        let ys = f(&xs);
        (
            xs.iter().map(|v| v.idx).collect::<Vec<_>>(),
            ys.iter().map(|v| v.index()).collect::<Vec<_>>(),
            ys.iter().map(|v| v.val).collect::<Vec<_>>(),
        )
    };
    Recording {
        tape,
        inputs: inputs_idx,
        outputs,
        values,
    }
}

impl Recording {
    pub fn outputs(&self) -> &[f64] {
        &self.values
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    /// Vector-Jacobian product: `seed^T · d(outputs)/d(inputs)`.
    pub fn backward(&self, seed: &[f64]) -> Result<Vec<f64>, DiffError> {
        if seed.len() != self.outputs.len() {
            return Err(DiffError::ShapeMismatch {
                expected: self.outputs.len(),
                got: seed.len(),
            });
        }
        let mut adj = vec![0.0; self.tape.len()];
        for (o, s) in self.outputs.iter().zip(seed) {
            if let Some(i) = o {
                adj[*i as usize] += *s;
            }
        }
        self.tape.sweep_raw(&mut adj);
        Ok(self.inputs.iter().map(|&i| adj[i as usize]).collect())
    }

    /// Dense Jacobian, one reverse sweep per output row.
    pub fn jacobian(&self) -> Vec<Vec<f64>> {
        let m = self.outputs.len();
        (0..m)
            .map(|r| {
                let mut seed = vec![0.0; m];
                seed[r] = 1.0;
                self.backward(&seed).expect("seed sized to outputs")
            })
            .collect()
    }
}
