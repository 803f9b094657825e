//! Continuous, differentiable stack memory.
//!
//! The stack is an ordered sequence of scalar cells, index 0 on top.
//! A step blends push/pop/no-op by the action probabilities, so with a
//! one-hot action it degenerates to a discrete stack. These plain-value
//! routines are the semantic reference; the tape op in [`crate::math::tape`]
//! computes the same transition differentiably and is regression-tested
//! against this module.

use crate::math::{softmax, Matrix};
use crate::{Error, Result};

pub const PUSH: usize = 0;
pub const POP: usize = 1;
pub const NOOP: usize = 2;

/// Default read window: the top 3 cells feed back into the controller.
pub const DEFAULT_READ_WIDTH: usize = 3;

/// Probabilities over (PUSH, POP, NoOP).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDist(pub [f64; 3]);

impl ActionDist {
    pub fn new(a: [f64; 3]) -> Result<Self> {
        if a.iter().any(|v| *v < 0.0) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("invalid action distribution {a:?}")));
        }
        Ok(ActionDist(a))
    }

    /// Index of the largest entry; ties break toward the lowest index (PUSH).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// The external memory: continuous cells, top at index 0.
/// Reads past the current depth yield the empty-cell value 0.0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StackState {
    cells: Vec<f64>,
}

impl StackState {
    pub fn empty() -> Self {
        StackState { cells: Vec::new() }
    }

    pub fn from_cells(cells: Vec<f64>) -> Self {
        StackState { cells }
    }

    pub fn depth(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.cells.get(i).copied().unwrap_or(0.0)
    }
}

/// `softmax(A z)`: the action distribution from the hidden state.
pub fn action_dist(z: &[f64], a: &Matrix) -> Result<ActionDist> {
    if a.rows() != 3 || a.cols() != z.len() {
        return Err(Error::Shape(format!(
            "action matrix is {}x{}, hidden state has length {}",
            a.rows(),
            a.cols(),
            z.len()
        )));
    }
    let logits = a.matvec(z);
    let p = softmax(&logits);
    Ok(ActionDist([p[0], p[1], p[2]]))
}

/// `sigma(D z)`: the scalar value pushed on a PUSH.
pub fn push_value(z: &[f64], d: &Matrix) -> Result<f64> {
    if d.rows() != 1 || d.cols() != z.len() {
        return Err(Error::Shape(format!(
            "push matrix is {}x{}, hidden state has length {}",
            d.rows(),
            d.cols(),
            z.len()
        )));
    }
    Ok(crate::math::logistic_scalar(d.matvec(z)[0]))
}

/// One continuous stack transition. Depth grows by one cell to make room
/// for the push shift.
///
/// Top cell: `a[PUSH]*v + a[POP]*S[1] + a[NoOP]*S[0]`.
/// Deeper cells: `a[PUSH]*S[i-1] + a[POP]*S[i+1]`, plus `a[NoOP]*S[i]`
/// when `noop_identity` is set so a pure NoOP leaves the whole stack
/// unchanged. `noop_identity = false` is the literal depth rule, kept for
/// compatibility.
pub fn stack_step(prev: &StackState, a: &ActionDist, v: f64, noop_identity: bool) -> StackState {
    let n = prev.depth();
    let (push, pop, noop) = (a.0[PUSH], a.0[POP], a.0[NOOP]);
    let mut cells = Vec::with_capacity(n + 1);
    cells.push(push * v + pop * prev.get(1) + noop * prev.get(0));
    for i in 1..=n {
        let mut cell = push * prev.get(i - 1) + pop * prev.get(i + 1);
        if noop_identity {
            cell += noop * prev.get(i);
        }
        cells.push(cell);
    }
    StackState { cells }
}

/// The top `k` cells, zero-padded past the depth.
pub fn read_topk(s: &StackState, k: usize) -> Vec<f64> {
    (0..k).map(|i| s.get(i)).collect()
}

/// Consecutive-NoOP counter: increments when the argmax action is NoOP,
/// resets to zero otherwise.
pub fn noop_counter_update(ct: u32, a: &ActionDist) -> u32 {
    if a.argmax() == NOOP {
        ct + 1
    } else {
        0
    }
}

/// One row of a per-step stack trace (CSV export for interpretability).
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    pub action: [f64; 3],
    pub push_value: f64,
    pub top: [f64; 3],
}

pub fn trace_csv_header() -> &'static str {
    "t,a_push,a_pop,a_noop,v,top0,top1,top2"
}

pub fn trace_csv_row(r: &TraceRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.t,
        r.action[0],
        r.action[1],
        r.action[2],
        r.push_value,
        r.top[0],
        r.top[1],
        r.top[2]
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;

    fn one_hot(i: usize) -> ActionDist {
        let mut a = [0.0; 3];
        a[i] = 1.0;
        ActionDist(a)
    }

    #[test]
    fn pure_push_shifts_in() {
        let s = StackState::from_cells(vec![0.2, 0.5]);
        let s2 = stack_step(&s, &one_hot(PUSH), 0.7, true);
        assert_eq!(s2.cells(), &[0.7, 0.2, 0.5]);
    }

    #[test]
    fn pure_pop_shifts_up() {
        let s = StackState::from_cells(vec![0.2, 0.5, 0.9]);
        let s2 = stack_step(&s, &one_hot(POP), 0.3, true);
        assert_eq!(s2.cells(), &[0.5, 0.9, 0.0, 0.0]);
    }

    #[test]
    fn pure_noop_is_identity_on_cells() {
        let s = StackState::from_cells(vec![0.2, 0.5, 0.9]);
        let s2 = stack_step(&s, &one_hot(NOOP), 0.3, true);
        assert_eq!(&s2.cells()[..3], s.cells());
        assert_eq!(s2.get(3), 0.0);
    }

    #[test]
    fn literal_depth_rule_zeroes_deep_cells_under_noop() {
        // compatibility mode: the depth rule has no NoOP term
        let s = StackState::from_cells(vec![0.2, 0.5, 0.9]);
        let s2 = stack_step(&s, &one_hot(NOOP), 0.3, false);
        assert_eq!(s2.get(0), 0.2);
        assert_eq!(s2.get(1), 0.0);
        assert_eq!(s2.get(2), 0.0);
    }

    #[test]
    fn read_topk_pads_with_zeros() {
        assert_eq!(read_topk(&StackState::empty(), 3), vec![0.0, 0.0, 0.0]);
        let s1 = StackState::from_cells(vec![0.4]);
        assert_eq!(read_topk(&s1, 3), vec![0.4, 0.0, 0.0]);
        let s5 = StackState::from_cells(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(read_topk(&s5, 3), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn action_dist_from_zero_matrix_is_uniform() {
        let a = Matrix::zeros(3, 4);
        let dist = action_dist(&[0.1, 0.2, 0.3, 0.4], &a).unwrap();
        for p in dist.0 {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn action_dist_saturates_on_large_logit() {
        let mut a = Matrix::zeros(3, 1);
        a.set(1, 0, 50.0);
        let dist = action_dist(&[1.0], &a).unwrap();
        assert!(dist.0[POP] > 1.0 - 1e-12);
    }

    #[test]
    fn push_value_contract() {
        let d = Matrix::zeros(1, 4);
        assert_eq!(push_value(&[1.0, 2.0, 3.0, 4.0], &d).unwrap(), 0.5);
        let mut d = Matrix::zeros(1, 1);
        d.set(0, 0, 100.0);
        assert!(push_value(&[1.0], &d).unwrap() > 1.0 - 1e-12);
        assert!(push_value(&[1.0, 2.0], &d).is_err());
    }

    #[test]
    fn noop_counter_rules() {
        assert_eq!(noop_counter_update(0, &one_hot(NOOP)), 1);
        assert_eq!(noop_counter_update(5, &one_hot(PUSH)), 0);
        // exact tie PUSH/NoOP resolves to PUSH via lowest-index tie-break
        let tie = ActionDist([0.5, 0.0, 0.5]);
        assert_eq!(tie.argmax(), PUSH);
        assert_eq!(noop_counter_update(3, &tie), 0);
    }

    #[test]
    fn bounded_cells_under_convex_blending() {
        // pushed values in (0,1) and empty start keep every cell in [0,1]
        let mut rng = crate::math::RngStream::new(17);
        let mut s = StackState::empty();
        for _ in 0..200 {
            let raw = [rng.uniform(), rng.uniform(), rng.uniform()];
            let sum: f64 = raw.iter().sum();
            let a = ActionDist([raw[0] / sum, raw[1] / sum, raw[2] / sum]);
            s = stack_step(&s, &a, rng.uniform(), true);
            assert!(s.cells().iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }
}
