//! Recurrent cell families and their stack integration.
//!
//! Every family exposes the same step interface: consume one token index
//! plus the carried state and produce the next state, next-token logits
//! and the scalar recognition score. All steps are recorded on a
//! [`Tape`], so gradients for any family come from the one shared
//! reverse pass.

use crate::math::{Matrix, Node, ParamId, ParamStore, RngStream, Tape};
use crate::stack::{noop_counter_update, ActionDist, NOOP};
use crate::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// The nine cell families of the benchmark suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Rnn,
    Lstm,
    Gru,
    /// Stack-augmented RNN with all stabilization tricks disabled
    /// (no noise, no carry-forward); structurally identical to DiffStkRnn.
    StackRnn,
    DiffStkRnn,
    DiffStkLstm,
    DiffStkMrnn,
    DiffStkMlstm,
    DiffStkMirnn,
}

impl Family {
    pub fn all() -> [Family; 9] {
        [
            Family::Rnn,
            Family::Lstm,
            Family::Gru,
            Family::StackRnn,
            Family::DiffStkRnn,
            Family::DiffStkLstm,
            Family::DiffStkMrnn,
            Family::DiffStkMlstm,
            Family::DiffStkMirnn,
        ]
    }

    pub fn has_stack(&self) -> bool {
        !matches!(self, Family::Rnn | Family::Lstm | Family::Gru)
    }

    /// Families whose stabilization tricks (noise, carry-forward) are
    /// active by default.
    pub fn default_tricks(&self) -> bool {
        self.has_stack() && *self != Family::StackRnn
    }

    fn core(&self) -> Core {
        match self {
            Family::Rnn | Family::StackRnn | Family::DiffStkRnn => Core::Rnn,
            Family::Lstm | Family::DiffStkLstm => Core::Lstm,
            Family::Gru => Core::Gru,
            Family::DiffStkMrnn => Core::Mrnn,
            Family::DiffStkMlstm => Core::Mlstm,
            Family::DiffStkMirnn => Core::Mirnn,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Family::Rnn => "rnn",
            Family::Lstm => "lstm",
            Family::Gru => "gru",
            Family::StackRnn => "stackrnn",
            Family::DiffStkRnn => "diffstk-rnn",
            Family::DiffStkLstm => "diffstk-lstm",
            Family::DiffStkMrnn => "diffstk-mrnn",
            Family::DiffStkMlstm => "diffstk-mlstm",
            Family::DiffStkMirnn => "diffstk-mirnn",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::all()
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown cell family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Core {
    Rnn,
    Lstm,
    Gru,
    Mrnn,
    Mlstm,
    Mirnn,
}

impl Core {
    fn gated(&self) -> bool {
        matches!(self, Core::Lstm | Core::Mlstm)
    }
}

/// Model dimensions: vocabulary size, hidden width, stack read width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub hidden: usize,
    pub read_width: usize,
}

/// Per-step behavior toggles.
#[derive(Debug, Clone, Copy)]
pub struct StepSettings {
    pub train_mode: bool,
    /// Additive state noise (mu, sigma2); applied only in training mode.
    pub noise: Option<(f64, f64)>,
    pub carry_forward: bool,
    /// NoOP share keeps deep stack cells in place (the identity
    /// convention); `false` selects the literal depth rule.
    pub noop_identity: bool,
}

impl StepSettings {
    pub fn eval() -> Self {
        StepSettings {
            train_mode: false,
            noise: None,
            carry_forward: true,
            noop_identity: true,
        }
    }

    pub fn train(noise: Option<(f64, f64)>, carry_forward: bool) -> Self {
        StepSettings {
            train_mode: true,
            noise,
            carry_forward,
            noop_identity: true,
        }
    }
}

/// Tape-resident recurrent state for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct SeqState {
    pub z: Node,
    pub c: Option<Node>,
    pub stack: Option<Node>,
    pub noop_ct: u32,
}

/// Detached (plain-value) snapshot of a [`SeqState`], used to carry state
/// across truncated-BPTT windows without carrying gradient history.
#[derive(Debug, Clone)]
pub struct CellState {
    pub z: Vec<f64>,
    pub c: Option<Vec<f64>>,
    pub stack: Option<Vec<f64>>,
    pub noop_ct: u32,
}

/// Output of one step.
pub struct StepOut {
    pub state: SeqState,
    /// Next-token logits (softmax gives the distribution over the vocab).
    pub logits: Node,
    /// Recognition score in (0,1), a length-1 node.
    pub y_hat: Node,
    /// Stack action taken this step, if the family has a stack.
    pub action: Option<ActionDist>,
    /// Push value for trace export.
    pub push_value: Option<f64>,
}

macro_rules! id_getters {
    ($($name:ident),* $(,)?) => {
        $(fn $name(&self) -> ParamId {
            self.store.id(stringify!($name)).expect("parameter present for family")
        })*
    };
}

/// One model: a cell family, its dimensions and its named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub family: Family,
    pub dims: Dims,
    pub store: ParamStore,
}

#[allow(non_snake_case)]
impl Model {
    id_getters!(
        U, R, b_z, V, b_v, w_y, b_y, P, A, b_a, D, b_d, U_i, R_i, b_i, U_o, R_o, b_o, U_f, R_f,
        b_f, W_mx, W_mz, W_zm, W_zx, U_m, R_m, R_z, R_im, R_om, R_fom, b_u, b_r, U_r, R_r, U_q,
        R_q, b_q
    );

    /// Fresh model with uniform +-1/sqrt(fan_in) weights, zero biases and
    /// forget bias 1.
    pub fn new(family: Family, dims: Dims, rng: &mut RngStream) -> Self {
        let mut store = ParamStore::new();
        let (d, m, k) = (dims.vocab, dims.hidden, dims.read_width);
        let mut mat = |store: &mut ParamStore, name: &str, rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            store.add(name, Matrix::from_vec(rows, cols, data).unwrap());
        };
        let bias = |store: &mut ParamStore, name: &str, len: usize, fill: f64| {
            store.add(name, Matrix::from_vec(1, len, vec![fill; len]).unwrap());
        };

        match family.core() {
            Core::Rnn => {
                mat(&mut store, "U", m, d);
                mat(&mut store, "R", m, m);
                bias(&mut store, "b_z", m, 0.0);
            }
            Core::Mirnn => {
                mat(&mut store, "U", m, d);
                mat(&mut store, "R", m, m);
                bias(&mut store, "b_u", m, 0.0);
                bias(&mut store, "b_r", m, 1.0);
            }
            Core::Mrnn => {
                mat(&mut store, "W_mx", m, d);
                mat(&mut store, "W_mz", m, m);
                mat(&mut store, "W_zm", m, m);
                mat(&mut store, "W_zx", m, d);
                bias(&mut store, "b_z", m, 0.0);
            }
            Core::Lstm => {
                mat(&mut store, "U", m, d);
                mat(&mut store, "R", m, m);
                bias(&mut store, "b_z", m, 0.0);
                for (u, r, b, fill) in [
                    ("U_i", "R_i", "b_i", 0.0),
                    ("U_o", "R_o", "b_o", 0.0),
                    ("U_f", "R_f", "b_f", 1.0),
                ] {
                    mat(&mut store, u, m, d);
                    mat(&mut store, r, m, m);
                    bias(&mut store, b, m, fill);
                }
            }
            Core::Mlstm => {
                mat(&mut store, "U_m", m, d);
                mat(&mut store, "R_m", m, m);
                mat(&mut store, "U", m, d);
                mat(&mut store, "R_z", m, m);
                bias(&mut store, "b_z", m, 0.0);
                for (u, r, b, fill) in [
                    ("U_i", "R_im", "b_i", 0.0),
                    ("U_o", "R_om", "b_o", 0.0),
                    ("U_f", "R_fom", "b_f", 1.0),
                ] {
                    mat(&mut store, u, m, d);
                    mat(&mut store, r, m, m);
                    bias(&mut store, b, m, fill);
                }
            }
            Core::Gru => {
                mat(&mut store, "U", m, d);
                mat(&mut store, "R", m, m);
                bias(&mut store, "b_z", m, 0.0);
                mat(&mut store, "U_r", m, d);
                mat(&mut store, "R_r", m, m);
                bias(&mut store, "b_r", m, 0.0);
                mat(&mut store, "U_q", m, d);
                mat(&mut store, "R_q", m, m);
                bias(&mut store, "b_q", m, 0.0);
            }
        }

        if family.has_stack() {
            mat(&mut store, "P", m, k);
            mat(&mut store, "A", 3, m);
            bias(&mut store, "b_a", 3, 0.0);
            mat(&mut store, "D", 1, m);
            bias(&mut store, "b_d", 1, 0.0);
        }

        // output and recognition heads
        mat(&mut store, "V", d, m);
        bias(&mut store, "b_v", d, 0.0);
        mat(&mut store, "w_y", 1, m);
        bias(&mut store, "b_y", 1, 0.0);

        Model {
            family,
            dims,
            store,
        }
    }

    /// All-zero state with an empty stack.
    pub fn initial_state(&self, tape: &mut Tape) -> SeqState {
        let z = tape.zeros(self.dims.hidden);
        let c = self
            .family
            .core()
            .gated()
            .then(|| tape.zeros(self.dims.hidden));
        let stack = self.family.has_stack().then(|| tape.zeros(0));
        SeqState {
            z,
            c,
            stack,
            noop_ct: 0,
        }
    }

    /// Copy a state's values off the tape (detach from gradient history).
    pub fn detach(&self, tape: &Tape, state: &SeqState) -> CellState {
        CellState {
            z: tape.value(state.z).to_vec(),
            c: state.c.map(|c| tape.value(c).to_vec()),
            stack: state.stack.map(|s| tape.value(s).to_vec()),
            noop_ct: state.noop_ct,
        }
    }

    /// Re-enter a detached state onto a (fresh) tape as constants.
    pub fn attach(&self, tape: &mut Tape, state: &CellState) -> SeqState {
        SeqState {
            z: tape.constant(&state.z),
            c: state.c.as_ref().map(|c| tape.constant(c)),
            stack: state.stack.as_ref().map(|s| tape.constant(s)),
            noop_ct: state.noop_ct,
        }
    }

    /// Stack read + noise injection: `zhat = z + P * topk(S) + eps`.
    fn inject(
        &self,
        tape: &mut Tape,
        settings: &StepSettings,
        rng: &mut RngStream,
        state: &SeqState,
    ) -> Result<Node> {
        let mut zhat = state.z;
        if let Some(stack) = state.stack {
            let top = tape.read_topk(stack, self.dims.read_width);
            let pz = tape.matvec(&self.store, self.P(), top);
            zhat = tape.add(zhat, pz);
            if settings.train_mode {
                if let Some((mu, sigma2)) = settings.noise {
                    if sigma2 > 0.0 || mu != 0.0 {
                        let eps =
                            crate::math::gaussian(rng, mu, sigma2, self.dims.hidden)?;
                        let eps = tape.constant(&eps);
                        zhat = tape.add(zhat, eps);
                    }
                }
            }
        }
        Ok(zhat)
    }

    /// Core recurrence: candidate (z, c) from the token and injected state.
    fn candidate(
        &self,
        tape: &mut Tape,
        x: usize,
        zhat: Node,
        c_prev: Option<Node>,
    ) -> (Node, Option<Node>) {
        let st = &self.store;
        match self.family.core() {
            Core::Rnn => {
                let ux = tape.embed(st, self.U(), x);
                let rz = tape.matvec(st, self.R(), zhat);
                let pre = tape.add(ux, rz);
                let pre = tape.add_param(st, self.b_z(), pre);
                (tape.scaled_tanh(pre), None)
            }
            Core::Mirnn => {
                // Hadamard in place of the sum; biases keep the zero initial
                // state from being absorbing.
                let ux = tape.embed(st, self.U(), x);
                let ux = tape.add_param(st, self.b_u(), ux);
                let rz = tape.matvec(st, self.R(), zhat);
                let rz = tape.add_param(st, self.b_r(), rz);
                let prod = tape.mul(ux, rz);
                (tape.scaled_tanh(prod), None)
            }
            Core::Mrnn => {
                let wx = tape.embed(st, self.W_mx(), x);
                let wz = tape.matvec(st, self.W_mz(), zhat);
                let m = tape.mul(wx, wz);
                let zm = tape.matvec(st, self.W_zm(), m);
                let zx = tape.embed(st, self.W_zx(), x);
                let pre = tape.add(zm, zx);
                let pre = tape.add_param(st, self.b_z(), pre);
                (tape.scaled_tanh(pre), None)
            }
            Core::Lstm => {
                let cand = {
                    let ux = tape.embed(st, self.U(), x);
                    let rz = tape.matvec(st, self.R(), zhat);
                    let pre = tape.add(ux, rz);
                    tape.add_param(st, self.b_z(), pre)
                };
                let gate = |tape: &mut Tape, u: ParamId, r: ParamId, b: ParamId| {
                    let ux = tape.embed(st, u, x);
                    let rz = tape.matvec(st, r, zhat);
                    let pre = tape.add(ux, rz);
                    let pre = tape.add_param(st, b, pre);
                    tape.logistic(pre)
                };
                let i = gate(tape, self.U_i(), self.R_i(), self.b_i());
                let o = gate(tape, self.U_o(), self.R_o(), self.b_o());
                let f = gate(tape, self.U_f(), self.R_f(), self.b_f());
                let c_prev = c_prev.expect("LSTM carries a cell state");
                let fc = tape.mul(f, c_prev);
                let cand_act = tape.scaled_tanh(cand);
                let ic = tape.mul(i, cand_act);
                let c = tape.add(fc, ic);
                let c_act = tape.scaled_tanh(c);
                let z = tape.mul(c_act, o);
                (z, Some(c))
            }
            Core::Mlstm => {
                let um = tape.embed(st, self.U_m(), x);
                let rm = tape.matvec(st, self.R_m(), zhat);
                let m = tape.mul(um, rm);
                let cand = {
                    let ux = tape.embed(st, self.U(), x);
                    let rz = tape.matvec(st, self.R_z(), m);
                    let pre = tape.add(ux, rz);
                    tape.add_param(st, self.b_z(), pre)
                };
                let gate = |tape: &mut Tape, u: ParamId, r: ParamId, b: ParamId| {
                    let ux = tape.embed(st, u, x);
                    let rm = tape.matvec(st, r, m);
                    let pre = tape.add(ux, rm);
                    let pre = tape.add_param(st, b, pre);
                    tape.logistic(pre)
                };
                let i = gate(tape, self.U_i(), self.R_im(), self.b_i());
                let o = gate(tape, self.U_o(), self.R_om(), self.b_o());
                let f = gate(tape, self.U_f(), self.R_fom(), self.b_f());
                let c_prev = c_prev.expect("MLSTM carries a cell state");
                let fc = tape.mul(f, c_prev);
                let cand_act = tape.scaled_tanh(cand);
                let ic = tape.mul(i, cand_act);
                let c = tape.add(fc, ic);
                let c_act = tape.scaled_tanh(c);
                let z = tape.mul(c_act, o);
                (z, Some(c))
            }
            Core::Gru => {
                let gate = |tape: &mut Tape, u: ParamId, r: ParamId, b: ParamId| {
                    let ux = tape.embed(st, u, x);
                    let rz = tape.matvec(st, r, zhat);
                    let pre = tape.add(ux, rz);
                    let pre = tape.add_param(st, b, pre);
                    tape.logistic(pre)
                };
                let reset = gate(tape, self.U_r(), self.R_r(), self.b_r());
                let update = gate(tape, self.U_q(), self.R_q(), self.b_q());
                let gated = tape.mul(reset, zhat);
                let ux = tape.embed(st, self.U(), x);
                let rz = tape.matvec(st, self.R(), gated);
                let pre = tape.add(ux, rz);
                let pre = tape.add_param(st, self.b_z(), pre);
                let cand = tape.scaled_tanh(pre);
                let keep = tape.mul(update, zhat);
                let inv = tape.one_minus(update);
                let take = tape.mul(inv, cand);
                (tape.add(keep, take), None)
            }
        }
    }

    fn action_and_value(&self, tape: &mut Tape, z: Node) -> (Node, ActionDist, Node) {
        let logits = tape.matvec(&self.store, self.A(), z);
        let logits = tape.add_param(&self.store, self.b_a(), logits);
        let a = tape.softmax(logits);
        let av = tape.value(a);
        let dist = ActionDist([av[0], av[1], av[2]]);
        let dv = tape.matvec(&self.store, self.D(), z);
        let dv = tape.add_param(&self.store, self.b_d(), dv);
        let v = tape.logistic(dv);
        (a, dist, v)
    }

    /// One recurrent step. `x` is the token index (one-hot position).
    pub fn step(
        &self,
        tape: &mut Tape,
        settings: &StepSettings,
        rng: &mut RngStream,
        x: usize,
        state: &SeqState,
    ) -> Result<StepOut> {
        if x >= self.dims.vocab {
            return Err(Error::Shape(format!(
                "token index {x} out of vocabulary {}",
                self.dims.vocab
            )));
        }
        let zhat = self.inject(tape, settings, rng, state)?;
        let (z_cand, c_cand) = self.candidate(tape, x, zhat, state.c);

        // Carry-forward gate: freeze the state on a sustained NoOP streak.
        let (z_t, c_t, action, push_value, new_stack, noop_ct) = if let Some(stack) = state.stack {
            let (a_node, a_dist, v_node) = self.action_and_value(tape, z_cand);
            let ct_cand = noop_counter_update(state.noop_ct, &a_dist);
            let freeze =
                settings.carry_forward && a_dist.argmax() == NOOP && ct_cand > 1;
            if freeze {
                // u = 0: the state is a pure copy; the action is re-read
                // from the frozen state so the stack stays consistent with
                // a_t = softmax(A z_t).
                let (a_node, a_dist, v_node) = self.action_and_value(tape, zhat);
                let ct = noop_counter_update(state.noop_ct, &a_dist);
                let s = tape.stack_step(stack, a_node, v_node, settings.noop_identity);
                let v = tape.scalar(v_node);
                (zhat, state.c, Some(a_dist), Some(v), Some(s), ct)
            } else {
                let s = tape.stack_step(stack, a_node, v_node, settings.noop_identity);
                let v = tape.scalar(v_node);
                (z_cand, c_cand, Some(a_dist), Some(v), Some(s), ct_cand)
            }
        } else {
            (z_cand, c_cand, None, None, None, 0)
        };

        tape.check_finite(z_t, &format!("hidden state z_t ({})", self.family))?;

        let logits = tape.matvec(&self.store, self.V(), z_t);
        let logits = tape.add_param(&self.store, self.b_v(), logits);
        let y_pre = tape.matvec(&self.store, self.w_y(), z_t);
        let y_pre = tape.add_param(&self.store, self.b_y(), y_pre);
        let y_hat = tape.logistic(y_pre);

        Ok(StepOut {
            state: SeqState {
                z: z_t,
                c: c_t,
                stack: new_stack,
                noop_ct,
            },
            logits,
            y_hat,
            action,
            push_value,
        })
    }
}
