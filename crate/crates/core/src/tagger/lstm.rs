use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{uniform, Rng};

/// Registers a `[rows, cols]` parameter drawn from `U(-scale, scale)`.
pub(crate) fn uniform_param(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut Rng,
) -> ParamId {
    let data = (0..rows * cols).map(|_| uniform(rng, scale)).collect();
    store.insert(name, Tensor::matrix(rows, cols, data).expect("sized"))
}

/// One LSTM direction. Gate layout along the `4 * hidden` axis is
/// input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden: usize,
    wx: ParamId,
    wh: ParamId,
    bias: ParamId,
}

impl Lstm {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Lstm {
            input_dim,
            hidden,
            wx: uniform_param(store, &format!("{prefix}.wx"), input_dim, 4 * hidden, k, rng),
            wh: uniform_param(store, &format!("{prefix}.wh"), hidden, 4 * hidden, k, rng),
            bias: uniform_param(store, &format!("{prefix}.b"), 1, 4 * hidden, k, rng),
        }
    }

    /// Runs over the rows of `inputs` (`[T, input_dim]`), right to left when
    /// `reverse`. Returns per-step hidden states `[T, hidden]` aligned with
    /// the input rows.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, inputs: Var, reverse: bool) -> Result<Var> {
        let shape = tape.shape(inputs).to_vec();
        if shape[0] == 0 {
            return Err(Error::invalid("lstm", "empty input sequence"));
        }
        if shape[1] != self.input_dim {
            return Err(Error::shape("lstm", &[&shape, &[self.input_dim]]));
        }
        let steps = shape[0];
        let h = self.hidden;
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.bias);
        let projected = tape.matmul(inputs, wx)?;
        let projected = tape.add(projected, b)?;

        let mut outputs: Vec<Var> = Vec::with_capacity(steps);
        let mut state: Option<(Var, Var)> = None;
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let mut gates = tape.slice_rows(projected, t, 1)?;
            if let Some((h_prev, _)) = state {
                let rec = tape.matmul(h_prev, wh)?;
                gates = tape.add(gates, rec)?;
            }
            let i_pre = tape.slice_cols(gates, 0, h)?;
            let f_pre = tape.slice_cols(gates, h, h)?;
            let g_pre = tape.slice_cols(gates, 2 * h, h)?;
            let o_pre = tape.slice_cols(gates, 3 * h, h)?;
            let i = tape.sigmoid(i_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let mut c = tape.mul(i, g)?;
            if let Some((_, c_prev)) = state {
                let f = tape.sigmoid(f_pre);
                let kept = tape.mul(f, c_prev)?;
                c = tape.add(c, kept)?;
            }
            let c_act = tape.tanh(c);
            let h_t = tape.mul(o, c_act)?;
            outputs.push(h_t);
            state = Some((h_t, c));
        }
        if reverse {
            outputs.reverse();
        }
        tape.concat(&outputs, 0)
    }
}

/// Forward and backward LSTMs over the same sequence.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

pub struct BiLstmOutput {
    /// `[T, 2 * hidden]`: forward state then backward state per step.
    pub states: Var,
    /// `[1, 2 * hidden]`: last forward state and first backward state.
    pub final_state: Var,
}

impl BiLstm {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        BiLstm {
            forward: Lstm::register(store, &format!("{prefix}.fw"), input_dim, hidden, rng),
            backward: Lstm::register(store, &format!("{prefix}.bw"), input_dim, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn run(&self, tape: &mut Tape, store: &ParamStore, inputs: Var) -> Result<BiLstmOutput> {
        let fw = self.forward.run(tape, store, inputs, false)?;
        let bw = self.backward.run(tape, store, inputs, true)?;
        let steps = tape.shape(fw)[0];
        let states = tape.concat(&[fw, bw], 1)?;
        let last_fw = tape.slice_rows(fw, steps - 1, 1)?;
        let first_bw = tape.slice_rows(bw, 0, 1)?;
        let final_state = tape.concat(&[last_fw, first_bw], 1)?;
        Ok(BiLstmOutput {
            states,
            final_state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, relative_error};
    use crate::rng::seeded;

    #[test]
    fn bilstm_shapes_and_single_step() {
        let mut store = ParamStore::new();
        let mut rng = seeded(1);
        let bi = BiLstm::register(&mut store, "l", 3, 4, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![0.1, -0.2, 0.3]).unwrap());
        let out = bi.run(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(out.states), &[1, 8]);
        // With one step the final state is the whole output row.
        assert_eq!(tape.value(out.states), tape.value(out.final_state));
    }

    #[test]
    fn empty_sequence_is_error() {
        let mut store = ParamStore::new();
        let lstm = Lstm::register(&mut store, "l", 2, 2, &mut seeded(0));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(lstm.run(&mut tape, &store, x, false).is_err());
    }

    #[test]
    fn lstm_input_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = seeded(2);
        let bi = BiLstm::register(&mut store, "l", 2, 3, &mut rng);
        let x0: Vec<f64> = (0..8).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect();
        let f = |x: &[f64]| {
            let mut tape = Tape::new();
            let xv = tape.input(Tensor::matrix(4, 2, x.to_vec()).unwrap());
            let out = bi.run(&mut tape, &store, xv).unwrap();
            let sq = tape.mul(out.states, out.states).unwrap();
            let s = tape.sum(sq);
            (tape, xv, s)
        };
        let (tape, xv, s) = f(&x0);
        let g = tape.backward(s).unwrap();
        let analytic = g.wrt(xv).unwrap().to_vec();
        let numeric = finite_difference(
            |x| {
                let (tape, _, s) = f(x);
                tape.value(s).item()
            },
            &x0,
            1e-4,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-3) < 1e-6, "{a} vs {n}");
        }
    }
}
