use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tagger::lstm::{uniform_param, BiLstm};
use crate::tagger::TaggedSpan;

/// Span encoder: BiLSTM over the span's stage-1 states, final states
/// projected to the prototype dimension.
#[derive(Clone, Debug)]
pub struct EntityEncoder {
    pub dim: usize,
    lstm: BiLstm,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl EntityEncoder {
    pub fn register(
        store: &mut ParamStore,
        input_dim: usize,
        hidden: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let lstm = BiLstm::register(store, "entity_lstm", input_dim, hidden, rng);
        let k = 1.0 / ((2 * hidden) as f64).sqrt();
        EntityEncoder {
            dim,
            lstm,
            proj_w: uniform_param(store, "entity_proj.w", 2 * hidden, dim, k, rng),
            proj_b: uniform_param(store, "entity_proj.b", 1, dim, k, rng),
        }
    }

    /// `r` of shape `[1, dim]` for tokens `span.start..=span.end` of
    /// `hidden` (`[T, input_dim]`).
    pub fn encode_entity(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        hidden: Var,
        span: TaggedSpan,
    ) -> Result<Var> {
        let steps = tape.shape(hidden)[0];
        if span.end < span.start {
            return Err(Error::invalid("encode_entity", "empty span"));
        }
        if span.end >= steps {
            return Err(Error::invalid(
                "encode_entity",
                format!("span {}..={} exceeds {steps} tokens", span.start, span.end),
            ));
        }
        let states = tape.slice_rows(hidden, span.start, span.len())?;
        let out = self.lstm.run(tape, store, states)?;
        let w = tape.param(store, self.proj_w);
        let b = tape.param(store, self.proj_b);
        let r = tape.matmul(out.final_state, w)?;
        tape.add(r, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::rng::seeded;

    fn setup() -> (ParamStore, EntityEncoder, Tensor) {
        let mut store = ParamStore::new();
        let mut rng = seeded(4);
        let enc = EntityEncoder::register(&mut store, 6, 3, 5, &mut rng);
        let data = (0..24).map(|i| ((i * 11 % 7) as f64 - 3.0) / 4.0).collect();
        (store, enc, Tensor::matrix(4, 6, data).unwrap())
    }

    #[test]
    fn shapes_and_determinism() {
        let (store, enc, h) = setup();
        let run = |span: TaggedSpan| {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let r = enc.encode_entity(&mut tape, &store, hv, span).unwrap();
            tape.value(r).clone()
        };
        let single = run(TaggedSpan { start: 2, end: 2 });
        assert_eq!(single.shape(), &[1, 5]);
        let a = run(TaggedSpan { start: 0, end: 2 });
        assert_eq!(a.shape(), &[1, 5]);
        assert_eq!(a, run(TaggedSpan { start: 0, end: 2 }));
    }

    #[test]
    fn bad_spans_rejected() {
        let (store, enc, h) = setup();
        let mut tape = Tape::new();
        let hv = tape.constant(h);
        assert!(enc.encode_entity(&mut tape, &store, hv, TaggedSpan { start: 2, end: 1 }).is_err());
        assert!(enc.encode_entity(&mut tape, &store, hv, TaggedSpan { start: 3, end: 4 }).is_err());
    }
}
