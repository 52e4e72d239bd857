use super::{Embedding, GradSink, GruParams, GruStep, ParamStore, ParamView};
use crate::error::{Error, Result};

/// Word-level GRU per utterance, then an utterance-level GRU over the final
/// word states. Every utterance is wrapped in `bos ... eos` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HgruParams {
    pub word: GruParams,
    pub utterance: GruParams,
    pub bos: usize,
    pub eos: usize,
}

pub struct HgruPass {
    rows: Vec<Vec<usize>>,
    words: Vec<Vec<GruStep>>,
    utterances: Vec<GruStep>,
}

impl HgruPass {
    pub fn output(&self) -> &[f64] {
        &self.utterances.last().expect("non-empty by construction").h
    }
}

impl HgruParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        bos: usize,
        eos: usize,
    ) -> Result<Self> {
        Ok(Self {
            word: GruParams::register(store, &format!("{prefix}.word"), input, hidden)?,
            utterance: GruParams::register(store, &format!("{prefix}.utterance"), hidden, hidden)?,
            bos,
            eos,
        })
    }

    pub fn forward(&self, view: ParamView<'_>, emb: &Embedding, utterances: &[&[usize]]) -> Result<HgruPass> {
        if utterances.is_empty() {
            return Err(Error::Contract("hierarchical encoder needs at least one utterance".into()));
        }
        let h0 = vec![0.0; self.word.hidden];
        let mut rows = Vec::with_capacity(utterances.len());
        let mut words = Vec::with_capacity(utterances.len());
        let mut finals = Vec::with_capacity(utterances.len());
        for u in utterances {
            let mut r = Vec::with_capacity(u.len() + 2);
            r.push(self.bos);
            r.extend_from_slice(u);
            r.push(self.eos);
            if let Some(bad) = r.iter().find(|t| **t >= emb.rows) {
                return Err(Error::Bounds {
                    what: "token",
                    index: *bad,
                    len: emb.rows,
                });
            }
            let xs: Vec<Vec<f64>> = r.iter().map(|t| emb.lookup(view, *t).to_vec()).collect();
            let steps = self.word.run(view, &xs, &h0)?;
            finals.push(steps.last().expect("wrapped").h.clone());
            words.push(steps);
            rows.push(r);
        }
        let utterances = self.utterance.run(view, &finals, &h0)?;
        Ok(HgruPass {
            rows,
            words,
            utterances,
        })
    }

    pub fn backward(&self, view: ParamView<'_>, grads: &mut GradSink<'_>, emb: &Embedding, pass: &HgruPass, d_out: &[f64]) {
        let n = pass.utterances.len();
        let mut d_states = vec![vec![0.0; self.utterance.hidden]; n];
        d_states[n - 1].copy_from_slice(d_out);
        let (d_finals, _) = self.utterance.run_backward(view, grads, &pass.utterances, &d_states);
        for ((steps, rows), d_final) in pass.words.iter().zip(&pass.rows).zip(d_finals) {
            let mut d = vec![vec![0.0; self.word.hidden]; steps.len()];
            *d.last_mut().expect("wrapped") = d_final;
            let (dxs, _) = self.word.run_backward(view, grads, steps, &d);
            for (t, dx) in rows.iter().zip(dxs) {
                emb.backward_row(grads, *t, &dx);
            }
        }
    }
}

pub fn hierarchical_gru(store: &ParamStore, params: &HgruParams, emb: &Embedding, utterances: &[&[usize]]) -> Result<Vec<f64>> {
    Ok(params.forward(store.view(), emb, utterances)?.output().to_vec())
}
