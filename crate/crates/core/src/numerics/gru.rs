use super::{axpy, matvec_acc, matvec_t_acc, outer_acc, sigmoid, GradSink, Init, ParamId, ParamStore, ParamView};
use crate::error::{Error, Result};

pub(crate) const RECURRENT_INIT: Init = Init::Uniform(0.08);

/// GRU weights. `w` is `[3h, in]`, `u` is `[3h, h]`, `b` is `[3h]`; gate
/// blocks are ordered update (z), reset (r), candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Cached activations of one cell application.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruParams {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w: store.add(&format!("{prefix}.w"), &[3 * hidden, input], RECURRENT_INIT)?,
            u: store.add(&format!("{prefix}.u"), &[3 * hidden, hidden], RECURRENT_INIT)?,
            b: store.add(&format!("{prefix}.b"), &[3 * hidden], Init::Zeros)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, view: ParamView<'_>, x: &[f64], h_prev: &[f64]) -> Result<GruStep> {
        if x.len() != self.input {
            return Err(Error::dim("gru input", self.input, x.len()));
        }
        if h_prev.len() != self.hidden {
            return Err(Error::dim("gru state", self.hidden, h_prev.len()));
        }
        let h = self.hidden;
        let (w, u, b) = (view.get(self.w).data(), view.get(self.u).data(), view.get(self.b).data());
        let block_w = |g: usize| &w[g * h * self.input..(g + 1) * h * self.input];
        let block_u = |g: usize| &u[g * h * h..(g + 1) * h * h];

        let mut z = b[..h].to_vec();
        matvec_acc(block_w(0), self.input, x, &mut z);
        matvec_acc(block_u(0), h, h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = b[h..2 * h].to_vec();
        matvec_acc(block_w(1), self.input, x, &mut r);
        matvec_acc(block_u(1), h, h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut cand = b[2 * h..].to_vec();
        matvec_acc(block_w(2), self.input, x, &mut cand);
        matvec_acc(block_u(2), h, &rh, &mut cand);
        cand.iter_mut().for_each(|v| *v = v.tanh());

        let out = (0..h)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * cand[i])
            .collect();
        Ok(GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            cand,
            rh,
            h: out,
        })
    }

    /// Accumulates parameter gradients for `dh` (gradient w.r.t. `step.h`) and
    /// adds the input/previous-state gradients into `dx` and `dh_prev`.
    pub fn step_backward(
        &self,
        view: ParamView<'_>,
        grads: &mut GradSink<'_>,
        step: &GruStep,
        dh: &[f64],
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let h = self.hidden;
        let n_in = self.input;
        let (w, u) = (view.get(self.w).data(), view.get(self.u).data());

        let mut da = vec![0.0; 3 * h];
        let mut d_rh = vec![0.0; h];
        for i in 0..h {
            let dz = dh[i] * (step.cand[i] - step.h_prev[i]);
            let dc = dh[i] * step.z[i];
            dh_prev[i] += dh[i] * (1.0 - step.z[i]);
            da[i] = dz * step.z[i] * (1.0 - step.z[i]);
            da[2 * h + i] = dc * (1.0 - step.cand[i] * step.cand[i]);
        }
        matvec_t_acc(&u[2 * h * h..], h, &da[2 * h..], &mut d_rh);
        for i in 0..h {
            let dr = d_rh[i] * step.h_prev[i];
            dh_prev[i] += d_rh[i] * step.r[i];
            da[h + i] = dr * step.r[i] * (1.0 - step.r[i]);
        }

        matvec_t_acc(w, n_in, &da, dx);
        matvec_t_acc(&u[..2 * h * h], h, &da[..2 * h], dh_prev);

        outer_acc(grads.get_mut(self.w).data_mut(), &da, &step.x);
        {
            let gu = grads.get_mut(self.u).data_mut();
            outer_acc(&mut gu[..2 * h * h], &da[..2 * h], &step.h_prev);
            outer_acc(&mut gu[2 * h * h..], &da[2 * h..], &step.rh);
        }
        axpy(1.0, &da, grads.get_mut(self.b).data_mut());
    }

    /// Runs the cell over a sequence starting from `h0`.
    pub fn run(&self, view: ParamView<'_>, inputs: &[Vec<f64>], h0: &[f64]) -> Result<Vec<GruStep>> {
        let mut steps: Vec<GruStep> = Vec::with_capacity(inputs.len());
        for x in inputs {
            let prev = steps.last().map_or(h0, |s| &s.h);
            let s = self.step(view, x, prev)?;
            steps.push(s);
        }
        Ok(steps)
    }

    /// Backpropagation through time. `d_states[t]` is the gradient arriving at
    /// the output of step `t` from outside the recurrence. Returns per-step
    /// input gradients and the gradient w.r.t. `h0`.
    pub fn run_backward(
        &self,
        view: ParamView<'_>,
        grads: &mut GradSink<'_>,
        steps: &[GruStep],
        d_states: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut dxs = vec![vec![0.0; self.input]; steps.len()];
        let mut carry = vec![0.0; self.hidden];
        for t in (0..steps.len()).rev() {
            let mut dh = d_states[t].clone();
            axpy(1.0, &carry, &mut dh);
            let mut dprev = vec![0.0; self.hidden];
            self.step_backward(view, grads, &steps[t], &dh, &mut dxs[t], &mut dprev);
            carry = dprev;
        }
        (dxs, carry)
    }
}

/// One GRU update `h_t = (1 - z) ⊙ h_prev + z ⊙ tanh(W x + U (r ⊙ h_prev) + b)`.
pub fn gru_cell(store: &ParamStore, params: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    Ok(params.step(store.view(), x, h_prev)?.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_everything_gives_zero() {
        let mut s = ParamStore::new(0);
        let g = GruParams::register(&mut s, "g", 3, 2).unwrap();
        for id in s.ids().collect::<Vec<_>>() {
            s.value_mut(id).fill(0.0);
        }
        let st = g.step(s.view(), &[0.0; 3], &[0.0; 2]).unwrap();
        assert_eq!(st.h, vec![0.0, 0.0]);
        assert_eq!(st.z, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_state_gives_gated_candidate() {
        let mut s = ParamStore::new(4);
        let g = GruParams::register(&mut s, "g", 3, 2).unwrap();
        let st = g.step(s.view(), &[0.3, -0.2, 0.9], &[0.0; 2]).unwrap();
        for i in 0..2 {
            assert_eq!(st.h[i], st.z[i] * st.cand[i]);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut s = ParamStore::new(0);
        let g = GruParams::register(&mut s, "g", 3, 2).unwrap();
        assert!(matches!(
            g.step(s.view(), &[0.0; 2], &[0.0; 2]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sequence_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..20 {
            let mut s = ParamStore::new(seed);
            let g = GruParams::register(&mut s, "g", 3, 4).unwrap();
            for id in s.ids().collect::<Vec<_>>() {
                s.value_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
            }
            let xs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 3, 1.0)).collect();
            let h0 = random_vec(&mut rng, 4, 0.5);
            let proj: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 4, 1.0)).collect();
            let loss = |s: &ParamStore| -> f64 {
                let steps = g.run(s.view(), &xs, &h0).unwrap();
                steps.iter().zip(&proj).map(|(st, p)| crate::numerics::dot(&st.h, p)).sum()
            };
            s.zero_grads();
            let steps = g.run(s.view(), &xs, &h0).unwrap();
            let (view, mut sink) = s.split();
            g.run_backward(view, &mut sink, &steps, &proj);
            let report = grad_check(&mut s, 1e-5, loss);
            assert!(report.max_rel_error < 1e-6, "{report:?}");
        }
    }
}
