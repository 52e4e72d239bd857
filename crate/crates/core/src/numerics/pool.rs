use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

/// Column-wise mean or max over rows. No rows gives the zero vector.
pub fn pool<R: AsRef<[f64]>>(rows: &[R], width: usize, mode: PoolMode) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; width];
    }
    match mode {
        PoolMode::Mean => {
            let mut out = vec![0.0; width];
            for r in rows {
                for (o, v) in out.iter_mut().zip(r.as_ref()) {
                    *o += v;
                }
            }
            let n = rows.len() as f64;
            out.iter_mut().for_each(|v| *v /= n);
            out
        }
        PoolMode::Max => {
            let mut out = rows[0].as_ref().to_vec();
            for r in &rows[1..] {
                for (o, v) in out.iter_mut().zip(r.as_ref()) {
                    if *v > *o {
                        *o = *v;
                    }
                }
            }
            out
        }
    }
}

/// Per-row gradients of [`pool`]. Max routes each column to its first maximal row.
pub fn pool_backward<R: AsRef<[f64]>>(rows: &[R], mode: PoolMode, d_out: &[f64]) -> Vec<Vec<f64>> {
    let width = d_out.len();
    let mut grads = vec![vec![0.0; width]; rows.len()];
    if rows.is_empty() {
        return grads;
    }
    match mode {
        PoolMode::Mean => {
            let w = 1.0 / rows.len() as f64;
            for g in &mut grads {
                for (gi, d) in g.iter_mut().zip(d_out) {
                    *gi = d * w;
                }
            }
        }
        PoolMode::Max => {
            for (j, d) in d_out.iter().enumerate() {
                let mut best = 0;
                for i in 1..rows.len() {
                    if rows[i].as_ref()[j] > rows[best].as_ref()[j] {
                        best = i;
                    }
                }
                grads[best][j] += d;
            }
        }
    }
    grads
}

/// Softmax restricted to `mask`; masked-out entries get exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::dim("softmax mask", logits.len(), mask.len()));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Contract("softmax mask has no admissible entry".into()));
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(probs)
}

/// `Σ_{g ∈ gold} -log p(g)` under the masked softmax, with its gradient
/// w.r.t. the logits.
pub fn softmax_nll(logits: &[f64], mask: &[bool], gold: &[usize]) -> Result<(f64, Vec<f64>)> {
    if let Some(g) = gold.iter().find(|g| !mask.get(**g).copied().unwrap_or(false)) {
        return Err(Error::Contract(format!("gold index {g} is outside the mask")));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let probs = masked_softmax(logits, mask)?;
    let log_z = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(l, _)| (l - max).exp())
            .sum::<f64>()
            .ln();
    let mut loss = 0.0;
    let n = gold.len() as f64;
    let mut grad: Vec<f64> = probs.iter().map(|p| n * p).collect();
    for g in gold {
        loss += log_z - logits[*g];
        grad[*g] -= 1.0;
    }
    Ok((loss, grad))
}
