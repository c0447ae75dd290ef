//! Co-regularization across model branches: the mean KL divergence from the
//! branch consensus to each branch's prediction.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Smoothing constant inside the KL logarithm.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Branch consensus `q = mean_m p_m`, written as an offset from the first
/// branch so identical branches reproduce it bit for bit.
fn consensus_row(rows: &[&[f64]]) -> Vec<f64> {
    let m = rows.len() as f64;
    let first = rows[0];
    (0..first.len())
        .map(|c| first[c] + rows.iter().map(|r| (r[c] - first[c]) / m).sum::<f64>())
        .collect()
}

fn row_term(q: &[f64], rows: &[&[f64]], epsilon: f64) -> f64 {
    rows.iter()
        .map(|p| {
            q.iter()
                .zip(p.iter())
                .map(|(&qc, &pc)| qc * ((qc + epsilon) / (pc + epsilon)).ln())
                .sum::<f64>()
        })
        .sum()
}

/// `(1 / MN) sum_i sum_m sum_c q_ic log((q_ic + eps) / (p_mic + eps))` for
/// `branch_probs` shaped `M x N x C`.
pub fn coregularization_loss(branch_probs: &[Vec<Vec<f64>>], epsilon: f64) -> Result<f64> {
    let m = branch_probs.len();
    if m == 0 {
        return Err(Error::ShapeMismatch("no branches".into()));
    }
    let n = branch_probs[0].len();
    let c = branch_probs[0].first().map_or(0, Vec::len);
    for (b, branch) in branch_probs.iter().enumerate() {
        if branch.len() != n || branch.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch(format!(
                "branch {b} does not match the {n} x {c} shape of branch 0"
            )));
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        let rows: Vec<&[f64]> = branch_probs.iter().map(|b| b[i].as_slice()).collect();
        let q = consensus_row(&rows);
        total += row_term(&q, &rows, epsilon);
    }
    Ok(total / (m * n) as f64)
}

/// Branch consensus of row-wise probability matrices.
pub fn consensus(probs: &[Array2<f64>]) -> Array2<f64> {
    let (n, c) = probs[0].dim();
    let mut q = Array2::zeros((n, c));
    for i in 0..n {
        let rows: Vec<&[f64]> = probs
            .iter()
            .map(|p| p.row(i).to_slice().expect("standard layout"))
            .collect();
        for (k, v) in consensus_row(&rows).into_iter().enumerate() {
            q[[i, k]] = v;
        }
    }
    q
}

/// Loss over per-branch `N x C` probability matrices together with its gradient
/// with respect to each branch's pre-softmax logits. The gradient accounts for
/// the dependence of the consensus on every branch.
pub fn coregularization_with_logit_grad(probs: &[Array2<f64>], epsilon: f64) -> (f64, Vec<Array2<f64>>) {
    let m = probs.len();
    let (n, c) = probs[0].dim();
    if m == 1 || n == 0 {
        return (0.0, vec![Array2::zeros((n, c)); m]);
    }
    let scale = 1.0 / (m * n) as f64;
    let q = consensus(probs);
    let mut loss = 0.0;
    let mut grads = vec![Array2::zeros((n, c)); m];
    let mf = m as f64;
    for i in 0..n {
        let rows: Vec<&[f64]> = probs
            .iter()
            .map(|p| p.row(i).to_slice().expect("standard layout"))
            .collect();
        let qi = q.row(i);
        loss += row_term(qi.as_slice().expect("standard layout"), &rows, epsilon);

        // d loss / d q_c, summed over all branch terms.
        let dq: Vec<f64> = (0..c)
            .map(|k| {
                let qc = qi[k];
                let log_p_sum: f64 = rows.iter().map(|r| (r[k] + epsilon).ln()).sum();
                mf * ((qc + epsilon).ln() + qc / (qc + epsilon)) - log_p_sum
            })
            .collect();
        for (b, row) in rows.iter().enumerate() {
            let dp: Vec<f64> = (0..c)
                .map(|k| scale * (dq[k] / mf - qi[k] / (row[k] + epsilon)))
                .collect();
            let dot: f64 = dp.iter().zip(row.iter()).map(|(g, p)| g * p).sum();
            for k in 0..c {
                grads[b][[i, k]] = row[k] * (dp[k] - dot);
            }
        }
    }
    (loss * scale, grads)
}
