use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column norm below which a column is treated as linearly dependent on its predecessors.
pub const RANK_TOL: f64 = 1e-10;

/// Modified Gram-Schmidt over the columns of `a`, with one re-orthogonalization sweep per
/// column. The first column keeps its direction.
pub fn gram_schmidt(a: &Tensor) -> Result<Tensor> {
    let (rows, cols) = a.dims2()?;
    if cols > rows {
        return Err(Error::Degenerate(format!("{cols} columns cannot be independent in {rows} dimensions")));
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v = a.column(j);
        for _ in 0..2 {
            for prev in &q {
                let dot: f64 = prev.iter().zip(&v).map(|(p, x)| p * x).sum();
                v.iter_mut().zip(prev).for_each(|(x, p)| *x -= dot * p);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm >= RANK_TOL) {
            return Err(Error::Degenerate(format!("column {j} is linearly dependent (residual norm {norm:e})")));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    let mut out = Tensor::zeros(&[rows, cols]);
    for (j, col) in q.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            out.set(i, j, x);
        }
    }
    Ok(out)
}

/// `max |AᵀA − I|`.
pub fn orthogonality_error(a: &Tensor) -> Result<f64> {
    let ata = a.transpose()?.matmul(a)?;
    let n = ata.dims2()?.0;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ata.at(i, j) - target).abs());
        }
    }
    Ok(worst)
}
