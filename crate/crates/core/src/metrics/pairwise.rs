use rayon::prelude::*;

use super::{DistanceMatrix, DistanceModel, PairMode};
use crate::diffcore::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::norms::{Head, Pooling};

/// Entry `(i, j) = d(X_i, Y_j)`, evaluated one row of pairs at a time.
pub fn pairwise_naive(model: &DistanceModel, xs: &Tensor, ys: &Tensor) -> Result<DistanceMatrix> {
    let (n, m, d) = (xs.rows(), ys.rows(), xs.cols());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let repeated = Tensor::new(vec![m, d], xs.row_slice(i).repeat(m))?;
            model.distances(&repeated, ys)
        })
        .collect::<Result<_>>()?;
    let symmetric = model.spec().head.is_symmetric() && model.spec().mode == PairMode::Metric && n == m;
    DistanceMatrix::new(n, m, rows.concat(), symmetric)
}

/// Symmetric Wide Norm distances through `‖a − b‖² = ‖a‖² + ‖b‖² − 2aᵀb`
/// per component, so the head never sees the `n·m` difference vectors.
pub fn pairwise_widenorm_fast(model: &DistanceModel, xs: &Tensor, ys: &Tensor) -> Result<DistanceMatrix> {
    let wide = match (model.spec().mode, model.head()) {
        (PairMode::Metric, Head::Wide(w)) if !w.spec().asymmetric => w,
        _ => {
            return Err(Error::Unsupported(format!(
                "fast pairwise path needs a symmetric wide norm head, got {}",
                model.spec().head.label()
            )))
        }
    };
    let (ex, ey) = (model.embed(xs)?, model.embed(ys)?);
    let (n, m, e) = (ex.rows(), ey.rows(), ex.cols());
    let spec = wide.spec();
    let (k, md) = (spec.components, spec.component_dim);
    let rows = k * md;
    let w = model.params().tensor(wide.weight()).data();

    // Projections: n×(k·md) and m×(k·md).
    let mut px = vec![0.0; n * rows];
    let mut py = vec![0.0; m * rows];
    gemm(false, true, n, e, rows, 1.0, ex.data(), w, 0.0, &mut px);
    gemm(false, true, m, e, rows, 1.0, ey.data(), w, 0.0, &mut py);

    let sq = |p: &[f64], count: usize| -> Vec<f64> {
        let mut out = vec![0.0; count * k];
        for (r, row) in p.chunks_exact(rows).enumerate() {
            for (c, block) in row.chunks_exact(md).enumerate() {
                out[r * k + c] = block.iter().map(|v| v * v).sum();
            }
        }
        out
    };
    let (sx, sy) = (sq(&px, n), sq(&py, m));

    let alpha = match spec.pooling {
        Pooling::Mean => 0.0,
        Pooling::Max => 1.0,
        Pooling::MaxMean => {
            let id = wide.pool().alpha().expect("maxmean pool owns alpha");
            model.params().tensor(id).data()[0]
        }
    };

    // Running max and sum over components, pooled like `maxmean`.
    let mut best = vec![f64::NEG_INFINITY; n * m];
    let mut total = vec![0.0; n * m];
    let mut bx = vec![0.0; n * md];
    let mut by = vec![0.0; m * md];
    let mut cross = vec![0.0; n * m];
    for c in 0..k {
        for (dst, src) in bx.chunks_exact_mut(md).zip(px.chunks_exact(rows)) {
            dst.copy_from_slice(&src[c * md..(c + 1) * md]);
        }
        for (dst, src) in by.chunks_exact_mut(md).zip(py.chunks_exact(rows)) {
            dst.copy_from_slice(&src[c * md..(c + 1) * md]);
        }
        gemm(false, true, n, md, m, 1.0, &bx, &by, 0.0, &mut cross);
        for i in 0..n {
            let xi = sx[i * k + c];
            let row = i * m..(i + 1) * m;
            for (((b, t), &cr), j) in best[row.clone()].iter_mut().zip(&mut total[row.clone()]).zip(&cross[row]).zip(0..) {
                let v = (xi + sy[j * k + c] - 2.0 * cr).max(0.0).sqrt();
                *b = b.max(v);
                *t += v;
            }
        }
    }
    let values = best.iter().zip(&total).map(|(b, t)| alpha * b + (1.0 - alpha) * (t / k as f64)).collect();
    DistanceMatrix::new(n, m, values, n == m)
}
