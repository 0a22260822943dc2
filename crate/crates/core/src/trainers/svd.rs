use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ids::TrackId;
use crate::sparse::CsrMatrix;

/// How singular values are folded into row embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvdScaling {
    U,
    USigma,
    #[default]
    USqrtSigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvdConfig {
    pub dim: usize,
    pub oversample: usize,
    pub max_iter: usize,
    /// Convergence: `|S v_j - s_j u_j| <= tol * s_1` for every kept triplet.
    pub tol: f64,
    pub seed: u64,
    pub scaling: SvdScaling,
}

impl Default for SvdConfig {
    fn default() -> Self {
        SvdConfig {
            dim: 128,
            oversample: 10,
            max_iter: 100,
            tol: 1e-10,
            seed: 0,
            scaling: SvdScaling::USqrtSigma,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    /// rows x dim, unit columns (zero for padded columns).
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// cols x dim.
    pub v: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Trailing columns zeroed because they exceed the numerical rank.
    pub padded: usize,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Randomized subspace iteration for the leading `dim` singular triplets of a sparse matrix.
/// Iterates until every kept triplet's residual is below tolerance or `max_iter` is reached.
pub fn randomized_svd(s: &CsrMatrix, cfg: &SvdConfig) -> Result<TruncatedSvd> {
    let d = cfg.dim;
    let order = s.rows().min(s.cols());
    if d == 0 {
        return Err(Error::InvalidConfig("SVD dimension must be >= 1".into()));
    }
    if d > order {
        return Err(Error::InvalidConfig(format!(
            "SVD dimension {d} exceeds matrix order {order}"
        )));
    }
    let width = (d + cfg.oversample).min(order);
    let st = s.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = orthonormalize(s.mul_dense(&gaussian(s.cols(), width, &mut rng)));

    let mut iterations = 0;
    loop {
        iterations += 1;
        // w = S' Q, so Q' S = w'
        let w = st.mul_dense(&q);
        let svd = w.clone().svd(true, true);
        let vw = svd.u.expect("u requested");
        let uw = svd.v_t.expect("v_t requested").transpose();
        let mut order_idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        order_idx.sort_by(|&a, &b| {
            svd.singular_values[b]
                .total_cmp(&svd.singular_values[a])
                .then(a.cmp(&b))
        });
        let keep = &order_idx[..d];
        let sigma: Vec<f64> = keep.iter().map(|&i| svd.singular_values[i]).collect();
        let u = &q * uw.select_columns(keep);
        let v = vw.select_columns(keep);

        let top = sigma[0];
        let rank_floor = top * 1e-10 * (order as f64).sqrt();
        let effective = sigma.iter().take_while(|&&x| x > rank_floor).count();
        let sv = s.mul_dense(&v);
        let mut worst = 0.0f64;
        for j in 0..effective {
            let r = (sv.column(j) - u.column(j) * sigma[j]).norm();
            worst = worst.max(r);
        }
        let converged = top == 0.0 || worst <= cfg.tol * top;
        if converged || iterations >= cfg.max_iter {
            if !converged {
                warn!(
                    "randomized SVD stopped after {iterations} iterations (residual {:.3e})",
                    worst / top
                );
            }
            return Ok(finish(u, sigma, v, effective, iterations, converged));
        }
        let z = orthonormalize(w);
        q = orthonormalize(s.mul_dense(&z));
    }
}

fn finish(
    mut u: DMatrix<f64>,
    mut sigma: Vec<f64>,
    mut v: DMatrix<f64>,
    effective: usize,
    iterations: usize,
    converged: bool,
) -> TruncatedSvd {
    let d = sigma.len();
    if effective < d {
        warn!(
            "requested dimension {d} exceeds numerical rank {effective}; padding with zero columns"
        );
    }
    for j in 0..d {
        if j >= effective {
            u.column_mut(j).fill(0.0);
            v.column_mut(j).fill(0.0);
            sigma[j] = 0.0;
            continue;
        }
        // largest-magnitude component made positive; first index wins ties
        let mut best = 0;
        for i in 1..u.nrows() {
            if u[(i, j)].abs() > u[(best, j)].abs() {
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    TruncatedSvd {
        u,
        sigma,
        v,
        iterations,
        converged,
        padded: d - effective,
    }
}

/// Track embeddings from a truncated SVD of a (typically SPPMI) matrix.
pub fn train_svd_embeddings(
    s: &CsrMatrix,
    tracks: &[TrackId],
    cfg: &SvdConfig,
) -> Result<EmbeddingTable> {
    if tracks.len() != s.rows() {
        return Err(Error::DimensionMismatch {
            expected: s.rows(),
            got: tracks.len(),
        });
    }
    let svd = randomized_svd(s, cfg)?;
    let d = cfg.dim;
    let scale: Vec<f64> = svd
        .sigma
        .iter()
        .map(|&x| match cfg.scaling {
            SvdScaling::U => 1.0,
            SvdScaling::USigma => x,
            SvdScaling::USqrtSigma => x.sqrt(),
        })
        .collect();
    let mut data = Vec::with_capacity(tracks.len() * d);
    for i in 0..tracks.len() {
        for j in 0..d {
            data.push(svd.u[(i, j)] * scale[j]);
        }
    }
    EmbeddingTable::from_flat(d, tracks.iter().map(|t| t.0).collect(), data)
}
