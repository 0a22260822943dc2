use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AffinityMatrix;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::par;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsConfig {
    pub dim: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Warn when a row's normal-equation condition estimate exceeds this.
    pub max_condition: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            dim: 256,
            lambda: 0.1,
            alpha: 40.0,
            iterations: 15,
            seed: 0,
            max_condition: 1e12,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "ALS needs dim >= 1 and iterations >= 1".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(
                "ALS lambda and alpha must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AlsFit {
    pub users: EmbeddingTable,
    pub tracks: EmbeddingTable,
    /// Weighted objective at initialization and after every half-step.
    pub objective: Vec<f64>,
}

/// Weighted implicit-feedback objective
/// `sum_{u,i} c_ui (p_ui - x_u.y_i)^2 + lambda (|X|^2 + |Y|^2)`
/// with `p = 1[score > 0]` and `c = 1 + alpha * score`.
///
/// Unobserved cells contribute `(x_u.y_i)^2`, summed in closed form as `tr(X'X Y'Y)`.
pub fn als_objective(
    scores: &CsrMatrix,
    users: &DMatrix<f64>,
    items: &DMatrix<f64>,
    alpha: f64,
    lambda: f64,
) -> f64 {
    let xtx = users.transpose() * users;
    let yty = items.transpose() * items;
    let mut total = xtx.component_mul(&yty).sum();
    for (u, i, s) in scores.iter() {
        let pred = users.row(u).dot(&items.row(i));
        let c = 1.0 + alpha * s;
        total += c * (1.0 - pred).powi(2) - pred * pred;
    }
    total + lambda * (users.norm_squared() + items.norm_squared())
}

fn solve_side(
    obs: &CsrMatrix,
    fixed: &DMatrix<f64>,
    cfg: &AlsConfig,
) -> Result<DMatrix<f64>> {
    let d = fixed.ncols();
    let mut gram = fixed.transpose() * fixed;
    for k in 0..d {
        gram[(k, k)] += cfg.lambda;
    }
    let solved = par::map_range(obs.rows(), |r| {
        let (idx, val) = obs.row(r);
        let mut a = gram.clone();
        let mut b = DVector::<f64>::zeros(d);
        for (&j, &s) in idx.iter().zip(val) {
            let c = 1.0 + cfg.alpha * s;
            let y = fixed.row(j);
            for p in 0..d {
                let yp = y[p];
                b[p] += c * yp;
                for q in 0..d {
                    a[(p, q)] += (c - 1.0) * yp * y[q];
                }
            }
        }
        let chol = a.cholesky().ok_or(Error::SingularSystem { row: r })?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let cond = (hi / lo).powi(2);
        Ok((chol.solve(&b), cond))
    });
    let mut out = DMatrix::zeros(obs.rows(), d);
    let mut worst = 0.0f64;
    for (r, res) in solved.into_iter().enumerate() {
        let (x, cond) = res?;
        worst = worst.max(cond);
        out.set_row(r, &x.transpose());
    }
    if worst > cfg.max_condition {
        warn!("ALS normal equations poorly conditioned (estimate {worst:.3e})");
    }
    Ok(out)
}

/// Implicit-feedback alternating least squares. Each half-step solves every row's
/// ridge system exactly, so the weighted objective never increases.
pub fn train_als(m: &AffinityMatrix, cfg: &AlsConfig) -> Result<AlsFit> {
    cfg.validate()?;
    let (n, k) = (m.scores.rows(), m.scores.cols());
    if m.scores.nnz() == 0 {
        return Err(Error::InvalidConfig("affinity matrix is empty".into()));
    }
    if cfg.dim > n.min(k) {
        return Err(Error::InvalidConfig(format!(
            "ALS dim {} exceeds matrix dimensions {n}x{k}",
            cfg.dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init = |rows: usize| {
        DMatrix::from_fn(rows, cfg.dim, |_, _| {
            0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        })
    };
    let mut x = init(n);
    let mut y = init(k);
    let scores_t = m.scores.transpose();
    let mut objective = vec![als_objective(&m.scores, &x, &y, cfg.alpha, cfg.lambda)];
    for _ in 0..cfg.iterations {
        x = solve_side(&m.scores, &y, cfg)?;
        objective.push(als_objective(&m.scores, &x, &y, cfg.alpha, cfg.lambda));
        y = solve_side(&scores_t, &x, cfg)?;
        objective.push(als_objective(&m.scores, &x, &y, cfg.alpha, cfg.lambda));
    }
    let to_table = |ids: Vec<u64>, f: &DMatrix<f64>| {
        let data: Vec<f64> = (0..f.nrows())
            .flat_map(|r| f.row(r).iter().copied().collect::<Vec<_>>())
            .collect();
        EmbeddingTable::from_flat(cfg.dim, ids, data)
    };
    Ok(AlsFit {
        users: to_table(m.users.iter().map(|u| u.0).collect(), &x)?,
        tracks: to_table(m.tracks.iter().map(|t| t.0).collect(), &y)?,
        objective,
    })
}
