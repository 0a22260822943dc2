use std::collections::BTreeMap;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::ids::TrackId;
use crate::sparse::CsrMatrix;

/// Symmetric track x track co-occurrence counts with marginals and total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceCounts {
    pub tracks: Vec<TrackId>,
    pub counts: CsrMatrix,
    pub marginals: Vec<f64>,
    pub total: f64,
}

impl CooccurrenceCounts {
    /// Wraps a symmetric count matrix, deriving marginals (row sums) and the total.
    pub fn from_counts(tracks: Vec<TrackId>, counts: CsrMatrix) -> Result<Self> {
        if counts.rows() != tracks.len() || !counts.is_symmetric(0.0) {
            return Err(Error::InvalidConfig(
                "co-occurrence counts must be a symmetric square matrix over the track list".into(),
            ));
        }
        if counts.iter().any(|(_, _, v)| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig("co-occurrence counts must be nonnegative".into()));
        }
        let marginals = counts.row_sums();
        let total = marginals.iter().sum();
        Ok(CooccurrenceCounts {
            tracks,
            counts,
            marginals,
            total,
        })
    }

    /// Counts ordered pairs of distinct tracks that appear in the same collection.
    /// Each collection is deduplicated first.
    pub fn from_collections<'a, I>(catalog: &Catalog, collections: I) -> Self
    where
        I: IntoIterator<Item = &'a [TrackId]>,
    {
        let tracks: Vec<TrackId> = catalog.track_ids().collect();
        let pos: BTreeMap<TrackId, usize> =
            tracks.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut triplets = Vec::new();
        for coll in collections {
            let mut idx: Vec<usize> = coll.iter().filter_map(|t| pos.get(t).copied()).collect();
            idx.sort_unstable();
            idx.dedup();
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    triplets.push((i, j, 1.0));
                    triplets.push((j, i, 1.0));
                }
            }
        }
        let counts = CsrMatrix::from_triplets(tracks.len(), tracks.len(), triplets);
        CooccurrenceCounts::from_counts(tracks, counts).expect("symmetric by construction")
    }

    pub fn from_playlists(catalog: &Catalog) -> Self {
        let lists: Vec<&[TrackId]> = catalog.playlists().map(|(_, l)| l).collect();
        CooccurrenceCounts::from_collections(catalog, lists)
    }
}

/// `max(log(n * c_ij / (c_i * c_j)) - log k, 0)`.
pub fn sppmi_entry(c_ij: f64, c_i: f64, c_j: f64, n: f64, shift_k: f64) -> f64 {
    if c_ij <= 0.0 {
        return 0.0;
    }
    ((n * c_ij / (c_i * c_j)).ln() - shift_k.ln()).max(0.0)
}

/// Shifted positive PMI matrix; zero entries are not stored.
pub fn build_sppmi(c: &CooccurrenceCounts, shift_k: f64) -> Result<CsrMatrix> {
    if !(shift_k >= 1.0) {
        return Err(Error::InvalidConfig(format!("SPPMI shift must be >= 1, got {shift_k}")));
    }
    if !(c.total > 0.0) {
        return Err(Error::InvalidConfig("co-occurrence total must be positive".into()));
    }
    Ok(c.counts.map_values(|i, j, v| {
        sppmi_entry(v, c.marginals[i], c.marginals[j], c.total, shift_k)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u64) -> Vec<TrackId> {
        (0..n).map(TrackId).collect()
    }

    #[test]
    fn hand_evaluated_entry() {
        // c_12 = 2, c_1 = 4, c_2 = 2, N = 8
        let counts = CsrMatrix::from_triplets(3, 3, vec![(0, 1, 2.0), (1, 0, 2.0), (0, 2, 2.0), (2, 0, 2.0)]);
        let c = CooccurrenceCounts::from_counts(ids(3), counts).unwrap();
        assert_eq!(c.marginals, vec![4.0, 2.0, 2.0]);
        assert_eq!(c.total, 8.0);
        let s = build_sppmi(&c, 1.0).unwrap();
        assert!((s.get(0, 1) - 2f64.ln()).abs() < 1e-12);
        assert!((sppmi_entry(2.0, 4.0, 2.0, 8.0, 1.0) - 0.693_147_180_559_945_3).abs() < 1e-15);
        // PMI = log 2 < log 3, so the shifted value is clipped away
        assert_eq!(build_sppmi(&c, 3.0).unwrap().nnz(), 0);
    }

    #[test]
    fn diagonal_only() {
        let counts = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (1, 1, 2.0), (2, 2, 5.0)]);
        let c = CooccurrenceCounts::from_counts(ids(3), counts).unwrap();
        let s = build_sppmi(&c, 1.0).unwrap();
        for (i, cii) in [1.0f64, 2.0, 5.0].into_iter().enumerate() {
            let expect = (8.0 * cii / (cii * cii)).ln().max(0.0);
            assert!((s.get(i, i) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_and_bad_shift() {
        let counts = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]);
        assert!(CooccurrenceCounts::from_counts(ids(2), counts).is_err());
        let counts = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        let c = CooccurrenceCounts::from_counts(ids(2), counts).unwrap();
        assert!(build_sppmi(&c, 0.5).is_err());
        let empty = CooccurrenceCounts::from_counts(ids(2), CsrMatrix::zeros(2, 2)).unwrap();
        assert!(build_sppmi(&empty, 1.0).is_err());
    }
}
