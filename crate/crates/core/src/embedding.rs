//! Dense embedding tables, vector similarity and exact nearest-neighbor ranking.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u32 = 1;

/// Dense `dim`-dimensional vectors keyed by entity id, kept in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_rows<I, V>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, V)>,
        V: AsRef<[f64]>,
    {
        let mut t = EmbeddingTable::new(dim);
        for (id, v) in rows {
            t.push(id, v.as_ref())?;
        }
        Ok(t)
    }

    /// Builds a table from a row-major buffer without copying.
    pub fn from_flat(dim: usize, ids: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: data.len(),
            });
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Format(format!("non-finite embedding component {x}")));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::Format(format!("duplicate embedding id {id}")));
            }
        }
        Ok(EmbeddingTable {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn push(&mut self, id: u64, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite component {x} in row {id}"
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Format(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.index.get(&id).map(|&i| self.row(i))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.ids.iter().copied().zip(self.data.chunks(self.dim.max(1)))
    }

    /// Rows rounded to single precision, as they would be after a file roundtrip.
    pub fn rounded_to_f32(&self) -> EmbeddingTable {
        let mut t = self.clone();
        round_to_f32(&mut t.data);
        t
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(EMB_MAGIC)?;
        w.write_all(&EMB_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (id, row) in self.iter() {
            w.write_all(&id.to_le_bytes())?;
            for &x in row {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != EMB_MAGIC {
            return Err(Error::BadMagic {
                what: "embedding file",
                expected: "EMB1",
            });
        }
        let version = read_u32(&mut r)?;
        if version != EMB_VERSION {
            return Err(Error::VersionMismatch {
                what: "embedding file",
                found: version,
            });
        }
        let dim = read_u32(&mut r)? as usize;
        let rows = read_u64(&mut r)? as usize;
        let mut ids = Vec::with_capacity(rows.min(1 << 24));
        let mut data = Vec::with_capacity((rows * dim).min(1 << 26));
        let mut buf = vec![0u8; 4 * dim];
        for _ in 0..rows {
            ids.push(read_u64(&mut r)?);
            read_exact(&mut r, &mut buf)?;
            data.extend(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
            );
        }
        EmbeddingTable::from_flat(dim, ids, data)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (id, row) in self.iter() {
            write!(w, "{id}\t")?;
            for (j, &x) in row.iter().enumerate() {
                if j > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{}", x as f32)?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::parse("embedding text", n + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, vals) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse("embedding text", n + 1, "missing tab"))?;
            let id: u64 = id
                .parse()
                .map_err(|_| Error::parse("embedding text", n + 1, "bad id"))?;
            let v = vals
                .split(',')
                .map(|x| x.trim().parse::<f32>().map(f64::from))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse("embedding text", n + 1, "bad component"))?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(v.len()));
            t.push(id, &v)?;
        }
        Ok(table.unwrap_or_else(|| EmbeddingTable::new(0)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_binary(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::read_binary(BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Truncated {
        what: "embedding file",
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    #[default]
    Cosine,
    InnerProduct,
}

/// A cosine value; `degenerate` is set when either input is the zero vector,
/// in which case `value` is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

/// Rounds in place to the nearest single-precision value, the precision of stored files.
pub fn round_to_f32(values: &mut [f64]) {
    for x in values {
        *x = *x as f32 as f64;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Cosine {
    debug_assert_eq!(a.len(), b.len());
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Cosine {
            value: 0.0,
            degenerate: true,
        };
    }
    Cosine {
        value: (dot(a, b) / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Mean of a set of rows. `is_null` marks the all-zero fallback used when no id resolves.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanEmbedding {
    pub vector: Vec<f64>,
    pub is_null: bool,
    pub missing: usize,
}

pub fn mean_embedding<I>(ids: I, table: &EmbeddingTable) -> MeanEmbedding
where
    I: IntoIterator<Item = u64>,
{
    weighted_mean_embedding(ids.into_iter().map(|id| (id, 1.0)), table)
}

/// Weighted mean of rows; weights are typically occurrence counts.
pub fn weighted_mean_embedding<I>(ids: I, table: &EmbeddingTable) -> MeanEmbedding
where
    I: IntoIterator<Item = (u64, f64)>,
{
    let mut acc = vec![0.0; table.dim()];
    let mut total = 0.0;
    let mut missing = 0;
    for (id, w) in ids {
        match table.get(id) {
            Some(row) => {
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += w * x;
                }
                total += w;
            }
            None => missing += 1,
        }
    }
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
        MeanEmbedding {
            vector: acc,
            is_null: false,
            missing,
        }
    } else {
        MeanEmbedding {
            vector: vec![0.0; table.dim()],
            is_null: true,
            missing,
        }
    }
}

/// Orders by score descending, then id ascending.
pub fn rank_order(a: &(u64, f64), b: &(u64, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Exact top-`k` rows by cosine similarity to `query`, ties broken by ascending id.
pub fn top_k_by_similarity(
    query: &[f64],
    table: &EmbeddingTable,
    k: usize,
    exclude: &HashSet<u64>,
) -> Vec<(u64, f64)> {
    top_k_with(query, table, k, exclude, Similarity::Cosine)
}

pub fn top_k_with(
    query: &[f64],
    table: &EmbeddingTable,
    k: usize,
    exclude: &HashSet<u64>,
    similarity: Similarity,
) -> Vec<(u64, f64)> {
    if k == 0 || table.is_empty() {
        return Vec::new();
    }
    let qn = norm(query);
    let scores = par::map_range(table.len(), |i| {
        let row = table.row(i);
        match similarity {
            Similarity::InnerProduct => dot(query, row),
            Similarity::Cosine => {
                let rn = norm(row);
                if qn == 0.0 || rn == 0.0 {
                    0.0
                } else {
                    (dot(query, row) / (qn * rn)).clamp(-1.0, 1.0)
                }
            }
        }
    });
    let mut scored: Vec<(u64, f64)> = table
        .ids()
        .iter()
        .copied()
        .zip(scores)
        .filter(|(id, _)| !exclude.contains(id))
        .collect();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}
