//! Segmentation container: `SEG1` header (version, k, dim, metric), the centroid block
//! in EMB1 layout, `(user, segment)` pairs, per-segment top-item lists and a JSON
//! trailer with segment profiles. All integers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::segments::{AssignMetric, SegmentProfile, Segmentation};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ids::{TrackId, UserId};

const MAGIC: &[u8; 4] = b"SEG1";
const VERSION: u32 = 1;
const WHAT: &str = "segmentation file";

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| Error::Truncated { what: WHAT })?;
    Ok(b)
}

impl Segmentation {
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.k() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&[match self.metric {
            AssignMetric::Euclidean => 0u8,
            AssignMetric::Cosine => 1,
        }])?;
        self.centroids.write_binary(&mut w)?;
        w.write_all(&(self.assignment.len() as u64).to_le_bytes())?;
        for (u, &s) in &self.assignment {
            w.write_all(&u.0.to_le_bytes())?;
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for items in &self.top_items {
            w.write_all(&(items.len() as u32).to_le_bytes())?;
            for t in items {
                w.write_all(&t.0.to_le_bytes())?;
            }
        }
        let profiles = serde_json::to_vec(&self.profiles).expect("profiles serialize");
        w.write_all(&(profiles.len() as u64).to_le_bytes())?;
        w.write_all(&profiles)
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        if &take::<4>(&mut r)? != MAGIC {
            return Err(Error::BadMagic {
                what: WHAT,
                expected: "SEG1",
            });
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(Error::VersionMismatch { what: WHAT, found: version });
        }
        let k = u32::from_le_bytes(take(&mut r)?) as usize;
        let dim = u32::from_le_bytes(take(&mut r)?) as usize;
        let metric = match take::<1>(&mut r)?[0] {
            0 => AssignMetric::Euclidean,
            1 => AssignMetric::Cosine,
            m => return Err(Error::Format(format!("unknown assignment metric {m}"))),
        };
        let centroids = EmbeddingTable::read_binary(&mut r)?;
        if centroids.len() != k || centroids.dim() != dim {
            return Err(Error::Format(format!(
                "centroid block is {}x{}, header says {k}x{dim}",
                centroids.len(),
                centroids.dim()
            )));
        }
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut assignment = std::collections::BTreeMap::new();
        for _ in 0..n {
            let u = u64::from_le_bytes(take(&mut r)?);
            let s = u32::from_le_bytes(take(&mut r)?) as usize;
            assignment.insert(UserId(u), s);
        }
        let mut top_items = Vec::with_capacity(k);
        for _ in 0..k {
            let len = u32::from_le_bytes(take(&mut r)?) as usize;
            let mut items = Vec::with_capacity(len);
            for _ in 0..len {
                items.push(TrackId(u64::from_le_bytes(take(&mut r)?)));
            }
            top_items.push(items);
        }
        let plen = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut pbuf = vec![0u8; plen];
        r.read_exact(&mut pbuf).map_err(|_| Error::Truncated { what: WHAT })?;
        let profiles: Vec<SegmentProfile> =
            serde_json::from_slice(&pbuf).map_err(|e| Error::Format(e.to_string()))?;
        let seg = Segmentation {
            metric,
            centroids,
            assignment,
            top_items,
            profiles,
        };
        seg.validate()?;
        Ok(seg)
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
        Segmentation::read_binary(BufReader::new(f))
    }

    /// Line-delimited dump for inspection.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# segmentation v{VERSION} k={} dim={} metric={:?}", self.k(), self.dim(), self.metric)?;
        for (s, (id, c)) in self.centroids.iter().enumerate() {
            let vals: Vec<String> = c.iter().map(|x| (*x as f32).to_string()).collect();
            writeln!(w, "centroid\t{id}\t{}", vals.join(","))?;
            let items: Vec<String> = self.top_items[s].iter().map(|t| t.to_string()).collect();
            writeln!(w, "top\t{s}\t{}", items.join(","))?;
            if let Some(p) = self.profiles.get(s) {
                writeln!(
                    w,
                    "profile\t{s}\t{}\t{}\t{}\t{}",
                    p.members,
                    p.country,
                    p.age_class,
                    p.genres.join("|")
                )?;
            }
        }
        for (u, s) in &self.assignment {
            writeln!(w, "assign\t{u}\t{s}")?;
        }
        Ok(())
    }
}
