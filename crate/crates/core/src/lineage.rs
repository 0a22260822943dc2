//! Content fingerprints tying artifacts to the inputs and configuration that made them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fingerprint of a value's JSON form (struct fields serialize in declaration order).
pub fn fingerprint_json<T: Serialize>(value: &T) -> String {
    fingerprint_bytes(&serde_json::to_vec(value).expect("serializable"))
}

pub fn fingerprint_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Fingerprint over every regular file below `dir`, by relative path.
pub fn fingerprint_dir(dir: &Path) -> Result<String> {
    Ok(fingerprint_json(&fingerprint_files(dir)?))
}

/// Relative path (with `/` separators) -> fingerprint of every regular file below `dir`.
pub fn fingerprint_files(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    collect(dir, dir, &mut files)?;
    Ok(files)
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect(root, &p, out)?;
        } else {
            let rel = p
                .strip_prefix(root)
                .expect("below root")
                .to_string_lossy()
                .replace('\\', "/");
            out.insert(rel, fingerprint_file(&p)?);
        }
    }
    Ok(())
}

/// Sidecar describing how an artifact was produced. Holds no timestamps or absolute
/// paths, so reruns with the same inputs produce the same manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub stage: String,
    pub seed: u64,
    pub config: String,
    /// Input name -> fingerprint.
    pub inputs: BTreeMap<String, String>,
    /// Output file name -> fingerprint.
    pub outputs: BTreeMap<String, String>,
}

impl ArtifactManifest {
    pub const FILE: &'static str = "lineage.json";

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE);
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Fingerprint identifying this artifact as an input of a later stage.
    pub fn identity(&self) -> String {
        fingerprint_json(self)
    }

    /// Recomputes output fingerprints and reports files that changed since writing.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut problems = Vec::new();
        for (name, expected) in &self.outputs {
            match fingerprint_file(&dir.join(name)) {
                Ok(found) if &found == expected => {}
                Ok(_) => problems.push(format!("{name} changed since stage {} wrote it", self.stage)),
                Err(_) => problems.push(format!("{name} missing (written by stage {})", self.stage)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}
