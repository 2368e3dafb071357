//! Versioned binary serialisation and caching of KL bases, so the Nyström
//! eigensolve runs once per (kernel, d, quad_size) configuration.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::nystrom::{build_kl_basis, KlBasis};
use super::{MaternParams, Smoothness};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KLB\x01";

impl KlBasis {
    /// Write the basis as a little-endian binary blob.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        let (tag, nu) = match self.params.smoothness {
            Smoothness::Nu(nu) => (0u8, nu),
            Smoothness::Gaussian => (1u8, 0.0),
        };
        w.write_all(&[tag])?;
        for v in [nu, self.params.lambda_c, self.params.sigma_var_sq] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.quad_size as u64).to_le_bytes())?;
        for v in &self.eigenvalues {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.eigenfunctions {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<KlBasis> {
        let bad = |reason: &str| Error::Parse {
            path: "<kl-basis blob>".into(),
            reason: reason.into(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic or unsupported version"));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|_| bad("truncated header"))?;
        let mut f = [0u8; 8];
        let mut next_f64 = |r: &mut dyn Read| -> Result<f64> {
            r.read_exact(&mut f).map_err(|_| Error::Parse {
                path: "<kl-basis blob>".into(),
                reason: "truncated payload".into(),
            })?;
            Ok(f64::from_le_bytes(f))
        };
        let nu = next_f64(r)?;
        let lambda_c = next_f64(r)?;
        let sigma_var_sq = next_f64(r)?;
        let smoothness = match tag[0] {
            0 => Smoothness::Nu(nu),
            1 => Smoothness::Gaussian,
            _ => return Err(bad("unknown smoothness tag")),
        };
        let params = MaternParams::new(smoothness, lambda_c, sigma_var_sq)?;

        let mut u = [0u8; 8];
        r.read_exact(&mut u).map_err(|_| bad("truncated payload"))?;
        let dim = u64::from_le_bytes(u) as usize;
        r.read_exact(&mut u).map_err(|_| bad("truncated payload"))?;
        let quad_size = u64::from_le_bytes(u) as usize;
        if dim == 0 || quad_size < dim || dim.saturating_mul(quad_size) > (1 << 33) {
            return Err(bad("implausible dimensions"));
        }

        let mut eigenvalues = Vec::with_capacity(dim);
        for _ in 0..dim {
            eigenvalues.push(next_f64(r)?);
        }
        let mut eigenfunctions = Vec::with_capacity(dim * quad_size);
        for _ in 0..dim * quad_size {
            eigenfunctions.push(next_f64(r)?);
        }
        Ok(KlBasis {
            params,
            dim,
            quad_size,
            eigenvalues,
            eigenfunctions,
        })
    }
}

/// Cache key: kernel parameters are quantised through their exact bit
/// patterns, so two configs share a basis iff their parameters are
/// bit-identical.
#[derive(PartialEq, Eq, Hash, Clone)]
struct Key {
    tag: u8,
    nu_bits: u64,
    lambda_bits: u64,
    var_bits: u64,
    dim: usize,
    quad_size: usize,
}

impl Key {
    fn new(p: &MaternParams, dim: usize, quad_size: usize) -> Key {
        let (tag, nu) = match p.smoothness {
            Smoothness::Nu(nu) => (0u8, nu),
            Smoothness::Gaussian => (1u8, 0.0),
        };
        Key {
            tag,
            nu_bits: nu.to_bits(),
            lambda_bits: p.lambda_c.to_bits(),
            var_bits: p.sigma_var_sq.to_bits(),
            dim,
            quad_size,
        }
    }

    fn file_name(&self) -> String {
        format!(
            "kl-{}-{:016x}-{:016x}-{:016x}-d{}-q{}.bin",
            self.tag, self.nu_bits, self.lambda_bits, self.var_bits, self.dim, self.quad_size
        )
    }
}

/// Shared store of KL bases with an in-memory layer and an optional disk
/// layer. Bases are immutable, so `Arc`s are handed out freely.
pub struct KlStore {
    mem: Mutex<HashMap<Key, Arc<KlBasis>>>,
    disk_dir: Option<PathBuf>,
}

impl KlStore {
    pub fn in_memory() -> KlStore {
        KlStore {
            mem: Mutex::new(HashMap::new()),
            disk_dir: None,
        }
    }

    pub fn with_disk_dir(dir: impl AsRef<Path>) -> Result<KlStore> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(KlStore {
            mem: Mutex::new(HashMap::new()),
            disk_dir: Some(dir),
        })
    }

    /// Fetch a basis, building (and persisting) it on first use.
    pub fn get_or_build(
        &self,
        p: &MaternParams,
        dim: usize,
        quad_size: usize,
    ) -> Result<Arc<KlBasis>> {
        let key = Key::new(p, dim, quad_size);
        if let Some(b) = self.mem.lock().unwrap().get(&key) {
            return Ok(b.clone());
        }

        if let Some(dir) = &self.disk_dir {
            let path = dir.join(key.file_name());
            if path.is_file() {
                let mut file = std::fs::File::open(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                let mut buf = std::io::BufReader::new(&mut file);
                if let Ok(basis) = KlBasis::read_from(&mut buf) {
                    let arc = Arc::new(basis);
                    self.mem.lock().unwrap().insert(key, arc.clone());
                    return Ok(arc);
                }
                // unreadable/stale cache entry: fall through and rebuild
            }
        }

        let basis = Arc::new(build_kl_basis(p, dim, quad_size)?);
        if let Some(dir) = &self.disk_dir {
            let path = dir.join(key.file_name());
            let tmp = path.with_extension("tmp");
            let write = || -> std::io::Result<()> {
                let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
                basis.write_to(&mut file)?;
                file.flush()?;
                drop(file);
                std::fs::rename(&tmp, &path)
            };
            write().map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        self.mem.lock().unwrap().insert(key, basis.clone());
        Ok(basis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::FieldKind;

    #[test]
    fn roundtrip_through_bytes() {
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        let basis = build_kl_basis(&p, 4, 64).unwrap();
        let mut buf = Vec::new();
        basis.write_to(&mut buf).unwrap();
        let back = KlBasis::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dim, basis.dim);
        assert_eq!(back.quad_size, basis.quad_size);
        assert_eq!(back.eigenvalues, basis.eigenvalues);
        assert_eq!(back.eigenfunctions, basis.eigenfunctions);
        assert_eq!(back.params, basis.params);
    }

    #[test]
    fn rejects_corrupt_blob() {
        let mut buf = b"KLB\x02garbage".to_vec();
        assert!(KlBasis::read_from(&mut buf.as_slice()).is_err());
        buf.clear();
        assert!(KlBasis::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn disk_store_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let store = KlStore::with_disk_dir(dir.path()).unwrap();
        let p = FieldKind::Exponential.params(1.0, 1.0).unwrap();
        let a = store.get_or_build(&p, 6, 128).unwrap();
        // second store instance must read the file rather than rebuild
        let store2 = KlStore::with_disk_dir(dir.path()).unwrap();
        let b = store2.get_or_build(&p, 6, 128).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.eigenfunctions, b.eigenfunctions);
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1, "exactly one cache file expected");
    }
}
