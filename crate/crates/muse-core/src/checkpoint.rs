//! Binary checkpoint container.
//!
//! Layout: magic `MUSE` (4 bytes), format version (u32 LE), entry count
//! (u32 LE), then per entry: name length (u16 LE) + UTF-8 name + rank (u8) +
//! dims (u64 LE each) + raw f32 LE values; a 32-byte config fingerprint
//! closes the file. Loading a checkpoint whose fingerprint does not match
//! the expected architecture is rejected.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::backbone::{Backbone, BackboneSpec};

pub const MAGIC: &[u8; 4] = b"MUSE";
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 of the backbone spec's canonical string: the architecture
/// identity a checkpoint is bound to.
pub fn fingerprint(spec: &BackboneSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(spec.canonical_string().as_bytes());
    h.finalize().into()
}

pub struct Checkpoint {
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub fingerprint: [u8; 32],
}

impl Checkpoint {
    pub fn from_backbone(backbone: &Backbone<f32>) -> Self {
        Checkpoint {
            entries: backbone.state_entries(),
            fingerprint: fingerprint(&backbone.spec),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, shape, values) in &self.entries {
            let expected: usize = shape.iter().product();
            debug_assert_eq!(expected, values.len());
            if name.len() > u16::MAX as usize {
                return Err(Error::Checkpoint(format!("name too long: {name}")));
            }
            f.write_all(&(name.len() as u16).to_le_bytes())?;
            f.write_all(name.as_bytes())?;
            f.write_all(&[shape.len() as u8])?;
            for &d in shape {
                f.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in values {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.write_all(&self.fingerprint)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let fail = |what: &str| Error::Checkpoint(format!("truncated checkpoint at {what}"));

        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(|_| fail("magic"))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        f.read_exact(&mut u32buf).map_err(|_| fail("version"))?;
        let version = u32::from_le_bytes(u32buf);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        f.read_exact(&mut u32buf).map_err(|_| fail("entry count"))?;
        let count = u32::from_le_bytes(u32buf) as usize;

        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let mut u16buf = [0u8; 2];
            f.read_exact(&mut u16buf)
                .map_err(|_| fail(&format!("entry {i} name length")))?;
            let name_len = u16::from_le_bytes(u16buf) as usize;
            let mut name = vec![0u8; name_len];
            f.read_exact(&mut name)
                .map_err(|_| fail(&format!("entry {i} name")))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint(format!("entry {i} name is not UTF-8")))?;
            let mut rank = [0u8; 1];
            f.read_exact(&mut rank)
                .map_err(|_| fail(&format!("entry '{name}' rank")))?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            let mut u64buf = [0u8; 8];
            for _ in 0..rank[0] {
                f.read_exact(&mut u64buf)
                    .map_err(|_| fail(&format!("entry '{name}' dims")))?;
                shape.push(u64::from_le_bytes(u64buf) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut values = vec![0f32; numel];
            let mut fbuf = [0u8; 4];
            for v in values.iter_mut() {
                f.read_exact(&mut fbuf)
                    .map_err(|_| fail(&format!("entry '{name}' values")))?;
                *v = f32::from_le_bytes(fbuf);
            }
            entries.push((name, shape, values));
        }
        let mut fp = [0u8; 32];
        f.read_exact(&mut fp).map_err(|_| fail("fingerprint"))?;
        let mut extra = [0u8; 1];
        if f.read(&mut extra)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after fingerprint".into()));
        }
        Ok(Checkpoint {
            entries,
            fingerprint: fp,
        })
    }

    pub fn entry_map(&self) -> HashMap<String, (Vec<usize>, Vec<f32>)> {
        self.entries
            .iter()
            .map(|(n, s, v)| (n.clone(), (s.clone(), v.clone())))
            .collect()
    }

    /// Restore a backbone's parameters and running stats. When
    /// `require_matching_spec` is set, a fingerprint mismatch against the
    /// backbone's own spec is an error (offline teachers, eval).
    pub fn load_into_backbone(
        &self,
        backbone: &Backbone<f32>,
        require_matching_spec: bool,
    ) -> Result<()> {
        if require_matching_spec {
            let expected = fingerprint(&backbone.spec);
            if expected != self.fingerprint {
                return Err(Error::Checkpoint(format!(
                    "architecture fingerprint mismatch: checkpoint {} vs expected {} ({})",
                    hex(&self.fingerprint),
                    hex(&expected),
                    backbone.spec.canonical_string()
                )));
            }
        }
        backbone.load_state(&self.entry_map())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Convenience: save a backbone's full state.
pub fn save_backbone(backbone: &Backbone<f32>, path: &Path) -> Result<()> {
    Checkpoint::from_backbone(backbone).save(path)
}

/// Convenience: build a backbone from its spec and restore a checkpoint
/// into it, enforcing the fingerprint.
pub fn load_backbone(spec: &BackboneSpec, path: &Path) -> Result<Backbone<f32>> {
    let backbone = crate::nn::build_backbone::<f32>(spec, 0)?;
    Checkpoint::load(path)?.load_into_backbone(&backbone, true)?;
    Ok(backbone)
}
