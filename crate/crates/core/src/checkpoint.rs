//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "HPMDUBCK" | u32 version
//! u32 len | config text (canonical render)
//! u32 len | config hash (hex)
//! u64 step
//! stats:  f64 pitch mean, std | f64 energy mean, std | u32 n | n×f64 mel mean | n×f64 mel std
//! u32 param count, then per parameter: u32 len | name | u32 rows | u32 cols | rows·cols × f64
//! u8 has_adam; if 1: u64 adam step, then first and second moments in parameter order
//! ```
//!
//! Values are stored as raw `f64`, so a reload reproduces the model bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::{MelStandardizer, Standardizer};
use crate::autograd::{Adam, AdamConfig, Mat};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::DubbingModel;
use crate::training::{NormStats, Synthesizer};

const MAGIC: &[u8; 8] = b"HPMDUBCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub synth: Synthesizer,
    pub adam: Option<Adam>,
    pub step: usize,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn mat_values(&mut self, m: &Mat) {
        for &v in m.iter() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "non-UTF-8 string"))
    }
    fn fill(&mut self, m: &mut Mat) -> Result<()> {
        for v in m.iter_mut() {
            *v = self.f64()?;
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn config(&self) -> &Config {
        &self.synth.model.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let cfg = self.config();
        w.str(&cfg.render());
        w.str(&cfg.hash());
        w.u64(self.step as u64);
        let stats = &self.synth.stats;
        for s in [&stats.pitch, &stats.energy] {
            w.f64(s.mean);
            w.f64(s.std);
        }
        w.u32(stats.mel.mean.len() as u32);
        for &v in stats.mel.mean.iter().chain(&stats.mel.std) {
            w.f64(v);
        }
        let store = &self.synth.model.store;
        w.u32(store.len() as u32);
        for (_, p) in store.iter() {
            w.str(&p.name);
            w.u32(p.value.nrows() as u32);
            w.u32(p.value.ncols() as u32);
            w.mat_values(&p.value);
        }
        match &self.adam {
            None => w.u8(0),
            Some(adam) => {
                w.u8(1);
                w.u64(adam.step);
                for m in adam.first.iter().chain(&adam.second) {
                    w.mat_values(m);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let text = r.str()?;
        let hash = r.str()?;
        let config = Config::parse_text(&text)?;
        if config.hash() != hash {
            return Err(Error::format(path, "config hash does not match stored config"));
        }
        let step = r.u64()? as usize;
        let mut std2 = || -> Result<Standardizer> {
            Ok(Standardizer {
                mean: r.f64()?,
                std: r.f64()?,
            })
        };
        let pitch = std2()?;
        let energy = std2()?;
        let n = r.u32()? as usize;
        let mut mean = Vec::with_capacity(n);
        for _ in 0..n {
            mean.push(r.f64()?);
        }
        let mut std = Vec::with_capacity(n);
        for _ in 0..n {
            std.push(r.f64()?);
        }
        let stats = NormStats {
            pitch,
            energy,
            mel: MelStandardizer { mean, std },
        };

        let mut model = DubbingModel::new(&config, config.seed)?;
        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(Error::format(
                path,
                format!("{count} parameters stored, architecture has {}", model.store.len()),
            ));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = r.str()?;
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let expected = model.store.name(id);
            if name != expected {
                return Err(Error::format(path, format!("expected parameter {expected}, found {name}")));
            }
            let value = model.store.value_mut(id);
            if value.dim() != (rows, cols) {
                return Err(Error::format(
                    path,
                    format!("parameter {name} is {rows}×{cols}, expected {:?}", value.dim()),
                ));
            }
            r.fill(value)?;
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let mut adam = Adam::new(
                    AdamConfig {
                        lr: config.lr,
                        beta1: config.beta1,
                        beta2: config.beta2,
                        eps: config.eps,
                    },
                    &model.store,
                );
                adam.step = r.u64()?;
                for m in adam.first.iter_mut().chain(adam.second.iter_mut()) {
                    r.fill(m)?;
                }
                Some(adam)
            }
            b => return Err(Error::format(path, format!("bad optimizer flag {b}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            synth: Synthesizer { model, stats },
            adam,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingModel(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes, path)
    }
}

/// `dir/step_<n>.ckpt`.
pub fn step_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}
