//! Binary checkpoint format: fixed header (format version, architecture,
//! schedule parameters, seed, step index) followed by the parameter vector
//! as little-endian 64-bit floats. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::denoiser::{Architecture, DenoiserParams};
use crate::Error;

const MAGIC: &[u8; 8] = b"DNCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut buf = Vec::with_capacity(64 + self.params.theta.len() * 8);
        buf.extend_from_slice(MAGIC);
        let arch = self.params.arch;
        for v in [
            arch.sample_dim as u32,
            arch.hidden as u32,
            arch.depth as u32,
            arch.n_prompts as u32,
            self.t_max as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.beta_start.to_le_bytes());
        buf.extend_from_slice(&self.beta_end.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.params.theta.len() as u64).to_le_bytes());
        for v in &self.params.theta {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8], Error> {
            if *off + n > buf.len() {
                return Err(Error::Checkpoint("truncated file".into()));
            }
            let s = &buf[*off..*off + n];
            *off += n;
            Ok(s)
        };
        if take(&mut off, 8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut u32s = [0u32; 5];
        for v in &mut u32s {
            *v = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        }
        let beta_start = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let beta_end = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let step = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let n_params = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let arch = Architecture {
            sample_dim: u32s[0] as usize,
            hidden: u32s[1] as usize,
            depth: u32s[2] as usize,
            n_prompts: u32s[3] as usize,
        };
        if n_params != arch.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {n_params} does not match architecture ({} expected)",
                arch.param_count()
            )));
        }
        let mut theta = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            theta.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
        }
        if off != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            params: DenoiserParams { arch, theta },
            t_max: u32s[4] as usize,
            beta_start,
            beta_end,
            seed,
            step,
        })
    }
}
