//! Little-endian binary snapshots of the parameter groups.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{Model, ModelParams, ParamGroup};
use crate::nn::Param;

const MAGIC: &[u8; 12] = b"COTRAINCKPT1";

#[derive(Clone, PartialEq)]
pub struct Checkpoint {
    /// Number of parameter updates applied when the snapshot was taken.
    pub step: usize,
    pub config_hash: String,
    pub params: ModelParams,
}

impl fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Checkpoint")
            .field("step", &self.step)
            .field("config_hash", &self.config_hash)
            .field("theta_a", &self.params.count(ParamGroup::SharedEncoder))
            .field("theta_b", &self.params.count(ParamGroup::SupervisedHead))
            .field("theta_c", &self.params.count(ParamGroup::SelfSupHead))
            .finish()
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(Error::Checkpoint(format!("string length {len} is implausible")));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

impl Checkpoint {
    pub fn capture(model: &Model, step: usize, config_hash: &str) -> Self {
        Self {
            step,
            config_hash: config_hash.to_string(),
            params: model.partition_params(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(self.step as u64)?;
        write_str(w, &self.config_hash)?;
        for group in ParamGroup::ALL {
            let params = self.params.group(group);
            w.write_u32::<LittleEndian>(params.len() as u32)?;
            for p in params {
                write_str(w, &p.name)?;
                w.write_u32::<LittleEndian>(p.shape.len() as u32)?;
                for &d in &p.shape {
                    w.write_u64::<LittleEndian>(d as u64)?;
                }
                for &v in &p.value {
                    w.write_f32::<LittleEndian>(v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 12];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let step = r.read_u64::<LittleEndian>()? as usize;
        let config_hash = read_str(r)?;
        let mut groups: Vec<Vec<Param>> = Vec::with_capacity(3);
        for _ in ParamGroup::ALL {
            let count = r.read_u32::<LittleEndian>()? as usize;
            let mut params = Vec::with_capacity(count.min(1024));
            for _ in 0..count {
                let name = read_str(r)?;
                let rank = r.read_u32::<LittleEndian>()? as usize;
                if rank > 8 {
                    return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
                }
                let shape = (0..rank)
                    .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                    .collect::<std::io::Result<Vec<_>>>()?;
                let len: usize = shape.iter().product();
                if len > 1 << 28 {
                    return Err(Error::Checkpoint(format!("tensor {name} is implausibly large")));
                }
                let mut value = vec![0f32; len];
                r.read_f32_into::<LittleEndian>(&mut value)?;
                params.push(Param { name, shape, value });
            }
            groups.push(params);
        }
        let theta_c = groups.pop().unwrap_or_default();
        let theta_b = groups.pop().unwrap_or_default();
        let theta_a = groups.pop().unwrap_or_default();
        Ok(Self {
            step,
            config_hash,
            params: ModelParams {
                theta_a,
                theta_b,
                theta_c,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Copies the stored parameters into `model`; names and shapes must match.
    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        model.load_params(&self.params)
    }
}
