//! Versioned binary checkpoints: magic, version, config blob, rng state,
//! named parameter table, optimizer moments. All integers little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::error::{NnError, Result};
use super::optim::{Adam, AdamConfig, Moments};
use super::params::ParamStore;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RSUMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

pub struct Checkpoint {
    /// Serialized model/run configuration.
    pub config: String,
    pub root_seed: u64,
    pub rng: RngState,
    pub params: ParamStore<f32>,
    pub optimizer: Option<Adam>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(&mut w, ckpt)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_bytes(w, ckpt.config.as_bytes())?;
    w.write_all(&ckpt.root_seed.to_le_bytes())?;
    w.write_all(&ckpt.rng.seed)?;
    w.write_all(&ckpt.rng.stream.to_le_bytes())?;
    w.write_all(&ckpt.rng.word_pos.to_le_bytes())?;

    put_u32(w, ckpt.params.len() as u32)?;
    for (_, p) in ckpt.params.iter() {
        put_bytes(w, p.name.as_bytes())?;
        w.write_all(&[p.trainable as u8])?;
        put_u32(w, p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            put_u32(w, d as u32)?;
        }
        put_f32s(w, p.value.data())?;
    }

    match &ckpt.optimizer {
        None => w.write_all(&[0])?,
        Some(opt) => {
            w.write_all(&[1])?;
            let c = opt.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&opt.steps_taken().to_le_bytes())?;
            put_u32(w, opt.moments.len() as u32)?;
            for (name, m) in &opt.moments {
                put_bytes(w, name.as_bytes())?;
                put_u32(w, m.m.len() as u32)?;
                put_f32s(w, &m.m)?;
                put_f32s(w, &m.v)?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic bytes".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config = String::from_utf8(get_bytes(r)?)
        .map_err(|_| NnError::Checkpoint("config blob is not UTF-8".into()))?;
    let root_seed = u64::from_le_bytes(get_array(r)?);
    let seed: [u8; 32] = get_array(r)?;
    let stream = u64::from_le_bytes(get_array(r)?);
    let word_pos = u128::from_le_bytes(get_array(r)?);

    let count = get_u32(r)? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = get_string(r)?;
        let [flag] = get_array::<_, 1>(r)?;
        let ndim = get_u32(r)? as usize;
        let shape = (0..ndim)
            .map(|_| get_u32(r).map(|d| d as usize).map_err(NnError::from))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = get_f32s(r, n)?;
        let id = params.add(name, Tensor::new(shape, data)?)?;
        params.get_mut(id).trainable = flag != 0;
    }

    let [has_opt] = get_array::<_, 1>(r)?;
    let optimizer = if has_opt == 0 {
        None
    } else {
        let mut f = [0f32; 4];
        for v in &mut f {
            *v = f32::from_le_bytes(get_array(r)?);
        }
        let config = AdamConfig {
            lr: f[0],
            beta1: f[1],
            beta2: f[2],
            eps: f[3],
        };
        let step = u64::from_le_bytes(get_array(r)?);
        let n = get_u32(r)? as usize;
        let mut moments = BTreeMap::new();
        for _ in 0..n {
            let name = get_string(r)?;
            let len = get_u32(r)? as usize;
            let m = get_f32s(r, len)?;
            let v = get_f32s(r, len)?;
            moments.insert(name, Moments { m, v });
        }
        Some(Adam::from_parts(config, step, moments))
    };

    Ok(Checkpoint {
        config,
        root_seed,
        rng: RngState {
            seed,
            stream,
            word_pos,
        },
        params,
        optimizer,
    })
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_bytes<W: Write>(w: &mut W, b: &[u8]) -> std::io::Result<()> {
    put_u32(w, b.len() as u32)?;
    w.write_all(b)
}

pub(crate) fn put_f32s<W: Write>(w: &mut W, xs: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn get_array<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(get_array(r)?))
}

pub(crate) fn get_bytes<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_string<R: Read>(r: &mut R) -> Result<String> {
    String::from_utf8(get_bytes(r)?).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))
}

pub(crate) fn get_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
