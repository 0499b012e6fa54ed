//! Model file: magic "NBVN", version, JSON config block, target
//! normalization, parameters in declaration order, then batch-norm running
//! statistics. All numbers little-endian; tensors as f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetConfig, Real, UtilityNet};
use crate::binio::*;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NBVN";
const VERSION: u32 = 1;

pub fn save_net<T: Real>(net: &UtilityNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let cfg = serde_json::to_vec(net.config()).map_err(|e| Error::Format(e.to_string()))?;
    write_u32(&mut w, cfg.len() as u32)?;
    w.write_all(&cfg)?;
    let (shift, scale) = net.target_normalization();
    write_f64(&mut w, shift)?;
    write_f64(&mut w, scale)?;
    let f = |v: &[T]| v.iter().map(|x| x.to_f64() as f32).collect::<Vec<f32>>();
    write_u64(&mut w, net.param_count() as u64)?;
    write_f32_slice(&mut w, &f(net.params()))?;
    let stats: usize = net.running_mean().iter().map(Vec::len).sum();
    write_u64(&mut w, stats as u64)?;
    for m in net.running_mean() {
        write_f32_slice(&mut w, &f(m))?;
    }
    for v in net.running_var() {
        write_f32_slice(&mut w, &f(v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_net(path: impl AsRef<Path>) -> Result<UtilityNet<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_net(&mut r)
}

fn read_net<R: Read>(r: &mut R) -> Result<UtilityNet<f32>> {
    expect_magic(r, MAGIC)?;
    expect_version(r, VERSION)?;
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Format("config block too large".into()));
    }
    let cfg: NetConfig = serde_json::from_slice(&read_bytes(r, n)?).map_err(|e| Error::Format(format!("config block: {e}")))?;
    let mut net = UtilityNet::<f32>::new(cfg).map_err(|e| Error::Format(format!("config block: {e}")))?;
    let shift = read_f64(r)?;
    let scale = read_f64(r)?;
    net.set_target_normalization(shift, scale).map_err(|e| Error::Format(e.to_string()))?;
    let count = read_u64(r)? as usize;
    if count != net.param_count() {
        return Err(Error::Format(format!("parameter count {count} does not match config ({})", net.param_count())));
    }
    let params = read_f32_vec(r, count)?;
    net.params_mut().copy_from_slice(&params);
    let stats = read_u64(r)? as usize;
    let widths: Vec<usize> = net.running_mean().iter().map(Vec::len).collect();
    if stats != widths.iter().sum::<usize>() {
        return Err(Error::Format("running statistics size does not match config".into()));
    }
    let read_group = |r: &mut R| -> Result<Vec<Vec<f32>>> { widths.iter().map(|&w| read_f32_vec(r, w)).collect() };
    let mean = read_group(r)?;
    let var = read_group(r)?;
    net.set_running_stats(mean, var)?;
    expect_eof(r)?;
    Ok(net)
}
