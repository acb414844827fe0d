//! `KADP` adapter checkpoints.
//!
//! Layout (little-endian): magic `KADP`, version `u32 = 1`, kernel kind `u8`
//! (0 Gaussian, 1 Laplacian), `d u32`, `h u32`, then every parameter as `f32`
//! in the order `w1, b1, W2 (row-major), b2, w3, b3`. Optionally followed by
//! Adam state: timestep `u64`, first moments `f32 × n`, second moments `f32 × n`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use super::params::{AdapterParams, Layout};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;

const MAGIC: &[u8; 4] = b"KADP";
const VERSION: u32 = 1;

pub fn save(params: &AdapterParams, adam: Option<&AdamState>, path: impl AsRef<Path>) -> Result<()> {
    write_to(params, adam, BufWriter::new(File::create(path)?))?;
    Ok(())
}

/// Loads parameters and, when present, Adam state (hyperparameters from `adam_config`).
pub fn load(path: impl AsRef<Path>, adam_config: AdamConfig) -> Result<(AdapterParams, Option<AdamState>)> {
    read_from(BufReader::new(File::open(path)?), adam_config)
}

fn f32s(xs: &[f64]) -> Vec<f32> {
    xs.iter().map(|&x| x as f32).collect()
}

pub(crate) fn write_to<W: Write>(params: &AdapterParams, adam: Option<&AdamState>, out: W) -> Result<W> {
    let mut w = Writer::new(out);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(params.kind.as_u8())?;
    w.u32(params.d() as u32)?;
    w.u32(params.h() as u32)?;
    w.f32s(&f32s(&params.data))?;
    if let Some(st) = adam {
        w.u64(st.t)?;
        w.f32s(&f32s(&st.m))?;
        w.f32s(&f32s(&st.v))?;
    }
    w.finish()
}

pub(crate) fn read_from<R: Read>(input: R, adam_config: AdamConfig) -> Result<(AdapterParams, Option<AdamState>)> {
    let mut r = Reader::new(input);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let kind_byte = r.u8("kernel kind")?;
    let kind = KernelKind::from_u8(kind_byte).ok_or_else(|| Error::Format(format!("unknown kernel kind {kind_byte}")))?;
    let d = r.u32("d")? as usize;
    let h = r.u32("h")? as usize;
    if d == 0 || h == 0 {
        return Err(Error::Format("zero adapter dimension".into()));
    }
    let layout = Layout::new(d, h);
    let n = layout.count();
    let data = r.f32s(n, "parameters")?.into_iter().map(f64::from).collect();
    let params = AdapterParams { kind, layout, data };

    let Some(t) = r.optional_u64("adam timestep")? else {
        return Ok((params, None));
    };
    let m = r.f32s(n, "adam first moments")?.into_iter().map(f64::from).collect();
    let v = r.f32s(n, "adam second moments")?.into_iter().map(f64::from).collect();
    r.expect_end()?;
    Ok((params, Some(AdamState { config: adam_config, t, m, v })))
}
