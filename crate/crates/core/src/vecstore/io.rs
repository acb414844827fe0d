//! `KSTR` datastore files.
//!
//! Layout (little-endian): magic `KSTR`, version `u32 = 1`, dim `u32`,
//! count `u64`, flags `u32` (bit 0: domains present, bit 1: IVF-PQ index
//! present); then `count × dim` half-precision key patterns, `count` `u32`
//! values, optional `count` `u16` domains, and the optional index block:
//! nlist `u32`, m `u32`, coarse centroids `f32`, codebooks `f32`, code bytes,
//! `nlist + 1` list offsets `u64`, `count` list ids `u64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ivfpq::{IvfPqIndex, PQ_CENTROIDS};
use super::store::{Datastore, SearchIndex};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KSTR";
const VERSION: u32 = 1;
const FLAG_DOMAINS: u32 = 1;
const FLAG_IVFPQ: u32 = 2;

pub fn save(ds: &Datastore, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_to(ds, file)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Datastore> {
    read_from(BufReader::new(File::open(path)?))
}

pub(crate) fn write_to<W: Write>(ds: &Datastore, out: W) -> Result<W> {
    let mut w = Writer::new(out);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(ds.dim as u32)?;
    w.u64(ds.len() as u64)?;
    let mut flags = 0;
    if ds.domains.is_some() {
        flags |= FLAG_DOMAINS;
    }
    if matches!(ds.index, SearchIndex::IvfPq(_)) {
        flags |= FLAG_IVFPQ;
    }
    w.u32(flags)?;
    w.u16s(&ds.keys)?;
    w.u32s(&ds.values)?;
    if let Some(d) = &ds.domains {
        w.u16s(d)?;
    }
    if let SearchIndex::IvfPq(ix) = &ds.index {
        w.u32(ix.nlist as u32)?;
        w.u32(ix.m as u32)?;
        w.f32s(&ix.coarse)?;
        w.f32s(&ix.codebooks)?;
        w.bytes(&ix.codes)?;
        w.u64s(&ix.list_offsets)?;
        w.u64s(&ix.list_ids)?;
    }
    w.finish()
}

pub(crate) fn read_from<R: Read>(input: R) -> Result<Datastore> {
    let mut r = Reader::new(input);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::Format("zero dimension".into()));
    }
    let count = usize::try_from(r.u64("count")?).map_err(|_| Error::Format("count overflow".into()))?;
    let flags = r.u32("flags")?;
    if flags & !(FLAG_DOMAINS | FLAG_IVFPQ) != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let keys = r.u16s(count.saturating_mul(dim), "keys")?;
    let values = r.u32s(count, "values")?;
    let domains = if flags & FLAG_DOMAINS != 0 {
        Some(r.u16s(count, "domains")?)
    } else {
        None
    };
    let index = if flags & FLAG_IVFPQ != 0 {
        let nlist = r.u32("nlist")? as usize;
        let m = r.u32("m")? as usize;
        if m == 0 || dim % m != 0 || nlist == 0 {
            return Err(Error::Format(format!("invalid index shape nlist={nlist} m={m}")));
        }
        let coarse = r.f32s(nlist * dim, "coarse centroids")?;
        let codebooks = r.f32s(PQ_CENTROIDS * dim, "codebooks")?;
        let codes = r.bytes(count * m, "codes")?;
        let list_offsets = r.u64s(nlist + 1, "list offsets")?;
        let list_ids = r.u64s(count, "list ids")?;
        let monotone = list_offsets.windows(2).all(|w| w[0] <= w[1]);
        if list_offsets[0] != 0 || list_offsets[nlist] != count as u64 || !monotone {
            return Err(Error::Format("inconsistent inverted list offsets".into()));
        }
        if list_ids.iter().any(|&id| id >= count as u64) {
            return Err(Error::Format("inverted list id out of range".into()));
        }
        SearchIndex::IvfPq(IvfPqIndex {
            dim,
            nlist,
            m,
            coarse,
            codebooks,
            codes,
            list_offsets,
            list_ids,
        })
    } else {
        SearchIndex::ExactOnly
    };
    r.expect_end()?;
    Ok(Datastore::from_parts(dim, keys, values, domains, index))
}
