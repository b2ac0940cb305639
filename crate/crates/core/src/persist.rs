//! Versioned binary formats for the split dataset and training checkpoints.
//! Both are deterministic byte-for-byte given equal contents.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::config::TrainConfig;
use crate::dataset::{InteractionDataset, RawIdMaps, SplitDataset};
use crate::error::{Error, Result};
use crate::propagation::BaseTables;
use crate::trainer::Checkpoint;

const SPLIT_MAGIC: &[u8; 4] = b"BRSD";
const SPLIT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"BRCP";
const CHECKPOINT_VERSION: u32 = 1;

fn write_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_string<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::other(e.to_string()))
}

fn write_ids<W: Write>(w: &mut W, ids: &[usize]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(ids.len() as u64)?;
    for &i in ids {
        w.write_u64::<LittleEndian>(i as u64)?;
    }
    Ok(())
}

fn read_ids<R: Read>(r: &mut R) -> std::io::Result<Vec<usize>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(r.read_u64::<LittleEndian>()? as usize);
    }
    Ok(out)
}

pub fn save_split(path: impl AsRef<Path>, split: &SplitDataset) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut inner = || -> std::io::Result<()> {
        let ds = &split.train;
        w.write_all(SPLIT_MAGIC)?;
        w.write_u32::<LittleEndian>(SPLIT_VERSION)?;
        w.write_u64::<LittleEndian>(ds.num_users as u64)?;
        w.write_u64::<LittleEndian>(ds.num_items as u64)?;
        w.write_u64::<LittleEndian>(ds.num_baskets as u64)?;
        for &o in &ds.basket_owner {
            w.write_u64::<LittleEndian>(o as u64)?;
        }
        for items in &ds.basket_items {
            write_ids(&mut w, items)?;
        }
        for items in &split.heldout {
            write_ids(&mut w, items)?;
        }
        for s in &ds.ids.users {
            write_string(&mut w, s)?;
        }
        for s in &ds.ids.items {
            write_string(&mut w, s)?;
        }
        for (a, b) in &ds.ids.baskets {
            write_string(&mut w, a)?;
            write_string(&mut w, b)?;
        }
        w.flush()
    };
    inner().map_err(|e| Error::io(path, e))
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != SPLIT_MAGIC {
        return Err(Error::Format { path: path.into(), reason: "not a split file (bad magic)".into() });
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    if version != SPLIT_VERSION {
        return Err(Error::Format { path: path.into(), reason: format!("unsupported split version {version}") });
    }

    let inner = |r: &mut BufReader<std::fs::File>| -> std::io::Result<SplitDataset> {
        let num_users = r.read_u64::<LittleEndian>()? as usize;
        let num_items = r.read_u64::<LittleEndian>()? as usize;
        let num_baskets = r.read_u64::<LittleEndian>()? as usize;
        let mut basket_owner = Vec::with_capacity(num_baskets);
        for _ in 0..num_baskets {
            basket_owner.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let mut basket_items = Vec::with_capacity(num_baskets);
        for _ in 0..num_baskets {
            basket_items.push(read_ids(r)?);
        }
        let mut heldout = Vec::with_capacity(num_baskets);
        for _ in 0..num_baskets {
            heldout.push(read_ids(r)?);
        }
        let mut ids = RawIdMaps::default();
        for _ in 0..num_users {
            ids.users.push(read_string(r)?);
        }
        for _ in 0..num_items {
            ids.items.push(read_string(r)?);
        }
        for _ in 0..num_baskets {
            let a = read_string(r)?;
            let b = read_string(r)?;
            ids.baskets.push((a, b));
        }
        let mut user_baskets = vec![Vec::new(); num_users];
        for (b, &o) in basket_owner.iter().enumerate() {
            user_baskets[o].push(b);
        }
        Ok(SplitDataset {
            train: InteractionDataset {
                num_users,
                num_items,
                num_baskets,
                basket_owner,
                basket_items,
                user_baskets,
                ids,
            },
            heldout,
        })
    };
    let split = inner(&mut r).map_err(|e| Error::io(path, e))?;
    split.train.check_invariants()?;
    Ok(split)
}

fn write_table<W: Write>(w: &mut W, table: &Array2<f64>) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(table.nrows() as u64)?;
    w.write_u64::<LittleEndian>(table.ncols() as u64)?;
    for row in table.rows() {
        for &v in row {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_table<R: Read>(r: &mut R) -> std::io::Result<Array2<f64>> {
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let cols = r.read_u64::<LittleEndian>()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| std::io::Error::other(e.to_string()))
}

fn write_u128<W: Write>(w: &mut W, v: u128) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(v as u64)?;
    w.write_u64::<LittleEndian>((v >> 64) as u64)
}

fn read_u128<R: Read>(r: &mut R) -> std::io::Result<u128> {
    let lo = r.read_u64::<LittleEndian>()? as u128;
    let hi = r.read_u64::<LittleEndian>()? as u128;
    Ok(lo | (hi << 64))
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut inner = || -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        let cfg = ck.config.to_text();
        w.write_u64::<LittleEndian>(cfg.len() as u64)?;
        w.write_all(cfg.as_bytes())?;
        w.write_u64::<LittleEndian>(ck.epoch as u64)?;
        write_u128(&mut w, ck.sampling_pos)?;
        write_u128(&mut w, ck.augmentation_pos)?;
        write_table(&mut w, &ck.base.user)?;
        write_table(&mut w, &ck.base.item)?;
        match &ck.base.item_hyper {
            Some(t) => {
                w.write_u8(1)?;
                write_table(&mut w, t)?;
            }
            None => w.write_u8(0)?,
        }
        w.flush()
    };
    inner().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format { path: path.into(), reason: "not a checkpoint file (bad magic)".into() });
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format { path: path.into(), reason: format!("unsupported checkpoint version {version}") });
    }

    let inner = |r: &mut BufReader<std::fs::File>| -> std::io::Result<(String, usize, u128, u128, BaseTables)> {
        let len = r.read_u64::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let cfg_text = String::from_utf8(buf).map_err(|e| std::io::Error::other(e.to_string()))?;
        let epoch = r.read_u64::<LittleEndian>()? as usize;
        let sampling_pos = read_u128(r)?;
        let augmentation_pos = read_u128(r)?;
        let user = read_table(r)?;
        let item = read_table(r)?;
        let item_hyper = if r.read_u8()? == 1 { Some(read_table(r)?) } else { None };
        Ok((cfg_text, epoch, sampling_pos, augmentation_pos, BaseTables { user, item, item_hyper }))
    };
    let (cfg_text, epoch, sampling_pos, augmentation_pos, base) = inner(&mut r).map_err(|e| Error::io(path, e))?;
    let config = TrainConfig::from_text(&cfg_text)
        .map_err(|e| Error::Format { path: path.into(), reason: format!("embedded config: {e}") })?;
    Ok(Checkpoint { config, epoch, base, sampling_pos, augmentation_pos })
}
