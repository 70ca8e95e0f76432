//! Binary weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "TOPOGANW"
//! version u32      currently 1
//! count   u32      number of entries
//! entry   repeated:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims u32 × ndim
//!   values   f32 × product(dims), raw IEEE-754 bits
//! ```
//!
//! Entries cover every trainable tensor plus batch-norm running state
//! (`*.running_mean`, `*.running_var`, and the update counter as a
//! single-element `*.updates` tensor — counts are exact in f32 at the
//! magnitudes used). Reloading into a freshly built architecture restores
//! bit-identical forward outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use topogan_core::gan::{Discriminator, Generator};
use topogan_core::layers::{Layer, Network};
use topogan_core::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TOPOGANW";
const VERSION: u32 = 1;

pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn bn_stem(gamma_name: &str) -> String {
    gamma_name
        .strip_suffix(".gamma")
        .unwrap_or(gamma_name)
        .to_string()
}

/// All persistent tensors of a network, prefixed.
fn network_entries(net: &Network<f32>, prefix: &str) -> Vec<Entry> {
    let mut out = Vec::new();
    for layer in &net.layers {
        match layer {
            Layer::Dense { w, b }
            | Layer::Conv2d { w, b, .. }
            | Layer::ConvTranspose2d { w, b, .. } => {
                for p in [w, b] {
                    out.push(Entry {
                        name: format!("{prefix}{}", p.name),
                        shape: p.value.shape().to_vec(),
                        values: p.value.data().to_vec(),
                    });
                }
            }
            Layer::BatchNorm2d {
                gamma,
                beta,
                running_mean,
                running_var,
                updates,
                ..
            } => {
                let stem = bn_stem(&gamma.name);
                for p in [gamma, beta] {
                    out.push(Entry {
                        name: format!("{prefix}{}", p.name),
                        shape: p.value.shape().to_vec(),
                        values: p.value.data().to_vec(),
                    });
                }
                out.push(Entry {
                    name: format!("{prefix}{stem}.running_mean"),
                    shape: running_mean.shape().to_vec(),
                    values: running_mean.data().to_vec(),
                });
                out.push(Entry {
                    name: format!("{prefix}{stem}.running_var"),
                    shape: running_var.shape().to_vec(),
                    values: running_var.data().to_vec(),
                });
                out.push(Entry {
                    name: format!("{prefix}{stem}.updates"),
                    shape: vec![1],
                    values: vec![*updates as f32],
                });
            }
            _ => {}
        }
    }
    out
}

/// Copy entries back into a freshly built network of the same
/// architecture; every tensor must be present with a matching shape.
fn apply_entries(net: &mut Network<f32>, prefix: &str, entries: &BTreeMap<String, Entry>) -> Result<()> {
    for layer in &mut net.layers {
        match layer {
            Layer::Dense { w, b }
            | Layer::Conv2d { w, b, .. }
            | Layer::ConvTranspose2d { w, b, .. } => {
                for p in [w, b] {
                    let e = lookup(entries, &format!("{prefix}{}", p.name))?;
                    copy_tensor(&mut p.value, e)?;
                }
            }
            Layer::BatchNorm2d {
                gamma,
                beta,
                running_mean,
                running_var,
                updates,
                ..
            } => {
                let stem = bn_stem(&gamma.name);
                for p in [&mut *gamma, &mut *beta] {
                    let e = lookup(entries, &format!("{prefix}{}", p.name))?;
                    copy_tensor(&mut p.value, e)?;
                }
                copy_tensor(
                    running_mean,
                    lookup(entries, &format!("{prefix}{stem}.running_mean"))?,
                )?;
                copy_tensor(
                    running_var,
                    lookup(entries, &format!("{prefix}{stem}.running_var"))?,
                )?;
                let e = lookup(entries, &format!("{prefix}{stem}.updates"))?;
                *updates = e.values.first().copied().unwrap_or(0.0) as u64;
            }
            _ => {}
        }
    }
    Ok(())
}

fn lookup<'a>(entries: &'a BTreeMap<String, Entry>, name: &str) -> Result<&'a Entry> {
    entries
        .get(name)
        .with_context(|| format!("weight container is missing entry {name}"))
}

fn copy_tensor(dst: &mut Tensor<f32>, e: &Entry) -> Result<()> {
    if dst.shape() != e.shape.as_slice() {
        bail!(
            "entry {} has shape {:?}, architecture expects {:?}",
            e.name,
            e.shape,
            dst.shape()
        );
    }
    dst.data_mut().copy_from_slice(&e.values);
    Ok(())
}

pub fn write_entries(entries: &[Entry], w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let expect: usize = e.shape.iter().product();
        if expect != e.values.len() {
            bail!("entry {} has {} values for shape {:?}", e.name, e.values.len(), e.shape);
        }
        for v in &e.values {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_entries(r: &mut impl Read) -> Result<BTreeMap<String, Entry>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("not a weight container (bad magic)");
    }
    let version = read_u32(r)?;
    if version != VERSION {
        bail!("unsupported weight container version {version}");
    }
    let count = read_u32(r)? as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).context("entry name is not utf-8")?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            values.push(f32::from_bits(u32::from_le_bytes(buf)));
        }
        out.insert(name.clone(), Entry { name, shape, values });
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_network(net: &Network<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("create {path:?}"))?);
    write_entries(&network_entries(net, ""), &mut w)
}

pub fn load_network(net: &mut Network<f32>, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("open {path:?}"))?);
    let entries = read_entries(&mut r)?;
    apply_entries(net, "", &entries)
}

/// Generator and discriminator are stored as plain networks; the
/// discriminator's three sections carry `trunk.`/`adv.`/`cls.` prefixes.
pub fn save_generator(gen: &Generator<f32>, path: &Path) -> Result<()> {
    save_network(&gen.net, path)
}

pub fn load_generator(gen: &mut Generator<f32>, path: &Path) -> Result<()> {
    load_network(&mut gen.net, path)
}

pub fn save_discriminator(disc: &Discriminator<f32>, path: &Path) -> Result<()> {
    let mut entries = network_entries(&disc.trunk, "trunk.");
    entries.extend(network_entries(&disc.adv_head, "adv."));
    entries.extend(network_entries(&disc.cls_head, "cls."));
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("create {path:?}"))?);
    write_entries(&entries, &mut w)
}

pub fn load_discriminator(disc: &mut Discriminator<f32>, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("open {path:?}"))?);
    let entries = read_entries(&mut r)?;
    apply_entries(&mut disc.trunk, "trunk.", &entries)?;
    apply_entries(&mut disc.adv_head, "adv.", &entries)?;
    apply_entries(&mut disc.cls_head, "cls.", &entries)
}
