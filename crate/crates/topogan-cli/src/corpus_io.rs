//! Corpus on disk: one PNG per image plus `manifest.csv`.
//!
//! The manifest starts with `#`-prefixed header lines carrying the
//! master seed and corpus parameters, then a column header and one row
//! per image: `path,class_label,map_type,condition,patient_id,provenance,seed`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use topogan_core::img::Rgb8Image;
use topogan_core::phantom::{class_name, decode_label, Dataset, LabeledImage, Provenance};
use topogan_core::rng::derive_seed;

pub fn write_png(img: &Rgb8Image, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .context("image buffer size mismatch")?;
    buf.save(path).with_context(|| format!("write {path:?}"))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Rgb8Image> {
    let img = image::open(path)
        .with_context(|| format!("read {path:?}"))?
        .to_rgb8();
    Ok(Rgb8Image::new(
        img.width() as usize,
        img.height() as usize,
        img.into_raw(),
    )?)
}

fn map_condition_names(label: usize, num_classes: usize) -> (String, String) {
    if num_classes == 2 {
        let cond = if label == 0 { "normal" } else { "abnormal" };
        ("sag".to_string(), cond.to_string())
    } else {
        match decode_label(label) {
            Ok((m, c)) => (m.short_name().to_string(), c.short_name().to_string()),
            Err(_) => ("unknown".to_string(), "unknown".to_string()),
        }
    }
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::RealPhantom => "real_phantom",
        Provenance::Synthesized => "synthesized",
    }
}

/// Write a freshly generated corpus (images in class-major generation
/// order, as produced by the corpus generator). Per-image seeds are the
/// derivations the generator used.
pub fn write_corpus(ds: &Dataset, dir: &Path, master_seed: u64, margin: f64, noise: f64) -> Result<()> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).with_context(|| format!("create {img_dir:?}"))?;
    let mut rows = String::new();
    rows.push_str(&format!(
        "# master_seed={master_seed} num_classes={} margin={margin} noise={noise}\n",
        ds.num_classes
    ));
    rows.push_str("path,class_label,map_type,condition,patient_id,provenance,seed\n");
    let mut per_class_index = vec![0usize; ds.num_classes];
    for im in &ds.images {
        let idx = per_class_index[im.class_label];
        per_class_index[im.class_label] += 1;
        let name = format!("{}_{idx:05}.png", class_name(im.class_label, ds.num_classes));
        let rel = format!("images/{name}");
        write_png(&im.pixels, &img_dir.join(&name))?;
        let (map, cond) = map_condition_names(im.class_label, ds.num_classes);
        let seed = derive_seed(master_seed, &format!("phantom/img/{}/{}", im.class_label, idx));
        rows.push_str(&format!(
            "{rel},{},{map},{cond},{},{},{seed}\n",
            im.class_label,
            im.patient_id,
            provenance_name(im.provenance)
        ));
    }
    fs::write(dir.join("manifest.csv"), rows)?;
    Ok(())
}

/// Write synthesized images: `<class>_<index>.png` plus a manifest
/// recording provenance and the generation seed.
pub fn write_synthesized(
    images: &[LabeledImage],
    dir: &Path,
    num_classes: usize,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("create {dir:?}"))?;
    let mut rows = String::new();
    rows.push_str(&format!("# seed={seed} num_classes={num_classes}\n"));
    rows.push_str("path,class,provenance,seed\n");
    let mut per_class_index = vec![0usize; num_classes];
    for im in images {
        let idx = per_class_index[im.class_label];
        per_class_index[im.class_label] += 1;
        let name = format!("{}_{idx:05}.png", im.class_label);
        write_png(&im.pixels, &dir.join(&name))?;
        rows.push_str(&format!(
            "{name},{},{},{seed}\n",
            im.class_label,
            provenance_name(im.provenance)
        ));
    }
    fs::write(dir.join("manifest.csv"), rows)?;
    Ok(())
}

/// Load a corpus directory written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join("manifest.csv");
    let text = fs::read_to_string(&manifest).with_context(|| format!("read {manifest:?}"))?;
    let mut num_classes = None;
    let mut images = Vec::new();
    let mut header_seen = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            for kv in rest.split_whitespace() {
                if let Some(v) = kv.strip_prefix("num_classes=") {
                    num_classes = Some(v.parse::<usize>().context("bad num_classes")?);
                }
            }
            continue;
        }
        if !header_seen {
            header_seen = true; // column header row
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("manifest row has {} fields: {line}", fields.len());
        }
        let path: PathBuf = dir.join(fields[0]);
        let class_label: usize = fields[1].parse().context("bad class label")?;
        let patient_id: u32 = fields[4].parse().context("bad patient id")?;
        let provenance = match fields[5] {
            "real_phantom" => Provenance::RealPhantom,
            "synthesized" => Provenance::Synthesized,
            other => bail!("unknown provenance {other}"),
        };
        images.push(LabeledImage {
            pixels: read_png(&path)?,
            class_label,
            patient_id,
            provenance,
        });
    }
    let num_classes = num_classes.context("manifest header lacks num_classes")?;
    if images.is_empty() {
        bail!("corpus at {dir:?} has no images");
    }
    Ok(Dataset::new(images, num_classes))
}
