//! Procedurally rendered corneal-topography phantoms.
//!
//! The phantom corpus stands in for a private clinical dataset: four map
//! types, each in a normal and an abnormal condition, rendered as 64×64
//! color maps. Realism is not the goal — the renderer exists to provide
//! labeled, class-separable, patient-grouped images so the full training
//! and evaluation pipeline can run end to end. Abnormal maps carry an
//! off-center lesion whose amplitude sits above a configurable
//! separability margin; normal maps stay below it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::img::Rgb8Image;
use crate::rng::{derive_seed, SeedStream};

pub const IMAGE_SIZE: usize = 64;

/// Default per-class corpus sizes (class order: per map type,
/// normal then abnormal).
pub const DEFAULT_CLASS_COUNTS: [usize; 8] = [248, 460, 338, 548, 765, 167, 693, 229];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapType {
    Sagittal,
    CornealThickness,
    ElevationFront,
    ElevationBack,
}

impl MapType {
    pub const ALL: [MapType; 4] = [
        MapType::Sagittal,
        MapType::CornealThickness,
        MapType::ElevationFront,
        MapType::ElevationBack,
    ];

    pub fn index(self) -> usize {
        match self {
            MapType::Sagittal => 0,
            MapType::CornealThickness => 1,
            MapType::ElevationFront => 2,
            MapType::ElevationBack => 3,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            MapType::Sagittal => "sag",
            MapType::CornealThickness => "ct",
            MapType::ElevationFront => "ef",
            MapType::ElevationBack => "eb",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    Normal,
    Abnormal,
}

impl Condition {
    pub fn index(self) -> usize {
        match self {
            Condition::Normal => 0,
            Condition::Abnormal => 1,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Abnormal => "abnormal",
        }
    }
}

/// Class encoding: label = 2·map_index + condition_index.
pub fn class_label(map: MapType, cond: Condition) -> usize {
    2 * map.index() + cond.index()
}

pub fn decode_label(label: usize) -> Result<(MapType, Condition)> {
    if label >= 8 {
        return Err(CoreError::InvalidArg(format!("class label {label} out of range")));
    }
    let map = MapType::ALL[label / 2];
    let cond = if label % 2 == 0 {
        Condition::Normal
    } else {
        Condition::Abnormal
    };
    Ok((map, cond))
}

/// Human-readable class name, e.g. `normal_sag`.
pub fn class_name(label: usize, num_classes: usize) -> String {
    if num_classes == 2 {
        return if label == 0 {
            "normal_sag".into()
        } else {
            "abnormal_sag".into()
        };
    }
    match decode_label(label) {
        Ok((m, c)) => format!("{}_{}", c.short_name(), m.short_name()),
        Err(_) => format!("class{label}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    RealPhantom,
    Synthesized,
}

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub pixels: Rgb8Image,
    pub class_label: usize,
    pub patient_id: u32,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<LabeledImage>, num_classes: usize) -> Self {
        Self {
            images,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.num_classes];
        for img in &self.images {
            counts[img.class_label] += 1;
        }
        counts
    }

    /// Image indices grouped by patient, in ascending patient order.
    pub fn patient_index(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut idx: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, img) in self.images.iter().enumerate() {
            idx.entry(img.patient_id).or_default().push(i);
        }
        idx
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Images of one class, borrowed.
    pub fn of_class(&self, label: usize) -> Vec<&LabeledImage> {
        self.images
            .iter()
            .filter(|im| im.class_label == label)
            .collect()
    }
}

/// Rendering parameters for one phantom image.
#[derive(Clone, Debug)]
pub struct PhantomParams {
    pub map_type: MapType,
    pub condition: Condition,
    pub patient_id: u32,
    /// Within-condition position in [0, 1]; scales the lesion amplitude
    /// inside the class's band.
    pub severity: f64,
    /// Lesion center offset from the map center, in pixels.
    pub apex_offset: (f64, f64),
    /// Peak lesion height in field units. Normal: ≤ 0.5 − margin/2;
    /// abnormal: ≥ 0.5 + margin/2.
    pub lesion_amplitude: f64,
    /// Lesion Gaussian radius in pixels.
    pub lesion_sigma: f64,
    /// Orientation of the sagittal bowtie, radians.
    pub bowtie_angle: f64,
    /// Scales the base radial field, around 1.
    pub base_curvature: f64,
}

/// Corpus-level rendering configuration.
#[derive(Clone, Copy, Debug)]
pub struct PhantomCfg {
    /// Gap between the normal and abnormal lesion-amplitude bands.
    /// Larger margins make the classes easier to tell apart.
    pub margin: f64,
    /// Per-pixel additive noise amplitude in field units.
    pub noise: f64,
}

impl Default for PhantomCfg {
    fn default() -> Self {
        Self {
            margin: 0.5,
            noise: 0.015,
        }
    }
}

impl PhantomCfg {
    /// Upper edge of the normal amplitude band.
    pub fn normal_max(&self) -> f64 {
        0.5 - self.margin / 2.0
    }

    /// Lower edge of the abnormal amplitude band.
    pub fn abnormal_min(&self) -> f64 {
        0.5 + self.margin / 2.0
    }

    /// Amplitude for a severity in [0,1] under the given condition.
    pub fn amplitude(&self, cond: Condition, severity: f64) -> f64 {
        match cond {
            Condition::Normal => severity * self.normal_max(),
            Condition::Abnormal => self.abnormal_min() + severity * (1.0 - self.abnormal_min()),
        }
    }
}

/// Eight-anchor blue→green→yellow→red colormap over [0, 1].
const COLOR_ANCHORS: [[u8; 3]; 8] = [
    [0, 0, 160],
    [0, 90, 255],
    [0, 185, 255],
    [0, 220, 120],
    [120, 255, 40],
    [255, 230, 0],
    [255, 120, 0],
    [210, 0, 0],
];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 7.0;
    let i = (t as usize).min(6);
    let frac = t - i as f64;
    let (a, b) = (COLOR_ANCHORS[i], COLOR_ANCHORS[i + 1]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = libm::round(a[c] as f64 + frac * (b[c] as f64 - a[c] as f64)) as u8;
    }
    out
}

/// Scalar field value before color mapping, in [0, 1] after clamping.
fn field_value(p: &PhantomParams, x: f64, y: f64) -> f64 {
    let half = IMAGE_SIZE as f64 / 2.0;
    let (dx, dy) = (x - half, y - half);
    let r = libm::sqrt(dx * dx + dy * dy) / half;
    let theta = libm::atan2(dy, dx);
    let k = p.base_curvature;
    // Base fields stay inside ≈ [0.12, 0.56] so the lesion term owns the
    // top of the color range: abnormal amplitudes push well past the
    // last color anchors while normal ones cannot reach them.
    let base = match p.map_type {
        // Central mound with a mid-peripheral bowtie.
        MapType::Sagittal => {
            let dome = 0.30 + 0.12 * k * (1.0 - r * r);
            let bowtie = 0.10
                * libm::cos(2.0 * (theta - p.bowtie_angle))
                * libm::exp(-(r - 0.55) * (r - 0.55) / 0.08);
            dome + bowtie
        }
        // Thin center, thickening outward.
        MapType::CornealThickness => 0.18 + 0.30 * k * r * r,
        // Bright mid-peripheral ring.
        MapType::ElevationFront => {
            0.22 + 0.26 * k * libm::exp(-(r - 0.45) * (r - 0.45) / 0.05)
        }
        // Dark mid-peripheral trough on a high plateau.
        MapType::ElevationBack => {
            0.52 - 0.30 * k * libm::exp(-(r - 0.35) * (r - 0.35) / 0.06)
        }
    };
    let lesion = if p.lesion_amplitude > 0.0 {
        let lx = x - (half + p.apex_offset.0);
        let ly = y - (half + p.apex_offset.1);
        let d2 = lx * lx + ly * ly;
        p.lesion_amplitude * libm::exp(-d2 / (2.0 * p.lesion_sigma * p.lesion_sigma))
    } else {
        0.0
    };
    base + lesion
}

/// Render one phantom. Deterministic given (params, rng state).
pub fn generate_phantom(params: &PhantomParams, noise: f64, rng: &mut SeedStream) -> LabeledImage {
    let mut img = Rgb8Image::black(IMAGE_SIZE, IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let mut v = field_value(params, x as f64 + 0.5, y as f64 + 0.5);
            if noise > 0.0 {
                v += noise * rng.uniform_sym();
            }
            img.set_pixel(x, y, colormap(v));
        }
    }
    LabeledImage {
        pixels: img,
        class_label: class_label(params.map_type, params.condition),
        patient_id: params.patient_id,
        provenance: Provenance::RealPhantom,
    }
}

/// Build a corpus with the requested per-class image counts.
///
/// `counts` has 8 entries (four map types × normal/abnormal) or, for the
/// reduced two-class corpus, 2 entries (sagittal normal/abnormal).
/// Patients carry one condition tendency and contribute at most one
/// image per map type, so patient-level splits are meaningful.
pub fn generate_corpus(counts: &[usize], cfg: &PhantomCfg, seed: u64) -> Result<Dataset> {
    let (maps, num_classes): (&[MapType], usize) = match counts.len() {
        8 => (&MapType::ALL, 8),
        2 => (&MapType::ALL[..1], 2),
        n => {
            return Err(CoreError::InvalidArg(format!(
                "expected 2 or 8 class counts, got {n}"
            )))
        }
    };
    let conditions = [Condition::Normal, Condition::Abnormal];
    // One patient pool per condition, sized by the largest class of that
    // condition across map types.
    let mut patients_per_cond = [0usize; 2];
    for (mi, _) in maps.iter().enumerate() {
        for cond in conditions {
            let label = reduced_label(mi, cond, num_classes);
            patients_per_cond[cond.index()] =
                patients_per_cond[cond.index()].max(counts[label]);
        }
    }

    // Per-patient base morphology.
    struct PatientBase {
        id: u32,
        severity: f64,
        apex: (f64, f64),
        sigma: f64,
        angle: f64,
        curvature: f64,
    }
    let mut pools: [Vec<PatientBase>; 2] = [Vec::new(), Vec::new()];
    let mut next_id = 0u32;
    let mut prng = SeedStream::new(derive_seed(seed, "phantom/patients"));
    for cond in conditions {
        for _ in 0..patients_per_cond[cond.index()] {
            pools[cond.index()].push(PatientBase {
                id: next_id,
                severity: prng.uniform01(),
                apex: (prng.uniform_in(-8.0, 8.0), prng.uniform_in(-8.0, 8.0)),
                sigma: prng.uniform_in(5.0, 9.0),
                angle: prng.uniform_in(0.0, core::f64::consts::PI),
                curvature: prng.uniform_in(0.85, 1.15),
            });
            next_id += 1;
        }
    }

    let mut images = Vec::new();
    for (mi, &map) in maps.iter().enumerate() {
        for cond in conditions {
            let label = reduced_label(mi, cond, num_classes);
            let want = counts[label];
            let pool = &pools[cond.index()];
            // Which patients contribute an image of this map type.
            let mut order: Vec<usize> = (0..pool.len()).collect();
            let mut srng = SeedStream::new(derive_seed(
                seed,
                &format!("phantom/assign/{}/{}", map.short_name(), cond.short_name()),
            ));
            srng.shuffle(&mut order);
            for (i, &pidx) in order.iter().take(want).enumerate() {
                let base = &pool[pidx];
                let mut irng = SeedStream::new(derive_seed(
                    seed,
                    &format!("phantom/img/{label}/{i}"),
                ));
                // Small per-image jitter around the patient morphology.
                let severity = (base.severity + 0.1 * irng.uniform_sym()).clamp(0.0, 1.0);
                let params = PhantomParams {
                    map_type: map,
                    condition: cond,
                    patient_id: base.id,
                    severity,
                    apex_offset: (
                        base.apex.0 + irng.uniform_sym(),
                        base.apex.1 + irng.uniform_sym(),
                    ),
                    lesion_amplitude: cfg.amplitude(cond, severity),
                    lesion_sigma: base.sigma,
                    bowtie_angle: base.angle + 0.08 * irng.uniform_sym(),
                    base_curvature: base.curvature,
                };
                let mut li = generate_phantom(&params, cfg.noise, &mut irng);
                li.class_label = label;
                images.push(li);
            }
        }
    }
    Ok(Dataset::new(images, num_classes))
}

fn reduced_label(map_index: usize, cond: Condition, num_classes: usize) -> usize {
    if num_classes == 2 {
        cond.index()
    } else {
        2 * map_index + cond.index()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_params(cond: Condition, amp: f64) -> PhantomParams {
        PhantomParams {
            map_type: MapType::Sagittal,
            condition: cond,
            patient_id: 0,
            severity: 0.5,
            apex_offset: (4.0, -3.0),
            lesion_amplitude: amp,
            lesion_sigma: 7.0,
            bowtie_angle: 0.6,
            base_curvature: 1.0,
        }
    }

    #[test]
    fn deterministic_render() {
        let p = base_params(Condition::Abnormal, 0.8);
        let a = generate_phantom(&p, 0.015, &mut SeedStream::new(5));
        let b = generate_phantom(&p, 0.015, &mut SeedStream::new(5));
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn lesion_separates_conditions() {
        // Max-severity abnormal vs zero-severity normal, same morphology.
        let cfg = PhantomCfg::default();
        let normal = base_params(Condition::Normal, cfg.amplitude(Condition::Normal, 0.0));
        let abnormal = base_params(Condition::Abnormal, cfg.amplitude(Condition::Abnormal, 1.0));
        let a = generate_phantom(&normal, 0.0, &mut SeedStream::new(1));
        let b = generate_phantom(&abnormal, 0.0, &mut SeedStream::new(1));
        let diff = a.pixels.max_abs_diff(&b.pixels).unwrap();
        assert!(
            diff as f64 > cfg.margin * 127.0,
            "max pixel diff {diff} too small for margin {}",
            cfg.margin
        );
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let counts = [10usize; 8];
        let cfg = PhantomCfg::default();
        let a = generate_corpus(&counts, &cfg, 42).unwrap();
        assert_eq!(a.len(), 80);
        assert_eq!(a.class_counts(), alloc::vec![10; 8]);
        let b = generate_corpus(&counts, &cfg, 42).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.patient_id, y.patient_id);
        }
    }

    #[test]
    fn default_counts_total() {
        let total: usize = DEFAULT_CLASS_COUNTS.iter().sum();
        assert_eq!(total, 3448);
    }

    #[test]
    fn patients_group_images_with_shared_condition() {
        let ds = generate_corpus(&[6, 6, 6, 6, 6, 6, 6, 6], &PhantomCfg::default(), 3).unwrap();
        for (_, idxs) in ds.patient_index() {
            let conds: Vec<usize> = idxs.iter().map(|&i| ds.images[i].class_label % 2).collect();
            assert!(conds.windows(2).all(|w| w[0] == w[1]));
            assert!(idxs.len() <= 4);
            // At most one image per map type.
            let mut maps: Vec<usize> = idxs
                .iter()
                .map(|&i| ds.images[i].class_label / 2)
                .collect();
            maps.sort_unstable();
            maps.dedup();
            assert_eq!(maps.len(), idxs.len());
        }
    }

    #[test]
    fn two_class_corpus() {
        let ds = generate_corpus(&[12, 9], &PhantomCfg::default(), 7).unwrap();
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.class_counts(), alloc::vec![12, 9]);
    }

    #[test]
    fn rejects_bad_count_length() {
        assert!(generate_corpus(&[1, 2, 3], &PhantomCfg::default(), 0).is_err());
    }
}
