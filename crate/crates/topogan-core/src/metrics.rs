//! Evaluation metrics: confusion-matrix statistics, MSE, PSNR, and the
//! windowed structural similarity index.
//!
//! Everything here is a pure function; the test suite pins each one to
//! an independent brute-force reference.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::img::Rgb8Image;

// ---------------------------------------------------------------------------
// classification metrics
// ---------------------------------------------------------------------------

/// k×k count grid; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(CoreError::Shape(format!(
                "confusion grid of {} entries for k = {k}",
                counts.len()
            )));
        }
        Ok(Self { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        (0..self.k).map(|p| self.count(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> usize {
        (0..self.k).map(|t| self.count(t, pred)).sum()
    }
}

/// Tally predictions against ground truth. Labels must lie in [0, k).
pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(CoreError::Shape(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if k == 0 {
        return Err(CoreError::InvalidArg("k must be >= 1".into()));
    }
    let mut counts = vec![0usize; k * k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(CoreError::InvalidArg(format!(
                "label out of range: pred {p}, truth {t}, k {k}"
            )));
        }
        counts[t * k + p] += 1;
    }
    ConfusionMatrix::from_counts(k, counts)
}

/// One-vs-rest reduction of a multiclass confusion matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl BinaryCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn binary_counts(cm: &ConfusionMatrix, class: usize) -> Result<BinaryCounts> {
    if class >= cm.k() {
        return Err(CoreError::InvalidArg(format!(
            "class {class} out of range for k = {}",
            cm.k()
        )));
    }
    let tp = cm.count(class, class);
    let fp = cm.col_sum(class) - tp;
    let fn_ = cm.row_sum(class) - tp;
    let tn = cm.total() - tp - fp - fn_;
    Ok(BinaryCounts { tp, tn, fp, fn_ })
}

/// A rate in [0, 1] with a flag marking a zero-denominator convention
/// value (reported as 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub degenerate: bool,
}

impl Rate {
    fn of(num: usize, den: usize) -> Rate {
        if den == 0 {
            Rate {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Rate {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

/// (TP+TN) / total.
pub fn accuracy(b: &BinaryCounts) -> Rate {
    Rate::of(b.tp + b.tn, b.total())
}

/// TP / (TP+FP).
pub fn precision(b: &BinaryCounts) -> Rate {
    Rate::of(b.tp, b.tp + b.fp)
}

/// TP / (TP+FN).
pub fn recall(b: &BinaryCounts) -> Rate {
    Rate::of(b.tp, b.tp + b.fn_)
}

/// 2·TP / (2·TP+FP+FN).
pub fn f1(b: &BinaryCounts) -> Rate {
    Rate::of(2 * b.tp, 2 * b.tp + b.fp + b.fn_)
}

/// Multiclass summary: accuracy from the trace, the rest unweighted
/// (macro) means of the per-class one-vs-rest rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Classes whose precision/recall/F1 hit the zero-denominator
    /// convention.
    pub degenerate_classes: usize,
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(CoreError::Empty("macro metrics of an empty confusion matrix".into()));
    }
    let k = cm.k();
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    let mut degenerate = 0usize;
    for c in 0..k {
        let b = binary_counts(cm, c)?;
        let (p, r, f) = (precision(&b), recall(&b), f1(&b));
        if p.degenerate || r.degenerate || f.degenerate {
            degenerate += 1;
        }
        p_sum += p.value;
        r_sum += r.value;
        f_sum += f.value;
    }
    Ok(MacroMetrics {
        accuracy: cm.trace() as f64 / total as f64,
        precision: p_sum / k as f64,
        recall: r_sum / k as f64,
        f1: f_sum / k as f64,
        degenerate_classes: degenerate,
    })
}

// ---------------------------------------------------------------------------
// image quality metrics
// ---------------------------------------------------------------------------

/// Mean squared error over all pixels and channels, intensities promoted
/// to f64.
pub fn mse(f: &Rgb8Image, g: &Rgb8Image) -> Result<f64> {
    if f.width != g.width || f.height != g.height {
        return Err(CoreError::Shape(format!(
            "mse on {}x{} vs {}x{}",
            f.width, f.height, g.width, g.height
        )));
    }
    let n = f.data.len() as f64;
    let sum: f64 = f
        .data
        .iter()
        .zip(&g.data)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// 10·log10(255² / MSE) in dB; +∞ when the images are identical.
pub fn psnr(f: &Rgb8Image, g: &Rgb8Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(f, g)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(255.0 * 255.0 / mse)
    }
}

/// Parameters of the windowed structural similarity index.
#[derive(Clone, Copy, Debug)]
pub struct SsimParams {
    /// Square window side; the window slides with stride 1.
    pub window: usize,
    /// Gaussian weighting sigma in pixels.
    pub sigma: f64,
    /// Stabilizer (0.01·L)² for the luminance term.
    pub c1: f64,
    /// Stabilizer (0.03·L)² for the contrast term.
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        let l = 255.0;
        Self {
            window: 11,
            sigma: 1.5,
            c1: (0.01 * l) * (0.01 * l),
            c2: (0.03 * l) * (0.03 * l),
        }
    }
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - half;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Mean windowed SSIM of two single-channel images (row-major, w×h) with
/// Gaussian-weighted window statistics. Implemented with separable
/// filtering; the test suite checks it against a direct per-window
/// evaluation.
pub fn ssim_luma(a: &[f64], b: &[f64], w: usize, h: usize, params: &SsimParams) -> Result<f64> {
    if a.len() != w * h || b.len() != w * h {
        return Err(CoreError::Shape(format!(
            "ssim buffers {}/{} != {w}x{h}",
            a.len(),
            b.len()
        )));
    }
    let win = params.window;
    if w < win || h < win {
        return Err(CoreError::Shape(format!(
            "image {w}x{h} smaller than the {win}x{win} ssim window"
        )));
    }
    let taps = gaussian_taps(win, params.sigma);

    let a2: Vec<f64> = a.iter().map(|x| x * x).collect();
    let b2: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let e_a2 = filter_valid(&a2, w, h, &taps);
    let e_b2 = filter_valid(&b2, w, h, &taps);
    let e_ab = filter_valid(&ab, w, h, &taps);

    let (c1, c2) = (params.c1, params.c2);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_a2[i] - ma * ma;
        let vb = e_b2[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}

/// SSIM of two color images on their luminance channel.
pub fn ssim_rgb(f: &Rgb8Image, g: &Rgb8Image, params: &SsimParams) -> Result<f64> {
    if f.width != g.width || f.height != g.height {
        return Err(CoreError::Shape(format!(
            "ssim on {}x{} vs {}x{}",
            f.width, f.height, g.width, g.height
        )));
    }
    ssim_luma(&f.luminance(), &g.luminance(), f.width, f.height, params)
}

/// Separable valid-mode weighted filter; output is (w−win+1)×(h−win+1).
fn filter_valid(x: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let win = taps.len();
    let ow = w - win + 1;
    let oh = h - win + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0f64; ow * h];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        let out = &mut tmp[y * ow..(y + 1) * ow];
        for (ox, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                s += tap * row[ox + t];
            }
            *o = s;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f64; ow * oh];
    for oy in 0..oh {
        let dst = &mut out[oy * ow..(oy + 1) * ow];
        for (t, &tap) in taps.iter().enumerate() {
            let src = &tmp[(oy + t) * ow..(oy + t + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += tap * s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_diagonal_for_perfect_predictions() {
        let labels = [0usize, 1, 2, 1, 0, 2, 2];
        let cm = confusion_matrix(&labels, &labels, 3).unwrap();
        assert_eq!(cm.trace(), labels.len());
        assert_eq!(cm.total(), labels.len());
    }

    #[test]
    fn confusion_empty_input() {
        let cm = confusion_matrix(&[], &[], 4).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn confusion_rejects_out_of_range() {
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }

    #[test]
    fn binary_counts_hand_case() {
        // k=2, cm = [[3,1],[2,4]], class 1 → TP=4 FP=1 FN=2 TN=3.
        let cm = ConfusionMatrix::from_counts(2, alloc::vec![3, 1, 2, 4]).unwrap();
        let b = binary_counts(&cm, 1).unwrap();
        assert_eq!(
            b,
            BinaryCounts {
                tp: 4,
                tn: 3,
                fp: 1,
                fn_: 2
            }
        );
        assert_eq!(b.total(), cm.total());
    }

    #[test]
    fn rates_closed_forms() {
        let b = BinaryCounts {
            tp: 9,
            tn: 9,
            fp: 1,
            fn_: 1,
        };
        assert_eq!(accuracy(&b).value, 0.9);
        assert_eq!(precision(&b).value, 0.9);
        assert_eq!(recall(&b).value, 0.9);
        assert_eq!(f1(&b).value, 0.9);

        let b = BinaryCounts {
            tp: 2,
            tn: 0,
            fp: 1,
            fn_: 1,
        };
        assert!((f1(&b).value - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_precision_flags() {
        let b = BinaryCounts {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 2,
        };
        let p = precision(&b);
        assert_eq!(p.value, 0.0);
        assert!(p.degenerate);
    }

    #[test]
    fn macro_metrics_diagonal_is_one() {
        let cm = ConfusionMatrix::from_counts(3, alloc::vec![4, 0, 0, 0, 2, 0, 0, 0, 7]).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn mse_and_psnr_closed_forms() {
        let black = Rgb8Image::black(4, 4);
        let mut white = Rgb8Image::black(4, 4);
        for v in white.data.iter_mut() {
            *v = 255;
        }
        assert_eq!(mse(&black, &black).unwrap(), 0.0);
        assert_eq!(mse(&black, &white).unwrap(), 65025.0);
        assert_eq!(psnr(&black, &black).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(65025.0) - 0.0).abs() < 1e-12);
        assert!((psnr_from_mse(65.025) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_images_is_one() {
        let mut img = Rgb8Image::black(16, 16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 251) as u8;
        }
        let s = ssim_rgb(&img, &img, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        // All-0 vs all-255: window means 0 and 255, zero variances:
        // value = c1·c2 / ((255²+c1)·c2) ≈ 1.0e-4.
        let a = Rgb8Image::black(16, 16);
        let mut b = Rgb8Image::black(16, 16);
        for v in b.data.iter_mut() {
            *v = 255;
        }
        let p = SsimParams::default();
        let s = ssim_rgb(&a, &b, &p).unwrap();
        let expect = p.c1 / (255.0 * 255.0 + p.c1);
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
        assert!((expect - 1.0e-4).abs() < 2e-6);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Rgb8Image::black(8, 8);
        assert!(ssim_rgb(&a, &a, &SsimParams::default()).is_err());
    }
}
