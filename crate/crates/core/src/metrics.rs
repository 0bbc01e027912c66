//! PSNR, SSIM and D-map IoU, plus per-dataset report aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{io, Frame, Mask};

/// Returned for identical frames so aggregates stay finite.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10 log10(1 / MSE)` over all samples, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully contained 11x11 windows, computed per channel
/// and averaged. Uses separable Gaussian filtering.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(c).step_by(3).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(c).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, h, w, &taps);
        let mu_y = filter_valid(&y, h, w, &taps);
        let s_xx = filter_valid(&xx, h, w, &taps);
        let s_yy = filter_valid(&yy, h, w, &taps);
        let s_xy = filter_valid(&xy, h, w, &taps);
        let n = mu_x.len();
        let mut sum = 0.0;
        for i in 0..n {
            sum += ssim_term(mu_x[i], mu_y[i], s_xx[i], s_yy[i], s_xy[i], c1, c2);
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

#[inline]
pub(crate) fn ssim_term(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64, c1: f64, c2: f64) -> f64 {
    let vx = exx - mx * mx;
    let vy = eyy - my * my;
    let cov = exy - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Separable "valid" correlation: output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// IoU of `d >= threshold` against a binary ground truth; 1 when both
/// supports are empty.
pub fn dmap_iou(d: &Mask, dgt: &Mask, threshold: f64) -> Result<f64> {
    dgt.ensure_dims(d.dims())?;
    if !dgt.is_binary() {
        return Err(Error::InvalidArgument("ground-truth D-map must be binary".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in d.data().iter().zip(dgt.data()) {
        let p = p >= threshold;
        let g = g == 1.0;
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
    pub mean: Aggregate,
    pub count: usize,
    pub iou_count: usize,
    /// Perceptual metrics that are not computed by this tool.
    pub absent_metrics: Vec<String>,
}

impl MetricsReport {
    /// Sorts by id and computes the arithmetic means.
    pub fn from_samples(mut samples: Vec<SampleMetrics>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let n = samples.len();
        let mean = |f: &dyn Fn(&SampleMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                samples.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let ious: Vec<f64> = samples.iter().filter_map(|s| s.iou).collect();
        let iou = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
        MetricsReport {
            mean: Aggregate {
                psnr_db: mean(&|s| s.psnr_db),
                ssim: mean(&|s| s.ssim),
                iou,
            },
            count: n,
            iou_count: ious.len(),
            samples,
            absent_metrics: vec!["lpips".into()],
        }
    }

    /// CSV with columns `id,psnr_db,ssim,iou` (empty iou when absent).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr_db,ssim,iou\n");
        for s in &self.samples {
            let iou = s.iou.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", s.id, s.psnr_db, s.ssim, iou));
        }
        out
    }
}

pub fn sample_metrics(
    id: &str,
    pred: &Frame,
    gt: &Frame,
    dmaps: Option<(&Mask, &Mask)>,
    threshold: f64,
) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        id: id.to_owned(),
        psnr_db: psnr(pred, gt)?,
        ssim: ssim(pred, gt)?,
        iou: dmaps.map(|(d, g)| dmap_iou(d, g, threshold)).transpose()?,
    })
}

fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_owned()));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "ppm")) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_owned(), path);
        }
    }
    Ok(out)
}

fn counterpart(map: &BTreeMap<String, PathBuf>, id: &str, dir: &Path) -> Result<PathBuf> {
    map.get(id)
        .cloned()
        .ok_or_else(|| Error::MissingFile(dir.join(format!("{id}.png"))))
}

/// Pairs files by shared basename across `pred_dir` and `gt_dir` (and the
/// optional predicted/ground-truth D-map directories) and scores each pair.
pub fn evaluate_dataset(
    pred_dir: &Path,
    gt_dir: &Path,
    dmap_dirs: Option<(&Path, &Path)>,
    threshold: f64,
) -> Result<MetricsReport> {
    let preds = images_by_stem(pred_dir)?;
    let gts = images_by_stem(gt_dir)?;
    for id in gts.keys() {
        counterpart(&preds, id, pred_dir)?;
    }
    let dmaps = dmap_dirs
        .map(|(p, g)| Ok::<_, Error>((images_by_stem(p)?, images_by_stem(g)?, p, g)))
        .transpose()?;
    let mut samples = Vec::with_capacity(preds.len());
    for (id, pred_path) in &preds {
        let gt = io::read_frame(counterpart(&gts, id, gt_dir)?)?;
        let pred = io::read_frame(pred_path)?;
        let masks = match &dmaps {
            Some((pm, gm, pdir, gdir)) => Some((
                io::read_mask(counterpart(pm, id, pdir)?)?,
                io::read_mask(counterpart(gm, id, gdir)?)?,
            )),
            None => None,
        };
        let pair = masks.as_ref().map(|(d, g)| (d, g));
        samples.push(sample_metrics(id, &pred, &gt, pair, threshold)?);
    }
    Ok(MetricsReport::from_samples(samples))
}
