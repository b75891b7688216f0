//! SSIM, PSNR and the evaluation report.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionModel, SourceBundle};
use crate::gec::GecModel;
use crate::pose::{Dataset, ImageTensor};
use crate::train::{guides_for, TurnPair};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const PSNR_CAP_DB: f64 = 100.0;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Channel-mean grayscale `[H·W]`.
pub fn gray(img: &ImageTensor) -> Vec<f64> {
    let plane = img.height() * img.width();
    let d = img.tensor().data();
    (0..plane).map(|i| (d[i] + d[plane + i] + d[2 * plane + i]) / 3.0).collect()
}

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::contract(format!(
            "image shapes differ: {:?} vs {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(())
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = g.iter().enumerate().map(|(k, gk)| gk * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = g.iter().enumerate().map(|(k, gk)| gk * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Mean structural similarity of the grayscale images over every valid
/// 11×11 Gaussian window (dynamic range 1).
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(format!("{h}x{w} image is smaller than the SSIM window")));
    }
    let (x, y) = (gray(a), gray(b));
    let g = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter(&x, h, w, &g);
    let my = filter(&y, h, w, &g);
    let mxx = filter(&prod(&x, &x), h, w, &g);
    let myy = filter(&prod(&y, &y), h, w, &g);
    let mxy = filter(&prod(&x, &y), h, w, &g);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// `10·log10(peak²/MSE)`, or `cap_db` when the images are identical.
pub fn psnr_with(a: &ImageTensor, b: &ImageTensor, peak: f64, cap_db: f64) -> Result<f64> {
    same_shape(a, b)?;
    let (da, db) = (a.tensor().data(), b.tensor().data());
    let mse = da.iter().zip(db).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / da.len() as f64;
    if mse == 0.0 {
        return Ok(cap_db);
    }
    Ok((10.0 * libm::log10(peak * peak / mse)).min(cap_db))
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    psnr_with(a, b, 1.0, PSNR_CAP_DB)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub person: usize,
    pub source_yaw: f64,
    pub target_yaw: f64,
    pub ssim: f64,
    pub psnr: f64,
}

/// Settings echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Synthesis iterations per pair.
    pub steps: usize,
    pub variant: String,
    pub seed: u64,
    /// Intermediate guides dropped at inference.
    #[serde(default)]
    pub removed: usize,
    #[serde(default)]
    pub arm: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ReportConfig,
    pub pairs: Vec<PairRecord>,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    /// Metrics that need external pretrained networks; always absent.
    pub fid: Option<f64>,
    pub lpips: Option<f64>,
}

impl MetricReport {
    pub fn from_pairs(config: ReportConfig, pairs: Vec<PairRecord>) -> Self {
        let n = pairs.len().max(1) as f64;
        let mean_ssim = pairs.iter().map(|p| p.ssim).sum::<f64>() / n;
        let mean_psnr = pairs.iter().map(|p| p.psnr).sum::<f64>() / n;
        MetricReport {
            config,
            pairs,
            mean_ssim,
            mean_psnr,
            fid: None,
            lpips: None,
        }
    }

    /// Aligned human-readable table with the aggregate last.
    pub fn table(&self) -> String {
        let mut s = format!("{:>6} {:>8} {:>8} {:>8} {:>8}\n", "person", "src_yaw", "tgt_yaw", "ssim", "psnr");
        for p in &self.pairs {
            s += &format!(
                "{:>6} {:>8.1} {:>8.1} {:>8.4} {:>8.3}\n",
                p.person, p.source_yaw, p.target_yaw, p.ssim, p.psnr
            );
        }
        s += &format!("{:>6} {:>8} {:>8} {:>8.4} {:>8.3}\n", "mean", "", "", self.mean_ssim, self.mean_psnr);
        s
    }
}

/// Inference settings for [`eval_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub steps: usize,
    /// Intermediate guides randomly removed before synthesis.
    pub remove: usize,
    pub seed: u64,
}

/// Synthesizes every pair's target through the evolution loop and scores it
/// against the ground-truth frame.
pub fn eval_report(
    fusion: &FusionModel,
    gec: Option<&GecModel>,
    data: &Dataset,
    pairs: &[TurnPair],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let sigma = fusion.cfg.heatmap_sigma;
    let mut records = Vec::with_capacity(pairs.len());
    for (k, pair) in pairs.iter().enumerate() {
        let src = data.frame(pair.person, pair.source);
        let tgt = data.frame(pair.person, pair.target);
        let mut rng = crate::rng_from_seed(opts.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let guides = guides_for(data, pair, gec, opts.steps, opts.remove, false, &mut rng)?;
        let bundle = SourceBundle::new(src.image.clone(), &src.skeleton, sigma);
        let (img, _) = fusion.synthesize_guided(&bundle, &guides)?;
        records.push(PairRecord {
            person: pair.person,
            source_yaw: src.yaw_deg,
            target_yaw: tgt.yaw_deg,
            ssim: ssim(&img, &tgt.image)?,
            psnr: psnr(&img, &tgt.image)?,
        });
    }
    let config = ReportConfig {
        steps: opts.steps,
        variant: format!("{:?}", fusion.cfg.variant),
        seed: opts.seed,
        removed: opts.remove,
        arm: None,
    };
    Ok(MetricReport::from_pairs(config, records))
}
