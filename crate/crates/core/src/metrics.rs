//! Scoring functions: photometric, geometric and mask losses, image metrics,
//! compression ratio and the plain-text metrics table.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gir::GaussianImage;
use crate::imaging::RgbImage;
use crate::scene::GlobalGaussianStore;

pub const BCE_EPS: f64 = 1e-7;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid loss weights: {0}")]
    Weights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_sigma: f64,
    pub lambda_pos: f64,
    pub lambda_neg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_sigma: 0.5, lambda_pos: 2.0, lambda_neg: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.lambda_sigma > 0.0) {
            return Err(MetricsError::Weights(format!("lambda_sigma {} must be > 0", self.lambda_sigma)));
        }
        if !(self.lambda_pos > self.lambda_neg && self.lambda_neg > 0.0) {
            return Err(MetricsError::Weights(format!(
                "need lambda_pos > lambda_neg > 0, got {} and {}",
                self.lambda_pos, self.lambda_neg
            )));
        }
        Ok(())
    }
}

/// How each view's L1 photometric term is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RgbNormalization {
    /// Mean absolute difference over all samples of the view.
    #[default]
    PerPixelMean,
    /// Raw sum of absolute differences.
    Sum,
}

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<(), MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::Shape(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

fn l1_view(a: &RgbImage, b: &RgbImage, norm: RgbNormalization) -> Result<f64, MetricsError> {
    check_same(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    Ok(match norm {
        RgbNormalization::PerPixelMean => sum / a.data.len().max(1) as f64,
        RgbNormalization::Sum => sum,
    })
}

/// Photometric loss summed over views, each view a per-sample mean.
pub fn l_rgb(rendered: &[RgbImage], targets: &[RgbImage]) -> Result<f64, MetricsError> {
    l_rgb_with(rendered, targets, RgbNormalization::PerPixelMean)
}

pub fn l_rgb_with(
    rendered: &[RgbImage],
    targets: &[RgbImage],
    norm: RgbNormalization,
) -> Result<f64, MetricsError> {
    if rendered.len() != targets.len() {
        return Err(MetricsError::Shape(format!("{} rendered views vs {} targets", rendered.len(), targets.len())));
    }
    rendered.iter().zip(targets).map(|(r, t)| l1_view(r, t, norm)).sum()
}

/// Matched per-pixel geometry: 3D centers and camera-frame covariance upper triangles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeometrySet {
    pub mu: Vec<Vector3<f64>>,
    pub vech: Vec<[f64; 6]>,
}

/// `(1/|V|) sum ||mu_pred - mu_gt||_1`.
pub fn l_xyz(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Shape(format!("{} predicted vs {} matched centers", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g).abs().sum()).sum();
    Ok(sum / pred.len() as f64)
}

/// Mean over pairs of the mean absolute difference of the six vech entries.
pub fn l_sigma(pred: &[[f64; 6]], gt: &[[f64; 6]]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Shape(format!("{} predicted vs {} matched covariances", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / 6.0)
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `l_xyz + lambda_sigma * l_sigma`.
pub fn l_geo(pred: &GeometrySet, gt: &GeometrySet, weights: &LossWeights) -> Result<f64, MetricsError> {
    Ok(l_xyz(&pred.mu, &gt.mu)? + weights.lambda_sigma * l_sigma(&pred.vech, &gt.vech)?)
}

/// Pairs up geometry at pixels where both GIRs reference a live Gaussian.
/// Centers come from the stores; covariances from the GIR channels.
pub fn matched_geometry(
    pred_gir: &GaussianImage,
    pred_store: &GlobalGaussianStore,
    gt_gir: &GaussianImage,
    gt_store: &GlobalGaussianStore,
) -> Result<(GeometrySet, GeometrySet), MetricsError> {
    if pred_gir.width != gt_gir.width || pred_gir.height != gt_gir.height {
        return Err(MetricsError::Shape("GIR dimensions differ".into()));
    }
    let mut pred = GeometrySet::default();
    let mut gt = GeometrySet::default();
    for y in 0..pred_gir.height {
        for x in 0..pred_gir.width {
            let (Some(pid), Some(gid)) = (pred_gir.id_at(x, y), gt_gir.id_at(x, y)) else { continue };
            let (Some(pg), Some(gg)) = (pred_store.get(pid), gt_store.get(gid)) else { continue };
            pred.mu.push(pg.params.mu);
            pred.vech.push(pred_gir.vech_at(x, y));
            gt.mu.push(gg.params.mu);
            gt.vech.push(gt_gir.vech_at(x, y));
        }
    }
    Ok((pred, gt))
}

/// Binary cross entropy with the probability clamped to `[eps, 1 - eps]`.
pub fn bce(pred: f64, target: f64) -> f64 {
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Weighted BCE averaged over all pixels; `gt_mask` uses 1 = redundant.
pub fn l_mask(pred: &[f64], gt_mask: &[u8], weights: &LossWeights) -> Result<f64, MetricsError> {
    if pred.len() != gt_mask.len() {
        return Err(MetricsError::Shape(format!("{} mask predictions vs {} labels", pred.len(), gt_mask.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt_mask)
        .map(|(p, g)| {
            let lambda = if *g == 1 { weights.lambda_pos } else { weights.lambda_neg };
            lambda * bce(*p, *g as f64)
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rgb: f64,
    pub geo: f64,
    pub mask: f64,
}

pub fn l_total(parts: &LossParts) -> f64 {
    parts.rgb + parts.geo + parts.mask
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    check_same(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// Peak signal-to-noise ratio for `[0, 1]` images; `+inf` for identical inputs.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter. At the borders the window is truncated and
/// renormalized, so constant images stay constant.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW as isize / 2;
    let pass = |input: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (i, kv) in kernel.iter().enumerate() {
                    let o = i as isize - half;
                    let (sx, sy) = if horizontal { (x as isize + o, y as isize) } else { (x as isize, y as isize + o) };
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    acc += kv * input[sy as usize * w + sx as usize];
                    norm += kv;
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Mean structural similarity over all pixels and channels, 11x11 Gaussian
/// window with sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, dynamic range 1.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    check_same(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w == 0 || h == 0 {
        return Err(MetricsError::Shape("empty image".into()));
    }
    let kernel = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(c).step_by(3).map(|v| *v as f64).collect();
        let y: Vec<f64> = b.data.iter().skip(c).step_by(3).map(|v| *v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h, &kernel), blur(&y, w, h, &kernel));
        let (exx, eyy, exy) = (blur(&xx, w, h, &kernel), blur(&yy, w, h, &kernel), blur(&xy, w, h, &kernel));
        for i in 0..w * h {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cov = exy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            total += num / den;
        }
    }
    Ok(total / (3 * w * h) as f64)
}

/// Fraction of Gaussians removed out of everything that was ever inserted.
pub fn c_ratio(removed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        removed as f64 / total as f64
    }
}

/// Percentage with two decimals, e.g. `"43.77%"`.
pub fn format_percent(ratio: f64) -> String {
    format!("{:.2}%", ratio * 100.0)
}

pub fn format_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p:.2}")
    }
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// First column: view count, threshold, or another grouping key.
    pub group: String,
    pub method: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub c_ratio: f64,
}

/// Renders rows in a fixed-width text table with columns
/// `<group> | Method | PSNR | SSIM | LPIPS | c-ratio`. LPIPS is not computed
/// and always reads `unsupported`.
pub fn format_metrics_table(group_header: &str, rows: &[MetricsRow]) -> String {
    let header = [group_header, "Method", "PSNR↑", "SSIM↑", "LPIPS↓", "c-ratio↑"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.group.clone(),
                r.method.clone(),
                r.psnr.map(format_psnr).unwrap_or_else(|| "/".into()),
                r.ssim.map(|s| format!("{s:.4}")).unwrap_or_else(|| "/".into()),
                "unsupported".into(),
                format_percent(r.c_ratio),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&header.map(String::from)));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
    out.push('\n');
    let mut previous_group: Option<&str> = None;
    for (row, cells) in rows.iter().zip(&body) {
        let mut cells = cells.clone();
        if previous_group == Some(row.group.as_str()) {
            cells[0] = String::new();
        }
        previous_group = Some(row.group.as_str());
        out.push_str(&line(&cells));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: u32, h: u32, f: impl Fn(usize) -> f32) -> RgbImage {
        let n = (w * h * 3) as usize;
        RgbImage::from_data(w, h, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn defaults() {
        let w = LossWeights::default();
        assert_eq!(w.lambda_sigma, 0.5);
        assert!(w.lambda_pos > w.lambda_neg);
        w.validate().unwrap();
        assert!(LossWeights { lambda_pos: 1.0, lambda_neg: 1.0, ..w }.validate().is_err());
    }

    #[test]
    fn rgb_examples() {
        let a = img(4, 3, |_| 0.0);
        let b = img(4, 3, |_| 1.0);
        assert_eq!(l_rgb(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        assert_eq!(l_rgb(&[a.clone(), a.clone()], &[b.clone(), b.clone()]).unwrap(), 2.0);
        assert_eq!(l_rgb_with(&[a.clone()], &[b], RgbNormalization::Sum).unwrap(), 36.0);
        assert!(l_rgb(&[a.clone()], &[img(2, 2, |_| 0.0)]).is_err());
    }

    #[test]
    fn geometry_examples() {
        let p = vec![Vector3::new(1.0, 0.0, 0.0)];
        let g = vec![Vector3::zeros()];
        assert_eq!(l_xyz(&p, &p).unwrap(), 0.0);
        assert_eq!(l_xyz(&p, &g).unwrap(), 1.0);
        // diag(1,1,1) vs diag(2,1,1): one vech entry differs by 1.
        let id = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let d = [2.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        assert!((l_sigma(&[id], &[d]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let pred = GeometrySet { mu: p.clone(), vech: vec![id] };
        assert_eq!(l_geo(&pred, &pred, &LossWeights::default()).unwrap(), 0.0);
        assert!(l_xyz(&p, &[]).is_err());
    }

    #[test]
    fn geo_is_linear_in_lambda_sigma() {
        let pred = GeometrySet { mu: vec![Vector3::new(0.5, -1.0, 2.0)], vech: vec![[1.0, 0.2, 0.0, 2.0, 0.1, 3.0]] };
        let gt = GeometrySet { mu: vec![Vector3::new(0.0, 0.0, 1.0)], vech: vec![[0.5, 0.0, 0.3, 1.0, 0.0, 1.0]] };
        let w = LossWeights::default();
        let w2 = LossWeights { lambda_sigma: 1.0, ..w };
        let xyz = l_xyz(&pred.mu, &gt.mu).unwrap();
        let term = l_geo(&pred, &gt, &w).unwrap() - xyz;
        let term2 = l_geo(&pred, &gt, &w2).unwrap() - xyz;
        assert!((term2 - 2.0 * term).abs() < 1e-12);
    }

    #[test]
    fn mask_examples() {
        let w = LossWeights::default();
        let gt = [1u8, 0, 1, 0, 0];
        let perfect: Vec<f64> = gt.iter().map(|g| *g as f64).collect();
        let bound = (2.0 * 2.0 + 3.0) / 5.0 * -(1.0 - BCE_EPS).ln();
        assert!(l_mask(&perfect, &gt, &w).unwrap() <= bound + 1e-15);
        let half = [0.5; 5];
        let expected = (2.0 * 2.0 + 1.0 * 3.0) / 5.0 * std::f64::consts::LN_2;
        assert!((l_mask(&half, &gt, &w).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        assert_eq!(l_total(&LossParts::default()), 0.0);
        assert_eq!(l_total(&LossParts { rgb: 1.0, geo: 2.0, mask: 3.0 }), 6.0);
    }

    #[test]
    fn image_metric_examples() {
        let a = img(16, 16, |i| (i % 7) as f32 / 7.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let zero = img(8, 8, |_| 0.0);
        let tenth = img(8, 8, |_| 0.1);
        // MSE = 0.01.
        assert!((psnr(&zero, &tenth).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn c_ratio_formatting() {
        let r = c_ratio(4377, 10000);
        assert_eq!(r, 0.4377);
        assert_eq!(format_percent(r), "43.77%");
        assert_eq!(c_ratio(0, 0), 0.0);
    }

    #[test]
    fn table_layout() {
        let rows = vec![
            MetricsRow { group: "No Mask".into(), method: "uncompressed".into(), psnr: Some(23.71), ssim: Some(0.8159), c_ratio: 0.0 },
            MetricsRow { group: "0.1".into(), method: "iou_heuristic".into(), psnr: Some(f64::INFINITY), ssim: None, c_ratio: 0.2332 },
        ];
        let t = format_metrics_table("τ", &rows);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("τ "));
        assert!(lines[0].contains("LPIPS↓") && lines[0].ends_with("c-ratio↑"));
        assert!(lines[2].contains("23.71") && lines[2].contains("0.8159") && lines[2].contains("0.00%"));
        assert!(lines[3].contains("inf") && lines[3].contains("23.32%") && lines[3].contains("unsupported"));
    }

    proptest! {
        #[test]
        fn image_metrics_are_symmetric(seed in any::<u32>()) {
            let a = img(13, 12, |i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32 / 999.0);
            let b = img(13, 12, |i| ((i as u32).wrapping_mul(40503).wrapping_add(seed ^ 77) % 1000) as f32 / 999.0);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn equal_lambdas_reduce_to_plain_bce(p in prop::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
            let gt: Vec<u8> = (0..p.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            let w = LossWeights { lambda_sigma: 0.5, lambda_pos: 1.0, lambda_neg: 1.0 };
            let plain = p.iter().zip(&gt).map(|(p, g)| bce(*p, *g as f64)).sum::<f64>() / p.len() as f64;
            prop_assert!((l_mask(&p, &gt, &w).unwrap() - plain).abs() < 1e-9);
        }

        #[test]
        fn losses_are_non_negative(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
            let va = [Vector3::new(a[0], a[1], a[2])];
            let vb = [Vector3::new(b[0], b[1], b[2])];
            prop_assert!(l_xyz(&va, &vb).unwrap() >= 0.0);
            let sa: [f64; 6] = a.clone().try_into().unwrap();
            let sb: [f64; 6] = b.clone().try_into().unwrap();
            prop_assert!(l_sigma(&[sa], &[sb]).unwrap() >= 0.0);
            prop_assert_eq!(l_sigma(&[sa], &[sa]).unwrap(), 0.0);
        }
    }
}
