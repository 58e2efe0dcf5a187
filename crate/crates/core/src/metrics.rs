//! Full-reference image quality metrics: PSNR, SSIM, MS-SSIM, UIQI.
//!
//! All metrics run on the 8-bit luma plane: tensors are quantized to bytes
//! first (so values match what a PNG round trip would produce) and converted
//! with Rec.601 weights. Identical inputs score PSNR = ∞ (serialized as
//! `null` in JSON, `inf` in CSV) and 1.0 on the structural metrics.

use serde::{Deserialize, Serialize};

use crate::dataset::norm_to_byte;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Grayscale plane (f64, [0, peak]) used by all metrics.
#[derive(Debug, Clone)]
pub struct Luma {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub const PEAK: f64 = 255.0;

impl Luma {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Luma> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "luma plane {height}×{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Luma { height, width, data })
    }

    /// Rec.601 luma of a byte-quantized 3×H×W tensor in [−1,1].
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Luma> {
        let shape = t.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Shape(format!("expected 3×H×W tensor, got {shape:?}")));
        }
        let (h, w) = (shape[1], shape[2]);
        let d = t.data_ref();
        let mut data = vec![0.0f64; h * w];
        for p in 0..h * w {
            let r = norm_to_byte(d[p]) as f64;
            let g = norm_to_byte(d[h * w + p]) as f64;
            let b = norm_to_byte(d[2 * h * w + p]) as f64;
            data[p] = 0.299 * r + 0.587 * g + 0.114 * b;
        }
        Ok(Luma { height: h, width: w, data })
    }

    fn check_same(&self, other: &Luma) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape(format!(
                "image size mismatch: {}×{} vs {}×{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Peak signal-to-noise ratio in dB; +∞ for identical images.
pub fn psnr(a: &Luma, b: &Luma, peak: f64) -> Result<f64> {
    a.check_same(b)?;
    if peak <= 0.0 {
        return Err(Error::InvalidArg(format!("peak must be positive, got {peak}")));
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, peak: PEAK }
    }
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window - 1) as f64 / 2.0;
    let mut g: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = g.iter().sum();
    for v in &mut g {
        *v /= sum;
    }
    g
}

/// Separable valid-region filter with the given taps.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    // Vertical pass.
    let mut tmp = vec![0.0f64; oh * w];
    for y in 0..oh {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                acc += t * img[(y + j) * w + x];
            }
            tmp[y * w + x] = acc;
        }
    }
    // Horizontal pass.
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                acc += t * tmp[y * w + x + j];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term over all valid windows.
fn ssim_stats(a: &Luma, b: &Luma, p: &SsimParams) -> Result<(f64, f64)> {
    a.check_same(b)?;
    if a.height < p.window || a.width < p.window {
        return Err(Error::InvalidArg(format!(
            "image {}×{} smaller than the {} px SSIM window",
            a.height, a.width, p.window
        )));
    }
    let taps = gaussian_taps(p.window, p.sigma);
    let (h, w) = (a.height, a.width);
    let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x).collect() };
    let prod: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();

    let (mu_a, oh, ow) = filter_valid(&a.data, h, w, &taps);
    let (mu_b, _, _) = filter_valid(&b.data, h, w, &taps);
    let (raw_aa, _, _) = filter_valid(&sq(&a.data), h, w, &taps);
    let (raw_bb, _, _) = filter_valid(&sq(&b.data), h, w, &taps);
    let (raw_ab, _, _) = filter_valid(&prod, h, w, &taps);

    let c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
    let c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
    let mut sum_ssim = 0.0;
    let mut sum_cs = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = raw_aa[i] - ma * ma;
        let vb = raw_bb[i] - mb * mb;
        let cov = raw_ab[i] - ma * mb;
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        sum_ssim += lum * cs;
        sum_cs += cs;
    }
    let n = (oh * ow) as f64;
    Ok((sum_ssim / n, sum_cs / n))
}

/// Mean local structural similarity over valid Gaussian windows.
pub fn ssim(a: &Luma, b: &Luma, p: &SsimParams) -> Result<f64> {
    Ok(ssim_stats(a, b, p)?.0)
}

/// Standard five-scale weights.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// 2×2 mean pooling (odd trailing row/column dropped).
fn downsample2(img: &Luma) -> Luma {
    let (h, w) = (img.height / 2, img.width / 2);
    let mut data = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let base = 2 * y * img.width + 2 * x;
            data[y * w + x] = 0.25
                * (img.data[base]
                    + img.data[base + 1]
                    + img.data[base + img.width]
                    + img.data[base + img.width + 1]);
        }
    }
    Luma { height: h, width: w, data }
}

/// Number of dyadic scales usable for this image (capped at `max_levels`):
/// the coarsest scale must still fit the SSIM window.
pub fn ms_ssim_levels(min_side: usize, window: usize, max_levels: usize) -> usize {
    let mut levels = 0;
    let mut side = min_side;
    while side >= window && levels < max_levels {
        levels += 1;
        side /= 2;
    }
    levels
}

/// Multi-scale SSIM: contrast-structure terms across dyadic scales, the full
/// luminance-bearing index at the coarsest, combined as a weighted geometric
/// product. Images too small for five scales use fewer levels with the
/// weights renormalized; a single level reduces to plain SSIM.
pub fn ms_ssim(a: &Luma, b: &Luma, p: &SsimParams) -> Result<f64> {
    a.check_same(b)?;
    let min_side = a.height.min(a.width);
    let levels = ms_ssim_levels(min_side, p.window, MS_SSIM_WEIGHTS.len());
    if levels == 0 {
        return Err(Error::InvalidArg(format!(
            "image {}×{} too small for one {} px scale",
            a.height, a.width, p.window
        )));
    }
    if levels == 1 {
        // Degenerate pyramid: plain SSIM, sign and all.
        return ssim(a, b, p);
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..levels].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..levels].iter().map(|w| w / wsum).collect();

    let mut score = 1.0f64;
    let mut ca = a.clone();
    let mut cb = b.clone();
    for (level, &weight) in weights.iter().enumerate() {
        let (full, cs) = ssim_stats(&ca, &cb, p)?;
        let term = if level + 1 == weights.len() { full } else { cs };
        score *= term.max(0.0).powf(weight);
        if level + 1 != weights.len() {
            ca = downsample2(&ca);
            cb = downsample2(&cb);
        }
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy)]
pub struct UiqiParams {
    pub window: usize,
    pub peak: f64,
}

impl Default for UiqiParams {
    fn default() -> Self {
        UiqiParams { window: 8, peak: PEAK }
    }
}

/// Stabilizer for degenerate windows: small enough to leave ordinary windows
/// untouched (relative weight ~1e-8), large enough to pin constant windows.
fn uiqi_c(peak: f64) -> f64 {
    (1e-4 * peak) * (1e-4 * peak)
}

/// Universal image quality index: mean over sliding uniform windows of the
/// luminance·correlation product. Zero-denominator windows are stabilized
/// the same way SSIM handles them (matching constants in numerator and
/// denominator), so identical windows score exactly 1.
pub fn uiqi(a: &Luma, b: &Luma, p: &UiqiParams) -> Result<f64> {
    a.check_same(b)?;
    let ws = p.window;
    if a.height < ws || a.width < ws {
        return Err(Error::InvalidArg(format!(
            "image {}×{} smaller than the {ws} px UIQI window",
            a.height, a.width
        )));
    }
    let (h, w) = (a.height, a.width);
    // Summed-area tables over a, b, a², b², ab.
    let mut sat = vec![vec![0.0f64; (h + 1) * (w + 1)]; 5];
    for y in 0..h {
        for x in 0..w {
            let va = a.data[y * w + x];
            let vb = b.data[y * w + x];
            let vals = [va, vb, va * va, vb * vb, va * vb];
            for (table, v) in sat.iter_mut().zip(vals) {
                table[(y + 1) * (w + 1) + (x + 1)] = v + table[y * (w + 1) + (x + 1)]
                    + table[(y + 1) * (w + 1) + x]
                    - table[y * (w + 1) + x];
            }
        }
    }
    let window_sum = |table: &[f64], y: usize, x: usize| {
        table[(y + ws) * (w + 1) + (x + ws)] - table[y * (w + 1) + (x + ws)]
            - table[(y + ws) * (w + 1) + x]
            + table[y * (w + 1) + x]
    };

    let n = (ws * ws) as f64;
    let c = uiqi_c(p.peak);
    let mut total = 0.0;
    let (oh, ow) = (h - ws + 1, w - ws + 1);
    for y in 0..oh {
        for x in 0..ow {
            let ma = window_sum(&sat[0], y, x) / n;
            let mb = window_sum(&sat[1], y, x) / n;
            let va = window_sum(&sat[2], y, x) / n - ma * ma;
            let vb = window_sum(&sat[3], y, x) / n - mb * mb;
            let cov = window_sum(&sat[4], y, x) / n - ma * mb;
            let lum = (2.0 * ma * mb + c) / (ma * ma + mb * mb + c);
            let corr = (2.0 * cov + c) / (va + vb + c);
            total += lum * corr;
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Which metrics a report should include.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricToggles {
    pub psnr: bool,
    pub ssim: bool,
    pub ms_ssim: bool,
    pub uiqi: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles { psnr: true, ssim: true, ms_ssim: true, uiqi: true }
    }
}

/// Per-image values and their arithmetic mean. Non-finite values (identical
/// images under PSNR) serialize as JSON `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSeries {
    pub per_image: Vec<f64>,
    pub mean: f64,
}

impl MetricSeries {
    fn from_values(per_image: Vec<f64>) -> MetricSeries {
        let mean = per_image.iter().sum::<f64>() / per_image.len().max(1) as f64;
        MetricSeries { per_image, mean }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<MetricSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<MetricSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ms_ssim: Option<MetricSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uiqi: Option<MetricSeries>,
}

/// Evaluate all enabled metrics over (candidate, reference) luma pairs.
pub fn compute_report(pairs: &[(Luma, Luma)], toggles: &MetricToggles) -> Result<MetricReport> {
    let ssim_p = SsimParams::default();
    let uiqi_p = UiqiParams::default();
    let collect = |f: &dyn Fn(&Luma, &Luma) -> Result<f64>| -> Result<MetricSeries> {
        let mut values = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            values.push(f(a, b)?);
        }
        Ok(MetricSeries::from_values(values))
    };
    Ok(MetricReport {
        count: pairs.len(),
        psnr: toggles.psnr.then(|| collect(&|a, b| psnr(a, b, PEAK))).transpose()?,
        ssim: toggles.ssim.then(|| collect(&|a, b| ssim(a, b, &ssim_p))).transpose()?,
        ms_ssim: toggles.ms_ssim.then(|| collect(&|a, b| ms_ssim(a, b, &ssim_p))).transpose()?,
        uiqi: toggles.uiqi.then(|| collect(&|a, b| uiqi(a, b, &uiqi_p))).transpose()?,
    })
}

/// CSV rendering of the report: one row per image plus a mean row.
pub fn report_to_csv(report: &MetricReport) -> String {
    let fmt = |v: f64| {
        if v.is_infinite() {
            "inf".to_string()
        } else {
            format!("{v:.6}")
        }
    };
    let mut header = vec!["image".to_string()];
    let mut columns: Vec<&MetricSeries> = Vec::new();
    for (name, series) in [
        ("psnr", &report.psnr),
        ("ssim", &report.ssim),
        ("ms_ssim", &report.ms_ssim),
        ("uiqi", &report.uiqi),
    ] {
        if let Some(s) = series {
            header.push(name.to_string());
            columns.push(s);
        }
    }
    let mut out = header.join(",") + "\n";
    for i in 0..report.count {
        let mut row = vec![i.to_string()];
        for col in &columns {
            row.push(fmt(col.per_image[i]));
        }
        out += &(row.join(",") + "\n");
    }
    let mut mean_row = vec!["mean".to_string()];
    for col in &columns {
        mean_row.push(fmt(col.mean));
    }
    out += &(mean_row.join(",") + "\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn luma_from_bytes(h: usize, w: usize, f: impl FnMut(usize, usize) -> u8) -> Luma {
        let mut f = f;
        let mut data = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = f(y, x) as f64;
            }
        }
        Luma::new(h, w, data).unwrap()
    }

    fn random_luma(h: usize, w: usize, seed: u64) -> Luma {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        luma_from_bytes(h, w, |_, _| rng.random_range(0..=255u8))
    }

    #[test]
    fn psnr_fixed_points() {
        let a = random_luma(16, 16, 1);
        assert!(psnr(&a, &a, PEAK).unwrap().is_infinite());

        // Constant offset of 16 bytes on every pixel.
        let b16 = luma_from_bytes(16, 16, |_, _| 16);
        let zero = luma_from_bytes(16, 16, |_, _| 0);
        let v = psnr(&zero, &b16, PEAK).unwrap();
        assert!((v - 24.0486).abs() < 1e-3, "got {v}");

        let white = luma_from_bytes(16, 16, |_, _| 255);
        assert!(psnr(&zero, &white, PEAK).unwrap().abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_as_mse_grows() {
        let base = random_luma(16, 16, 2);
        let mut last = f64::INFINITY;
        for offset in [1.0, 4.0, 16.0, 64.0] {
            let shifted =
                Luma::new(16, 16, base.data.iter().map(|v| (v + offset).min(255.0)).collect())
                    .unwrap();
            let v = psnr(&base, &shifted, PEAK).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = random_luma(8, 8, 3);
        let b = random_luma(8, 9, 3);
        assert!(psnr(&a, &b, PEAK).is_err());
    }

    /// Direct per-window SSIM, the independent oracle for the separable
    /// filtering route.
    fn ssim_reference(a: &Luma, b: &Luma, p: &SsimParams) -> f64 {
        let taps = gaussian_taps(p.window, p.sigma);
        let c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
        let c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
        let (h, w, k) = (a.height, a.width, p.window);
        let mut total = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let mut ma = 0.0;
                let mut mb = 0.0;
                let mut saa = 0.0;
                let mut sbb = 0.0;
                let mut sab = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        let wgt = taps[i] * taps[j];
                        let va = a.data[(y0 + i) * w + x0 + j];
                        let vb = b.data[(y0 + i) * w + x0 + j];
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_identical_is_one_and_negative_is_less() {
        let p = SsimParams::default();
        let a = random_luma(24, 24, 4);
        assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);

        let neg = Luma::new(24, 24, a.data.iter().map(|v| PEAK - v).collect()).unwrap();
        assert!(ssim(&a, &neg, &p).unwrap() < 1.0);
    }

    #[test]
    fn ssim_matches_nested_loop_oracle() {
        let p = SsimParams::default();
        for seed in [5, 6, 7] {
            let a = random_luma(16, 16, seed);
            let b = random_luma(16, 16, seed + 100);
            let fast = ssim(&a, &b, &p).unwrap();
            let slow = ssim_reference(&a, &b, &p);
            assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_rejects_undersized_images() {
        let a = random_luma(8, 8, 8);
        assert!(ssim(&a, &a, &SsimParams::default()).is_err());
    }

    #[test]
    fn ms_ssim_identical_is_one_and_levels_reduce() {
        let p = SsimParams::default();
        let a = random_luma(64, 64, 9);
        assert!((ms_ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);

        assert_eq!(ms_ssim_levels(176, 11, 5), 5);
        assert_eq!(ms_ssim_levels(64, 11, 5), 3);
        assert_eq!(ms_ssim_levels(11, 11, 5), 1);
        assert_eq!(ms_ssim_levels(10, 11, 5), 0);
    }

    #[test]
    fn ms_ssim_single_level_equals_ssim() {
        let p = SsimParams::default();
        // 16 px: one level only (second scale would be 8 < 11).
        let a = random_luma(16, 16, 10);
        let b = random_luma(16, 16, 11);
        let ms = ms_ssim(&a, &b, &p).unwrap();
        let single = ssim(&a, &b, &p).unwrap();
        assert!((ms - single).abs() < 1e-12, "{ms} vs {single}");
    }

    #[test]
    fn ms_ssim_monotone_under_noise() {
        let p = SsimParams::default();
        let a = random_luma(64, 64, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noise: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = 1.0;
        for sigma in [2.0, 8.0, 24.0, 64.0] {
            let noisy = Luma::new(
                64,
                64,
                a.data
                    .iter()
                    .zip(&noise)
                    .map(|(v, n)| (v + sigma * n).clamp(0.0, 255.0))
                    .collect(),
            )
            .unwrap();
            let v = ms_ssim(&a, &noisy, &p).unwrap();
            assert!(v < last, "sigma {sigma}: {v} !< {last}");
            last = v;
        }
    }

    /// Direct sliding-window UIQI, oracle for the summed-area-table route.
    fn uiqi_reference(a: &Luma, b: &Luma, p: &UiqiParams) -> f64 {
        let (h, w, k) = (a.height, a.width, p.window);
        let n = (k * k) as f64;
        let c = uiqi_c(p.peak);
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let mut s = [0.0f64; 5];
                for i in 0..k {
                    for j in 0..k {
                        let va = a.data[(y0 + i) * w + x0 + j];
                        let vb = b.data[(y0 + i) * w + x0 + j];
                        s[0] += va;
                        s[1] += vb;
                        s[2] += va * va;
                        s[3] += vb * vb;
                        s[4] += va * vb;
                    }
                }
                let (ma, mb) = (s[0] / n, s[1] / n);
                let (va, vb) = (s[2] / n - ma * ma, s[3] / n - mb * mb);
                let cov = s[4] / n - ma * mb;
                total += ((2.0 * ma * mb + c) / (ma * ma + mb * mb + c))
                    * ((2.0 * cov + c) / (va + vb + c));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn uiqi_identical_is_one_negative_goes_negative() {
        let p = UiqiParams::default();
        let a = random_luma(24, 24, 14);
        assert!((uiqi(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);

        let neg = Luma::new(24, 24, a.data.iter().map(|v| PEAK - v).collect()).unwrap();
        assert!(uiqi(&a, &neg, &p).unwrap() < 0.0, "anticorrelated images must score negative");
    }

    #[test]
    fn uiqi_matches_nested_loop_oracle() {
        let p = UiqiParams::default();
        for seed in [15, 16, 17] {
            let a = random_luma(16, 16, seed);
            let b = random_luma(16, 16, seed + 50);
            let fast = uiqi(&a, &b, &p).unwrap();
            let slow = uiqi_reference(&a, &b, &p);
            assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn uiqi_handles_constant_planes() {
        let p = UiqiParams::default();
        let flat = luma_from_bytes(16, 16, |_, _| 100);
        assert!((uiqi(&flat, &flat, &p).unwrap() - 1.0).abs() < 1e-9);
        let other = luma_from_bytes(16, 16, |_, _| 50);
        let v = uiqi(&flat, &other, &p).unwrap();
        assert!(v.is_finite() && v < 1.0);
    }

    #[test]
    fn metrics_are_symmetric() {
        let a = random_luma(32, 32, 18);
        let b = random_luma(32, 32, 19);
        let sp = SsimParams::default();
        let up = UiqiParams::default();
        assert_eq!(psnr(&a, &b, PEAK).unwrap(), psnr(&b, &a, PEAK).unwrap());
        assert_eq!(ssim(&a, &b, &sp).unwrap(), ssim(&b, &a, &sp).unwrap());
        assert_eq!(ms_ssim(&a, &b, &sp).unwrap(), ms_ssim(&b, &a, &sp).unwrap());
        assert_eq!(uiqi(&a, &b, &up).unwrap(), uiqi(&b, &a, &up).unwrap());
    }

    #[test]
    fn report_mean_matches_entries_and_serializes_infinity_as_null() {
        let a = random_luma(16, 16, 20);
        let b = random_luma(16, 16, 21);
        let pairs = vec![(a.clone(), a.clone()), (a, b)];
        let report = compute_report(&pairs, &MetricToggles::default()).unwrap();
        let s = report.ssim.as_ref().unwrap();
        assert!((s.mean - (s.per_image[0] + s.per_image[1]) / 2.0).abs() < 1e-12);

        // Identical pair gives infinite PSNR → null in JSON, inf in CSV.
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("null"));
        let csv = report_to_csv(&report);
        assert!(csv.contains("inf"));
    }

    #[test]
    fn luma_uses_byte_quantized_values() {
        // Values between byte levels quantize before conversion, so a PNG
        // round trip leaves every metric unchanged.
        let t = Tensor::<f32>::full(&[3, 4, 4], 0.24);
        let l = Luma::from_tensor(&t).unwrap();
        let byte = norm_to_byte(0.24) as f64;
        for v in &l.data {
            assert_eq!(*v, 0.299 * byte + 0.587 * byte + 0.114 * byte);
        }
    }
}
