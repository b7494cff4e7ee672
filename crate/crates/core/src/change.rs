//! Frame-differencing motion detection and histogram shift detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};
use crate::scene::{EntityId, MotionStatus, PatchRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChiSquareVariant {
    /// (h1 - h2)^2 / (h1 + h2), empty bins skipped.
    Symmetric,
    /// (h1 - h2)^2 / h1, bins where h1 is empty skipped.
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChangeDetectConfig {
    pub luminance_coeffs: [f64; 3],
    pub intensity_threshold: f64,
    pub patch_change_threshold: f64,
    pub histogram_bins: usize,
    pub histogram_threshold: f64,
    pub chi_square: ChiSquareVariant,
    pub normalize_histograms: bool,
    /// Frames an entity stays Moving after its change ratio drops back to or below the threshold.
    pub motion_hold_frames: u64,
}

impl Default for ChangeDetectConfig {
    fn default() -> Self {
        Self {
            luminance_coeffs: [0.299, 0.587, 0.114],
            intensity_threshold: 30.0,
            patch_change_threshold: 0.05,
            histogram_bins: 32,
            histogram_threshold: 10.0,
            chi_square: ChiSquareVariant::Symmetric,
            normalize_histograms: false,
            motion_hold_frames: 0,
        }
    }
}

impl ChangeDetectConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.luminance_coeffs.iter().sum();
        if self.luminance_coeffs.iter().any(|c| *c < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(structural(format!(
                "luminance coefficients must be non-negative and sum to 1, got {:?}",
                self.luminance_coeffs
            )));
        }
        if !(0.0..=255.0).contains(&self.intensity_threshold) {
            return Err(structural("intensity_threshold must lie in [0, 255]"));
        }
        if !(self.patch_change_threshold > 0.0 && self.patch_change_threshold < 1.0) {
            return Err(structural("patch_change_threshold must lie in (0, 1)"));
        }
        if self.histogram_bins == 0 || self.histogram_bins > 256 {
            return Err(structural("histogram_bins must lie in 1..=256"));
        }
        if !(self.histogram_threshold >= 0.0) {
            return Err(structural("histogram_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Absolute RGB difference over a patch, row-major, one `[r, g, b]` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDiff {
    pub region: PatchRegion,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
}

/// Grayscale difference raster anchored at an integer pixel origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayDiff {
    pub origin_x: i64,
    pub origin_y: i64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GrayDiff {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }
}

pub fn grayscale_diff(diff: &PatchDiff, cfg: &ChangeDetectConfig) -> Result<GrayDiff> {
    if diff.width == 0 || diff.height == 0 || diff.rgb.len() != diff.width * diff.height {
        return Err(structural(format!(
            "patch diff holds {} pixels, expected {}x{}",
            diff.rgb.len(),
            diff.width,
            diff.height
        )));
    }
    let y = cfg.luminance_coeffs;
    let values = diff
        .rgb
        .iter()
        .map(|p| y[0] * p[0] + y[1] * p[1] + y[2] * p[2])
        .collect();
    Ok(GrayDiff {
        origin_x: diff.region.x.floor() as i64,
        origin_y: diff.region.y.floor() as i64,
        width: diff.width,
        height: diff.height,
        values,
    })
}

/// Integer pixel span covered by a region: `[x0, x1) x [y0, y1)`.
fn pixel_span(region: &PatchRegion) -> (i64, i64, i64, i64) {
    (
        region.x.round() as i64,
        (region.x + region.w).round() as i64,
        region.y.round() as i64,
        (region.y + region.h).round() as i64,
    )
}

/// Fraction of the region's pixels whose gray difference exceeds the intensity threshold.
pub fn change_ratio(gray: &GrayDiff, region: &PatchRegion, cfg: &ChangeDetectConfig) -> Result<f64> {
    let (x0, x1, y0, y1) = pixel_span(region);
    if x1 <= x0 || y1 <= y0 {
        return Err(structural(format!("region {region:?} covers no pixels")));
    }
    let gx1 = gray.origin_x + gray.width as i64;
    let gy1 = gray.origin_y + gray.height as i64;
    if x0 < gray.origin_x || y0 < gray.origin_y || x1 > gx1 || y1 > gy1 {
        return Err(structural(format!(
            "region {region:?} not covered by a {}x{} diff at ({}, {})",
            gray.width, gray.height, gray.origin_x, gray.origin_y
        )));
    }
    let mut above = 0usize;
    for v in y0..y1 {
        for u in x0..x1 {
            let val = gray.get((u - gray.origin_x) as usize, (v - gray.origin_y) as usize);
            if val > cfg.intensity_threshold {
                above += 1;
            }
        }
    }
    let total = ((x1 - x0) * (y1 - y0)) as f64;
    Ok(above as f64 / total)
}

/// Change ratio over the pixels where `mask` is true; 0 when the mask is empty.
pub fn masked_change_ratio(gray: &GrayDiff, mask: &[bool], cfg: &ChangeDetectConfig) -> Result<f64> {
    if mask.len() != gray.values.len() {
        return Err(structural("mask size does not match diff size"));
    }
    let mut total = 0usize;
    let mut above = 0usize;
    for (val, keep) in gray.values.iter().zip(mask) {
        if *keep {
            total += 1;
            if *val > cfg.intensity_threshold {
                above += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { above as f64 / total as f64 })
}

pub fn motion_status(cr: f64, cfg: &ChangeDetectConfig) -> MotionStatus {
    if cr > cfg.patch_change_threshold {
        MotionStatus::Moving
    } else {
        MotionStatus::Stationary
    }
}

/// Per-channel bin counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbHistogram {
    pub channels: [Vec<f64>; 3],
}

impl RgbHistogram {
    pub fn zeros(bins: usize) -> Self {
        Self {
            channels: [vec![0.0; bins], vec![0.0; bins], vec![0.0; bins]],
        }
    }

    pub fn bins(&self) -> usize {
        self.channels[0].len()
    }

    /// Histogram of 8-bit RGB pixels, restricted to `mask` when given.
    pub fn from_pixels(pixels: &[[u8; 3]], mask: Option<&[bool]>, bins: usize) -> Result<Self> {
        if bins == 0 || bins > 256 {
            return Err(structural("histogram bins must lie in 1..=256"));
        }
        if let Some(m) = mask {
            if m.len() != pixels.len() {
                return Err(structural("mask size does not match pixel count"));
            }
        }
        let mut hist = Self::zeros(bins);
        for (i, px) in pixels.iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            for (channel, v) in hist.channels.iter_mut().zip(px) {
                channel[*v as usize * bins / 256] += 1.0;
            }
        }
        Ok(hist)
    }

    fn normalized(&self) -> Self {
        let mut out = self.clone();
        for ch in out.channels.iter_mut() {
            let total: f64 = ch.iter().sum();
            if total > 0.0 {
                ch.iter_mut().for_each(|b| *b /= total);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramShift {
    pub per_channel: [f64; 3],
    pub mean: f64,
}

impl HistogramShift {
    pub fn from_channels(per_channel: [f64; 3]) -> Self {
        Self {
            per_channel,
            mean: per_channel.iter().sum::<f64>() / 3.0,
        }
    }
}

fn chi_square_channel(h1: &[f64], h2: &[f64], variant: ChiSquareVariant) -> f64 {
    h1.iter()
        .zip(h2)
        .map(|(a, b)| {
            let denom = match variant {
                ChiSquareVariant::Symmetric => a + b,
                ChiSquareVariant::Asymmetric => *a,
            };
            if denom == 0.0 {
                0.0
            } else {
                (a - b) * (a - b) / denom
            }
        })
        .sum()
}

/// Symmetric chi-square distance on raw counts.
pub fn chi_square_shift(prev: &RgbHistogram, curr: &RgbHistogram) -> Result<HistogramShift> {
    chi_square_shift_with(prev, curr, ChiSquareVariant::Symmetric, false)
}

pub fn chi_square_shift_with(
    prev: &RgbHistogram,
    curr: &RgbHistogram,
    variant: ChiSquareVariant,
    normalize: bool,
) -> Result<HistogramShift> {
    for c in 0..3 {
        if prev.channels[c].len() != curr.channels[c].len() {
            return Err(structural(format!(
                "histogram bin mismatch on channel {c}: {} vs {}",
                prev.channels[c].len(),
                curr.channels[c].len()
            )));
        }
    }
    let (a, b) = if normalize {
        (prev.normalized(), curr.normalized())
    } else {
        (prev.clone(), curr.clone())
    };
    let per_channel = [0, 1, 2].map(|c| chi_square_channel(&a.channels[c], &b.channels[c], variant));
    Ok(HistogramShift::from_channels(per_channel))
}

pub fn composition_change_trigger(
    background_cr: f64,
    shift: &HistogramShift,
    cfg: &ChangeDetectConfig,
) -> bool {
    background_cr > cfg.patch_change_threshold && shift.mean > cfg.histogram_threshold
}

/// Everything the engine needs from change detection for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeObservation {
    pub background_cr: f64,
    pub histogram_shift: [f64; 3],
    #[serde(default)]
    pub patch_change_ratios: BTreeMap<EntityId, f64>,
}

impl ChangeObservation {
    pub fn quiet() -> Self {
        Self {
            background_cr: 0.0,
            histogram_shift: [0.0; 3],
            patch_change_ratios: BTreeMap::new(),
        }
    }

    pub fn shift(&self) -> HistogramShift {
        HistogramShift::from_channels(self.histogram_shift)
    }
}

/// An 8-bit RGB frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
}

impl Raster {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.rgb.len() != self.width * self.height {
            return Err(structural(format!(
                "raster holds {} pixels, expected {}x{}",
                self.rgb.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

/// Full-frame absolute difference between two rasters of equal size.
pub fn frame_diff(prev: &Raster, curr: &Raster) -> Result<PatchDiff> {
    prev.validate()?;
    curr.validate()?;
    if prev.width != curr.width || prev.height != curr.height {
        return Err(structural("rasters differ in size"));
    }
    let rgb = prev
        .rgb
        .iter()
        .zip(&curr.rgb)
        .map(|(a, b)| [0, 1, 2].map(|c| (a[c] as f64 - b[c] as f64).abs()))
        .collect();
    Ok(PatchDiff {
        region: PatchRegion::new(0.0, 0.0, prev.width as f64, prev.height as f64)?,
        width: prev.width,
        height: prev.height,
        rgb,
    })
}

/// Maps a frame-coordinate region into raster coordinates and clips it to the raster.
fn to_raster(region: &PatchRegion, scale_x: f64, scale_y: f64, raster: &Raster) -> Option<PatchRegion> {
    let x0 = (region.x * scale_x).max(0.0);
    let y0 = (region.y * scale_y).max(0.0);
    let x1 = ((region.x + region.w) * scale_x).min(raster.width as f64);
    let y1 = ((region.y + region.h) * scale_y).min(raster.height as f64);
    let r = PatchRegion { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
    let (px0, px1, py0, py1) = pixel_span(&r);
    (x1 > x0 && y1 > y0 && px1 > px0 && py1 > py0).then_some(r)
}

/// Change observation computed from two consecutive rasters.
///
/// `regions` are in frame coordinates (`frame_w` x `frame_h`); the rasters may
/// be a downscaled rendering. The background mask excludes every region.
pub fn observe_rasters(
    prev: &Raster,
    curr: &Raster,
    regions: &[(EntityId, PatchRegion)],
    frame_w: f64,
    frame_h: f64,
    cfg: &ChangeDetectConfig,
) -> Result<ChangeObservation> {
    let gray = grayscale_diff(&frame_diff(prev, curr)?, cfg)?;
    let sx = curr.width as f64 / frame_w;
    let sy = curr.height as f64 / frame_h;
    let mut mask = vec![true; curr.rgb.len()];
    let mut patch_change_ratios = BTreeMap::new();
    for (id, region) in regions {
        let Some(r) = to_raster(region, sx, sy, curr) else {
            patch_change_ratios.insert(*id, 0.0);
            continue;
        };
        patch_change_ratios.insert(*id, change_ratio(&gray, &r, cfg)?);
        let (x0, x1, y0, y1) = pixel_span(&r);
        for v in y0..y1 {
            for u in x0..x1 {
                mask[v as usize * curr.width + u as usize] = false;
            }
        }
    }
    let background_cr = masked_change_ratio(&gray, &mask, cfg)?;
    let h_prev = RgbHistogram::from_pixels(&prev.rgb, Some(&mask), cfg.histogram_bins)?;
    let h_curr = RgbHistogram::from_pixels(&curr.rgb, Some(&mask), cfg.histogram_bins)?;
    let shift = chi_square_shift_with(&h_prev, &h_curr, cfg.chi_square, cfg.normalize_histograms)?;
    Ok(ChangeObservation {
        background_cr,
        histogram_shift: shift.per_channel,
        patch_change_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ChangeDetectConfig {
        ChangeDetectConfig::default()
    }

    fn patch(w: usize, h: usize, rgb: Vec<[f64; 3]>) -> PatchDiff {
        PatchDiff {
            region: PatchRegion::new(0.0, 0.0, w as f64, h as f64).unwrap(),
            width: w,
            height: h,
            rgb,
        }
    }

    fn gray(w: usize, h: usize, values: Vec<f64>) -> GrayDiff {
        GrayDiff { origin_x: 0, origin_y: 0, width: w, height: h, values }
    }

    fn hist1(ch: Vec<f64>) -> RgbHistogram {
        RgbHistogram { channels: [ch.clone(), vec![0.0; ch.len()], vec![0.0; ch.len()]] }
    }

    #[test]
    fn gray_of_zero_diff_is_zero() {
        let g = grayscale_diff(&patch(3, 2, vec![[0.0; 3]; 6]), &cfg()).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gray_of_white_pixel_is_255() {
        let g = grayscale_diff(&patch(1, 1, vec![[255.0; 3]]), &cfg()).unwrap();
        assert!((g.values[0] - 255.0).abs() < 1e-12);
    }

    #[test]
    fn gray_of_red_pixel() {
        let g = grayscale_diff(&patch(1, 1, vec![[100.0, 0.0, 0.0]]), &cfg()).unwrap();
        assert!((g.values[0] - 29.9).abs() < 1e-12);
    }

    #[test]
    fn gray_rejects_bad_dimensions() {
        assert!(grayscale_diff(&patch(2, 2, vec![[0.0; 3]; 3]), &cfg()).is_err());
    }

    #[test]
    fn change_ratio_cases() {
        let region = PatchRegion::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let zero = gray(2, 2, vec![0.0; 4]);
        assert_eq!(change_ratio(&zero, &region, &cfg()).unwrap(), 0.0);
        let full = gray(2, 2, vec![255.0; 4]);
        assert_eq!(change_ratio(&full, &region, &cfg()).unwrap(), 1.0);
        let mut c = cfg();
        c.intensity_threshold = 50.0;
        let mixed = gray(2, 2, vec![10.0, 200.0, 0.0, 250.0]);
        assert_eq!(change_ratio(&mixed, &region, &c).unwrap(), 0.5);
    }

    #[test]
    fn change_ratio_rejects_empty_or_uncovered_region() {
        let g = gray(2, 2, vec![0.0; 4]);
        let degenerate = PatchRegion { x: 0.0, y: 0.0, w: 0.2, h: 1.0 };
        assert!(change_ratio(&g, &degenerate, &cfg()).is_err());
        let outside = PatchRegion::new(1.0, 1.0, 2.0, 2.0).unwrap();
        assert!(change_ratio(&g, &outside, &cfg()).is_err());
    }

    #[test]
    fn change_ratio_respects_origin() {
        let g = GrayDiff { origin_x: 10, origin_y: 5, width: 2, height: 1, values: vec![0.0, 100.0] };
        let r = PatchRegion::new(11.0, 5.0, 1.0, 1.0).unwrap();
        assert_eq!(change_ratio(&g, &r, &cfg()).unwrap(), 1.0);
    }

    #[test]
    fn motion_status_is_strict() {
        let mut c = cfg();
        c.patch_change_threshold = 0.1;
        assert_eq!(motion_status(0.0, &c), MotionStatus::Stationary);
        assert_eq!(motion_status(0.1, &c), MotionStatus::Stationary);
        assert_eq!(motion_status(0.5, &c), MotionStatus::Moving);
    }

    #[test]
    fn chi_square_examples() {
        let a = RgbHistogram { channels: [vec![4.0, 0.0], vec![1.0, 2.0], vec![0.0, 0.0]] };
        let same = chi_square_shift(&a, &a).unwrap();
        assert_eq!(same.per_channel, [0.0; 3]);
        assert_eq!(same.mean, 0.0);

        let s = chi_square_shift(&hist1(vec![4.0, 0.0]), &hist1(vec![0.0, 4.0])).unwrap();
        assert_eq!(s.per_channel[0], 8.0);
        assert!((s.mean - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_rejects_bin_mismatch() {
        assert!(chi_square_shift(&RgbHistogram::zeros(4), &RgbHistogram::zeros(5)).is_err());
    }

    #[test]
    fn asymmetric_variant_skips_empty_reference_bins() {
        let s = chi_square_shift_with(
            &hist1(vec![4.0, 0.0]),
            &hist1(vec![2.0, 4.0]),
            ChiSquareVariant::Asymmetric,
            false,
        )
        .unwrap();
        assert_eq!(s.per_channel[0], 1.0);
    }

    #[test]
    fn normalization_removes_scale() {
        let a = hist1(vec![1.0, 3.0]);
        let b = hist1(vec![10.0, 30.0]);
        let s = chi_square_shift_with(&a, &b, ChiSquareVariant::Symmetric, true).unwrap();
        assert!(s.mean.abs() < 1e-15);
    }

    #[test]
    fn trigger_needs_both() {
        let c = cfg();
        let low = HistogramShift::from_channels([1.0; 3]);
        let high = HistogramShift::from_channels([20.0; 3]);
        assert!(!composition_change_trigger(0.01, &low, &c));
        assert!(!composition_change_trigger(0.5, &low, &c));
        assert!(!composition_change_trigger(0.01, &high, &c));
        assert!(composition_change_trigger(0.5, &high, &c));
    }

    #[test]
    fn histogram_from_pixels_bins_and_mask() {
        let px = [[0u8, 128, 255], [255, 255, 255]];
        let h = RgbHistogram::from_pixels(&px, Some(&[true, false]), 2).unwrap();
        assert_eq!(h.channels[0], vec![1.0, 0.0]);
        assert_eq!(h.channels[1], vec![0.0, 1.0]);
        assert_eq!(h.channels[2], vec![0.0, 1.0]);
    }

    #[test]
    fn raster_observation_sees_entering_object() {
        let w = 8;
        let h = 6;
        let prev = Raster { width: w, height: h, rgb: vec![[20, 20, 20]; w * h] };
        let mut curr = prev.clone();
        // new object at the right edge, not yet a tracked region
        for v in 0..h {
            curr.rgb[v * w + 7] = [220, 40, 40];
        }
        // tracked region on the left moves
        curr.rgb[0] = [200, 200, 200];
        let regions = [(EntityId(1), PatchRegion::new(0.0, 0.0, 160.0, 160.0).unwrap())];
        let obs = observe_rasters(&prev, &curr, &regions, 640.0, 480.0, &cfg()).unwrap();
        // region maps to 2x2 raster pixels; one of them changed
        assert_eq!(obs.patch_change_ratios[&EntityId(1)], 0.25);
        assert!((obs.background_cr - 6.0 / 44.0).abs() < 1e-12);
        assert!(obs.shift().mean > 0.0);
    }

    fn histogram_strategy() -> impl Strategy<Value = RgbHistogram> {
        proptest::collection::vec(0u32..50, 3 * 16).prop_map(|v| {
            let f: Vec<f64> = v.iter().map(|x| *x as f64).collect();
            RgbHistogram { channels: [f[0..16].to_vec(), f[16..32].to_vec(), f[32..48].to_vec()] }
        })
    }

    proptest! {
        #[test]
        fn chi_square_symmetric_and_self_zero(a in histogram_strategy(), b in histogram_strategy()) {
            let ab = chi_square_shift(&a, &b).unwrap();
            let ba = chi_square_shift(&b, &a).unwrap();
            prop_assert_eq!(ab.per_channel, ba.per_channel);
            prop_assert_eq!(chi_square_shift(&a, &a).unwrap().mean, 0.0);
            prop_assert!(ab.per_channel.iter().all(|d| *d >= 0.0));
        }

        #[test]
        fn change_ratio_monotone_in_pixel_value(
            vals in proptest::collection::vec(0.0f64..255.0, 12),
            idx in 0usize..12,
            bump in 0.0f64..100.0,
        ) {
            let region = PatchRegion::new(0.0, 0.0, 4.0, 3.0).unwrap();
            let g = gray(4, 3, vals.clone());
            let mut raised = vals;
            raised[idx] += bump;
            let g2 = gray(4, 3, raised);
            let before = change_ratio(&g, &region, &cfg()).unwrap();
            let after = change_ratio(&g2, &region, &cfg()).unwrap();
            prop_assert!(after >= before);
            prop_assert!((0.0..=1.0).contains(&after));
        }

        #[test]
        fn grayscale_is_linear(
            px in proptest::collection::vec(prop::array::uniform3(0.0f64..100.0), 6),
            alpha in 0.0f64..2.5,
        ) {
            let base = grayscale_diff(&patch(3, 2, px.clone()), &cfg()).unwrap();
            let scaled_px: Vec<[f64; 3]> = px.iter().map(|p| p.map(|c| c * alpha)).collect();
            let scaled = grayscale_diff(&patch(3, 2, scaled_px), &cfg()).unwrap();
            for (a, b) in base.values.iter().zip(&scaled.values) {
                prop_assert!((a * alpha - b).abs() < 1e-9);
            }
        }

        #[test]
        fn motion_status_boundary(eps in 0.001f64..0.999) {
            let mut c = cfg();
            c.patch_change_threshold = eps;
            prop_assert_eq!(motion_status(eps - 1e-9, &c), MotionStatus::Stationary);
            prop_assert_eq!(motion_status(eps, &c), MotionStatus::Stationary);
            prop_assert_eq!(motion_status(eps + 1e-9, &c), MotionStatus::Moving);
        }
    }
}
