use image::RgbImage;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::geometry::{RangeImage, CHANNELS};
use crate::labels::{colorize, ClassList, SegmentMap};
use crate::metrics::{frechet_of_images, ssim, swd_pyramid, Confusion, HistogramFeatures, MetricReport, Plane, SwdConfig, SSIM_WINDOW};
use crate::titan::{predict_logits, Generator};
use crate::Exec;

use super::sample::{normalize_range, PairedSample};

/// Attached to every evaluation report.
pub const EVAL_NOTE: &str = "appearance metrics compare colorized segment maps, not synthesized RGB images";

/// Eval-mode logits `[C, h, w]` for one range view and its segment map.
pub fn generator_logits(generator: &Generator, classes: &ClassList, range: &RangeImage, map: &SegmentMap) -> Result<(Vec<f32>, usize, usize)> {
    if (map.width(), map.height()) != (range.width(), range.height()) {
        return Err(Error::shape("range view and segment map differ in size"));
    }
    if classes.len() != generator.config.classes {
        return Err(Error::shape("class list does not match the generator"));
    }
    let (h, w) = (range.height(), range.width());
    let g = Graph::<f32>::new();
    let r = g.constant(normalize_range(range), &[1, CHANNELS, h, w])?;
    let c = g.constant(classes.one_hot(map), &[1, classes.len(), h, w])?;
    let y = predict_logits(generator, &g, &r, &c)?;
    let s = y.shape().to_vec();
    Ok((y.to_vec(), s[2], s[3]))
}

/// Camera-view segment map predicted from a camera-facing crop.
pub fn translate(generator: &Generator, classes: &ClassList, range: &RangeImage, lidar_map: &SegmentMap) -> Result<SegmentMap> {
    let cfg = &generator.config;
    if (range.height(), range.width()) != (cfg.in_h, cfg.in_w) {
        return Err(Error::shape(format!(
            "crop {}x{} differs from the {}x{} training crop",
            range.width(),
            range.height(),
            cfg.in_w,
            cfg.in_h
        )));
    }
    let (logits, h, w) = generator_logits(generator, classes, range, lidar_map)?;
    classes.argmax(&logits, w, h)
}

/// Runs the generator over a full 360° range view. The output is as many
/// camera widths wide as the scan is crop widths wide.
pub fn render_panorama(generator: &Generator, classes: &ClassList, full: &RangeImage, full_map: &SegmentMap) -> Result<SegmentMap> {
    let cfg = &generator.config;
    let g = cfg.granularity();
    if full.width() % g != 0 || (full.width() * cfg.out_w) % cfg.in_w != 0 {
        return Err(Error::Precondition(format!(
            "scan width {} is not a multiple of the crop granularity {g}",
            full.width()
        )));
    }
    let (logits, h, w) = generator_logits(generator, classes, full, full_map)?;
    classes.argmax(&logits, w, h)
}

/// Anything that predicts a camera segment map for a sample.
pub trait Translator: Sync {
    fn translate(&self, sample: &PairedSample) -> Result<SegmentMap>;
}

pub struct GeneratorTranslator<'a> {
    pub generator: &'a Generator,
    pub classes: &'a ClassList,
}

impl Translator for GeneratorTranslator<'_> {
    fn translate(&self, s: &PairedSample) -> Result<SegmentMap> {
        translate(self.generator, self.classes, &s.range, &s.lidar_map)
    }
}

impl<F> Translator for F
where
    F: Fn(&PairedSample) -> Result<SegmentMap> + Sync,
{
    fn translate(&self, s: &PairedSample) -> Result<SegmentMap> {
        self(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Compute SSIM, SWD and the Fréchet distance as well as IoU.
    pub appearance: bool,
    pub swd: SwdConfig,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            appearance: true,
            swd: SwdConfig::default(),
            seed: 0,
        }
    }
}

/// Predictions and confusion counts over a sample set.
pub fn predict_all(samples: &[PairedSample], model: &dyn Translator, exec: Exec) -> Result<(Vec<SegmentMap>, Confusion)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results: Vec<Result<(SegmentMap, Confusion)>> = exec.map(samples.len(), |i| {
        let pred = model.translate(&samples[i])?;
        let mut c = Confusion::default();
        c.add(&pred, &samples[i].camera)?;
        Ok((pred, c))
    });
    let mut total = Confusion::default();
    let mut preds = Vec::with_capacity(samples.len());
    for r in results {
        let (p, c) = r?;
        total.merge(&c);
        preds.push(p);
    }
    Ok((preds, total))
}

/// Validation mIoU only.
pub fn evaluate_miou(samples: &[PairedSample], model: &dyn Translator, exec: Exec) -> Result<f64> {
    Ok(predict_all(samples, model, exec)?.1.miou())
}

pub fn evaluate(samples: &[PairedSample], model: &dyn Translator, opts: &EvalOptions, exec: Exec) -> Result<MetricReport> {
    let (preds, conf) = predict_all(samples, model, exec)?;
    let mut report = MetricReport {
        per_class_iou: conf.per_class(),
        miou: conf.miou(),
        ssim: f64::NAN,
        swd_per_level: Vec::new(),
        swd_avg: f64::NAN,
        frechet: None,
        note: Some(EVAL_NOTE.into()),
    };
    if !opts.appearance {
        return Ok(report);
    }
    let fake: Vec<RgbImage> = preds.iter().map(colorize).collect();
    let real: Vec<RgbImage> = samples.iter().map(|s| colorize(&s.camera)).collect();
    let scores = exec.map(fake.len(), |i| ssim(&Plane::luma(&fake[i]), &Plane::luma(&real[i]), SSIM_WINDOW));
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    report.ssim = scores.iter().sum::<f64>() / scores.len() as f64;
    report.swd_per_level = swd_pyramid(&fake, &real, &opts.swd, opts.seed, exec)?
        .into_iter()
        .map(|(r, v)| (r, v * 1e3))
        .collect();
    report.swd_avg = report.swd_per_level.iter().map(|l| l.1).sum::<f64>() / report.swd_per_level.len().max(1) as f64;
    if samples.len() >= 2 {
        report.frechet = Some(frechet_of_images(&fake, &real, &HistogramFeatures::default())?);
    }
    Ok(report)
}
