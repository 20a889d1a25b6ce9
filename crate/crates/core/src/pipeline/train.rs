use std::collections::VecDeque;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::rng;
use crate::titan::Trainer;
use crate::Exec;

use super::config::RunConfig;
use super::infer::{evaluate_miou, GeneratorTranslator};
use super::sample::{make_batch, PairedSample, ViewGeometry};

pub const LOG_HEADER: &str = "step,d_loss,g_adv,lovasz,gp";

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub lovasz: f64,
    pub gp: f64,
}

impl LogRow {
    pub fn new(step: u64, r: &LossReport) -> Self {
        Self {
            step,
            d_loss: r.d_loss,
            g_adv: r.g_adv_loss,
            lovasz: r.lovasz_loss,
            gp: r.gp_term,
        }
    }

    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.d_loss, self.g_adv, self.lovasz, self.gp)
    }
}

/// A trainer sized for the crops and camera maps of `example`.
pub fn build_trainer(run: &RunConfig, example: &PairedSample) -> Result<Trainer> {
    let g = run.generator_config(
        example.range.height(),
        example.range.width(),
        example.camera.height(),
        example.camera.width(),
    );
    Trainer::new(g, run.critic_config(), run.classes.clone(), run.train.clone())
}

/// Epoch-wise shuffled batch indices.
struct Sampler {
    n: usize,
    queue: VecDeque<usize>,
    rng: rng::Rng,
}

impl Sampler {
    fn next(&mut self, k: usize) -> Vec<usize> {
        if self.queue.len() < k {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut self.rng);
            self.queue.extend(perm);
        }
        self.queue.drain(..k).collect()
    }
}

/// Runs `run.train.max_steps` steps. `on_step` sees every log row as it is produced.
pub fn train(
    run: &RunConfig,
    data: &[PairedSample],
    geometry: &ViewGeometry,
    mut on_step: impl FnMut(&Trainer, &LogRow) -> Result<()>,
) -> Result<(Trainer, Vec<LogRow>)> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let mut trainer = build_trainer(run, first)?;
    let seed = run.train.seed;
    let k = run.train.batch_size;
    if k > data.len() {
        return Err(Error::InvalidConfig(format!("batch of {k} from {} samples", data.len())));
    }
    let mut sampler = Sampler {
        n: data.len(),
        queue: VecDeque::new(),
        rng: rng::stream(seed, 2),
    };
    let mut aug_rng = rng::stream(seed, 3);
    let mut log = Vec::with_capacity(run.train.max_steps as usize);
    while trainer.steps() < run.train.max_steps {
        let picked: Vec<&PairedSample> = sampler.next(k).into_iter().map(|i| &data[i]).collect();
        let batch = make_batch(&picked, &run.classes, geometry, Some((&run.train.augment, &mut aug_rng)))?;
        let report = trainer.train_step(&batch)?;
        let row = LogRow::new(trainer.steps(), &report);
        on_step(&trainer, &row)?;
        log.push(row);
    }
    Ok((trainer, log))
}

/// Validation mIoU of the trainer's generator.
pub fn validate(trainer: &Trainer, samples: &[PairedSample], exec: Exec) -> Result<f64> {
    let t = GeneratorTranslator {
        generator: &trainer.generator,
        classes: &trainer.classes,
    };
    evaluate_miou(samples, &t, exec)
}

/// mIoU of always predicting the most frequent labelled ground-truth class.
pub fn majority_baseline(train: &[PairedSample], eval: &[PairedSample], exec: Exec) -> Result<(u8, f64)> {
    let mut hist = [0usize; crate::labels::NUM_IDS];
    for s in train {
        for (h, c) in hist.iter_mut().zip(s.camera.histogram()) {
            *h += c;
        }
    }
    let (id, _) = hist
        .iter()
        .enumerate()
        .skip(1)
        .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
        .ok_or(Error::EmptyDataset)?;
    let id = id as u8;
    let constant = move |s: &PairedSample| crate::labels::SegmentMap::filled(s.camera.width(), s.camera.height(), id);
    Ok((id, evaluate_miou(eval, &constant, exec)?))
}
