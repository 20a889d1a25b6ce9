use crate::error::{Error, Result};
use crate::labels::{SegmentMap, NUM_IDS, UNLABELED};

/// Number of evaluated classes (every id except Unlabeled).
pub const EVAL_CLASSES: usize = NUM_IDS - 1;

/// Pixel counts indexed by `[gt][pred]`. Pixels whose ground truth is the
/// ignore id are never counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    ignore: u8,
    counts: Vec<u64>,
}

impl Default for Confusion {
    fn default() -> Self {
        Self::new(UNLABELED)
    }
}

impl Confusion {
    pub fn new(ignore: u8) -> Self {
        Self {
            ignore,
            counts: vec![0; NUM_IDS * NUM_IDS],
        }
    }

    pub fn count(&self, gt: u8, pred: u8) -> u64 {
        self.counts[usize::from(gt) * NUM_IDS + usize::from(pred)]
    }

    pub fn add(&mut self, pred: &SegmentMap, gt: &SegmentMap) -> Result<()> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(Error::shape(format!(
                "prediction {}x{} and ground truth {}x{} differ",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
            if g != self.ignore {
                self.counts[usize::from(g) * NUM_IDS + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    /// Associative merge of two accumulators.
    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// IoU of ids 1..=14; `None` where the union is empty or the id is ignored.
    pub fn per_class(&self) -> [Option<f64>; EVAL_CLASSES] {
        std::array::from_fn(|k| {
            let c = (k + 1) as u8;
            if c == self.ignore {
                return None;
            }
            let tp = self.count(c, c);
            let (mut gt_c, mut pred_c) = (0u64, 0u64);
            for o in 0..NUM_IDS as u8 {
                gt_c += self.count(c, o);
                pred_c += self.count(o, c);
            }
            let union = gt_c + pred_c - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
    }

    pub fn miou(&self) -> f64 {
        mean_defined(&self.per_class())
    }
}

pub(crate) fn mean_defined(v: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Per-class IoU and their mean over classes with a non-empty union.
pub fn miou(pred: &SegmentMap, gt: &SegmentMap) -> Result<([Option<f64>; EVAL_CLASSES], f64)> {
    let mut c = Confusion::default();
    c.add(pred, gt)?;
    Ok((c.per_class(), c.miou()))
}
