use crate::error::{Error, Result};
use crate::tensor::ClassMap;

/// Row = ground truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    num_classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Confusion {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    /// Adds one image. Pixels whose label is the ignore value are skipped.
    pub fn accumulate(&mut self, pred: &ClassMap, labels: &ClassMap) -> Result<()> {
        if pred.dims() != labels.dims() {
            return Err(Error::invalid(
                "miou",
                format!("prediction {:?} and labels {:?} differ in size", pred.dims(), labels.dims()),
            ));
        }
        labels.validate(self.num_classes)?;
        let k = self.num_classes;
        for (index, (&p, &t)) in pred.data().iter().zip(labels.data()).enumerate() {
            if t == labels.ignore_value() {
                continue;
            }
            if p as usize >= k {
                return Err(Error::LabelOutOfRange {
                    label: p,
                    index,
                    num_classes: k,
                });
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` for classes absent from both
    /// prediction and ground truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..k).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|t| self.get(t, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    pub fn report(&self) -> MiouReport {
        let per_class = self.iou();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        MiouReport { per_class, mean }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    /// `None` when no class occurs at all.
    pub mean: Option<f64>,
}

pub fn miou(pred: &ClassMap, labels: &ClassMap, num_classes: usize) -> Result<MiouReport> {
    let mut c = Confusion::new(num_classes);
    c.accumulate(pred, labels)?;
    Ok(c.report())
}
