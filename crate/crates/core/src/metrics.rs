//! IoU, accuracy and pretext-head evaluation.

use crate::config::SupervisedKind;
use crate::data::{LabeledSample, Mask};
use crate::error::{Error, Result};
use crate::image::{stack_batch, ImageTensor, ValueRange};
use crate::model::Model;
use crate::nn::argmax_channels;
use crate::pretext::Pretext;
use crate::rng::derive_seed;

const EVAL_BATCH: usize = 4;

/// Per-class IoU for one mask pair. `None` marks a class absent from both.
pub fn compute_iou(pred: &Mask, truth: &Mask, num_classes: usize) -> Result<Vec<Option<f64>>> {
    let mut acc = IouAccumulator::new(num_classes);
    acc.add(pred, truth)?;
    Ok(acc.per_class())
}

/// Mean over the classes that have an IoU value.
pub fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Dataset-level IoU: intersections and unions are summed over all masks
/// before dividing.
#[derive(Clone, Debug)]
pub struct IouAccumulator {
    intersection: Vec<u64>,
    union: Vec<u64>,
    correct: u64,
    total: u64,
}

impl IouAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
            correct: 0,
            total: 0,
        }
    }

    pub fn add(&mut self, pred: &Mask, truth: &Mask) -> Result<()> {
        if pred.height != truth.height || pred.width != truth.width {
            return Err(Error::invalid(format!(
                "mask dims differ: {}x{} vs {}x{}",
                pred.height, pred.width, truth.height, truth.width
            )));
        }
        let k = self.intersection.len();
        for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return Err(Error::invalid(format!("label {} outside {k} classes", p.max(t))));
            }
            self.total += 1;
            if p == t {
                self.correct += 1;
                self.intersection[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[t] += 1;
            }
        }
        Ok(())
    }

    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect()
    }

    pub fn pixel_accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Evaluation of one model state on one test set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: usize,
    /// Per-class IoU (segmentation only), background first.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: Option<f64>,
    pub pixel_accuracy: Option<f64>,
    pub classification_accuracy: Option<f64>,
    pub pretext_accuracy: Option<f64>,
}

impl MetricsReport {
    /// `(metric, class, value)` triples in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String, f64)> {
        let mut out = Vec::new();
        if let Some(m) = self.mean_iou {
            out.push(("mean_iou", "all".to_string(), m));
        }
        for (c, v) in self.per_class_iou.iter().enumerate() {
            if let Some(v) = v {
                out.push(("iou", crate::data::class_name(c).to_string(), *v));
            }
        }
        if let Some(v) = self.pixel_accuracy {
            out.push(("pixel_accuracy", "all".to_string(), v));
        }
        if let Some(v) = self.classification_accuracy {
            out.push(("classification_accuracy", "all".to_string(), v));
        }
        if let Some(v) = self.pretext_accuracy {
            out.push(("pretext_accuracy", "all".to_string(), v));
        }
        out
    }

    /// The headline number: mean IoU for segmentation, accuracy otherwise.
    pub fn primary(&self) -> f64 {
        self.mean_iou.or(self.classification_accuracy).unwrap_or(0.0)
    }
}

/// Predicted masks for every sample (segmentation models only).
pub fn predict_masks(model: &Model, samples: &[LabeledSample]) -> Result<Vec<Mask>> {
    let mut masks = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<ImageTensor> = chunk.iter().map(|s| s.image.to_range(ValueRange::Centered)).collect();
        let logits = model.forward_supervised(&stack_batch(&images.iter().collect::<Vec<_>>())?)?;
        let plane = logits.h * logits.w;
        let labels = argmax_channels(&logits);
        for i in 0..chunk.len() {
            let l = labels[i * plane..(i + 1) * plane].iter().map(|&c| c as u8).collect();
            masks.push(Mask::new(logits.h, logits.w, l)?);
        }
    }
    Ok(masks)
}

/// Supervised metrics on a labeled set; run bookkeeping fields are left empty.
pub fn evaluate_supervised(model: &Model, kind: SupervisedKind, samples: &[LabeledSample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let classes = model.config().supervised.classes();
    let mut report = MetricsReport {
        run_id: String::new(),
        config_hash: String::new(),
        seed: 0,
        step: 0,
        per_class_iou: Vec::new(),
        mean_iou: None,
        pixel_accuracy: None,
        classification_accuracy: None,
        pretext_accuracy: None,
    };
    match kind {
        SupervisedKind::Segmentation => {
            let mut acc = IouAccumulator::new(classes);
            for (pred, s) in predict_masks(model, samples)?.iter().zip(samples) {
                acc.add(pred, &s.mask)?;
            }
            report.per_class_iou = acc.per_class();
            report.mean_iou = mean_present(&report.per_class_iou);
            report.pixel_accuracy = Some(acc.pixel_accuracy());
        }
        SupervisedKind::Classification => {
            let mut correct = 0;
            for chunk in samples.chunks(EVAL_BATCH) {
                let images: Vec<ImageTensor> = chunk.iter().map(|s| s.image.to_range(ValueRange::Centered)).collect();
                let logits = model.forward_supervised(&stack_batch(&images.iter().collect::<Vec<_>>())?)?;
                correct += argmax_channels(&logits)
                    .iter()
                    .zip(chunk)
                    .filter(|(&p, s)| p == s.class_label as usize)
                    .count();
            }
            report.classification_accuracy = Some(correct as f64 / samples.len() as f64);
        }
    }
    Ok(report)
}

/// Pretext-head accuracy on freshly transformed images (any value range).
pub fn evaluate_pretext(model: &Model, images: &[ImageTensor], pretext: &Pretext, seed: u64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut correct = 0;
    for (c, chunk) in images.chunks(EVAL_BATCH).enumerate() {
        let samples = chunk
            .iter()
            .enumerate()
            .map(|(i, img)| {
                pretext.make_sample(
                    &img.to_range(ValueRange::Centered),
                    derive_seed(seed, (c * EVAL_BATCH + i) as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = model.forward_selfsup(&stack_batch(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?)?;
        correct += argmax_channels(&logits)
            .iter()
            .zip(&samples)
            .filter(|(&p, s)| p == s.label)
            .count();
    }
    Ok(correct as f64 / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(labels: &[u8], w: usize) -> Mask {
        Mask::new(labels.len() / w, w, labels.to_vec()).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(&[0, 1, 1, 2, 0, 0], 3);
        assert_eq!(
            compute_iou(&m, &m, 4).unwrap(),
            vec![Some(1.0), Some(1.0), Some(1.0), None]
        );
    }

    #[test]
    fn disjoint_and_half_overlap() {
        let a = mask(&[1, 1, 0, 0], 4);
        let b = mask(&[0, 0, 1, 1], 4);
        assert_eq!(compute_iou(&a, &b, 2).unwrap()[1], Some(0.0));
        // equal areas of 4 pixels overlapping in 2
        let a = mask(&[1, 1, 1, 1, 0, 0], 6);
        let b = mask(&[0, 0, 1, 1, 1, 1], 6);
        let iou = compute_iou(&a, &b, 2).unwrap()[1].unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(compute_iou(&mask(&[0; 4], 2), &mask(&[0; 4], 4), 2).is_err());
        assert!(compute_iou(&mask(&[5; 4], 2), &mask(&[0; 4], 2), 2).is_err());
    }

    #[test]
    fn absent_classes_leave_the_mean() {
        assert_eq!(mean_present(&[Some(1.0), None, Some(0.5)]), Some(0.75));
        assert_eq!(mean_present(&[None]), None);
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in proptest::collection::vec(0u8..4, 36), b in proptest::collection::vec(0u8..4, 36)) {
            let (a, b) = (mask(&a, 6), mask(&b, 6));
            let ab = compute_iou(&a, &b, 4).unwrap();
            prop_assert_eq!(&ab, &compute_iou(&b, &a, 4).unwrap());
            prop_assert!(ab.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
