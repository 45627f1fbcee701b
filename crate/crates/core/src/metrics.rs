//! IoU and Dice Loss on hard masks, plus dataset aggregation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::raster::BinaryMask;

/// Pixel counts behind both metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overlap {
    pub intersection: u64,
    pub union: u64,
    pub pred: u64,
    pub label: u64,
}

pub fn overlap(pred: &BinaryMask, label: &BinaryMask) -> Result<Overlap> {
    if !pred.same_extent(label.height(), label.width()) {
        bail!(
            ShapeMismatch,
            "prediction {}x{} vs label {}x{}",
            pred.height(),
            pred.width(),
            label.height(),
            label.width()
        );
    }
    let mut o = Overlap::default();
    for (&p, &l) in pred.data().iter().zip(label.data()) {
        o.intersection += (p & l) as u64;
        o.union += (p | l) as u64;
        o.pred += p as u64;
        o.label += l as u64;
    }
    Ok(o)
}

impl Overlap {
    /// `I/U`; two empty masks agree perfectly.
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }

    /// `1 − 2|X∩Y|/(|X|+|Y|)`; two empty masks give 0.
    pub fn dice_loss(&self) -> f64 {
        let total = self.pred + self.label;
        if total == 0 {
            0.0
        } else {
            1.0 - 2.0 * self.intersection as f64 / total as f64
        }
    }
}

pub fn iou(pred: &BinaryMask, label: &BinaryMask) -> Result<f64> {
    Ok(overlap(pred, label)?.iou())
}

pub fn dice_loss_metric(pred: &BinaryMask, label: &BinaryMask) -> Result<f64> {
    Ok(overlap(pred, label)?.dice_loss())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageMetrics {
    pub image_id: String,
    pub iou: f64,
    pub dice_loss: f64,
    pub crack_pixels_label: u64,
    pub crack_pixels_pred: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    /// Ordered by `image_id`.
    pub images: Vec<ImageMetrics>,
    pub miou: f64,
    pub mean_dice_loss: f64,
    pub count: usize,
}

impl MetricsReport {
    pub fn from_images(mut images: Vec<ImageMetrics>) -> Result<Self> {
        if images.is_empty() {
            bail!(InvalidArgument, "no images to aggregate");
        }
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let count = images.len();
        let miou = images.iter().map(|m| m.iou).sum::<f64>() / count as f64;
        let mean_dice_loss = images.iter().map(|m| m.dice_loss).sum::<f64>() / count as f64;
        Ok(Self { images, miou, mean_dice_loss, count })
    }
}

/// Scores predictions against labels with identical id sets.
pub fn evaluate_dataset(
    predictions: &[(String, BinaryMask)],
    labels: &[(String, BinaryMask)],
) -> Result<MetricsReport> {
    let mut by_id: BTreeMap<&str, &BinaryMask> = BTreeMap::new();
    for (id, mask) in labels {
        if by_id.insert(id.as_str(), mask).is_some() {
            bail!(InvalidArgument, "duplicate label id {id}");
        }
    }
    let mut seen = BTreeMap::new();
    let mut images = Vec::with_capacity(predictions.len());
    for (id, pred) in predictions {
        let Some(label) = by_id.get(id.as_str()) else {
            bail!(InvalidArgument, "prediction {id} has no label");
        };
        if seen.insert(id.as_str(), ()).is_some() {
            bail!(InvalidArgument, "duplicate prediction id {id}");
        }
        let o = overlap(pred, label)?;
        images.push(ImageMetrics {
            image_id: id.clone(),
            iou: o.iou(),
            dice_loss: o.dice_loss(),
            crack_pixels_label: o.label,
            crack_pixels_pred: o.pred,
        });
    }
    if let Some(missing) = by_id.keys().find(|id| !seen.contains_key(*id)) {
        bail!(InvalidArgument, "label {missing} has no prediction");
    }
    MetricsReport::from_images(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn mask_from_bits(h: usize, w: usize, bits: &[bool]) -> BinaryMask {
        BinaryMask::new(h, w, bits.iter().map(|&b| b as u8).collect()).unwrap()
    }

    #[test]
    fn identical_nonempty_masks() {
        let m = mask_from_bits(2, 2, &[true, false, true, true]);
        assert_eq!(iou(&m, &m).unwrap(), 1.0);
        assert_eq!(dice_loss_metric(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn ten_and_ten_sharing_five() {
        let mut label = vec![false; 20];
        let mut pred = vec![false; 20];
        label[..10].iter_mut().for_each(|b| *b = true);
        pred[5..15].iter_mut().for_each(|b| *b = true);
        let (l, p) = (mask_from_bits(4, 5, &label), mask_from_bits(4, 5, &pred));
        // I = 5, U = 15
        assert!((iou(&p, &l).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_and_empty_conventions() {
        let a = mask_from_bits(1, 4, &[true, true, false, false]);
        let b = mask_from_bits(1, 4, &[false, false, true, true]);
        assert_eq!(dice_loss_metric(&a, &b).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        let z = BinaryMask::zeros(3, 3).unwrap();
        assert_eq!(iou(&z, &z).unwrap(), 1.0);
        assert_eq!(dice_loss_metric(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_extent_is_an_error() {
        let a = BinaryMask::zeros(2, 3).unwrap();
        let b = BinaryMask::zeros(3, 2).unwrap();
        assert!(iou(&a, &b).is_err());
        assert!(dice_loss_metric(&a, &b).is_err());
    }

    #[test]
    fn dataset_means() {
        let full = mask_from_bits(1, 2, &[true, true]);
        let half = mask_from_bits(1, 2, &[true, false]);
        let preds = vec![("b".to_string(), full.clone()), ("a".to_string(), half)];
        let labels = vec![("a".to_string(), full.clone()), ("b".to_string(), full)];
        let r = evaluate_dataset(&preds, &labels).unwrap();
        assert_eq!(r.count, 2);
        assert_eq!(r.images[0].image_id, "a");
        assert!((r.miou - 0.75).abs() < 1e-15);
        assert!((r.mean_dice_loss - (1.0 - 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn dataset_ids_must_align() {
        let m = BinaryMask::zeros(1, 1).unwrap();
        let preds = vec![("a".to_string(), m.clone())];
        let labels = vec![("a".to_string(), m.clone()), ("b".to_string(), m.clone())];
        assert!(evaluate_dataset(&preds, &labels).is_err());
        let preds = vec![("c".to_string(), m.clone())];
        assert!(evaluate_dataset(&preds, &labels[..1]).is_err());
        assert!(evaluate_dataset(&[], &[]).is_err());
    }

    fn pair(len: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
        (prop::collection::vec(any::<bool>(), len), prop::collection::vec(any::<bool>(), len))
    }

    proptest! {
        #[test]
        fn metrics_are_bounded_and_symmetric((a, b) in pair(36)) {
            let (ma, mb) = (mask_from_bits(6, 6, &a), mask_from_bits(6, 6, &b));
            let i = iou(&ma, &mb).unwrap();
            let d = dice_loss_metric(&ma, &mb).unwrap();
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(i, iou(&mb, &ma).unwrap());
            prop_assert_eq!(d, dice_loss_metric(&mb, &ma).unwrap());
            prop_assert!(((1.0 - d) - 2.0 * i / (1.0 + i)).abs() <= 1e-12);
        }

        #[test]
        fn perfect_scores_only_for_identical_masks((a, b) in pair(16)) {
            let (ma, mb) = (mask_from_bits(4, 4, &a), mask_from_bits(4, 4, &b));
            let nonempty = a.iter().any(|&x| x) || b.iter().any(|&x| x);
            if nonempty {
                prop_assert_eq!(iou(&ma, &mb).unwrap() == 1.0, a == b);
                prop_assert_eq!(dice_loss_metric(&ma, &mb).unwrap() == 0.0, a == b);
            }
        }
    }
}
