//! Counting metrics: MAE, RMSE, pixelwise squared error and density-level strata.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::densitymap::{count_from_density, DensityMap};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numeric::{compensated_sum, CompensatedSum};

/// Crowdedness stratum of an image, by ground-truth count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityLevel {
    /// Fewer than 5 objects.
    Low,
    /// 5 to 19 objects.
    Medium,
    /// 20 or more.
    High,
}

impl DensityLevel {
    pub const ALL: [DensityLevel; 3] = [DensityLevel::Low, DensityLevel::Medium, DensityLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            DensityLevel::Low => "low",
            DensityLevel::Medium => "medium",
            DensityLevel::High => "high",
        }
    }
}

pub fn density_level(count: f64) -> Result<DensityLevel> {
    if count.is_nan() || count < 0.0 {
        return Err(Error::NegativeCount(count));
    }
    Ok(if count < 5.0 {
        DensityLevel::Low
    } else if count < 20.0 {
        DensityLevel::Medium
    } else {
        DensityLevel::High
    })
}

/// Mean absolute error over `(ground truth, prediction)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoRecords);
    }
    let total = compensated_sum(pairs.iter().map(|(g, p)| (g - p).abs()));
    Ok(total / pairs.len() as f64)
}

/// Root mean squared error over `(ground truth, prediction)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoRecords);
    }
    let total = compensated_sum(pairs.iter().map(|(g, p)| (g - p) * (g - p)));
    Ok((total / pairs.len() as f64).sqrt())
}

/// Squared Euclidean distance between two maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMse {
    /// Sum of squared differences over all pixels.
    pub raw: f64,
    /// `raw` divided by the pixel count.
    pub per_pixel: f64,
}

pub fn pixel_mse(gt: &DensityMap, pred: &DensityMap) -> Result<PixelMse> {
    if gt.width != pred.width || gt.height != pred.height {
        return Err(Error::DimensionMismatch {
            left_width: gt.width,
            left_height: gt.height,
            right_width: pred.width,
            right_height: pred.height,
        });
    }
    let raw = compensated_sum(gt.values.iter().zip(&pred.values).map(|(g, p)| (g - p) * (g - p)));
    let n = gt.values.len().max(1) as f64;
    Ok(PixelMse { raw, per_pixel: raw / n })
}

/// Per-image counting outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub gt_count: f64,
    pub pred_count: f64,
    pub level: DensityLevel,
}

impl EvalRecord {
    pub fn new(image_id: impl Into<String>, gt_count: f64, pred_count: f64) -> Result<Self> {
        Ok(Self {
            image_id: image_id.into(),
            gt_count,
            pred_count,
            level: density_level(gt_count)?,
        })
    }
}

/// Metrics for one stratum. Metrics are absent, not zero, when `n == 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StratumReport {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    /// Mean over images of the squared map distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_mse: Option<f64>,
}

impl StratumReport {
    fn from_records<'a>(records: impl IntoIterator<Item = (&'a EvalRecord, Option<f64>)>) -> Self {
        let mut pairs = Vec::new();
        let mut sq = CompensatedSum::new();
        let mut all_pixel = true;
        for (r, px) in records {
            pairs.push((r.gt_count, r.pred_count));
            match px {
                Some(v) => sq.add(v),
                None => all_pixel = false,
            }
        }
        if pairs.is_empty() {
            return Self::default();
        }
        let n = pairs.len();
        Self {
            n,
            mae: mae(&pairs).ok(),
            rmse: rmse(&pairs).ok(),
            pixel_mse: all_pixel.then(|| sq.value() / n as f64),
        }
    }
}

/// Overall and per-level metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: StratumReport,
    pub low: StratumReport,
    pub medium: StratumReport,
    pub high: StratumReport,
}

impl EvalReport {
    pub fn stratum(&self, level: DensityLevel) -> &StratumReport {
        match level {
            DensityLevel::Low => &self.low,
            DensityLevel::Medium => &self.medium,
            DensityLevel::High => &self.high,
        }
    }
}

/// Aggregates records; `pixel_errors[i]` (if given) is record `i`'s raw map distance.
pub fn report_from_records(records: &[EvalRecord], pixel_errors: Option<&[f64]>) -> EvalReport {
    let px = |i: usize| pixel_errors.map(|p| p[i]);
    let level = |lvl: DensityLevel| {
        StratumReport::from_records(
            records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.level == lvl)
                .map(|(i, r)| (r, px(i))),
        )
    };
    EvalReport {
        overall: StratumReport::from_records(records.iter().enumerate().map(|(i, r)| (r, px(i)))),
        low: level(DensityLevel::Low),
        medium: level(DensityLevel::Medium),
        high: level(DensityLevel::High),
    }
}

/// Ground-truth counts are integers; map storage round-off is snapped away
/// so that stratification is not thrown across a level boundary.
pub fn snap_ground_truth(count: f64) -> f64 {
    let r = count.round();
    if (count - r).abs() < 1e-3 {
        r
    } else {
        count
    }
}

/// Full evaluation of predicted maps against ground truth, matched by image id.
pub fn evaluate_dataset(
    gt_maps: &BTreeMap<String, DensityMap>,
    pred_maps: &BTreeMap<String, DensityMap>,
    exec: Execution,
) -> Result<(EvalReport, Vec<EvalRecord>)> {
    let mut missing: Vec<String> = pred_maps
        .keys()
        .filter(|id| !gt_maps.contains_key(*id))
        .map(|id| format!("{id} (no ground truth)"))
        .collect();
    missing.extend(
        gt_maps
            .keys()
            .filter(|id| !pred_maps.contains_key(*id))
            .map(|id| format!("{id} (no prediction)")),
    );
    if !missing.is_empty() {
        return Err(Error::UnmatchedIds(missing));
    }

    let ids: Vec<&String> = gt_maps.keys().collect();
    let rows = exec.map(&ids, |id| -> Result<(EvalRecord, f64)> {
        let (gt, pred) = (&gt_maps[*id], &pred_maps[*id]);
        let px = pixel_mse(gt, pred)?;
        let gt_count = snap_ground_truth(count_from_density(gt));
        let record = EvalRecord::new(id.as_str(), gt_count, count_from_density(pred))?;
        Ok((record, px.raw))
    });
    let (records, pixel): (Vec<_>, Vec<_>) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok((report_from_records(&records, Some(&pixel)), records))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[(5., 5.), (7., 7.)]).unwrap(), 0.0);
        assert_eq!(mae(&[(2., 3.), (5., 5.)]).unwrap(), 0.5);
        assert_eq!(mae(&[(10., 7.)]).unwrap(), 3.0);
        assert!(matches!(mae(&[]), Err(Error::NoRecords)));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[(5., 5.)]).unwrap(), 0.0);
        assert!((rmse(&[(2., 3.), (5., 5.)]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[(0., 3.), (0., -3.)]).unwrap(), 3.0);
        assert!(matches!(rmse(&[]), Err(Error::NoRecords)));
    }

    #[test]
    fn pixel_mse_examples() {
        let gt = DensityMap::zeros(4, 3);
        assert_eq!(pixel_mse(&gt, &gt).unwrap().raw, 0.0);
        let mut pred = gt.clone();
        pred.values[5] = 0.5;
        let px = pixel_mse(&gt, &pred).unwrap();
        assert_eq!(px.raw, 0.25);
        assert_eq!(px.per_pixel, 0.25 / 12.0);

        let base = DensityMap::from_values(3, 2, vec![0.1, 0.0, 0.4, 0.2, 0.3, 0.0]).unwrap();
        let shifted = DensityMap::from_values(3, 2, base.values.iter().map(|v| v + 0.5).collect()).unwrap();
        assert!((pixel_mse(&base, &shifted).unwrap().raw - 6.0 * 0.25).abs() < 1e-12);

        assert!(matches!(
            pixel_mse(&gt, &DensityMap::zeros(3, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn level_boundaries() {
        use DensityLevel::*;
        assert_eq!(density_level(0.0).unwrap(), Low);
        assert_eq!(density_level(4.0).unwrap(), Low);
        assert_eq!(density_level(4.999).unwrap(), Low);
        assert_eq!(density_level(5.0).unwrap(), Medium);
        assert_eq!(density_level(19.0).unwrap(), Medium);
        assert_eq!(density_level(20.0).unwrap(), High);
        assert!(density_level(-1.0).is_err());
        assert!(density_level(f64::NAN).is_err());
    }

    #[test]
    fn aggregation_by_hand() {
        let records = vec![
            EvalRecord::new("a", 2.0, 3.0).unwrap(),
            EvalRecord::new("b", 3.0, 2.0).unwrap(),
            EvalRecord::new("c", 25.0, 22.0).unwrap(),
        ];
        let r = report_from_records(&records, None);
        assert_eq!(r.overall.n, 3);
        assert!((r.overall.mae.unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.low.n, 2);
        assert_eq!(r.low.mae, Some(1.0));
        assert_eq!(r.high.mae, Some(3.0));
        assert_eq!(r.medium, StratumReport::default());
        assert_eq!(r.overall.pixel_mse, None);

        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["medium"], serde_json::json!({"n": 0}));
        assert_eq!(json["overall"]["n"], 3);
    }

    fn map_with_count(count: f64) -> DensityMap {
        let mut m = DensityMap::zeros(4, 4);
        m.values[0] = count / 2.0;
        m.values[15] = count / 2.0;
        m
    }

    #[test]
    fn dataset_against_itself_is_perfect() {
        let gt: BTreeMap<_, _> = [("a", 2.0), ("b", 7.0), ("c", 30.0)]
            .into_iter()
            .map(|(id, c)| (id.to_string(), map_with_count(c)))
            .collect();
        let (report, records) = evaluate_dataset(&gt, &gt, Execution::Parallel).unwrap();
        assert_eq!(records.len(), 3);
        for level in DensityLevel::ALL {
            let s = report.stratum(level);
            assert_eq!(s.n, 1);
            assert_eq!((s.mae, s.rmse, s.pixel_mse), (Some(0.0), Some(0.0), Some(0.0)));
        }
        assert_eq!(report.overall.mae, Some(0.0));
    }

    #[test]
    fn scaled_prediction_contributes_its_count_error() {
        let gt: BTreeMap<_, _> = [("a".to_string(), map_with_count(10.0))].into();
        let pred: BTreeMap<_, _> = [("a".to_string(), map_with_count(10.0).scaled(1.1))].into();
        let (report, _) = evaluate_dataset(&gt, &pred, Execution::Sequential).unwrap();
        assert!((report.overall.mae.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unmatched_ids_are_listed() {
        let gt: BTreeMap<_, _> = [("a".to_string(), map_with_count(1.0))].into();
        let pred: BTreeMap<_, _> = [("b".to_string(), map_with_count(1.0))].into();
        match evaluate_dataset(&gt, &pred, Execution::Sequential) {
            Err(Error::UnmatchedIds(ids)) => {
                assert_eq!(ids.len(), 2);
                assert!(ids[0].starts_with('b') && ids[1].starts_with('a'));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snapping_only_touches_near_integers() {
        assert_eq!(snap_ground_truth(4.9999996), 5.0);
        assert_eq!(snap_ground_truth(4.9), 4.9);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..50)) {
            let (m, r) = (mae(&pairs).unwrap(), rmse(&pairs).unwrap());
            prop_assert!(r >= m - 1e-12 && m >= 0.0);
        }

        #[test]
        fn metrics_ignore_order(mut pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..50)) {
            let (m, r) = (mae(&pairs).unwrap(), rmse(&pairs).unwrap());
            pairs.reverse();
            let k = pairs.len() / 3;
            pairs.rotate_left(k);
            prop_assert!((mae(&pairs).unwrap() - m).abs() < 1e-12);
            prop_assert!((rmse(&pairs).unwrap() - r).abs() < 1e-12);
        }

        #[test]
        fn level_is_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(density_level(lo).unwrap() <= density_level(hi).unwrap());
        }
    }
}
