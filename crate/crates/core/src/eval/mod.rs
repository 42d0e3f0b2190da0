//! Evaluation: best-of-k mIoU, occlusion-bin breakdown and a Fréchet
//! distance over hand-crafted features (reported as `fid_proxy`, not
//! comparable with Inception-based FID).
//!
//! Best-of-k picks the variation with the highest IoU against ground truth,
//! which makes it an evaluation protocol rather than a model capability.

mod features;
mod frechet;

pub use features::{extract_features, FeatureExtractor, HandcraftedFeatures, FEATURE_VERSION, FEATURE_WIDTH};
pub use frechet::{frechet, frechet_from_moments, moments, FrechetError, FrechetInputs, SHRINKAGE};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mask::{iou, BinaryMask, MaskError, RgbaImage};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    Empty,
    #[error("record {id:?} has {have} variations, best-of-{k} needs {k}")]
    TooFewVariations { id: String, have: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("occlusion percentage {0} outside [0, 1]")]
    Pct(f64),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Frechet(#[from] FrechetError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Bin edges; the last bin is closed at 1.0.
pub const OCCLUSION_BINS: [(f64, f64); 4] = [(0.0, 0.1), (0.1, 0.5), (0.5, 0.9), (0.9, 1.0)];
pub const BIN_LABELS: [&str; 4] = ["0-10%", "10-50%", "50-90%", "90-100%"];
pub const DEFAULT_KS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(skip)]
    pub predicted_variations: Vec<BinaryMask>,
    #[serde(skip)]
    pub gt_amodal: BinaryMask,
    pub occlusion_pct: f64,
    pub per_variation_iou: Vec<f64>,
}

impl EvalRecord {
    pub fn new(id: impl Into<String>, predicted_variations: Vec<BinaryMask>, gt_amodal: BinaryMask, occlusion_pct: f64) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&occlusion_pct) {
            return Err(EvalError::Pct(occlusion_pct));
        }
        let per_variation_iou = predicted_variations.iter().map(|p| iou(p, &gt_amodal)).collect::<Result<_, _>>()?;
        Ok(Self { id: id.into(), predicted_variations, gt_amodal, occlusion_pct, per_variation_iou })
    }

    /// Highest IoU among the first `k` variations.
    pub fn best_of(&self, k: usize) -> Result<f64, EvalError> {
        if k == 0 {
            return Err(EvalError::ZeroK);
        }
        if self.per_variation_iou.len() < k {
            return Err(EvalError::TooFewVariations { id: self.id.clone(), have: self.per_variation_iou.len(), k });
        }
        Ok(self.per_variation_iou[..k].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Scores records in parallel; output order follows input order.
pub fn score_records(inputs: Vec<(String, Vec<BinaryMask>, BinaryMask, f64)>) -> Result<Vec<EvalRecord>, EvalError> {
    inputs.into_par_iter().map(|(id, preds, gt, pct)| EvalRecord::new(id, preds, gt, pct)).collect()
}

/// Mean over records of the best IoU among each record's first `k`.
pub fn miou(records: &[EvalRecord], k: usize) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let best: Vec<f64> = records.iter().map(|r| r.best_of(k)).collect::<Result<_, _>>()?;
    Ok(best.iter().sum::<f64>() / best.len() as f64)
}

pub fn bin_index(pct: f64) -> usize {
    OCCLUSION_BINS.iter().position(|&(lo, hi)| pct >= lo && pct < hi).unwrap_or(OCCLUSION_BINS.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub miou: f64,
}

/// Per-bin best-of-k mIoU; empty bins are left out.
pub fn bin_by_occlusion(records: &[EvalRecord], k: usize) -> Result<Vec<BinResult>, EvalError> {
    let mut groups: [Vec<EvalRecord>; 4] = Default::default();
    for r in records {
        if !(0.0..=1.0).contains(&r.occlusion_pct) {
            return Err(EvalError::Pct(r.occlusion_pct));
        }
        groups[bin_index(r.occlusion_pct)].push(r.clone());
    }
    let mut out = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        let (lo, hi) = OCCLUSION_BINS[i];
        out.push(BinResult { label: BIN_LABELS[i].into(), lo, hi, count: g.len(), miou: miou(g, k)? });
    }
    Ok(out)
}

/// Squared Fréchet distance between features of two image sets. Images
/// with empty alpha are skipped.
pub fn fid_proxy(extractor: &dyn FeatureExtractor, a: &[RgbaImage], b: &[RgbaImage]) -> Result<f64, EvalError> {
    let feats = |set: &[RgbaImage]| -> Vec<Vec<f64>> { set.par_iter().filter_map(|i| extractor.extract(i)).collect() };
    Ok(frechet(&FrechetInputs { features_a: feats(a), features_b: feats(b) })?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    /// Largest k of the curve.
    pub k: usize,
    pub miou: f64,
    pub best_of_k: Vec<(usize, f64)>,
    pub bins: Vec<BinResult>,
    pub fid_proxy: Option<f64>,
    pub feature_version: u32,
}

impl EvalReport {
    pub fn build(records: &[EvalRecord], ks: &[usize], fid_proxy: Option<f64>) -> Result<Self, EvalError> {
        let k = *ks.iter().max().ok_or(EvalError::ZeroK)?;
        let best_of_k = ks.iter().map(|&k| miou(records, k).map(|m| (k, m))).collect::<Result<_, _>>()?;
        Ok(Self { records: records.len(), k, miou: miou(records, k)?, best_of_k, bins: bin_by_occlusion(records, k)?, fid_proxy, feature_version: FEATURE_VERSION })
    }

    pub fn curve_non_decreasing(&self) -> bool {
        let mut c = self.best_of_k.clone();
        c.sort_by_key(|p| p.0);
        c.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,key,count,value\n");
        s += &format!("miou,best_of_{},{},{}\n", self.k, self.records, self.miou);
        for (k, m) in &self.best_of_k {
            s += &format!("best_of_k,{k},{},{m}\n", self.records);
        }
        for b in &self.bins {
            s += &format!("bin_miou,{},{},{}\n", b.label, b.count, b.miou);
        }
        if let Some(f) = self.fid_proxy {
            s += &format!("fid_proxy,v{},{},{f}\n", self.feature_version, self.records);
        }
        s
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let j = dir.join("report.json");
        let mut f = std::fs::File::create(&j).map_err(io(&j))?;
        f.write_all(serde_json::to_string_pretty(self).expect("report serializes").as_bytes()).map_err(io(&j))?;
        let c = dir.join("report.csv");
        std::fs::write(&c, self.to_csv()).map_err(io(&c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(ious: &[f64], pct: f64) -> EvalRecord {
        EvalRecord { id: "r".into(), predicted_variations: vec![], gt_amodal: BinaryMask::empty(1, 1), occlusion_pct: pct, per_variation_iou: ious.to_vec() }
    }

    #[test]
    fn exact_prediction_scores_one() {
        let gt = BinaryMask::rect(8, 8, 1, 1, 5, 6);
        let r = EvalRecord::new("a", vec![gt.clone()], gt, 0.2).unwrap();
        assert_eq!(miou(&[r], 1).unwrap(), 1.0);
    }

    #[test]
    fn best_of_three_picks_max() {
        assert_eq!(miou(&[rec(&[0.3, 0.8, 0.5], 0.2)], 3).unwrap(), 0.8);
        assert!(matches!(miou(&[rec(&[0.3], 0.2)], 2), Err(EvalError::TooFewVariations { .. })));
        assert!(matches!(miou(&[], 1), Err(EvalError::Empty)));
    }

    #[test]
    fn iou_computed_from_masks() {
        let gt = BinaryMask::rect(4, 4, 0, 0, 4, 2);
        let half = BinaryMask::rect(4, 4, 0, 0, 4, 1);
        let r = EvalRecord::new("a", vec![half, BinaryMask::empty(4, 4)], gt, 0.5).unwrap();
        assert_eq!(r.per_variation_iou, vec![0.5, 0.0]);
    }

    #[test]
    fn bins_half_open() {
        let rs = vec![rec(&[0.9], 0.05), rec(&[0.7], 0.05)];
        let b = bin_by_occlusion(&rs, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].label, "0-10%");
        assert_eq!(bin_index(0.1), 1);
        assert_eq!(bin_index(0.5), 2);
        assert_eq!(bin_index(0.9), 3);
        assert_eq!(bin_index(1.0), 3);
        assert_eq!(bin_index(0.0999), 0);
    }

    #[test]
    fn report_csv_and_json() {
        let rs = vec![rec(&[0.1, 0.5, 0.2, 0.9], 0.3), rec(&[0.6, 0.4, 0.7, 0.8], 0.95)];
        let r = EvalReport::build(&rs, &[1, 2, 4], Some(0.25)).unwrap();
        assert!(r.curve_non_decreasing());
        for ((k, m), (ek, em)) in r.best_of_k.iter().zip([(1, 0.35), (2, 0.55), (4, 0.85)]) {
            assert_eq!(*k, ek);
            assert!((m - em).abs() < 1e-12);
        }
        let csv = r.to_csv();
        assert!(csv.contains("fid_proxy,v1,2,0.25"));
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let back: EvalReport = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    fn records() -> impl Strategy<Value = Vec<EvalRecord>> {
        prop::collection::vec((prop::collection::vec(0.0f64..=1.0, 8), 0.0f64..=1.0), 1..40).prop_map(|v| v.into_iter().map(|(i, p)| rec(&i, p)).collect())
    }

    proptest! {
        #[test]
        fn miou_monotone_in_k(rs in records()) {
            for k in 1..8 {
                prop_assert!(miou(&rs, k).unwrap() <= miou(&rs, k + 1).unwrap());
            }
        }

        #[test]
        fn bins_recombine_to_overall(rs in records(), k in 1usize..=8) {
            let bins = bin_by_occlusion(&rs, k).unwrap();
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), rs.len());
            let recombined = bins.iter().map(|b| b.miou * b.count as f64).sum::<f64>() / rs.len() as f64;
            prop_assert!((recombined - miou(&rs, k).unwrap()).abs() < 1e-12);
        }
    }
}
