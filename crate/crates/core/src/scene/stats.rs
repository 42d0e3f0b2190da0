//! Dataset statistics over occluded records.
//!
//! Bin edges:
//! - occlusion percentage: ten uniform bins `[0.0,0.1) … [0.9,1.0]`
//! - occluder count: `1, 2, 3, 4, ≥5`
//! - amodal resolution (largest bbox side): `[2^k, 2^(k+1))` for
//!   `k = 0..=10`, plus a last bin for `≥ 2048`

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetError, Manifest, ManifestRecord, MetaJson};

pub const OCCLUDER_COUNT_LABELS: [&str; 5] = ["1", "2", "3", "4", ">=5"];
pub const RESOLUTION_BINS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub records: u64,
    pub occlusion_pct_histogram: [u64; 10],
    pub occluder_count_histogram: [u64; 5],
    pub amodal_resolution_histogram: [u64; RESOLUTION_BINS],
}

impl Default for DatasetStats {
    fn default() -> Self {
        Self { records: 0, occlusion_pct_histogram: [0; 10], occluder_count_histogram: [0; 5], amodal_resolution_histogram: [0; RESOLUTION_BINS] }
    }
}

impl DatasetStats {
    /// Adds one occluded instance. Integer areas keep bin assignment exact.
    pub fn add(&mut self, hidden_area: u64, amodal_area: u64, occluders: usize, amodal_side: u32) {
        self.records += 1;
        let pct_bin = if amodal_area == 0 { 9 } else { ((10 * hidden_area) / amodal_area).min(9) as usize };
        self.occlusion_pct_histogram[pct_bin] += 1;
        self.occluder_count_histogram[occluders.clamp(1, 5) - 1] += 1;
        let res_bin = if amodal_side == 0 { 0 } else { (31 - amodal_side.leading_zeros()) as usize };
        self.amodal_resolution_histogram[res_bin.min(RESOLUTION_BINS - 1)] += 1;
    }
}

/// Histograms from the manifest fields.
pub fn statistics(manifest: &Manifest) -> DatasetStats {
    let mut s = DatasetStats::default();
    for r in manifest.occluded() {
        s.add(r.hidden_area, r.amodal_area, r.occluder_ids.len(), r.amodal_side);
    }
    s
}

/// Same histograms recomputed from the mask files and meta.json of every
/// occluded record, ignoring the manifest's cached numbers.
pub fn statistics_from_files(manifest: &Manifest) -> Result<DatasetStats, DatasetError> {
    let mut s = DatasetStats::default();
    for r in manifest.occluded() {
        let (hidden, total, side, occluders) = recount(manifest, r)?;
        s.add(hidden, total, occluders, side);
    }
    Ok(s)
}

fn recount(manifest: &Manifest, r: &ManifestRecord) -> Result<(u64, u64, u32, usize), DatasetError> {
    let modal = manifest.load_modal(r)?;
    let amodal = manifest.load_amodal(r)?.alpha_mask();
    let meta_file = r.meta.as_ref().ok_or_else(|| DatasetError::NoPair(r.id.clone()))?;
    let meta_path = manifest.path_of(meta_file);
    let bytes = std::fs::read(&meta_path).map_err(|source| DatasetError::Io { path: meta_path.clone(), source })?;
    let meta: MetaJson = serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json { path: meta_path, source })?;
    let hidden = amodal.difference(&modal).map_err(DatasetError::Mask)?.area() as u64;
    let side = amodal.bbox().map_or(0, |b| b.max_side());
    Ok((hidden, amodal.area() as u64, side, meta.occluder_ids.len()))
}
