//! Self-supervised training samples for one partial completion step.
//!
//! A visible instance `m_n` in image `x` is hidden further by a generated
//! occluder. The generated mask is first reduced by the instance's existing
//! occluders, so the synthetic occluder always sits *behind* them in depth
//! and never hides part of a real occluder. Without that reduction the
//! label can claim a shape is complete where the truth is that it continues
//! behind an existing occluder.

use rand::Rng;

use super::EngineError;
use crate::graph::OcclusionGraph;
use crate::mask::{apply_mask, BinaryMask, RgbaImage};
use crate::scene::LayeredScene;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `g_n = (x∘m_n)∥m_n`, the label.
    pub target: RgbaImage,
    /// `g_{n+1} = (x∘m_{n+1})∥m_{n+1}`.
    pub input: RgbaImage,
    pub occluder: BinaryMask,
    pub deoccluded: BinaryMask,
    pub background: RgbaImage,
    /// `m_{n+1}`.
    pub instance: BinaryMask,
    /// The occluder swallowed the whole instance.
    pub fully_occluded: bool,
}

impl TrainingSample {
    /// Every disjointness rule a sample must satisfy; empty when valid.
    pub fn violations(&self, existing: &[BinaryMask]) -> Vec<String> {
        let mut out = Vec::new();
        let (w, h) = self.instance.dims();
        let mut check = |name: &str, ok: Result<bool, crate::mask::MaskError>| {
            if !ok.unwrap_or(false) {
                out.push(name.to_string());
            }
        };
        let union = BinaryMask::union_all(existing, w, h);
        check("occluder ∩ existing", union.and_then(|u| self.occluder.is_disjoint(&u)));
        check("instance ∩ occluder", self.instance.is_disjoint(&self.occluder));
        check("deoccluded ∩ occluder", self.deoccluded.is_disjoint(&self.occluder));
        let busy = self.instance.union(&self.occluder).and_then(|m| m.union(&self.deoccluded));
        check("background ∩ (instance ∪ occluder ∪ deoccluded)", busy.and_then(|m| self.background.alpha_mask().is_disjoint(&m)));
        check("input = target ∘ instance", apply_mask(&self.target, &self.instance).map(|g| g == self.input));
        check("fully occluded flag", Ok(self.fully_occluded == self.instance.is_empty()));
        out
    }
}

fn check_dims(x: &RgbaImage, masks: &[&BinaryMask]) -> Result<(), EngineError> {
    for m in masks {
        x.check_mask_dims(m)?;
    }
    Ok(())
}

/// Builds one sample. `candidates` are the visible non-occludee regions the
/// deoccluded mask is drawn from; each is kept with probability one half.
pub fn construct_sample<R: Rng>(
    x: &RgbaImage,
    instance: &BinaryMask,
    existing_occluders: &[BinaryMask],
    generated: &BinaryMask,
    candidates: &[BinaryMask],
    rng: &mut R,
) -> Result<TrainingSample, EngineError> {
    construct(x, instance, existing_occluders, generated, candidates, true, rng)
}

/// The generated occluders act as one occluder: their union.
pub fn construct_sample_multi<R: Rng>(
    x: &RgbaImage,
    instance: &BinaryMask,
    existing_occluders: &[BinaryMask],
    generated: &[BinaryMask],
    candidates: &[BinaryMask],
    k_max: usize,
    rng: &mut R,
) -> Result<TrainingSample, EngineError> {
    if generated.is_empty() || generated.len() > k_max {
        return Err(EngineError::InvalidArgument(format!("{} generated occluders, expected 1..={k_max}", generated.len())));
    }
    check_dims(x, &generated.iter().collect::<Vec<_>>())?;
    let union = BinaryMask::union_all(generated, x.width(), x.height())?;
    construct(x, instance, existing_occluders, &union, candidates, true, rng)
}

/// The unsafe variant that does not reduce the generated mask by the
/// existing occluders. Kept for the regression comparison only.
pub fn construct_sample_naive<R: Rng>(
    x: &RgbaImage,
    instance: &BinaryMask,
    existing_occluders: &[BinaryMask],
    generated: &BinaryMask,
    candidates: &[BinaryMask],
    rng: &mut R,
) -> Result<TrainingSample, EngineError> {
    construct(x, instance, existing_occluders, generated, candidates, false, rng)
}

fn construct<R: Rng>(
    x: &RgbaImage,
    instance: &BinaryMask,
    existing: &[BinaryMask],
    generated: &BinaryMask,
    candidates: &[BinaryMask],
    order_grounded: bool,
    rng: &mut R,
) -> Result<TrainingSample, EngineError> {
    check_dims(x, &[instance, generated])?;
    check_dims(x, &existing.iter().chain(candidates).collect::<Vec<_>>())?;
    if instance.is_empty() {
        return Err(EngineError::InvalidArgument("instance mask is empty".into()));
    }
    let (w, h) = x.dims();
    let occluder = if order_grounded { generated.difference(&BinaryMask::union_all(existing, w, h)?)? } else { generated.clone() };
    let reduced = instance.difference(&occluder)?;
    let mut picked = BinaryMask::empty(w, h);
    for c in candidates {
        if rng.random_bool(0.5) {
            picked.union_with(c)?;
        }
    }
    let deoccluded = picked.difference(&occluder)?;
    let keep = deoccluded.union(&occluder)?.union(&reduced)?.complement();
    Ok(TrainingSample {
        target: apply_mask(x, instance)?,
        input: apply_mask(x, &reduced)?,
        background: apply_mask(x, &keep)?,
        fully_occluded: reduced.is_empty(),
        instance: reduced,
        occluder,
        deoccluded,
    })
}

/// Label pixels inside the presented occluder that the truth says belong to
/// the instance but are hidden by an existing occluder: the sample teaches
/// "nothing here" where the shape actually continues.
pub fn contaminated_pixels(sample: &TrainingSample, existing: &[BinaryMask], true_amodal: &BinaryMask) -> Result<usize, EngineError> {
    let (w, h) = sample.instance.dims();
    let hidden = BinaryMask::union_all(existing, w, h)?;
    Ok(sample.occluder.intersect(&hidden)?.intersection_area(true_amodal)?)
}

/// Other instances' visible masks plus the 4-connected pieces of the
/// background left once every instance is removed.
pub fn candidate_regions(others: &[BinaryMask], instance: &BinaryMask) -> Result<Vec<BinaryMask>, EngineError> {
    let (w, h) = instance.dims();
    let occupied = BinaryMask::union_all(others, w, h)?.union(instance)?;
    let mut out: Vec<BinaryMask> = others.iter().filter(|m| !m.is_empty()).cloned().collect();
    out.extend(occupied.complement().connected_components());
    Ok(out)
}

/// Draws a generated occluder: a mask from `pool` (typically instance masks
/// of other scenes) cropped to its box, rescaled by a factor in
/// `[0.5, 1.5]` and centered at a uniform random pixel.
pub fn sample_generated<R: Rng>(pool: &[BinaryMask], width: u32, height: u32, rng: &mut R) -> Result<BinaryMask, EngineError> {
    let usable: Vec<&BinaryMask> = pool.iter().filter(|m| !m.is_empty()).collect();
    if usable.is_empty() {
        return Err(EngineError::InvalidArgument("no nonempty mask to draw occluders from".into()));
    }
    let src = usable[rng.random_range(0..usable.len())];
    let bb = src.bbox().expect("nonempty");
    let cropped = BinaryMask::from_fn(bb.width(), bb.height(), |x, y| src.get(bb.x0 + x, bb.y0 + y));
    let scale = rng.random_range(0.5..=1.5);
    let (cx, cy) = (rng.random_range(0..width) as f64 + 0.5, rng.random_range(0..height) as f64 + 0.5);
    let dx = (cx - scale * bb.width() as f64 / 2.0).round() as i64;
    let dy = (cy - scale * bb.height() as f64 / 2.0).round() as i64;
    Ok(cropped.scaled_placed(scale, dx, dy, width, height))
}

/// Everything a scene offers for sample construction about one instance.
#[derive(Debug, Clone)]
pub struct SampleSource {
    pub id: String,
    pub image: RgbaImage,
    pub instance: BinaryMask,
    pub existing_occluders: Vec<BinaryMask>,
    pub candidates: Vec<BinaryMask>,
    pub true_amodal: BinaryMask,
}

/// One source per visible instance of `scene`, with occluders taken from
/// the derived occlusion graph.
pub fn sources_from_scene(scene: &LayeredScene, graph: &OcclusionGraph) -> Result<Vec<SampleSource>, EngineError> {
    let image = scene.composite();
    let modals = scene.modal_masks();
    let mut out = Vec::new();
    for (i, layer) in scene.layers.iter().enumerate() {
        if modals[i].is_empty() {
            continue;
        }
        let id = scene.instance_id(i);
        let existing = graph.occluder_masks(&id)?;
        let others: Vec<BinaryMask> = modals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| m.clone()).collect();
        out.push(SampleSource {
            id,
            image: image.clone(),
            candidates: candidate_regions(&others, &modals[i])?,
            instance: modals[i].clone(),
            existing_occluders: existing,
            true_amodal: layer.amodal.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_sample_is_noop() {
        let x = RgbaImage::filled(6, 6, [5, 6, 7, 255]);
        let inst = BinaryMask::rect(6, 6, 1, 1, 3, 3);
        let gen = BinaryMask::rect(6, 6, 4, 4, 6, 6);
        let s = construct_sample(&x, &inst, &[], &gen, &[], &mut rng(0)).unwrap();
        assert_eq!(s.instance, inst);
        assert_eq!(s.input, s.target);
        assert!(s.violations(&[]).is_empty());
    }

    #[test]
    fn reduced_by_existing_occluder() {
        // instance rows 2–5, cols 2–5; B covers cols 4–5; C is column 3
        let x = RgbaImage::filled(8, 8, [1, 1, 1, 255]);
        let modal = BinaryMask::rect(8, 8, 2, 2, 4, 6);
        let b = BinaryMask::rect(8, 8, 4, 2, 6, 6);
        let c = BinaryMask::rect(8, 8, 3, 0, 4, 8);
        let s = construct_sample(&x, &modal, std::slice::from_ref(&b), &c, &[], &mut rng(1)).unwrap();
        assert_eq!(s.occluder, c);
        assert_eq!(s.occluder.area(), 8);
        assert!(s.occluder.is_disjoint(&b).unwrap());
        assert_eq!(s.instance, BinaryMask::rect(8, 8, 2, 2, 3, 6));
        assert_eq!(s.instance.area(), 4);

        // a generated mask spanning B gets cut back to the part outside B
        let wide = BinaryMask::rect(8, 8, 3, 2, 6, 6);
        let s = construct_sample(&x, &modal, std::slice::from_ref(&b), &wide, &[], &mut rng(1)).unwrap();
        assert_eq!(s.occluder, BinaryMask::rect(8, 8, 3, 2, 4, 6));
        let truth = BinaryMask::rect(8, 8, 2, 2, 6, 6);
        assert_eq!(contaminated_pixels(&s, &[b.clone()], &truth).unwrap(), 0);
        let n = construct_sample_naive(&x, &modal, std::slice::from_ref(&b), &wide, &[], &mut rng(1)).unwrap();
        assert_eq!(contaminated_pixels(&n, &[b], &truth).unwrap(), 8);
    }

    #[test]
    fn multi_reductions() {
        let x = RgbaImage::filled(8, 8, [1, 1, 1, 255]);
        let inst = BinaryMask::rect(8, 8, 0, 0, 8, 8);
        let existing = [BinaryMask::rect(8, 8, 0, 0, 1, 8)];
        let g1 = BinaryMask::rect(8, 8, 0, 0, 4, 2);
        let g2 = BinaryMask::rect(8, 8, 4, 6, 8, 8);
        let one = construct_sample_multi(&x, &inst, &existing, std::slice::from_ref(&g1), &[], 3, &mut rng(2)).unwrap();
        assert_eq!(one, construct_sample(&x, &inst, &existing, &g1, &[], &mut rng(2)).unwrap());
        let two = construct_sample_multi(&x, &inst, &existing, &[g1.clone(), g2.clone()], &[], 3, &mut rng(2)).unwrap();
        assert_eq!(two.occluder, g1.union(&g2).unwrap().difference(&existing[0]).unwrap());
        let cover = [BinaryMask::rect(8, 8, 0, 0, 8, 4), BinaryMask::rect(8, 8, 0, 4, 8, 8)];
        let full = construct_sample_multi(&x, &BinaryMask::rect(8, 8, 2, 2, 6, 6), &[], &cover, &[], 3, &mut rng(3)).unwrap();
        assert!(full.fully_occluded && full.instance.is_empty());
        assert!(construct_sample_multi(&x, &inst, &[], &cover, &[], 1, &mut rng(3)).is_err());
        assert!(construct_sample_multi(&x, &inst, &[], &[], &[], 1, &mut rng(3)).is_err());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let x = RgbaImage::filled(8, 8, [1, 1, 1, 255]);
        let bad = BinaryMask::rect(7, 8, 0, 0, 1, 1);
        let inst = BinaryMask::rect(8, 8, 0, 0, 2, 2);
        assert!(matches!(construct_sample(&x, &inst, &[], &bad, &[], &mut rng(0)), Err(EngineError::Mask(_))));
        assert!(construct_sample(&x, &inst, &[bad], &inst, &[], &mut rng(0)).is_err());
    }

    #[test]
    fn candidates_cover_everything_else() {
        let inst = BinaryMask::rect(6, 6, 0, 0, 2, 6);
        let other = BinaryMask::rect(6, 6, 3, 0, 4, 6);
        let c = candidate_regions(std::slice::from_ref(&other), &inst).unwrap();
        // the other instance plus two background strips
        assert_eq!(c.len(), 3);
        let all = BinaryMask::union_all(&c, 6, 6).unwrap().union(&inst).unwrap();
        assert_eq!(all, BinaryMask::full(6, 6));
    }

    proptest! {
        #[test]
        fn generated_masks_stay_on_canvas(seed in any::<u64>()) {
            let pool = [BinaryMask::rect(20, 20, 5, 5, 12, 9)];
            let m = sample_generated(&pool, 16, 12, &mut rng(seed)).unwrap();
            prop_assert_eq!(m.dims(), (16, 12));
            prop_assert!(m.area() <= 11 * 6 + 20);
        }

        #[test]
        fn invariants_hold(seed in any::<u64>(), k in 1usize..4) {
            let cfg = crate::scene::SceneConfig::toy();
            let scene = crate::scene::sample_scene(&cfg, seed).unwrap();
            let graph = crate::scene::derive_graph(&scene);
            let pool: Vec<BinaryMask> = scene.layers.iter().map(|l| l.amodal.clone()).collect();
            let mut r = rng(seed);
            for src in sources_from_scene(&scene, &graph).unwrap() {
                let gens: Vec<BinaryMask> = (0..k).map(|_| sample_generated(&pool, 32, 32, &mut r).unwrap()).collect();
                let s = construct_sample_multi(&src.image, &src.instance, &src.existing_occluders, &gens, &src.candidates, 3, &mut r).unwrap();
                prop_assert!(s.violations(&src.existing_occluders).is_empty(), "{:?}", s.violations(&src.existing_occluders));
                prop_assert_eq!(contaminated_pixels(&s, &src.existing_occluders, &src.true_amodal).unwrap(), 0);
            }
        }
    }
}
