use agse_core::data::{
    extract_patches, generate_phantom, normalize, stitch_patches, Modality, PatchSpec, SegVolume, CHANNEL_LABELS,
};
use agse_core::losses::{dice_loss, ClassWeights};
use agse_core::metrics::{confusion, derive_regions, hausdorff100, hausdorff95, metric, MetricKind, Region, RegionMask};
use agse_core::{Rng, Shape5, Tensor5};
use proptest::prelude::*;

fn random_labels(shape: [usize; 3], seed: u64) -> SegVolume {
    let mut rng = Rng::new(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| CHANNEL_LABELS[rng.below(4)])
        .collect();
    SegVolume::new(shape, data).unwrap()
}

fn random_mask(shape: [usize; 3], density: f64, seed: u64) -> RegionMask {
    let mut rng = Rng::new(seed);
    let m = (0..shape.iter().product::<usize>()).map(|_| rng.uniform() < density).collect();
    RegionMask::new(Region::WT, shape, m).unwrap()
}

fn bits(t: &Tensor5) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalize_is_idempotent(seed in any::<u64>(), zero_frac in 0.0f64..0.8, scale in 0.01f64..100.0) {
        let mut rng = Rng::new(seed);
        let x = Tensor5::from_fn(Shape5::new(1, 5, 6, 7, 1), |_, _, _, _, _| {
            if rng.uniform() < zero_frac { 0.0 } else { scale * rng.uniform_range(-3.0, 5.0) }
        });
        let once = normalize(&x);
        let twice = normalize(&once);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn tiled_patches_invert_exactly(seed in any::<u64>(), z in 1usize..40, h in 1usize..40, w in 1usize..24, c in 1usize..4) {
        let x = Tensor5::normal(Shape5::new(1, z, h, w, c), 1.0, &mut Rng::new(seed));
        let spec = PatchSpec::tiled([16, 16, 16]).unwrap();
        let patches: Vec<Tensor5> = extract_patches(&x, None, &spec).unwrap().into_iter().map(|p| p.image).collect();
        prop_assert_eq!(patches.len(), z.div_ceil(16) * h.div_ceil(16) * w.div_ceil(16));
        let back = stitch_patches(&patches, x.shape(), &spec).unwrap();
        prop_assert_eq!(bits(&back), bits(&x));
    }

    #[test]
    fn overlapping_stitch_matches_scalar_oracle(seed in any::<u64>(), z in 16usize..30, sz in 1usize..16, sh in 4usize..16) {
        let shape = Shape5::new(1, z, 20, 17, 2);
        let spec = PatchSpec::new([16, 16, 16], [sz, sh, 16]).unwrap();
        let origins = spec.origins(shape.spatial());
        let mut rng = Rng::new(seed);
        let patches: Vec<Tensor5> = origins
            .iter()
            .map(|_| Tensor5::normal(Shape5::new(1, 16, 16, 16, 2), 1.0, &mut rng))
            .collect();
        let got = stitch_patches(&patches, shape, &spec).unwrap();
        for k in 0..shape.z {
            for i in 0..shape.h {
                for j in 0..shape.w {
                    for ch in 0..2 {
                        let (mut sum, mut n) = (0.0, 0);
                        for (o, p) in origins.iter().zip(&patches) {
                            if (o[0]..o[0] + 16).contains(&k) && (o[1]..o[1] + 16).contains(&i) && (o[2]..o[2] + 16).contains(&j) {
                                sum += p.get(0, k - o[0], i - o[1], j - o[2], ch);
                                n += 1;
                            }
                        }
                        prop_assert!((got.get(0, k, i, j, ch) - sum / n as f64).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn label_patches_are_one_hot(seed in any::<u64>(), z in 8usize..33, stride in 5usize..17) {
        let labels = random_labels([z, 18, 9], seed);
        let x = Tensor5::zeros(Shape5::new(1, z, 18, 9, 4));
        let spec = PatchSpec::new([16; 3], [stride; 3]).unwrap();
        for p in extract_patches(&x, Some(&labels), &spec).unwrap() {
            let l = p.label.unwrap();
            for row in l.data().chunks_exact(4) {
                prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                prop_assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 3);
            }
        }
    }

    #[test]
    fn regions_nest_on_random_labels(seed in any::<u64>()) {
        let [wt, tc, et] = derive_regions(&random_labels([6, 7, 8], seed));
        prop_assert!(et.is_subset_of(&tc));
        prop_assert!(tc.is_subset_of(&wt));
    }

    #[test]
    fn hausdorff_is_symmetric_and_bounded(seed in any::<u64>(), d1 in 0.02f64..0.6, d2 in 0.02f64..0.6) {
        let a = random_mask([7, 8, 6], d1, seed);
        let b = random_mask([7, 8, 6], d2, seed ^ 0x5555);
        let spacing = [1.0, 1.5, 0.7];
        let (ab, ba) = (hausdorff95(&a, &b, spacing).unwrap(), hausdorff95(&b, &a, spacing).unwrap());
        prop_assert_eq!(ab, ba);
        if let (Some(h95), Some(h100)) = (ab, hausdorff100(&a, &b, spacing).unwrap()) {
            prop_assert!(h95 <= h100);
            prop_assert!(h95 >= 0.0);
        }
        let c = confusion(&a, &b).unwrap();
        let c_rev = confusion(&b, &a).unwrap();
        prop_assert_eq!(metric(MetricKind::Dice, &c), metric(MetricKind::Dice, &c_rev));
    }

    #[test]
    fn dice_loss_is_voxel_permutation_invariant(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let shape = Shape5::new(1, 3, 4, 5, 4);
        let logits = Tensor5::normal(shape, 2.0, &mut rng);
        let p = agse_core::nn::softmax_channel(&logits).output;
        let g = random_labels([3, 4, 5], seed).one_hot();
        let mut perm: Vec<usize> = (0..shape.voxels()).collect();
        rng.shuffle(&mut perm);
        let permute = |t: &Tensor5| {
            let mut data = vec![0.0; t.data().len()];
            for (dst, &src) in perm.iter().enumerate() {
                data[dst * 4..dst * 4 + 4].copy_from_slice(&t.data()[src * 4..src * 4 + 4]);
            }
            Tensor5::from_vec(shape, data).unwrap()
        };
        let w = ClassWeights::default();
        let (a, _) = dice_loss(&p, &g, &w).unwrap();
        let (b, _) = dice_loss(&permute(&p), &permute(&g), &w).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((-1.0..=0.0).contains(&a));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn phantoms_nest_and_are_reproducible(seed in any::<u64>(), z in 16usize..24, difficulty in 0.0f64..1.0) {
        let shape = [z, 16, 20];
        let a = generate_phantom("p", &mut Rng::new(seed), shape, difficulty).unwrap();
        let b = generate_phantom("p", &mut Rng::new(seed), shape, difficulty).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        for m in Modality::ALL {
            prop_assert_eq!(bits(a.modalities[m as usize].as_ref().unwrap()), bits(b.modalities[m as usize].as_ref().unwrap()));
        }
        let [wt, tc, et] = derive_regions(a.labels.as_ref().unwrap());
        prop_assert!(et.is_subset_of(&tc));
        prop_assert!(tc.is_subset_of(&wt));
        prop_assert!(et.count() > 0);
    }
}

#[test]
fn noiseless_phantom_is_piecewise_constant_and_threshold_separable() {
    for seed in 0..5 {
        let case = generate_phantom("p", &mut Rng::new(seed), [32; 3], 0.0).unwrap();
        let labels = case.labels.as_ref().unwrap();
        // one intensity per (modality, label)
        for m in Modality::ALL {
            let vol = case.modalities[m as usize].as_ref().unwrap();
            let mut seen: std::collections::BTreeMap<u8, u64> = Default::default();
            for (v, &l) in vol.data().iter().zip(labels.data()) {
                if *v == 0.0 {
                    continue;
                }
                let prev = seen.insert(l, v.to_bits());
                assert!(prev.is_none() || prev == Some(v.to_bits()), "{m:?} label {l} is not constant");
            }
        }
        // FLAIR threshold segmenter against the true whole tumour
        let flair = case.modalities[Modality::Flair as usize].as_ref().unwrap();
        let mask: Vec<bool> = flair.data().iter().map(|&v| v > 0.5).collect();
        let pred = RegionMask::new(Region::WT, [32; 3], mask).unwrap();
        let [wt, _, _] = derive_regions(labels);
        let dice = metric(MetricKind::Dice, &confusion(&pred, &wt).unwrap()).unwrap();
        assert!(dice >= 0.99, "seed {seed}: threshold dice {dice}");
    }
}
