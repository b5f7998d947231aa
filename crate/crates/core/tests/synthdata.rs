use regforge::error::Error;
use regforge::imgcore::{sample_nearest, warp, warp_mask, Interp, Mask2D};
use regforge::metrics::dice_coefficient;
use regforge::synthdata::*;
use regforge::transform::{RandomTransformSpec, Transform2D};

fn aligned(seed: u64) -> PhantomSpec {
    PhantomSpec { misalignment: RandomTransformSpec::zero(), seed, ..Default::default() }
}

#[test]
fn default_misalignment_is_calibrated() {
    let cohort = generate_cohort_samples(100, &PhantomSpec::default(), 1).unwrap();
    let (mut dice, mut mle) = (0.0, 0.0);
    for p in &cohort {
        let (d, l) = p.input_metrics().unwrap();
        dice += d / 100.0;
        mle += l / 100.0;
    }
    assert!((0.78..=0.84).contains(&dice), "mean input dice {dice}");
    assert!((3.5..=5.5).contains(&mle), "mean input landmark error {mle}");
}

#[test]
fn zero_misalignment_overlaps_exactly() {
    for seed in 0..5 {
        let p = generate_phantom(&aligned(seed)).unwrap();
        let (d, l) = p.input_metrics().unwrap();
        assert_eq!(d, 1.0);
        assert!(l < 1e-12);
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = PhantomSpec { seed: 17, ..Default::default() };
    let a = generate_phantom(&spec).unwrap();
    let b = generate_phantom(&spec).unwrap();
    assert_eq!(a.raw, b.raw);
    assert_eq!(a.gt, b.gt);
    let c = generate_phantom(&PhantomSpec { seed: 18, ..spec }).unwrap();
    assert_ne!(a.raw.fixed, c.raw.fixed);
}

#[test]
fn ground_truth_relates_the_two_sides() {
    for seed in 0..6 {
        let p = generate_phantom(&PhantomSpec { seed, ..Default::default() }).unwrap();
        let s = &p.sample;
        let (lf, lm) = (s.landmarks_f.as_ref().unwrap(), s.landmarks_m.as_ref().unwrap());
        assert!(lf.len() >= 4);
        for (a, b) in lf.points().iter().zip(lm.points()) {
            assert!(p.gt.apply(*a).dist(*b) < 1e-6);
        }
        // pulling the moving mask back through the ground truth recovers the fixed mask
        let (sf, sm) = s.masks().unwrap();
        let back = warp_mask(sm, &p.gt, sf.grid(), Interp::Nearest).unwrap();
        assert!(dice_coefficient(sf, &back).unwrap() > 0.95);
        // structures are bright in histology at the moving landmarks
        let mean: f64 = lm
            .points()
            .iter()
            .map(|q| sample_nearest(p.raw.moving.grid(), *q).map_or(0.0, |k| p.raw.moving.data()[k]))
            .sum::<f64>()
            / lm.len() as f64;
        assert!(mean > 0.88, "landmark intensity {mean}");
    }
}

#[test]
fn modalities_differ_inside_the_gland() {
    let p = generate_phantom(&PhantomSpec { seed: 3, ..Default::default() }).unwrap();
    let s = &p.sample;
    let (sf, _) = s.masks().unwrap();
    let back = warp(&s.i_m, &p.gt, s.i_f.grid(), Interp::Bilinear);
    let (mut gap, mut n) = (0.0, 0.0);
    for (k, inside) in sf.data().iter().enumerate() {
        if *inside != 0 {
            gap += (s.i_f.data()[k] - back.data()[k]).abs();
            n += 1.0;
        }
    }
    assert!(gap / n > 0.2, "mean intensity gap {}", gap / n);
}

fn components(m: &Mask2D<f64>) -> usize {
    let g = m.grid();
    let mut seen = vec![false; g.len()];
    let mut count = 0;
    for start in 0..g.len() {
        if m.data()[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            let (i, j) = (k % g.width, k / g.width);
            let mut push = |ii: usize, jj: usize| {
                let n = g.index(ii, jj);
                if m.data()[n] != 0 && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                push(i - 1, j);
            }
            if i + 1 < g.width {
                push(i + 1, j);
            }
            if j > 0 {
                push(i, j - 1);
            }
            if j + 1 < g.height {
                push(i, j + 1);
            }
        }
    }
    count
}

#[test]
fn masks_are_single_glands_containing_the_urethra() {
    for seed in 0..10 {
        let p = generate_phantom(&PhantomSpec { seed, ..Default::default() }).unwrap();
        let s = &p.sample;
        let (sf, sm) = s.masks().unwrap();
        assert_eq!(components(sf), 1);
        assert_eq!(components(sm), 1);
        let u = s.urethra_f.unwrap();
        let k = sample_nearest(sf.grid(), u).unwrap();
        assert_eq!(sf.data()[k], 1);
        let cancer = s.cancer_label_m.as_ref().unwrap();
        assert!(cancer.count() > 0);
        assert!(cancer.data().iter().zip(sm.data()).all(|(c, g)| *c == 0 || *g == 1));
    }
}

#[test]
fn cohort_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec::default();
    let m = generate_cohort(2, &spec, 5, dir.path()).unwrap();
    assert_eq!(m.n, 2);
    let cases = cohort_case_dirs(dir.path()).unwrap();
    assert_eq!(cases.iter().map(|c| c.0.as_str()).collect::<Vec<_>>(), vec!["case_000", "case_001"]);
    for (_, case) in &cases {
        for f in [FIXED_PNG, "fixed.json", MOVING_PNG, "moving.json", FIXED_MASK_PNG, MOVING_MASK_PNG, CANCER_LABEL_PNG, LANDMARKS_JSON, MANIFEST_JSON] {
            assert!(case.join(f).is_file(), "{f}");
        }
    }
    let full = load_case(&cases[0].1, spec.window_mm, LoadOptions::ALL).unwrap();
    assert!(full.s_f.is_some() && full.landmarks_f.is_some() && full.cancer_label_m.is_some());
    assert_eq!(full.i_f.grid(), &spec.window_grid().unwrap());
    let bare = load_case(&cases[0].1, spec.window_mm, LoadOptions::IMAGES_ONLY).unwrap();
    assert!(bare.s_f.is_none() && bare.s_m.is_none() && bare.landmarks_f.is_none());

    // regenerating from the recorded per-case seed is bit-exact
    let regen = generate_phantom(&m.cases[1].spec).unwrap();
    let direct = &generate_cohort_samples(2, &spec, 5).unwrap()[1];
    assert_eq!(regen.raw, direct.raw);
    let gt: Transform2D<f64> = m.cases[1].gt_transform.to_transform().unwrap();
    assert_eq!(gt, direct.gt);

    std::fs::remove_file(dir.path().join(MANIFEST_JSON)).unwrap();
    assert_eq!(cohort_case_dirs(dir.path()).unwrap(), cases);
}

#[test]
fn empty_cohort_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(generate_cohort(0, &PhantomSpec::default(), 1, dir.path()), Err(Error::EmptyDataset)));
}
