//! End-to-end behaviour of the cascade, the experiment harness and the synthetic corpus.

use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use irispad::bsif::FilterBank;
use irispad::classifier::{
    pair_score_2d, predict_score, train_rows, Ensemble2D, EnsembleMember, LinearModel, LossKind,
    TrainConfig,
};
use irispad::evaluation::{
    compute_report, run_experiment, score_manifest, ExperimentConfig, GroupField, Protocol,
};
use irispad::fusion::{pair_features, run_pipeline, FusionConfig};
use irispad::manifest::{split_by_pattern, split_subject_disjoint};
use irispad::photometric::{classify_3d, mean_normal, NormalMap, ThresholdModel3D};
use irispad::synthetic::{make_corpus, CorpusConfig, MANIFEST_FILE};
use irispad::{
    CapturePair, Class, Decision, Error, Label, LightingGeometry, Mask, NirImage, Source, Vec3,
};

fn small_corpus(dir: &std::path::Path) -> irispad::manifest::DatasetManifest {
    let cfg = CorpusConfig {
        flat: 10,
        bumpy: 5,
        opaque: 5,
        size: 48,
        write_truth: false,
        ..CorpusConfig::default()
    };
    make_corpus(&cfg, dir).unwrap()
}

/// A 2D ensemble that never calls an attack.
fn permissive_ensemble() -> Ensemble2D {
    let banks = FilterBank::default_multiscale();
    let members = banks
        .into_iter()
        .map(|bank| EnsembleMember {
            model: LinearModel::new(
                vec![0.0; bank.histogram_len()],
                -1.0,
                LossKind::Logistic,
                0.0,
            )
            .unwrap(),
            bank,
        })
        .collect();
    Ensemble2D::new(members, 0.0).unwrap()
}

#[test]
fn permissive_cascade_follows_the_3d_branch() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_corpus(tmp.path());
    let config = FusionConfig::new(permissive_ensemble(), ThresholdModel3D::new(0.004).unwrap());
    let lights = LightingGeometry::default();
    for e in m.entries() {
        let pair = m.load_pair(e, &lights).unwrap();
        let out = run_pipeline(&pair, &config).unwrap();
        assert_eq!(out.d2.class, Class::BonaFide);
        let q = out.q.unwrap();
        let id = e.sample_id();
        if id.starts_with("flat") {
            assert_eq!(out.fused.class, Class::BonaFide, "{id}: q = {q}");
            assert!(q < 0.004);
        } else if id.starts_with("bumpy") {
            assert_eq!(out.fused.class, Class::Attack, "{id}: q = {q}");
            assert_eq!(out.d3.unwrap().class, Class::Attack);
        }
        assert_eq!(out, run_pipeline(&pair, &config).unwrap());
    }
}

#[test]
fn all_false_masks_fall_back_to_2d() {
    let img = NirImage::filled(32, 32, 0.5).unwrap();
    let none = Mask::filled(32, 32, false).unwrap();
    let pair = CapturePair::new(
        img.clone(),
        img,
        none.clone(),
        none,
        LightingGeometry::default(),
    )
    .unwrap();
    let mut ensemble = permissive_ensemble();
    for flip in [false, true] {
        if flip {
            ensemble.decision_threshold = -5.0;
        }
        let config = FusionConfig::new(ensemble.clone(), ThresholdModel3D::new(0.004).unwrap());
        let out = run_pipeline(&pair, &config).unwrap();
        assert!(out.unscorable_3d);
        assert_eq!(out.q, None);
        assert_eq!(out.d3, None);
        assert_eq!(out.fused.class, out.d2.class);
        assert_eq!(out.fused.source, Source::Fusion);
    }
}

#[test]
fn classify_3d_batch_matches_comparison() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = ThresholdModel3D::new(0.02).unwrap();
    for _ in 0..500 {
        let q: f64 = rng.gen_range(0.0..0.04);
        let want = if q > 0.02 {
            Class::Attack
        } else {
            Class::BonaFide
        };
        assert_eq!(classify_3d(q, &model).unwrap().class, want);
    }
}

#[test]
fn mean_normal_matches_componentwise_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normals: Vec<Vec3> = (0..10)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.1..1.0),
            )
            .normalized()
        })
        .collect();
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    for n in &normals {
        sx += n.x;
        sy += n.y;
        sz += n.z;
    }
    let map = NormalMap::from_normals(normals).unwrap();
    let m = mean_normal(&map).unwrap();
    assert!((m.x - sx / 10.0).abs() < 1e-12);
    assert!((m.y - sy / 10.0).abs() < 1e-12);
    assert!((m.z - sz / 10.0).abs() < 1e-12);
}

#[test]
fn separable_2d_set_reaches_full_training_accuracy() {
    // 20 points split by the line x + 2y = 1.5 with a margin.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    while rows.len() < 20 {
        let p: [f64; 2] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let s = p[0] + 2.0 * p[1] - 1.5;
        if s.abs() < 0.15 {
            continue;
        }
        classes.push(if s > 0.0 {
            Class::Attack
        } else {
            Class::BonaFide
        });
        rows.push(p);
    }
    // Oracle: some line on a coarse grid of directions separates the set.
    let separable = (0..360).any(|deg| {
        let a = (deg as f64).to_radians();
        let proj: Vec<f64> = rows
            .iter()
            .map(|p| a.cos() * p[0] + a.sin() * p[1])
            .collect();
        let max_bf = proj
            .iter()
            .zip(&classes)
            .filter(|(_, c)| **c == Class::BonaFide)
            .map(|(v, _)| *v)
            .fold(f64::MIN, f64::max);
        let min_at = proj
            .iter()
            .zip(&classes)
            .filter(|(_, c)| **c == Class::Attack)
            .map(|(v, _)| *v)
            .fold(f64::MAX, f64::min);
        max_bf < min_at
    });
    assert!(separable);

    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    for loss in [LossKind::Logistic, LossKind::Hinge] {
        let config = TrainConfig {
            loss,
            epochs: 5000,
            learning_rate: 0.5,
            l2_penalty: 0.0,
            ..TrainConfig::default()
        };
        let model = train_rows(&refs, &classes, &config).unwrap();
        for (r, c) in rows.iter().zip(&classes) {
            let s = predict_score(&model, r).unwrap();
            assert_eq!(s > 0.0, *c == Class::Attack, "{loss:?} misclassifies {r:?}");
        }
    }
}

#[test]
fn predict_score_matches_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let d = rng.gen_range(1..40);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let model = LinearModel::new(w.clone(), b, LossKind::Hinge, 0.0).unwrap();
        let mut acc = b;
        for i in (0..d).rev() {
            acc += w[i] * x[i];
        }
        assert!((predict_score(&model, &x).unwrap() - acc).abs() < 1e-12);
    }
}

#[test]
fn pair_score_is_symmetric_and_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_corpus(tmp.path());
    let banks = FilterBank::default_multiscale();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let members = banks
        .iter()
        .map(|bank| EnsembleMember {
            model: LinearModel::new(
                (0..bank.histogram_len())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
                0.1,
                LossKind::Logistic,
                0.0,
            )
            .unwrap(),
            bank: bank.clone(),
        })
        .collect();
    let ensemble = Ensemble2D::new(members, 0.0).unwrap();
    let pair = m
        .load_pair(&m.entries()[12], &LightingGeometry::default())
        .unwrap();
    let (l, r) = pair_features(&pair, &banks, 0.5).unwrap();
    assert_eq!(
        pair_score_2d(&ensemble, &l, &r).unwrap(),
        pair_score_2d(&ensemble, &r, &l).unwrap()
    );
    let single = irispad::classifier::image_score_2d(&ensemble, &l).unwrap();
    assert!((pair_score_2d(&ensemble, &l, &l).unwrap() - single).abs() < 1e-15);
}

#[test]
fn corpus_counts_and_regeneration_are_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig {
        flat: 10,
        bumpy: 10,
        opaque: 0,
        size: 32,
        ..CorpusConfig::default()
    };
    let a = make_corpus(&cfg, tmp.path().join("a")).unwrap();
    let b = make_corpus(&cfg, tmp.path().join("b")).unwrap();
    assert_eq!(a.len(), 20);
    let count = |dir: &str| {
        fs::read_dir(tmp.path().join("a").join(dir))
            .unwrap()
            .count()
    };
    assert_eq!(count("images"), 40);
    assert_eq!(count("masks"), 40);
    assert_eq!(count("truth"), 20);
    for sub in ["images", "masks", "truth"] {
        for f in fs::read_dir(tmp.path().join("a").join(sub)).unwrap() {
            let f = f.unwrap();
            let other = tmp.path().join("b").join(sub).join(f.file_name());
            assert_eq!(
                fs::read(f.path()).unwrap(),
                fs::read(other).unwrap(),
                "{:?}",
                f.file_name()
            );
        }
    }
    assert_eq!(
        fs::read(tmp.path().join("a").join(MANIFEST_FILE)).unwrap(),
        fs::read(tmp.path().join("b").join(MANIFEST_FILE)).unwrap()
    );
    assert_eq!(a.entries(), b.entries());
    let labels = a.labels();
    assert_eq!(
        labels.iter().filter(|l| l.class == Class::Attack).count(),
        10
    );
}

#[test]
fn experiment_on_split_corpus_is_error_free() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_corpus(tmp.path());
    let (train, test) = split_subject_disjoint(&m, 0.6, 7).unwrap();
    let out = run_experiment(&train, &test, &ExperimentConfig::default()).unwrap();
    assert_eq!(out.fusion.apcer, Some(0.0));
    assert_eq!(out.fusion.bpcer, Some(0.0));
    let r3 = out.pad3d.unwrap();
    assert_eq!(r3.bpcer, Some(0.0));
    assert!(out.warnings.is_empty());
    assert_eq!(out.unscorable, 0);
}

#[test]
fn overlapping_subjects_are_a_hard_error() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_corpus(tmp.path());
    let (train, test) = split_subject_disjoint(&m, 0.5, 1).unwrap();
    let shared = test.entries()[0].label.subject_id.clone();
    let leaky = m.filter(|e| train.entries().contains(e) || e.label.subject_id == shared);
    match run_experiment(&leaky, &test, &ExperimentConfig::default()) {
        Err(Error::SubjectOverlap(s)) => assert!(s.contains(&shared)),
        other => panic!("expected overlap error, got {:?}", other.map(|o| o.fusion)),
    }
    let relaxed = ExperimentConfig {
        protocol: Protocol::Unconstrained,
        ..ExperimentConfig::default()
    };
    assert!(run_experiment(&leaky, &test, &relaxed).is_ok());
}

#[test]
fn pattern_split_runs_in_both_directions() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_corpus(tmp.path());
    let (regular, irregular) = split_by_pattern(&m).unwrap();
    let config = ExperimentConfig {
        group_by: Some(GroupField::Pattern),
        ..ExperimentConfig::default()
    };
    for (train, test) in [(&regular, &irregular), (&irregular, &regular)] {
        let out = run_experiment(train, test, &config).unwrap();
        for r in [Some(&out.pad2d), out.pad3d.as_ref(), Some(&out.fusion)] {
            let r = r.unwrap();
            assert_eq!(r.counts.attacks + r.counts.bonafides, test.len());
            assert!(r.apcer.is_some() && r.bpcer.is_some());
        }
    }
}

#[test]
fn scoring_is_deterministic_and_parallel_safe() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_corpus(tmp.path());
    let banks = FilterBank::default_multiscale();
    let a = score_manifest(&m, &LightingGeometry::default(), &banks, 0.5).unwrap();
    let b = score_manifest(&m, &LightingGeometry::default(), &banks, 0.5).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.sample_id, y.sample_id);
        assert_eq!(x.score3d, y.score3d);
        assert_eq!(x.features, y.features);
    }
}

fn tally(decisions: &[Decision], labels: &[Label]) -> (usize, usize, usize, usize) {
    let mut t = (0, 0, 0, 0);
    for (d, l) in decisions.iter().zip(labels) {
        match l.class {
            Class::Attack => {
                t.0 += 1;
                t.2 += usize::from(d.class == Class::BonaFide);
            }
            Class::BonaFide => {
                t.1 += 1;
                t.3 += usize::from(d.class == Class::Attack);
            }
        }
    }
    t
}

fn samples() -> impl Strategy<Value = Vec<(bool, bool, u8)>> {
    prop::collection::vec((any::<bool>(), any::<bool>(), 0u8..4), 1..200)
}

fn build(s: &[(bool, bool, u8)]) -> (Vec<Decision>, Vec<Label>) {
    let class = |b: bool| if b { Class::Attack } else { Class::BonaFide };
    s.iter()
        .map(|&(p, t, g)| {
            (
                Decision::new(class(p), 0.0, Source::Fusion).unwrap(),
                Label::new(class(t), "s")
                    .unwrap()
                    .with_brand(format!("brand{g}")),
            )
        })
        .unzip()
}

proptest! {
    #[test]
    fn report_matches_tally_and_identity(s in samples()) {
        let (d, l) = build(&s);
        let r = compute_report(&d, &l, Some(GroupField::Brand)).unwrap();
        let (a, b, ae, be) = tally(&d, &l);
        prop_assert_eq!((r.counts.attacks, r.counts.bonafides, r.counts.attack_errors, r.counts.bonafide_errors), (a, b, ae, be));
        let weighted = r.apcer.unwrap_or(0.0) * a as f64 + r.bpcer.unwrap_or(0.0) * b as f64;
        prop_assert!((r.accuracy - (1.0 - weighted / (a + b) as f64)).abs() < 1e-12);
        for v in [Some(r.accuracy), r.apcer, r.bpcer].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // group breakdowns sum to the totals
        let mut sum = (0, 0, 0, 0);
        for g in r.groups.values() {
            sum.0 += g.counts.attacks;
            sum.1 += g.counts.bonafides;
            sum.2 += g.counts.attack_errors;
            sum.3 += g.counts.bonafide_errors;
            prop_assert_eq!(g.apcer.is_none(), g.counts.attacks == 0);
        }
        prop_assert_eq!(sum, (a, b, ae, be));
    }

    #[test]
    fn report_is_permutation_invariant(s in samples(), seed in any::<u64>()) {
        let (d, l) = build(&s);
        let mut idx: Vec<usize> = (0..s.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let d2: Vec<Decision> = idx.iter().map(|&i| d[i]).collect();
        let l2: Vec<Label> = idx.iter().map(|&i| l[i].clone()).collect();
        prop_assert_eq!(
            compute_report(&d, &l, Some(GroupField::Brand)).unwrap(),
            compute_report(&d2, &l2, Some(GroupField::Brand)).unwrap()
        );
    }

    #[test]
    fn cascade_never_overrules_a_2d_attack(c3 in any::<bool>(), s2 in -5.0f64..5.0, q in 0.0f64..1.0) {
        let d2 = Decision::new(Class::Attack, s2, Source::Pad2D).unwrap();
        let d3 = Decision::new(if c3 { Class::Attack } else { Class::BonaFide }, q, Source::Pad3D).unwrap();
        prop_assert_eq!(irispad::fusion::fuse_decide(&d2, &d3).unwrap().class, Class::Attack);
    }
}

#[test]
fn randomized_200_sample_report_matches_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let s: Vec<(bool, bool, u8)> = (0..200)
        .map(|_| (rng.gen(), rng.gen(), rng.gen_range(0..4)))
        .collect();
    let (d, l) = build(&s);
    let r = compute_report(&d, &l, None).unwrap();
    let (a, b, ae, be) = tally(&d, &l);
    assert_eq!(r.apcer, Some(ae as f64 / a as f64));
    assert_eq!(r.bpcer, Some(be as f64 / b as f64));
    let mut by_brand: BTreeMap<String, usize> = BTreeMap::new();
    for x in &l {
        *by_brand.entry(x.brand.clone().unwrap()).or_default() += 1;
    }
    let g = compute_report(&d, &l, Some(GroupField::Brand)).unwrap();
    for (k, n) in by_brand {
        assert_eq!(g.groups[&k].counts.total(), n);
    }
}
