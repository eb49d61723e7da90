use alda_core::data::{apply_shift, batch_iter, gen_two_moons, Domain, LabeledSet, ShiftSpec};
use alda_core::harness::{
    ablation_suite, evaluate, export_features, mmd_rbf, train, train_on, DatasetKind, HarnessError, Method, Models,
    RunConfig, RunRecord, Trainer, RECORD_HEADER,
};
use alda_core::nn::{Activation, Layer, Mlp};
use alda_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn short(method: Method, steps: usize) -> RunConfig {
    RunConfig {
        method,
        n_source: 300,
        n_target: 300,
        total_steps: steps,
        probe_every: 10,
        mmd_samples: 100,
        ..RunConfig::default()
    }
}

fn linear(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> Mlp {
    Mlp::from_layers(vec![Layer {
        weight: Tensor::from_rows(&weight).unwrap(),
        bias: Tensor::vector(bias),
        activation: Activation::None,
        dropout: 0.0,
    }])
    .unwrap()
}

fn fixed_models(classifier: Mlp) -> Models {
    Models {
        generator: linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]),
        classifier,
        discriminator: linear(vec![vec![1.0], vec![1.0]], vec![0.0]),
        standardizer: None,
    }
}

fn set(rows: &[[f64; 2]], labels: Vec<usize>, classes: usize) -> LabeledSet {
    LabeledSet::new(Tensor::from_rows(rows).unwrap(), labels, Domain::Source, classes).unwrap()
}

#[test]
fn evaluate_perfect_constant_and_order_invariant() {
    let rows = [[1.0, 0.3], [2.0, -1.0], [-1.0, 0.5], [-0.5, 2.0]];
    let data = set(&rows, vec![0, 0, 1, 1], 2);
    let perfect = fixed_models(linear(vec![vec![1.0, -1.0], vec![0.0, 0.0]], vec![0.0, 0.0]));
    assert_eq!(evaluate(&perfect, &data).unwrap(), 1.0);

    let constant = fixed_models(linear(vec![vec![0.0; 4], vec![0.0; 4]], vec![1.0, 0.0, 0.0, 0.0]));
    let balanced = set(&[[0.0, 0.0]; 8], vec![0, 1, 2, 3, 0, 1, 2, 3], 4);
    assert_eq!(evaluate(&constant, &balanced).unwrap(), 0.25);

    let mixed = set(&rows, vec![0, 1, 1, 0], 2);
    let reversed = mixed.subset(&[3, 2, 1, 0]);
    assert_eq!(evaluate(&perfect, &mixed).unwrap(), evaluate(&perfect, &reversed).unwrap());

    let empty = data.subset(&[]);
    assert!(evaluate(&perfect, &empty).is_err());
}

fn gaussian(n: usize, dim: usize, mean: f64, seed: u64) -> Tensor {
    cluster(n, dim, mean, 1.0, seed)
}

fn cluster(n: usize, dim: usize, mean: f64, std: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, std).unwrap();
    let data = (0..n * dim).map(|_| normal.sample(&mut rng)).collect();
    Tensor::matrix(n, dim, data).unwrap()
}

#[test]
fn mmd_null_far_and_symmetric() {
    let a = gaussian(500, 4, 0.0, 1);
    let b = gaussian(500, 4, 0.0, 2);
    assert!(mmd_rbf(&a, &b, None).unwrap().abs() < 0.01);

    // Tight clusters: within-cluster kernel values near 1, cross terms near 0.
    let far = cluster(200, 4, 100.0, 0.05, 3);
    let near = cluster(200, 4, 0.0, 0.05, 4);
    assert!(mmd_rbf(&near, &far, Some(1.0)).unwrap() > 0.5);
    assert!(mmd_rbf(&near, &far, None).unwrap() > 0.5);

    let c = gaussian(120, 3, 0.5, 5);
    let d = gaussian(80, 3, 0.0, 6);
    let ab = mmd_rbf(&c, &d, None).unwrap();
    let ba = mmd_rbf(&d, &c, None).unwrap();
    assert!((ab - ba).abs() < 1e-12);

    assert!(mmd_rbf(&c.slice_rows(0, 1).unwrap(), &d, None).is_err());
    assert!(mmd_rbf(&c, &gaussian(10, 2, 0.0, 7), None).is_err());
}

#[test]
fn mmd_matches_direct_formula() {
    let x = gaussian(7, 2, 0.0, 8);
    let y = gaussian(5, 2, 1.0, 9);
    let sigma = 1.3;
    let k = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        (-d / (2.0 * sigma * sigma)).exp()
    };
    let mean_off = |p: &Tensor| {
        let n = p.rows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += k(p.row(i), p.row(j));
                }
            }
        }
        s / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            cross += k(x.row(i), y.row(j));
        }
    }
    cross /= (x.rows() * y.rows()) as f64;
    let expected = mean_off(&x) + mean_off(&y) - 2.0 * cross;
    assert!((mmd_rbf(&x, &y, Some(sigma)).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn zero_tradeoff_alda_matches_source_only() {
    let so = short(Method::SourceOnly, 60);
    let alda = RunConfig {
        lambda_fixed: Some(0.0),
        ..short(Method::Alda, 60)
    };
    let a = train(&so).unwrap().models;
    let b = train(&alda).unwrap().models;
    for (x, y) in [(&a.generator, &b.generator), (&a.classifier, &b.classifier)] {
        for (p, q) in x.params().iter().zip(y.params()) {
            for (u, v) in p.data().iter().zip(q.data()) {
                assert!((u - v).abs() <= 1e-9, "{u} vs {v}");
            }
        }
    }
}

#[test]
fn updates_touch_only_their_own_networks() {
    for method in [Method::Alda, Method::Dann, Method::AldaNoReg] {
        let cfg = short(method, 10);
        let source = gen_two_moons(200, 0.1, 1).unwrap();
        let target = apply_shift(&gen_two_moons(200, 0.1, 2).unwrap(), &cfg.shift(), 3).unwrap();
        let mut batches = batch_iter(&source, &target, 32, 4).unwrap();
        let mut trainer = Trainer::new(&cfg, 2, 2).unwrap();
        // Warm up so that the target loss has accepted samples.
        for _ in 0..5 {
            trainer.iterate(&batches.next().unwrap()).unwrap();
        }
        let batch = batches.next().unwrap();
        let hashes = |t: &Trainer| {
            let m = t.models();
            [
                Models::fingerprint(&m.generator),
                Models::fingerprint(&m.classifier),
                Models::fingerprint(&m.discriminator),
            ]
        };
        let before = hashes(&trainer);
        let ctx = trainer.begin_step(&batch).unwrap();
        assert_eq!(hashes(&trainer), before);
        trainer.step_discriminator(&ctx).unwrap();
        let after_d = hashes(&trainer);
        assert_eq!(after_d[..2], before[..2], "{method}");
        assert_ne!(after_d[2], before[2], "{method}");
        trainer.step_classifier_generator(&batch, &ctx).unwrap();
        let after_cg = hashes(&trainer);
        assert_eq!(after_cg[2], after_d[2], "{method}");
        assert_ne!(after_cg[0], after_d[0], "{method}");
        assert_ne!(after_cg[1], after_d[1], "{method}");
    }
}

#[test]
fn source_only_never_builds_discriminator_updates() {
    let cfg = short(Method::SourceOnly, 20);
    let out = train(&cfg).unwrap();
    let fresh = Trainer::new(&cfg, 2, 2).unwrap();
    assert_eq!(
        Models::fingerprint(&out.models.discriminator),
        Models::fingerprint(&fresh.models().discriminator)
    );
}

#[test]
fn record_is_deterministic_and_round_trips() {
    let cfg = short(Method::Alda, 40);
    let a = train(&cfg).unwrap().record;
    let b = train(&cfg).unwrap().record;
    assert_eq!(a.to_csv(), b.to_csv());
    let header = a.to_csv().lines().next().unwrap().to_string();
    assert_eq!(header, RECORD_HEADER.join(","));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("record.csv");
    a.write_csv(&path).unwrap();
    assert_eq!(RunRecord::from_csv(&std::fs::read_to_string(&path).unwrap()).unwrap(), a);
}

#[test]
fn record_rows_and_schedules_follow_closed_forms() {
    let cfg = RunConfig {
        total_steps: 95,
        ..short(Method::Dann, 95)
    };
    let record = train(&cfg).unwrap().record;
    let steps: Vec<usize> = record.rows.iter().map(|r| r.step).collect();
    let mut expected: Vec<usize> = (0..95).step_by(10).collect();
    expected.push(94);
    assert_eq!(steps, expected);
    for r in &record.rows {
        let q = r.step as f64 / 95.0;
        assert!((0.0..=1.0).contains(&r.q));
        assert!((r.q - q).abs() < 1e-12);
        let lambda = 2.0 / (1.0 + (-10.0 * q).exp()) - 1.0;
        let lr = 0.01 / (1.0 + 10.0 * q).powf(0.75);
        assert!((r.lambda - lambda).abs() < 1e-12);
        assert!((r.lr - lr).abs() < 1e-12);
    }
}

#[test]
fn fixed_tradeoff_is_recorded() {
    let cfg = RunConfig {
        lambda_fixed: Some(0.25),
        ..short(Method::Alda, 12)
    };
    let record = train(&cfg).unwrap().record;
    assert!(record.rows.iter().all(|r| r.lambda == 0.25));
}

#[test]
fn shift_free_source_only_transfers() {
    let cfg = RunConfig {
        method: Method::SourceOnly,
        total_steps: 500,
        lr_mult: 10.0,
        ..RunConfig::default()
    };
    let source = gen_two_moons(2000, 0.1, 11).unwrap();
    let target = apply_shift(&gen_two_moons(2000, 0.1, 12).unwrap(), &ShiftSpec::identity(2), 13).unwrap();
    let out = train_on(&cfg, &source, &target).unwrap();
    let tgt = out.record.last().unwrap().tgt_acc;
    assert!(tgt >= 0.95, "target accuracy {tgt}");
    assert!((evaluate(&out.models, &target).unwrap() - tgt).abs() < 1e-12);
}

#[test]
fn ablation_cells_and_statistics() {
    let base = short(Method::SourceOnly, 20);
    let methods = [Method::St, Method::SourceOnly];
    let seeds = [0, 1, 2];
    let table = ablation_suite(&base, &methods, &seeds).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.method).collect::<Vec<_>>(), methods);
    for &m in &methods {
        let accs: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let cfg = base.with_method(m).with_seed(s);
                train(&cfg).unwrap().record.last().unwrap().tgt_acc
            })
            .collect();
        assert_eq!(table.accuracies(m), accs);
        let mean = accs.iter().sum::<f64>() / 3.0;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 2.0;
        let row = table.row(m).unwrap();
        assert!((row.mean_acc - mean).abs() < 1e-12);
        assert!((row.std_acc - var.sqrt()).abs() < 1e-12);
        assert_eq!(row.seeds, 3);
    }
    let csv = table.to_csv();
    assert!(csv.starts_with("method,mean_acc,std_acc,seeds\nst,"));
    assert_eq!(csv.lines().count(), 3);

    let single = ablation_suite(&base, &[Method::SourceOnly], &[4]).unwrap();
    let direct = train(&base.with_seed(4)).unwrap().record.last().unwrap().tgt_acc;
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.rows[0].mean_acc, direct);
    assert_eq!(single.rows[0].std_acc, 0.0);

    assert!(ablation_suite(&base, &[], &seeds).is_err());
}

#[test]
fn failing_cells_are_recorded_and_skipped() {
    let base = RunConfig {
        dataset: DatasetKind::MnistUsps,
        mnist_images: "/nonexistent/images".into(),
        mnist_labels: "/nonexistent/labels".into(),
        usps_images: "/nonexistent/images".into(),
        usps_labels: "/nonexistent/labels".into(),
        ..short(Method::SourceOnly, 5)
    };
    let table = ablation_suite(&base, &[Method::SourceOnly], &[0, 1]).unwrap();
    assert_eq!(table.cells.len(), 2);
    assert!(table.cells.iter().all(|c| c.outcome.is_err()));
    assert_eq!(table.rows[0].seeds, 0);
}

#[test]
fn export_features_schema_and_reproducibility() {
    let cfg = short(Method::Alda, 20);
    let out = train(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let n = export_features(&out.models, &[&out.source, &out.target], &a).unwrap();
    assert_eq!(n, out.source.len() + out.target.len());
    export_features(&out.models, &[&out.source, &out.target], &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let expected: Vec<String> = (0..cfg.feature_dim)
        .map(|i| format!("x{i}"))
        .chain(["label".to_string(), "domain".to_string()])
        .collect();
    assert_eq!(header, expected.join(","));
    assert_eq!(lines.count(), n);
    assert!(text.lines().nth(1).unwrap().ends_with(",source"));
    assert!(text.lines().last().unwrap().ends_with(",target"));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        RunConfig {
            total_steps: 0,
            ..RunConfig::default()
        },
        RunConfig {
            delta: 1.5,
            ..RunConfig::default()
        },
        RunConfig {
            lambda_fixed: Some(-0.1),
            ..RunConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(train(&cfg), Err(HarnessError::Config(_))));
    }
}

#[test]
fn nonfinite_loss_aborts_with_partial_record() {
    let cfg = RunConfig {
        eta0: 1e12,
        alpha: 0.0,
        ..short(Method::SourceOnly, 200)
    };
    match train(&cfg) {
        Err(HarnessError::Aborted { step, record, .. }) => {
            assert!(step < 200);
            assert!(record.rows.iter().all(|r| r.step < step));
        }
        other => panic!("expected an abort, got {:?}", other.map(|o| o.record.rows.len())),
    }
}

#[test]
fn accepted_fraction_grows_on_default_runs() {
    for seed in 0..3 {
        let record = train(&RunConfig::default().with_seed(seed)).unwrap().record;
        let first = record.rows.first().unwrap().accepted_frac;
        let last = record.last().unwrap().accepted_frac;
        assert!(last > first, "seed {seed}: {first} -> {last}");
    }
}
