use underdet_core::autodiff::{fd_hessian, grad_prediction, hessian_loss};
use underdet_core::data::gen_sine;
use underdet_core::experiments::{run_iris_correlation, run_noise_sweep, run_ood_1d, threshold_classifier_accuracy};
use underdet_core::linalg::{eigh_symmetric, pearson};
use underdet_core::training::{mse_loss, train};
use underdet_core::underdet::{local_ensemble_sample, spectrum_report};
use underdet_core::{
    build_template, rng_from_seed, DifferentiableModel, Experiment, ExperimentConfig,
    ShotConfig, TemplateKind, TrainConfig,
};

fn small(e: Experiment, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(e, seed);
    c.n_members = Some(3);
    c
}

#[test]
fn analytic_sweep_entry_reproduces_the_ood_run() {
    let mut sweep = small(Experiment::NoiseSweep, 5);
    sweep.shots = Some(vec![ShotConfig::Shots(64), ShotConfig::Analytic]);
    let sweep = run_noise_sweep(&sweep).unwrap();
    let ood = run_ood_1d(&small(Experiment::SineOod, 5)).unwrap();
    assert_eq!(
        sweep.table("predictions_analytic").unwrap().rows,
        ood.table("predictions").unwrap().rows
    );
    let row = &sweep.table("sweep").unwrap().rows[1];
    assert_eq!(row[0], "analytic");
    assert_eq!(row[1].parse::<f64>().unwrap(), ood.summary_f64("score_accuracy").unwrap());
    assert_eq!(row[2].parse::<f64>().unwrap(), ood.summary_f64("std_accuracy").unwrap());
}

#[test]
fn summaries_recompute_from_tables() {
    let ood = run_ood_1d(&small(Experiment::LinearOod, 2)).unwrap();
    let t = ood.table("predictions").unwrap();
    let scores = t.column_f64("mean_score").unwrap();
    let stds = t.column_f64("std").unwrap();
    let outside: Vec<bool> = t.rows.iter().map(|r| r[2] == "false").collect();
    let fit = threshold_classifier_accuracy(&scores, &outside).unwrap();
    assert!((fit.accuracy - ood.summary_f64("score_accuracy").unwrap()).abs() < 1e-9);
    let fit = threshold_classifier_accuracy(&stds, &outside).unwrap();
    assert!((fit.accuracy - ood.summary_f64("std_accuracy").unwrap()).abs() < 1e-9);

    let mut iris = ExperimentConfig::new(Experiment::IrisCorrelation, 4);
    iris.n_members = Some(4);
    let iris = run_iris_correlation(&iris).unwrap();
    let t = iris.table("scores").unwrap();
    let r = pearson(&t.column_f64("mean_score").unwrap(), &t.column_f64("std").unwrap()).unwrap();
    assert!((r - iris.summary_f64("pearson_r").unwrap()).abs() < 1e-9);
    assert_eq!(t.rows.len(), 90);
    assert_eq!(iris.table("spectrum").unwrap().rows.len(), 4 * 12);
}

#[test]
fn single_member_iris_is_a_config_error() {
    let mut c = ExperimentConfig::new(Experiment::IrisCorrelation, 0);
    c.n_members = Some(1);
    assert_eq!(run_iris_correlation(&c).unwrap_err().kind(), "degenerate_variance");
}

#[test]
fn trained_sine_loss_hessian_and_local_ensemble() {
    let template = build_template(TemplateKind::Sine1d);
    let (train_set, _) = gen_sine(200, 10, &mut rng_from_seed(77)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        learning_rate: 0.05,
        seed: 77,
        shots: ShotConfig::Analytic,
    };
    let model = train(&template, &train_set, &cfg).unwrap();
    assert!(model.report.final_train_loss < 0.15);

    let loss = |p: &[f64]| {
        let preds: Vec<f64> = train_set.points.iter().map(|pt| model.predict_with(p, &pt.x).unwrap()).collect();
        mse_loss(&preds, &train_set.targets()).unwrap()
    };
    let mut rng = rng_from_seed(1);
    let h = hessian_loss(&template, &model.theta, &train_set, ShotConfig::Analytic, &mut rng).unwrap();
    let h_fd = fd_hessian(loss, &model.theta, 1e-3);
    for i in 0..14 {
        for j in 0..14 {
            assert!((h.get(i, j) - h_fd.get(i, j)).abs() < 1e-4, "({i},{j})");
            assert_eq!(h.get(i, j).to_bits(), h.get(j, i).to_bits());
        }
    }

    let spectrum = eigh_symmetric(&h).unwrap();
    let rep = spectrum_report(&spectrum);
    assert_eq!(rep.magnitudes.len(), 14);
    assert!(rep.magnitudes.windows(2).all(|w| w[0] >= w[1]));

    // Exact loss gradient at θ*, so the first-order term can be removed.
    let mut grad = [0.0; 14];
    for pt in &train_set.points {
        let g = grad_prediction(&template, &model.theta, &pt.x, ShotConfig::Analytic, &mut rng).unwrap();
        let r = model.predict_with(&model.theta, &pt.x).unwrap() - pt.y;
        for (a, gi) in grad.iter_mut().zip(&g) {
            *a += 2.0 * r * gi / train_set.len() as f64;
        }
    }
    let m = 5;
    let eps = 1e-2;
    let max_kept = spectrum.eigenvalues[m..].iter().map(|l| l.abs()).fold(0.0, f64::max);
    let base = loss(&model.theta);
    for p in local_ensemble_sample(&model.theta, &spectrum, m, eps, 16, &mut rng).unwrap() {
        let first: f64 = grad.iter().zip(p.iter().zip(&model.theta)).map(|(g, (a, b))| g * (a - b)).sum();
        let rise = loss(&p) - base - first;
        assert!(rise <= 0.5 * eps * eps * max_kept + 1e-5, "{rise} vs {max_kept}");
    }
}
