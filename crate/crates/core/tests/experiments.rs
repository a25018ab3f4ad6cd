use fgf_core::config::{FeatureSpec, KeyValueConfig, Settings};
use fgf_core::experiment::{
    density_table, kl_table, report_csv, run_experiment, run_heaviside_experiment,
    run_noise_experiment, run_seeds, summary_csv, ExperimentConfig, FAR_FROM_STEP,
};
use fgf_core::{Error, ExpectationEngine};

fn sigma_points() -> ExpectationEngine {
    ExpectationEngine::sigma_point(0.0).unwrap()
}

#[test]
fn zero_steps_are_rejected() {
    assert!(matches!(
        run_noise_experiment(0, 1, sigma_points(), &[2]),
        Err(Error::InvalidArgument(_))
    ));
    assert!(run_heaviside_experiment(0, 1, sigma_points(), &[3]).is_err());
}

#[test]
fn gf_mean_stays_at_prior_mean_under_sigma_points() {
    let report = run_noise_experiment(1000, 5, sigma_points(), &[]).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.steps(), 1000);
    let gf = &report.runs[0];
    assert!(gf.means.iter().all(|m| *m == 5.0));
    assert!(gf.stds.iter().all(|s| *s >= 0.0));
}

#[test]
fn reports_have_one_row_per_step() {
    let engine = ExpectationEngine::monte_carlo(300, 1).unwrap();
    let reports = vec![
        run_noise_experiment(40, 0, engine, &[2, 3]).unwrap(),
        run_noise_experiment(40, 1, engine, &[2, 3]).unwrap(),
    ];
    for order in 1..=3 {
        let csv = report_csv(&reports, &FeatureSpec::Monomial(order));
        assert_eq!(csv.lines().count(), 1 + 2 * 40);
        let second = csv.lines().nth(1).unwrap();
        assert!(second.starts_with("0,1,"), "{second}");
        assert!(csv.lines().last().unwrap().starts_with("1,40,"));
    }
    let summary = summary_csv(&reports);
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
}

#[test]
fn seeds_run_in_parallel_come_back_in_order_and_match_serial_runs() {
    let cfg = ExperimentConfig {
        engine: ExpectationEngine::monte_carlo(200, 4).unwrap(),
        ..ExperimentConfig::from_settings(
            &Settings::from_config(
                &KeyValueConfig::parse("model = heaviside\nexperiment.steps = 30").unwrap(),
            )
            .unwrap(),
            0,
        )
    };
    let seeds = [7, 3, 11];
    let parallel = run_seeds(&cfg, &seeds).unwrap();
    for (report, &seed) in parallel.iter().zip(&seeds) {
        assert_eq!(report.seed, seed);
        let serial = run_experiment(&ExperimentConfig {
            seed,
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(report.states, serial.states);
        assert_eq!(report.runs, serial.runs);
    }
}

#[test]
fn far_from_step_both_filters_cover_the_truth() {
    let engine = ExpectationEngine::monte_carlo(2000, 0).unwrap();
    let report = run_heaviside_experiment(1000, 2, engine, &[3]).unwrap();
    for run in &report.runs {
        let (mut far, mut covered) = (0, 0);
        for ((x, m), s) in report.states.iter().zip(&run.means).zip(&run.stds) {
            if x.abs() > FAR_FROM_STEP {
                far += 1;
                if (m - x).abs() <= 3.0 * s {
                    covered += 1;
                }
            }
        }
        assert!(far > 100);
        // Three standard deviations cover 99.7% of a well-calibrated filter.
        assert!(covered as f64 >= 0.99 * far as f64, "{covered}/{far}");
    }
}

#[test]
fn density_table_shapes_and_exact_means() {
    let model = fgf_core::BuiltinModel::from_name("noise_magnitude").unwrap();
    let table = density_table(&model, &FeatureSpec::Monomial(2), false, 51, None).unwrap();
    assert_eq!(table.p.len(), 51 * 51);
    assert_eq!(table.q_gf.len(), 51 * 51);
    assert_eq!(table.means.len(), 51);
    // Symmetric in y: the exact conditional mean at +y and -y agree.
    let first = table.means[0][0];
    let last = table.means[50][0];
    assert!((first - last).abs() < 1e-9);
    assert_eq!(table.grid_csv().lines().count(), 1 + 51 * 51);
}

#[test]
fn kl_table_orders_features() {
    let model = fgf_core::BuiltinModel::from_name("noise_magnitude").unwrap();
    let features = [FeatureSpec::Monomial(1), FeatureSpec::Monomial(2)];
    let rows = kl_table(&model, &sigma_points(), &features, false, 401).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].kl_oracle_fit < rows[0].kl_oracle_fit);
    // Sigma points never vary M and w together, so they see no correlation
    // between M and y^2 and the quadratic fit collapses to the GF.
    assert!(
        (rows[1].kl_engine_fit - rows[0].kl_engine_fit).abs() < 1e-9,
        "{rows:?}"
    );
}
