use accel_sketch::bfgs::{optimize, Logistic, OptimConfig, OptimMethod, OptimState};
use accel_sketch::data::{gen_spectrum, parse_libsvm_str, preprocess, serialize_libsvm, gen_logistic, ParseOptions, Preprocess};
use accel_sketch::inverter::{estimate_params_convenient, invert, InvertConfig, InvertMode};
use accel_sketch::linalg::sqrt_psd;
use accel_sketch::oracle::{lyapunov_matrix, matrix_moments, mu_nu_bruteforce};
use accel_sketch::record::RunOptions;
use accel_sketch::solver::{solve, solve_weighted, Metric, SolveConfig, SolveMode};
use accel_sketch::{derive_params, SketchSpec, SketchStrategy, SymMatrix, Vector};

#[test]
fn libsvm_text_to_trained_model() {
    let text = serialize_libsvm(&gen_logistic(150, 4, 0.3, 21));
    let ds = preprocess(&parse_libsvm_str(&text, ParseOptions::default()).unwrap(), Preprocess::ALL);
    assert_eq!(ds.n_features(), 5);
    for row in ds.features.row_iter() {
        let without_bias = row.columns(0, 4).norm();
        assert!((without_bias - 1.0).abs() < 1e-12 || without_bias == 0.0);
    }
    let obj = Logistic::from_dataset(&ds, None).unwrap();
    assert_eq!(obj.lambda, 1.0 / 150.0);
    let start = OptimState::identity_start(&obj, Vector::zeros(5)).unwrap();
    let cfg = OptimConfig { method: OptimMethod::Classic, eta: 1.0, options: RunOptions::iterations(200, 1), grad_tol: Some(1e-9), f_star: None };
    let run = optimize(&obj, start, &cfg, 0).unwrap();
    assert!(run.iterations_to(1e-9).is_some());
    // fitted model classifies the training set better than chance
    let margins = (&ds.features * &run.trajectory.state.w).component_mul(&ds.labels);
    assert!(margins.iter().filter(|&&t| t > 0.0).count() > 100);
}

#[test]
fn accelerated_solver_wins_on_ill_conditioned_system() {
    let eigs: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(300.0, 29)).collect();
    let a = gen_spectrum(&eigs, 4).unwrap();
    let b = a.as_matrix() * Vector::from_element(30, 1.0);
    let est = estimate_params_convenient(&a).unwrap();
    let params = derive_params(est.mu_p, est.nu_p, 1.0).unwrap();
    let mean_final = |mode| {
        (0..8u64)
            .map(|seed| {
                let cfg = SolveConfig {
                    spec: SketchSpec::new(SketchStrategy::CoordinateConvenient, 1, seed),
                    params,
                    mode,
                    options: RunOptions::iterations(3000, 3000),
                };
                solve(&a, &b, &Metric::SystemMatrix, &cfg, None).unwrap().records.last().unwrap().residual
            })
            .sum::<f64>()
            / 8.0
    };
    assert!(mean_final(SolveMode::Accelerated) < mean_final(SolveMode::Plain));
}

#[test]
fn weighted_and_direct_paths_agree_for_system_norm() {
    let a = gen_spectrum(&[1.0, 2.0, 4.0, 8.0, 16.0], 2).unwrap();
    let b = a.as_matrix() * Vector::from_element(5, 1.0);
    let params = derive_params(0.01, 5.0, 1.0).unwrap();
    let cfg = SolveConfig {
        spec: SketchSpec::new(SketchStrategy::Gaussian, 2, 9),
        params,
        mode: SolveMode::Accelerated,
        options: RunOptions::iterations(60, 10),
    };
    let direct = solve(&a, &b, &Metric::SystemMatrix, &cfg, None).unwrap();
    let weighted = solve_weighted(&a, &b, &a, &cfg, None).unwrap();
    for (d, w) in direct.records.iter().zip(&weighted.records) {
        assert_eq!(d.iteration, w.iteration);
        assert!((d.residual - w.residual).abs() <= 1e-8 * d.residual.max(1e-12), "{} vs {}", d.residual, w.residual);
    }
}

#[test]
fn matrix_lyapunov_decreases_on_average() {
    let a = gen_spectrum(&[0.5, 1.0, 3.0, 6.0], 8).unwrap();
    let a_half = sqrt_psd(&a).unwrap();
    let spec = SketchSpec::new(SketchStrategy::CoordinateConvenient, 1, 0);
    let m = matrix_moments(&a, &spec, 0).unwrap();
    let (mu, nu) = mu_nu_bruteforce(&m).unwrap();
    let params = derive_params(mu, nu, 1.0).unwrap();
    let iters = 60;
    let runs = 300;
    let mut ratio_sum = 0.0;
    for seed in 0..runs {
        let cfg = InvertConfig {
            spec: spec.with_seed(seed),
            params,
            mode: InvertMode::Accel,
            options: RunOptions::iterations(iters, iters),
            track_lambda_min: false,
        };
        let lyap = |st: &accel_sketch::inverter::InverterState| lyapunov_matrix(st, &a_half, &m, mu).unwrap();
        let t = invert(&a, &cfg, Some(&lyap)).unwrap();
        let l: Vec<f64> = t.records.iter().filter(|r| r.method == "accel").map(|r| r.lyapunov.unwrap()).collect();
        ratio_sum += l.last().unwrap() / l[0];
    }
    let rate = (ratio_sum / runs as f64).powf(1.0 / iters as f64);
    assert!(rate <= 1.0 - (mu / nu).sqrt() + 0.02, "rate {rate}, theory {}", 1.0 - (mu / nu).sqrt());
}

#[test]
fn inverse_estimates_approach_inverse() {
    let a = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
    let est = estimate_params_convenient(&a).unwrap();
    for mode in InvertMode::ALL {
        let cfg = InvertConfig {
            spec: SketchSpec::new(SketchStrategy::CoordinateUniform, 1, 1),
            params: derive_params(est.mu_p, est.nu_p, 1.0).unwrap(),
            mode,
            options: RunOptions::iterations(400, 400),
            track_lambda_min: true,
        };
        let t = invert(&a, &cfg, None).unwrap();
        let inv = a.as_matrix().clone().try_inverse().unwrap();
        assert!((&t.state.x - inv).amax() < 1e-8, "{mode}");
        assert!(t.records.iter().all(|r| r.lambda_min_x.is_some()));
    }
}
