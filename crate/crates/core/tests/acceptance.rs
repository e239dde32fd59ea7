//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line with its runtime. Criterion 5's two scalar-constraint clauses are
//! mathematically unattainable for passivity-family supply rates (see the
//! README limitations section); that test asserts every attainable clause
//! first and fails honestly on the impossible ones.

use std::time::Instant;

use dissid::*;
use nalgebra::{DMatrix, DVector};

/// Small deterministic generator for the randomized criteria.
struct Lcg(u64);

impl Lcg {
    fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    fn usize_in(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_f64() * (hi - lo + 1) as f64) as usize
    }
}

/// Random stable model: shift a random matrix left of the imaginary axis.
fn random_stable_model(rng: &mut Lcg, n: usize, d_value: Option<f64>) -> StateSpaceModel {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = rng.uniform(-1.0, 1.0);
        }
    }
    let max_re = a
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let a = a - DMatrix::identity(n, n) * (max_re + rng.uniform(0.2, 1.5));
    let b = DMatrix::from_fn(n, 1, |_, _| rng.uniform(-1.0, 1.0));
    let c = DMatrix::from_fn(1, n, |_, _| rng.uniform(-1.0, 1.0));
    let d = DMatrix::from_element(1, 1, d_value.unwrap_or_else(|| rng.uniform(-1.5, 1.5)));
    StateSpaceModel::new(a, b, c, d).unwrap()
}

fn report(criterion: usize, elapsed: f64, budget: f64, desc: &str) {
    println!("criterion {criterion}: PASS ({elapsed:.2} s) — {desc}");
    assert!(
        elapsed < budget,
        "criterion {criterion} exceeded its {budget} s budget: {elapsed:.2} s"
    );
}

#[test]
fn criterion_1_lmi_witness() {
    let start = Instant::now();
    let model = StateSpaceModel::siso(-1.0, 1.0, 1.0, 1.0);
    let sr = make_supply_rate(SupplyPreset::Passivity, 1, 1).unwrap();
    let p = DMatrix::from_element(1, 1, 0.5);
    let blk = assemble_lmi(&model, &sr, &p, 0.1, 0.1).unwrap();
    let expect = DMatrix::from_diagonal(&nalgebra::dvector![-0.9, -0.9]);
    assert!(
        (blk - expect).amax() <= 1e-12,
        "hand-substituted block must equal diag(-0.9, -0.9)"
    );

    let problem = LmiProblem::new(model, sr, LmiBounds::default()).unwrap();
    let out = solve_feasibility(&problem, &FeasTolerances::default());
    let cert = out.certificate().expect("witness instance is feasible");
    assert!(cert.margin <= -1e-7, "margin {}", cert.margin);
    report(
        1,
        start.elapsed().as_secs_f64(),
        1.0,
        "witness block assembly exact, feasibility certified",
    );
}

#[test]
fn criterion_2_analytic_infeasibility() {
    let start = Instant::now();
    let mut rng = Lcg(0x5eed_0002);
    let sr = make_supply_rate(SupplyPreset::Passivity, 1, 1).unwrap();
    for trial in 0..25 {
        let n = rng.usize_in(1, 4).min(4);
        let model = random_stable_model(&mut rng, n, Some(0.0));
        let problem = LmiProblem::new(model, sr.clone(), LmiBounds::default()).unwrap();
        let out = solve_feasibility(&problem, &FeasTolerances::default());
        assert!(
            !out.is_feasible(),
            "trial {trial}: D = 0 under passivity can never be strictly feasible"
        );
    }
    report(
        2,
        start.elapsed().as_secs_f64(),
        10.0,
        "25/25 feedthrough-free passivity instances infeasible",
    );
}

#[test]
fn criterion_3_oracle_consistency() {
    let start = Instant::now();
    let mut rng = Lcg(0x5eed_0003);
    let grid = log_grid(1e-3, 1e3, 200);
    let bounds = LmiBounds {
        rho_min: 0.0,
        nu_min: 0.0,
        p_floor: 1e-6,
    };
    let mut feasible_count = 0usize;
    for trial in 0..100 {
        let n = rng.usize_in(1, 3).min(3);
        let model = random_stable_model(&mut rng, n, None);
        let sr = match trial % 3 {
            0 => make_supply_rate(SupplyPreset::Passivity, 1, 1).unwrap(),
            1 => make_supply_rate(
                SupplyPreset::L2Gain {
                    gamma: rng.uniform(0.5, 4.0),
                },
                1,
                1,
            )
            .unwrap(),
            _ => make_supply_rate(
                SupplyPreset::Conic {
                    center: rng.uniform(-1.0, 1.0),
                    radius: rng.uniform(0.5, 3.0),
                },
                1,
                1,
            )
            .unwrap(),
        };
        let problem = LmiProblem::new(model.clone(), sr.clone(), bounds).unwrap();
        let out = solve_feasibility(&problem, &FeasTolerances::default());
        if out.is_feasible() {
            feasible_count += 1;
            let oracle = frequency_domain_oracle(&model, &sr, &grid).unwrap();
            assert!(
                oracle.min_eig >= -1e-6,
                "trial {trial}: certified dissipative but the frequency oracle refutes it \
                 (min eig {} at omega {})",
                oracle.min_eig,
                oracle.omega_at_min
            );
        }
    }
    assert!(
        feasible_count > 10,
        "the random family should contain feasible instances (got {feasible_count})"
    );
    report(
        3,
        start.elapsed().as_secs_f64(),
        60.0,
        "no LMI/frequency-oracle contradiction over 100 systems",
    );
}

#[test]
fn criterion_4_identification_round_trip() {
    let start = Instant::now();
    let truth = StateSpaceModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.3]),
        DMatrix::from_element(1, 1, 0.5),
    )
    .unwrap();
    let mk_sig = |seed: usize| {
        let amps = vec![0.2; 6];
        let freqs: Vec<f64> = (0..6).map(|i| 0.2 * 2f64.powi(i as i32)).collect();
        let phases: Vec<f64> = (0..6).map(|i| (seed * 7 + i * 13) as f64 * 0.37).collect();
        InputSignal::new(
            SignalKind::Multisine {
                amplitudes: amps,
                frequencies: freqs,
                phases,
            },
            30.0,
            0.01,
        )
        .unwrap()
    };
    let trajs: Vec<Trajectory> = (0..2)
        .map(|s| simulate_linear(&truth, &DVector::zeros(2), &mk_sig(s)).unwrap())
        .collect();
    let data = Dataset::new(trajs).unwrap();
    let fit = fit_baseline(&data, &FitConfig::default()).unwrap();

    let want = markov_parameters(&truth, 11);
    let got = markov_parameters(&fit.model, 11);
    for (k, (w, g)) in want.iter().zip(got.iter()).enumerate() {
        let scale = w.amax().max(1.0);
        assert!(
            (w - g).amax() <= 1e-4 * scale,
            "Markov parameter {k}: wanted {w}, got {g}"
        );
    }
    let norm_y: f64 = data
        .trajectories()
        .iter()
        .map(|t| t.y.norm_squared())
        .sum();
    assert!(
        fit.delta_y_bar < 1e-6 * norm_y,
        "residual {} vs 1e-6 * {norm_y}",
        fit.delta_y_bar
    );
    report(
        4,
        start.elapsed().as_secs_f64(),
        10.0,
        "first 10 Markov parameters within 1e-4, residual below 1e-6 of signal energy",
    );
}

/// Deterministic multisine used by the end-to-end benchmark pipeline.
fn benchmark_signal(duration: f64, dt: f64, seed: u64) -> InputSignal {
    let n_sines = 8usize;
    let freqs: Vec<f64> = (0..n_sines)
        .map(|i| 0.1 * (5.0f64 / 0.1).powf(i as f64 / (n_sines - 1) as f64))
        .collect();
    let mut rng = Lcg(seed);
    let phases: Vec<f64> = (0..n_sines)
        .map(|_| rng.next_f64() * std::f64::consts::TAU)
        .collect();
    InputSignal::new(
        SignalKind::Multisine {
            amplitudes: vec![0.4 / n_sines as f64; n_sines],
            frequencies: freqs,
            phases,
        },
        duration,
        dt,
    )
    .unwrap()
}

#[test]
fn criterion_5_benchmark_end_to_end() {
    let start = Instant::now();
    let sys = example1_system();
    let dt = 1e-3;
    let train: Vec<Trajectory> = (1..=4)
        .map(|s| {
            simulate_nonlinear(&sys, &DVector::zeros(2), &benchmark_signal(20.0, dt, s)).unwrap()
        })
        .collect();
    let held_out =
        simulate_nonlinear(&sys, &DVector::zeros(2), &benchmark_signal(20.0, dt, 10)).unwrap();
    let data = Dataset::new(train).unwrap();

    let fit = fit_baseline(&data, &FitConfig::default()).unwrap();
    assert_eq!(fit.model.state_dim(), 2);

    let sr = make_supply_rate(SupplyPreset::StrictPassivity { a: 0.45, b: 0.01 }, 1, 1).unwrap();

    // clause: the baseline itself is not strictly dissipative
    let baseline_check = solve_feasibility(
        &LmiProblem::new(fit.model.clone(), sr.clone(), LmiBounds::default()).unwrap(),
        &FeasTolerances::default(),
    );
    assert!(
        !baseline_check.is_feasible(),
        "the baseline must be infeasible for the enforcement stage to be exercised"
    );

    // clause: the search recovers a positive gamma with a sound certificate
    let cfg = AlgorithmConfig {
        policy: ConstraintPolicy::Report,
        ..AlgorithmConfig::default()
    };
    let rep = run_algorithm1(&data, &fit, &sr, &cfg).expect("perturbation search succeeds");
    assert!(rep.gamma > 0.0, "gamma = {}", rep.gamma);
    assert!(!rep.baseline_lmi_feasible);
    let check = verify_certificate(&rep.model, &sr, &rep.certificate);
    assert!(
        check.ok,
        "independent certificate verification failed: {check:?}"
    );

    // clause: the certified model still explains held-out data
    let x0 = estimate_initial_state(&rep.model, &held_out.u, &held_out.y, dt).unwrap();
    let sim = simulate_linear_from(&rep.model, &x0, &held_out.u, 0.0, dt).unwrap();
    let nrmse = nrmse_percent(&held_out.y, &sim.y);
    assert!(nrmse >= 70.0, "validation NRMSE {nrmse:.2}% < 70%");

    // validation-side triangle chain on held-out data
    let x0_b = estimate_initial_state(&fit.model, &held_out.u, &held_out.y, dt).unwrap();
    let sim_b = simulate_linear_from(&fit.model, &x0_b, &held_out.u, 0.0, dt).unwrap();
    let total = (&held_out.y - &sim.y).norm();
    let base = (&held_out.y - &sim_b.y).norm();
    let pert = (&sim_b.y - &sim.y).norm();
    assert!(
        total <= base + pert + 1e-9,
        "triangle chain violated: {total} > {base} + {pert}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 5 exceeded its budget: {elapsed:.2} s");

    // final clause: the certificate passes both scalar margin checks. This
    // cannot hold for passivity-family supply rates: the input-margin
    // bound requires nu >= ||S+QD||^2 + 2(||Q||^2+1)(L_g+||D||)^2 >= 1/4,
    // while the (2,2) block of the inequality caps nu strictly below
    // lambda_min(R_hat) <= ||D||, and 1/4 + 2x^2 > x for every x. The
    // state-margin bound likewise exceeds the largest rho the block
    // inequality can absorb (here by two orders of magnitude). See the
    // README limitations section for the full argument.
    if !(rep.l1_check_passed && rep.l2_check_passed) {
        println!(
            "criterion 5: FAIL ({elapsed:.2} s) — all pipeline clauses pass \
             (baseline infeasible, gamma = {:.4} > 0, certificate verified, \
             NRMSE = {nrmse:.1}% >= 70%), but the scalar margin checks are \
             mathematically unattainable for strict-passivity supply rates \
             (l1: {}, l2: {})",
            rep.gamma, rep.l1_check_passed, rep.l2_check_passed
        );
        panic!(
            "criterion 5: the scalar margin checks (l1 = {}, l2 = {}) cannot be \
             satisfied jointly with the feasibility inequality for \
             passivity-family supply rates; every other clause passed",
            rep.l1_check_passed, rep.l2_check_passed
        );
    }
    report(5, elapsed, 120.0, "benchmark end-to-end reproduction");
}

#[test]
fn criterion_6_gamma_minimality() {
    let start = Instant::now();
    // first-order baselines with output matrices the all-ones perturbation
    // can cancel, under l2-gain supply rates with a generous bound, so the
    // full constraint set (block inequality + both scalar margins) is
    // satisfiable and the minimum feasible gamma is well defined
    let instances: [(f64, f64, f64); 5] = [
        (10.0, 1.0, 6.0),
        (9.0, 0.5, 5.0),
        (11.5, 1.0, 7.0),
        (11.0, 1.5, 8.0),
        (10.5, 0.8, 7.0),
    ];
    let cfg = AlgorithmConfig {
        policy: ConstraintPolicy::Enforce,
        lipschitz_override: Some(0.0),
        eps_g_override: Some(0.05),
        ..AlgorithmConfig::default()
    };
    for (idx, &(c0, d0, gain)) in instances.iter().enumerate() {
        let baseline = StateSpaceModel::siso(-1.0, 1.0, -c0, d0);
        let sr = make_supply_rate(SupplyPreset::L2Gain { gamma: gain }, 1, 1).unwrap();

        // brute-force minimum over the grid, scanning upward
        let mut grid_min = None;
        let mut g = 0.0f64;
        while g <= 15.0 + 1e-12 {
            if probe_gamma(&baseline, &sr, g, 0.0, &cfg).unwrap().is_some() {
                grid_min = Some(g);
                break;
            }
            g += 0.01;
        }
        let grid_min = grid_min.unwrap_or_else(|| {
            panic!("instance {idx}: the brute-force grid found no feasible gamma")
        });
        assert!(grid_min > 0.0, "instance {idx}: baseline should be infeasible");

        // a stub fit result: the model is crafted, not identified
        let fit = FitResult {
            model: baseline.clone(),
            delta_y_bar: 1e-3,
            nrmse_fit: vec![],
        };
        let sig = InputSignal::new(SignalKind::Step { level: 0.1 }, 2.0, 0.01).unwrap();
        let tr = simulate_linear(&baseline, &DVector::zeros(1), &sig).unwrap();
        let data = Dataset::new(vec![tr]).unwrap();

        let rep = run_algorithm1(&data, &fit, &sr, &cfg)
            .unwrap_or_else(|e| panic!("instance {idx}: search failed: {e}"));
        let err = (rep.gamma - grid_min).abs();
        assert!(
            err <= cfg.gamma_tol + 0.01,
            "instance {idx}: search gamma {} vs grid minimum {grid_min} (|diff| = {err})",
            rep.gamma
        );
        assert!(rep.l1_check_passed && rep.l2_check_passed);
        let check = verify_certificate(&rep.model, &sr, &rep.certificate);
        assert!(check.ok);
    }
    report(
        6,
        start.elapsed().as_secs_f64(),
        60.0,
        "5/5 crafted instances: bisection matches the brute-force grid minimum",
    );
}

#[test]
fn criterion_7_formula_suite() {
    let start = Instant::now();
    let scalar = |v: f64| DMatrix::from_element(1, 1, v);
    let tol = 1e-9;

    // state-margin constraint arithmetic
    let passivity = make_supply_rate(SupplyPreset::Passivity, 1, 1).unwrap();
    assert!((constraint_l1_rhs(&passivity, &scalar(1.0), 0.0).unwrap() - 2.0).abs() < tol);
    assert!(check_constraint_l1(2.0, &passivity, &scalar(1.0), 0.0).unwrap());
    assert!(!check_constraint_l1(1.9, &passivity, &scalar(1.0), 0.0).unwrap());
    assert!(constraint_l1_rhs(&passivity, &scalar(0.0), 0.0).unwrap().abs() < tol);
    let unit_q = SupplyRate::new(scalar(-1.0), scalar(0.0), scalar(0.0)).unwrap();
    assert!((constraint_l1_rhs(&unit_q, &scalar(1.0), 1.0).unwrap() - 17.0).abs() < tol);

    // input-margin constraint arithmetic
    assert!((constraint_l2_rhs(&passivity, &scalar(0.0), 0.0).unwrap() - 0.25).abs() < tol);
    let zero_sr = SupplyRate::new(scalar(0.0), scalar(0.0), scalar(0.0)).unwrap();
    assert!(constraint_l2_rhs(&zero_sr, &scalar(0.0), 0.0).unwrap().abs() < tol);
    let mixed = SupplyRate::new(scalar(-1.0), scalar(0.5), scalar(0.0)).unwrap();
    assert!((constraint_l2_rhs(&mixed, &scalar(0.1), 2.0).unwrap() - 17.8).abs() < tol);

    // local margins are linear offsets
    let rhs1 = constraint_l1_rhs(&passivity, &scalar(1.0), 0.0).unwrap();
    let rhs2 = constraint_l2_rhs(&passivity, &scalar(0.0), 0.0).unwrap();
    let cert = DissipativityCertificate {
        p: scalar(1.0),
        rho: rhs1 + 1.0,
        nu: rhs2 + 0.5,
        margin: -0.1,
    };
    let m = local_margins(&cert, &passivity, &scalar(1.0), &scalar(0.0), 0.0).unwrap();
    assert!((m.rho_hat - 1.0).abs() < tol && (m.nu_hat - 0.5).abs() < tol);

    // radius formula
    let eps = epsilon_radius(2.0, &scalar(1.0), &scalar(1.0), 1.0).unwrap();
    assert!((eps - 1.0 / (3.0 * 2f64.sqrt())).abs() < tol);
    assert_eq!(epsilon_radius(2.0, &scalar(1.0), &scalar(1.0), 0.0).unwrap(), 0.0);
    let eps = epsilon_radius(0.0, &scalar(3.0), &scalar(1.0), 1.0).unwrap();
    assert!((eps - 1.0 / (3.0 * 2f64.sqrt())).abs() < tol);

    // radius shrinks monotonically while the output-matrix norm grows
    let c0 = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
    let mut prev = f64::INFINITY;
    for i in 0..30 {
        let c = &c0 + rank_one_perturbation(0.1 * i as f64, 1, 2);
        let eps = epsilon_radius(1.0, &c, &scalar(0.1), 1.0).unwrap();
        assert!(eps < prev, "radius must shrink: {eps} at step {i}");
        prev = eps;
    }

    // degradation factor arithmetic and its quadratic scaling in epsilon
    let d = fit_degradation(0.0, 0.7, 3.0).unwrap();
    assert_eq!(d.beta, 0.0);
    assert!((d.delta_y_tilde - 3.0).abs() < tol);
    let d = fit_degradation(2.0, 0.5, 1.0).unwrap();
    assert!((d.beta - 0.5).abs() < tol && (d.delta_y_tilde - 1.5).abs() < tol);
    let d1 = fit_degradation(1.7, 0.3, 2.2).unwrap();
    let d2 = fit_degradation(1.7, 0.6, 2.2).unwrap();
    assert!((d2.beta - 4.0 * d1.beta).abs() < tol);

    report(
        7,
        start.elapsed().as_secs_f64(),
        10.0,
        "all closed-form examples reproduced to 1e-9",
    );
}

#[test]
fn criterion_8_integrator_order_and_zoh_exactness() {
    let start = Instant::now();
    // RK4 order on dx/dt = -x
    let sys = NonlinearSystem::new(
        1,
        1,
        1,
        Box::new(|x: &DVector<f64>, _: &DVector<f64>| -x.clone()),
        Box::new(|x: &DVector<f64>, _: &DVector<f64>| x.clone()),
    )
    .unwrap();
    let x0 = DVector::from_element(1, 1.0);
    let exact = (-1.0f64).exp();
    let err_at = |dt: f64| {
        let sig = InputSignal::new(SignalKind::Zero, 1.0, dt).unwrap();
        let tr = simulate_nonlinear(&sys, &x0, &sig).unwrap();
        (tr.y[(tr.len() - 1, 0)] - exact).abs()
    };
    let ratio = err_at(0.1) / err_at(0.05);
    assert!(
        (12.0..=20.0).contains(&ratio),
        "dt-halving error ratio {ratio} outside [12, 20]"
    );

    // exact ZOH sampling of the scalar exponential
    let model = StateSpaceModel::siso(-1.0, 0.0, 1.0, 0.0);
    let sig = InputSignal::new(SignalKind::Zero, 2.0, 0.1).unwrap();
    let tr = simulate_linear(&model, &DVector::from_element(1, 1.0), &sig).unwrap();
    for k in 0..tr.len() {
        assert!(
            (tr.y[(k, 0)] - (-0.1 * k as f64).exp()).abs() <= 1e-12,
            "sample {k} deviates from the analytic exponential"
        );
    }
    report(
        8,
        start.elapsed().as_secs_f64(),
        10.0,
        "RK4 order confirmed, linear sampling exact to 1e-12",
    );
}
