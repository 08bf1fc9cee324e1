//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line with its measured figures (run with `-- --nocapture` to see
//! them). Criterion 11 (byte-identical CLI ledgers) lives in the driver
//! crate next to the binary.

use nflab::analysis::{
    commutator_check, energy_l2_balance, energy_l3, local_energy_residual, uloc_norm_scalar,
    uloc_norm_state, uloc_profile_scalar, SpaceTimeTest, UlocParams,
};
use nflab::dynamics::{simulate, LedgerParams, Model, Scheme, SchemeConfig, SimOptions, Trajectory};
use nflab::field::{bump, integrate, mean, normalize_director};
use nflab::initial::{
    preset_field, random_band_limited_scalar, random_divergence_free, Preset, PresetParams,
};
use nflab::scaling::{rescale_state, RescaleSpec};
use nflab::spectral::{
    derivative, divergence, gradient, laplacian, leray_project, riesz_transform, solve_pressure,
};
use nflab::{FlowState, PeriodicGrid, ScalarField, VectorField};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

fn grid(n: usize) -> PeriodicGrid {
    PeriodicGrid::new(n, 2.0 * PI).unwrap()
}

/// Random band-limited trig polynomial with an analytic evaluator.
struct TrigPoly {
    modes: Vec<([i64; 3], f64, f64)>,
}

impl TrigPoly {
    fn random(seed: u64, max_mode: i64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        for mx in 0..=max_mode {
            for my in -max_mode..=max_mode {
                for mz in -max_mode..=max_mode {
                    if (mx, my, mz) == (0, 0, 0) || (mx == 0 && (my < 0 || (my == 0 && mz < 0))) {
                        continue;
                    }
                    modes.push((
                        [mx, my, mz],
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ));
                }
            }
        }
        Self { modes }
    }

    fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        let mut v = 0.0;
        for (m, a, b) in &self.modes {
            let phase = m[0] as f64 * x + m[1] as f64 * y + m[2] as f64 * z;
            v += a * phase.cos() + b * phase.sin();
        }
        v
    }

    fn sample(&self, grid: PeriodicGrid) -> ScalarField {
        ScalarField::from_fn(grid, |x, y, z| self.eval(x, y, z))
    }
}

/// The criterion-4 run: small director perturbation, full model,
/// N = 32, dt = 1e-3, t in [0, 0.5], saves every 10 steps.
fn small_data_run() -> &'static Trajectory {
    static RUN: OnceLock<Trajectory> = OnceLock::new();
    RUN.get_or_init(|| small_data_run_at(1e-3, 10))
}

fn small_data_run_at(dt: f64, save_every: usize) -> Trajectory {
    let g = grid(32);
    let state = preset_field(
        Preset::SmallDirectorPerturbation,
        g,
        &PresetParams {
            epsilon: 0.02,
            seed: 7,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = SchemeConfig {
        dt,
        ..Default::default()
    };
    let mut opts = SimOptions::new(0.5, save_every, g);
    opts.ledger = LedgerParams {
        uloc_radius: 1.0,
        uloc_stride: 2,
    };
    simulate(&state, &cfg, &opts).unwrap()
}

#[test]
fn criterion_01_spectral_operator_suite() {
    let start = Instant::now();

    // gradient vs 4th-order finite differences of the analytic evaluator
    let g = grid(64);
    let poly = TrigPoly::random(5, 3);
    let f = poly.sample(g);
    let grad = gradient(&f);
    let hfd = 2.0e-3;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for ix in (0..64).step_by(7) {
        for iy in (0..64).step_by(7) {
            for iz in (0..64).step_by(7) {
                let idx = g.index(ix, iy, iz);
                let [x, y, z] = g.point(idx);
                let fd = (8.0 * (poly.eval(x + hfd, y, z) - poly.eval(x - hfd, y, z))
                    - (poly.eval(x + 2.0 * hfd, y, z) - poly.eval(x - 2.0 * hfd, y, z)))
                    / (12.0 * hfd);
                worst = worst.max((grad.component(0).values()[idx] - fd).abs());
                scale = scale.max(fd.abs());
            }
        }
    }
    let grad_rel = worst / scale;
    assert!(grad_rel < 1e-6, "gradient vs FD rel error {grad_rel}");

    // Leray idempotence and gradient annihilation
    let g16 = grid(16);
    let v = random_divergence_free(g16, 1.0, 3, 3)
        .add(&gradient(&TrigPoly::random(8, 3).sample(g16)))
        .unwrap();
    let pv = leray_project(&v);
    let ppv = leray_project(&pv);
    let idem = ppv.sub(&pv).unwrap().sup_norm();
    assert!(idem < 1e-10, "Leray idempotence defect {idem}");
    let psi = TrigPoly::random(9, 3).sample(g16);
    let annihilated = leray_project(&gradient(&psi)).sup_norm();
    assert!(annihilated < 1e-10, "Leray left a gradient of size {annihilated}");

    // sum of squared Riesz transforms resolves -(Id - mean)
    let f16 = TrigPoly::random(11, 4).sample(g16);
    let mut acc = ScalarField::zeros(g16);
    for j in 0..3 {
        let rr = riesz_transform(j, &riesz_transform(j, &f16));
        acc = acc.zip(&rr, |a, b| a + b).unwrap();
    }
    let mean_f = mean(&f16);
    let riesz_defect = acc
        .zip(&f16, |a, b| a + (b - mean_f))
        .unwrap()
        .sup_norm()
        / f16.sup_norm();
    assert!(riesz_defect < 1e-12, "Riesz resolution defect {riesz_defect}");

    // pressure residual lap P + div div g
    let g32 = grid(32);
    let u = random_divergence_free(g32, 1.0, 17, 3);
    let d = normalize_director(&VectorField::from_fns(
        g32,
        |x, y, _| (0.3 * (x.sin() + (2.0 * y).cos())).cos(),
        |x, y, _| (0.3 * (x.sin() + (2.0 * y).cos())).sin(),
        |_, y, z| 0.15 * (y - z).sin(),
    ))
    .unwrap();
    let p = solve_pressure(&u, &d).unwrap();
    let lap_p = laplacian(&p);
    let grad_d = [
        gradient(d.component(0)),
        gradient(d.component(1)),
        gradient(d.component(2)),
    ];
    let mut ddg = ScalarField::zeros(g32);
    for j in 0..3 {
        for k in 0..3 {
            let mut gjk: Vec<f64> = u
                .component(j)
                .values()
                .iter()
                .zip(u.component(k).values())
                .map(|(a, b)| a * b)
                .collect();
            for a in 0..3 {
                for (v, (x, y)) in gjk.iter_mut().zip(
                    grad_d[a]
                        .component(j)
                        .values()
                        .iter()
                        .zip(grad_d[a].component(k).values()),
                ) {
                    *v += x * y;
                }
            }
            let gf = ScalarField::from_values(g32, gjk).unwrap();
            ddg = ddg
                .zip(&derivative(&derivative(&gf, j), k), |s, v| s + v)
                .unwrap();
        }
    }
    let pressure_residual = lap_p.zip(&ddg, |a, b| a + b).unwrap().sup_norm();
    assert!(pressure_residual < 1e-8, "pressure residual {pressure_residual}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1} s, budget 10 s");
    println!(
        "criterion 1 PASS: gradient rel {grad_rel:.2e}, Leray {idem:.2e}/{annihilated:.2e}, \
         Riesz {riesz_defect:.2e}, pressure {pressure_residual:.2e} ({elapsed:.1} s)"
    );
}

#[test]
fn criterion_02_reduction_regressions() {
    let start = Instant::now();
    let g = grid(32);
    let amplitude = 1.0;
    let state = preset_field(
        Preset::TaylorGreen,
        g,
        &PresetParams {
            amplitude,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = SchemeConfig {
        dt: 1e-3,
        model: Model::NavierStokesOnly,
        ..Default::default()
    };
    let opts = SimOptions::new(1.0, 10, g);
    let traj = simulate(&state, &cfg, &opts).unwrap();

    let mut worst_rel: f64 = 0.0;
    for s in traj.states() {
        let decay = (-2.0 * s.time).exp();
        let exact = VectorField::from_fns(
            g,
            move |x, y, _| amplitude * decay * x.sin() * y.cos(),
            move |x, y, _| -amplitude * decay * x.cos() * y.sin(),
            |_, _, _| 0.0,
        );
        let diff = s.velocity.sub(&exact).unwrap().sup_norm();
        worst_rel = worst_rel.max(diff / exact.sup_norm());
    }
    assert!(worst_rel < 1e-4, "field error {worst_rel} vs analytic");

    let e2_0 = traj.ledger().entries()[0].e2;
    let mut worst_e2: f64 = 0.0;
    for e in traj.ledger().entries() {
        let exact = e2_0 * (-4.0 * e.time).exp();
        worst_e2 = worst_e2.max((e.e2 - exact).abs() / exact);
    }
    assert!(worst_e2 < 1e-4, "E2 ledger error {worst_e2}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 2 took {elapsed:.1} s, budget 120 s");
    println!(
        "criterion 2 PASS: field rel {worst_rel:.2e}, E2 rel {worst_e2:.2e} ({elapsed:.1} s)"
    );
}

#[test]
fn criterion_03_constraint_invariants() {
    let traj = small_data_run();
    let mut worst_unit: f64 = 0.0;
    let mut worst_div: f64 = 0.0;
    for s in traj.states() {
        worst_unit = worst_unit.max(s.director.unit_deviation());
        worst_div = worst_div.max(divergence(&s.velocity).sup_norm());
    }
    assert!(worst_unit < 1e-12, "max ||d|-1| = {worst_unit}");
    assert!(worst_div < 1e-10, "max |div u| = {worst_div}");
    println!("criterion 3 PASS: ||d|-1| {worst_unit:.2e}, |div u| {worst_div:.2e}");
}

#[test]
fn criterion_04_e3_monotonicity() {
    let start = Instant::now();
    let traj = small_data_run();
    let entries = traj.ledger().entries();
    let e3_0 = entries[0].e3;
    assert!(e3_0 <= 1e-2, "E3(0) = {e3_0} above the small-data precondition");
    let dt = traj.scheme().dt;
    let mut worst_rise: f64 = f64::NEG_INFINITY;
    for w in entries.windows(2) {
        let steps = ((w[1].time - w[0].time) / dt).round();
        let slack = 1e-6 * e3_0 * steps;
        worst_rise = worst_rise.max(w[1].e3 - w[0].e3 - slack);
        assert!(
            w[1].e3 <= w[0].e3 + slack,
            "E3 rose beyond slack at t = {}: {} -> {}",
            w[1].time,
            w[0].e3,
            w[1].e3
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 180.0, "criterion 4 took {elapsed:.1} s, budget 180 s");
    println!(
        "criterion 4 PASS: E3(0) = {e3_0:.3e}, worst slack margin {worst_rise:.2e} ({elapsed:.1} s)"
    );
}

#[test]
fn criterion_05_l2_balance_and_refinement() {
    let coarse = small_data_run();
    let e2_0 = coarse.ledger().entries()[0].e2;
    let max_rel = |traj: &Trajectory| -> f64 {
        energy_l2_balance(traj)
            .unwrap()
            .iter()
            .map(|r| r.residual.abs())
            .fold(0.0, f64::max)
            / e2_0
    };
    let res_coarse = max_rel(coarse);
    assert!(res_coarse < 1e-2, "relative balance residual {res_coarse}");

    // halving dt at a fixed save cadence refines both the scheme and the
    // ledger time quadrature
    let fine = small_data_run_at(5e-4, 10);
    let res_fine = max_rel(&fine);
    let order = (res_coarse / res_fine).log2();
    assert!(
        order >= 1.0,
        "balance residual order {order} (coarse {res_coarse:.3e}, fine {res_fine:.3e})"
    );
    println!(
        "criterion 5 PASS: residual {res_coarse:.3e}, refined {res_fine:.3e}, order {order:.2}"
    );
}

#[test]
fn criterion_06_local_energy_inequality() {
    let traj = small_data_run();
    let g = traj.grid();
    let e2_0 = traj.ledger().entries()[0].e2;
    let phi = SpaceTimeTest::bump(g, [PI, PI, PI], 2.5, 0.02, 0.1).unwrap();
    let report = local_energy_residual(traj, &phi, traj.end_time()).unwrap();
    let slack = 1e-3 * e2_0;
    assert!(
        report.residual <= slack && report.residual.abs() <= slack,
        "residual {} outside the slack {slack}",
        report.residual
    );
    println!(
        "criterion 6 PASS: residual {:.3e} within slack {slack:.3e}",
        report.residual
    );
}

#[test]
fn criterion_07_commutator_decomposition() {
    let start = Instant::now();
    let g = grid(16);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let gf = random_band_limited_scalar(g, 1.0, 1000 + case, 4);
        let center = [
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.0..2.0 * PI),
        ];
        let rho = rng.random_range(1.0..2.5);
        let phi = bump(g, center, rho).unwrap();
        let j = rng.random_range(0..3usize);
        let k = rng.random_range(0..3usize);
        let check = commutator_check(&phi, &gf, j, k).unwrap();
        worst = worst.max(check.decomposition_residual);
    }
    assert!(worst < 1e-11, "worst decomposition residual {worst}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 7 took {elapsed:.1} s, budget 10 s");
    println!("criterion 7 PASS: worst residual {worst:.2e} over 50 pairs ({elapsed:.1} s)");
}

#[test]
fn criterion_08_parabolic_scaling() {
    let g = grid(32);
    let state = preset_field(
        Preset::RandomBandLimited,
        g,
        &PresetParams {
            amplitude: 0.7,
            epsilon: 0.1,
            seed: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let spec = RescaleSpec::exact(2.0);
    let rescaled = rescale_state(&state, &spec).unwrap();

    let e3_before = energy_l3(&state);
    let e3_after = energy_l3(&rescaled);
    let e3_dev = (e3_after - e3_before).abs() / e3_before;
    assert!(e3_dev < 1e-8, "E3 deviation {e3_dev}");

    let l3_before = integrate(&state.velocity.magnitude_sq().map(|m| m.powf(1.5))).cbrt();
    let l3_after = integrate(&rescaled.velocity.magnitude_sq().map(|m| m.powf(1.5))).cbrt();
    let l3_dev = (l3_after - l3_before).abs() / l3_before;
    assert!(l3_dev < 1e-8, "L3 deviation {l3_dev}");

    let r = 1.0;
    let uloc_before = uloc_norm_state(&state, &UlocParams { radius: r, stride: 2 })
        .unwrap()
        .value;
    let uloc_after = uloc_norm_state(
        &rescaled,
        &UlocParams {
            radius: r / 2.0,
            stride: 2,
        },
    )
    .unwrap()
    .value;
    let uloc_dev = (uloc_after - uloc_before).abs() / uloc_before;
    assert!(uloc_dev < 1e-3, "uloc covariance deviation {uloc_dev}");

    let back = rescale_state(&rescaled, &RescaleSpec::exact(0.5)).unwrap();
    let mut round_trip: f64 = 0.0;
    for c in 0..3 {
        round_trip = round_trip.max(
            back.velocity
                .component(c)
                .zip(state.velocity.component(c), |a, b| (a - b).abs())
                .unwrap()
                .max_value(),
        );
        round_trip = round_trip.max(
            back.director
                .component(c)
                .zip(state.director.component(c), |a, b| (a - b).abs())
                .unwrap()
                .max_value(),
        );
    }
    assert!(round_trip < 1e-10, "round-trip deviation {round_trip}");
    println!(
        "criterion 8 PASS: E3 {e3_dev:.2e}, L3 {l3_dev:.2e}, uloc {uloc_dev:.2e}, \
         round trip {round_trip:.2e}"
    );
}

#[test]
fn criterion_09_uloc_properties() {
    let g = grid(64);

    // monotone in the radius on one center lattice
    let f = random_band_limited_scalar(g, 1.5, 21, 3);
    let radii = [0.3, 0.6, 1.0, 1.5, 2.0, 2.8];
    let profile = uloc_profile_scalar(&f, &radii, 4).unwrap();
    for w in profile.windows(2) {
        assert!(
            w[0].value <= w[1].value,
            "uloc not monotone: {} then {}",
            w[0].value,
            w[1].value
        );
    }

    // constant-field closed form at N = 64
    let c = 1.3;
    let constant = ScalarField::constant(g, c);
    let r = 1.0;
    let got = uloc_norm_scalar(&constant, &UlocParams { radius: r, stride: 16 })
        .unwrap()
        .value;
    let expect = c * (4.0 * PI * r * r * r / 3.0).powf(1.0 / 3.0);
    let const_dev = (got - expect).abs() / expect;
    assert!(const_dev < 0.02, "constant-field deviation {const_dev}");

    // never exceeds the global L^3 norm
    let global = integrate(&f.map(|v| v.abs().powi(3))).cbrt();
    let mut worst_excess: f64 = f64::NEG_INFINITY;
    for r in [0.4, 0.9, 1.7, PI] {
        let v = uloc_norm_scalar(&f, &UlocParams { radius: r, stride: 4 })
            .unwrap()
            .value;
        worst_excess = worst_excess.max(v - global);
        assert!(
            v <= global * (1.0 + 1e-12),
            "uloc {v} exceeds global {global} at radius {r}"
        );
    }
    println!(
        "criterion 9 PASS: monotone profile, constant field {const_dev:.3}%, \
         max excess over global {worst_excess:.2e}",
    );
}

#[test]
fn criterion_10_time_integrator_self_convergence() {
    let g = grid(16);
    let state = preset_field(
        Preset::RandomBandLimited,
        g,
        &PresetParams {
            amplitude: 0.3,
            epsilon: 0.1,
            seed: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let run = |dt: f64| -> FlowState {
        let cfg = SchemeConfig {
            dt,
            scheme: Scheme::ImexRk2,
            ..Default::default()
        };
        let opts = SimOptions::new(0.1, usize::MAX, g);
        simulate(&state, &cfg, &opts)
            .unwrap()
            .states()
            .last()
            .unwrap()
            .clone()
    };
    let coarse = run(2e-3);
    let medium = run(1e-3);
    let fine = run(5e-4);
    let dist = |a: &FlowState, b: &FlowState| -> f64 {
        let mut acc: f64 = 0.0;
        for c in 0..3 {
            acc = acc.max(
                a.velocity
                    .component(c)
                    .zip(b.velocity.component(c), |x, y| (x - y).abs())
                    .unwrap()
                    .max_value(),
            );
            acc = acc.max(
                a.director
                    .component(c)
                    .zip(b.director.component(c), |x, y| (x - y).abs())
                    .unwrap()
                    .max_value(),
            );
        }
        acc
    };
    let e1 = dist(&coarse, &medium);
    let e2 = dist(&medium, &fine);
    let order = (e1 / e2).log2();
    assert!(order >= 1.8, "observed order {order} (errors {e1:.3e}, {e2:.3e})");
    println!("criterion 10 PASS: observed order {order:.2}");
}
