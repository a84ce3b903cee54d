//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Exits non-zero if a criterion fails that is not listed in `KNOWN_FAILING`.
//! Criteria listed there are still evaluated and reported.

use std::time::Instant;

use mts_core::coupling::{CoupledSystem, Force, SignedBooleanMatrix, Subdomain};
use mts_core::diagnostics::{drift_record, energy_norm, predict_drift, subcycling_indicator};
use mts_core::linalg::{DenseMatrix, SparseMatrix};
use mts_core::newmark::NewmarkParams;
use mts_core::problems::{
    build_bar_1d, build_plate_2d, build_scenario, build_sdof2, displacement_extrema, release_forces, Overrides,
    Scenario,
};
use mts_core::runner::{Method, Simulation};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const KNOWN_FAILING: [u32; 3] = [2, 9, 10];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sim(sys: CoupledSystem, method: Method) -> Simulation {
    Simulation::new(sys, method).expect("simulation setup")
}

fn sdof2_single_rate(dt: f64) -> Scenario {
    build_sdof2()
        .unwrap()
        .with_overrides(&Overrides {
            dt_system: Some(dt),
            eta: vec![Some(1), Some(1)],
            ..Overrides::default()
        })
        .unwrap()
}

fn energy_history(sys: CoupledSystem, method: Method, steps: usize) -> Vec<f64> {
    let mut s = sim(sys, method);
    let mut e = vec![s.initial_report().energy.total];
    s.run(steps, |_, r| e.push(r.energy.total)).unwrap();
    e
}

fn c1_energy_conservation() -> Outcome {
    let sc = sdof2_single_rate(0.02);
    let e = energy_history(sc.system.clone(), Method::Coupled, sc.num_steps());
    let worst = e.iter().map(|&x| rel(x, 0.315)).fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("max |E - 0.315| / 0.315 = {worst:.3e} over {} steps", e.len() - 1))
}

fn oracle_max_error(dt: f64) -> f64 {
    let sc = build_sdof2()
        .unwrap()
        .with_overrides(&Overrides {
            dt_system: Some(dt),
            ..Overrides::default()
        })
        .unwrap();
    let oracle = sc.oracle.clone().unwrap();
    let p = sc.probes[oracle.probe].clone();
    let mut s = sim(sc.system.clone(), Method::Coupled);
    let mut worst = 0.0f64;
    s.run(sc.num_steps(), |sys, _| {
        let err = (sys.states()[p.subdomain].d[p.dof] - (oracle.displacement)(sys.time())).abs();
        worst = worst.max(err);
    })
    .unwrap();
    worst
}

fn c2_oracle_match() -> Outcome {
    let (e1, e2) = (oracle_max_error(0.02), oracle_max_error(0.01));
    let ratio = e1 / e2;
    outcome(
        e1 <= 1e-3 && (3.5..=4.5).contains(&ratio),
        format!("max error {e1:.3e} at dt = 0.02, {e2:.3e} at dt = 0.01, ratio {ratio:.2}"),
    )
}

fn c3_backward_euler_damping() -> Outcome {
    let sc = sdof2_single_rate(0.1);
    let steps = 50;
    let be = energy_history(sc.system.clone(), Method::BackwardEuler, steps);
    let aa = energy_history(sc.system.clone(), Method::Coupled, steps);
    let be_ratio = be[steps] / be[0];
    let aa_drift = aa.iter().map(|&x| rel(x, aa[0])).fold(0.0, f64::max);
    outcome(
        be_ratio < 0.5 && aa_drift <= 1e-9,
        format!("backward Euler keeps {:.1}% at t = 5, average acceleration drifts {aa_drift:.2e}", 100.0 * be_ratio),
    )
}

fn c4_critical_steps() -> Outcome {
    let crit = |e| {
        build_bar_1d(e).unwrap().system.critical_time_steps()[1]
            .value()
            .expect("explicit subdomain has a finite critical step")
    };
    let (a, b) = (crit((5, 5, 5)), crit((5, 10, 5)));
    outcome(
        rel(a, 1.217e-4) <= 0.01 && rel(b, 6.085e-5) <= 0.01,
        format!("(5,5,5): {a:.5e}, (5,10,5): {b:.5e}"),
    )
}

fn energy_norm_monotone(sc: &Scenario) -> (bool, f64) {
    let steps = sc.num_steps();
    let loaded = steps / 5;
    let mut s = sim(sc.system.clone(), Method::Coupled);
    s.run(loaded, |_, _| {}).unwrap();
    let mut s = sim(release_forces(s.system()).unwrap(), Method::Coupled);
    let mut prev = energy_norm(s.system());
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    s.run(steps - loaded, |sys, _| {
        let now = energy_norm(sys);
        let growth = (now - prev) / prev.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(growth);
        ok &= now <= prev + 1e-10 * prev.abs();
        prev = now;
    })
    .unwrap();
    (ok, worst)
}

fn c5_energy_norm_monotone() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["sdof2", "sdof3", "bar1d", "plate2d"] {
        let sc = build_scenario(name).unwrap();
        let (pass, worst) = energy_norm_monotone(&sc);
        ok &= pass;
        parts.push(format!("{name} {worst:.1e}"));
    }
    outcome(ok, format!("largest relative step growth: {}", parts.join(", ")))
}

fn c6_drift_recurrences() -> Outcome {
    let cd = NewmarkParams::CENTRAL_DIFFERENCE;
    let base = build_plate_2d().unwrap();
    let n = base.system.num_subdomains();
    let dt = 0.02;
    let sc = base
        .with_overrides(&Overrides {
            dt_system: Some(dt),
            eta: vec![Some(1); n],
            params: vec![Some(cd); n],
        })
        .unwrap();
    let mut s = sim(sc.system.clone(), Method::Coupled);
    let mut prev = drift_record(s.system());
    let mut worst = 0.0f64;
    s.run(sc.num_steps(), |sys, _| {
        let now = drift_record(sys);
        let (a, d) = predict_drift(&prev, cd, dt);
        for (p, o) in a.iter().zip(&now.a_drift).chain(d.iter().zip(&now.d_drift)) {
            worst = worst.max((p - o).abs());
        }
        prev = now;
    })
    .unwrap();
    outcome(worst <= 1e-9, format!("max |predicted - observed| drift {worst:.2e} over {} steps", sc.num_steps()))
}

/// Per-benchmark run statistics shared by several criteria.
struct BenchRun {
    name: String,
    v_residual_ratio: f64,
    balance: f64,
    max_abs_e_interface: f64,
    final_oracle_error: Option<f64>,
    extrema: (f64, f64),
    seconds: f64,
}

fn bench(label: &str, sc: &Scenario) -> BenchRun {
    let t0 = Instant::now();
    let mut s = sim(sc.system.clone(), Method::Coupled);
    let first = s.initial_report();
    let mut v_scale = first.energy.kinetic_total().abs().sqrt().max(f64::MIN_POSITIVE);
    v_scale = v_scale.max(s.system().states().iter().flat_map(|x| x.v.iter()).fold(0.0, |m, v| m.max(v.abs())));
    let mut v_res = first.drift.norms().2;
    let mut balance = 0.0f64;
    let mut last = first.energy.total;
    let mut e_int = Vec::new();
    s.run(sc.num_steps(), |sys, r| {
        let vmax = sys.states().iter().flat_map(|x| x.v.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        v_scale = v_scale.max(vmax);
        v_res = v_res.max(r.drift.norms().2);
        balance = balance.max(r.balance_residual(last).unwrap());
        last = r.energy.total;
        e_int.push(r.energy.e_interface.unwrap());
    })
    .unwrap();
    let sys = s.system();
    let final_oracle_error = sc.oracle.as_ref().map(|o| {
        let p = &sc.probes[o.probe];
        (sys.states()[p.subdomain].d[p.dof] - (o.displacement)(sys.time())).abs()
    });
    BenchRun {
        name: label.into(),
        v_residual_ratio: v_res / v_scale,
        balance,
        max_abs_e_interface: subcycling_indicator(&e_int).max_abs,
        final_oracle_error,
        extrema: displacement_extrema(sys),
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn plate_with_eta(eta: [usize; 4]) -> Scenario {
    build_plate_2d()
        .unwrap()
        .with_overrides(&Overrides {
            eta: eta.iter().map(|&e| Some(e)).collect(),
            ..Overrides::default()
        })
        .unwrap()
}

fn bar_with_eta(eta_b: usize) -> Scenario {
    build_bar_1d((5, 5, 5))
        .unwrap()
        .with_overrides(&Overrides {
            eta: vec![None, Some(eta_b), None],
            ..Overrides::default()
        })
        .unwrap()
}

fn c7(runs: &[BenchRun]) -> Outcome {
    let worst = runs.iter().map(|r| r.v_residual_ratio).fold(0.0, f64::max);
    let detail = runs
        .iter()
        .map(|r| format!("{} {:.1e}", r.name, r.v_residual_ratio))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(worst <= 1e-8, format!("velocity residual / velocity scale: {detail}"))
}

fn c8(runs: &[BenchRun]) -> Outcome {
    let worst = runs.iter().map(|r| r.balance).fold(0.0, f64::max);
    let detail = runs
        .iter()
        .map(|r| format!("{} {:.1e}", r.name, r.balance))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(worst <= 1e-9, format!("relative balance residual: {detail}"))
}

fn c9(runs: &[&BenchRun]) -> Outcome {
    let m: Vec<f64> = runs.iter().map(|r| r.max_abs_e_interface).collect();
    outcome(
        m.windows(2).all(|w| w[1] >= w[0]),
        format!("max |e_interface| for {{5,5,5,1}}, {{10,10,10,2}}, {{20,20,20,4}}: {:.3e}, {:.3e}, {:.3e}", m[0], m[1], m[2]),
    )
}

fn c10(runs: &[&BenchRun]) -> Outcome {
    let e: Vec<f64> = runs.iter().map(|r| r.final_oracle_error.unwrap()).collect();
    outcome(
        e.windows(2).all(|w| w[1] <= w[0]),
        format!("final tip error for eta_B = 10, 100, 1000: {:.4e}, {:.4e}, {:.4e}", e[0], e[1], e[2]),
    )
}

fn c11(run: &BenchRun) -> Outcome {
    let (lo, hi) = run.extrema;
    outcome(
        rel(lo, -0.053) <= 0.15 && rel(hi, 0.133) <= 0.15,
        format!("u_min {lo:.4}, u_max {hi:.4} at t = 0.25 ({:.0} s)", run.seconds),
    )
}

// Independent reference: Newmark on the undecomposed system with velocity
// continuity, solved as one dense saddle system per step. `kkt` solves with
// `+C^T mu`, so the multiplier acting as a force is `-mu`.

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn kkt(top: &[Vec<f64>], c: &[Vec<f64>], c_scale: f64, rhs_top: &[f64], rhs_bot: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (top.len(), c.len());
    let mut a = vec![vec![0.0; n + m]; n + m];
    for i in 0..n {
        a[i][..n].copy_from_slice(&top[i]);
        for r in 0..m {
            a[i][n + r] = c[r][i];
            a[n + r][i] = c_scale * c[r][i];
        }
    }
    let mut b = rhs_top.to_vec();
    b.extend_from_slice(rhs_bot);
    let x = gauss_solve(a, b);
    (x[..n].to_vec(), x[n..].to_vec())
}

fn random_spd(rng: &mut StdRng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    let g: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| g[k][i] * g[k][j]).sum::<f64>() + if i == j { shift } else { 0.0 })
                .collect()
        })
        .collect()
}

fn sparse(a: &[Vec<f64>]) -> SparseMatrix {
    SparseMatrix::from_dense(&DenseMatrix::from_rows(a))
}

fn trial(rng: &mut StdRng) -> f64 {
    let n = [rng.gen_range(1..=6), rng.gen_range(1..=6)];
    let m = rng.gen_range(1..=n[0].min(n[1]));
    let gamma = rng.gen_range(0.5..0.8);
    let beta = rng.gen_range(gamma / 2.0..gamma / 2.0 + 0.2);
    let params = NewmarkParams::new(beta, gamma).unwrap();
    let dt = rng.gen_range(0.01..0.1);
    let mass: Vec<_> = n.iter().map(|&k| random_spd(rng, k, 0.5)).collect();
    let stiff: Vec<_> = n.iter().map(|&k| random_spd(rng, k, 0.0)).collect();
    let pick = |rng: &mut StdRng, k: usize| rand::seq::index::sample(rng, k, m).into_vec();
    let rows = [pick(rng, n[0]), pick(rng, n[1])];
    let amp: Vec<Vec<f64>> = n.iter().map(|&k| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let freq: f64 = rng.gen_range(0.5..5.0);
    let mut d0: Vec<Vec<f64>> = n.iter().map(|&k| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut v0: Vec<Vec<f64>> = n.iter().map(|&k| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    for r in 0..m {
        v0[1][rows[1][r]] = v0[0][rows[0][r]];
        d0[1][rows[1][r]] = d0[0][rows[0][r]];
    }
    let subs = (0..2)
        .map(|i| {
            let sign = if i == 0 { 1 } else { -1 };
            let nz: Vec<_> = (0..m).map(|r| (r, rows[i][r], sign)).collect();
            let a = amp[i].clone();
            let force = Force::from_fn(move |t| a.iter().map(|x| x * (freq * t).sin()).collect());
            Subdomain::new(
                sparse(&mass[i]),
                sparse(&stiff[i]),
                params,
                dt,
                force,
                SignedBooleanMatrix::new(m, n[i], &nz).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let mut sys = CoupledSystem::new(subs, dt, vec![(d0[0].clone(), v0[0].clone()), (d0[1].clone(), v0[1].clone())]).unwrap();

    // Stacked reference.
    let nt = n[0] + n[1];
    let block = |b: &[Vec<Vec<f64>>]| {
        let mut out = vec![vec![0.0; nt]; nt];
        for i in 0..n[0] {
            out[i][..n[0]].copy_from_slice(&b[0][i]);
        }
        for i in 0..n[1] {
            out[n[0] + i][n[0]..].copy_from_slice(&b[1][i]);
        }
        out
    };
    let (mm, kk) = (block(&mass), block(&stiff));
    let mut c = vec![vec![0.0; nt]; m];
    for r in 0..m {
        c[r][rows[0][r]] = 1.0;
        c[r][n[0] + rows[1][r]] = -1.0;
    }
    let force = |t: f64| -> Vec<f64> {
        amp.iter().flat_map(|a| a.iter().map(move |x| x * (freq * t).sin())).collect()
    };
    let mut d: Vec<f64> = d0.concat();
    let mut v: Vec<f64> = v0.concat();
    let kd = mat_vec(&kk, &d);
    let f0 = force(0.0);
    let rhs: Vec<f64> = f0.iter().zip(&kd).map(|(f, k)| f - k).collect();
    let (mut a, _) = kkt(&mm, &c, 1.0, &rhs, &vec![0.0; m]);
    let (b2, g) = (beta * dt * dt, gamma * dt);
    let lhs: Vec<Vec<f64>> = (0..nt).map(|i| (0..nt).map(|j| mm[i][j] + b2 * kk[i][j]).collect()).collect();

    let mut worst = 0.0f64;
    for step in 1..=100 {
        let dp: Vec<f64> = (0..nt).map(|i| d[i] + dt * v[i] + dt * dt * (0.5 - beta) * a[i]).collect();
        let vp: Vec<f64> = (0..nt).map(|i| v[i] + dt * (1.0 - gamma) * a[i]).collect();
        let kdp = mat_vec(&kk, &dp);
        let f = force(step as f64 * dt);
        let top: Vec<f64> = f.iter().zip(&kdp).map(|(f, k)| f - k).collect();
        let cv: Vec<f64> = mat_vec(&c, &vp).iter().map(|x| -x).collect();
        let (an, lam) = kkt(&lhs, &c, g, &top, &cv);
        a = an;
        d = (0..nt).map(|i| dp[i] + b2 * a[i]).collect();
        v = (0..nt).map(|i| vp[i] + g * a[i]).collect();

        sys.step().unwrap();
        let got: Vec<f64> = sys.states().iter().flat_map(|s| s.d.iter().chain(&s.v).chain(&s.a)).copied().collect();
        let want: Vec<f64> = [
            (&d[..n[0]], &v[..n[0]], &a[..n[0]]),
            (&d[n[0]..], &v[n[0]..], &a[n[0]..]),
        ]
        .iter()
        .flat_map(|(d, v, a)| d.iter().chain(v.iter()).chain(a.iter()))
        .copied()
        .chain(lam.iter().map(|x| -x))
        .collect();
        let got: Vec<f64> = got.into_iter().chain(sys.lambda().iter().copied()).collect();
        let scale = want.iter().fold(1.0f64, |s, x| s.max(x.abs()));
        let err = got.iter().zip(&want).fold(0.0f64, |e, (p, q)| e.max((p - q).abs()));
        worst = worst.max(err / scale);
    }
    worst
}

fn c12_oracle_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let worst = (0..50).map(|_| trial(&mut rng)).fold(0.0, f64::max);
    outcome(worst <= 1e-8, format!("max relative deviation from stacked saddle solve over 50 trials: {worst:.2e}"))
}

fn main() {
    let mut results: Vec<(u32, Outcome, f64)> = Vec::new();
    let timed = |id: u32, f: &dyn Fn() -> Outcome, results: &mut Vec<(u32, Outcome, f64)>| {
        let t0 = Instant::now();
        let o = f();
        results.push((id, o, t0.elapsed().as_secs_f64()));
    };
    timed(1, &c1_energy_conservation, &mut results);
    timed(2, &c2_oracle_match, &mut results);
    timed(3, &c3_backward_euler_damping, &mut results);
    timed(4, &c4_critical_steps, &mut results);
    timed(5, &c5_energy_norm_monotone, &mut results);
    timed(6, &c6_drift_recurrences, &mut results);

    let t0 = Instant::now();
    let plates: Vec<BenchRun> = [[5, 5, 5, 1], [10, 10, 10, 2], [20, 20, 20, 4]]
        .iter()
        .map(|e| bench(&format!("plate2d {e:?}"), &plate_with_eta(*e)))
        .collect();
    let bars: Vec<BenchRun> = [10, 100, 1000]
        .iter()
        .map(|&e| bench(&format!("bar1d eta_B={e}"), &bar_with_eta(e)))
        .collect();
    let mut all = vec![
        bench("sdof2", &build_scenario("sdof2").unwrap()),
        bench("sdof3", &build_scenario("sdof3").unwrap()),
        bench("bar1d (5,10,5)", &build_bar_1d((5, 10, 5)).unwrap()),
        bench("wave2d", &build_scenario("wave2d").unwrap()),
    ];
    let shared = t0.elapsed().as_secs_f64();
    let wave = all.pop().unwrap();
    let c9_runs: Vec<&BenchRun> = plates.iter().collect();
    let c10_runs: Vec<&BenchRun> = bars.iter().collect();
    let r9 = c9(&c9_runs);
    let r10 = c10(&c10_runs);
    let r11 = c11(&wave);
    let mut every: Vec<BenchRun> = all;
    every.push(wave);
    every.extend(plates);
    every.extend(bars);
    let r7 = c7(&every);
    let r8 = c8(&every);
    results.push((7, r7, shared));
    results.push((8, r8, shared));
    results.push((9, r9, shared));
    results.push((10, r10, shared));
    results.push((11, r11, shared));
    timed(12, &c12_oracle_equivalence, &mut results);

    results.sort_by_key(|r| r.0);
    let mut unexpected = 0;
    for (id, o, secs) in &results {
        let tag = if o.pass {
            "PASS"
        } else if KNOWN_FAILING.contains(id) {
            "FAIL (known)"
        } else {
            unexpected += 1;
            "FAIL"
        };
        println!("{tag} criterion {id}: {} [{secs:.2} s]", o.detail);
    }
    let passed = results.iter().filter(|r| r.1.pass).count();
    println!("{passed} of {} criteria passed, {unexpected} unexpected failures", results.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
