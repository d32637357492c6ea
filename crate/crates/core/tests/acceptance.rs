//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line; exits non-zero if any
//! criterion fails.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, Matrix3, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

use support::{random_rotation, random_state, random_vector, rng, unit_vector, InputScript, WingPair};
use swivel_core::controller::{mz_derivatives, tau_delta_from_uz, ControlGains, GainsConfig};
use swivel_core::dynamics::{
    kinetic_energy, swivel_acceleration, total_angular_momentum, wing_attitudes, Plant, VehicleParams, SWIVEL_GUARD,
};
use swivel_core::ode::rk4_step;
use swivel_core::scenario::read_scenario;
use swivel_core::sim::run_scenario;
use swivel_core::so3::{
    attitude_error, config_error_psi, critical_points, euler312_to_rotation, exp_so3, hat, log_so3,
    rotation_to_euler312, vee, ErrorGainMatrix, Euler312, Rotation,
};
use swivel_core::stability::{
    check_gain_rules, classify_equilibria, error_dynamics, from_local_coordinates, linearized_system,
    local_coordinates, lyapunov_value, Classification, ErrorState,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_gains() -> ControlGains {
    ControlGains::try_from(GainsConfig::default()).unwrap()
}

fn flight_run() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/flight.toml");
    let sc = read_scenario(&path).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = run_scenario(&sc).map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();
    let m = &out.metrics;
    let settle = m.settling_time;
    let detail = format!(
        "settling {settle:?} s, final psi {:.2e}, wall clock {wall:.2} s, failure {:?}",
        m.final_psi, m.failure
    );
    check(!out.diverged() && settle.is_some_and(|t| t < 2.5) && wall < 5.0, detail)
}

fn actuator_feasibility() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/flight.toml");
    let sc = read_scenario(&path).map_err(|e| e.to_string())?;
    let m = run_scenario(&sc).map_err(|e| e.to_string())?.metrics;
    let detail = format!(
        "peak after transient {:.3} N (overall {:.3} N), saturation duty {:.2}%",
        m.peak_motor_command_after_transient,
        m.peak_motor_command,
        100.0 * m.saturation_duty
    );
    check(m.peak_motor_command_after_transient <= 6.74 && m.saturation_duty < 0.02, detail)
}

/// Per-equilibrium `(classification, number of stable eigenvalues)`.
fn signature(g: &ControlGains, j: &Matrix3<f64>) -> Result<Vec<(Classification, usize)>, String> {
    let reports = classify_equilibria(g, j).map_err(|e| e.to_string())?;
    let unstable_ok = reports[1..].iter().all(|r| r.eigenvalues.iter().any(|l| l.re > 1e-6));
    if !unstable_ok {
        return Err("a non-identity equilibrium has no eigenvalue with Re > 1e-6".into());
    }
    Ok(reports.iter().map(|r| (r.classification, r.n_stable)).collect())
}

fn equilibrium_classification() -> Outcome {
    let j = VehicleParams::default().nominal_inertia();
    let reference = signature(&default_gains(), &j)?;
    let expected_shape = reference[0] == (Classification::DesiredStable, 12)
        && reference[1..].iter().all(|(c, _)| *c == Classification::Saddle);
    if !expected_shape {
        return Err(format!("default gains give {reference:?}"));
    }
    let mut rng = rng(3);
    let (mut accepted, mut drawn) = (0, 0);
    while accepted < 100 {
        drawn += 1;
        if drawn > 100_000 {
            return Err(format!("only {accepted} rule-satisfying gain sets found"));
        }
        let mut p: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..2.0));
        p.sort_by(f64::total_cmp);
        if p[1] - p[0] < 0.05 || p[2] - p[1] < 0.05 {
            continue;
        }
        let Ok(pm) = ErrorGainMatrix::diagonal(p) else { continue };
        let g = ControlGains::new(
            rng.random_range(0.5..10.0),
            rng.random_range(0.3..5.0),
            pm,
            std::array::from_fn(|_| rng.random_range(1.0..2.0)),
            std::array::from_fn(|_| rng.random_range(8.0..60.0)),
        )
        .map_err(|e| e.to_string())?;
        if !check_gain_rules(&g, &j).map_err(|e| e.to_string())?.all_pass() {
            continue;
        }
        let sig = signature(&g, &j)?;
        if sig != reference {
            return Err(format!("gain set {g:?} gives {sig:?}, defaults give {reference:?}"));
        }
        accepted += 1;
    }
    Ok(format!("defaults {reference:?}; 100 of {drawn} random gain sets passed the rules and matched"))
}

fn exact_linearization() -> Outcome {
    let p = VehicleParams::default();
    let mut rng = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let delta = rng.random_range(-30f64..30.0).to_radians();
        let delta_rate = rng.random_range(-3.0..3.0);
        let omega = random_vector(&mut rng, 5.0);
        let thrust = rng.random_range(1.0..8.0);
        let u_z = rng.random_range(0.1..50.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let tau = tau_delta_from_uz(u_z, delta, delta_rate, omega.y, omega.z, thrust, &p).map_err(|e| e.to_string())?;
        let delta_accel = swivel_acceleration(delta, &omega, tau, &p);
        let (_, mz_accel) = mz_derivatives(delta, delta_rate, delta_accel, thrust, p.arm).map_err(|e| e.to_string())?;
        worst = worst.max((mz_accel - u_z).abs() / u_z.abs());
    }
    check(worst < 1e-9, format!("worst relative error {worst:.2e} over 10^4 states"))
}

/// The proof's sufficient condition for `V̇ ≤ 0`: the rate damping dominates
/// the moment error, `k_ω‖e_ω‖ > ‖M_e‖`.
fn rate_dominates(e: &ErrorState, g: &ControlGains) -> bool {
    g.k_omega * e.e_omega.norm() > e.m_e.norm()
}

fn lyapunov_monotonicity() -> Outcome {
    let g = default_gains();
    let j = VehicleParams::default().nominal_inertia();
    let mut rng = rng(5);
    let h = 1e-3;
    let (mut worst_rise, mut worst_final, mut latest_t0): (f64, f64, f64) = (f64::NEG_INFINITY, 0.0, 0.0);
    for _ in 0..50 {
        let mut e = ErrorState {
            r_e: random_rotation(&mut rng, 170f64.to_radians()),
            e_omega: random_vector(&mut rng, 2.0),
            m_e: random_vector(&mut rng, 1.0),
            m_e_rate: random_vector(&mut rng, 5.0),
        };
        let mut trace = Vec::with_capacity(10_001);
        trace.push((lyapunov_value(&e, &g, &j), rate_dominates(&e, &g)));
        for _ in 0..10_000 {
            e = rk4_step(&e, h, |e| error_dynamics(e, &g, &j)).map_err(|e| e.to_string())?;
            trace.push((lyapunov_value(&e, &g, &j), rate_dominates(&e, &g)));
        }
        // t0 is the first sample after the last violation of the condition
        let k0 = trace.iter().rposition(|&(_, ok)| !ok).map_or(0, |k| k + 1);
        for w in trace[k0.min(trace.len() - 1)..].windows(2) {
            worst_rise = worst_rise.max(w[1].0 - w[0].0);
        }
        latest_t0 = latest_t0.max(k0 as f64 * h);
        worst_final = worst_final.max(trace.last().expect("non-empty").0);
    }
    let detail = format!(
        "largest step increase after t0 {worst_rise:.2e}, latest t0 {latest_t0:.3} s, largest V(10 s) {worst_final:.2e}"
    );
    check(worst_rise <= 1e-9 && worst_final < 1e-6, detail)
}

fn two_body_equivalence() -> Outcome {
    let p = VehicleParams::default();
    let plant = Plant { params: p, motor_lag: false };
    let mut rng = rng(6);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let mut max_delta: f64 = 0.0;
    for _ in 0..20 {
        let script = InputScript::random(&mut rng);
        let mut s = random_state(&mut rng);
        let mut pair = WingPair::from_frame0(&s);
        for k in 0..2000 {
            let f = script.at(k as f64 * h, &p);
            s = rk4_step(&s, h, |x| plant.derivative(x, &f)).map_err(|e| e.to_string())?;
            pair = pair.step(&f, &p, h);
            let (r1, _) = wing_attitudes(&s);
            worst = worst.max((r1.matrix() - pair.r1).norm());
            max_delta = max_delta.max(s.delta.abs());
        }
    }
    check(
        worst < 1e-5 && max_delta < SWIVEL_GUARD,
        format!("max Frobenius R1 deviation {worst:.2e} over 20 runs of 2 s (max |delta| {max_delta:.2} rad)"),
    )
}

fn conservation() -> Outcome {
    let p = VehicleParams::default();
    let plant = Plant { params: p, motor_lag: false };
    let mut rng = rng(7);
    let (mut dh, mut de): (f64, f64) = (0.0, 0.0);
    for _ in 0..5 {
        let mut s = random_state(&mut rng);
        let h0 = total_angular_momentum(&s, &p).map_err(|e| e.to_string())?;
        let e0 = kinetic_energy(&s, &p).map_err(|e| e.to_string())?;
        for _ in 0..5000 {
            s = rk4_step(&s, 1e-3, |x| plant.derivative(x, &[0.0; 4])).map_err(|e| e.to_string())?;
            let h1 = total_angular_momentum(&s, &p).map_err(|e| e.to_string())?;
            dh = dh.max((h1 - h0).norm() / h0.norm());
            de = de.max((kinetic_energy(&s, &p).map_err(|e| e.to_string())? - e0).abs() / e0);
        }
    }
    check(dh < 1e-6 && de < 1e-6, format!("relative drift: momentum {dh:.2e}, energy {de:.2e}"))
}

/// Largest deviation between the nonlinear error flow and the linear flow
/// from the same `ε`-perturbation, in local coordinates around `r_eq`.
fn flow_deviation(
    r_eq: &Rotation,
    dir: &DVector<f64>,
    eps: f64,
    g: &ControlGains,
    j: &Matrix3<f64>,
) -> Result<f64, String> {
    let s = linearized_system(r_eq, g, j).map_err(|e| e.to_string())?;
    let mut lin = dir * eps;
    let mut nl = from_local_coordinates(&lin, r_eq);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        nl = rk4_step(&nl, h, |e| error_dynamics(e, g, j)).map_err(|e| e.to_string())?;
        lin = rk4_step(&lin, h, |x| Ok(&s * x)).map_err(|e| e.to_string())?;
        worst = worst.max((local_coordinates(&nl, r_eq) - &lin).norm());
    }
    Ok(worst)
}

fn linearization_validity() -> Outcome {
    let g = default_gains();
    let j = VehicleParams::default().nominal_inertia();
    let mut rng = rng(8);
    let mut ratios = Vec::new();
    for r_eq in critical_points(&g.p).map_err(|e| e.to_string())? {
        let dir = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let coarse = flow_deviation(&r_eq, &dir, 1e-3, &g, &j)?;
        let fine = flow_deviation(&r_eq, &dir, 1e-4, &g, &j)?;
        // observed order p from a decade in ε, expressed as the ratio for halving ε
        let order = (coarse / fine).log10();
        ratios.push(2f64.powf(order));
    }
    let detail = format!("halving ratios {:?}", ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>());
    check(ratios.iter().all(|r| (r - 4.0).abs() <= 0.5), detail)
}

/// Newton iteration on `e_R = 0` with a finite-difference Jacobian.
fn newton_critical_point(mut r: Rotation, p: &ErrorGainMatrix) -> Option<Rotation> {
    for _ in 0..100 {
        let e = attitude_error(&r, p);
        if e.norm() < 1e-13 {
            return Some(r);
        }
        let h = 1e-7;
        let jac = Matrix3::from_columns(&[0, 1, 2].map(|i| {
            let d = Vector3::ith(i, h);
            (attitude_error(&(r * exp_so3(&d)), p) - attitude_error(&(r * exp_so3(&-d)), p)) / (2.0 * h)
        }));
        let mut step = -jac.try_inverse()? * e;
        if step.norm() > 0.5 {
            step *= 0.5 / step.norm();
        }
        r = r * exp_so3(&step);
    }
    None
}

fn kernel_properties() -> Outcome {
    let start = Instant::now();
    let p = default_gains().p;
    let mut runner = TestRunner::new(Config { cases: 2000, failure_persistence: None, ..Config::default() });
    let vec3 = |m: f64| proptest::array::uniform3(-m..m).prop_map(Vector3::from);

    runner
        .run(&vec3(10.0), |v| {
            prop_assert!((vee(&hat(&v)).unwrap() - v).norm() < 1e-15);
            Ok(())
        })
        .map_err(|e| format!("hat/vee: {e}"))?;
    runner
        .run(&(vec3(1.0), 0.0..std::f64::consts::PI - 1e-6), |(axis, angle)| {
            prop_assume!(axis.norm() > 1e-3);
            let v = axis.normalize() * angle;
            let r = exp_so3(&v);
            prop_assert!(r.is_valid());
            prop_assert!((log_so3(&r) - v).norm() < 1e-9);
            Ok(())
        })
        .map_err(|e| format!("exp/log: {e}"))?;
    let limit = std::f64::consts::PI;
    runner
        .run(&(-limit..limit, -1.5..1.5, -limit..limit), |(yaw, roll, pitch)| {
            let e = Euler312::new(yaw, roll, pitch);
            let back = rotation_to_euler312(&euler312_to_rotation(&e)).unwrap();
            prop_assert!((back.yaw - yaw).abs() < 1e-9 && (back.roll - roll).abs() < 1e-9);
            prop_assert!((back.pitch - pitch).abs() < 1e-9);
            Ok(())
        })
        .map_err(|e| format!("euler312: {e}"))?;
    runner
        .run(&(vec3(3.0), vec3(1.0)), |(w, eta)| {
            let r = exp_so3(&w);
            let h = 1e-6;
            let fd = (config_error_psi(&(r * exp_so3(&(eta * h))), &p)
                - config_error_psi(&(r * exp_so3(&(eta * -h))), &p))
                / (2.0 * h);
            prop_assert!((fd - attitude_error(&r, &p).dot(&eta)).abs() < 1e-5);
            Ok(())
        })
        .map_err(|e| format!("gradient: {e}"))?;

    // every Newton root lands on one of the four predicted critical points
    let critical = critical_points(&p).map_err(|e| e.to_string())?;
    let mut rng = rng(9);
    let mut hits = [0usize; 4];
    let (mut converged, starts) = (0, 400);
    for _ in 0..starts {
        let Some(root) =
            newton_critical_point(exp_so3(&(unit_vector(&mut rng) * rng.random_range(0.0..std::f64::consts::PI))), &p)
        else {
            continue;
        };
        converged += 1;
        let Some(i) = critical.iter().position(|c| c.angle_to(&root) < 1e-8) else {
            return Err(format!("Newton root {root:?} is not a predicted critical point"));
        };
        hits[i] += 1;
    }
    let wall = start.elapsed().as_secs_f64();
    let detail = format!("{converged}/{starts} Newton roots cluster as {hits:?}; suite took {:.1} ms", 1e3 * wall);
    check(hits.iter().all(|&n| n > 0) && converged * 10 >= starts * 9 && wall < 60.0, detail)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("flight scenario converges", flight_run),
        ("actuator feasibility", actuator_feasibility),
        ("equilibrium classification", equilibrium_classification),
        ("exact yaw linearization", exact_linearization),
        ("Lyapunov monotonicity", lyapunov_monotonicity),
        ("two-body equivalence", two_body_equivalence),
        ("conservation", conservation),
        ("linearization validity", linearization_validity),
        ("kernel properties", kernel_properties),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
            let msg =
                panic.downcast_ref::<String>().cloned().or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} [{tag}] {name}: {detail}", i + 1);
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
