//! Scenario diagnostics: solve a built-in scenario, locate its singular
//! point, and print every fitted constant the monitor produces.
//!
//! Usage: `cargo run --release --example probe [pinch|pinch-affine|strip|strip-128|strip-sat]`

use parobs_core::fixtures::{self, PolyP};
use parobs_core::monitor::{self, EpsilonRule};
use parobs_core::singular::{self, ClassifyParams, PointClass};
use parobs_core::solver::{last_contact, solve};
use parobs_core::GaussQuad;

fn probe(name: &str, h: f64, gamma: f64) {
    let sc = fixtures::scenario_by_name(name, h).unwrap();
    let t0 = std::time::Instant::now();
    let report = solve(&sc).unwrap();
    let solve_time = t0.elapsed();
    let field = &report.field;
    let grid = field.grid();
    let (x_star, t_star, _) = last_contact(field, 1e-10).unwrap();
    println!(
        "== {name} h=1/{:.0}: t*={t_star:.5} x*={x_star:?} solve {solve_time:.2?}",
        1.0 / h
    );

    let radii = singular::default_r_sequence(field, &x_star, t_star);
    let params = ClassifyParams::new(sc.f_at(&x_star).unwrap());
    let class = singular::classify(field, &x_star, t_star, &radii, &params).unwrap();
    println!("   class: {class:?}");
    let smallest = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let fit = singular::fit_quadratic(
        &singular::blowup(field, &x_star, t_star, smallest, None).unwrap(),
        params.f_at_base,
    )
    .unwrap();
    println!(
        "   residuals: quad {:.3e} half {:.3e} (r = {smallest})",
        fit.residual_quadratic, fit.residual_halfspace
    );
    let (m, a) = match &class {
        PointClass::Singular { m, a } => (*m, a.clone()),
        _ => return,
    };
    let f0: f64 = (0..grid.dim).map(|i| a[i * grid.dim + i]).sum();
    let p2 = PolyP::new(grid.dim, a.clone(), f0).unwrap();
    println!("   m={m} A={a:?}");

    let quad = GaussQuad::default_for(grid.dim);
    let r_grid = monitor::default_r_grid(grid.h, grid.dt);
    println!(
        "   r_grid [{:.4}, {:.4}] ({} pts)",
        r_grid[0],
        r_grid.last().unwrap(),
        r_grid.len()
    );
    let tr = monitor::trace(field, &x_star, t_star, &p2, gamma, &r_grid, &quad).unwrap();
    for s in tr.samples.iter().step_by(4) {
        println!("   r={:.4} H={:.3e} D={:.3e} W={:+.3e} phi={:.3} phig={:.3} wHw={:+.2e} zHw={:+.2e}",
            s.r, s.h, s.d, s.w, s.phi, s.phi_gamma, s.ip_w_hw, s.ip_zw_hw);
    }

    let cubic = monitor::check_cubic(&tr, 1e12, 1e12).unwrap();
    let weiss = monitor::check_weiss(&tr, 1e12, 1e12, true).unwrap();
    let freq = monitor::check_frequency(&tr, EpsilonRule::Base, 1e12, 1e12).unwrap();
    let monneau = monitor::check_monneau(&tr, 1e12).unwrap();
    for c in cubic.iter().chain(&weiss).chain(&freq).chain([&monneau]) {
        println!("   {:<22} fitted {:.4e}", c.name, c.fitted_constant);
    }
    let lam = monitor::estimate_lambda(&tr, 0.5).unwrap();
    println!(
        "   lambda_hat {:.4} rate {:.3} resid {:.2e} tail {:.2e}",
        lam.lambda_hat, lam.rate, lam.fit_residual, lam.tail_ratio
    );
    match monitor::check_doubling(&tr, lam.lambda_hat, 0.25, 0.0, 1e12) {
        Ok(doubling) => {
            for c in &doubling {
                println!("   {:<22} fitted {:.4e}", c.name, c.fitted_constant);
            }
        }
        Err(e) => println!("   doubling: {e}"),
    }
    let radii_decay: Vec<f64> = (0..5).map(|k| 0.25 * 0.5f64.powi(k)).rev().collect();
    let (decay, check) = monitor::check_l2_decay(
        field,
        &x_star,
        t_star,
        &p2,
        lam.lambda_hat,
        0.25,
        0.2,
        &radii_decay,
    )
    .unwrap();
    println!(
        "   l2 exps: l2={:.3} sup={:.3} (check fitted {:.3})",
        decay.l2_exponent, decay.sup_exponent, check.fitted_constant
    );
    let cleaning = monitor::check_cleaning(
        field,
        &x_star,
        t_star,
        &class,
        0.5,
        0.25 * grid.h * grid.h,
        1e12,
    )
    .unwrap();
    for c in &cleaning.reports {
        println!("   {:<22} fitted {:.4e}", c.name, c.fitted_constant);
    }
    println!(
        "   cleaning violations per radius {:?} radii {:?}",
        cleaning.violations, cleaning.radii
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(|s| s.as_str()).unwrap_or("pinch");
    match what {
        "pinch" => probe("pinch-1d", 1.0 / 512.0, 2.25),
        "pinch-affine" => probe("pinch-affine-1d", 1.0 / 512.0, 2.25),
        "strip" => probe("pinch-strip-2d", 1.0 / 256.0, 2.25),
        "strip-128" => probe("pinch-strip-2d", 1.0 / 128.0, 2.25),
        "strip-sat" => {
            let sc = fixtures::scenario_by_name("pinch-strip-2d", 1.0 / 256.0).unwrap();
            let report = solve(&sc).unwrap();
            let field = &report.field;
            let (x_star, t_star, _) = last_contact(field, 1e-10).unwrap();
            let radii = singular::default_r_sequence(field, &x_star, t_star);
            let params = ClassifyParams::new(1.0);
            let class = singular::classify(field, &x_star, t_star, &radii, &params).unwrap();
            let a = match &class {
                PointClass::Singular { a, .. } => a.clone(),
                _ => panic!("{class:?}"),
            };
            let f0: f64 = (0..2).map(|i| a[i * 2 + i]).sum();
            let p2 = PolyP::new(2, a, f0).unwrap();
            let quad = GaussQuad::default_for(2);
            let r_grid = monitor::default_r_grid(field.grid().h, field.grid().dt);
            let decay_radii: Vec<f64> = (0..4).map(|k| 0.25 * 0.5f64.powi(k)).rev().collect();
            let stages = monitor::saturation_bootstrap(
                field,
                &x_star,
                t_star,
                &p2,
                &[2.25, 2.5, 2.75],
                &r_grid,
                &decay_radii,
                &quad,
                1e12,
                1e12,
            )
            .unwrap();
            for s in &stages {
                println!(
                    "gamma {:.2}: eps {:.3} (clamped {}) lambda {:.4} l2exp {:.3} supexp {:.3}",
                    s.gamma, s.epsilon, s.epsilon_clamped, s.lambda_hat, s.l2_exponent, s.sup_exponent
                );
                for c in &s.frequency {
                    println!("   {:<22} fitted {:.4e}", c.name, c.fitted_constant);
                }
            }
        }
        other => eprintln!("unknown probe {other}"),
    }
}
