//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use qpkron::coefficients::{
    make_modulated, make_periodic_bumps, make_periodic_two_level, make_piecewise, SeparableCoefficient,
    SeparableFunction, SeparableRhs, UniformGrid, UnivariateFactor,
};
use qpkron::error_bounds::{exact_flux_1d, majorant_general};
use qpkron::kron_fem::{assemble_kron_stiffness, assemble_preconditioner, densify, quadratures_for, MassTreatment};
use qpkron::lowrank::{energy_norm, singular_values, LowRankVector, TruncationPolicy};
use qpkron::operator_bounds::{compare_homogenized_vs_optimal, TwoSubdomainSetup};
use qpkron::precond::ExactInverse;
use qpkron::problem::DiscreteProblem;
use qpkron::sinc_inv::build_inverse;
use qpkron::solver::{fixed_point_step, iterate, iterate_from, pcg_solve, RhoChoice, SolveConfig, StopRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sin2(dim: usize) -> SeparableRhs<f64> {
    let s = UnivariateFactor::Sinusoid {
        offset: 0.0,
        amplitude: 1.0,
        omega: 2.0,
        phase: 0.0,
    };
    SeparableRhs::product(vec![s; dim]).unwrap()
}

fn one_rhs() -> SeparableRhs<f64> {
    SeparableRhs::new(SeparableFunction::constant(1, 1.0))
}

fn run_to(cfg: &SolveConfig<f64>, p: &DiscreteProblem<f64>) -> qpkron::solver::IterationOutcome<f64> {
    let exact = p.oracle_solution().unwrap();
    iterate(cfg, p, Some(&exact)).unwrap()
}

fn no_stop(max_iterations: usize) -> SolveConfig<f64> {
    SolveConfig {
        max_iterations,
        stop: StopRule::Residual { tol: 1e-300 },
        ..SolveConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let a = make_periodic_two_level(16, 1.0, 3.0, 0.5, 0.0, 1.0, 1.0).unwrap();
    let p = DiscreteProblem::new(
        UniformGrid::new(vec![511]).unwrap(),
        SeparableCoefficient::product(vec![a]).unwrap(),
        SeparableCoefficient::constant(1, 1.0).unwrap(),
        one_rhs(),
        MassTreatment::Lumped,
    )
    .unwrap();
    // Start far from the solution so that all 30 steps stay above the f64 round-off floor,
    // where a ratio tolerance of 1e-8 is still resolvable.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let exact = p.oracle_solution().unwrap();
    let u0 = LowRankVector::plain(DVector::from_fn(511, |_, _| 1e4 * rng.gen_range(-1.0..1.0)));
    let out = iterate_from(&no_stop(30), &p, Some(&u0), Some(&exact)).unwrap();
    let e = out.state.errors.unwrap();
    let worst = e.windows(2).map(|w| w[1] / w[0]).fold(0.0f64, f64::max);
    outcome(
        (out.state.q - 0.5).abs() < 1e-12 && worst <= 0.5 + 1e-8,
        format!("q = {:.6}, max ratio over 30 steps = {worst:.6}", out.state.q),
    )
}

fn criterion_2() -> Outcome {
    let g = UnivariateFactor::Polynomial {
        coefficients: vec![1.0, 0.5],
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.1, 0.3, 0.5] {
        let a = make_modulated(g.clone(), eps, 8).unwrap();
        let p = DiscreteProblem::new(
            UniformGrid::new(vec![511]).unwrap(),
            a,
            SeparableCoefficient::product(vec![g.clone()]).unwrap(),
            one_rhs(),
            MassTreatment::Lumped,
        )
        .unwrap();
        let out = run_to(&no_stop(60), &p);
        let e = out.state.errors.unwrap();
        // Last ratio measured while the error is well above the rounding floor.
        let last = (1..e.len())
            .rev()
            .find(|k| e[*k] > 1e-9 * e[0])
            .expect("at least one step");
        let ratio = e[last] / e[last - 1];
        ok &= ratio >= eps - 0.02 && ratio <= eps + 1e-8;
        parts.push(format!("eps {eps}: ratio {ratio:.4} at k={last}"));
    }
    outcome(ok, parts.join(", "))
}

fn random_factor(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> UnivariateFactor<f64> {
    let pieces = rng.gen_range(2..8);
    let mut cuts: Vec<usize> = (0..pieces - 1).map(|_| rng.gen_range(1..64)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let breakpoints: Vec<f64> = cuts.iter().map(|c| *c as f64 / 64.0).collect();
    let values = (0..=breakpoints.len()).map(|_| rng.gen_range(lo..hi)).collect();
    make_piecewise(breakpoints, values).unwrap()
}

fn random_rhs(rng: &mut ChaCha8Rng) -> SeparableRhs<f64> {
    let f = if rng.gen_bool(0.5) {
        UnivariateFactor::Polynomial {
            coefficients: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        }
    } else {
        UnivariateFactor::Sinusoid {
            offset: rng.gen_range(-1.0..1.0),
            amplitude: rng.gen_range(0.5..2.0),
            omega: rng.gen_range(1.0..20.0),
            phase: rng.gen_range(0.0..3.0),
        }
    };
    SeparableRhs::product(vec![f]).unwrap()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut checked = 0;
    let mut worst_eff = 0.0f64;
    for inst in 0..20 {
        let a = random_factor(&mut rng, 0.5, 5.0);
        let a0 = if inst % 2 == 0 {
            UnivariateFactor::constant(rng.gen_range(1.0..3.0))
        } else {
            random_factor(&mut rng, 1.0, 3.0)
        };
        let p = DiscreteProblem::new(
            UniformGrid::new(vec![255]).unwrap(),
            SeparableCoefficient::product(vec![a]).unwrap(),
            SeparableCoefficient::product(vec![a0]).unwrap(),
            random_rhs(&mut rng),
            MassTreatment::Lumped,
        )
        .unwrap();
        let mut cfg = no_stop(15);
        cfg.certificates = true;
        if inst % 3 == 1 {
            let r = p.spectral_report(&p.probe(), false).unwrap();
            cfg.rho = RhoChoice::Fixed(0.8 * r.rho_star);
        }
        let out = run_to(&cfg, &p);
        let errs = out.state.errors.unwrap();
        for (c, e) in out.certificates.iter().zip(&errs) {
            checked += 1;
            if !(c.lower <= e + 1e-10 && *e <= c.upper + 1e-10) {
                violations += 1;
            }
            if c.k <= 3 && *e > 0.0 {
                worst_eff = worst_eff.max(c.upper / e);
            }
        }
    }
    outcome(
        violations == 0,
        format!("{checked} certificates, {violations} violations, worst early efficiency {worst_eff:.2}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for n in [31, 63, 127, 255] {
        for _ in 0..3 {
            let a = random_factor(&mut rng, 0.5, 5.0);
            let a0v = rng.gen_range(1.0..3.0);
            let p = DiscreteProblem::new(
                UniformGrid::new(vec![n]).unwrap(),
                SeparableCoefficient::product(vec![a]).unwrap(),
                SeparableCoefficient::constant(1, a0v).unwrap(),
                random_rhs(&mut rng),
                MassTreatment::Lumped,
            )
            .unwrap();
            let inv = ExactInverse::new(&p.precond).unwrap();
            let rho = rng.gen_range(0.1..0.5);
            let v = LowRankVector::plain(DVector::from_fn(n, |_, _| rng.gen_range(-0.1..0.1)));
            let v_rho = fixed_point_step(&v, rho, &p.stiffness, &inv, &p.rhs, None).unwrap();
            let v_tilde = LowRankVector::plain(v_rho.as_plain().unwrap().map(|x| x + 1e-3 * (x * 7.0).sin()));
            let q = &p.quads[0];
            let vs = v.as_plain().unwrap().as_slice();
            let flux = exact_flux_1d(
                q,
                vs,
                v_rho.as_plain().unwrap().as_slice(),
                p.a.function(),
                p.a0.function(),
                rho,
            );
            let eta: Vec<f64> = v.sub(&v_tilde).unwrap().as_plain().unwrap().iter().copied().collect();
            let m = majorant_general(q, vs, &eta, &flux, p.a.function(), p.a0.function(), &p.f, rho, a0v).unwrap();
            let truth = energy_norm(&v_rho.sub(&v_tilde).unwrap(), &p.precond).unwrap();
            worst = worst.max((m.value - truth).abs());
        }
    }
    outcome(
        worst <= 1e-8,
        format!("max |M - ||v_rho - v~||| = {worst:.3e} over 12 instances"),
    )
}

/// Dense Galerkin stiffness of bilinear elements, assembled element by element
/// with the coefficient evaluated pointwise in two dimensions.
fn brute_force_stiffness(a: &SeparableFunction<f64>, n: usize) -> DMatrix<f64> {
    let grid = UniformGrid::square(2, n).unwrap();
    let quads = quadratures_for(&grid, &[a]);
    let (q1, q2) = (&quads[0], &quads[1]);
    let h = 1.0 / (n as f64 + 1.0);
    let mut k = DMatrix::zeros(n * n, n * n);
    for e1 in 0..=n {
        for e2 in 0..=n {
            let corners = [(e1, e2), (e1 + 1, e2), (e1, e2 + 1), (e1 + 1, e2 + 1)];
            let mut local = [[0.0; 4]; 4];
            for p1 in q1.element_points(e1) {
                for p2 in q2.element_points(e2) {
                    let (x, y) = (q1.points()[p1], q2.points()[p2]);
                    let w = q1.weights()[p1] * q2.weights()[p2] * a.eval(&[x, y]).unwrap();
                    let (sx, sy) = ((x - e1 as f64 * h) / h, (y - e2 as f64 * h) / h);
                    let grads = [
                        (-(1.0 - sy) / h, -(1.0 - sx) / h),
                        ((1.0 - sy) / h, -sx / h),
                        (-sy / h, (1.0 - sx) / h),
                        (sy / h, sx / h),
                    ];
                    for i in 0..4 {
                        for j in 0..4 {
                            local[i][j] += w * (grads[i].0 * grads[j].0 + grads[i].1 * grads[j].1);
                        }
                    }
                }
            }
            for (i, ci) in corners.iter().enumerate() {
                for (j, cj) in corners.iter().enumerate() {
                    let inside = |c: &(usize, usize)| c.0 >= 1 && c.0 <= n && c.1 >= 1 && c.1 <= n;
                    if inside(ci) && inside(cj) {
                        let gi = (ci.0 - 1) * n + (ci.1 - 1);
                        let gj = (cj.0 - 1) * n + (cj.1 - 1);
                        k[(gi, gj)] += local[i][j];
                    }
                }
            }
        }
    }
    k
}

fn criterion_5() -> Outcome {
    let n = 16;
    let rank1 = SeparableCoefficient::product(vec![
        UnivariateFactor::Polynomial {
            coefficients: vec![1.0, 2.0],
        },
        UnivariateFactor::Sinusoid {
            offset: 2.0,
            amplitude: 1.0,
            omega: 30.0,
            phase: 0.3,
        },
    ])
    .unwrap();
    let rank2 = make_periodic_bumps(4, 3.0, 0.9, 0.5).unwrap();
    let mut worst = 0.0f64;
    for a in [&rank1, &rank2] {
        let grid = UniformGrid::square(2, n).unwrap();
        let kron = densify(&assemble_kron_stiffness(a.function(), &grid, MassTreatment::Consistent).unwrap()).unwrap();
        let brute = brute_force_stiffness(a.function(), n);
        worst = worst.max((&kron - &brute).norm() / brute.norm());
    }
    outcome(
        worst <= 1e-12,
        format!("max relative difference {worst:.3e} for R = 1, 2"),
    )
}

fn criterion_6() -> Outcome {
    let grid = UniformGrid::new(vec![63]).unwrap();
    let one = SeparableCoefficient::constant(1, 1.0).unwrap();
    let l0 = assemble_preconditioner(one.function(), &grid, MassTreatment::Lumped).unwrap();
    let dense = densify(&l0).unwrap();
    let inv = dense.clone().try_inverse().unwrap();
    let inv_norm = inv.symmetric_eigenvalues().amax();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut err64 = f64::NAN;
    for m in 4..=64 {
        let b = densify(&build_inverse(&l0, m).unwrap().as_kronecker().unwrap()).unwrap();
        let err: f64 = (&inv - b).symmetric_eigenvalues().amax() / inv_norm;
        xs.push((m as f64).sqrt());
        ys.push(err.ln());
        if m == 64 {
            err64 = err;
        }
    }
    let (slope, r2) = linear_fit(&xs, &ys);
    outcome(
        slope < 0.0 && r2 >= 0.95 && err64 <= 1e-5,
        format!("slope {slope:.3}, R^2 {r2:.4}, error at M=64 {err64:.3e}"),
    )
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, r) = (64, 20);
    let u = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
    let w = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
    let s = DVector::from_fn(r, |i, _| 0.7f64.powi(i as i32));
    let v = LowRankVector::separated(u, w, s).unwrap();
    let x = v.to_matrix();
    let sigma = singular_values(&x);
    let mut worst = 0.0f64;
    for k in 0..=r {
        let (t, tail) = v.truncate(&TruncationPolicy::rank(k)).unwrap();
        let err = (&x - t.to_matrix()).norm();
        let expect = sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        worst = worst.max((err - expect).abs()).max((tail - expect).abs());
    }
    outcome(
        worst <= 1e-10,
        format!("max |error - tail| = {worst:.3e} over k = 0..=20"),
    )
}

fn criterion_8() -> Outcome {
    let a = make_periodic_bumps(8, 1.0, 0.95, 0.5).unwrap();
    let profiles: Vec<Vec<f64>> = [95, 143, 191]
        .iter()
        .map(|n| {
            let p = DiscreteProblem::new(
                UniformGrid::square(2, *n).unwrap(),
                a.clone(),
                SeparableCoefficient::constant(2, 1.0).unwrap(),
                sin2(2),
                MassTreatment::Lumped,
            )
            .unwrap();
            let s = singular_values(&p.oracle_solution().unwrap().to_matrix());
            s.iter().map(|x| x / s[0]).collect()
        })
        .collect();
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..profiles[0].len() {
        let vals: Vec<f64> = profiles.iter().map(|p| p[k]).collect();
        if vals.iter().any(|v| *v < 1e-6) {
            break;
        }
        count += 1;
        let (lo, hi) = vals.iter().fold((f64::MAX, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        worst = worst.max(hi / lo - 1.0);
    }
    outcome(
        worst <= 0.1,
        format!("{count} singular values above 1e-6, max relative spread {worst:.4}"),
    )
}

fn criterion_9() -> Outcome {
    let a = make_periodic_bumps(6, 1.0, 0.95, 0.5).unwrap();
    let p = DiscreteProblem::new(
        UniformGrid::square(2, 255).unwrap(),
        a,
        SeparableCoefficient::constant(2, 1.0).unwrap(),
        sin2(2),
        MassTreatment::Lumped,
    )
    .unwrap();
    let tol = 1e-6;
    let b = build_inverse(&p.precond, 25).unwrap();
    let policy = TruncationPolicy::rank(30);
    let out = pcg_solve(&p.stiffness, &p.rhs, &b, tol, Some(&policy), 50).unwrap();
    let exact = p.oracle_solution().unwrap();
    let err =
        energy_norm(&out.solution.sub(&exact).unwrap(), &p.precond).unwrap() / energy_norm(&exact, &p.precond).unwrap();
    outcome(
        out.converged && out.iterations <= 50 && err <= 10.0 * tol,
        format!(
            "{} iterations, rank {}, relative energy error {err:.3e}",
            out.iterations,
            out.solution.rank()
        ),
    )
}

fn criterion_10() -> Outcome {
    let suite = [
        TwoSubdomainSetup {
            beta: 0.5,
            cells: 8,
            levels1: (1.0, 3.0),
            kappa1: 0.5,
            levels2: (2.0, 4.0),
            kappa2: 0.9,
        },
        TwoSubdomainSetup {
            beta: 0.375,
            cells: 6,
            levels1: (1.0, 10.0),
            kappa1: 0.3,
            levels2: (0.5, 2.0),
            kappa2: 0.6,
        },
    ];
    let mut containment = true;
    let mut worse = false;
    let mut parts = Vec::new();
    for s in &suite {
        let c = compare_homogenized_vs_optimal(s).unwrap();
        containment &= c.containment_holds;
        worse |= c.q_homogenized > c.q_optimal;
        parts.push(format!(
            "zeta ({:.3}, {:.3}) xi ({:.3}, {:.3}) q_hom {:.4} q_opt {:.4}",
            c.zeta.0, c.zeta.1, c.xi.0, c.xi.1, c.q_homogenized, c.q_optimal
        ));
    }
    outcome(containment && worse, parts.join("; "))
}

/// Name, check and runtime budget.
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("contraction rate q = 0.5", criterion_1, Some(Duration::from_secs(5))),
        (
            "modulated coefficient gives q = eps",
            criterion_2,
            Some(Duration::from_secs(10)),
        ),
        (
            "two-sided certificates on random 1D instances",
            criterion_3,
            Some(Duration::from_secs(60)),
        ),
        ("majorant has no gap for the exact flux", criterion_4, None),
        ("Kronecker assembly equals brute-force Galerkin", criterion_5, None),
        (
            "sinc inverse error decays like exp(-c sqrt(M))",
            criterion_6,
            Some(Duration::from_secs(10)),
        ),
        ("truncation error equals singular-value tail", criterion_7, None),
        (
            "singular profile is stable across grids",
            criterion_8,
            Some(Duration::from_secs(300)),
        ),
        ("truncated PCG on 255 x 255", criterion_9, None),
        ("homogenized vs optimal piecewise preconditioner", criterion_10, None),
    ];
    let mut failures = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = limit.map(|l| elapsed <= l).unwrap_or(true);
        let pass = out.pass && in_time;
        if !pass {
            failures += 1;
        }
        let time_note = match limit {
            Some(l) => format!("{:.2}s, limit {}s", elapsed.as_secs_f64(), l.as_secs()),
            None => format!("{:.2}s", elapsed.as_secs_f64()),
        };
        println!(
            "criterion {:>2} {}: {} ({}; {})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            out.detail,
            time_note
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
