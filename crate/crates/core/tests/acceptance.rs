//! End-to-end acceptance checks. Each criterion prints one `C<n> PASS|FAIL` line;
//! the process exits nonzero if any criterion fails.

#![allow(clippy::type_complexity)]

use germcanop::canop::*;
use germcanop::dissipation::{derivative_order_check, BoxDomain, Dissipation};
use germcanop::fields::{Jet, ScalarField, VectorField};
use germcanop::germ::{circle_germ, transition_phase, IChart, IndexSet};
use germcanop::linalg::CMatrix;
use germcanop::pdo::*;
use germcanop::quantization::*;
use germcanop::transform::*;
use germcanop::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};
use std::time::Instant;

type C = Complex<f64>;
type Outcome = Result<String, String>;

fn c(re: f64, im: f64) -> C {
    Complex::new(re, im)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

fn grid2(x1: (f64, f64), x2: (f64, f64), n: usize) -> Vec<Vec<f64>> {
    let (a, b) = (linspace(x1.0, x1.1, n), linspace(x2.0, x2.1, n));
    a.iter().flat_map(|&u| b.iter().map(move |&v| vec![u, v])).collect()
}

/// Least-squares slope of `log₂ y` against `log₂ x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.log2()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log2()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: germcanop::Error) -> String {
    format!("error: {e}")
}

/// Energy closest to `0.5` on the lattice `h(n + ½)`.
fn quantized_energy(h: f64) -> f64 {
    h * ((0.5 / h - 0.5).round() + 0.5)
}

/// Position grid covering the circle of energy `e` with margin and 12 nodes per wavelength.
fn circle_grid(e: f64, h: f64) -> Grid<f64> {
    let r = (2.0 * e).sqrt();
    let l = r + 8.0 * h.sqrt();
    let nodes = ((2.0 * l) * r * 12.0 / (TAU * h)).ceil() as usize + 1;
    Grid::uniform(&[-l], &[l], &[nodes.max(401)]).unwrap()
}

// ---------- C1 ----------

/// Eigenvalues below `cap` of the symmetric tridiagonal matrix (diag, off) by Sturm bisection.
fn tridiagonal_eigenvalues_below(diag: &[f64], off: f64, cap: f64) -> Vec<f64> {
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for (i, a) in diag.iter().enumerate() {
            d = a - x - if i == 0 { 0.0 } else { off * off / d };
            if d == 0.0 {
                d = 1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let lo0 = diag.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 * off.abs();
    (0..count_below(cap))
        .map(|k| {
            let (mut lo, mut hi) = (lo0, cap);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if count_below(mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

fn c1() -> Outcome {
    let h = 0.01;
    let found = admissible_parameters(circle_family::<f64>, Parameter::Family { h }, (1e-4, 0.1), &ScanOptions::default()).map_err(err)?;
    let lattice: Vec<f64> = (0..).map(|n| h * (n as f64 + 0.5)).take_while(|e| *e < 0.1).collect();
    if found.len() != lattice.len() {
        return Err(format!("found {} energies, expected {}", found.len(), lattice.len()));
    }
    let lattice_err = found.iter().zip(&lattice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // −(h²/2)∂² + q²/2 with Dirichlet ends on [−1, 1]
    let n = 2000;
    let dx = 2.0 / (n + 1) as f64;
    let diag: Vec<f64> = (1..=n)
        .map(|i| {
            let q = -1.0 + i as f64 * dx;
            h * h / (dx * dx) + 0.5 * q * q
        })
        .collect();
    let fd = tridiagonal_eigenvalues_below(&diag, -h * h / (2.0 * dx * dx), 0.1);
    if fd.len() != found.len() {
        return Err(format!("finite-difference count {} vs {}", fd.len(), found.len()));
    }
    let fd_err = found.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        lattice_err <= 1e-8 && fd_err <= 5e-4,
        format!("{} energies, max |E − h(n+½)| = {lattice_err:.1e}, max |E − E_fd| = {fd_err:.1e}", found.len()),
    )
}

// ---------- C2 ----------

fn c2() -> Outcome {
    let s = ScalarField::analytic(1, |q: &[f64]| Jet {
        value: c(0.0, 0.5 * q[0] * q[0]),
        gradient: vec![c(0.0, q[0])],
        hessian: CMatrix::from_rows(1, 1, vec![c(0.0, 1.0)]),
    });
    let s_p = transition_phase(&s, &IndexSet::empty(1), &[0.0]).map_err(err)?;
    let mut worst = 0.0f64;
    for p in linspace(-1.0, 1.0, 201) {
        let v = s_p.try_value(&[p]).map_err(err)?;
        worst = worst.max((v - c(0.0, 0.5 * p * p)).norm());
    }
    check(worst <= 1e-10, format!("max |S_∅(p) − (i/2)p²| = {worst:.1e} on |p| ≤ 1"))
}

// ---------- C3 ----------

/// F(p, q) = a q² + ε q³ − p q on R × R.
fn cubic_family(a: C, eps: f64) -> ScalarField<f64> {
    ScalarField::analytic(2, move |x: &[f64]| {
        let (p, q) = (x[0], x[1]);
        Jet {
            value: a * q * q + c(eps * q * q * q - p * q, 0.0),
            gradient: vec![c(-q, 0.0), a * 2.0 * q + c(3.0 * eps * q * q - p, 0.0)],
            hessian: CMatrix::from_rows(2, 2, vec![c(0.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), a * 2.0 + c(6.0 * eps * q, 0.0)]),
        }
    })
}

fn c3() -> Outcome {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut worst_ratio = 0.0f64;
    let mut exact_lo = f64::INFINITY;
    for eps in linspace(0.0, 0.3, 7) {
        let res = complex_stationary_value(&cubic_family(c(0.0, 1.0), eps), &[0.0], &[0.0], 2.0).map_err(err)?;
        let samples: Vec<Vec<f64>> = linspace(-0.25, 0.25, 21)
            .into_iter()
            .map(|p| vec![p])
            .filter(|p| res.reduced_dissipation.value(p).is_ok_and(|d| d >= 1e-8))
            .collect();
        let (l, u) = dissipativity_bounds(&res, &samples).map_err(err)?;
        lo = lo.min(l);
        hi = hi.max(u);
        worst_ratio = worst_ratio.max(u / l);
        // exact complex critical value: Newton on 2iq + 3εq² − p = 0 from q = 0
        let (mut el, mut eh) = (f64::INFINITY, 0.0f64);
        for x in &samples {
            let p = x[0];
            let mut q = c(0.0, 0.0);
            for _ in 0..50 {
                q -= (c(0.0, 2.0) * q + q * q * 3.0 * eps - p) / (c(0.0, 2.0) + q * 6.0 * eps);
            }
            let value = c(0.0, 1.0) * q * q + q * q * q * eps - q * p;
            let ratio = value.im / res.reduced_dissipation.value(x).map_err(err)?;
            el = el.min(ratio);
            eh = eh.max(ratio);
        }
        exact_lo = exact_lo.min(el);
        worst_ratio = worst_ratio.max(eh / el);
    }
    check(
        lo > 0.0 && lo <= hi && exact_lo > 0.0 && worst_ratio <= 20.0,
        format!("c = {lo:.4}, C = {hi:.4}, c at the exact critical value = {exact_lo:.4}, max C/c per ε = {worst_ratio:.3}"),
    )
}

// ---------- C4 ----------

fn c4() -> Outcome {
    let (mut hs, mut rels) = (Vec::new(), Vec::new());
    for k in 4..=8 {
        let h = 2f64.powi(-k);
        let e = quantized_energy(h);
        let (germ, form) = circle_family(e).map_err(err)?;
        let phi = ScalarField::constant(2, c(1.0, 0.0));
        let grid = circle_grid(e, h);
        let o = CanopOptions::default();
        let pa = Partition::angular(&germ, 1.2, 0.0).map_err(err)?;
        let pb = Partition::angular(&germ, 1.0, 0.15).map_err(err)?;
        let a = global_canop(&germ, &form, &phi, &pa, h, &grid, &o).map_err(err)?;
        let b = global_canop(&germ, &form, &phi, &pb, h, &grid, &o).map_err(err)?;
        hs.push(h);
        rels.push(b.sub(&a).map_err(err)?.l2_norm() / a.l2_norm());
    }
    let slope = loglog_slope(&hs, &rels);
    let table: Vec<String> = rels.iter().map(|r| format!("{r:.3e}")).collect();
    check((0.4..=0.8).contains(&slope), format!("slope {slope:.3}, relative differences [{}]", table.join(", ")))
}

// ---------- C5 ----------

fn c5() -> Outcome {
    let ks: Vec<i32> = (4..=9).collect();
    let (mut hs, mut with, mut without) = (Vec::new(), Vec::new(), Vec::new());
    let apply = ApplyOptions { method: ApplyMethod::Spectral, ..Default::default() };
    for &k in &ks {
        let h = 2f64.powi(-k);
        let e = quantized_energy(h);
        let r = (2.0 * e).sqrt();
        let (germ, form) = circle_family(e).map_err(err)?;
        let sym = HamiltonianSymbol::harmonic(1, e).map_err(err)?;
        let coeffs = transport_operator(&sym, &germ, &form).map_err(err)?;
        let sol = solve_transport(&sym, &germ, &coeffs, &[0.0, r], c(1.0, 0.0), &TransportOptions::for_h(h, TAU)).map_err(err)?;
        let transported = sol.amplitude(1024);
        let untransported = ScalarField::new(2, |x: &[f64]| c(1.0 + 0.5 * x[1] / (x[0] * x[0] + x[1] * x[1]).sqrt(), 0.0));
        let part = Partition::angular(&germ, 1.2, 0.0).map_err(err)?;
        let grid = circle_grid(e, h);
        let o = CanopOptions::default();
        let rel = |phi: &ScalarField<f64>| -> Result<f64, String> {
            let res = commutation_residual(&sym, &germ, &form, phi, &part, h, &grid, &o, &apply).map_err(err)?;
            Ok(res.raw / res.canop_norm)
        };
        hs.push(h);
        with.push(rel(&transported)?);
        without.push(rel(&untransported)?);
    }
    let (s1, s0) = (loglog_slope(&hs, &with), loglog_slope(&hs, &without));
    check(s1 >= 1.4 && s0 >= 0.9, format!("slope with Pφ = 0: {s1:.3}, without transport: {s0:.3}"))
}

// ---------- C6 ----------

fn c6() -> Outcome {
    let mut worst = 0.0f64;
    for e in [0.1, 0.5, 1.3] {
        let r = (2.0f64 * e).sqrt();
        let germ = circle_germ(e).map_err(err)?;
        let v = var_phi(&germ, &germ.cycles[0]).map_err(err)?;
        // ∮ p dq along (q, p) = R(cos t, −sin t); periodic trapezoid is spectrally accurate
        let m = 64;
        let oracle: f64 = (0..m)
            .map(|j| {
                let t = TAU * j as f64 / m as f64;
                let p = -r * t.sin();
                let dq = -r * t.sin();
                p * dq * TAU / m as f64
            })
            .sum();
        worst = worst.max((v - c(oracle, 0.0)).norm()).max((oracle - PI * r * r).abs());
    }
    check(worst <= 1e-8, format!("max |Var Φ − ∮ p dq| = {worst:.1e} over three radii"))
}

// ---------- C7 ----------

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let support = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
    for _ in 0..50 {
        let h = rng.gen_range(0.01..0.1);
        let alpha = c(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
        let beta = c(rng.gen_range(-0.5..0.5), rng.gen_range(0.0..0.3));
        let phase = ScalarField::analytic(1, move |y: &[f64]| Jet {
            value: alpha * y[0] * y[0] + beta * y[0],
            gradient: vec![alpha * 2.0 * y[0] + beta],
            hessian: CMatrix::from_rows(1, 1, vec![alpha * 2.0]),
        });
        let dom = BoxDomain::new(vec![-3.0], vec![3.0]).unwrap();
        let d = Dissipation::from_fn(dom.clone(), move |y: &[f64]| (alpha * y[0] * y[0] + beta * y[0]).im.max(0.0));
        let chart = IChart::new(IndexSet::empty(1), phase, d, dom, 0, vec![0.0, 0.0]).map_err(err)?;
        let s2 = support.clone();
        let bump = ScalarField::new(1, move |y: &[f64]| c(box_bump(&s2, y, 0.4), 0.0));
        let amp = Amplitude::new(0, bump, support.clone(), &chart).map_err(err)?;
        let grid = Grid::uniform(&[-1.5], &[1.5], &[121]).unwrap();
        let base = CanopOptions { cutoff_margin: 0.0, ..Default::default() };
        let fine = CanopOptions { nodes_per_wavelength: 10 * base.nodes_per_wavelength, ..base.clone() };
        let dens = ChartDensity::unit(1);
        let a = local_canop(&chart, &dens, &amp, h, &grid, &base).map_err(err)?;
        let b = local_canop(&chart, &dens, &amp, h, &grid, &fine).map_err(err)?;
        worst = worst.max(a.sub(&b).map_err(err)?.l2_norm() / b.l2_norm());
    }
    check(worst <= 1e-6, format!("max relative deviation from 10× refinement = {worst:.1e} over 50 phases"))
}

// ---------- C8 ----------

fn field(f: fn(&[f64]) -> f64) -> ScalarField<f64> {
    ScalarField::real(2, f)
}

fn constant_direction(a: f64, b: f64) -> VectorField<f64> {
    VectorField::new(vec![ScalarField::real(2, move |_| a), ScalarField::real(2, move |_| b)]).unwrap()
}

fn c8() -> Outcome {
    let unit = BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let off_axis = grid2((-1.0, 1.0), (0.05, 1.0), 15);
    let punctured: Vec<Vec<f64>> = grid2((-1.0, 1.0), (-1.0, 1.0), 21).into_iter().filter(|x| x[0] != 0.0 || x[1] != 0.0).collect();
    let rotation = VectorField::new(vec![ScalarField::real(2, |x: &[f64]| -x[1]), ScalarField::real(2, |x: &[f64]| x[0])]).unwrap();
    let radial = VectorField::new(vec![ScalarField::real(2, |x: &[f64]| x[0]), ScalarField::real(2, |x: &[f64]| x[1])]).unwrap();
    type Fixture = (fn(&[f64]) -> f64, fn(&[f64]) -> f64, f64, VectorField<f64>, bool);
    // (D, f, s, X, samples avoid x₂ = 0)
    let fixtures: Vec<Fixture> = vec![
        (|x| x[0] * x[0] + x[1] * x[1], |x| x[0] * x[0] + x[1] * x[1], 1.0, constant_direction(1.0, 0.0), false),
        (|x| x[1] * x[1], |x| x[1] * x[1], 1.0, constant_direction(1.0, 0.0), true),
        (|x| x[1] * x[1], |x| x[0] * x[1] * x[1], 1.0, constant_direction(1.0, 0.0), true),
        (|x| x[1] * x[1], |x| x[1] * x[1], 1.0, constant_direction(0.0, 1.0), true),
        (|x| x[1].powi(4), |x| x[1].powi(4), 1.0, constant_direction(0.0, 1.0), true),
        (|x| x[0] * x[0] + x[1] * x[1], |x| x[0] * x[1], 1.0, constant_direction(0.0, 1.0), false),
        (|x| x[0] * x[0] + x[1] * x[1], |x| x[0] * (x[0] * x[0] + x[1] * x[1]), 1.0, rotation, false),
        (|x| x[0].powi(4) + x[1] * x[1], |x| x[1] * x[1], 1.0, constant_direction(1.0, 0.0), true),
        (|x| (x[0] * x[0] + x[1] * x[1]).powi(2), |x| (x[0] * x[0] + x[1] * x[1]).powi(2), 1.0, radial, false),
        (|x| x[0] * x[0] + 2.0 * x[1] * x[1], |x| x[0] * x[0] + 2.0 * x[1] * x[1], 1.0, constant_direction(1.0, 1.0), false),
    ];
    let mut passed = 0;
    for (k, (dfn, ffn, s, dir, avoid)) in fixtures.iter().enumerate() {
        let d = Dissipation::from_fn(unit.clone(), *dfn);
        let samples = if *avoid { &off_axis } else { &punctured };
        let r = derivative_order_check(&field(*ffn), &d, *s, dir, samples).map_err(|e| format!("fixture {k}: {e}"))?;
        if r.holds {
            passed += 1;
        } else {
            return Err(format!("polynomial fixture {k} failed (target order {})", r.target_order));
        }
    }
    let flat = Dissipation::from_fn(BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(), |x: &[f64]| (-1.0 / (x[1] * x[1])).exp());
    let f = field(|x| (-1.0 / (x[1] * x[1])).exp() * (x[0] / x[1]).sin());
    let counter =
        derivative_order_check(&f, &flat, 1.0, &constant_direction(1.0, 0.0), &grid2((-1.0, 1.0), (0.15, 1.0), 25)).map_err(err)?;
    check(!counter.holds, format!("{passed}/10 polynomial fixtures hold, flat counterexample holds = {}", counter.holds))
}

// ---------- C9 ----------

fn c9() -> Outcome {
    let mut worst = 0.0f64;
    for (h, n) in [(0.05, 7.0), (0.1, 2.0), (0.02, 20.0)] {
        let e = h * (n + 0.5);
        let (germ, form) = circle_family(e).map_err(err)?;
        let before = check_quantization(&germ, &form, h).map_err(err)?;
        let image = apply_canonical_transform(&CanonicalTransform::quarter_turn(1), &germ).map_err(err)?;
        let form2 = VolumeForm::circle_flow_invariant(&image).map_err(err)?;
        let after = check_quantization_with(&image, &form2, h, 1e-6).map_err(err)?;
        if !before.holds {
            return Err(format!("source germ at E = {e} is not quantized"));
        }
        worst = worst.max(after.max_residual());
    }
    check(worst <= 1e-6, format!("max cycle residual after the quarter turn = {worst:.1e}"))
}

// ---------- C10 ----------

fn two_dim_kernel() -> ScalarField<f64> {
    // F = (i/2)(q₁² + q₂²) + 0.4 q₁q₂ + 0.3 q₁² − p₁q₁ − p₂q₂ + 0.1 q₁³
    ScalarField::analytic(4, |x: &[f64]| {
        let (p1, p2, q1, q2) = (x[0], x[1], x[2], x[3]);
        let i = c(0.0, 1.0);
        let value = i * 0.5 * (q1 * q1 + q2 * q2) + c(0.4 * q1 * q2 + 0.3 * q1 * q1 - p1 * q1 - p2 * q2 + 0.1 * q1.powi(3), 0.0);
        let gradient =
            vec![c(-q1, 0.0), c(-q2, 0.0), i * q1 + c(0.4 * q2 + 0.6 * q1 - p1 + 0.3 * q1 * q1, 0.0), i * q2 + c(0.4 * q1 - p2, 0.0)];
        let mut hess = CMatrix::zeros(4, 4);
        hess[(0, 2)] = c(-1.0, 0.0);
        hess[(2, 0)] = c(-1.0, 0.0);
        hess[(1, 3)] = c(-1.0, 0.0);
        hess[(3, 1)] = c(-1.0, 0.0);
        hess[(2, 2)] = i + c(0.6 + 0.6 * q1, 0.0);
        hess[(3, 3)] = i;
        hess[(2, 3)] = c(0.4, 0.0);
        hess[(3, 2)] = c(0.4, 0.0);
        Jet { value, gradient, hessian: hess }
    })
}

fn c10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fixtures: Vec<(ScalarField<f64>, usize)> =
        vec![(two_dim_kernel(), 2), (cubic_family(c(0.0, 1.0), 0.2), 1), (cubic_family(c(0.5, 0.8), 0.0), 1)];
    let (mut id_worst, mut quad_worst) = (0.0f64, f64::NEG_INFINITY);
    for (f, n) in &fixtures {
        let zero = vec![0.0; *n];
        let res = complex_stationary_value(f, &zero, &zero, 2.0).map_err(err)?;
        for _ in 0..10 {
            let p: Vec<f64> = (0..*n).map(|_| rng.gen_range(-0.2..0.2)).collect();
            id_worst = id_worst.max(res.appendix_matrices(&p).map_err(err)?.identity_residual());
        }
        let base = res.appendix_matrices(&zero).map_err(err)?;
        id_worst = id_worst.max(base.identity_residual());
        for _ in 0..100 {
            let xi: Vec<f64> = (0..*n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let quad: f64 = (0..*n).map(|a| (0..*n).map(|b| xi[a] * base.b[(a, b)].re * xi[b]).sum::<f64>()).sum();
            quad_worst = quad_worst.max(quad);
        }
    }
    check(id_worst <= 1e-10 && quad_worst <= 1e-10, format!("identity residual {id_worst:.1e}, max ⟨ξ, Bξ⟩ = {quad_worst:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] =
        [("C1", c1), ("C2", c2), ("C3", c3), ("C4", c4), ("C5", c5), ("C6", c6), ("C7", c7), ("C8", c8), ("C9", c9), ("C10", c10)];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == name) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{name} PASS ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
