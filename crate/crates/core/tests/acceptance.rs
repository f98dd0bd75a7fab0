//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fdaregion::bands::band_from_ellipsoid;
use fdaregion::ellipsoid::{make_ellipsoid, CRule};
use fdaregion::estimators::{loocv_scores, mean, mean_cov, smooth_penalized, FunctionalSample, SmoothSpec};
use fdaregion::fnspace::{eigensystem, Curve, Grid, Quadrature, DEFAULT_TRIM};
use fdaregion::harness::{
    matern_cov, run_experiment, sample_gp, CovMode, ExperimentConfig, ExperimentKind, RegionKind, ReportTable, Scenario,
};
use fdaregion::hyperrect::{make_rect, z1_objective, RectKind, RectVariant};
use fdaregion::scalardist::{phi_sym, phi_sym_inv_ln, wchisq_quantile, QuantileMethod, WeightedChiSq};
use fdaregion::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn cell(t: &ReportTable, row: &str, col: &str) -> f64 {
    t.get(row, col).unwrap_or(f64::NAN)
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

const CELLS: [(usize, f64); 4] = [(25, 0.5), (25, 1.5), (100, 0.5), (100, 1.5)];

fn type1_config(n: usize, nu: f64, mode: CovMode, reps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ExperimentKind::Type1);
    c.n = n;
    c.nu = nu;
    c.cov_mode = mode;
    c.reps = reps;
    c.seed = 20_160_101;
    c
}

fn criterion_1() -> Result<Outcome> {
    let mut ok = true;
    let mut notes = Vec::new();
    for (n, nu) in CELLS {
        let mut c = type1_config(n, nu, CovMode::Known, 5000);
        // one calibration serves every replication, so it gets more draws
        c.nboot = 20_000;
        let t = run_experiment(&c)?;
        for col in ["e_norm", "e_pc", "e_c", "r_z", "r_zs", "b_s"] {
            let v = cell(&t, "type1", col);
            if !within(v, 0.04, 0.06) {
                ok = false;
                notes.push(format!("N={n} nu={nu} {col}={v:.4}"));
            }
        }
        let bec = cell(&t, "type1", "b_ec");
        let cap = if nu == 0.5 { 0.01 } else { 0.06 };
        if bec > cap {
            ok = false;
            notes.push(format!("N={n} nu={nu} b_ec={bec:.4}"));
        }
        notes.push(format!(
            "[N={n} nu={nu}: {}]",
            t.columns
                .iter()
                .map(|col| format!("{col} {:.3}", cell(&t, "type1", col)))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    outcome(ok, notes.join(" "))
}

fn criterion_2() -> Result<Outcome> {
    let mut ok = true;
    let mut notes = Vec::new();
    for (n, nu) in CELLS {
        let t = run_experiment(&type1_config(n, nu, CovMode::Estimated, 2000))?;
        let g = |col: &str| cell(&t, "type1", col);
        let mut checks = vec![
            ("e_norm", within(g("e_norm"), 0.03, 0.07)),
            ("e_c", within(g("e_c"), 0.02, 0.08)),
            ("r_z", within(g("r_z"), 0.02, 0.08)),
        ];
        if n == 100 {
            checks.push(("r_zs", within(g("r_zs"), 0.03, 0.07)));
        }
        if n == 100 && nu == 0.5 {
            checks.push(("e_pc", g("e_pc") >= 0.15));
        }
        for (col, pass) in checks {
            if !pass {
                ok = false;
                notes.push(format!("N={n} nu={nu} {col}={:.4} out of range", g(col)));
            }
        }
        notes.push(format!(
            "[N={n} nu={nu} J~{}: {}]",
            t.metadata.get("j_median").map(|v| v.to_string()).unwrap_or_default(),
            t.columns
                .iter()
                .map(|col| format!("{col} {:.3}", g(col)))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    outcome(ok, notes.join(" "))
}

fn power(scenario: Scenario) -> Result<ReportTable> {
    let mut c = ExperimentConfig::new(ExperimentKind::Power);
    c.n = 100;
    c.nu = 0.5;
    c.reps = 2000;
    c.scenario = Some(scenario);
    c.seed = 20_160_102;
    c.regions = Some(vec![
        RegionKind::ENorm,
        RegionKind::EPc3,
        RegionKind::BS,
        RegionKind::EC,
        RegionKind::RZ,
        RegionKind::RZs,
    ]);
    run_experiment(&c)
}

fn criterion_3() -> Result<Outcome> {
    let local = power(Scenario::LocalShift)?;
    let a = |col: &str| cell(&local, "average", col);
    let (ec, rz, pc3, bs, norm) = (a("e_c"), a("r_z"), a("e_pc3"), a("b_s"), a("e_norm"));
    let ordering = ec >= 0.65 && rz >= 0.65 && ec > pc3.max(bs) && rz > pc3.max(bs) && norm < 0.35;
    let shift = power(Scenario::Shift)?;
    let s_norm = cell(&shift, "average", "e_norm");
    let s_ec = cell(&shift, "average", "e_c");
    let close = (s_norm - s_ec).abs() <= 0.05;
    outcome(
        ordering && close,
        format!(
            "local shift averages e_c {ec:.3} r_z {rz:.3} e_pc3 {pc3:.3} b_s {bs:.3} e_norm {norm:.3} r_zs {:.3}; \
             at delta=.05 e_c {:.3} e_norm {:.3}; shift averages e_norm {s_norm:.3} e_c {s_ec:.3}",
            a("r_zs"),
            cell(&local, "0.05", "e_c"),
            cell(&local, "0.05", "e_norm"),
        ),
    )
}

fn criterion_4() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    let mut checked = 0usize;
    for _ in 0..50 {
        let p = rng.random_range(20..=60);
        let grid = Grid::uniform(p, 0.0, 1.0, Quadrature::Trapezoid)?;
        let nu = rng.random_range(0.5..3.0);
        let sigma = rng.random_range(0.1..1.0);
        let cov = matern_cov(&grid, nu, sigma, 1.0)?;
        let eig = Arc::new(eigensystem(&cov, DEFAULT_TRIM)?);
        let j = rng.random_range(1..=eig.j_max().min(30));
        let n = rng.random_range(5..500);
        let center = Curve::from_fn(grid.clone(), |t| (3.0 * t).sin());
        let e = make_ellipsoid(center, eig, CRule::SqrtLambda, 0.05, n, j)?;
        let band = band_from_ellipsoid(&e);
        for _ in 0..1000 {
            let dir: Vec<f64> = (0..j).map(|_| rng.sample(StandardNormal)).collect();
            let x = e.boundary_point(&dir)?;
            checked += 1;
            if !band.contains(&x)? {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in {checked} boundary points"),
    )
}

fn criterion_5() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 1_000_000usize;
    let mut mc_fail = Vec::new();
    let mut mc_other = Vec::new();
    for v in 0..50 {
        let len = rng.random_range(1..=50);
        let w: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..1.0)).collect();
        let dist = WeightedChiSq::new(w.clone())?;
        let mut sample: Vec<f64> = (0..draws)
            .map(|_| {
                w.iter()
                    .map(|wi| {
                        let z: f64 = rng.sample(StandardNormal);
                        wi * z * z
                    })
                    .sum()
            })
            .collect();
        sample.sort_by(f64::total_cmp);
        for p in [0.9, 0.95, 0.99] {
            let q = wchisq_quantile(&dist, p, QuantileMethod::Imhof)?;
            // distribution-free band: order statistics 3 binomial SDs either side
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            let lo = sample[((p * draws as f64 - 3.0 * sd).floor() as usize).saturating_sub(1)];
            let hi = sample[((p * draws as f64 + 3.0 * sd).ceil() as usize).min(draws - 1)];
            if !(q >= lo && q <= hi) {
                let miss = format!("vector {v} (len {len}) p={p}: {q} not in [{lo}, {hi}]");
                if p == 0.95 {
                    mc_fail.push(miss);
                } else {
                    mc_other.push(miss);
                }
            }
        }
    }
    let mut worst_gap: f64 = 0.0;
    let mut worst_q_gap: f64 = 0.0;
    let grid = Grid::uniform(100, 0.0, 1.0, Quadrature::Trapezoid)?;
    for nu in [0.5, 1.5, 2.5] {
        let eig = eigensystem(&matern_cov(&grid, nu, 0.25, 1.0)?, DEFAULT_TRIM)?;
        for j in [3, 10, 30, eig.j_max()] {
            let lam = &eig.eigenvalues()[..j.min(eig.j_max())];
            for weights in [lam.to_vec(), lam.iter().map(|l| l.sqrt()).collect::<Vec<_>>()] {
                let d = WeightedChiSq::new(weights)?;
                for p in [0.9, 0.95, 0.99] {
                    let qi = wchisq_quantile(&d, p, QuantileMethod::Imhof)?;
                    let qg = wchisq_quantile(&d, p, QuantileMethod::Gamma)?;
                    worst_q_gap = worst_q_gap.max((qg - qi).abs() / qi);
                    // coverage the gamma critical value actually delivers
                    worst_gap = worst_gap.max((d.cdf(qg) - p).abs() / p);
                }
            }
        }
    }
    let d = WeightedChiSq::new(vec![0.5, 0.5])?;
    let expo_err = (wchisq_quantile(&d, 0.95, QuantileMethod::Imhof)? - (-(0.05f64).ln())).abs();
    let ok = mc_fail.is_empty() && worst_q_gap < 0.02 && expo_err < 1e-6;
    outcome(
        ok,
        format!(
            "MC misses at p=.95: {} of 50 {:?}; at p=.9/.99 (reported only): {} of 100 {:?}; \
             worst gamma quantile relative gap {worst_q_gap:.4} (coverage scale {worst_gap:.4}); \
             exponential quantile error {expo_err:.2e}",
            mc_fail.len(),
            mc_fail,
            mc_other.len(),
            mc_other
        ),
    )
}

fn criterion_6() -> Result<Outcome> {
    let grid = Grid::uniform(100, 0.0, 1.0, Quadrature::Trapezoid)?;
    let center = Curve::zeros(grid.clone());
    let mut worst_budget: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for nu in [0.5, 1.5] {
        let eig = Arc::new(eigensystem(&matern_cov(&grid, nu, 0.25, 1.0)?, DEFAULT_TRIM)?);
        for alpha in [0.01, 0.05, 0.1] {
            let rz = make_rect(
                center.clone(),
                eig.clone(),
                RectVariant::new(RectKind::Z),
                alpha,
                50,
                eig.j_max(),
            )?;
            let prod: f64 = rz
                .z()
                .iter()
                .map(|z| phi_sym(*z))
                .collect::<Result<Vec<_>>>()?
                .iter()
                .product();
            worst_budget = worst_budget.max((prod - (1.0 - alpha)).abs());

            let j = 12;
            let lam = &eig.eigenvalues()[..j];
            let r1 = make_rect(
                center.clone(),
                eig.clone(),
                RectVariant::new(RectKind::Z1),
                alpha,
                50,
                j,
            )?;
            let best = z1_objective(lam, r1.z());
            let log_cov = (-alpha).ln_1p();
            let shares_opt: Vec<f64> = r1
                .z()
                .iter()
                .map(|z| fdaregion::scalardist::ln_phi_sym(*z) / log_cov)
                .collect();
            for k in 0..200 {
                let shares: Vec<f64> = if k % 2 == 0 {
                    let raw: Vec<f64> = (0..j).map(|_| -rng.random_range(1e-12f64..1.0).ln()).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|r| r / s).collect()
                } else {
                    let raw: Vec<f64> = shares_opt
                        .iter()
                        .map(|s| s * (1.0 + 0.05 * rng.random_range(-1.0..1.0)))
                        .collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|r| r / s).collect()
                };
                let z: Vec<f64> = shares
                    .iter()
                    .map(|s| phi_sym_inv_ln(s * log_cov))
                    .collect::<Result<_>>()?;
                worst_excess = worst_excess.max(best - z1_objective(lam, &z));
            }
        }
    }
    outcome(
        worst_budget < 1e-10 && worst_excess <= 1e-8,
        format!("max |prod Phi_sym(z_j) - (1 - alpha)| = {worst_budget:.2e}; max objective excess over competitors = {worst_excess:.2e}"),
    )
}

fn criterion_7() -> Result<Outcome> {
    let mut c = ExperimentConfig::new(ExperimentKind::GhostRate);
    c.reps = 200;
    c.seed = 20_160_107;
    let t = run_experiment(&c)?;
    let col: Vec<f64> = c
        .n_values
        .iter()
        .map(|n| cell(&t, &format!("N={n}"), "N_times_dH2"))
        .collect();
    let decreasing = col.windows(2).all(|w| w[1] < w[0]);
    let slope = cell(&t, "slope", "mean_dH2");
    outcome(
        decreasing && slope.abs() > 1.0,
        format!(
            "N*dH^2 = {:?}; slope {slope:.4}; J = {:?}",
            col,
            c.n_values
                .iter()
                .map(|n| cell(&t, &format!("N={n}"), "J"))
                .collect::<Vec<_>>()
        ),
    )
}

fn criterion_8() -> Result<Outcome> {
    let mut c = ExperimentConfig::new(ExperimentKind::BandCoverage);
    c.n = 25;
    c.nu = 0.5;
    c.warp_exponent = 10.0;
    c.reps = 1000;
    c.seed = 20_160_108;
    let t = run_experiment(&c)?;
    let grid = Grid::uniform(c.grid_size, 0.0, 1.0, Quadrature::Trapezoid)?;
    let at = |tp: f64, col: &str| {
        let i = grid.nearest_index(tp);
        t.rows[i].values[t.column_index(col).expect("column")]
    };
    let (w2, w95) = (at(0.2, "width_b_ec"), at(0.95, "width_b_ec"));
    let bs: Vec<f64> = t.rows[..grid.len()]
        .iter()
        .map(|r| r.values[t.column_index("width_b_s").expect("column")])
        .collect();
    let mean_bs = bs.iter().sum::<f64>() / bs.len() as f64;
    let spread = bs.iter().map(|w| (w - mean_bs).abs()).fold(0.0, f64::max) / mean_bs;
    outcome(
        w2 < w95 && spread < 0.01,
        format!(
            "b_ec half-width/sd at t=.2 {w2:.4}, at t=.95 {w95:.4}; b_s width/sd max relative deviation {spread:.4}"
        ),
    )
}

fn criterion_9() -> Result<Outcome> {
    let mut c = ExperimentConfig::new(ExperimentKind::Twosample);
    c.n = 25;
    c.n2 = Some(30);
    c.reps = 1000;
    c.shift = 0.1;
    c.seed = 20_160_109;
    c.regions = Some(vec![
        RegionKind::ENorm,
        RegionKind::EPc,
        RegionKind::EPc3,
        RegionKind::EC,
        RegionKind::EC1,
        RegionKind::RZ,
        RegionKind::RZ1,
        RegionKind::RC,
        RegionKind::RC1,
        RegionKind::BS,
    ]);
    let t = run_experiment(&c)?;
    let mut ok = true;
    let mut notes = Vec::new();
    for col in &t.columns {
        let agree = cell(&t, "agreement", col);
        let swap = cell(&t, "swap_max_abs_diff", col);
        ok &= agree == 1.0 && swap == 0.0;
        notes.push(format!(
            "{col} agree {agree} swap {swap:e} reject {:.3}",
            cell(&t, "rejection", col)
        ));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_10() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grid = Grid::uniform(40, 0.0, 1.0, Quadrature::Trapezoid)?;
    let cov = matern_cov(&grid, 1.5, 0.25, 1.0)?;
    let theta = Curve::from_fn(grid.clone(), |t| 10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5));
    let s = sample_gp(&theta, &cov, 20, 1)?;
    let (m0, _) = smooth_penalized(&s, &SmoothSpec::raw(0.0)?)?;
    let raw = mean(&s);
    let mean_err = m0
        .values()
        .iter()
        .zip(raw.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut min_eig = f64::INFINITY;
    let mut max_asym: f64 = 0.0;
    for trial in 0..500 {
        let p = rng.random_range(8..25);
        let g = Grid::uniform(p, 0.0, 1.0, Quadrature::Trapezoid)?;
        let n = rng.random_range(3..12);
        let curves: Vec<Curve> = (0..n)
            .map(|_| Curve::new(g.clone(), (0..p).map(|_| rng.sample(StandardNormal)).collect()))
            .collect::<Result<_>>()?;
        let sample = FunctionalSample::new(curves)?;
        let lam = 10f64.powf(rng.random_range(-6.0..3.0));
        let (_, k) = smooth_penalized(&sample, &SmoothSpec::raw(lam)?)?;
        let km = k.kernel();
        max_asym = max_asym.max((km - km.transpose()).amax());
        let e = nalgebra::SymmetricEigen::new((km + km.transpose()) * 0.5);
        let scale = km.amax().max(1e-300);
        min_eig = min_eig.min(e.eigenvalues.min() / scale);
        let _ = trial;
    }

    let g = Grid::uniform(40, 0.0, 1.0, Quadrature::Trapezoid)?;
    let noise_cov = matern_cov(&g, 0.5, 1.0, 1.0)?;
    let poly = Curve::from_fn(g.clone(), |t| 1.0 + 2.0 * t - 3.0 * t * t);
    let noisy = sample_gp(&poly, &noise_cov, 10, 5)?;
    let lams: Vec<f64> = (-10..=6).map(|k| 10f64.powi(k)).collect();
    let cands: Vec<SmoothSpec> = lams.iter().map(|&l| SmoothSpec::raw(l)).collect::<Result<_>>()?;
    let scores = loocv_scores(&noisy, &cands)?;
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let interior = best > 0 && best < lams.len() - 1;
    let _ = mean_cov(&s)?;
    outcome(
        mean_err < 1e-8 && min_eig > -1e-10 && max_asym < 1e-12 && interior,
        format!(
            "lambda=0 mean error {mean_err:.2e}; min relative eigenvalue over 500 trials {min_eig:.2e}; LOOCV picks lambda={:e}",
            lams[best]
        ),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 known-covariance Type I", criterion_1),
        ("2 estimated-covariance distortions", criterion_2),
        ("3 power ordering", criterion_3),
        ("4 ellipsoid inside its band", criterion_4),
        ("5 distribution layer", criterion_5),
        ("6 rectangle budget and Z1 optimality", criterion_6),
        ("7 ghost rate", criterion_7),
        ("8 band local adaptivity", criterion_8),
        ("9 two-sample agreement and swap", criterion_9),
        ("10 smoothing layer", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|k| name.split(' ').next() == Some(k.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!(
            "criterion {name}: {} ({:.1}s) {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
