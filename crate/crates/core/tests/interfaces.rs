use std::fs;
use std::sync::Arc;

use fdaregion::bands::band_from_ellipsoid;
use fdaregion::ellipsoid::{make_ellipsoid, CRule};
use fdaregion::estimators::{mean_cov, FunctionalSample};
use fdaregion::fnspace::{eigensystem, read_curves_csv, write_curves_csv, Curve, Grid, Quadrature, DEFAULT_TRIM};
use fdaregion::ghost::{ghost_rate_experiment, GhostJRule, GhostRateConfig};
use fdaregion::harness::{
    dti_like, emit_outputs, matern_cov, poly_mean, read_cov_csv, run_experiment, sample_gp, write_cov_csv, Artifact,
    ExperimentConfig, ExperimentKind, Format, JRule, RegionKind, Scenario,
};
use fdaregion::hyperrect::{make_rect, RectKind, RectVariant};

fn grid(p: usize) -> Arc<Grid> {
    Grid::uniform(p, 0.0, 1.0, Quadrature::Trapezoid).unwrap()
}

#[test]
fn sample_csv_round_trip_preserves_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid(30);
    let c = matern_cov(&g, 1.5, 0.25, 1.0).unwrap();
    let mean = Curve::from_fn(g, poly_mean);
    let s = sample_gp(&mean, &c, 20, 5).unwrap();
    let path = dir.path().join("s.csv");
    s.write_csv(&path).unwrap();
    let back = FunctionalSample::read_csv(&path, Quadrature::Trapezoid).unwrap();
    assert_eq!(back.n(), 20);
    let (m1, c1) = mean_cov(&s).unwrap();
    let (m2, c2) = mean_cov(&back).unwrap();
    for (a, b) in m1.values().iter().zip(m2.values()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((c1.kernel() - c2.kernel()).amax() < 1e-15);
}

#[test]
fn region_exports_have_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid(40);
    let c = matern_cov(&g, 0.5, 0.25, 1.0).unwrap();
    let e = Arc::new(eigensystem(&c, DEFAULT_TRIM).unwrap());
    let center = Curve::from_fn(g, poly_mean);

    let ell = make_ellipsoid(center.clone(), e.clone(), CRule::SqrtLambda, 0.05, 100, 8).unwrap();
    let p = dir.path().join("ell.csv");
    ell.write_summary_csv(&p).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.contains("# xi,") && text.contains("# N,100") && text.contains("# alpha,0.05"));
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "j,lambda,c_sq,r");
    assert_eq!(body.len(), 9);

    let rect = make_rect(center.clone(), e, RectVariant::new(RectKind::Z), 0.05, 100, 8).unwrap();
    let p = dir.path().join("rect.csv");
    rect.write_marginals_csv(&p, false).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("j,center_abs,half_width,excludes_zero\n"));
    assert_eq!(text.lines().count(), 9);

    let band = band_from_ellipsoid(&ell);
    let p = dir.path().join("band.csv");
    emit_outputs(Artifact::Band(&band), &p, Format::Csv).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("t,center,lower,upper\n"));
    assert_eq!(text.lines().count(), 41);
    let svg = dir.path().join("band.svg");
    emit_outputs(
        Artifact::Bands {
            bands: std::slice::from_ref(&band),
            overlays: &[("truth", &center)],
        },
        &svg,
        Format::Svg,
    )
    .unwrap();
    let svg = fs::read_to_string(svg).unwrap();
    assert!(svg.contains("truth") && svg.ends_with("</svg>\n"));
}

#[test]
fn dti_like_generator_reads_mean_and_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid(25);
    let c = matern_cov(&g, 1.5, 0.25, 1.0).unwrap();
    let mean = Curve::from_fn(g, |t| 0.4 + 0.1 * t);
    let (mp, cp) = (dir.path().join("mean.csv"), dir.path().join("cov.csv"));
    write_curves_csv(&mp, std::slice::from_ref(&mean)).unwrap();
    write_cov_csv(&cp, &c).unwrap();
    let c2 = read_cov_csv(&cp, Quadrature::Trapezoid).unwrap();
    assert!((c.kernel() - c2.kernel()).amax() < 1e-15);
    let a = dti_like(&mp, &cp, 30, 9, Quadrature::Trapezoid).unwrap();
    let b = dti_like(&mp, &cp, 30, 9, Quadrature::Trapezoid).unwrap();
    assert_eq!(a.n(), 30);
    assert_eq!(a.curves(), b.curves());
    let (g2, curves) = read_curves_csv(&mp, Quadrature::Trapezoid).unwrap();
    assert_eq!(g2.points(), a.grid().points());
    assert_eq!(curves.len(), 1);
}

#[test]
fn report_tables_are_bit_stable_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Power);
    cfg.n = 20;
    cfg.grid_size = 30;
    cfg.reps = 15;
    cfg.scenario = Some(Scenario::LocalShift);
    cfg.deltas = vec![0.0, 0.05];
    cfg.regions = Some(vec![RegionKind::ENorm, RegionKind::EC, RegionKind::RZ]);
    cfg.j_rule = Some(JRule::VarianceFraction { fraction: 0.99 });
    let t = run_experiment(&cfg).unwrap();
    let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["0", "0.05", "average"]);
    assert!(t.rows.iter().flat_map(|r| &r.values).all(|v| (0.0..=1.0).contains(v)));

    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    emit_outputs(Artifact::Table(&t), &a, Format::Csv).unwrap();
    emit_outputs(Artifact::Table(&run_experiment(&cfg).unwrap()), &b, Format::Csv).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let back = ExperimentConfig::from_json_str(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn ghost_table_has_rate_columns_and_slope_footer() {
    let cfg = GhostRateConfig {
        n_values: vec![40, 80, 160],
        reps: 4,
        grid_size: 30,
        n_dirs: 4,
        j_rule: GhostJRule::Fixed { j: 3 },
        ..GhostRateConfig::default()
    };
    let t = ghost_rate_experiment(&cfg).unwrap();
    for col in ["N", "mean_dH2", "N_times_dH2", "bound1", "bound2"] {
        assert!(t.column_index(col).is_some(), "{col}");
    }
    assert_eq!(t.rows.len(), 4);
    let slope = t.get("slope", "mean_dH2").unwrap();
    assert!(slope.is_finite() && slope < 0.0);
    for r in &t.rows[..3] {
        assert!(r.values[4] <= r.values[5]);
    }
}
