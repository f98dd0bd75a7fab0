use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fdaregion::bands::{band_from_ellipsoid, band_naive_t, Band, SupCalibration};
use fdaregion::ellipsoid::{make_ellipsoid, CRule};
use fdaregion::estimators::{mean_cov, pointwise_sd, smooth_bspline, two_sample, FunctionalSample, DEFAULT_DEGREE};
use fdaregion::fnspace::{eigensystem, read_curves_csv, CovOperator, Curve, EigenSystem, Quadrature, DEFAULT_TRIM};
use fdaregion::harness::{
    dti_like, emit_outputs, matern_cov, one_sample_region, poly_mean, run_experiment, sample_gp, two_sample_regions,
    Artifact, BuiltRegion, CovMode, ExperimentConfig, ExperimentKind, Format, JRule, RegionKind, ReportTable, Scenario,
    DEFAULT_SIGMA,
};
use fdaregion::hyperrect::{make_rect, RectKind, RectVariant};

#[derive(Parser)]
#[command(
    name = "fdaregion",
    version,
    about = "Confidence regions and bands for functional parameters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write its report table.
    Simulate(SimulateArgs),
    /// Build one region from a sample and test a hypothesized mean.
    Region(RegionArgs),
    /// Emit a simultaneous band as CSV and/or SVG.
    Band(BandArgs),
    /// Compare the means of two samples.
    Twosample(TwosampleArgs),
    /// Draw a Gaussian-process sample with a Matérn covariance.
    Sample(SampleArgs),
    /// Draw a sample from a mean CSV and a covariance CSV.
    DtiLike(DtiLikeArgs),
    /// Smooth every curve of a sample with a B-spline least-squares fit.
    Smooth(SmoothArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Type1,
    Power,
    Bands,
    GhostRate,
    Twosample,
}

impl From<SimKind> for ExperimentKind {
    fn from(k: SimKind) -> Self {
        match k {
            SimKind::Type1 => ExperimentKind::Type1,
            SimKind::Power => ExperimentKind::Power,
            SimKind::Bands => ExperimentKind::BandCoverage,
            SimKind::GhostRate => ExperimentKind::GhostRate,
            SimKind::Twosample => ExperimentKind::Twosample,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Known,
    Estimated,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Shift,
    Scale,
    LocalShift,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Shift => Scenario::Shift,
            ScenarioArg::Scale => Scenario::Scale,
            ScenarioArg::LocalShift => Scenario::LocalShift,
        }
    }
}

/// Truncation flags shared by the data commands.
#[derive(Args, Clone, Copy)]
struct TruncArgs {
    /// Keep the smallest J explaining this fraction of the variance.
    #[arg(long, default_value_t = 0.999, conflicts_with_all = ["j", "all_j"])]
    var_frac: f64,
    /// Fixed truncation J.
    #[arg(long)]
    j: Option<usize>,
    /// Use every retained eigenpair.
    #[arg(long)]
    all_j: bool,
}

impl TruncArgs {
    fn rule(&self) -> JRule {
        match (self.j, self.all_j) {
            (Some(j), _) => JRule::Fixed { j },
            (None, true) => JRule::All,
            _ => JRule::VarianceFraction {
                fraction: self.var_frac,
            },
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    kind: SimKind,
    /// JSON file with ExperimentConfig keys; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Second sample size (twosample).
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, conflicts_with = "j")]
    var_frac: Option<f64>,
    #[arg(long)]
    j: Option<usize>,
    /// Comma-separated region names, e.g. e_norm,e_c,r_z,b_s.
    #[arg(long, value_delimiter = ',')]
    regions: Option<Vec<RegionKind>>,
    #[arg(long, value_enum)]
    cov: Option<CovArg>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Comma-separated shift sizes for power.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long)]
    nboot: Option<usize>,
    /// Exponent of the warped Matérn distance |t^w - s^w|.
    #[arg(long)]
    warp: Option<f64>,
    /// Sample sizes for ghost-rate.
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metadata JSON (config echo, seed, runtime).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Report table rendered as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

impl SimulateArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::new(self.kind.into()),
        };
        cfg.kind = self.kind.into();
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if self.n2.is_some() {
            cfg.n2 = self.n2;
        }
        if let Some(v) = self.nu {
            cfg.nu = v;
        }
        if let Some(v) = self.reps {
            cfg.reps = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(fraction) = self.var_frac {
            cfg.j_rule = Some(JRule::VarianceFraction { fraction });
        }
        if let Some(j) = self.j {
            cfg.j_rule = Some(JRule::Fixed { j });
        }
        if self.regions.is_some() {
            cfg.regions = self.regions.clone();
        }
        if let Some(c) = self.cov {
            cfg.cov_mode = match c {
                CovArg::Known => CovMode::Known,
                CovArg::Estimated => CovMode::Estimated,
            };
        }
        if let Some(s) = self.scenario {
            cfg.scenario = Some(s.into());
        }
        if let Some(d) = &self.deltas {
            cfg.deltas = d.clone();
        }
        if let Some(v) = self.nboot {
            cfg.nboot = v;
        }
        if let Some(v) = self.warp {
            cfg.warp_exponent = v;
        }
        if let Some(v) = &self.n_values {
            cfg.n_values = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RegionArgs {
    /// Sample CSV: grid row, then one curve per row.
    #[arg(long)]
    sample: PathBuf,
    /// Hypothesized mean in the same layout (first curve is used).
    #[arg(long)]
    theta0: PathBuf,
    #[arg(long, default_value = "e_c")]
    region: RegionKind,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    trunc: TruncArgs,
    /// Dimension of the e_pc3 region.
    #[arg(long, default_value_t = 3)]
    pc_j: usize,
    #[arg(long, default_value_t = 1000)]
    nboot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Region summary CSV: axis table for ellipsoids and rectangles, band
    /// table for bands.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Report marginal intervals of rectangles as |z-scores|.
    #[arg(long)]
    zscore: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    /// Band implied by the sqrt-lambda ellipsoid.
    #[value(name = "b_ec")]
    BEc,
    /// Parametric-bootstrap sup band.
    #[value(name = "b_s")]
    BS,
    /// Pointwise t intervals.
    #[value(name = "naive_t")]
    NaiveT,
}

#[derive(Args)]
struct BandArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, value_enum, default_value = "b_ec")]
    kind: BandArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    trunc: TruncArgs,
    #[arg(long, default_value_t = 1000)]
    nboot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Band CSV: t, center, lower, upper.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Curves CSV drawn over the band in the SVG.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct TwosampleArgs {
    first: PathBuf,
    second: PathBuf,
    /// Directory for pvalues.csv, marginals.csv and band.svg.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "e_norm,e_pc,e_pc3,e_c,r_z,r_z1,b_s")]
    regions: Vec<RegionKind>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    trunc: TruncArgs,
    #[arg(long, default_value_t = 3)]
    pc_j: usize,
    /// Rectangle whose marginal intervals are exported.
    #[arg(long, default_value = "r_z")]
    marginal_region: RegionKind,
    #[arg(long)]
    zscore: bool,
    #[arg(long, default_value_t = 1000)]
    nboot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    nu: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    #[arg(long, default_value_t = 1.0)]
    warp: f64,
    /// Constant added to the mean 10t^3 - 15t^4 + 6t^5.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the true mean curve here.
    #[arg(long)]
    mean_out: Option<PathBuf>,
}

#[derive(Args)]
struct DtiLikeArgs {
    #[arg(long)]
    mean: PathBuf,
    /// Covariance CSV: grid row, then one kernel row per grid point.
    #[arg(long)]
    cov: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SmoothArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, default_value_t = 20)]
    n_basis: usize,
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    degree: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(&a),
        Command::Region(a) => region(&a),
        Command::Band(a) => band(&a),
        Command::Twosample(a) => twosample(&a),
        Command::Sample(a) => sample(&a),
        Command::DtiLike(a) => {
            let s = dti_like(&a.mean, &a.cov, a.n, a.seed, Quadrature::Trapezoid)?;
            s.write_csv(&a.out)?;
            Ok(())
        }
        Command::Smooth(a) => {
            let s = read_sample(&a.sample)?;
            smooth_bspline(&s, a.n_basis, a.degree)?.write_csv(&a.out)?;
            Ok(())
        }
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = a.config()?;
    if a.dry_run {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let table = run_experiment(&cfg)?;
    match &a.out {
        Some(p) => emit_outputs(Artifact::Table(&table), p, Format::Csv)?,
        None => print!("{}", table.to_csv_string()),
    }
    if let Some(p) = &a.meta {
        table.write_metadata_json(p)?;
    }
    if let Some(p) = &a.svg {
        emit_outputs(Artifact::Table(&table), p, Format::Svg)?;
    }
    Ok(())
}

fn read_sample(path: &Path) -> Result<FunctionalSample> {
    FunctionalSample::read_csv(path, Quadrature::Trapezoid)
        .with_context(|| format!("reading sample {}", path.display()))
}

/// First curve of `path`, moved onto `like`'s grid after checking the points.
fn read_curve_on(path: &Path, like: &FunctionalSample) -> Result<Curve> {
    let (grid, curves) =
        read_curves_csv(path, Quadrature::Trapezoid).with_context(|| format!("reading curve {}", path.display()))?;
    let c = curves.into_iter().next().context("curve file has no curve rows")?;
    if grid.points() != like.grid().points() {
        bail!("{} is on a different grid than the sample", path.display());
    }
    Ok(Curve::new(like.grid().clone(), c.into_values())?)
}

struct Estimate {
    mean: Curve,
    cov: CovOperator,
    eig: Arc<EigenSystem>,
    j: usize,
}

fn estimate(s: &FunctionalSample, trunc: &TruncArgs) -> Result<Estimate> {
    let (mean, cov) = mean_cov(s)?;
    let eig = Arc::new(eigensystem(&cov, DEFAULT_TRIM)?);
    let j = trunc.rule().resolve(&eig)?;
    Ok(Estimate { mean, cov, eig, j })
}

fn region(a: &RegionArgs) -> Result<()> {
    let s = read_sample(&a.sample)?;
    let theta0 = read_curve_on(&a.theta0, &s)?;
    let (r, j) = one_sample_region(&s, a.region, a.trunc.rule(), a.pc_j, a.alpha, a.nboot, a.seed)?;
    let p = r.pvalue(&theta0)?;
    println!("region,{}", a.region);
    println!("n,{}", s.n());
    println!("j,{j}");
    println!("alpha,{}", a.alpha);
    match p {
        Some(p) => println!("pvalue,{p}"),
        None => println!("pvalue,NA"),
    }
    println!("reject,{}", r.rejects(&theta0)?);
    if let Some(path) = &a.summary {
        match &r {
            BuiltRegion::Ellipsoid(e) => e.write_summary_csv(path)?,
            BuiltRegion::Rect(x) => x.write_marginals_csv(path, a.zscore)?,
            BuiltRegion::Sup { cal, center, n, .. } => cal.band(center.clone(), *n, a.alpha)?.write_csv(path)?,
            BuiltRegion::Band(b) => b.write_csv(path)?,
        }
    }
    Ok(())
}

fn make_band(kind: BandArg, est: &Estimate, n: usize, alpha: f64, nboot: usize, seed: u64) -> Result<Band> {
    Ok(match kind {
        BandArg::BEc => band_from_ellipsoid(&make_ellipsoid(
            est.mean.clone(),
            est.eig.clone(),
            CRule::SqrtLambda,
            alpha,
            n,
            est.j,
        )?),
        BandArg::BS => SupCalibration::new(&est.cov, nboot, seed)?.band(est.mean.clone(), n, alpha)?,
        BandArg::NaiveT => band_naive_t(&est.mean, &pointwise_sd(&est.cov), n, alpha)?,
    })
}

fn band(a: &BandArgs) -> Result<()> {
    if a.csv.is_none() && a.svg.is_none() {
        bail!("nothing to write: pass --csv and/or --svg");
    }
    let s = read_sample(&a.sample)?;
    let est = estimate(&s, &a.trunc)?;
    let b = make_band(a.kind, &est, s.n(), a.alpha, a.nboot, a.seed)?;
    if let Some(p) = &a.csv {
        emit_outputs(Artifact::Band(&b), p, Format::Csv)?;
    }
    if let Some(p) = &a.svg {
        let overlays = match &a.overlay {
            Some(path) => {
                let o = read_sample(path)?;
                if o.grid().points() != s.grid().points() {
                    bail!("{} is on a different grid than the sample", path.display());
                }
                o.curves().to_vec()
            }
            None => Vec::new(),
        };
        let names: Vec<String> = (0..overlays.len()).map(|i| format!("curve {}", i + 1)).collect();
        let pairs: Vec<(&str, &Curve)> = names.iter().map(String::as_str).zip(overlays.iter()).collect();
        emit_outputs(
            Artifact::Bands {
                bands: std::slice::from_ref(&b),
                overlays: &pairs,
            },
            p,
            Format::Svg,
        )?;
    }
    Ok(())
}

fn twosample(a: &TwosampleArgs) -> Result<()> {
    let s1 = read_sample(&a.first)?;
    let s2 = read_sample(&a.second)?;
    if s1.grid().points() != s2.grid().points() {
        bail!("the two samples are on different grids");
    }
    let s2 = FunctionalSample::new(
        s2.curves()
            .iter()
            .map(|c| Curve::new(s1.grid().clone(), c.values().to_vec()))
            .collect::<fdaregion::Result<Vec<_>>>()?,
    )?;
    let ts = two_sample(&s1, &s2)?;
    let rule = a.trunc.rule();
    let regions = two_sample_regions(&ts, &a.regions, rule, a.pc_j, a.alpha, a.nboot, a.seed)?;
    let zero = Curve::zeros(s1.grid().clone());

    let mut table = ReportTable::new(vec!["pvalue".into(), "reject".into()]);
    for (kind, r) in a.regions.iter().zip(&regions) {
        let p = r.pvalue(&zero)?.unwrap_or(f64::NAN);
        table.push(kind.label(), vec![p, f64::from(u8::from(r.rejects(&zero)?))])?;
    }
    table.set_meta("n1", ts.n1);
    table.set_meta("n2", ts.n2);
    table.set_meta("alpha", a.alpha);
    table.set_meta("scaling", ts.effective_scaling());

    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    emit_outputs(Artifact::Table(&table), a.out_dir.join("pvalues.csv"), Format::Csv)?;
    print!("{}", table.to_csv_string());

    let eig = Arc::new(eigensystem(&ts.combined_cov, DEFAULT_TRIM)?);
    let j = rule.resolve(&eig)?;
    let kind = match a.marginal_region {
        RegionKind::RZ => RectKind::Z,
        RegionKind::RZ1 => RectKind::Z1,
        RegionKind::RC => RectKind::C,
        RegionKind::RC1 => RectKind::C1,
        other => bail!("marginal intervals need one of r_z, r_z1, r_c, r_c1, got {other}"),
    };
    let n = fdaregion::estimators::TwoSampleResult::EFFECTIVE_N;
    let rect = make_rect(ts.diff_mean.clone(), eig.clone(), RectVariant::new(kind), a.alpha, n, j)?;
    rect.write_marginals_csv(a.out_dir.join("marginals.csv"), a.zscore)?;

    let est = Estimate {
        mean: ts.diff_mean.clone(),
        cov: ts.combined_cov.clone(),
        eig,
        j,
    };
    let bands = [
        make_band(BandArg::BEc, &est, n, a.alpha, a.nboot, a.seed)?,
        make_band(BandArg::BS, &est, n, a.alpha, a.nboot, a.seed)?,
    ];
    emit_outputs(
        Artifact::Bands {
            bands: &bands,
            overlays: &[("zero", &zero)],
        },
        a.out_dir.join("band.svg"),
        Format::Svg,
    )?;
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let grid = fdaregion::fnspace::Grid::uniform(a.grid_size, 0.0, 1.0, Quadrature::Trapezoid)?;
    let cov = matern_cov(&grid, a.nu, a.sigma, a.warp)?;
    let mean = Curve::from_fn(grid, |t| poly_mean(t) + a.shift);
    sample_gp(&mean, &cov, a.n, a.seed)?.write_csv(&a.out)?;
    if let Some(p) = &a.mean_out {
        fdaregion::fnspace::write_curves_csv(p, std::slice::from_ref(&mean))?;
    }
    Ok(())
}
