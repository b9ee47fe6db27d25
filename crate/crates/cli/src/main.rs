mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ve_core::interval::{bonferroni_family_with, interval_family_with, InversionMethod, InvertOptions, PValueSource};
use ve_core::sim::{power_study, SimDesign, TABLE_RATIOS, TABLE_TAU_B};
use ve_core::{
    amplify, balance_table, match_cohort, randtest, AmplifyPair, Cohort, ColumnSpec, Error, FullMatch, GammaSpec,
    NullSpec, RatioConstraint, StatisticSpec, Version, VersionArm, VersionData, VersionLabels,
};

use crate::output::{emit, Failure};

#[derive(Parser)]
#[command(name = "ve", version, about = "Randomization inference for matched studies with versions of control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal full match of a cohort; writes the cohort with a set_id column
    Match(MatchArgs),
    /// Standardized covariate differences before and after matching
    Balance(BalanceArgs),
    /// Test the constant-effect hypothesis tau = tau0 on a matched cohort
    Test(TestArgs),
    /// Intervals Ic, Ia, Ib and their hulls Iv, Istar from three matched cohorts
    Ci(CiArgs),
    /// The same intervals with P-values bounded under hidden bias gamma
    Sensitivity(SensitivityArgs),
    /// Gamma equivalent to a (lambda, delta) pair
    Amplify(AmplifyArgs),
    /// Power and coverage study on simulated version designs
    Simulate(SimulateArgs),
    /// Plot-ready interval rows: label,lo,hi,gamma
    Plotdata(GammaArgs),
}

#[derive(Args, Clone)]
struct Columns {
    #[arg(long, default_value = "id")]
    id_col: String,
    #[arg(long, default_value = "treated")]
    treated_col: String,
    #[arg(long, default_value = "outcome")]
    outcome_col: String,
    /// Ignored when the column is absent
    #[arg(long, default_value = "version")]
    version_col: String,
    /// Ignored when the column is absent
    #[arg(long, default_value = "set_id")]
    set_col: String,
    /// Covariate columns, comma separated [default: every other column]
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Value of the version column that means version a
    #[arg(long, default_value = "A")]
    label_a: String,
    /// Value of the version column that means version b
    #[arg(long, default_value = "B")]
    label_b: String,
    /// Arm whose units carry version labels
    #[arg(long, value_enum, default_value_t = Arm::Control)]
    version_arm: Arm,
}

impl Columns {
    fn spec(&self) -> ColumnSpec {
        ColumnSpec {
            id: self.id_col.clone(),
            treated: self.treated_col.clone(),
            outcome: self.outcome_col.clone(),
            version: Some(self.version_col.clone()),
            set_id: Some(self.set_col.clone()),
            covariates: self.covariates.clone(),
            labels: VersionLabels {
                a: self.label_a.clone(),
                b: self.label_b.clone(),
            },
            version_arm: match self.version_arm {
                Arm::Control => VersionArm::Control,
                Arm::Treatment => VersionArm::Treatment,
            },
        }
    }

    fn load(&self, path: &PathBuf) -> Result<Cohort, Failure> {
        Cohort::load_csv(path, &self.spec()).map_err(|e| Failure::input(path, e))
    }

    fn load_match(&self, path: &PathBuf) -> Result<FullMatch, Failure> {
        FullMatch::from_cohort(&self.load(path)?).map_err(|e| Failure::input(path, e))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Arm {
    Control,
    Treatment,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stat {
    /// Weighted treated-minus-control mean difference
    Mean,
    /// Huber psi scores of within-set residuals
    Huber,
}

#[derive(Clone, Copy, ValueEnum)]
enum Null {
    Exact,
    Mc,
    Normal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum VersionChoice {
    A,
    B,
}

#[derive(Args, Clone)]
struct StatArgs {
    #[arg(long, value_enum, default_value_t = Stat::Mean)]
    stat: Stat,
    /// Fixed Huber scale [default: median absolute residual]
    #[arg(long)]
    huber_scale: Option<f64>,
}

impl StatArgs {
    fn spec(&self) -> Result<StatisticSpec, Failure> {
        Ok(match (self.stat, self.huber_scale) {
            (Stat::Mean, _) => StatisticSpec::mean_diff(),
            (Stat::Huber, None) => StatisticSpec::huber(),
            (Stat::Huber, Some(s)) => StatisticSpec::huber_fixed(s)?,
        })
    }
}

#[derive(Args, Clone)]
struct NullArgs {
    /// Null distribution [default: mc for `test`, normal for `ci`]
    #[arg(long, value_enum)]
    null: Option<Null>,
    /// Monte Carlo draws
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl NullArgs {
    fn spec(&self, default: Null) -> Result<NullSpec, Failure> {
        Ok(match self.null.unwrap_or(default) {
            Null::Exact => NullSpec::Exact,
            Null::Mc => NullSpec::monte_carlo(self.draws, self.seed)?,
            Null::Normal => NullSpec::Normal,
        })
    }
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    columns: Columns,
    /// Max controls per treated unit : max treated units per control
    #[arg(long, default_value = "6:6")]
    ratio: String,
    /// Forbid pairs farther apart than this Mahalanobis distance
    #[arg(long)]
    caliper: Option<f64>,
    /// Keep only controls (or treated units) of one version before matching
    #[arg(long, value_enum)]
    version: Option<VersionChoice>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BalanceArgs {
    /// Matched cohort CSV with a set id column
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    columns: Columns,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    columns: Columns,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    tau0: f64,
    #[command(flatten)]
    stat: StatArgs,
    #[command(flatten)]
    null: NullArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct VersionInputs {
    /// Treated units matched to all controls
    #[arg(long)]
    input_all: PathBuf,
    /// Treated units matched to version-a controls
    #[arg(long)]
    input_a: PathBuf,
    /// Treated units matched to version-b controls
    #[arg(long)]
    input_b: PathBuf,
    #[command(flatten)]
    columns: Columns,
}

impl VersionInputs {
    fn load(&self) -> Result<VersionData, Failure> {
        let all = self.columns.load_match(&self.input_all)?;
        let a = self.columns.load_match(&self.input_a)?;
        let b = self.columns.load_match(&self.input_b)?;
        Ok(VersionData::new(all, a, b)?)
    }
}

#[derive(Args, Clone)]
struct InversionArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Scan a grid LO:HI:STEP instead of bisecting
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Bisection tolerance in outcome units
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Also report each interval at alpha/3
    #[arg(long)]
    bonferroni: bool,
}

impl InversionArgs {
    fn options(&self) -> Result<InvertOptions, Failure> {
        let method = match &self.grid {
            None => InversionMethod::Bisection,
            Some(g) => {
                let parts: Vec<f64> = g
                    .split(':')
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| Failure::usage(format!("--grid {g:?} is not LO:HI:STEP")))?;
                match parts[..] {
                    [lo, hi, step] if lo < hi && step > 0.0 => InversionMethod::Grid { lo, hi, step },
                    _ => return Err(Failure::usage(format!("--grid {g:?} is not LO:HI:STEP with LO < HI, STEP > 0"))),
                }
            }
        };
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Failure::usage("--tol must be positive"));
        }
        Ok(InvertOptions {
            method,
            tol: self.tol,
            ..InvertOptions::default()
        })
    }
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    inputs: VersionInputs,
    #[command(flatten)]
    inversion: InversionArgs,
    #[command(flatten)]
    stat: StatArgs,
    #[command(flatten)]
    null: NullArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GammaArgs {
    #[command(flatten)]
    inputs: VersionInputs,
    #[command(flatten)]
    inversion: InversionArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Bias bound; repeat for several values
    #[arg(long = "gamma", default_values_t = [1.0])]
    gammas: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    run: GammaArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct AmplifyArgs {
    /// Odds multiplier of the hidden covariate on treatment
    #[arg(long)]
    lambda: f64,
    /// Odds multiplier of the hidden covariate on a higher outcome
    #[arg(long)]
    delta: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Effect of treatment against version-b controls; repeatable [default: 0.25 and 0.4]
    #[arg(long = "taub")]
    tau_b: Vec<f64>,
    /// tau_a / tau_b; repeatable [default: 1, 0.95, 0.9, 0.75, 0.65, 0.6, 0.5, 0.25]
    #[arg(long = "ratio-a")]
    ratio_a: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Matched sets per replicate
    #[arg(long, default_value_t = 100)]
    sets: usize,
    #[arg(long, default_value_t = 2)]
    controls_per_version: usize,
    /// Null for the interval inversions
    #[arg(long, value_enum, default_value_t = SimNull::Normal)]
    null: SimNull,
    /// Monte Carlo draws when --null mc
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimNull {
    Normal,
    Mc,
}

fn run_match(a: MatchArgs) -> Result<(), Failure> {
    let mut cohort = a.columns.load(&a.input)?;
    if let Some(v) = a.version {
        let v = match v {
            VersionChoice::A => Version::A,
            VersionChoice::B => Version::B,
        };
        cohort = cohort.subset_by_version(v).map_err(|e| Failure::input(&a.input, e))?;
    }
    let ratio = RatioConstraint::parse(&a.ratio)?;
    let (matched, plan) = match_cohort(&cohort, ratio, a.caliper)?;
    log::info!("{} matched sets, total distance {}", plan.sets.len(), plan.total_cost);
    let mut buf = Vec::new();
    matched.write_csv(&mut buf)?;
    emit(a.out.as_ref(), &buf)
}

fn run_balance(a: BalanceArgs) -> Result<(), Failure> {
    let cohort = a.columns.load(&a.input)?;
    let fm = FullMatch::from_cohort(&cohort).map_err(|e| Failure::input(&a.input, e))?;
    let rows = balance_table(&cohort, &fm)?;
    emit(a.out.as_ref(), &output::json(&output::BalanceDoc::new(rows))?)
}

fn run_test(a: TestArgs) -> Result<(), Failure> {
    let fm = a.columns.load_match(&a.input)?;
    let r = randtest::test(&fm, a.tau0, &a.stat.spec()?, a.null.spec(Null::Mc)?)?;
    emit(a.out.as_ref(), &output::json(&output::TestDoc::new(r))?)
}

fn run_ci(a: CiArgs) -> Result<(), Failure> {
    let v = a.inputs.load()?;
    let source = PValueSource::Randomization(a.null.spec(Null::Normal)?);
    let families = interval_families(&v, &a.inversion, &a.stat.spec()?, &[source])?;
    emit(a.out.as_ref(), &output::intervals(&families, a.inversion.alpha, a.format)?)
}

fn run_sensitivity(a: GammaArgs, format: Format) -> Result<(), Failure> {
    let v = a.inputs.load()?;
    let sources = a
        .gammas
        .iter()
        .map(|&g| Ok(PValueSource::Sensitivity(GammaSpec::new(g)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let families = interval_families(&v, &a.inversion, &a.stat.spec()?, &sources)?;
    emit(a.out.as_ref(), &output::intervals(&families, a.inversion.alpha, format)?)
}

fn interval_families(
    v: &VersionData,
    inv: &InversionArgs,
    spec: &StatisticSpec,
    sources: &[PValueSource],
) -> Result<Vec<output::Family>, Failure> {
    let opts = inv.options()?;
    sources
        .iter()
        .map(|src| {
            let set = interval_family_with(v, inv.alpha, spec, src, &opts)?;
            let bonferroni = if inv.bonferroni {
                bonferroni_family_with(v, inv.alpha, spec, src, &opts)?.to_vec()
            } else {
                Vec::new()
            };
            Ok(output::Family { set, bonferroni })
        })
        .collect()
}

fn run_amplify(a: AmplifyArgs) -> Result<(), Failure> {
    let g = amplify(AmplifyPair::new(a.lambda, a.delta)?);
    emit(None, format!("{g}\n").as_bytes())
}

fn run_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let tau_bs = if a.tau_b.is_empty() { TABLE_TAU_B.to_vec() } else { a.tau_b.clone() };
    let ratios = if a.ratio_a.is_empty() { TABLE_RATIOS.to_vec() } else { a.ratio_a.clone() };
    let null = match a.null {
        SimNull::Normal => NullSpec::Normal,
        SimNull::Mc => NullSpec::monte_carlo(a.draws, a.seed)?,
    };
    let mut reports = Vec::new();
    for &tau_b in &tau_bs {
        for &ratio in &ratios {
            let d = SimDesign {
                sets: a.sets,
                controls_per_version: a.controls_per_version,
                alpha: a.alpha,
                reps: a.reps,
                seed: a.seed,
                null,
                ..SimDesign::with_ratio(tau_b, ratio)
            };
            log::info!("simulating tau_b={tau_b} ratio_a={ratio}");
            reports.push((ratio, power_study(&d)?));
        }
    }
    emit(a.out.as_ref(), &output::simulation_csv(&reports)?)
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("VE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::usage(format!("VE_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Match(a) => run_match(a),
        Command::Balance(a) => run_balance(a),
        Command::Test(a) => run_test(a),
        Command::Ci(a) => run_ci(a),
        Command::Sensitivity(a) => run_sensitivity(a.run, a.format),
        Command::Amplify(a) => run_amplify(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Plotdata(a) => run_sensitivity(a, Format::Csv),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from_error(None, e)
    }
}
