use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use selfcal::baselines::{empirical_class_prior, majority_vote, staple, StapleConfig};
use selfcal::calibrate::{hq_solve, recur, HqConfig, RecurrenceConfig};
use selfcal::fusion::{self_fuse, FusionMode, DEFAULT_EPSILON};
use selfcal::io::{
    read_grid_file, read_mrl, read_mrp, trace_report, write_mrl, write_mrp, write_text,
};
use selfcal::metrics::{cross_entropy, dice, ssim, DiceSpec, SsimSpec};
use selfcal::synth::{corrupt, make_gold, GoldSpec, RaterSpec};
use selfcal::{Error, LabelStack, PriorMap, Result};

#[derive(Parser)]
#[command(
    name = "selfcal",
    version,
    about = "Multi-rater segmentation label fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a nested-ellipse gold mask and a stack of noisy raters.
    Synth(SynthArgs),
    /// Run the self-calibration recurrence and print one record per iteration.
    Calibrate(CalibrateArgs),
    /// Majority vote or STAPLE.
    Baseline(BaselineArgs),
    /// One fusion pass weighted by per-rater predicted label maps.
    Fuse(FuseArgs),
    /// Compare a prediction with a reference.
    Eval(EvalArgs),
    /// Half-quadratic alternating minimisation.
    Hq(HqArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Prop1,
    Literal,
}

impl From<Mode> for FusionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Prop1 => FusionMode::ConfusionLikelihood,
            Mode::Literal => FusionMode::LogConfidence,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    raters: usize,
    #[arg(long)]
    seed: u64,
    /// Confusion diagonal per rater; a single value applies to all.
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    noise_diag: Vec<f64>,
    /// Dilation (+) or erosion (-) rounds per rater; a single value applies to all.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0",
        allow_hyphen_values = true
    )]
    jitter: Vec<i32>,
    #[arg(long)]
    out_gold: PathBuf,
    #[arg(long)]
    out_stack: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value_t = 4)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_enum, default_value = "prop1")]
    mode: Mode,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Per-pixel class prior as a probability map.
    #[arg(long, conflicts_with = "empirical_prior")]
    prior: Option<PathBuf>,
    /// Use the majority-vote class frequencies as the prior.
    #[arg(long)]
    empirical_prior: bool,
    /// Single-rater label file to report Dice against.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "disc=1,2;cup=2")]
    classes: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mv,
    Staple,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    stack: PathBuf,
    /// One probability map per rater, in stack order.
    #[arg(long, value_delimiter = ',', required = true)]
    rater_probs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "prop1")]
    mode: Mode,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Dice,
    Ssim,
    Ce,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value = "disc=1,2;cup=2")]
    classes: String,
    #[arg(long, default_value_t = 7)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct HqArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    beta0: f64,
    #[arg(long, default_value_t = 2.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 50)]
    inner: usize,
    #[arg(long, default_value_t = 20)]
    outer: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn per_rater<T: Copy>(values: &[T], raters: usize, flag: &str) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0]; raters]),
        n if n == raters => Ok(values.to_vec()),
        n => Err(Error::InvalidArgument(format!(
            "--{flag} takes 1 or {raters} values, got {n}"
        ))),
    }
}

fn synth(args: SynthArgs) -> Result<String> {
    if args.raters == 0 {
        return Err(Error::InvalidArgument("--raters must be at least 1".into()));
    }
    let gold = make_gold(&GoldSpec::centered(args.height, args.width))?;
    let diags = per_rater(&args.noise_diag, args.raters, "noise-diag")?;
    let jitters = per_rater(&args.jitter, args.raters, "jitter")?;
    let raters = diags
        .iter()
        .zip(&jitters)
        .enumerate()
        .map(|(m, (&d, &j))| RaterSpec::symmetric(gold.classes(), d, j, m as u64))
        .collect::<Result<Vec<_>>>()?;
    let stack = corrupt(&gold, &raters, args.seed)?;
    write_text(&args.out_gold, &write_mrl(&LabelStack::new(vec![gold])?))?;
    write_text(&args.out_stack, &write_mrl(&stack))?;
    Ok(String::new())
}

fn calibrate(args: CalibrateArgs) -> Result<String> {
    let stack = read_mrl(&args.stack)?;
    let prior = if let Some(path) = &args.prior {
        Some(PriorMap::from_probs(&read_mrp(path)?, args.epsilon)?)
    } else if args.empirical_prior {
        let classes = empirical_class_prior(&stack, args.epsilon)?;
        Some(PriorMap::from_class_prior(stack.plane(), &classes)?)
    } else {
        None
    };
    let reference = match &args.reference {
        Some(path) => Some(read_grid_file(path)?.into_class_grid()?),
        None => None,
    };
    let spec = DiceSpec::parse(&args.classes)?;
    if let Some(r) = &reference {
        stack.plane().check_plane(&r.shape(), "reference")?;
    }
    let config = RecurrenceConfig {
        max_recurrences: args.iters,
        tol: args.tol,
        epsilon: args.epsilon,
        mode: args.mode.into(),
        prior,
        ..Default::default()
    };
    let trace = recur(&stack, &config)?;
    let report = trace_report(&trace, reference.as_ref().map(|r| (r, &spec)))?;
    write_text(&args.out, &write_mrp(trace.final_fused()))?;
    Ok(report)
}

fn baseline(args: BaselineArgs) -> Result<String> {
    let stack = read_mrl(&args.stack)?;
    let mut out = String::new();
    let fused = match args.method {
        Method::Mv => {
            out.push_str("method=mv\n");
            majority_vote(&stack).0
        }
        Method::Staple => {
            let result = staple(&stack, &StapleConfig::default())?;
            let _ = writeln!(out, "method=staple iterations={}", result.iterations);
            for (m, theta) in result.confusion.confusions.iter().enumerate() {
                let mut fields = vec![format!("rater={m}")];
                let k = theta.classes();
                for t in 0..k {
                    for c in 0..k {
                        fields.push(format!("theta_{t}_{c}={:.6}", theta.get(t, c)));
                    }
                }
                let _ = writeln!(out, "{}", fields.join(" "));
            }
            result.posterior
        }
    };
    if let Some(path) = &args.out {
        write_text(path, &write_mrp(&fused))?;
    }
    Ok(out)
}

fn fuse_cmd(args: FuseArgs) -> Result<String> {
    let stack = read_mrl(&args.stack)?;
    let probs = args
        .rater_probs
        .iter()
        .map(|p| read_mrp(p))
        .collect::<Result<Vec<_>>>()?;
    let fused = self_fuse(&stack, &probs, args.mode.into(), args.epsilon)?;
    write_text(&args.out, &write_mrp(&fused))?;
    Ok(String::new())
}

fn eval(args: EvalArgs) -> Result<String> {
    let pred = read_grid_file(&args.pred)?;
    let reference = read_grid_file(&args.reference)?;
    Ok(match args.metric {
        Metric::Dice => {
            let spec = DiceSpec::parse(&args.classes)?;
            let scores = dice(
                &pred.into_class_grid()?,
                &reference.into_class_grid()?,
                &spec,
            )?;
            let fields: Vec<String> = scores
                .iter()
                .map(|(name, s)| format!("{name}={s:.6}"))
                .collect();
            format!("{}\n", fields.join(" "))
        }
        Metric::Ssim => {
            let spec = SsimSpec {
                window: args.window,
                ..Default::default()
            };
            let s = ssim(&pred.into_prob_map()?, &reference.into_prob_map()?, &spec)?;
            format!("ssim={s:.9}\n")
        }
        Metric::Ce => {
            let ce = cross_entropy(
                &pred.into_prob_map()?,
                &reference.into_class_grid()?,
                args.epsilon,
            )?;
            format!("ce={ce:.9}\n")
        }
    })
}

fn hq(args: HqArgs) -> Result<String> {
    let stack = read_mrl(&args.stack)?;
    let config = HqConfig {
        beta0: args.beta0,
        kappa: args.kappa,
        gamma: args.gamma,
        inner_iterations: args.inner,
        max_outer: args.outer,
        tol: args.tol,
        ..Default::default()
    };
    let state = hq_solve(&stack, &config)?;
    let mut out = String::new();
    for (i, (beta, obj)) in state.betas.iter().zip(&state.objective).enumerate() {
        let _ = writeln!(
            out,
            "iteration={} beta={beta:.6e} objective={obj:.12e}",
            i + 1
        );
    }
    if let Some(path) = &args.out {
        write_text(path, &write_mrp(&state.fused()))?;
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Baseline(a) => baseline(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Hq(a) => hq(a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
