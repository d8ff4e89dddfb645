mod config;
mod png;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use refsep::metrics::evaluate;
use refsep::solver::IterationTrace;
use refsep::synth::{procedural_pair, synthesize_mixture};
use refsep::{
    dct_dictionary, haar_bank, random_dictionary, ConvDictionary, DictKind, Dictionaries, GroundTruth, PairKind,
    ReflectionInit, Separator, SolverConfig,
};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "refsep",
    version,
    about = "Separate an image into transmission and reflection layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate one PNG, or every PNG in a directory.
    Separate(Box<SeparateArgs>),
    /// Write a procedural transmission/reflection pair and their mixture.
    Synth(SynthArgs),
    /// Print quality metrics of estimates against references as JSON.
    Eval(EvalArgs),
    /// Export a dictionary in the binary dictionary format.
    Dict(DictArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum DictKindArg {
    Dct,
    Random,
}

impl From<DictKindArg> for DictKind {
    fn from(k: DictKindArg) -> Self {
        match k {
            DictKindArg::Dct => DictKind::Dct,
            DictKindArg::Random => DictKind::Random,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum InitArg {
    Zero,
    Half,
}

#[derive(Args)]
struct SolverArgs {
    /// Start from the small desk profile (2 scales of 2 layers) instead of
    /// the full defaults.
    #[arg(long)]
    desk: bool,
    /// JSON file with solver and run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scales: Option<usize>,
    /// Layers per scale.
    #[arg(long)]
    layers: Option<usize>,
    /// Number of dictionary atoms.
    #[arg(long)]
    atoms: Option<usize>,
    /// Atom side length (odd).
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Geometric growth of tau per layer.
    #[arg(long)]
    tau_growth: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    /// Set all four steps and turn auto-step off.
    #[arg(long)]
    steps: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long)]
    eta3: Option<f64>,
    #[arg(long)]
    eta4: Option<f64>,
    #[arg(long, action = ArgAction::Set)]
    auto_step: Option<bool>,
    #[arg(long, value_enum)]
    dict_kind: Option<DictKindArg>,
    #[arg(long, value_enum)]
    reflection_init: Option<InitArg>,
    #[arg(long)]
    coupled_reflection_gradient: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = if self.desk {
            SolverConfig::desk()
        } else {
            SolverConfig::default()
        };
        let mut rc = RunConfig::load(base, self.config.as_deref())?;
        let c = &mut rc.solver;
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v.into(); })*
            };
        }
        set!(scales => scales, layers => layers_per_scale, atoms => n_atoms, kernel => atom_side,
             tau => tau, kappa => kappa, lambda_t => lambda_t, lambda_r => lambda_r, seed => seed);
        if let Some(g) = self.tau_growth {
            c.tau_growth = Some(g);
        }
        if let Some(eta) = self.steps {
            (c.eta1, c.eta2, c.eta3, c.eta4) = (eta, eta, eta, eta);
            c.auto_step = false;
        }
        for (flag, field) in [
            (self.eta1, &mut c.eta1),
            (self.eta2, &mut c.eta2),
            (self.eta3, &mut c.eta3),
            (self.eta4, &mut c.eta4),
        ] {
            if let Some(v) = flag {
                *field = v;
                c.auto_step = false;
            }
        }
        if let Some(a) = self.auto_step {
            c.auto_step = a;
        }
        if let Some(k) = self.dict_kind {
            c.dict_kind = k.into();
        }
        if let Some(init) = self.reflection_init {
            c.reflection_init = match init {
                InitArg::Zero => ReflectionInit::Zero,
                InitArg::Half => ReflectionInit::Half,
            };
        }
        if self.coupled_reflection_gradient {
            c.coupled_reflection_gradient = true;
        }
        c.validate()?;
        Ok(rc)
    }
}

#[derive(Args)]
struct SeparateArgs {
    /// Input PNG or a directory of PNGs.
    input: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory (default: current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// CSV trace: a file for one input, a directory for a batch.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Dictionary file used for both layers.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Ground-truth transmission, adds PSNR columns to the trace.
    #[arg(long, requires = "truth_r")]
    truth_t: Option<PathBuf>,
    #[arg(long, requires = "truth_t")]
    truth_r: Option<PathBuf>,
    /// Metrics JSON against the ground truth.
    #[arg(long, requires = "truth_t")]
    metrics: Option<PathBuf>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "checker")]
    kind: PairKind,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    no_clip: bool,
    /// JSON file; only the mixture and run keys are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated transmission.
    #[arg(long)]
    t_hat: PathBuf,
    /// Estimated reflection.
    #[arg(long)]
    r_hat: PathBuf,
    /// Reference transmission.
    #[arg(long)]
    t: PathBuf,
    /// Reference reflection.
    #[arg(long)]
    r: PathBuf,
    /// Also write the JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DictArgs {
    #[arg(long, default_value_t = 16)]
    atoms: usize,
    #[arg(long, default_value_t = 7)]
    kernel: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, value_enum, default_value = "dct")]
    kind: DictKindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Failure to write results, as opposed to bad input.
#[derive(Debug)]
struct OutputFailure;

impl std::fmt::Display for OutputFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("output failure")
    }
}

impl std::error::Error for OutputFailure {}

fn output<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(OutputFailure))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if matches!(
            cause.downcast_ref::<refsep::Error>(),
            Some(refsep::Error::Divergence { .. })
        ) {
            return 3;
        }
        if cause.downcast_ref::<OutputFailure>().is_some() {
            return 1;
        }
    }
    2
}

#[derive(Serialize)]
struct TraceRow {
    scale: usize,
    layer: usize,
    objective: f64,
    fidelity: f64,
    couple_t: f64,
    couple_r: f64,
    sparsity: f64,
    exclusion: f64,
    psnr_t: Option<f64>,
    psnr_r: Option<f64>,
}

fn write_trace(path: &Path, trace: &IterationTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for r in &trace.records {
        w.serialize(TraceRow {
            scale: r.scale,
            layer: r.layer,
            objective: r.objective,
            fidelity: r.terms.fidelity,
            couple_t: r.terms.couple_t,
            couple_r: r.terms.couple_r,
            sparsity: r.terms.sparsity,
            exclusion: r.terms.exclusion,
            psnr_t: r.psnr_t,
            psnr_r: r.psnr_r,
        })?;
    }
    // An empty trace still gets its header.
    if trace.records.is_empty() {
        w.write_record([
            "scale",
            "layer",
            "objective",
            "fidelity",
            "couple_t",
            "couple_r",
            "sparsity",
            "exclusion",
            "psnr_t",
            "psnr_r",
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        if !input.is_file() {
            bail!("input {} does not exist", input.display());
        }
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("cannot list {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG files in {}", input.display());
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

struct Job<'a> {
    cfg: &'a SolverConfig,
    dictionary: Option<&'a ConvDictionary>,
    out_dir: &'a Path,
    trace: Option<PathBuf>,
    metrics: Option<PathBuf>,
    truth: Option<(refsep::Image, refsep::Image)>,
}

fn separate_one(path: &Path, job: &Job<'_>) -> Result<()> {
    let input = png::read(path)?;
    let mut cfg = job.cfg.clone();
    if job.trace.is_some() {
        cfg.trace = true;
    }
    let sep = match job.dictionary {
        Some(d) => {
            cfg.n_atoms = d.atoms();
            cfg.atom_side = d.side();
            Separator::new(cfg, Dictionaries::shared(d.clone()), haar_bank())?
        }
        None => Separator::from_config(cfg, input.channels())?,
    };
    let truth = job.truth.as_ref().map(|(t, r)| GroundTruth {
        transmission: t,
        reflection: r,
    });
    let out = sep
        .solve(&input, truth)
        .with_context(|| format!("separating {}", path.display()))?;
    let name = stem(path);
    output(png::write(
        &job.out_dir.join(format!("{name}_T.png")),
        &out.transmission,
    ))?;
    output(png::write(&job.out_dir.join(format!("{name}_R.png")), &out.reflection))?;
    if let Some(t) = &job.trace {
        output(write_trace(t, &out.trace))?;
    }
    if let (Some(p), Some((t, r))) = (&job.metrics, &job.truth) {
        let report = evaluate(&out.transmission, &out.reflection, t, r, &haar_bank())?;
        let json = serde_json::to_string_pretty(&report)?;
        output(fs::write(p, format!("{json}\n")).with_context(|| format!("cannot write {}", p.display())))?;
    }
    log::info!(
        "{}: {} layers, {} warnings",
        path.display(),
        out.trace.records.len(),
        out.trace.warnings.len()
    );
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start worker threads")
}

fn cmd_separate(args: SeparateArgs) -> Result<()> {
    let rc = args.solver.resolve()?;
    let input = args
        .input
        .clone()
        .or(rc.run.input.clone())
        .ok_or_else(|| anyhow!("no input given"))?;
    let files = list_inputs(&input)?;
    let batch = input.is_dir();
    let out_dir = args
        .out_dir
        .or(rc.run.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    output(fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display())))?;
    let trace = args.trace.or(rc.run.trace_path.clone());
    if batch {
        if let Some(t) = &trace {
            output(fs::create_dir_all(t).with_context(|| format!("cannot create {}", t.display())))?;
        }
    }
    let dictionary = match args.dictionary.or(rc.run.dictionary.clone()) {
        Some(p) => {
            let f = fs::File::open(&p).with_context(|| format!("cannot open {}", p.display()))?;
            Some(
                ConvDictionary::read_from(std::io::BufReader::new(f))
                    .with_context(|| format!("reading {}", p.display()))?,
            )
        }
        None => None,
    };
    let truth = match (&args.truth_t, &args.truth_r) {
        (Some(t), Some(r)) => {
            if batch {
                bail!("ground truth applies to a single input only");
            }
            Some((png::read(t)?, png::read(r)?))
        }
        _ => None,
    };
    let metrics = args.metrics.or(rc.run.metrics_path.clone());
    if metrics.is_some() && truth.is_none() {
        bail!("metrics need --truth-t and --truth-r");
    }
    let jobs = args.jobs.or(rc.run.jobs).unwrap_or(0);

    let pool = thread_pool(jobs)?;
    let results: Vec<(PathBuf, Result<()>)> = pool.install(|| {
        files
            .par_iter()
            .map(|f| {
                let job = Job {
                    cfg: &rc.solver,
                    dictionary: dictionary.as_ref(),
                    out_dir: &out_dir,
                    trace: trace.as_ref().map(|t| {
                        if batch {
                            t.join(format!("{}.csv", stem(f)))
                        } else {
                            t.clone()
                        }
                    }),
                    metrics: metrics.clone(),
                    truth: truth.clone(),
                };
                (f.clone(), separate_one(f, &job))
            })
            .collect()
    });

    let mut worst: Option<anyhow::Error> = None;
    for (file, r) in results {
        if let Err(e) = r {
            if batch {
                eprintln!("error: {}: {e:#}", file.display());
            }
            let replace = match &worst {
                None => true,
                Some(w) => exit_code(&e) > exit_code(w),
            };
            if replace {
                worst = Some(e);
            }
        }
    }
    match worst {
        None => Ok(()),
        Some(e) if batch => Err(e.context("some inputs failed")),
        Some(e) => Err(e),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut rc = RunConfig::load(SolverConfig::default(), args.config.as_deref())?;
    if let Some(s) = args.seed {
        rc.solver.seed = s;
    }
    let mut spec = rc.mixture();
    if let Some(s) = args.sigma {
        spec.blur_sigma = s;
    }
    if let Some(g) = args.gain {
        spec.reflection_gain = g;
    }
    if args.no_clip {
        spec.clip = false;
    }
    spec.validate()?;
    let (t, r) = procedural_pair(args.kind, args.size, rc.solver.seed)?;
    let mix = synthesize_mixture(&t, &r, &spec)?;
    let out_dir = args.out_dir.or(rc.run.out_dir).unwrap_or_else(|| PathBuf::from("."));
    output(fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display())))?;
    for (name, img) in [("T.png", &t), ("R.png", &r), ("I.png", &mix)] {
        output(png::write(&out_dir.join(name), img))?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let [t_hat, r_hat, t, r] = [&args.t_hat, &args.r_hat, &args.t, &args.r].map(|p| png::read(p));
    let report = evaluate(&t_hat?, &r_hat?, &t?, &r?, &haar_bank())?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(p) = args.out {
        output(fs::write(&p, format!("{json}\n")).with_context(|| format!("cannot write {}", p.display())))?;
    }
    Ok(())
}

fn cmd_dict(args: DictArgs) -> Result<()> {
    let d = match args.kind {
        DictKindArg::Dct => dct_dictionary(args.atoms, args.kernel, args.channels)?,
        DictKindArg::Random => random_dictionary(args.atoms, args.kernel, args.channels, args.seed)?,
    };
    output(fs::write(&args.out, d.to_bytes()).with_context(|| format!("cannot write {}", args.out.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Separate(a) => cmd_separate(*a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dict(a) => cmd_dict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
