use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hygec::{generate_instance, EmConfig, HygecConfig, InstanceSpec, MatrixKind};
use hygec_bench::export::{render_summary, write_table, Format};
use hygec_bench::instance_io::{export_instance, import_instance, InstanceFile};
use hygec_bench::parity::{denoiser_parity, extrinsic_round_trip, posterior_parity};
use hygec_bench::runner::{run_on_instance, TrialKey};
use hygec_bench::{run_scenario, summarize, Algorithm, ResultTable, Scenario, Seeds};

/// Exit status when at least one trial failed numerically.
const EXIT_TRIAL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "hygec-bench", version, about = "Runs HyGEC experiments and exports the results")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed set overriding the scenario's: `20` (0..20), `5..10` or `1,4,9`.
    #[arg(long, global = true)]
    seeds: Option<String>,

    /// Output file (or directory for `gen` with several seeds); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Exit with status 0 even if some trial hit a numerical failure.
    #[arg(long, global = true)]
    allow_failures: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a scenario file.
    Run { scenario: PathBuf },
    /// Draw instances and write them as instance files.
    Gen(GenArgs),
    /// Solve a single instance file.
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "hygec-known-rho")]
        algorithm: Algorithm,
        /// Rate for the known-rate engine; defaults to the file's true rate.
        #[arg(long)]
        rho: Option<f64>,
        /// Starting rate for EM.
        #[arg(long, default_value_t = 0.01)]
        rho_init: f64,
    },
    /// Run the oracle parity suite.
    Check {
        /// Random parameter draws for the denoiser comparison.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    snr_db: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_x_sq: f64,
    /// Condition number of a Haar-rotated geometric spectrum.
    #[arg(long, conflicts_with = "mean")]
    kappa: Option<f64>,
    /// Mean of an i.i.d. Gaussian matrix (the default, with mean 0).
    #[arg(long)]
    mean: Option<f64>,
    /// Quantizer bits; unquantized when absent.
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long, requires = "bits")]
    clip_range: Option<f64>,
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(cli: &Cli, table: &ResultTable) -> anyhow::Result<ExitCode> {
    let mut out = output(cli.out.as_deref())?;
    write_table(table, cli.format, &mut out)?;
    out.flush()?;
    eprint!("{}", render_summary(&table.scenario, &summarize(table)));
    let failures = table.failures();
    if failures > 0 {
        eprintln!("{failures} of {} trials failed", table.trials.len());
        if !cli.allow_failures {
            return Ok(ExitCode::from(EXIT_TRIAL_FAILURE));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli, path: &Path) -> anyhow::Result<ExitCode> {
    let mut scenario = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = &cli.seeds {
        scenario.seeds = Seeds::parse_cli(s)?;
    }
    let table = run_scenario(&scenario, cli.threads)?;
    emit(cli, &table)
}

fn gen(cli: &Cli, a: &GenArgs) -> anyhow::Result<ExitCode> {
    let spec = InstanceSpec {
        m: a.m,
        n: a.n,
        k: a.k,
        rho: a.rho,
        sigma_x_sq: a.sigma_x_sq,
        snr_db: a.snr_db,
        matrix: match a.kappa {
            Some(kappa) => MatrixKind::Conditioned { kappa },
            None => MatrixKind::IidGaussian { mean: a.mean.unwrap_or(0.0) },
        },
        bits: a.bits,
        clip_range: a.clip_range,
    };
    let seeds = cli.seeds.as_deref().map(Seeds::parse_cli).transpose()?.map_or(vec![0], |s| s.to_vec());
    if seeds.len() > 1 {
        let Some(dir) = &cli.out else { bail!("--out must name a directory when generating several seeds") };
        std::fs::create_dir_all(dir)?;
        for seed in seeds {
            let file = InstanceFile { seed, spec: Some(spec), instance: generate_instance(&spec, seed)? };
            export_instance(&file, &dir.join(format!("instance-seed{seed}.json")))?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    let file = InstanceFile { seed: seeds[0], spec: Some(spec), instance: generate_instance(&spec, seeds[0])? };
    match &cli.out {
        Some(p) => export_instance(&file, p)?,
        None => println!("{}", hygec_bench::instance_io::to_json(&file)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn solve(cli: &Cli, path: &Path, algorithm: Algorithm, rho: Option<f64>, rho_init: f64) -> anyhow::Result<ExitCode> {
    let file = import_instance(path).with_context(|| format!("loading {}", path.display()))?;
    let Some(rho) = rho.or(file.instance.true_rho) else {
        bail!("the instance has no true rate; pass --rho");
    };
    let key = TrialKey { seed: file.seed, sweep_value: None, algorithm };
    let trial = run_on_instance(&file.instance, key, rho, rho_init, &HygecConfig::default(), &EmConfig::default());
    let name = path.file_stem().map_or("instance".into(), |s| s.to_string_lossy().into_owned());
    emit(cli, &ResultTable { scenario: name, trials: vec![trial] })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn check(draws: usize) -> anyhow::Result<ExitCode> {
    let d = denoiser_parity(draws, 0)?;
    let z_ok = d.awgn_mean_err < 1e-7
        && d.quantized_mean_err < 1e-7
        && d.awgn_var_rel_err < 1e-6
        && d.quantized_var_rel_err < 1e-6;
    println!(
        "{} z-denoisers vs quadrature ({} draws): mean err {:.2e} / {:.2e}, var rel err {:.2e} / {:.2e} (awgn / quantized)",
        verdict(z_ok),
        d.draws,
        d.awgn_mean_err,
        d.quantized_mean_err,
        d.awgn_var_rel_err,
        d.quantized_var_rel_err
    );
    let ss_ok = d.spike_slab_err < 1e-10;
    println!("{} spike-slab vs two-branch oracle: max err {:.2e}", verdict(ss_ok), d.spike_slab_err);

    let spec = InstanceSpec {
        m: 10,
        n: 4,
        k: 2,
        rho: 0.2,
        sigma_x_sq: 1.0,
        snr_db: 15.0,
        matrix: MatrixKind::IidGaussian { mean: 0.0 },
        bits: None,
        clip_range: None,
    };
    let cfg = HygecConfig { max_iter: 1000, ..HygecConfig::default() };
    let p = posterior_parity(&spec, 0..50, &cfg)?;
    let post_ok = p.pooled_rms < 1e-2 && p.xi_mae < 5e-2;
    println!(
        "{} HyGEC vs exact enumeration, (M,N,K,rho) = (10,4,2,0.2), {} instances: rms {:.2e} (worst {:.2e}), xi mae {:.2e}",
        verdict(post_ok),
        p.instances,
        p.pooled_rms,
        p.worst_rms,
        p.xi_mae
    );
    let r = extrinsic_round_trip(10_000, 0);
    let rt_ok = r.var_rel_err < 1e-10 && r.mean_err < 1e-10;
    println!(
        "{} extrinsic/product round trip ({} pairs): var rel err {:.2e}, mean err {:.2e}",
        verdict(rt_ok),
        r.pairs,
        r.var_rel_err,
        r.mean_err
    );
    Ok(if z_ok && ss_ok && post_ok && rt_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario } => run(&cli, scenario),
        Command::Gen(args) => gen(&cli, args),
        Command::Solve { instance, algorithm, rho, rho_init } => solve(&cli, instance, *algorithm, *rho, *rho_init),
        Command::Check { draws } => check(*draws),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
