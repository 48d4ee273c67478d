//! `blockpower`: block designs, matching, the CMH test, asymptotic power and
//! Monte Carlo sweeps from the command line.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blockpower::cmh::{chi2_critical, mh_table_form, reject, tabulate};
use blockpower::design::{sample_assignment, Assignment, BlockStructure};
use blockpower::matching::{mahalanobis_distances, min_weight_perfect_matching, pm_blockstructure, DistanceMatrix};
use blockpower::outcome::{logistic_outcomes, read_population, read_responses, write_population, CovariateMatrix, PotentialOutcomes};
use blockpower::sim::{
    bonferroni_size_report, design_blocks, design_kind, draw_covariates, enumerate_cells, plot_groups,
    read_results, sweep_with, write_results, write_svg, DesignKind, ResultRecord, SizeReport,
};
use blockpower::theory::{eta_n, write_theory_csv};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "blockpower", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Replicates per simulation cell.
    #[arg(long, global = true)]
    ny: Option<usize>,
    /// Override a configuration key, e.g. `--set sweep.two_n=[48,96]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a block structure and sample one assignment.
    Design,
    /// Optimal Mahalanobis pairing of the subjects.
    Match,
    /// CMH statistic for observed blocks, assignment and responses.
    Test,
    /// Asymptotic variance and power for a population and design.
    Theory,
    /// Monte Carlo size and power over a grid of cells.
    Sweep,
    /// Plots and size report from an existing results file.
    Report,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.parallelism {
        cfg.parallelism = n;
    }
    if let Some(a) = cli.alpha {
        cfg.alpha = a;
    }
    if let Some(ny) = cli.ny {
        cfg.ny = ny;
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        bail!("alpha {} is outside (0, 1)", cfg.alpha);
    }
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    match cli.command {
        Command::Design => cmd_design(&cfg),
        Command::Match => cmd_match(&cfg),
        Command::Test => cmd_test(&cfg),
        Command::Theory => cmd_theory(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Report => cmd_report(&cfg),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn required<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T> {
    value
        .as_ref()
        .with_context(|| format!("configuration key `{key}` is required"))
}

/// Covariates and optional outcomes from the population file, or fresh
/// standard-normal covariates when only `two_n` is given.
fn population(cfg: &Config) -> Result<(CovariateMatrix, Option<PotentialOutcomes>, bool)> {
    if let Some(path) = &cfg.population {
        let (x, po) = read_population(open(path)?)
            .with_context(|| format!("reading population {}", path.display()))?;
        return Ok((x, po, false));
    }
    let Some(two_n) = cfg.two_n else {
        bail!("set `population` to a CSV file or `two_n` to generate covariates");
    };
    Ok((draw_covariates(two_n, cfg.p, cfg.seed)?, None, true))
}

fn block_count(cfg: &Config, kind: DesignKind, subjects: usize) -> Result<usize> {
    match (kind, cfg.blocks) {
        (_, Some(b)) => Ok(b),
        (DesignKind::Bcrd, None) => Ok(1),
        (DesignKind::PairwiseMatch, None) => Ok(subjects / 2),
        _ => bail!("configuration key `blocks` is required for {kind}"),
    }
}

fn blocks_from_config(cfg: &Config, x: &CovariateMatrix) -> Result<BlockStructure> {
    if let Some(path) = &cfg.blocks_file {
        return BlockStructure::read_csv(open(path)?)
            .with_context(|| format!("reading blocks {}", path.display()));
    }
    let kind = match (cfg.design, cfg.blocks) {
        (Some(k), _) => k,
        (None, Some(b)) => design_kind(x.subjects(), b, x.p()),
        (None, None) => bail!("set `design`, `blocks` or `blocks_file`"),
    };
    let blocks = block_count(cfg, kind, x.subjects())?;
    Ok(design_blocks(kind, blocks, x)?)
}

fn cmd_design(cfg: &Config) -> Result<()> {
    let (x, po, generated) = population(cfg)?;
    if generated {
        write_population(create(&cfg.out, "population.csv")?, &x, po.as_ref())?;
    }
    let kind = match (cfg.design, cfg.blocks) {
        (Some(k), _) => k,
        (None, Some(b)) => design_kind(x.subjects(), b, x.p()),
        (None, None) => bail!("set `design` or `blocks`"),
    };
    let blocks = block_count(cfg, kind, x.subjects())?;
    let bs = if kind == DesignKind::PairwiseMatch {
        let d = mahalanobis_distances(&x)?;
        let m = min_weight_perfect_matching(&d)?;
        m.write_csv(create(&cfg.out, "pairs.csv")?, &d)?;
        if blocks != x.subjects() / 2 {
            bail!("pairwise matching uses {} blocks, got {blocks}", x.subjects() / 2);
        }
        pm_blockstructure(&m)?
    } else {
        design_blocks(kind, blocks, &x)?
    };
    bs.write_csv(create(&cfg.out, "blocks.csv")?)?;
    let w = sample_assignment(&bs, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    w.write_csv(create(&cfg.out, "assignment.csv")?)?;
    println!(
        "{kind}: {} subjects in {} blocks of {}; wrote blocks.csv and assignment.csv to {}",
        bs.subjects(),
        bs.num_blocks(),
        bs.block_size(),
        cfg.out.display()
    );
    Ok(())
}

fn cmd_match(cfg: &Config) -> Result<()> {
    let d = match &cfg.distances {
        Some(path) => DistanceMatrix::read_csv(open(path)?)
            .with_context(|| format!("reading distances {}", path.display()))?,
        None => {
            let (x, _, _) = population(cfg)?;
            mahalanobis_distances(&x)?
        }
    };
    let m = min_weight_perfect_matching(&d)?;
    d.write_csv(create(&cfg.out, "distances.csv")?)?;
    m.write_csv(create(&cfg.out, "pairs.csv")?, &d)?;
    pm_blockstructure(&m)?.write_csv(create(&cfg.out, "blocks.csv")?)?;
    println!(
        "{} pairs, total distance {}; wrote pairs.csv to {}",
        m.pairs().len(),
        m.total_weight(),
        cfg.out.display()
    );
    Ok(())
}

fn cmd_test(cfg: &Config) -> Result<()> {
    let bs_path = required(&cfg.blocks_file, "blocks_file")?;
    let bs = BlockStructure::read_csv(open(bs_path)?)
        .with_context(|| format!("reading blocks {}", bs_path.display()))?;
    let w_path = required(&cfg.assignment, "assignment")?;
    let w = Assignment::read_csv(open(w_path)?, &bs)
        .with_context(|| format!("reading assignment {}", w_path.display()))?;
    let y_path = required(&cfg.responses, "responses")?;
    let y = read_responses(open(y_path)?)
        .with_context(|| format!("reading responses {}", y_path.display()))?;
    let tables = tabulate(&bs, &w, &y)?;
    let r = mh_table_form(&tables);
    let critical = chi2_critical(cfg.alpha)?;
    let decision = reject(&r, cfg.alpha)?;

    let mut stdout = std::io::stdout().lock();
    if r.defined {
        writeln!(stdout, "MH = {:.6}", r.mh)?;
        writeln!(stdout, "signed root = {:.6}", r.signed_root)?;
    } else {
        writeln!(stdout, "MH = undefined (no block has both outcomes)")?;
    }
    writeln!(stdout, "critical value at alpha {} = {critical:.6}", cfg.alpha)?;
    writeln!(stdout, "reject = {decision}")?;

    tables.write_csv(create(&cfg.out, "tables.csv")?)?;
    let mut f = create(&cfg.out, "test.csv")?;
    writeln!(f, "mh,signedRoot,numerator,denominator,defined,alpha,critical,reject")?;
    writeln!(
        f,
        "{},{},{},{},{},{},{},{}",
        r.mh, r.signed_root, r.numerator, r.denominator, r.defined, cfg.alpha, critical, decision
    )?;
    f.flush()?;
    Ok(())
}

fn cmd_theory(cfg: &Config) -> Result<()> {
    let (x, po, _) = population(cfg)?;
    let po = match po {
        Some(po) => po,
        None => logistic_outcomes(&x, cfg.beta0, &cfg.coefficients(x.p())?, cfg.beta_t)?,
    };
    let bs = blocks_from_config(cfg, &x)?;
    let summary = eta_n(&po, &bs)?.with_alpha(cfg.alpha)?;
    let json = summary.to_json();
    println!("{json}");
    let mut f = create(&cfg.out, "theory.json")?;
    writeln!(f, "{json}")?;
    f.flush()?;
    write_theory_csv(create(&cfg.out, "theory.csv")?, &[summary.record(x.p(), cfg.beta_t)])?;
    Ok(())
}

fn write_plots(out: &Path, records: &[ResultRecord]) -> Result<usize> {
    let dir = out.join("plots");
    std::fs::create_dir_all(&dir)?;
    let groups = plot_groups(records);
    for (key, members) in &groups {
        write_svg(create(&dir, &key.file_name())?, key, members)?;
    }
    Ok(groups.len())
}

fn size_report(cfg: &Config, records: &[ResultRecord]) -> Result<Option<SizeReport>> {
    if !records.iter().any(|r| r.size_test_p.is_some()) {
        return Ok(None);
    }
    let report = bonferroni_size_report(records, cfg.alpha, cfg.sweep.bonferroni_tests);
    report.write_text(create(&cfg.out, "size_report.txt")?)?;
    Ok(Some(report))
}

fn print_summary(records: &[ResultRecord]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{:>5} {:>4} {:>2} {:>6} {:>18} {:>8} {:>8} {:>8} {:>8}",
        "2n", "B", "p", "betaT", "design", "rate", "ciLow", "ciHigh", "etaN"
    )?;
    for r in records {
        match (r.rate, &r.error) {
            (Some(rate), _) => writeln!(
                out,
                "{:>5} {:>4} {:>2} {:>6} {:>18} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.two_n,
                r.blocks,
                r.p,
                r.beta_t,
                r.design.as_str(),
                rate,
                r.ci_low.unwrap_or(f64::NAN),
                r.ci_high.unwrap_or(f64::NAN),
                r.eta_n.unwrap_or(f64::NAN)
            )?,
            (None, err) => writeln!(
                out,
                "{:>5} {:>4} {:>2} {:>6} {:>18} failed: {}",
                r.two_n,
                r.blocks,
                r.p,
                r.beta_t,
                r.design.as_str(),
                err.as_deref().unwrap_or("unknown error")
            )?,
        }
    }
    Ok(())
}

fn cmd_sweep(cfg: &Config) -> Result<()> {
    let specs = enumerate_cells(&cfg.grid())?;
    let rows = sweep_with(&specs, cfg.parallelism, cfg.sweep.interval);
    let records: Vec<ResultRecord> = rows
        .iter()
        .map(|r| ResultRecord::from_row(r, cfg.sweep.timing))
        .collect();
    write_results(create(&cfg.out, "results.csv")?, &records)?;
    let plots = write_plots(&cfg.out, &records)?;
    print_summary(&records)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} cells ({failed} failed), {plots} plots; wrote results.csv to {}",
        records.len(),
        cfg.out.display()
    );
    if let Some(report) = size_report(cfg, &records)? {
        report.write_text(std::io::stdout().lock())?;
    }
    if failed > 0 {
        eprintln!("warning: {failed} cells failed; see the error column of results.csv");
    }
    Ok(())
}

fn cmd_report(cfg: &Config) -> Result<()> {
    let path = cfg
        .results
        .clone()
        .unwrap_or_else(|| cfg.out.join("results.csv"));
    let records = read_results(open(&path)?)
        .with_context(|| format!("reading results {}", path.display()))?;
    let plots = write_plots(&cfg.out, &records)?;
    print_summary(&records)?;
    println!("{} cells, {plots} plots written to {}", records.len(), cfg.out.join("plots").display());
    if let Some(report) = size_report(cfg, &records)? {
        report.write_text(std::io::stdout().lock())?;
    }
    Ok(())
}
