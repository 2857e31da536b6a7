//! Command-line entry point: simulation-study runner, one-off dataset
//! generation, single fits, and table/plot-data emission.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use rssmix::design::{draw_mixture, draw_rss_dataset, RankerConfig, RssDataset, RssSource};
use rssmix::stream::{derive, Purpose};

use rssmix_cli::config::{apply_paper_scale, CaseStudyConfig, StudyConfig};
use rssmix_cli::{plots, study, CliError};

#[derive(Parser)]
#[command(
    name = "rssmix",
    version,
    about = "Bayesian normal-mixture estimation from ranked set samples: \
             simulation studies, fits, and report data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignKind {
    Srs,
    Rss,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the misplacement matrix for every (H, rho) design cell
    /// by repeated concomitant ranking.
    Stage1Alpha {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config output_dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Draw one dataset from the configured truth and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Sampling design of the dataset.
        #[arg(long, value_enum)]
        design: DesignKind,
        /// Set size (defaults to the first configured set size; ignored
        /// for SRS).
        #[arg(long)]
        h: Option<usize>,
        /// Ranking quality (defaults to the first configured rho;
        /// ignored for SRS).
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Include the true within-set ranks (RSS only).
        #[arg(long)]
        with_truth: bool,
    },
    /// Fit the conjugate Gibbs sampler to a plain sample.
    FitSrs {
        #[arg(long)]
        config: PathBuf,
        /// CSV with a `value` column.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the ranked-set Metropolis-within-Gibbs sampler to an RSS
    /// dataset (columns cycle, judgment_rank, value).
    FitRss {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the replicated two-stage simulation study.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for replicate-level parallelism (default: all
        /// cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Full-scale protocol: 15000/5000 chains, 2000 replicates.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Run the case study on a finite dataset or its surrogate
    /// generator.
    CaseStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        paper_scale: bool,
    },
    /// Rebuild summary tables from a per-replicate estimates CSV.
    Summarize {
        /// Study config providing the truth values and level.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit boxplot quantile data from a per-replicate estimates CSV.
    PlotData {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn read_config_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("read {}: {e}", path.display())))
}

fn load_study_config(path: &Path, seed: Option<u64>) -> Result<StudyConfig, CliError> {
    let mut cfg = StudyConfig::from_toml(&read_config_text(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_case_config(path: &Path, seed: Option<u64>) -> Result<CaseStudyConfig, CliError> {
    let mut cfg = CaseStudyConfig::from_toml(&read_config_text(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stage1Alpha { config, seed, out_dir } => {
            let cfg = load_study_config(&config, seed)?;
            let truth = cfg.truth.to_params()?;
            let sigma = study::ranker_sigma(&truth);
            let dir = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
            fs::create_dir_all(&dir)?;
            let mut cell = 0u32;
            for &h in &cfg.design.set_sizes {
                for &rho in &cfg.design.rho {
                    let ranker = RankerConfig::new(rho, sigma)?;
                    let mut rng = derive(cfg.seed, Purpose::Stage1, cell, 0);
                    let alpha = rssmix::design::estimate_alpha_stage1(
                        &truth,
                        h,
                        &ranker,
                        cfg.study.stage1_reps,
                        &mut rng,
                    )?;
                    let path = dir.join(format!("stage1_alpha_H{h}_rho{rho}.csv"));
                    study::write_alpha_csv(&alpha, fs::File::create(&path)?)?;
                    println!("H={h} rho={rho} -> {}", path.display());
                    cell += 1;
                }
            }
            Ok(())
        }
        Command::Simulate { config, seed, design, h, rho, out, with_truth } => {
            let cfg = load_study_config(&config, seed)?;
            let truth = cfg.truth.to_params()?;
            let mut rng = derive(cfg.seed, Purpose::Adhoc, 0, 0);
            match design {
                DesignKind::Srs => {
                    let y: Vec<f64> = (0..cfg.design.n_total)
                        .map(|_| draw_mixture(&truth, &mut rng))
                        .collect();
                    study::write_values_csv(&y, fs::File::create(&out)?)?;
                }
                DesignKind::Rss => {
                    let h = h.unwrap_or(cfg.design.set_sizes[0]);
                    if cfg.design.n_total % h != 0 {
                        return Err(CliError::Config(format!(
                            "n_total {} is not divisible by set size {h}",
                            cfg.design.n_total
                        )));
                    }
                    let rho = rho.unwrap_or(cfg.design.rho[0]);
                    let ranker = RankerConfig::new(rho, study::ranker_sigma(&truth))
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let data = draw_rss_dataset(
                        &truth,
                        h,
                        cfg.design.n_total / h,
                        &RssSource::Ranker(ranker),
                        &mut rng,
                    )?;
                    let data = if with_truth { data } else { data.without_true_ranks() };
                    data.to_csv(fs::File::create(&out)?)?;
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::FitSrs { config, data, out_dir, seed } => {
            let cfg = load_study_config(&config, seed)?;
            let y = study::read_values_csv(&data)?;
            let proto = study::FitProtocol::from_chains(&cfg.chains, cfg.j_count());
            let mut rng = derive(cfg.seed, Purpose::SrsChain, 0, 0);
            let (draws, summaries) = study::fit_srs(&y, &proto, &mut rng)?;
            fs::create_dir_all(&out_dir)?;
            study::write_chain_csv(&draws, fs::File::create(out_dir.join("chain.csv"))?)?;
            write_fit_summary(&summaries, &out_dir)?;
            println!("wrote {}", out_dir.display());
            Ok(())
        }
        Command::FitRss { config, data, out_dir, seed } => {
            let cfg = load_study_config(&config, seed)?;
            let file = fs::File::open(&data)
                .map_err(|e| CliError::Data(format!("open {}: {e}", data.display())))?;
            let dataset = RssDataset::from_csv(file)?;
            let proto = study::FitProtocol::from_chains(&cfg.chains, cfg.j_count());
            let mut rng = derive(cfg.seed, Purpose::RssChain, 0, 0);
            let (draws, summaries, alpha) = study::fit_rss(&dataset, &proto, &mut rng)?;
            fs::create_dir_all(&out_dir)?;
            study::write_chain_csv(&draws, fs::File::create(out_dir.join("chain.csv"))?)?;
            study::write_alpha_csv(&alpha, fs::File::create(out_dir.join("alpha.csv"))?)?;
            write_fit_summary(&summaries, &out_dir)?;
            println!("wrote {}", out_dir.display());
            Ok(())
        }
        Command::Study { config, seed, workers, paper_scale } => {
            let mut cfg = load_study_config(&config, seed)?;
            if paper_scale {
                apply_paper_scale(&mut cfg.chains, &mut cfg.study);
            }
            let report = study::run_study(&cfg, workers)?;
            let dir = study::write_study_report(&cfg, &report)?;
            for cell in &report.cells {
                println!(
                    "H={} rho={}: {} replicates, {} excluded",
                    cell.h,
                    cell.rho,
                    cell.replicates,
                    cell.excluded.len()
                );
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::CaseStudy { config, seed, workers, paper_scale } => {
            let mut cfg = load_case_config(&config, seed)?;
            if paper_scale {
                apply_paper_scale(&mut cfg.chains, &mut cfg.study);
            }
            let report = study::run_case_study(&cfg, workers)?;
            let dir = study::write_case_report(&cfg, &report)?;
            if let Some(n) = report.population_size {
                println!("population size: {n} (correlation {:.4})", report.correlation);
            }
            for cell in &report.cells {
                println!(
                    "H={}: {} replicates, {} excluded",
                    cell.h,
                    cell.replicates,
                    cell.excluded.len()
                );
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Summarize { config, estimates, out } => {
            let cfg = load_study_config(&config, None)?;
            let records = study::read_estimates_csv(&estimates)?;
            let truth = cfg.truth.to_params()?;
            let truths = study::truth_values(&truth, cfg.chains.variant);
            let rows = study::summarize_records(&records, &truths)?;
            if rows.is_empty() {
                return Err(CliError::Data(
                    "no estimand group has two or more replicates".into(),
                ));
            }
            study::write_summary_csv(&rows, fs::File::create(&out)?)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::PlotData { estimates, out } => {
            let records = study::read_estimates_csv(&estimates)?;
            let rows = plots::boxplot_rows(&records)?;
            plots::write_boxplot_csv(&rows, fs::File::create(&out)?)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn write_fit_summary(
    summaries: &[(String, rssmix::analysis::PosteriorSummary)],
    out_dir: &Path,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(fs::File::create(out_dir.join("summary.csv"))?);
    wtr.write_record(["estimand", "mode", "ci_low", "ci_high", "level"])
        .map_err(|e| CliError::Data(format!("csv write: {e}")))?;
    for (name, s) in summaries {
        wtr.write_record([
            name.clone(),
            format!("{}", s.mode),
            format!("{}", s.ci_low),
            format!("{}", s.ci_high),
            format!("{}", s.level),
        ])
        .map_err(|e| CliError::Data(format!("csv write: {e}")))?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}
