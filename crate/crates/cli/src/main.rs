use std::path::{Path, PathBuf};
use std::process::ExitCode;

use canopyskel::config::PipelineConfig;
use canopyskel::eval::{aggregate, summary_table, to_csv, EvalReport, EvalRow};
use canopyskel::pipeline::{
    self, evaluate_skeleton, finish, occluded_flags, prepare, read_case, run_sweep, sweep_rows,
    tree_dirs, with_jobs, write_dataset, Method, Skeleton,
};
use canopyskel::plot::density_plot_svg;
use canopyskel::{io, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "canopyskel",
    version,
    about = "Tree skeleton extraction under occlusion"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Voxel edge length in metres, overrides the configuration
    #[arg(long, global = true, allow_negative_numbers = true)]
    voxel_size: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Likelihood,
    Mst,
    Ftsem,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Likelihood => vec![Method::Likelihood],
            MethodArg::Mst => vec![Method::Mst],
            MethodArg::Ftsem => vec![Method::Ftsem],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: one directory per tree and density level
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Trees per species, overrides the configuration
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Skeletonize one tree directory or every tree directory below a root
    Skeletonize {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "likelihood")]
        method: MethodArg,
        /// Also write a sphere per vertex (centre and radius)
        #[arg(long)]
        volume: bool,
        /// Also write the likelihood grid
        #[arg(long)]
        grid_dump: bool,
    },
    /// Score skeleton files against the ground truth of a dataset
    Evaluate {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        /// CSV output (default: <dataset>/results.csv)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// SVG plot of precision, recall and OSR against density
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Generate, skeletonize and score the configured dataset in memory
    Sweep {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Convert between the clusters text format and ASCII PLY (by extension)
    Convert { input: PathBuf, output: PathBuf },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(v) = common.voxel_size {
        cfg.voxel_size = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(cfg: &mut PipelineConfig, out: &Path, trees: Option<usize>, jobs: usize) -> Result<()> {
    if let Some(n) = trees {
        cfg.dataset.trees_per_species = n;
    }
    if cfg.dataset.trees_per_species == 0
        || cfg.dataset.species.is_empty()
        || cfg.dataset.densities.is_empty()
    {
        warn!("dataset is empty, nothing to generate");
        return Ok(());
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    io::write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let cases = with_jobs(jobs, || write_dataset(cfg, out))??;
    println!(
        "wrote {} tree directories to {}",
        cases.len(),
        out.display()
    );
    Ok(())
}

fn skeletonize_dir(
    dir: &Path,
    cfg: &PipelineConfig,
    methods: &[Method],
    volume: bool,
    grid_dump: bool,
) -> Result<()> {
    let clusters = io::read_clusters(&dir.join(pipeline::CLUSTERS_FILE))?;
    let prepared = prepare(&clusters, cfg)?;
    if grid_dump {
        io::write_text(
            &dir.join(pipeline::GRID_FILE),
            &io::format_grid(&prepared.grid),
        )?;
    }
    for &m in methods {
        let skel = finish(&prepared, cfg, m)?;
        io::write_skeleton(&dir.join(m.skeleton_file()), &skel.graph)?;
        if volume {
            io::write_text(&dir.join(m.volume_file()), &io::format_volume(&skel.graph))?;
        }
        info!(
            "{}: {} {} vertices, {} components",
            dir.display(),
            m.name(),
            skel.graph.vertex_count(),
            skel.graph.component_count()
        );
    }
    Ok(())
}

fn skeletonize(
    cfg: &PipelineConfig,
    input: &Path,
    methods: &[Method],
    volume: bool,
    grid_dump: bool,
    jobs: usize,
) -> Result<()> {
    let dirs = tree_dirs(input)?;
    if dirs.is_empty() {
        return Err(Error::Missing(format!(
            "no {} under {}",
            pipeline::CLUSTERS_FILE,
            input.display()
        )));
    }
    with_jobs(jobs, || {
        dirs.par_iter()
            .try_for_each(|d| skeletonize_dir(d, cfg, methods, volume, grid_dump))
    })??;
    println!("skeletonized {} tree directories", dirs.len());
    Ok(())
}

fn eval_dir(dir: &Path, cfg: &PipelineConfig, method: Method) -> Result<EvalRow> {
    let gt = io::read_skeleton(&dir.join(pipeline::GT_FILE))?;
    let graph = io::read_skeleton(&dir.join(method.skeleton_file()))?;
    let occluded_flags = occluded_flags(&graph, method, cfg.voxel_size);
    let report: EvalReport = evaluate_skeleton(
        &Skeleton {
            graph,
            occluded_flags,
        },
        &gt,
        cfg,
    )?;
    let name = dir.file_name().map_or_else(
        || dir.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    );
    let (tree_type, density) = match read_case(dir) {
        Ok(case) => (case.species.name().to_string(), case.density),
        Err(_) => ("unknown".to_string(), 0),
    };
    Ok(EvalRow {
        tree_id: name,
        tree_type,
        method: method.name().to_string(),
        density,
        report: EvalReport {
            labels: Vec::new(),
            ..report
        },
    })
}

fn write_outputs(rows: &[EvalRow], csv: &Path, plot: Option<&Path>) -> Result<()> {
    io::write_text(csv, &to_csv(rows))?;
    if let Some(p) = plot {
        io::write_text(p, &density_plot_svg(rows)?)?;
    }
    print!("{}", summary_table(&aggregate(rows)?));
    Ok(())
}

fn evaluate(
    cfg: &PipelineConfig,
    dataset: &Path,
    methods: &[Method],
    csv: Option<PathBuf>,
    plot: Option<PathBuf>,
    jobs: usize,
) -> Result<()> {
    let dirs = tree_dirs(dataset)?;
    if dirs.is_empty() {
        return Err(Error::Missing(format!(
            "no tree directories under {}",
            dataset.display()
        )));
    }
    let missing: Vec<String> = dirs
        .iter()
        .flat_map(|d| {
            let mut files = Vec::new();
            if !d.join(pipeline::GT_FILE).is_file() {
                files.push(d.join(pipeline::GT_FILE));
            }
            files.extend(
                methods
                    .iter()
                    .map(|m| d.join(m.skeleton_file()))
                    .filter(|p| !p.is_file()),
            );
            files
        })
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        for m in &missing {
            eprintln!("missing: {m}");
        }
        return Err(Error::Missing(format!(
            "{} required file(s) not found",
            missing.len()
        )));
    }
    let pairs: Vec<(&PathBuf, Method)> = dirs
        .iter()
        .flat_map(|d| methods.iter().map(move |&m| (d, m)))
        .collect();
    let rows: Vec<EvalRow> = with_jobs(jobs, || {
        pairs
            .par_iter()
            .map(|&(d, m)| eval_dir(d, cfg, m))
            .collect::<Result<_>>()
    })??;
    let csv = csv.unwrap_or_else(|| dataset.join("results.csv"));
    write_outputs(&rows, &csv, plot.as_deref())
}

fn convert(input: &Path, output: &Path) -> Result<()> {
    let is_ply = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let text = io::read_text(input)?;
    let clusters = if is_ply(input) {
        io::ply_to_clusters(&text, input)?
    } else {
        io::parse_clusters(&text, input)?
    };
    let out = if is_ply(output) {
        io::clusters_to_ply(&clusters)
    } else {
        io::format_clusters(&clusters)
    };
    io::write_text(output, &out)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let jobs = cli.common.jobs;
    match cli.command {
        Command::Synth { out, trees } => synth(&mut cfg, &out, trees, jobs),
        Command::Skeletonize {
            input,
            method,
            volume,
            grid_dump,
        } => skeletonize(&cfg, &input, &method.methods(), volume, grid_dump, jobs),
        Command::Evaluate {
            dataset,
            method,
            csv,
            plot,
        } => evaluate(&cfg, &dataset, &method.methods(), csv, plot, jobs),
        Command::Sweep { csv, method, plot } => {
            let results = with_jobs(jobs, || run_sweep(&cfg, &method.methods()))??;
            if results.is_empty() {
                warn!("dataset is empty, nothing to evaluate");
                return Ok(());
            }
            write_outputs(&sweep_rows(&results), &csv, plot.as_deref())
        }
        Command::Convert { input, output } => convert(&input, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CANOPYSKEL_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
