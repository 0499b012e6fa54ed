use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nbv::config::RunConfig;
use nbv::dataset::{self, episode_start_seed, Dataset};
use nbv::eval::run_benchmark;
use nbv::net::{self, UtilityNet};
use nbv::oracle::OracleContext;
use nbv::planner::{run_episode, sample_start, FrontierUtility, LearnedUtility, OracleUtility, RandomUtility, Utility};
use nbv::{seed, CityParams, Error, GroundTruthScene, NoiseModel};

#[derive(Parser)]
#[command(name = "nbv", version, about = "Next-best-view exploration of voxel scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Oracle,
    Learned,
    Frontier,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural city scene
    GenScene {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Scene seed [default: from config]
        #[arg(long)]
        seed: Option<u64>,
        /// Scene extent in meters as x,y,z [default: from config]
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(f64))]
        extent: Option<Vec<f64>>,
        /// Voxel size in meters [default: from config]
        #[arg(long)]
        resolution: Option<f64>,
        /// Number of buildings [default: from config]
        #[arg(long)]
        buildings: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record oracle-labeled samples from oracle-driven episodes
    GenData {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        scene: PathBuf,
        /// Number of episodes [default: from config]
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the utility network with early stopping
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Epochs without validation improvement before stopping [default: from config]
        #[arg(long)]
        patience: Option<usize>,
        /// Per-epoch loss CSV [default: <out>.loss.csv]
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Run one exploration episode and write its trace
    Explore {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        utility: Method,
        /// Model file, required for the learned utility
        #[arg(long)]
        model: Option<PathBuf>,
        /// Depth noise as sigma_m,drop_fraction
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(f64))]
        noise: Option<Vec<f64>>,
        /// Number of steps [default: from config]
        #[arg(long)]
        steps: Option<usize>,
        /// Episode index selecting the start pose
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Trace CSV
        #[arg(long)]
        out: PathBuf,
        /// Also write the final map
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Benchmark several utilities on shared start poses
    Compare {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        scene: PathBuf,
        /// Comma-separated utilities [default: from config]
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Model file, required for the learned utility
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of episodes [default: from config]
        #[arg(long)]
        episodes: Option<usize>,
        /// Number of steps [default: from config]
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        outdir: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::DimensionMismatch(_) | Error::LengthMismatch(..) => 3,
        _ => 4,
    }
}

fn load_config(arg: &ConfigArg) -> nbv::Result<RunConfig> {
    match &arg.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn make_utility<'a>(method: Method, ctx: &'a OracleContext<'a>, cfg: &RunConfig, model: Option<&Path>) -> nbv::Result<Box<dyn Utility + 'a>> {
    Ok(match method {
        Method::Oracle => Box::new(OracleUtility::new(ctx)),
        Method::Frontier => Box::new(FrontierUtility::new(cfg.camera)?),
        Method::Random => Box::new(RandomUtility::new(seed::substream(cfg.seed, "random"))),
        Method::Learned => {
            let path = model.ok_or_else(|| Error::InvalidParameter("--model is required for the learned utility".into()))?;
            Box::new(LearnedUtility::new(net::load_net(path)?, cfg.features)?)
        }
    })
}

fn run(cli: Cli) -> nbv::Result<()> {
    match cli.command {
        Command::GenScene { cfg, seed, extent, resolution, buildings, out } => {
            let cfg = load_config(&cfg)?;
            let mut p: CityParams = cfg.scene;
            if let Some(s) = seed {
                p.seed = s;
            }
            if let Some(e) = extent {
                if e.len() != 3 {
                    return Err(Error::InvalidParameter("--extent takes x,y,z".into()));
                }
                p.extent = [e[0], e[1], e[2]];
            }
            if let Some(r) = resolution {
                p.resolution = r;
            }
            if let Some(b) = buildings {
                p.building_count = b;
            }
            let scene = nbv::generate_city_scene(&p)?;
            scene.save(&out)?;
            let surf = nbv::surface_set(&scene);
            let d = scene.grid().dims;
            println!("dims {}x{}x{}", d[0], d[1], d[2]);
            println!("voxels {}", scene.grid().len());
            println!("occupied {}", scene.occupied_count());
            println!("surface {}", surf.len());
        }
        Command::GenData { cfg, scene, episodes, out } => {
            let cfg = load_config(&cfg)?;
            let scene = GroundTruthScene::load(&scene)?;
            let (data, traces) = dataset::generate(&scene, &cfg.generate(episodes.unwrap_or(cfg.data.episodes)))?;
            data.save(&out)?;
            let stats = dataset::stats(&data)?;
            std::fs::write(with_suffix(&out, ".stats.csv"), stats.to_csv())?;
            let steps: usize = traces.iter().map(|t| t.steps.len() - 1).sum();
            println!("episodes {} steps {} samples {}", traces.len(), steps, data.len());
            print!("{}", stats.to_csv());
        }
        Command::Train { cfg, data, out, patience, loss_csv } => {
            let cfg = load_config(&cfg)?;
            let data = Dataset::load(&data)?;
            if data.features().dims != cfg.features.dims || data.features().levels != cfg.features.levels {
                return Err(Error::DimensionMismatch("dataset sample shape does not match the feature config".into()));
            }
            let (train, val) = dataset::split(&data, cfg.data.split_fraction, cfg.split_seed(), cfg.data.split_by_episode)?;
            let mut model = UtilityNet::<f32>::new(cfg.net_config())?;
            let report = net::train(&mut model, train.view(), val.view(), patience.unwrap_or(cfg.train.patience))?;
            net::save_net(&model, &out)?;
            let mut csv = String::from("epoch,train_loss,val_loss\n");
            for (i, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
                let _ = writeln!(csv, "{},{},{}", i + 1, t, v);
            }
            std::fs::write(loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv")), csv)?;
            println!("train {} val {}", train.len(), val.len());
            println!("epochs {} best_epoch {} best_val_loss {}", report.epochs_run(), report.best_epoch, report.best_val_loss);
        }
        Command::Explore { cfg, scene, utility, model, noise, steps, episode, out, snapshot } => {
            let mut cfg = load_config(&cfg)?;
            if let Some(s) = steps {
                cfg.planner.t_end = s;
            }
            if let Some(n) = noise {
                if n.len() != 2 || !(n[0] >= 0.0 && (0.0..=1.0).contains(&n[1])) {
                    return Err(Error::InvalidParameter("noise needs sigma >= 0 and drop in [0, 1]".into()));
                }
                cfg.noise = Some(NoiseModel { sigma: n[0], drop_fraction: n[1], seed: seed::child(seed::substream(cfg.seed, "noise"), episode as u64) });
            }
            let scene = GroundTruthScene::load(&scene)?;
            let ctx = OracleContext::new(&scene, cfg.camera);
            let u = make_utility(utility, &ctx, &cfg, model.as_deref())?;
            let bench = cfg.benchmark(episode + 1);
            let start = sample_start(&scene, &bench.episode, episode_start_seed(bench.seed, episode))?;
            let res = run_episode(&ctx, u.as_ref(), &start, &cfg.episode(), None)?;
            res.trace.write_csv(&out)?;
            if let Some(p) = snapshot {
                res.map.save_snapshot(p)?;
            }
            let last = res.trace.steps.last().expect("initial entry");
            println!("steps {} obs_surf {} early {}", res.trace.steps.len() - 1, last.obs_surf, res.trace.terminated_early);
        }
        Command::Compare { cfg, scene, methods, model, episodes, steps, outdir } => {
            let mut cfg = load_config(&cfg)?;
            if let Some(s) = steps {
                cfg.planner.t_end = s;
            }
            let scene = GroundTruthScene::load(&scene)?;
            let ctx = OracleContext::new(&scene, cfg.camera);
            let names = match methods {
                Some(m) => m,
                None => cfg
                    .benchmark
                    .methods
                    .iter()
                    .map(|n| Method::from_str(n, true).map_err(|_| Error::InvalidParameter(format!("unknown method '{n}' in config"))))
                    .collect::<nbv::Result<_>>()?,
            };
            let utilities = names.iter().map(|&n| make_utility(n, &ctx, &cfg, model.as_deref())).collect::<nbv::Result<Vec<_>>>()?;
            let refs: Vec<&dyn Utility> = utilities.iter().map(|u| u.as_ref()).collect();
            let report = run_benchmark(&scene, &cfg.benchmark(episodes.unwrap_or(cfg.benchmark.episodes)), &refs)?;
            report.write_csvs(&outdir)?;
            println!("shared starts {} skipped {}", report.starts.len(), report.skipped.len());
            print!("{}", report.summary_csv());
        }
    }
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("NBV_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: NBV_THREADS ignored: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
