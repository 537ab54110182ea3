//! `regime-grad` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    cameras_csv, distance_sweep, parse_cameras_csv, population_report, run_scenario, sweep_exponents, write_record,
    write_scenario, CameraLayout, Config, ScenarioSpec,
};
use crate::diagnostics::{
    check_ratio_identity, conflict_rate, gradient_ratio, variance_decompose, Estimation, RegimeGradientPopulation,
};
use crate::error::{Error, Result};
use crate::grouping::split;
use crate::render::{random_grad_check, render, write_imgf32, write_ppm, GradCheckDraw};
use crate::scene::{scene_from_text, scene_to_text, BlockKind};
use crate::train::train;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "REGIME_GRAD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "regime-grad",
    version,
    about = "Near/far gradient reconciliation toolkit for 2D splatting"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for kv in &self.set {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ImageFormat {
    Ppm,
    Imgf32,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    ScalarToy,
    Planted,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random synthetic scene in SPLATSCENE text format.
    GenScene {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bimodal train/test camera table as CSV.
    GenCams {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene from every camera in a camera table.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        /// Camera table from `gen-cams`; the configured layout when absent.
        #[arg(long)]
        cams: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        format: ImageFormat,
    },
    /// Compare analytic and central-difference gradients on random draws.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Splats per scene.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Number of random scene/camera draws, seeded `seed..seed+draws`.
        #[arg(long, default_value_t = 1)]
        draws: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one configuration and write telemetry and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient ratios, distance exponents, conflict rates and the variance
    /// decomposition at a frozen parameter point.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Frozen scene; the seeded perturbed initialization when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Variance-ratio identity on a built-in population.
    VarianceSim {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Monte Carlo draws; exhaustive enumeration when absent.
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-seed comparison of sampler/reconciler arms.
    Scenario {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv`, runs the command and returns the process exit code: 0 on
/// success, 1 on runtime failure, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::config(e.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn set_if(cfg: &mut Config, key: &str, v: Option<impl ToString>) -> Result<()> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenScene { common, seed, n, out } => {
            let mut cfg = common.load()?;
            set_if(&mut cfg, "scene.seed", seed)?;
            set_if(&mut cfg, "scene.n", n)?;
            let spec = ScenarioSpec::from_config(&cfg)?;
            emit(out.as_deref(), &scene_to_text(&spec.target_scene()?))
        }
        Command::GenCams { common, seed, out } => {
            let mut cfg = common.load()?;
            set_if(&mut cfg, "cams.seed", seed)?;
            let spec = ScenarioSpec::from_config(&cfg)?;
            let train = spec.train_cameras()?;
            let partition = split(&train, spec.base.partition)?;
            emit(
                out.as_deref(),
                &cameras_csv(&train, &spec.test_cameras()?, Some(&partition)),
            )
        }
        Command::Render {
            common,
            scene,
            cams,
            out,
            format,
        } => {
            let cfg = common.load()?;
            let scene = scene_from_text(&fs::read_to_string(scene)?)?;
            let cams = match cams {
                Some(p) => {
                    let (a, b) = parse_cameras_csv(&fs::read_to_string(p)?)?;
                    a.into_iter().chain(b).collect()
                }
                None => {
                    let spec = ScenarioSpec::from_config(&cfg)?;
                    let mut all = spec.train_cameras()?;
                    all.extend(spec.test_cameras()?);
                    all
                }
            };
            fs::create_dir_all(&out)?;
            for cam in &cams {
                let img = render(&scene, cam);
                if matches!(format, ImageFormat::Ppm | ImageFormat::Both) {
                    let mut buf = Vec::new();
                    write_ppm(&img, &mut buf)?;
                    fs::write(out.join(format!("cam{}.ppm", cam.id)), buf)?;
                }
                if matches!(format, ImageFormat::Imgf32 | ImageFormat::Both) {
                    let mut buf = Vec::new();
                    write_imgf32(&img, &mut buf)?;
                    fs::write(out.join(format!("cam{}.imgf32", cam.id)), buf)?;
                }
            }
            Ok(())
        }
        Command::GradCheck {
            common,
            seed,
            n,
            draws,
            out,
        } => {
            let cfg = common.load()?;
            let loss = cfg.loss_config()?;
            let layout = CameraLayout::from_config(&cfg)?;
            let draw = GradCheckDraw {
                n_splats: n,
                width: layout.width,
                height: layout.height,
                f: layout.f,
                ..GradCheckDraw::default()
            };
            let mut text = String::from("seed,block,max_rel_err,max_abs_err,coords,pass\n");
            let mut all_pass = true;
            for s in seed..seed + draws.max(1) {
                let rep = random_grad_check(s, &draw, &loss)?;
                all_pass &= rep.pass();
                for b in &rep.blocks {
                    let _ = writeln!(
                        text,
                        "{s},{},{:e},{:e},{},{}",
                        b.kind.name(),
                        b.max_rel_err,
                        b.max_abs_err,
                        b.coords,
                        b.pass as u8
                    );
                }
            }
            emit(out.as_deref(), &text)?;
            if all_pass {
                Ok(())
            } else {
                Err(Error::invalid("gradient check failed"))
            }
        }
        Command::Train { common, seed, out } => {
            let mut cfg = common.load()?;
            set_if(&mut cfg, "seed", seed)?;
            let spec = ScenarioSpec::from_config(&cfg)?;
            let target = spec.target_scene()?;
            let init = spec.init_scene(&target, spec.base.seed)?;
            let train_cams = spec.train_cameras()?;
            let test_cams = spec.test_cameras()?;
            let outcome = train(&init, &target, &train_cams, &test_cams, &spec.base)?;
            let ckpt_dir = out.join("checkpoints");
            fs::create_dir_all(&ckpt_dir)?;
            let partition = split(&train_cams, spec.base.partition).ok();
            fs::write(
                out.join("cams.csv"),
                cameras_csv(&train_cams, &test_cams, partition.as_ref()),
            )?;
            write_record(&outcome.record, &out, "run")?;
            for (iter, scene) in &outcome.checkpoints {
                fs::write(ckpt_dir.join(format!("ckpt_{iter:06}.txt")), scene_to_text(scene))?;
            }
            fs::write(out.join("final_scene.txt"), scene_to_text(&outcome.scene))?;
            fs::write(out.join("target_scene.txt"), scene_to_text(&target))?;
            Ok(())
        }
        Command::Diagnose {
            common,
            scene,
            seed,
            out,
        } => {
            let mut cfg = common.load()?;
            set_if(&mut cfg, "seed", seed)?;
            let spec = ScenarioSpec::from_config(&cfg)?;
            let target = spec.target_scene()?;
            let point = match scene {
                Some(p) => scene_from_text(&fs::read_to_string(p)?)?,
                None => spec.init_scene(&target, spec.base.seed)?,
            };
            let cams = spec.train_cameras()?;
            let partition = split(&cams, spec.base.partition)?;
            let (pop, report) = population_report(&point, &target, &cams, &partition, &spec.base.loss)?;
            let ratios = gradient_ratio(&pop)?;
            let sweep_r: Vec<f64> = cfg.get_list("diagnose.sweep", &[2.0, 3.0, 4.0, 6.0, 8.0])?;
            let views = cfg.get("diagnose.sweep_views", 8usize)?;
            let sweep = distance_sweep(
                &point,
                &target,
                &sweep_r,
                views,
                &spec.layout,
                spec.cam_seed.wrapping_add(2),
                &spec.base.loss,
            )?;
            let exponents = sweep_exponents(&sweep)?;
            let near = pop.near_blocks.as_ref().expect("built from gradient sets");
            let far = pop.far_blocks.as_ref().expect("built from gradient sets");
            let (a, b): (Vec<_>, Vec<_>) = near
                .iter()
                .flat_map(|n| far.iter().map(move |f| (n.clone(), f.clone())))
                .unzip();
            let conflicts = conflict_rate(&a, &b)?;
            let mut csv = String::from("block,R,d_hat,conflict_rate\n");
            for kind in BlockKind::ALL {
                let i = kind.index();
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    kind.name(),
                    ratios[i],
                    exponents[i],
                    conflicts.per_block_rate[i]
                );
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("diagnose.csv"), csv)?;
            fs::write(out.join("variance.txt"), report.to_text())?;
            Ok(())
        }
        Command::VarianceSim {
            preset,
            draws,
            seed,
            out,
        } => {
            let pop = match preset {
                Preset::ScalarToy => {
                    RegimeGradientPopulation::from_vectors(vec![vec![0.0], vec![2.0]], vec![vec![10.0], vec![12.0]], 0)?
                }
                Preset::Planted => planted_population(seed)?,
            };
            let mode = match draws {
                Some(n_draws) => Estimation::MonteCarlo { n_draws, seed },
                None => Estimation::Exhaustive,
            };
            let r = variance_decompose(&pop, mode)?;
            let check = check_ratio_identity(&pop, mode, if draws.is_some() { 0.05 } else { 1e-12 })?;
            let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| x.to_string());
            let text = format!(
                "sigma2_w = {}\nsigma2_b = {}\nratio_predicted = {}\nvar_r = {}\nvar_s = {}\nratio_measured = {}\nidentity_pass = {}\n",
                r.sigma2_w,
                r.sigma2_b,
                opt(r.ratio_predicted),
                r.var_r,
                r.var_s,
                opt(r.ratio_measured),
                check.pass
            );
            emit(out.as_deref(), &text)
        }
        Command::Scenario { common, out } => {
            let cfg = common.load()?;
            let spec = ScenarioSpec::from_config(&cfg)?;
            let result = run_scenario(&spec)?;
            write_scenario(&result, &out)
        }
    }
}

/// Planted vector population: 8 views per regime in 6 dimensions around
/// means one unit apart per coordinate, with unit isotropic scatter.
pub fn planted_population(seed: u64) -> Result<RegimeGradientPopulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut group = |center: f64| -> Vec<Vec<f64>> {
        (0..8)
            .map(|_| {
                (0..6)
                    .map(|_| center + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect()
    };
    let near = group(0.5);
    let far = group(-0.5);
    RegimeGradientPopulation::from_vectors(near, far, seed)
}
