use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgcluster::constraints::{build_constraints, dump};
use fgcluster::instance::synth::{synth_instance, toy_instance, Background, SynthSpec};
use fgcluster::instance::{load_instance, save_instance, save_instance_indexed, write_atomic};
use fgcluster::pipeline::{self, Ablation, ConfigFile, ResultsFile, RunConfig};
use fgcluster::{par, Error, Result};

/// Joint object segmentation and localization by discriminative clustering.
#[derive(Parser)]
#[command(name = "fgcluster", version)]
struct Cli {
    /// Worker thread cap (defaults to all cores).
    #[arg(long, env = "FGCLUSTER_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check instance files against the data model.
    Validate {
        #[arg(required = true)]
        instances: Vec<PathBuf>,
    },
    /// Solve the relaxation, round it and write `<stem>.results.json`.
    Solve {
        #[arg(required = true)]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score a results file against the instance's ground truth.
    Eval {
        instance: PathBuf,
        results: PathBuf,
        /// Output directory for `<stem>.eval.json`; prints to stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic instance.
    Synth {
        /// JSON generator spec; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        n_sp: Option<usize>,
        #[arg(long)]
        m_box: Option<usize>,
        /// video-like or image-like.
        #[arg(long)]
        background: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// File stem; defaults to `synth_<seed>`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Write the five-superpixel toy instance and its constraint listing.
    Toy {
        /// Also print the constraint listing to stdout.
        #[arg(long)]
        dump: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol_feas: Option<f64>,
    #[arg(long)]
    tol_kkt: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// full, loc+seg, loc-only, sal-only or seg-only.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    mask_in_box: bool,
    /// Keep only the k strongest spatial neighbours per superpixel.
    #[arg(long)]
    knn: Option<usize>,
}

impl RunFlags {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg = cfg.with_file(&ConfigFile::load(path)?)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(t) = self.tol_feas {
            cfg.solver.tol_feas = positive("tol-feas", t)?;
        }
        if let Some(t) = self.tol_kkt {
            cfg.solver.tol_kkt = positive("tol-kkt", t)?;
        }
        if let Some(m) = self.max_iter {
            cfg.solver.max_iter = m;
        }
        if let Some(a) = &self.ablate {
            cfg.ablation = Ablation::parse(a)?;
        }
        if self.mask_in_box {
            cfg.rounding.mask_in_box = true;
        }
        if let Some(k) = self.knn {
            cfg.set_hyper("knn", serde_json::json!(k))?;
        }
        Ok(cfg)
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Parameter {
            name: name.into(),
            message: format!("{v} must be positive"),
        })
    }
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".json").unwrap_or(&name).to_owned()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn validate(paths: &[PathBuf]) -> bool {
    let mut ok = true;
    for p in paths {
        match load_instance(p) {
            Ok(inst) => {
                let layout = inst.layout();
                println!(
                    "ok {}: {} frames, {} superpixels, {} boxes",
                    p.display(),
                    inst.frames.len(),
                    layout.n_sp_total,
                    layout.n_box_total
                );
            }
            Err(e) => {
                eprintln!("error {}: {e}", p.display());
                ok = false;
            }
        }
    }
    ok
}

fn solve(paths: &[PathBuf], flags: &RunFlags, out: &Path) -> Result<bool> {
    let cfg = flags.config()?;
    create_dir(out)?;
    let outcomes = par::map_slice(paths, |p| -> Result<(PathBuf, String)> {
        let inst = load_instance(p)?;
        let run = pipeline::run(&inst, &cfg)?;
        let results = ResultsFile::new(&inst, &run, &cfg)?;
        let target = out.join(format!("{}.results.json", stem(p)));
        write_json(&target, &results)?;
        Ok((target, results.status))
    });
    let mut ok = true;
    for (p, r) in paths.iter().zip(outcomes) {
        match r {
            Ok((target, status)) => {
                println!("{} -> {} (status {status})", p.display(), target.display());
                ok &= status == "optimal";
            }
            Err(e) => {
                eprintln!("error {}: {e}", p.display());
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn eval(instance: &Path, results: &Path, out: Option<&Path>) -> Result<()> {
    let inst = load_instance(instance)?;
    let res = ResultsFile::load(results)?;
    let report = pipeline::evaluate(&inst, &res.frames)?;
    match out {
        Some(dir) => {
            create_dir(dir)?;
            let target = dir.join(format!("{}.eval.json", stem(instance)));
            write_json(&target, &report)?;
            println!("{}", target.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    spec_path: Option<&Path>,
    seed: u64,
    frames: Option<usize>,
    n_sp: Option<usize>,
    m_box: Option<usize>,
    background: Option<&str>,
    out: &Path,
    name: Option<&str>,
) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| Error::Manifest {
                path: p.to_owned(),
                message: e.to_string(),
            })?
        }
        None => SynthSpec::default(),
    };
    if let Some(v) = frames {
        spec.frames = v;
    }
    if let Some(v) = n_sp {
        spec.n_sp = v;
    }
    if let Some(v) = m_box {
        spec.m_box = v;
    }
    if let Some(b) = background {
        spec.background = match b {
            "video-like" => Background::VideoLike,
            "image-like" => Background::ImageLike,
            other => {
                return Err(Error::Parameter {
                    name: "background".into(),
                    message: format!("`{other}` is not video-like or image-like"),
                })
            }
        };
    }
    let inst = synth_instance(&spec, seed)?;
    create_dir(out)?;
    let target = out.join(format!("{}.json", name.map(str::to_owned).unwrap_or_else(|| format!("synth_{seed}"))));
    save_instance(&inst, &target)?;
    println!("{}", target.display());
    Ok(())
}

fn toy(print_dump: bool, out: &Path) -> Result<()> {
    let inst = toy_instance();
    create_dir(out)?;
    let manifest = out.join("toy.json");
    save_instance_indexed(&inst, &manifest, 1)?;
    let cs = build_constraints(&inst, inst.hyper.gamma, inst.hyper.eta)?;
    let listing = dump(&inst, &cs);
    let listing_path = out.join("toy.constraints.txt");
    write_atomic(&listing_path, listing.as_bytes())?;
    if print_dump {
        print!("{listing}");
    } else {
        println!("{}", manifest.display());
        println!("{}", listing_path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        par::init_threads(n);
    }
    let outcome = match &cli.command {
        Command::Validate { instances } => Ok(validate(instances)),
        Command::Solve { instances, run, out } => solve(instances, run, out),
        Command::Eval { instance, results, out } => eval(instance, results, out.as_deref()).map(|_| true),
        Command::Synth {
            spec,
            seed,
            frames,
            n_sp,
            m_box,
            background,
            out,
            name,
        } => synth(spec.as_deref(), *seed, *frames, *n_sp, *m_box, background.as_deref(), out, name.as_deref()).map(|_| true),
        Command::Toy { dump, out } => toy(*dump, out).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
