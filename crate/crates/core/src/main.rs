use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use rtsplat::checkpoint;
use rtsplat::config::KeyValues;
use rtsplat::dataset::{load_cameras, Dataset};
use rtsplat::edit::{apply_edit, parse_box, parse_ops, undo_edit, EditSpec, Selection};
use rtsplat::gradcheck::{finite_diff_check, random_problem, GradCheckOptions};
use rtsplat::metrics::evaluate;
use rtsplat::synth::SceneSpec;
use rtsplat::train::{train, TrainConfig};
use rtsplat::{render, Camera, Image, RenderOptions};

#[derive(Parser)]
#[command(name = "rtsplat", version, about = "Hybrid surface-volume Gaussian surfels for glass and other thin transparent surfaces")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-trace a synthetic glass scene into a dataset directory.
    SynthGen {
        /// Scene spec (`key = value` lines); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Start from the high specular-variance preset.
        #[arg(long)]
        high_variance: bool,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimize surfels against a dataset.
    Train(TrainArgs),
    /// Render one camera of a checkpoint to a PNG.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Camera index in the camera file.
        #[arg(long)]
        camera: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Write the per-layer decomposition of every view (8 PNGs each, plus raw depths).
    Decompose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only these camera indices (comma separated).
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Score a checkpoint on a dataset, or run the finite-difference gradient check.
    Eval(EvalArgs),
    /// Apply (or undo) an appearance edit.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Edit file: operations plus `select = all | box | mask`.
        #[arg(long, required_unless_present = "undo")]
        spec: Option<PathBuf>,
        /// Revert the last edit instead.
        #[arg(long, conflicts_with = "spec")]
        undo: bool,
        /// Output checkpoint; defaults to overwriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset directory or camera file for mask selections.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `synth-gen` (or laid out the same way).
    #[arg(long)]
    data: PathBuf,
    /// Training config (`key = value` lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<u64>,
    /// Tie occupancy to opacity (single-opacity baseline).
    #[arg(long)]
    no_occupancy: bool,
    #[arg(long)]
    no_scattering: bool,
    #[arg(long)]
    no_attenuation: bool,
    #[arg(long)]
    no_gating: bool,
    #[arg(long)]
    no_mask_loss: bool,
    /// Gate strength k.
    #[arg(long)]
    gate_k: Option<f64>,
    /// Also write a checkpoint every N iterations.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct RenderArgs {
    /// Dataset directory or camera file; the default synthetic cameras otherwise.
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Training config whose ablations set the render options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Render with tied occupancy and opacity.
    #[arg(long)]
    no_occupancy: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "gradcheck")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "gradcheck")]
    data: Option<PathBuf>,
    /// Views to score.
    #[arg(long, default_value = "test", value_parser = ["test", "train", "all"])]
    split: String,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_occupancy: bool,
    /// Compare analytic and finite-difference gradients on random scenes.
    #[arg(long)]
    gradcheck: bool,
    /// Random scenes for --gradcheck (each checked with gating on and off).
    #[arg(long, default_value_t = 5)]
    scenes: usize,
    #[arg(long, default_value_t = 30)]
    surfels: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Check at most this many scalars per parameter group.
    #[arg(long)]
    max_per_group: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg += if msg.is_empty() { "" } else { ": " };
                    msg += &cause;
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::SynthGen {
            spec,
            high_variance,
            out,
            seed,
        } => {
            let mut kv = if high_variance { SceneSpec::high_variance() } else { SceneSpec::default() }.to_kv();
            if let Some(p) = spec {
                let file = KeyValues::load(&p)?;
                for k in file.keys().map(str::to_string).collect::<Vec<_>>() {
                    kv.set(&k, file.raw(&k).unwrap_or_default());
                }
            }
            if let Some(s) = seed {
                kv.set("seed", s);
            }
            let spec = SceneSpec::from_kv(&kv)?;
            let data = rtsplat::dataset::emit_dataset(&spec, &out)?;
            info!("wrote {} views to {}", data.views.len(), out.display());
        }
        Command::Train(a) => {
            let cfg = train_config(&a)?;
            let data = Dataset::load(&a.data)?;
            let outcome = train(&data, &cfg, Some(&a.out))?;
            info!(
                "final loss {:.5}, {} surfels, checkpoint {}",
                outcome.log.last().map_or(f64::NAN, |r| r.loss.total),
                outcome.scene.len(),
                a.out.join("scene.rtsp").display()
            );
        }
        Command::Render {
            checkpoint: ck,
            camera,
            out,
            render: r,
        } => {
            let scene = checkpoint::load(&ck)?;
            let cams = cameras(r.cameras.as_deref())?;
            let cam = cams
                .iter()
                .find(|(i, _)| *i == camera)
                .map(|(_, c)| c)
                .with_context(|| format!("no camera {camera} (have {})", cams.len()))?;
            let img = render(&scene, cam, &render_options(r.config.as_deref(), r.no_occupancy)?)?;
            img.outputs.color.save_png(&out)?;
            info!("wrote {}", out.display());
        }
        Command::Decompose {
            checkpoint: ck,
            out,
            views,
            render: r,
        } => {
            let scene = checkpoint::load(&ck)?;
            let opts = render_options(r.config.as_deref(), r.no_occupancy)?;
            fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            for (i, cam) in cameras(r.cameras.as_deref())? {
                if !views.is_empty() && !views.contains(&i) {
                    continue;
                }
                decompose_view(&scene, &cam, &opts, &out, i)?;
            }
            info!("wrote layers to {}", out.display());
        }
        Command::Eval(a) => return eval(a),
        Command::Edit {
            checkpoint: ck,
            spec,
            undo,
            out,
            data,
        } => {
            let mut scene = checkpoint::load(&ck)?;
            if undo {
                let frame = undo_edit(&mut scene)?;
                info!("undid `{}` on {} surfels", frame.description, frame.entries.len());
            } else {
                let path = spec.expect("clap requires --spec without --undo");
                let edit = edit_spec(&path, data.as_deref())?;
                let report = apply_edit(&mut scene, &edit)?;
                for w in &report.warnings {
                    warn!("{w}");
                }
                info!("edited {} surfels", report.selected);
            }
            checkpoint::save(&scene, out.as_ref().unwrap_or(&ck))?;
        }
    }
    Ok(true)
}

fn train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_kv(&KeyValues::load(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iters {
        cfg.iterations = n;
    }
    if let Some(k) = a.gate_k {
        cfg.loss.gate_k = k;
    }
    if let Some(n) = a.checkpoint_every {
        cfg.checkpoint_every = n;
    }
    let ab = &mut cfg.ablations;
    ab.no_occupancy |= a.no_occupancy;
    ab.no_scattering |= a.no_scattering;
    ab.no_attenuation |= a.no_attenuation;
    ab.no_gating |= a.no_gating;
    ab.no_mask_loss |= a.no_mask_loss;
    cfg.validate()?;
    Ok(cfg)
}

fn render_options(config: Option<&Path>, no_occupancy: bool) -> anyhow::Result<RenderOptions> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_kv(&KeyValues::load(p)?)?,
        None => TrainConfig::default(),
    };
    cfg.ablations.no_occupancy |= no_occupancy;
    Ok(cfg.render_options())
}

fn cameras(path: Option<&Path>) -> anyhow::Result<Vec<(usize, Camera)>> {
    Ok(match path {
        Some(p) if p.is_dir() => load_cameras(p.join("cameras.txt"))?,
        Some(p) => load_cameras(p)?,
        None => SceneSpec::default().cameras()?.into_iter().enumerate().collect(),
    })
}

fn decompose_view(scene: &rtsplat::Scene, cam: &Camera, opts: &RenderOptions, out: &Path, i: usize) -> anyhow::Result<()> {
    let o = render(scene, cam, opts)?.outputs;
    let depth_png = |d: &Image| -> Image {
        let finite = d.data().iter().copied().filter(|v| v.is_finite() && *v > 0.0);
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        d.map(|v| if v.is_finite() && v > 0.0 { (v - lo) / span } else { 0.0 })
    };
    let layers: [(&str, Image); 8] = [
        ("color", o.color.clone()),
        ("specular", o.c_spec.clone()),
        ("subsurface", o.modulated_sub()),
        ("transmission", o.c_trans.clone()),
        ("gate", o.gate.clone()),
        ("normal", o.normal_image()),
        ("surface_depth", depth_png(&o.surface_depth)),
        ("volumetric_depth", depth_png(&o.volumetric_depth)),
    ];
    for (name, img) in &layers {
        img.save_png(out.join(format!("{i:03}_{name}.png")))?;
    }
    o.surface_depth.save_raw_f32(out.join(format!("{i:03}_surface_depth.f32")))?;
    o.volumetric_depth.save_raw_f32(out.join(format!("{i:03}_volumetric_depth.f32")))?;
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<bool> {
    if a.gradcheck {
        let opts = GradCheckOptions {
            max_per_group: a.max_per_group,
            ..Default::default()
        };
        let mut ok = true;
        for s in 0..a.scenes as u64 {
            for k in [rtsplat::composite::DEFAULT_GATE_K, 0.0] {
                let (scene, cam, obj) = random_problem(a.seed + s, a.surfels, a.size, k)?;
                let rep = finite_diff_check(&scene, &cam, &obj, &opts)?;
                println!("scene {} ({} surfels, {}x{}), gate k = {k}", a.seed + s, scene.len(), a.size, a.size);
                println!("{}", rep.to_table());
                ok &= rep.pass();
            }
        }
        println!("gradient check: {}", if ok { "pass" } else { "FAIL" });
        return Ok(ok);
    }
    let (Some(ck), Some(dir)) = (a.checkpoint, a.data) else {
        bail!("eval needs --checkpoint and --data");
    };
    let scene = checkpoint::load(&ck)?;
    let data = Dataset::load(&dir)?;
    let opts = render_options(a.config.as_deref(), a.no_occupancy)?;
    let views: Vec<_> = data
        .views
        .iter()
        .filter(|v| match a.split.as_str() {
            "test" => v.test,
            "train" => !v.test,
            _ => true,
        })
        .collect();
    if views.is_empty() {
        bail!("no {} views in {}", a.split, dir.display());
    }
    let report = evaluate(&scene, views, &opts)?;
    print!("{}", report.to_table());
    if let Some(p) = a.out {
        fs::write(&p, report.to_csv()).with_context(|| p.display().to_string())?;
    }
    Ok(true)
}

fn edit_spec(path: &Path, data: Option<&Path>) -> anyhow::Result<EditSpec> {
    let kv = KeyValues::load(path)?;
    kv.reject_unknown(&[
        "select",
        "box_min",
        "box_max",
        "mask",
        "camera",
        "roughness_scale",
        "set_tau",
        "remove_reflection",
        "tint",
        "set_opacity",
    ])?;
    let ops = parse_ops(&kv)?;
    if ops.is_empty() {
        bail!("{}: no edit operations", path.display());
    }
    let mode: String = kv.get("select")?.unwrap_or_else(|| "all".into());
    let selection = match mode.as_str() {
        "all" => Selection::All,
        "box" => parse_box(&kv)?.context("select = box needs box_min and box_max")?,
        "mask" => {
            let file: String = kv.get("mask")?.context("select = mask needs `mask = <png>`")?;
            let base = path.parent().unwrap_or(Path::new("."));
            let mask = Image::load_png(base.join(file), 1)?;
            let index: usize = kv.get("camera")?.context("select = mask needs `camera = <index>`")?;
            let cam = cameras(data)?
                .into_iter()
                .find(|(i, _)| *i == index)
                .map(|(_, c)| c)
                .with_context(|| format!("no camera {index}"))?;
            Selection::Mask { mask, camera: cam }
        }
        other => bail!("unknown selection `{other}` (all, box, mask)"),
    };
    Ok(EditSpec { selection, ops })
}
