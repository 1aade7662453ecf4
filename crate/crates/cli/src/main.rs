//! `silrig` command line: template rendering, fixtures, reconstruction,
//! animation, texturing and a small HTTP server for a viewer.

mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use silrig::config::{load_label_map, Config};
use silrig::export::{mesh_from_json, mesh_to_json, write_gltf, FrameDump};
use silrig::fixtures::{make_fixture_sized, FixtureName};
use silrig::labeling::initial_labels;
use silrig::pipeline::{animate, reconstruct, Reconstruction};
use silrig::raster::{RasterMap, Semantic};
use silrig::skeleton::{Clip, Pose, PoseFrame};
use silrig::template::{label_legend, render_template, Camera, TemplateBody, View};
use silrig::texture::{assemble_atlas, blend_seam, project_front, synthesize_back, BackMode};
use silrig::{Error, Result};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "silrig",
    version,
    about = "Rigged body meshes from a single silhouette"
)]
struct Cli {
    /// Log filter, e.g. `info` or `silrig=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write intermediate maps next to the outputs.
    #[arg(long)]
    keep_intermediates: bool,
    /// Seed for the color model initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct InputArgs {
    /// Directory written by `fixture make`.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Binary silhouette (PNG, nonzero inside, or `.fmap`).
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    color: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Back label map (back view frame).
    #[arg(long)]
    back_labels: Option<PathBuf>,
    /// Override any configuration value, e.g. `params.kappa=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Template operations.
    Template {
        #[command(subcommand)]
        action: TemplateAction,
    },
    /// Synthetic test inputs.
    Fixture {
        #[command(subcommand)]
        action: FixtureAction,
    },
    /// Reconstruct a rigged, textured mesh from a silhouette.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// Use the warped template depth instead of integrated normals.
        #[arg(long)]
        depth_warp_baseline: bool,
        /// `mirror` or `inpaint`.
        #[arg(long)]
        back_mode: Option<BackMode>,
    },
    /// Pose a reconstructed mesh with a motion clip.
    Animate {
        #[command(flatten)]
        common: Common,
        /// `mesh.json` written by `reconstruct`, or its directory.
        #[arg(long)]
        mesh: PathBuf,
        /// Clip JSON: `{"fps": .., "frames": [{"rotations": {..}}, ..]}`.
        #[arg(long)]
        clip: PathBuf,
    },
    /// Build the texture atlas for a silhouette and color image.
    Texture {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        /// `mirror` or `inpaint`.
        #[arg(long)]
        mode: Option<BackMode>,
        /// Front label map; computed from the template when absent.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Width in pixels of the blended band at the front/back seam.
        #[arg(long)]
        seam_band: Option<usize>,
    },
    /// Serve a reconstruction directory to a viewer.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum TemplateAction {
    /// Render front and back template maps.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
}

#[derive(Subcommand)]
enum FixtureAction {
    /// Write one fixture (or `all`) with its ground truth.
    Make {
        name: String,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
}

fn input_error(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn out_dir(common: &Common, fallback: &Path) -> PathBuf {
    common.out.clone().unwrap_or_else(|| fallback.to_path_buf())
}

/// Loads the configuration and applies command-line overrides.
fn build_config(common: &Common, input: &InputArgs) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if !input.overrides.is_empty() {
        let mut value = toml::Value::try_from(&cfg).map_err(|e| input_error(e.to_string()))?;
        for kv in &input.overrides {
            let (key, raw) = kv
                .split_once('=')
                .ok_or_else(|| input_error(format!("override {kv:?} is not KEY=VALUE")))?;
            let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .map(|mut t| t.remove("v").unwrap())
                .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
            let mut slot = &mut value;
            for part in key.split('.') {
                slot = slot
                    .as_table_mut()
                    .and_then(|t| t.get_mut(part))
                    .ok_or_else(|| input_error(format!("unknown configuration key {key:?}")))?;
            }
            *slot = parsed;
        }
        cfg = value
            .try_into()
            .map_err(|e: toml::de::Error| input_error(e.to_string()))?;
        cfg.params.validate()?;
    }
    let i = &mut cfg.input;
    for (slot, arg) in [
        (&mut i.fixture, &input.fixture),
        (&mut i.mask, &input.mask),
        (&mut i.color, &input.color),
        (&mut i.template, &input.template),
        (&mut i.pose, &input.pose),
        (&mut i.back_labels, &input.back_labels),
    ] {
        if arg.is_some() {
            *slot = arg.clone();
        }
    }
    if let Some(s) = common.seed {
        cfg.params.seed = s;
    }
    if common.keep_intermediates {
        cfg.output.keep_intermediates = true;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_reconstruction(dir: &Path, r: &Reconstruction, cfg: &Config) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_gltf(&r.mesh, dir, "mesh", None)?;
    std::fs::write(dir.join("mesh.json"), mesh_to_json(&r.mesh)?)?;
    write_json(&dir.join("report.json"), &r.report)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    r.intermediates["labels"].save_fmap(dir.join("labels.fmap"))?;
    write_json(&dir.join("labels.json"), &label_legend())?;
    let mut files = vec![
        "mesh.gltf",
        "mesh.bin",
        "mesh.json",
        "report.json",
        "config.toml",
        "labels.fmap",
        "labels.json",
    ];
    if r.mesh.texture.is_some() {
        files.push("mesh.png");
    }
    if let Some(p) = &r.report.back_provenance {
        write_json(&dir.join("back_provenance.json"), p)?;
        files.push("back_provenance.json");
    }
    if cfg.output.keep_intermediates {
        let sub = dir.join("intermediates");
        std::fs::create_dir_all(&sub)?;
        for (name, map) in &r.intermediates {
            map.save_fmap(sub.join(format!("{name}.fmap")))?;
            if map.semantic() == Semantic::Mask {
                map.save_png(sub.join(format!("{name}.png")))?;
            }
        }
    }
    let joints: Vec<&str> = r
        .mesh
        .skeleton
        .joints()
        .iter()
        .map(|j| j.name.as_str())
        .collect();
    let manifest = serde_json::json!({
        "mesh": "mesh.gltf",
        "dump": "mesh.json",
        "texture": r.mesh.texture.as_ref().map(|_| "mesh.png"),
        "report": "report.json",
        "pose": "pose.json",
        "joints": joints,
        "files": files,
        "iou": r.report.iou,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn cmd_reconstruct(
    common: &Common,
    input: &InputArgs,
    baseline: bool,
    back_mode: Option<BackMode>,
) -> Result<()> {
    let mut cfg = build_config(common, input)?;
    if baseline {
        cfg.params.depth_warp_baseline = true;
    }
    if let Some(m) = back_mode {
        cfg.params.back_mode = m;
    }
    let inputs = cfg.input.load()?;
    let r = reconstruct(&inputs, &cfg.params)?;
    write_reconstruction(&cfg.output.dir, &r, &cfg)?;
    let rep = &r.report;
    println!(
        "reconstructed {} vertices, {} triangles, IoU {:.4}, closed {}, written to {}",
        rep.vertices,
        rep.triangles,
        rep.iou,
        rep.closed,
        cfg.output.dir.display()
    );
    Ok(())
}

fn cmd_template(
    common: &Common,
    template: &Option<PathBuf>,
    pose: &Option<PathBuf>,
    size: usize,
) -> Result<()> {
    let body = match template {
        Some(p) => TemplateBody::from_json(
            &std::fs::read_to_string(p)
                .map_err(|e| input_error(format!("{}: {e}", p.display())))?,
        )?,
        None => TemplateBody::default_body(),
    };
    let pose = match pose {
        Some(p) => serde_json::from_str::<PoseFrame>(&std::fs::read_to_string(p)?)?
            .to_pose(&body.skeleton)?,
        None => Pose::rest(body.skeleton.len()),
    };
    if size < 8 {
        return Err(input_error("render size must be at least 8"));
    }
    let dir = out_dir(common, Path::new("template"));
    let cam = Camera::square(size);
    for (view, name) in [(View::Front, "front"), (View::Back, "back")] {
        let r = render_template(&body, &pose, &cam, view, None)?;
        r.save(dir.join(name))?;
        r.silhouette
            .save_png(dir.join(format!("{name}_silhouette.png")))?;
    }
    std::fs::write(
        dir.join("template.json"),
        serde_json::to_string_pretty(&body)?,
    )?;
    println!("rendered template to {}", dir.display());
    Ok(())
}

fn cmd_fixture(common: &Common, name: &str, size: usize) -> Result<()> {
    let names: Vec<FixtureName> = if name == "all" {
        FixtureName::ALL.to_vec()
    } else {
        vec![name.parse()?]
    };
    let dir = out_dir(common, Path::new("fixtures"));
    for n in names {
        let f = make_fixture_sized(n, size)?;
        f.save(dir.join(n.as_str()))?;
        println!("wrote {}", dir.join(n.as_str()).display());
    }
    Ok(())
}

fn cmd_animate(common: &Common, mesh: &Path, clip: &Path) -> Result<()> {
    let mesh_path = if mesh.is_dir() {
        mesh.join("mesh.json")
    } else {
        mesh.to_path_buf()
    };
    let text = std::fs::read_to_string(&mesh_path)
        .map_err(|e| input_error(format!("{}: {e}", mesh_path.display())))?;
    let mut m = mesh_from_json(&text)?;
    let clip: Clip = serde_json::from_str(
        &std::fs::read_to_string(clip)
            .map_err(|e| input_error(format!("{}: {e}", clip.display())))?,
    )?;
    let tex = mesh_path.with_file_name("mesh.png");
    if tex.exists() {
        m.texture = Some(RasterMap::load_png(&tex, Semantic::Color)?);
    }
    let frames = animate(&m, &clip)?;
    let dir = out_dir(common, Path::new("animation"));
    let fdir = dir.join("frames");
    std::fs::create_dir_all(&fdir)?;
    for (k, f) in frames.iter().enumerate() {
        let dump = FrameDump {
            frame: k,
            time: k as f64 / clip.fps,
            vertices: f.iter().map(|v| [v.x, v.y, v.z]).collect(),
        };
        write_json(&fdir.join(format!("frame_{k:04}.json")), &dump)?;
    }
    write_gltf(&m, &dir, "animated", Some(&clip))?;
    println!("posed {} frames into {}", frames.len(), dir.display());
    Ok(())
}

fn cmd_texture(
    common: &Common,
    input: &InputArgs,
    mode: Option<BackMode>,
    labels: &Option<PathBuf>,
    band: Option<usize>,
) -> Result<()> {
    let cfg = build_config(common, input)?;
    let inputs = cfg.input.load()?;
    let color = inputs
        .color
        .as_ref()
        .ok_or_else(|| input_error("texturing needs a color image"))?;
    let s = silrig::boundary::clean_mask(&inputs.silhouette)?;
    let mode = mode.unwrap_or(cfg.params.back_mode);
    let band = band.unwrap_or(cfg.params.seam_band);
    let labels = match labels {
        Some(p) => load_label_map(p)?,
        None => {
            let t = render_template(
                &inputs.template,
                &inputs.pose,
                &inputs.camera,
                View::Front,
                None,
            )?;
            let (w, h) = (s.width(), s.height());
            initial_labels(
                &s,
                &t.label,
                &t.silhouette,
                cfg.params.labels.effective_gamma_init(w, h),
            )?
        }
    };
    let front = project_front(color, &s, None)?;
    let back = synthesize_back(
        &front.tile,
        &s,
        mode,
        Some(&labels),
        inputs.back_labels.as_ref(),
    )?;
    let (ft, bt) = blend_seam(&front.tile, &back.tile, &s, band)?;
    let dir = out_dir(common, Path::new("texture"));
    std::fs::create_dir_all(&dir)?;
    ft.save_png(dir.join("front.png"))?;
    bt.save_png(dir.join("back.png"))?;
    assemble_atlas(&[&ft, &bt])?.save_png(dir.join("atlas.png"))?;
    write_json(&dir.join("provenance.json"), &back.provenance)?;
    println!("texture written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Template {
            action:
                TemplateAction::Render {
                    common,
                    template,
                    pose,
                    size,
                },
        } => cmd_template(&common, &template, &pose, size),
        Command::Fixture {
            action: FixtureAction::Make { name, common, size },
        } => cmd_fixture(&common, &name, size),
        Command::Reconstruct {
            common,
            input,
            depth_warp_baseline,
            back_mode,
        } => cmd_reconstruct(&common, &input, depth_warp_baseline, back_mode),
        Command::Animate { common, mesh, clip } => cmd_animate(&common, &mesh, &clip),
        Command::Texture {
            common,
            input,
            mode,
            labels,
            seam_band,
        } => cmd_texture(&common, &input, mode, &labels, seam_band),
        Command::Serve { common, host, port } => {
            serve::serve(&out_dir(&common, Path::new(".")), &host, port)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_STAGE
            })
        }
    }
}
