//! Run configuration: one TOML or JSON file naming the inputs, every
//! pipeline constant and the output settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::FixtureManifest;
use crate::pipeline::{Inputs, Params};
use crate::raster::{RasterMap, Semantic};
use crate::skeleton::{Pose, PoseFrame};
use crate::template::{Camera, TemplateBody};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Directory written by `fixture make`; supplies every field not set
    /// explicitly.
    pub fixture: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub color: Option<PathBuf>,
    /// Template body JSON; the built-in body when absent.
    pub template: Option<PathBuf>,
    /// Pose JSON (joint name to `[w, x, y, z]`); rest when absent.
    pub pose: Option<PathBuf>,
    pub camera: Option<Camera>,
    /// Back label map (label PNG or `.fmap`), back view frame.
    pub back_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub keep_intermediates: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            keep_intermediates: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: InputConfig,
    pub params: Params,
    pub output: OutputConfig,
}

impl Config {
    /// Parses by extension: `.json` as JSON, anything else as TOML.
    /// Relative input paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        let i = &mut cfg.input;
        for p in [
            &mut i.fixture,
            &mut i.mask,
            &mut i.color,
            &mut i.template,
            &mut i.pose,
            &mut i.back_labels,
        ] {
            fix(p);
        }
        cfg.params.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load_label_map(path: &Path) -> Result<RasterMap> {
    if path.extension().is_some_and(|e| e == "fmap") {
        return RasterMap::load_any(path, Semantic::Label);
    }
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    RasterMap::from_data(
        w as usize,
        h as usize,
        1,
        Semantic::Label,
        img.pixels().map(|p| p.0[0] as f32).collect(),
    )
}

impl InputConfig {
    pub fn load(&self) -> Result<Inputs> {
        let mut mask = self.mask.clone();
        let mut color = self.color.clone();
        let mut template = self.template.clone();
        let mut pose_frame: Option<PoseFrame> = None;
        let mut camera = self.camera;
        if let Some(dir) = &self.fixture {
            let m: FixtureManifest = read_json(&dir.join("fixture.json"))?;
            mask = mask.or(Some(dir.join(m.mask)));
            color = color.or(Some(dir.join(m.color)));
            template = template.or(Some(dir.join(m.template)));
            pose_frame = Some(m.pose);
            camera = camera.or(Some(m.camera));
        }
        let mask = mask.ok_or_else(|| Error::InvalidInput("no input mask given".into()))?;
        let silhouette = RasterMap::load_any(&mask, Semantic::Mask)?;
        let color = color
            .map(|c| RasterMap::load_any(&c, Semantic::Color))
            .transpose()?;
        let template = match &template {
            Some(p) => TemplateBody::from_json(
                &std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?,
            )?,
            None => TemplateBody::default_body(),
        };
        if let Some(p) = &self.pose {
            pose_frame = Some(read_json(p)?);
        }
        let pose = match pose_frame {
            Some(f) => f.to_pose(&template.skeleton)?,
            None => Pose::rest(template.skeleton.len()),
        };
        let camera = match camera {
            Some(c) => c,
            None if silhouette.width() == silhouette.height() => Camera::square(silhouette.width()),
            None => {
                return Err(Error::InvalidInput(
                    "non-square input needs an explicit camera".into(),
                ))
            }
        };
        let back_labels = self
            .back_labels
            .as_deref()
            .map(load_label_map)
            .transpose()?;
        Ok(Inputs {
            silhouette,
            color,
            template,
            pose,
            camera,
            back_labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = cfg.to_toml().unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("gamma_init"));
    }

    #[test]
    fn partial_files_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[input]\nmask = \"m.png\"\n[params]\nkappa = 16\n[params.labels]\ngamma_refine = 4.0\n").unwrap();
        let cfg = Config::load(&p).unwrap();
        assert_eq!(cfg.params.kappa, 16);
        assert_eq!(cfg.params.labels.gamma_refine, 4.0);
        assert_eq!(cfg.params.boundary_points, 512);
        assert_eq!(cfg.input.mask, Some(dir.path().join("m.png")));
        std::fs::write(&p, "[params]\nkapa = 16\n").unwrap();
        assert!(Config::load(&p).unwrap_err().is_input_error());
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"params": {"seam_band": 0}}"#).unwrap();
        assert!(Config::load(&j).is_err());
    }
}
