//! JSON run configuration: model sections, training schedule, task list.
//!
//! Unknown keys are rejected everywhere, and task entries are checked
//! field-by-field so a parameter belonging to a different degradation kind
//! is an error rather than silently ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::{BlurKernel, Degradation, DegradationSpec};
use crate::dformer::DformerConfig;
use crate::error::{Error, Result};
use crate::rformer::RformerConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { out_dir: PathBuf::from("runs/default") }
    }
}

/// One task entry as written in JSON; converted strictly into a
/// [`DegradationSpec`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskEntry {
    pub kind: String,
    pub sigma: Option<f64>,
    pub count: Option<usize>,
    pub length: Option<f64>,
    pub angle_deg: Option<f64>,
    pub intensity: Option<f64>,
    pub t: Option<f64>,
    pub airlight: Option<f64>,
    pub size: Option<usize>,
    pub blur_sigma: Option<f64>,
    pub motion_length: Option<usize>,
    pub gamma: Option<f64>,
    pub gain: Option<f64>,
    pub seed: Option<u64>,
}

impl TaskEntry {
    fn field_names_set(&self) -> Vec<&'static str> {
        let mut set = Vec::new();
        if self.sigma.is_some() { set.push("sigma"); }
        if self.count.is_some() { set.push("count"); }
        if self.length.is_some() { set.push("length"); }
        if self.angle_deg.is_some() { set.push("angle_deg"); }
        if self.intensity.is_some() { set.push("intensity"); }
        if self.t.is_some() { set.push("t"); }
        if self.airlight.is_some() { set.push("airlight"); }
        if self.size.is_some() { set.push("size"); }
        if self.blur_sigma.is_some() { set.push("blur_sigma"); }
        if self.motion_length.is_some() { set.push("motion_length"); }
        if self.gamma.is_some() { set.push("gamma"); }
        if self.gain.is_some() { set.push("gain"); }
        set
    }

    pub fn to_spec(&self, default_seed: u64) -> Result<DegradationSpec> {
        let allowed: &[&str] = match self.kind.as_str() {
            "noise" => &["sigma"],
            "rain" => &["count", "length", "angle_deg", "intensity"],
            "haze" => &["t", "airlight"],
            "blur" => &["size", "blur_sigma", "motion_length", "angle_deg"],
            "lowlight" => &["gamma", "gain"],
            other => {
                return Err(Error::Config(format!(
                    "unknown task kind '{other}' (noise|rain|haze|blur|lowlight)"
                )))
            }
        };
        for name in self.field_names_set() {
            if !allowed.contains(&name) {
                return Err(Error::Config(format!(
                    "task '{}' does not take parameter '{name}'",
                    self.kind
                )));
            }
        }
        let kind = match self.kind.as_str() {
            "noise" => Degradation::Noise { sigma: self.sigma.unwrap_or(25.0) },
            "rain" => {
                let d = Degradation::default_rain();
                let Degradation::Rain { count, length, angle_deg, intensity } = d else {
                    unreachable!()
                };
                Degradation::Rain {
                    count: self.count.unwrap_or(count),
                    length: self.length.unwrap_or(length),
                    angle_deg: self.angle_deg.unwrap_or(angle_deg),
                    intensity: self.intensity.unwrap_or(intensity),
                }
            }
            "haze" => Degradation::Haze {
                t: self.t.unwrap_or(0.5),
                airlight: self.airlight.unwrap_or(0.8),
            },
            "blur" => {
                if let Some(len) = self.motion_length {
                    Degradation::Blur {
                        kernel: BlurKernel::Motion {
                            length: len,
                            angle_deg: self.angle_deg.unwrap_or(45.0),
                        },
                    }
                } else {
                    Degradation::Blur {
                        kernel: BlurKernel::Gaussian {
                            size: self.size.unwrap_or(9),
                            sigma: self.blur_sigma.unwrap_or(2.0),
                        },
                    }
                }
            }
            "lowlight" => Degradation::Lowlight {
                gamma: self.gamma.unwrap_or(2.2),
                gain: self.gain.unwrap_or(0.9),
            },
            _ => unreachable!(),
        };
        let spec = DegradationSpec::new(kind, self.seed.unwrap_or(default_seed));
        spec.kind.validate()?;
        Ok(spec)
    }
}

/// Parse a compact CLI task string: `kind[:p1[:p2...]]`.
///
/// `noise:25`, `rain`, `haze:0.5:0.8`, `blur:9:2`, `blur:motion:9:45`,
/// `lowlight:2.2:0.9`.
pub fn parse_task(s: &str, default_seed: u64) -> Result<DegradationSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let mut entry = TaskEntry { kind: parts[0].to_string(), ..Default::default() };
    let parse_f = |v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| Error::Config(format!("bad numeric parameter '{v}' in task '{s}'")))
    };
    match (parts[0], &parts[1..]) {
        (_, []) => {}
        ("noise", [sigma]) => entry.sigma = Some(parse_f(sigma)?),
        ("haze", [t]) => entry.t = Some(parse_f(t)?),
        ("haze", [t, a]) => {
            entry.t = Some(parse_f(t)?);
            entry.airlight = Some(parse_f(a)?);
        }
        ("blur", ["motion", len]) => entry.motion_length = Some(parse_f(len)? as usize),
        ("blur", ["motion", len, ang]) => {
            entry.motion_length = Some(parse_f(len)? as usize);
            entry.angle_deg = Some(parse_f(ang)?);
        }
        ("blur", [k]) => entry.size = Some(parse_f(k)? as usize),
        ("blur", [k, sig]) => {
            entry.size = Some(parse_f(k)? as usize);
            entry.blur_sigma = Some(parse_f(sig)?);
        }
        ("rain", [count]) => entry.count = Some(parse_f(count)? as usize),
        ("rain", [count, intensity]) => {
            entry.count = Some(parse_f(count)? as usize);
            entry.intensity = Some(parse_f(intensity)?);
        }
        ("lowlight", [gamma]) => entry.gamma = Some(parse_f(gamma)?),
        ("lowlight", [gamma, gain]) => {
            entry.gamma = Some(parse_f(gamma)?);
            entry.gain = Some(parse_f(gain)?);
        }
        _ => return Err(Error::Config(format!("cannot parse task '{s}'"))),
    }
    entry.to_spec(default_seed)
}

/// Parse a comma-separated task list.
pub fn parse_tasks(s: &str, default_seed: u64) -> Result<Vec<DegradationSpec>> {
    s.split(',')
        .map(|t| parse_task(t.trim(), default_seed))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dformer: DformerConfig,
    #[serde(default)]
    pub rformer: RformerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dformer.validate()?;
        self.rformer.validate()?;
        self.train.validate()?;
        if self.dformer.repr_dim != self.rformer.repr_dim {
            return Err(Error::Config(format!(
                "dformer.repr_dim {} != rformer.repr_dim {}",
                self.dformer.repr_dim, self.rformer.repr_dim
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        for t in &self.tasks {
            t.to_spec(self.seed)?;
        }
        Ok(())
    }

    pub fn specs(&self) -> Result<Vec<DegradationSpec>> {
        self.tasks.iter().map(|t| t.to_spec(self.seed)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_task_strings() {
        let spec = parse_task("noise:25", 1).unwrap();
        assert_eq!(spec.kind, Degradation::Noise { sigma: 25.0 });
        assert!(parse_task("rain", 1).is_ok());
        assert!(parse_task("haze:0.5:0.8", 1).is_ok());
        let spec = parse_task("blur:motion:9:30", 1).unwrap();
        assert_eq!(
            spec.kind,
            Degradation::Blur { kernel: BlurKernel::Motion { length: 9, angle_deg: 30.0 } }
        );
        assert!(parse_task("fog", 1).is_err());
        assert!(parse_task("noise:abc", 1).is_err());
    }

    #[test]
    fn wrong_kind_parameter_rejected() {
        let entry = TaskEntry {
            kind: "noise".into(),
            t: Some(0.5),
            ..Default::default()
        };
        let err = entry.to_spec(0).unwrap_err();
        assert!(err.to_string().contains("does not take parameter 't'"));
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        let json = r#"{"tasks": [{"kind": "noise"}], "bogus": 3}"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
        let json = r#"{"tasks": [{"kind": "noise", "what": 3}]}"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
    }

    #[test]
    fn minimal_run_config_parses_with_defaults() {
        let json = r#"{"tasks": [{"kind": "noise", "sigma": 25.0}]}"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dformer.bands, 2);
        assert_eq!(cfg.specs().unwrap().len(), 1);
    }

    #[test]
    fn repr_dim_mismatch_rejected() {
        let json = r#"{
            "dformer": {"repr_dim": 32},
            "tasks": [{"kind": "noise"}]
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.validate().is_err());
    }
}
