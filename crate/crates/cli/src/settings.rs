use std::path::PathBuf;
use std::str::FromStr;

use stlstm_core::data::MissingPolicy;
use stlstm_core::lstm::InnerActivation;
use stlstm_core::model::{ModelKind, ModelSpec, DEFAULT_N1, DEFAULT_N2, DEFAULT_SEQ_LEN};
use stlstm_core::train::TrainConfig;
use stlstm_core::{Error, Result};

/// Everything `train` needs, settable from a config file and overridable by
/// flags of the same name.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub missing: MissingPolicy,
    pub kind: ModelKind,
    pub n1: usize,
    pub n2: usize,
    pub activation: InnerActivation,
    pub seq_len: usize,
    pub horizon: usize,
    pub testset: Option<String>,
    pub train: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            manifest: None,
            out: None,
            missing: MissingPolicy::Error,
            kind: ModelKind::Stacked,
            n1: DEFAULT_N1,
            n2: DEFAULT_N2,
            activation: InnerActivation::Tanh,
            seq_len: DEFAULT_SEQ_LEN,
            horizon: 1,
            testset: None,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "missing" => self.missing = value.parse()?,
            "kind" | "model_kind" => self.kind = value.parse()?,
            "n1" | "layer1_total_neurons" => self.n1 = parse(key, value)?,
            "n2" | "layer2_neurons" => self.n2 = parse(key, value)?,
            "activation" | "inner_activation" => self.activation = value.parse()?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "testset" => self.testset = Some(value.to_string()),
            _ => {
                if !self.train.set(key, value)? {
                    return Err(Error::InvalidConfig(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn spec(&self, locations: usize, vars: usize) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            locations,
            vars,
            n1: self.n1,
            n2: self.n2,
            activation: self.activation,
            seq_len: self.seq_len,
            horizon: self.horizon,
        }
    }

    /// Every setting with defaults resolved, in config-file syntax.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(p) = &self.manifest {
            out.push(("manifest".into(), p.display().to_string()));
        }
        if let Some(p) = &self.out {
            out.push(("out".into(), p.display().to_string()));
        }
        out.push(("missing".into(), self.missing.to_string()));
        out.push(("kind".into(), self.kind.to_string()));
        out.push(("n1".into(), self.n1.to_string()));
        out.push(("n2".into(), self.n2.to_string()));
        out.push(("activation".into(), self.activation.to_string()));
        out.push(("seq_len".into(), self.seq_len.to_string()));
        out.push(("horizon".into(), self.horizon.to_string()));
        if let Some(t) = &self.testset {
            out.push(("testset".into(), t.clone()));
        }
        out.extend(self.train.to_kv());
        out
    }
}

/// Prints `key = value` lines to stderr under a comment header, so the banner
/// can be fed back as a config file.
pub fn banner(command: &str, kv: &[(String, String)]) {
    eprintln!("# stlstm {command}: effective config");
    for (k, v) in kv {
        eprintln!("{k} = {v}");
    }
}
