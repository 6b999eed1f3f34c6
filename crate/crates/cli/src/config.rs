//! Run configuration: one JSON document, optionally overridden by flags.
//!
//! Precedence is flag > config file > built-in default. Relative paths are
//! resolved against the directory holding the config file (or the working
//! directory when no file is given).

use std::fs;
use std::path::{Component, Path, PathBuf};

use ilicast::data::Impute;
use ilicast::eval::{Aggregation, Method};
use ilicast::seq2seq::{Architecture, ModelKind};
use ilicast::training::TrainConfig;
use ilicast::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// CDC export; may contain `{state}`.
    pub ili_csv: Option<PathBuf>,
    /// Trends export; may contain `{state}`.
    pub trends_csv: Option<PathBuf>,
    /// Relative to `output_dir`; `{state}` and `{method}` are substituted.
    pub checkpoint: String,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            ili_csv: None,
            trends_csv: None,
            checkpoint: "{state}/{method}.ckpt".into(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub in_len: usize,
    pub out_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::default();
        ModelConfig {
            encoder_layers: a.encoder_layers,
            encoder_hidden: a.encoder_hidden,
            decoder_hidden: a.decoder_hidden,
            attention_dim: a.attention_dim,
            in_len: a.in_len,
            out_len: a.out_len,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, kind: ModelKind) -> Architecture {
        Architecture {
            kind,
            encoder_layers: self.encoder_layers,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            attention_dim: self.attention_dim,
            in_len: self.in_len,
            out_len: self.out_len,
            ..Architecture::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    /// Single state label; ignored when `states` is non-empty.
    pub state: Option<String>,
    pub states: Vec<String>,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub aggregation: Aggregation,
    pub methods: Vec<Method>,
    pub split_ratio: f64,
    pub ar_order: usize,
    pub seasonal_period: usize,
    pub impute: Impute,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig::default(),
            state: None,
            states: Vec::new(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            aggregation: Aggregation::default(),
            methods: Method::ALL.to_vec(),
            split_ratio: 0.67,
            ar_order: 10,
            seasonal_period: 52,
            impute: Impute::None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub state: Option<String>,
    pub methods: Option<Vec<Method>>,
    pub aggregation: Option<Aggregation>,
}

/// Parses `all` or a comma-separated list of method names.
pub fn parse_methods(s: &str) -> std::result::Result<Vec<Method>, String> {
    if s.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let m: Method = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err("empty method list".into());
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." || path.is_empty() {
                Error::Config(format!("config: {inner}"))
            } else {
                Error::Config(format!("config key `{path}`: {inner}"))
            }
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(state) = &o.state {
            self.state = Some(state.clone());
            self.states.clear();
        }
        if let Some(methods) = &o.methods {
            self.methods = methods.clone();
        }
        if let Some(a) = o.aggregation {
            self.aggregation = a;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.ar_order == 0 {
            return Err(Error::Config("ar_order must be positive".into()));
        }
        if self.seasonal_period == 0 {
            return Err(Error::Config("seasonal_period must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        for kind in self.neural_kinds() {
            self.model.architecture(kind).validate()?;
        }
        checkpoint_relative(&self.paths.checkpoint, "state", "method")?;
        Ok(())
    }

    /// State labels to process; `[None]` means "whatever the file holds".
    pub fn state_list(&self) -> Vec<Option<String>> {
        if !self.states.is_empty() {
            self.states.iter().cloned().map(Some).collect()
        } else {
            vec![self.state.clone()]
        }
    }

    pub fn neural_kinds(&self) -> Vec<ModelKind> {
        self.methods.iter().filter_map(|m| model_kind(*m)).collect()
    }
}

pub fn model_kind(m: Method) -> Option<ModelKind> {
    match m {
        Method::SimpleLstm => Some(ModelKind::SimpleLstm),
        Method::Seq2Seq => Some(ModelKind::Seq2Seq),
        Method::Seq2SeqAttention => Some(ModelKind::Seq2SeqAttention),
        Method::SeasonalNaive | Method::ArLs => None,
    }
}

/// Substitutes the template and rejects anything that could escape `output_dir`.
fn checkpoint_relative(template: &str, state: &str, method: &str) -> Result<PathBuf> {
    let rel = PathBuf::from(template.replace("{state}", state).replace("{method}", method));
    let escapes = rel
        .components()
        .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
    if escapes || rel.as_os_str().is_empty() {
        return Err(Error::Config(format!(
            "config key `paths.checkpoint`: `{template}` must be a relative path inside output_dir"
        )));
    }
    Ok(rel)
}

/// File-name-safe version of a state label.
pub fn slug(state: &str) -> String {
    state
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// A validated configuration together with the directory paths resolve against.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn new(config: RunConfig, base: PathBuf) -> Result<Self> {
        config.validate()?;
        Ok(Loaded { config, base })
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ilicast::DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = RunConfig::from_json(&text)?;
        config.apply(overrides);
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Loaded::new(config, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.output_dir)
    }

    pub fn input_path(&self, key: &str, template: Option<&PathBuf>, state: Option<&str>) -> Result<PathBuf> {
        let t = template.ok_or_else(|| Error::Config(format!("config key `paths.{key}` is required")))?;
        let s = t.to_string_lossy();
        let filled = match state {
            Some(st) => s.replace("{state}", st),
            None if s.contains("{state}") => {
                return Err(Error::Config(format!(
                    "config key `paths.{key}` uses {{state}} but no state is set"
                )))
            }
            None => s.into_owned(),
        };
        Ok(self.resolve(Path::new(&filled)))
    }

    pub fn checkpoint_path(&self, state: &str, method: Method) -> Result<PathBuf> {
        let rel = checkpoint_relative(&self.config.paths.checkpoint, &slug(state), method.name())?;
        Ok(self.output_dir().join(rel))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(
            c.model.architecture(ModelKind::Seq2SeqAttention),
            Architecture::default()
        );
        c.validate().unwrap();
    }

    #[test]
    fn type_errors_name_the_key() {
        let e = RunConfig::from_json(r#"{"train": {"epochs": "ten"}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.epochs") && e.contains("expected usize"), "{e}");
        let e = RunConfig::from_json(r#"{"model": {"hidden": 3}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("hidden"), "{e}");
        let e = RunConfig::from_json(r#"{"methods": ["prophet"]}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("methods[0]"), "{e}");
    }

    #[test]
    fn flags_win_over_file() {
        let mut c = RunConfig::from_json(r#"{"train": {"seed": 3}, "states": ["A", "B"]}"#).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            state: Some("C".into()),
            ..Overrides::default()
        });
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.state_list(), vec![Some("C".to_string())]);
    }

    #[test]
    fn checkpoint_template_cannot_escape() {
        for bad in ["../x.ckpt", "/tmp/x.ckpt", "a/../../b"] {
            assert!(checkpoint_relative(bad, "s", "m").is_err(), "{bad}");
        }
        assert_eq!(
            checkpoint_relative("{state}/{method}.ckpt", "New_York", "seq2seq").unwrap(),
            PathBuf::from("New_York/seq2seq.ckpt")
        );
    }

    #[test]
    fn decoder_width_is_enforced() {
        let c = RunConfig::from_json(r#"{"model": {"decoder_hidden": 48}}"#).unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_json(r#"{"model": {"decoder_hidden": 48}, "methods": ["ar_ls"]}"#).unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods("all").unwrap(), Method::ALL.to_vec());
        assert_eq!(
            parse_methods("ar_ls, seasonal_naive").unwrap(),
            vec![Method::ArLs, Method::SeasonalNaive]
        );
        assert!(parse_methods("foo").is_err());
    }
}
