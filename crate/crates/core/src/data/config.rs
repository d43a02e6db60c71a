//! Flat `key = value` configuration with `#` comments and `[section]` headers.
//!
//! Keys before any header, or under `[train]`, configure the perturbation
//! run. `[classifier]` and `[data]` configure pretraining and the synthetic
//! dataset. `[network.<name>]` sections describe architectures through a
//! `layers` key such as `conv 16 3 1 1 relu; pool 2; gpool; dense 10`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::NormalizationMode;
use crate::error::{Error, Result};
use crate::models::{Activation, Layer, NetworkSpec, OutputKind};
use crate::train::{
    default_gamma, ClassifierOptions, DiscriminatorInitKind, LossVariant, Mode, TrainConfig,
    TrunkMode, CLASSIFIER_LR,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    Bool,
    Text,
    Mode,
    Loss,
    Access,
    Init,
    Trunk,
    Norm,
    Output,
    Layers,
    Shape,
}

const TRAIN_KEYS: &[(&str, Kind)] = &[
    ("mode", Kind::Mode),
    ("loss", Kind::Loss),
    ("gamma", Kind::Float),
    ("lambda", Kind::Float),
    ("lr", Kind::Float),
    ("epochs", Kind::Int),
    ("batch_size", Kind::Int),
    ("seed", Kind::Int),
    ("access", Kind::Access),
    ("discriminator_init", Kind::Init),
    ("discriminator_trunk", Kind::Trunk),
    ("normalization", Kind::Norm),
    ("zero_init_generator", Kind::Bool),
];

const CLASSIFIER_KEYS: &[(&str, Kind)] = &[
    ("lr", Kind::Float),
    ("epochs", Kind::Int),
    ("batch_size", Kind::Int),
    ("seed", Kind::Int),
    ("stop_at", Kind::Float),
];

const DATA_KEYS: &[(&str, Kind)] = &[
    ("train_size", Kind::Int),
    ("val_size", Kind::Int),
    ("test_size", Kind::Int),
    ("seed", Kind::Int),
    ("noise", Kind::Float),
    ("dir", Kind::Text),
    ("format", Kind::Text),
    ("classes", Kind::Int),
];

const NETWORK_KEYS: &[(&str, Kind)] = &[
    ("input", Kind::Shape),
    ("output", Kind::Output),
    ("layers", Kind::Layers),
];

fn schema(section: &str) -> Option<&'static [(&'static str, Kind)]> {
    match section {
        "train" => Some(TRAIN_KEYS),
        "classifier" => Some(CLASSIFIER_KEYS),
        "data" => Some(DATA_KEYS),
        s if s.strip_prefix("network.").is_some_and(|n| !n.is_empty()) => Some(NETWORK_KEYS),
        _ => None,
    }
}

fn expected(kind: Kind) -> &'static str {
    match kind {
        Kind::Float => "a number",
        Kind::Int => "a non-negative integer",
        Kind::Bool => "true or false",
        Kind::Text => "text",
        Kind::Mode => "enhance or adversarial",
        Kind::Loss => "ls or ce",
        Kind::Access => "white_box or black_box",
        Kind::Init => "from_classifier_trunk or fresh",
        Kind::Trunk => "frozen or trainable",
        Kind::Norm => "vanilla_01 or zero_mean_unit_var",
        Kind::Output => "logits <K>, probability or image",
        Kind::Layers => "a `;`-separated layer list",
        Kind::Shape => "C H W",
    }
}

fn check(key: &str, kind: Kind, value: &str) -> Result<()> {
    let ok = match kind {
        Kind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Bool => value.parse::<bool>().is_ok(),
        Kind::Text => true,
        Kind::Mode => value.parse::<Mode>().is_ok(),
        Kind::Loss => value.parse::<LossVariant>().is_ok(),
        Kind::Access => parse_access(value).is_some(),
        Kind::Init => value.parse::<DiscriminatorInitKind>().is_ok(),
        Kind::Trunk => value.parse::<TrunkMode>().is_ok(),
        Kind::Norm => value.parse::<NormalizationMode>().is_ok(),
        Kind::Output => parse_output(value).is_some(),
        Kind::Shape => parse_shape(value).is_some(),
        Kind::Layers => return parse_layers(value).map(|_| ()),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::TypeMismatch {
            key: key.into(),
            expected: expected(kind),
            value: value.into(),
        })
    }
}

fn parse_access(v: &str) -> Option<crate::models::AccessPolicy> {
    use crate::models::AccessPolicy::*;
    match v {
        "white_box" => Some(WhiteBoxLogits),
        "black_box" => Some(BlackBoxLabels),
        _ => None,
    }
}

fn parse_output(v: &str) -> Option<OutputKind> {
    let words: Vec<&str> = v.split_whitespace().collect();
    match words.as_slice() {
        ["logits", k] => k
            .parse()
            .ok()
            .filter(|&k: &usize| k > 0)
            .map(OutputKind::Logits),
        ["probability"] => Some(OutputKind::Probability),
        ["image"] => Some(OutputKind::Image),
        _ => None,
    }
}

fn parse_shape(v: &str) -> Option<(usize, usize, usize)> {
    let nums: Vec<usize> = v
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    match nums.as_slice() {
        &[c, h, w] if c > 0 && h > 0 && w > 0 => Some((c, h, w)),
        _ => None,
    }
}

/// `conv|deconv OUT K STRIDE PAD [act]`, `pool K`, `gpool`, `flatten`,
/// `dense OUT [act]`, separated by `;`.
pub fn parse_layers(v: &str) -> Result<Vec<Layer>> {
    let bad = |item: &str, why: &str| Error::TypeMismatch {
        key: "layers".into(),
        expected: "a `;`-separated layer list",
        value: format!("{item} ({why})"),
    };
    let mut layers = Vec::new();
    for item in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let words: Vec<&str> = item.split_whitespace().collect();
        let (name, rest) = words.split_first().expect("nonempty item");
        let mut nums = Vec::new();
        let mut act = Activation::Linear;
        for (i, w) in rest.iter().enumerate() {
            match *w {
                "relu" | "sigmoid" | "linear" if i == rest.len() - 1 => {
                    act = match *w {
                        "relu" => Activation::Relu,
                        "sigmoid" => Activation::Sigmoid,
                        _ => Activation::Linear,
                    }
                }
                w => nums.push(
                    w.parse::<usize>()
                        .map_err(|_| bad(item, "expected a count"))?,
                ),
            }
        }
        let layer = match (*name, nums.as_slice()) {
            ("conv", &[o, k, s, p]) => Layer::conv(o, k, s, p, act),
            ("deconv", &[o, k, s, p]) => Layer::deconv(o, k, s, p, act),
            ("dense", &[o]) => Layer::dense(o, act),
            ("pool", &[k]) => Layer::pool(k),
            ("gpool", &[]) => Layer::global_pool(),
            ("flatten", &[]) => Layer::flatten(),
            _ => return Err(bad(item, "unknown layer or wrong argument count")),
        };
        layers.push(layer);
    }
    if layers.is_empty() {
        return Err(bad(v, "no layers"));
    }
    Ok(layers)
}

/// A syntactically valid, schema-checked configuration document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

/// Parses configuration text. Every key is checked against its section's
/// schema and its value against the key's type.
pub fn parse_document(text: &str) -> Result<Document> {
    let mut doc = Document::default();
    let mut section = "train".to_string();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner.strip_suffix(']').map(str::trim).ok_or_else(|| {
                Error::Config(format!(
                    "line {}: unterminated section header `{line}`",
                    n + 1
                ))
            })?;
            if schema(name).is_none() {
                return Err(Error::Config(format!(
                    "line {}: unknown section `[{name}]`",
                    n + 1
                )));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                n + 1
            ))
        })?;
        doc.set(&section, key.trim(), value.trim())?;
    }
    Ok(doc)
}

/// Reads and parses a configuration file.
pub fn read_document(path: &Path) -> Result<Document> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_document(&text)
}

/// Resolved run configuration: the perturbation run plus any architectures.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub networks: BTreeMap<String, NetworkSpec>,
}

/// Reads a configuration file and resolves the perturbation run. `mode` is
/// required; everything else has a default.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let doc = read_document(path)?;
    Ok(RunConfig {
        train: doc.train_config()?,
        networks: doc.network_specs()?,
    })
}

/// Synthetic-data settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DataOptions {
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub noise: Option<f32>,
    pub dir: Option<String>,
    pub format: Option<String>,
    pub classes: usize,
}

impl Document {
    /// Sets `key` in `section`, validating both.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let keys = schema(section)
            .ok_or_else(|| Error::Config(format!("unknown section `[{section}]`")))?;
        let kind = keys
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, kind)| *kind)
            .ok_or_else(|| Error::UnknownKey { key: key.into() })?;
        check(key, kind, value)?;
        self.sections
            .entry(section.into())
            .or_default()
            .insert(key.into(), value.into());
        Ok(())
    }

    /// Applies a `key=value` override; `section.key` addresses other sections.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
        let key = key.trim();
        let (section, key) = match key.rsplit_once('.') {
            Some((s, k)) => (s, k),
            None => ("train", key),
        };
        self.set(section, key, value.trim())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, section: &str, key: &str) -> Option<T> {
        // Values were type-checked on insertion.
        self.get(section, key)
            .map(|v| v.parse().ok().expect("validated on insertion"))
    }

    /// Every `section.key = value`, sorted; enough to rebuild the document.
    pub fn entries(&self) -> Vec<(String, String, String)> {
        self.sections
            .iter()
            .flat_map(|(s, kv)| {
                kv.iter()
                    .map(move |(k, v)| (s.clone(), k.clone(), v.clone()))
            })
            .collect()
    }

    /// Configuration text that parses back to this document.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (section, kv) in &self.sections {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in kv {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mode: Mode = self
            .parsed("train", "mode")
            .ok_or_else(|| Error::MissingField {
                field: "mode".into(),
            })?;
        let loss = self
            .parsed("train", "loss")
            .unwrap_or(LossVariant::LeastSquares);
        let mut cfg = TrainConfig::new(mode, loss);
        if self.get("train", "access").and_then(parse_access)
            == Some(crate::models::AccessPolicy::BlackBoxLabels)
        {
            cfg = cfg.black_box();
        }
        cfg.gamma = self.parsed("train", "gamma").unwrap_or(default_gamma(mode));
        cfg.lambda = self.parsed("train", "lambda").unwrap_or(cfg.lambda);
        cfg.lr = self.parsed("train", "lr").unwrap_or(cfg.lr);
        cfg.epochs = self.parsed("train", "epochs").unwrap_or(cfg.epochs);
        cfg.batch_size = self.parsed("train", "batch_size").unwrap_or(cfg.batch_size);
        cfg.seed = self.parsed("train", "seed").unwrap_or(cfg.seed);
        cfg.discriminator_init = self
            .parsed("train", "discriminator_init")
            .unwrap_or(cfg.discriminator_init);
        cfg.discriminator_trunk = self
            .parsed("train", "discriminator_trunk")
            .unwrap_or(cfg.discriminator_trunk);
        cfg.normalization = self
            .parsed("train", "normalization")
            .unwrap_or(cfg.normalization);
        cfg.zero_init_generator = self
            .parsed("train", "zero_init_generator")
            .unwrap_or(cfg.zero_init_generator);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Classifier pretraining options; `epochs` defaults to `default_epochs`.
    pub fn classifier_options(&self, default_epochs: usize) -> Result<ClassifierOptions> {
        let mut o = ClassifierOptions::new(default_epochs, 0);
        o.lr = self.parsed("classifier", "lr").unwrap_or(CLASSIFIER_LR);
        o.epochs = self
            .parsed("classifier", "epochs")
            .unwrap_or(default_epochs);
        o.batch_size = self
            .parsed("classifier", "batch_size")
            .unwrap_or(o.batch_size);
        o.seed = self.parsed("classifier", "seed").unwrap_or(0);
        o.stop_at = self.parsed("classifier", "stop_at");
        if !(o.lr > 0.0) || o.epochs == 0 || o.batch_size == 0 {
            return Err(Error::Config(
                "classifier lr, epochs and batch_size must be positive".into(),
            ));
        }
        Ok(o)
    }

    pub fn data_options(&self) -> DataOptions {
        DataOptions {
            train_size: self.parsed("data", "train_size").unwrap_or(1000),
            val_size: self.parsed("data", "val_size").unwrap_or(500),
            test_size: self.parsed("data", "test_size").unwrap_or(500),
            seed: self.parsed("data", "seed").unwrap_or(0),
            noise: self.parsed("data", "noise"),
            dir: self.get("data", "dir").map(String::from),
            format: self.get("data", "format").map(String::from),
            classes: self
                .parsed("data", "classes")
                .unwrap_or(crate::data::synthetic::CLASSES),
        }
    }

    /// Architectures from `[network.<name>]` sections, each validated.
    pub fn network_specs(&self) -> Result<BTreeMap<String, NetworkSpec>> {
        let mut out = BTreeMap::new();
        for (section, kv) in &self.sections {
            let Some(name) = section.strip_prefix("network.") else {
                continue;
            };
            let field = |k: &str| {
                kv.get(k).ok_or_else(|| Error::MissingField {
                    field: format!("{section}.{k}"),
                })
            };
            let spec = NetworkSpec {
                name: name.into(),
                input: parse_shape(field("input")?).expect("validated on insertion"),
                layers: parse_layers(field("layers")?)?,
                output: parse_output(field("output")?).expect("validated on insertion"),
            };
            spec.validate()?;
            out.insert(name.to_string(), spec);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_only_document_gets_defaults() {
        let cfg = parse_document("mode = enhance\n")
            .unwrap()
            .train_config()
            .unwrap();
        assert_eq!(
            (cfg.lr, cfg.epochs, cfg.lambda, cfg.gamma),
            (1e-4, 20, 1.0, 1e-4)
        );
        let adv = parse_document("[train]\nmode = adversarial # comment\n")
            .unwrap()
            .train_config()
            .unwrap();
        assert_eq!(adv.gamma, 3.0);
    }

    #[test]
    fn errors_are_named() {
        assert!(
            matches!(parse_document("foo = 1"), Err(Error::UnknownKey { key }) if key == "foo")
        );
        assert!(matches!(
            parse_document("epochs = many"),
            Err(Error::TypeMismatch { key, .. }) if key == "epochs"
        ));
        assert!(
            matches!(parse_document("").unwrap().train_config(), Err(Error::MissingField { field }) if field == "mode")
        );
        assert!(matches!(
            parse_document("mode = enhance\ngamma = -1")
                .unwrap()
                .train_config(),
            Err(Error::Config(_))
        ));
        assert!(parse_document("[nowhere]").is_err());
        assert!(parse_document("[train").is_err());
        assert!(parse_document("just words").is_err());
    }

    #[test]
    fn overrides_and_sections() {
        let mut doc = parse_document("mode = enhance\n[classifier]\nepochs = 3\n").unwrap();
        doc.apply_override("gamma=0.5").unwrap();
        doc.apply_override("classifier.stop_at = 0.65").unwrap();
        assert_eq!(doc.train_config().unwrap().gamma, 0.5);
        let c = doc.classifier_options(10).unwrap();
        assert_eq!((c.epochs, c.stop_at), (3, Some(0.65)));
        assert!(matches!(
            doc.apply_override("data.bogus=1"),
            Err(Error::UnknownKey { .. })
        ));
    }

    #[test]
    fn black_box_access_switches_discriminator() {
        let cfg = parse_document("mode = adversarial\naccess = black_box")
            .unwrap()
            .train_config()
            .unwrap();
        assert_eq!(cfg.discriminator_init, DiscriminatorInitKind::Fresh);
    }

    #[test]
    fn network_sections_parse_and_validate() {
        let doc = parse_document(
            "[network.tiny]\ninput = 3 8 8\noutput = logits 4\nlayers = conv 8 3 1 1 relu; pool 2; gpool; dense 4\n",
        )
        .unwrap();
        let specs = doc.network_specs().unwrap();
        assert_eq!(specs["tiny"].layers.len(), 4);
        assert!(parse_document("[network.x]\nlayers = warp 3").is_err());
        let bad = parse_document(
            "[network.y]\ninput = 3 8 8\noutput = logits 5\nlayers = gpool; dense 4",
        )
        .unwrap();
        assert!(matches!(bad.network_specs(), Err(Error::Spec(_))));
    }

    #[test]
    fn render_parses_back() {
        let doc = parse_document(
            "mode = enhance\nloss = ce\n[data]\ntrain_size = 64\n[network.tiny]\ninput = 3 8 8\noutput = logits 4\nlayers = gpool; dense 4\n",
        )
        .unwrap();
        assert_eq!(parse_document(&doc.render()).unwrap(), doc);
    }
}
