//! Checkpoint file: a plain-text manifest, a `---` line, then the payload of
//! little-endian `f32` values. Each parameter stores its value, first and
//! second Adam moments back to back.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::config::parse_document;
use crate::diffcore::init::RngState;
use crate::diffcore::{Parameter, Tensor};
use crate::error::{Error, Result};
use crate::eval::MetricsRow;
use crate::train::{TrainConfig, TrainerState};

const MAGIC: &str = "pgn-checkpoint 1";
const PARAMS_MAGIC: &str = "pgn-params 1";
const SEPARATOR: &[u8] = b"\n---\n";

/// Everything needed to resume a run, plus the classifier it perturbs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub trainer: TrainerState,
    pub classifier: Vec<Parameter>,
}

/// `key = value` lines that parse back to the same configuration.
pub fn render_train_config(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", cfg.mode);
    let _ = writeln!(s, "loss = {}", cfg.loss);
    let _ = writeln!(s, "gamma = {}", cfg.gamma);
    let _ = writeln!(s, "lambda = {}", cfg.lambda);
    let _ = writeln!(s, "lr = {}", cfg.lr);
    let _ = writeln!(s, "epochs = {}", cfg.epochs);
    let _ = writeln!(s, "batch_size = {}", cfg.batch_size);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "access = {}", cfg.access.name());
    let _ = writeln!(s, "discriminator_init = {}", cfg.discriminator_init);
    let _ = writeln!(s, "discriminator_trunk = {}", cfg.discriminator_trunk);
    let _ = writeln!(s, "normalization = {}", cfg.normalization.name());
    let _ = writeln!(s, "zero_init_generator = {}", cfg.zero_init_generator);
    s
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:?}"))
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{MAGIC}");
    for line in render_train_config(&ck.config).lines() {
        let _ = writeln!(manifest, "config {line}");
    }
    let rng = &ck.trainer.shuffle;
    let _ = writeln!(
        manifest,
        "rng {} {} {}",
        hex(&rng.seed),
        rng.stream,
        rng.word_pos
    );
    let _ = writeln!(manifest, "epoch {}", ck.trainer.epoch);
    for r in &ck.trainer.rows {
        let _ = writeln!(
            manifest,
            "row {} {:?} {:?} {:?} {:?} {} {} {}",
            r.epoch,
            r.l_d,
            r.l_g,
            r.l_r,
            r.top1,
            opt(r.map),
            r.pos,
            r.neg
        );
    }
    let groups = [
        ("generator", &ck.trainer.generator[..]),
        ("discriminator", &ck.trainer.discriminator[..]),
        ("classifier", &ck.classifier[..]),
    ];
    write_bundle(path, manifest, &groups)
}

/// Appends `param` lines and the float count to `manifest`, then writes the
/// file atomically.
fn write_bundle(path: &Path, mut manifest: String, groups: &[(&str, &[Parameter])]) -> Result<()> {
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for &(net, params) in groups {
        for p in params {
            if p.name.contains(char::is_whitespace) {
                return Err(Error::contract(
                    "data-io",
                    format!("parameter name `{}` contains whitespace", p.name),
                ));
            }
            let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(
                manifest,
                "param {net} {} {} {} {} {offset}",
                p.name,
                dims.join("x"),
                p.trainable,
                p.step_count
            );
            for t in [&p.value, &p.adam_m, &p.adam_v] {
                for &v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
            offset += 3 * p.value.len();
        }
    }
    let _ = writeln!(manifest, "floats {offset}");
    let mut bytes = manifest.trim_end().as_bytes().to_vec();
    bytes.extend_from_slice(SEPARATOR);
    bytes.extend_from_slice(&payload);

    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parameters grouped by network, plus the manifest lines other than
/// `param` and `floats`.
struct Bundle {
    lines: Vec<String>,
    groups: Vec<(String, Parameter)>,
}

fn read_bundle(path: &Path, magic: &str) -> Result<Bundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    let split = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| corrupt("no manifest separator".into()))?;
    let manifest = std::str::from_utf8(&bytes[..split])
        .map_err(|_| corrupt("manifest is not UTF-8".into()))?;
    let payload = &bytes[split + SEPARATOR.len()..];

    let mut lines = manifest.lines();
    if lines.next() != Some(magic) {
        return Err(corrupt("missing magic line".into()));
    }
    let mut other = Vec::new();
    let mut floats = None;
    let mut params: Vec<(String, String, Vec<usize>, bool, u64, usize)> = Vec::new();
    for line in lines {
        let bad = || corrupt(format!("malformed line `{line}`"));
        let (tag, rest) = line.split_once(' ').ok_or_else(bad)?;
        let w: Vec<&str> = rest.split_whitespace().collect();
        match tag {
            "param" if w.len() == 6 => {
                let shape: Vec<usize> = w[2]
                    .split('x')
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                params.push((
                    w[0].to_string(),
                    w[1].to_string(),
                    shape,
                    w[3].parse().map_err(|_| bad())?,
                    w[4].parse().map_err(|_| bad())?,
                    w[5].parse().map_err(|_| bad())?,
                ));
            }
            "floats" if w.len() == 1 => floats = Some(w[0].parse::<usize>().map_err(|_| bad())?),
            "param" | "floats" => return Err(bad()),
            _ => other.push(line.to_string()),
        }
    }
    let floats = floats.ok_or_else(|| corrupt("missing float count".into()))?;
    if payload.len() != 4 * floats {
        return Err(corrupt(format!(
            "payload holds {} bytes, manifest expects {}",
            payload.len(),
            4 * floats
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    let mut groups = Vec::new();
    for (net, name, shape, trainable, steps, offset) in params {
        let count: usize = shape.iter().product();
        if offset + 3 * count > values.len() {
            return Err(corrupt(format!("{name} runs past the payload")));
        }
        let take = |k: usize| {
            Tensor::new(
                shape.clone(),
                values[offset + k * count..offset + (k + 1) * count].to_vec(),
            )
        };
        let p = Parameter {
            gradient: Tensor::zeros(&shape),
            value: take(0).map_err(|e| corrupt(format!("{name}: {e}")))?,
            adam_m: take(1).map_err(|e| corrupt(format!("{name}: {e}")))?,
            adam_v: take(2).map_err(|e| corrupt(format!("{name}: {e}")))?,
            name,
            step_count: steps,
            trainable,
        };
        groups.push((net, p));
    }
    Ok(Bundle {
        lines: other,
        groups,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bundle = read_bundle(path, MAGIC)?;
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut config_text = String::new();
    let mut rng = None;
    let mut epoch = None;
    let mut rows = Vec::new();
    for line in &bundle.lines {
        let bad = || corrupt(format!("malformed line `{line}`"));
        let (tag, rest) = line.split_once(' ').ok_or_else(bad)?;
        let w: Vec<&str> = rest.split_whitespace().collect();
        match tag {
            "config" => {
                config_text.push_str(rest);
                config_text.push('\n');
            }
            "rng" if w.len() == 3 => {
                let seed: [u8; 32] = unhex(w[0])
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(bad)?;
                rng = Some(RngState {
                    seed,
                    stream: w[1].parse().map_err(|_| bad())?,
                    word_pos: w[2].parse().map_err(|_| bad())?,
                });
            }
            "epoch" if w.len() == 1 => epoch = Some(w[0].parse().map_err(|_| bad())?),
            "row" if w.len() == 8 => {
                let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
                let u = |s: &str| s.parse::<usize>().map_err(|_| bad());
                rows.push(MetricsRow {
                    epoch: u(w[0])?,
                    l_d: f(w[1])?,
                    l_g: f(w[2])?,
                    l_r: f(w[3])?,
                    top1: f(w[4])?,
                    map: if w[5] == "NA" { None } else { Some(f(w[5])?) },
                    pos: u(w[6])?,
                    neg: u(w[7])?,
                });
            }
            _ => return Err(bad()),
        }
    }
    let config = parse_document(&config_text)
        .and_then(|d| d.train_config())
        .map_err(|e| corrupt(format!("config snapshot: {e}")))?;

    let (mut gen, mut disc, mut cls) = (Vec::new(), Vec::new(), Vec::new());
    for (net, p) in bundle.groups {
        match net.as_str() {
            "generator" => gen.push(p),
            "discriminator" => disc.push(p),
            "classifier" => cls.push(p),
            other => return Err(corrupt(format!("unknown network `{other}`"))),
        }
    }
    Ok(Checkpoint {
        config,
        trainer: TrainerState {
            generator: gen,
            discriminator: disc,
            shuffle: rng.ok_or_else(|| corrupt("missing rng state".into()))?,
            epoch: epoch.ok_or_else(|| corrupt("missing epoch".into()))?,
            rows,
        },
        classifier: cls,
    })
}

/// Stores one network's parameters, e.g. a trained classifier.
pub fn save_parameters(path: &Path, params: &[Parameter]) -> Result<()> {
    write_bundle(path, format!("{PARAMS_MAGIC}\n"), &[("network", params)])
}

pub fn load_parameters(path: &Path) -> Result<Vec<Parameter>> {
    let bundle = read_bundle(path, PARAMS_MAGIC)?;
    if let Some(line) = bundle.lines.first() {
        return Err(Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: format!("unexpected line `{line}`"),
        });
    }
    Ok(bundle.groups.into_iter().map(|(_, p)| p).collect())
}
