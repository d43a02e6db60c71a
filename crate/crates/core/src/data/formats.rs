//! Two on-disk dataset layouts.
//!
//! `idx_binary`: per split, `<split>-images.idx` (magic `0x00000D04`, four
//! big-endian `u32` dims, big-endian `f32` pixels) and `<split>-labels.idx`
//! (magic `0x00000801`, one `u32` dim, `u8` labels).
//!
//! `raw_tensor_dir`: `manifest.txt` with one `<split> N C H W` line per split
//! plus a `classes K` line, and `<split>.bin` holding little-endian `f32`
//! pixels followed by little-endian `u32` labels.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Dataset, Normalization, Split};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const IDX_F32_4D: u32 = 0x0000_0D04;
const IDX_U8_1D: u32 = 0x0000_0801;
const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    IdxBinary,
    RawTensorDir,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx_binary" | "idx" => Ok(Format::IdxBinary),
            "raw_tensor_dir" | "raw" => Ok(Format::RawTensorDir),
            _ => Err(Error::TypeMismatch {
                key: "format".into(),
                expected: "idx_binary or raw_tensor_dir",
                value: s.into(),
            }),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn header(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads `split` from the directory `dir`. Labels must be below `classes`.
pub fn load_dataset(dir: &Path, split: Split, format: Format, classes: usize) -> Result<Dataset> {
    let (images, labels, classes, label_path) = match format {
        Format::IdxBinary => {
            let (images, labels, path) = load_idx(dir, split)?;
            (images, labels, classes, path)
        }
        Format::RawTensorDir => load_raw(dir, split, classes)?,
    };
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            path: label_path,
            label: bad,
            classes,
        });
    }
    Dataset::new(images, labels, classes, split, Normalization::Vanilla01)
}

/// Writes `ds` under `dir`, creating it if needed. Only vanilla data is stored.
pub fn save_dataset(ds: &Dataset, dir: &Path, format: Format) -> Result<()> {
    if ds.normalization() != &Normalization::Vanilla01 {
        return Err(Error::contract(
            "data-io",
            "only vanilla [0, 1] datasets are saved",
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        Format::IdxBinary => save_idx(ds, dir),
        Format::RawTensorDir => save_raw(ds, dir),
    }
}

fn idx_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{split}-images.idx")),
        dir.join(format!("{split}-labels.idx")),
    )
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn load_idx(dir: &Path, split: Split) -> Result<(Tensor, Vec<usize>, PathBuf)> {
    let (ip, lp) = idx_paths(dir, split);
    let bytes = read(&ip)?;
    if bytes.len() < 20 {
        return Err(header(
            &ip,
            format!("{} bytes is shorter than the 20-byte header", bytes.len()),
        ));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IDX_F32_4D {
        return Err(header(
            &ip,
            format!("magic {magic:#010x}, expected {IDX_F32_4D:#010x}"),
        ));
    }
    let shape: Vec<usize> = (0..4).map(|i| be_u32(&bytes, 4 + 4 * i) as usize).collect();
    if shape.contains(&0) {
        return Err(header(&ip, format!("zero dimension in {shape:?}")));
    }
    let count: usize = shape.iter().product();
    let expected = 20 + 4 * count;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: ip,
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_be_bytes(c.try_into().expect("four bytes")))
        .collect();
    let images = Tensor::new(shape.clone(), data)?;

    let lbytes = read(&lp)?;
    if lbytes.len() < 8 {
        return Err(header(
            &lp,
            format!("{} bytes is shorter than the 8-byte header", lbytes.len()),
        ));
    }
    let magic = be_u32(&lbytes, 0);
    if magic != IDX_U8_1D {
        return Err(header(
            &lp,
            format!("magic {magic:#010x}, expected {IDX_U8_1D:#010x}"),
        ));
    }
    let n = be_u32(&lbytes, 4) as usize;
    if n != shape[0] {
        return Err(header(&lp, format!("{n} labels for {} images", shape[0])));
    }
    if lbytes.len() != 8 + n {
        return Err(Error::Truncated {
            path: lp,
            expected: 8 + n,
            found: lbytes.len(),
        });
    }
    Ok((
        images,
        lbytes[8..].iter().map(|&b| b as usize).collect(),
        lp,
    ))
}

fn save_idx(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.classes() > 256 {
        return Err(Error::contract("data-io", "idx labels are single bytes"));
    }
    let (ip, lp) = idx_paths(dir, ds.split());
    let mut bytes = Vec::with_capacity(20 + 4 * ds.images().len());
    bytes.extend_from_slice(&IDX_F32_4D.to_be_bytes());
    for &d in ds.images().shape() {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in ds.images().data() {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    write(&ip, &bytes)?;
    let mut lbytes = Vec::with_capacity(8 + ds.len());
    lbytes.extend_from_slice(&IDX_U8_1D.to_be_bytes());
    lbytes.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lbytes.extend(ds.labels().iter().map(|&l| l as u8));
    write(&lp, &lbytes)
}

/// Parsed `manifest.txt`: split shapes and the class count.
#[derive(Default)]
struct Manifest {
    classes: Option<usize>,
    splits: BTreeMap<String, Vec<usize>>,
}

impl Manifest {
    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let mut words = line.split_whitespace();
            let key = words.next().expect("nonempty line");
            let nums: Vec<usize> = words
                .map(|w| {
                    w.parse()
                        .map_err(|_| header(path, format!("`{w}` is not a count in `{line}`")))
                })
                .collect::<Result<_>>()?;
            match (key, nums.len()) {
                ("classes", 1) => m.classes = Some(nums[0]),
                (split, 4) => {
                    Split::from_str(split)
                        .map_err(|_| header(path, format!("unknown split `{split}`")))?;
                    m.splits.insert(split.to_string(), nums);
                }
                _ => return Err(header(path, format!("malformed line `{line}`"))),
            }
        }
        Ok(m)
    }

    fn render(&self) -> String {
        let mut s = String::new();
        if let Some(k) = self.classes {
            s.push_str(&format!("classes {k}\n"));
        }
        for (split, d) in &self.splits {
            s.push_str(&format!("{split} {} {} {} {}\n", d[0], d[1], d[2], d[3]));
        }
        s
    }
}

fn load_raw(
    dir: &Path,
    split: Split,
    classes: usize,
) -> Result<(Tensor, Vec<usize>, usize, PathBuf)> {
    let mp = dir.join(MANIFEST);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest = Manifest::parse(&mp, &text)?;
    let shape = manifest
        .splits
        .get(split.name())
        .ok_or_else(|| header(&mp, format!("no `{split}` entry")))?;
    if shape.contains(&0) {
        return Err(header(&mp, format!("zero dimension in {shape:?}")));
    }
    let classes = manifest.classes.unwrap_or(classes);
    let bp = dir.join(format!("{split}.bin"));
    let bytes = read(&bp)?;
    let count: usize = shape.iter().product();
    let expected = 4 * count + 4 * shape[0];
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: bp,
            expected,
            found: bytes.len(),
        });
    }
    let (pix, lab) = bytes.split_at(4 * count);
    let data = pix
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    let labels = lab
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("four bytes")) as usize)
        .collect();
    Ok((Tensor::new(shape.clone(), data)?, labels, classes, bp))
}

fn save_raw(ds: &Dataset, dir: &Path) -> Result<()> {
    let mp = dir.join(MANIFEST);
    let mut manifest = match fs::read_to_string(&mp) {
        Ok(text) => Manifest::parse(&mp, &text)?,
        Err(_) => Manifest::default(),
    };
    manifest.classes = Some(ds.classes());
    manifest
        .splits
        .insert(ds.split().name().into(), ds.images().shape().to_vec());
    let mut bytes = Vec::with_capacity(4 * (ds.images().len() + ds.len()));
    for &v in ds.images().data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &l in ds.labels() {
        bytes.extend_from_slice(&(l as u32).to_le_bytes());
    }
    write(&dir.join(format!("{}.bin", ds.split())), &bytes)?;
    write(&mp, manifest.render().as_bytes())
}
