use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledCloud, Point, Split};
use crate::{Error, Result};

/// Raw dataset label → 1-based part id. Raw label 0 always maps to padding.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(pub BTreeMap<i64, usize>);

impl LabelMap {
    /// Ranks the distinct non-zero raw labels: the smallest becomes 1.
    pub fn from_raw(raw: &[i64]) -> LabelMap {
        let mut distinct: Vec<i64> = raw.iter().copied().filter(|&l| l != 0).collect();
        distinct.sort_unstable();
        distinct.dedup();
        LabelMap(distinct.into_iter().zip(1..).collect())
    }

    pub fn parts(&self) -> usize {
        self.0.values().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Use this mapping instead of ranking the file's own labels.
    pub label_map: Option<LabelMap>,
    /// Declared part count; mapped ids above it are rejected.
    pub parts: Option<usize>,
}

pub fn parse_points(text: &str) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut p = [0.0; 3];
        let mut toks = line.split_whitespace();
        for v in p.iter_mut() {
            let tok = toks.next().ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected 3 coordinates".into(),
            })?;
            *v = tok.parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("unparsable coordinate `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("non-finite coordinate `{tok}`"),
                });
            }
        }
        if toks.next().is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "more than 3 values on a point line".into(),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn parse_labels(text: &str) -> Result<Vec<i64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let tok = l.trim();
            tok.parse::<i64>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("unparsable label `{tok}`"),
            })
        })
        .collect()
}

/// Parses a `.pts`/`.seg` pair. Labels are remapped so dataset part ids
/// occupy `1..=k`; the mapping used is returned alongside the cloud.
pub fn load_labeled_cloud(
    points_src: &str,
    labels_src: &str,
    opts: &LoadOptions,
) -> Result<(LabeledCloud, LabelMap)> {
    let points = parse_points(points_src)?;
    let raw = parse_labels(labels_src)?;
    if points.len() != raw.len() {
        return Err(Error::CountMismatch {
            points: points.len(),
            labels: raw.len(),
        });
    }
    let map = opts.label_map.clone().unwrap_or_else(|| LabelMap::from_raw(&raw));
    let parts = opts.parts.unwrap_or_else(|| map.parts()).max(1);
    let mut labels = Vec::with_capacity(raw.len());
    for &r in &raw {
        let id = if r == 0 {
            0
        } else {
            *map.0.get(&r).ok_or(Error::InvalidLabel {
                label: r.max(0) as usize,
                parts,
            })?
        };
        if id > parts {
            return Err(Error::InvalidLabel { label: id, parts });
        }
        labels.push(id);
    }
    Ok((LabeledCloud::new(points, labels, parts)?, map))
}

/// Writes `bytes` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_cloud_json(path: &Path) -> Result<LabeledCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let c: LabeledCloud = serde_json::from_str(&text)?;
    c.validate()?;
    Ok(c)
}

pub fn write_cloud_json(path: &Path, cloud: &LabeledCloud) -> Result<()> {
    write_atomic(path, &serde_json::to_vec(cloud)?)
}

/// Writes `<base>.pts` and `<base>.seg`.
pub fn write_pts_seg(base: &Path, cloud: &LabeledCloud) -> Result<()> {
    let mut pts = String::new();
    let mut seg = String::new();
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        let _ = writeln!(pts, "{} {} {}", p[0], p[1], p[2]);
        let _ = writeln!(seg, "{l}");
    }
    write_atomic(&base.with_extension("pts"), pts.as_bytes())?;
    write_atomic(&base.with_extension("seg"), seg.as_bytes())
}

/// Reads a `.json` cloud, or a `.pts` file together with its `.seg` sibling.
pub fn read_cloud(path: &Path, opts: &LoadOptions) -> Result<LabeledCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pts") | Some("seg") => {
            let pts = path.with_extension("pts");
            let seg = path.with_extension("seg");
            let p = fs::read_to_string(&pts).map_err(|e| Error::io(&pts, e))?;
            let s = fs::read_to_string(&seg).map_err(|e| Error::io(&seg, e))?;
            Ok(load_labeled_cloud(&p, &s, opts)?.0)
        }
        _ => read_cloud_json(path),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// JSON cloud file, or a `.pts` file with a sibling `.seg`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    pub split: Split,
}

/// Dataset index: sample paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub category: String,
    pub parts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<LabelMap>,
    pub samples: Vec<ManifestEntry>,
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let opts = LoadOptions {
        label_map: m.label_map.clone(),
        parts: Some(m.parts),
    };
    let mut samples = Vec::with_capacity(m.samples.len());
    let mut splits = Vec::with_capacity(m.samples.len());
    for entry in &m.samples {
        let cloud = match (&entry.path, &entry.points, &entry.labels) {
            (Some(p), _, _) => read_cloud(&base.join(p), &opts)?,
            (None, Some(p), Some(l)) => {
                let (pp, lp) = (base.join(p), base.join(l));
                let ps = fs::read_to_string(&pp).map_err(|e| Error::io(&pp, e))?;
                let ls = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
                load_labeled_cloud(&ps, &ls, &opts)?.0
            }
            _ => {
                return Err(Error::Config(
                    "manifest entry needs `path` or `points` + `labels`".into(),
                ))
            }
        };
        samples.push(cloud);
        splits.push(entry.split);
    }
    let ds = Dataset {
        category: m.category,
        parts: m.parts,
        samples,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes every sample as `samples/NNNNN.json` under `dir` plus
/// `dir/manifest.json`. Returns the manifest path.
pub fn write_manifest(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, (s, split)) in dataset.samples.iter().zip(&dataset.splits).enumerate() {
        let rel = format!("samples/{i:05}.json");
        write_cloud_json(&dir.join(&rel), s)?;
        entries.push(ManifestEntry {
            path: Some(rel),
            points: None,
            labels: None,
            split: *split,
        });
    }
    let m = Manifest {
        category: dataset.category.clone(),
        parts: dataset.parts,
        label_map: None,
        samples: entries,
    };
    let path = dir.join("manifest.json");
    write_atomic(&path, &serde_json::to_vec_pretty(&m)?)?;
    Ok(path)
}
