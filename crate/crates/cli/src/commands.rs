use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Serialize;

use lpm_client::Client;
use lpm_core::distances::{chamfer, DistanceKind};
use lpm_core::edit::{ComposeSource, EditOp};
use lpm_core::generative::{GanConfig, GanObjective, HeadKind, LatentGan, VaeConfig};
use lpm_core::metrics::{tmd, MetricReport, DEFAULT_GRID};
use lpm_core::model::{train_with, LpmModel, ModelConfig, TrainConfig};
use lpm_core::pointcloud::{
    load_manifest, read_cloud, split_dataset, write_atomic, write_cloud_json, write_manifest, write_pts_seg, Dataset,
    LabeledCloud, LoadOptions, Point, Split, SynthSpec, normalize,
};
use lpm_core::wire::{GenMethod, GenerateRequest, WireCloud};
use lpm_service::{AppState, ServerHandle, ServiceConfig};

use crate::config::RunConfig;

pub fn dispatch(cfg: RunConfig) -> Result<()> {
    match cfg.raw("command") {
        Some("synth") => synth(cfg),
        Some("train") => train(cfg),
        Some("edit") => edit(cfg),
        Some("generate") => generate(cfg),
        Some("eval") => eval(cfg),
        Some("serve") => serve(cfg),
        other => bail!("unknown command {other:?}"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

/// Records the resolved settings next to the outputs.
fn record(cfg: &RunConfig, out: &Path) -> Result<()> {
    let name = cfg.raw("command").unwrap_or("run");
    Ok(write_atomic(&out.join(format!("{name}.config")), cfg.render().as_bytes())?)
}

fn existing(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    let p = cfg.path(key)?;
    ensure!(p.exists(), "{key} `{}` does not exist", p.display());
    Ok(p)
}

fn existing_opt(cfg: &RunConfig, key: &str) -> Result<Option<PathBuf>> {
    match cfg.raw(key) {
        None => Ok(None),
        Some(_) => existing(cfg, key).map(Some),
    }
}

/// The manifest at `key`, normalized when `normalize` is set.
fn load_data(cfg: &mut RunConfig, key: &str) -> Result<Dataset> {
    let mut data = load_manifest(&existing(cfg, key)?)?;
    if cfg.get("normalize", false)? {
        for c in &mut data.samples {
            *c = normalize(c)?.0;
        }
    }
    Ok(data)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn synth(mut cfg: RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let seed = cfg.get("seed", 0u64)?;
    let mut spec = match existing_opt(&cfg, "spec")? {
        Some(p) => serde_json::from_str::<SynthSpec>(&std::fs::read_to_string(&p)?)
            .with_context(|| format!("parsing shape spec {}", p.display()))?,
        None => SynthSpec::chair(256, seed),
    };
    spec.points = cfg.get("points", spec.points)?;
    spec.seed = seed;
    let count = cfg.get("count", 640usize)?;
    let ratios: Vec<f64> = cfg.list("split", &[0.8, 0.1, 0.1])?;
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| anyhow!("split needs three ratios (train, val, test)"))?;
    let all = spec.generate(count)?;
    let (tr, va, te) = split_dataset(&all, ratios, seed)?;
    let mut samples = tr.samples;
    let mut splits = tr.splits;
    for part in [va, te] {
        samples.extend(part.samples);
        splits.extend(part.splits);
    }
    let ds = Dataset {
        category: all.category,
        parts: all.parts,
        samples,
        splits,
    };
    let manifest = write_manifest(&out, &ds)?;
    record(&cfg, &out)?;
    println!("wrote {} samples to {}", ds.len(), manifest.display());
    Ok(())
}

fn model_config(cfg: &mut RunConfig, parts: usize) -> Result<ModelConfig> {
    let base = ModelConfig::desk(parts);
    Ok(ModelConfig {
        feature_size: cfg.get("feature-size", base.feature_size)?,
        parts,
        points: cfg.get("points", base.points)?,
        pooling: cfg.named("pooling", "max")?,
        batch_norm: cfg.get("batch-norm", base.batch_norm)?,
        segmentation: cfg.named("segmentation", "joint")?,
        label_source: cfg.named("label-source", "given")?,
        encoder_hidden: cfg.list("encoder-hidden", &base.encoder_hidden)?,
        seg_hidden: cfg.list("seg-hidden", &base.seg_hidden)?,
        decoder_hidden: cfg.list("decoder-hidden", &base.decoder_hidden)?,
        vae: cfg.opt::<f64>("beta")?.map(|beta| VaeConfig { beta }),
    })
}

/// Settings a loaded checkpoint fixes; conflicting explicit values fail.
fn check_against(cfg: &mut RunConfig, model: &LpmModel) -> Result<()> {
    let c = model.config();
    for (key, have) in [("feature-size", c.feature_size), ("points", c.points), ("parts", c.parts)] {
        if let Some(want) = cfg.opt::<usize>(key)? {
            ensure!(want == have, "{key} {want} differs from the checkpoint's {have}");
        }
        cfg.set(key, have);
    }
    Ok(())
}

#[derive(Serialize)]
struct HeldOut {
    split: Split,
    samples: usize,
    recon_cd: f64,
    seg_accuracy: Option<f64>,
}

/// Mean reconstruction CD and point accuracy over `data`.
fn held_out(model: &LpmModel, data: &Dataset, split: Split) -> Result<Option<HeldOut>> {
    if data.is_empty() {
        return Ok(None);
    }
    let enc = model.encode_batch(&data.samples)?;
    let globals: Vec<_> = enc.into_iter().map(|e| e.global).collect();
    let decoded = model.decode_batch(&globals)?;
    let mut cd = 0.0;
    for (c, d) in data.samples.iter().zip(&decoded) {
        cd += chamfer(&c.real_points(), d)?;
    }
    let seg_accuracy = if model.seg_head().is_some() {
        let (mut hit, mut total) = (0usize, 0usize);
        for c in &data.samples {
            let pred = model.predict_labels(c)?;
            for (p, &l) in pred.iter().zip(&c.labels) {
                if l != 0 {
                    total += 1;
                    hit += usize::from(*p == l);
                }
            }
        }
        Some(hit as f64 / total.max(1) as f64)
    } else {
        None
    };
    Ok(Some(HeldOut {
        split,
        samples: data.len(),
        recon_cd: cd / data.len() as f64,
        seg_accuracy,
    }))
}

fn train(mut cfg: RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let data = load_data(&mut cfg, "manifest")?;
    if let Some(k) = cfg.opt::<usize>("parts")? {
        ensure!(k == data.parts, "--parts {k} but the manifest declares {}", data.parts);
    }
    cfg.set("parts", data.parts);
    let train_set = data.subset(Split::Train);
    ensure!(!train_set.is_empty(), "manifest has no training samples");
    let seed = cfg.get("seed", 0u64)?;
    let head = cfg.opt::<HeadKind>("head")?;
    let checkpoint = existing_opt(&cfg, "checkpoint")?;
    match head {
        Some(kind @ (HeadKind::Gan | HeadKind::Wgan)) => {
            let path = checkpoint.ok_or_else(|| anyhow!("--head {kind:?} needs --checkpoint of a trained model"))?;
            let model = LpmModel::load(&path)?;
            check_against(&mut cfg, &model)?;
            return train_gan(cfg, &out, &model, &train_set, kind, seed);
        }
        _ => {}
    }

    let mut model = match &checkpoint {
        Some(p) => {
            let mut m = LpmModel::load(p)?;
            check_against(&mut cfg, &m)?;
            if head == Some(HeadKind::Vae) && m.vae().is_none() {
                let beta = cfg.get("beta", VaeConfig::default().beta)?;
                m.attach_vae(VaeConfig { beta }, &train_set.samples)?;
            }
            m
        }
        None => {
            ensure!(head.is_none(), "--head vae needs --checkpoint of a trained autoencoder (or use --beta alone)");
            LpmModel::new(model_config(&mut cfg, data.parts)?, seed)?
        }
    };
    let defaults = TrainConfig::default();
    let mut adam = defaults.adam;
    adam.lr = cfg.get("lr", adam.lr)?;
    let tc = TrainConfig {
        epochs: cfg.get("epochs", defaults.epochs)?,
        batch_size: cfg.get("batch-size", defaults.batch_size)?,
        metric: cfg.get("metric", "cd".to_string())?.parse()?,
        seg_weight: cfg.get("seg-weight", defaults.seg_weight)?,
        adam,
        seed,
        pool_labels: cfg.named("pool-labels", "ground-truth")?,
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    record(&cfg, &out)?;
    let history = train_with(&mut model, &train_set, &tc, |s| {
        log::info!(
            "epoch {:>4}  recon {:.6}  seg {:.4}  kl {:.4}  acc {:.4}",
            s.epoch,
            s.recon,
            s.seg,
            s.kl,
            s.seg_accuracy
        );
    })?;
    model.save(&out.join("model.lpm"))?;
    write_json(&out.join("history.json"), &history)?;
    let mut csv = String::from("epoch,recon,seg,kl,seg_accuracy\n");
    for e in &history.epochs {
        csv.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.recon, e.seg, e.kl, e.seg_accuracy));
    }
    write_atomic(&out.join("history.csv"), csv.as_bytes())?;

    let test = data.subset(Split::Test);
    let summary = serde_json::json!({
        "epochs": history.epochs.len(),
        "first_recon": history.first().map(|e| e.recon),
        "final_recon": history.last().map(|e| e.recon),
        "final_seg_accuracy": history.last().map(|e| e.seg_accuracy),
        "held_out": held_out(&model, &test, Split::Test)?,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn train_gan(mut cfg: RunConfig, out: &Path, model: &LpmModel, data: &Dataset, kind: HeadKind, seed: u64) -> Result<()> {
    let objective = match kind {
        HeadKind::Wgan => GanObjective::WassersteinGp {
            gp_weight: cfg.get("gp-weight", 10.0)?,
            critic_steps: cfg.get("critic-steps", 5usize)?,
        },
        _ => GanObjective::Standard,
    };
    let steps = cfg.get("gan-steps", 2000usize)?;
    let batch = cfg.get("batch-size", 32usize)?;
    let latents: Vec<_> = model.encode_batch(&data.samples)?.into_iter().map(|e| e.parts).collect();
    let mut gan = LatentGan::new(GanConfig::new(model.parts(), model.feature_size(), objective), seed)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    record(&cfg, out)?;
    let history = gan.train(&latents, steps, batch)?;
    let name = gan.kind();
    write_atomic(&out.join(format!("{name}.lpm")), &gan.to_checkpoint()?.to_bytes()?)?;
    let mut csv = String::from("step,d_loss,g_loss\n");
    for s in &history {
        csv.push_str(&format!("{},{},{}\n", s.step, s.d_loss, s.g_loss));
    }
    write_atomic(&out.join(format!("{name}-history.csv")), csv.as_bytes())?;
    println!("trained {name} head for {steps} steps on {} latents", latents.len());
    Ok(())
}

/// Client for `server`, or for a service started in this process from
/// the checkpoint settings.
async fn connect(cfg: &RunConfig, max_generate: usize) -> Result<(Client, Option<ServerHandle>)> {
    if let Some(url) = cfg.raw("server") {
        return Ok((Client::new(url)?, None));
    }
    let model = existing(cfg, "checkpoint")?;
    let (gan, wgan) = (existing_opt(cfg, "gan")?, existing_opt(cfg, "wgan")?);
    let config = ServiceConfig {
        seed: cfg.opt("seed")?.unwrap_or(0),
        max_generate: max_generate.max(ServiceConfig::default().max_generate),
        ..ServiceConfig::default()
    };
    let state = AppState::load(&model, gan.as_deref(), wgan.as_deref(), config)?;
    let (addr, handle) = lpm_service::spawn("127.0.0.1:0".parse()?, Arc::new(state)).await?;
    Ok((Client::new(&format!("http://{addr}"))?, Some(handle)))
}

fn write_cloud(path: &Path, cloud: &LabeledCloud, pts: bool) -> Result<()> {
    write_cloud_json(path, cloud)?;
    if pts {
        write_pts_seg(&path.with_extension(""), cloud)?;
    }
    Ok(())
}

/// `name=path` or bare `path` (named by its file stem).
fn parse_inputs(raw: &str) -> Result<Vec<(String, PathBuf)>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, path) = match item.split_once('=') {
                Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                None => {
                    let p = PathBuf::from(item);
                    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(item).to_string();
                    (stem, p)
                }
            };
            ensure!(path.exists(), "input `{}` does not exist", path.display());
            Ok((name, path))
        })
        .collect()
}

fn parse_op(raw: &str) -> Result<EditOp> {
    let text = if raw.trim_start().starts_with('{') {
        raw.to_string()
    } else {
        std::fs::read_to_string(raw).with_context(|| format!("reading edit op {raw}"))?
    };
    serde_json::from_str(&text).context("parsing edit op")
}

/// `op` with every source name replaced by its session id.
fn with_ids(op: &EditOp, ids: &BTreeMap<String, String>) -> Result<EditOp> {
    let id = |name: &String| {
        ids.get(name)
            .cloned()
            .ok_or_else(|| anyhow!("edit source `{name}` is not one of the inputs"))
    };
    Ok(match op {
        EditOp::Exchange { a, b, part } => EditOp::Exchange {
            a: id(a)?,
            b: id(b)?,
            part: *part,
        },
        EditOp::Interpolate { a, b, t, scope } => EditOp::Interpolate {
            a: id(a)?,
            b: id(b)?,
            t: *t,
            scope: scope.clone(),
        },
        EditOp::Compose { sources } => EditOp::Compose {
            sources: sources
                .iter()
                .map(|s| {
                    Ok(ComposeSource {
                        source: id(&s.source)?,
                        part: s.part,
                    })
                })
                .collect::<Result<_>>()?,
        },
        EditOp::Remove { a, part } => EditOp::Remove { a: id(a)?, part: *part },
        EditOp::Regenerate { a, part, head, seed } => EditOp::Regenerate {
            a: id(a)?,
            part: *part,
            head: *head,
            seed: *seed,
        },
    })
}

fn edit(mut cfg: RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let op = parse_op(cfg.raw("op").ok_or_else(|| anyhow!("missing required setting `op`"))?)?;
    cfg.set("op", serde_json::to_string(&op)?);
    let inputs = parse_inputs(cfg.raw("input").unwrap_or_default())?;
    ensure!(!inputs.is_empty(), "edit needs at least one --input");
    let steps: Option<Vec<f64>> = cfg.opt::<String>("t")?.map(|_| cfg.list("t", &[])).transpose()?;
    if steps.is_some() {
        ensure!(matches!(op, EditOp::Interpolate { .. }), "--t applies to interpolation only");
    }
    let pts = cfg.get("pts", false)?;
    let normalize_inputs = cfg.get("normalize", false)?;
    cfg.get("seed", 0u64)?;

    runtime()?.block_on(async {
        let (client, server) = connect(&cfg, 0).await?;
        let k = client.models().await?.checkpoint.k;
        let opts = LoadOptions {
            parts: Some(k),
            ..LoadOptions::default()
        };
        let mut ids = BTreeMap::new();
        for (name, path) in &inputs {
            let mut cloud = read_cloud(path, &opts).with_context(|| format!("reading {}", path.display()))?;
            if normalize_inputs {
                cloud = normalize(&cloud)?.0;
            }
            ids.insert(name.clone(), client.encode(&WireCloud::from(&cloud)).await?.model_id);
        }
        let resolved = with_ids(&op, &ids)?;
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        match (&steps, resolved) {
            (Some(ts), EditOp::Interpolate { a, b, scope, .. }) => {
                let mut index = Vec::new();
                for (i, &t) in ts.iter().enumerate() {
                    let step = EditOp::Interpolate {
                        a: a.clone(),
                        b: b.clone(),
                        t,
                        scope: scope.clone(),
                    };
                    let r = client.edit(&step).await?;
                    let file = format!("step_{i:02}.json");
                    write_cloud(&out.join(&file), &r.cloud, pts)?;
                    index.push(serde_json::json!({ "file": file, "t": t }));
                }
                write_json(&out.join("steps.index"), &index)?;
            }
            (_, resolved) => {
                let r = client.edit(&resolved).await?;
                write_cloud(&out.join("edit.json"), &r.cloud, pts)?;
            }
        }
        record(&cfg, &out)?;
        if let Some(s) = server {
            s.shutdown().await;
        }
        Ok(())
    })
}

fn generate(mut cfg: RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let method: GenMethod = cfg.get("head", "vae".to_string())?.parse()?;
    let count = cfg.get("count", 10usize)?;
    let seed = cfg.get("seed", 0u64)?;
    let pts = cfg.get("pts", false)?;
    let pool = match method {
        GenMethod::Exchange | GenMethod::Compose => {
            let data = load_data(&mut cfg, "manifest")?;
            let split: Split = cfg.named("split", "test")?;
            let pool = data.subset(split).samples;
            ensure!(!pool.is_empty(), "manifest has no {split:?} samples to recombine");
            pool
        }
        _ => Vec::new(),
    };
    let (inputs, parts_changed) = if method == GenMethod::Exchange {
        let n = cfg.get("inputs", 10usize)?;
        ensure!(n >= 1 && n <= pool.len(), "--inputs {n} must be in 1..={}", pool.len());
        ensure!(count >= n, "--count {count} is less than --inputs {n}");
        (n, cfg.get("parts-changed", 1usize)?)
    } else {
        (0, 0)
    };

    runtime()?.block_on(async {
        let (client, server) = connect(&cfg, count).await?;
        let mut ids = Vec::with_capacity(pool.len());
        for c in &pool {
            ids.push(client.encode(&WireCloud::from(c)).await?.model_id);
        }
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        if method == GenMethod::Exchange {
            // Variants are spread evenly over the first `inputs` shapes.
            for i in 0..inputs {
                let n = count / inputs + usize::from(i < count % inputs);
                let mut req = GenerateRequest::new(method, n, seed.wrapping_add(i as u64));
                req.base = Some(ids[i].clone());
                req.sources = ids.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, id)| id.clone()).collect();
                if req.sources.is_empty() {
                    req.sources = vec![ids[i].clone()];
                }
                req.parts_changed = Some(parts_changed);
                let r = client.generate(&req).await?;
                for (j, c) in r.clouds.iter().enumerate() {
                    write_cloud(&out.join(format!("input_{i:03}/variant_{j:03}.json")), c, pts)?;
                }
            }
        } else {
            let mut req = GenerateRequest::new(method, count, seed);
            req.sources = ids;
            let r = client.generate(&req).await?;
            for (i, c) in r.clouds.iter().enumerate() {
                write_cloud(&out.join(format!("sample_{i:04}.json")), c, pts)?;
            }
        }
        record(&cfg, &out)?;
        if let Some(s) = server {
            s.shutdown().await;
        }
        println!("wrote {count} clouds to {}", out.display());
        Ok(())
    })
}

/// Generated clouds under `dir`, sorted by path. The second value groups
/// clouds by immediate subdirectory when every cloud sits in one.
fn collect_generated(dir: &Path) -> Result<(Vec<Vec<Point>>, Option<Vec<Vec<Vec<Point>>>>)> {
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json"))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    ensure!(!files.is_empty(), "no .json clouds under {}", dir.display());
    let mut all = Vec::with_capacity(files.len());
    let mut groups: BTreeMap<PathBuf, Vec<Vec<Point>>> = BTreeMap::new();
    let mut grouped = true;
    for f in &files {
        let cloud = read_cloud(f, &LoadOptions::default()).with_context(|| format!("reading {}", f.display()))?;
        let pts = cloud.real_points();
        let parent = f.parent().unwrap_or(dir);
        if parent == dir {
            grouped = false;
        } else {
            groups.entry(parent.to_path_buf()).or_default().push(pts.clone());
        }
        all.push(pts);
    }
    let groups = (grouped && groups.values().all(|g| g.len() >= 2)).then(|| groups.into_values().collect());
    Ok((all, groups))
}

fn eval(mut cfg: RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let generated = existing(&cfg, "generated")?;
    let reference = load_data(&mut cfg, "manifest")?;
    let split: Split = cfg.named("split", "test")?;
    let emd_kind: DistanceKind = cfg.get("metric", "emd".to_string())?.parse()?;
    ensure!(emd_kind.is_emd(), "eval --metric selects the EMD flavour: emd or emd-exact");
    let grid = cfg.get("grid", DEFAULT_GRID)?;
    cfg.get("seed", 0u64)?;
    let refs: Vec<Vec<Point>> = reference.subset(split).samples.iter().map(LabeledCloud::real_points).collect();
    ensure!(!refs.is_empty(), "reference manifest has no {split:?} samples");
    let (samples, groups) = collect_generated(&generated)?;
    let mut report = MetricReport::compute(&samples, &refs, emd_kind, grid)?;
    if let Some(g) = groups {
        report.tmd = Some(tmd(&g)?);
    }
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("report.txt"), report.to_string().as_bytes())?;
    record(&cfg, &out)?;
    print!("{report}");
    Ok(())
}

fn serve(mut cfg: RunConfig) -> Result<()> {
    let model = existing(&cfg, "checkpoint")?;
    let (gan, wgan) = (existing_opt(&cfg, "gan")?, existing_opt(&cfg, "wgan")?);
    let port = cfg.get("port", 8080u16)?;
    let host = cfg.get("host", "127.0.0.1".to_string())?;
    let config = ServiceConfig {
        seed: cfg.get("seed", 0u64)?,
        cache_capacity: cfg.get("cache-capacity", ServiceConfig::default().cache_capacity)?,
        cors_origin: cfg.opt("cors-origin")?,
        ..ServiceConfig::default()
    };
    if cfg.raw("out").is_some() {
        record(&cfg, &cfg.path("out")?)?;
    }
    let state = Arc::new(AppState::load(&model, gan.as_deref(), wgan.as_deref(), config)?);
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        lpm_service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_named_by_stem_or_explicitly() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("chair_a.json");
        std::fs::write(&a, "{}").unwrap();
        let raw = format!("{},b={}", a.display(), a.display());
        let got = parse_inputs(&raw).unwrap();
        assert_eq!(got[0].0, "chair_a");
        assert_eq!(got[1].0, "b");
        assert!(parse_inputs("missing.json").is_err());
    }

    #[test]
    fn op_sources_must_name_inputs() {
        let op = parse_op(r#"{"op":"exchange","a":"x","b":"y","part":2}"#).unwrap();
        let mut ids = BTreeMap::new();
        ids.insert("x".to_string(), "m1".to_string());
        assert!(with_ids(&op, &ids).is_err());
        ids.insert("y".to_string(), "m2".to_string());
        assert_eq!(
            with_ids(&op, &ids).unwrap(),
            EditOp::Exchange {
                a: "m1".into(),
                b: "m2".into(),
                part: 2
            }
        );
    }
}
