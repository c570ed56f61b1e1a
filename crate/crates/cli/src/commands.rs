use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use serde::Serialize;

use aims_core::association::AssociationMatrix;
use aims_core::data::{Corpus, MaskPrompt, PromptType};
use aims_core::eval::{federated_evaluate, FederatedReport};
use aims_core::inference::{segment, DrillDownSession, Provenance};
use aims_core::model::checkpoint;
use aims_core::training::{RunConfig, Trainer};
use aims_core::{imageio, AimsModel, Level};
use aims_service::{AppState, ServiceConfig};

use crate::profiles;
use crate::Thresholds;

pub fn data_build(spec: &str, out: &Path, seed: u64, count: usize, eval_fraction: f64) -> anyhow::Result<()> {
    let (profiles, counts) = profiles::load(spec, count)?;
    let t0 = Instant::now();
    let corpus = Corpus::build(&profiles, &counts, seed, eval_fraction)?;
    corpus.write(out)?;
    for s in corpus.splits() {
        println!("{:<12} train {:>5}  eval {:>4}", s.profile.name, s.train.len(), s.eval.len());
    }
    println!("wrote {} in {:.1}s", out.display(), t0.elapsed().as_secs_f64());
    Ok(())
}

fn load_model(ckpt: &Path, thresholds: Thresholds) -> anyhow::Result<(AimsModel, usize)> {
    let (mut model, step) = checkpoint::load(ckpt)?;
    let c = model.config().clone();
    model.set_thresholds(
        thresholds.keep_threshold.unwrap_or(c.keep_threshold),
        thresholds.assoc_threshold.unwrap_or(c.assoc_threshold),
    )?;
    Ok((model, step))
}

pub fn train(config: Option<&Path>, corpus: &Path, out: &Path, log: Option<PathBuf>) -> anyhow::Result<()> {
    let run: RunConfig = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    let corpus = Corpus::read(corpus)?;
    let log_path = log.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    });
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let every = run.train.checkpoint_every;
    let mut trainer = Trainer::new(AimsModel::new(run.model)?, run.train)?;
    let total = trainer.config.iterations;
    let t0 = Instant::now();
    trainer.run(&corpus, |tr, rec| {
        serde_json::to_writer(&mut log, rec).map_err(|e| aims_core::AimsError::json(&log_path, e))?;
        writeln!(log).and_then(|_| log.flush()).map_err(|e| aims_core::AimsError::io(&log_path, e))?;
        let done = rec.step + 1;
        if done % 25 == 0 || done == total {
            tracing::info!(
                "step {done}/{total} loss {:.4} lr {:.1e} ({:.2}s/step)",
                rec.total,
                rec.lr,
                t0.elapsed().as_secs_f64() / done as f64
            );
        }
        if every > 0 && done % every == 0 && done < total {
            checkpoint::save(&tr.model, done, out)?;
        }
        Ok(())
    })?;
    checkpoint::save(&trainer.model, trainer.step_count(), out)?;
    println!("saved {} after {} steps ({:.0}s); metrics in {}", out.display(), total, t0.elapsed().as_secs_f64(), log_path.display());
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.3}"))
}

pub fn print_report(report: &FederatedReport) {
    println!("{:<12} {:>6}  {:<36} AR@{}", "subset", "images", "AP / AP50 / AP75 per level", report.recall_top_k);
    for s in &report.subsets {
        let ap: Vec<String> = s
            .ap
            .iter()
            .map(|(l, a)| match a {
                Some(a) => format!("{l} {:.3}/{:.3}/{:.3}", a.ap, a.ap50, a.ap75),
                None => format!("{l} n/a"),
            })
            .collect();
        let ar: Vec<String> = s.ar.iter().map(|(p, v)| format!("{p} {}", cell(*v))).collect();
        println!("{:<12} {:>6}  {:<36} {}", s.subset, s.images, ap.join("  "), ar.join("  "));
    }
}

pub fn eval(ckpt: &Path, corpus: &Path, report_path: &Path, thresholds: Thresholds) -> anyhow::Result<()> {
    let (model, _) = load_model(ckpt, thresholds)?;
    let corpus = Corpus::read(corpus)?;
    let report = federated_evaluate(&model, &corpus)?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(report_path, text).with_context(|| format!("writing {}", report_path.display()))?;
    print_report(&report);
    Ok(())
}

#[derive(Serialize)]
struct MaskEntry {
    file: String,
    score: f64,
    query: usize,
    area: usize,
}

#[derive(Serialize)]
struct InferManifest {
    image: String,
    width: usize,
    height: usize,
    levels: std::collections::BTreeMap<Level, Vec<MaskEntry>>,
    associations: Vec<AssociationMatrix>,
    provenance: Provenance,
}

pub fn infer(
    ckpt: &Path,
    image_path: &Path,
    prompt: Option<&Path>,
    prompt_type: Option<PromptType>,
    level: Option<Level>,
    out: &Path,
    thresholds: Thresholds,
) -> anyhow::Result<()> {
    let (model, _) = load_model(ckpt, thresholds)?;
    let image = imageio::read_image(image_path)?;
    let (h, w) = (image.height(), image.width());
    let prompt = match prompt {
        Some(p) => {
            if level.is_none() {
                bail!("--prompt needs --level");
            }
            Some(MaskPrompt::new(imageio::read_mask(p)?, prompt_type.unwrap_or(PromptType::PartialImage), h, w)?)
        }
        None => None,
    };
    let result = segment(&model, &image, prompt.as_ref(), level)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut levels = std::collections::BTreeMap::new();
    for (l, r) in &result.levels {
        let mut entries = Vec::new();
        for (i, mask) in r.masks.iter().enumerate() {
            let file = format!("{l}_{i:03}.png");
            imageio::write_file(&out.join(&file), &imageio::encode_mask_png(mask))?;
            entries.push(MaskEntry { file, score: r.scores[i], query: r.queries[i], area: mask.count() });
        }
        println!("{l}: {} masks", entries.len());
        levels.insert(*l, entries);
    }
    let manifest = InferManifest {
        image: image_path.display().to_string(),
        width: w,
        height: h,
        levels,
        associations: result.associations,
        provenance: result.provenance,
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
    if manifest.provenance.out_of_distribution {
        println!("warning: prompt type and level are outside the trained combinations");
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Reads either a bare session or the service's session view (`{"session": ...}`).
pub fn read_session(path: &Path) -> anyhow::Result<DrillDownSession> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(inner) = value.get_mut("session") {
        value = inner.take();
    }
    serde_json::from_value(value).with_context(|| format!("{} is not a drill-down session", path.display()))
}

pub fn replay(ckpt: &Path, session: &Path) -> anyhow::Result<()> {
    let (model, _) = checkpoint::load(ckpt)?;
    let session = read_session(session)?;
    let replayed = session.replay(&model)?;
    let mut differing = 0;
    for (i, (step, again)) in session.history.iter().zip(&replayed).enumerate() {
        let same = step.result.levels == again.levels && step.result.associations == again.associations;
        differing += usize::from(!same);
        let n = again.level(step.level).map_or(0, |r| r.len());
        println!("step {i}: {} at {} -> {n} masks, {}", step.prompt.prompt_type, step.level, if same { "identical" } else { "DIFFERS" });
    }
    if differing > 0 {
        bail!("{differing} of {} steps differ on replay", session.history.len());
    }
    println!("{} steps replayed identically", session.history.len());
    Ok(())
}

pub fn serve(
    ckpt: Option<&Path>,
    addr: SocketAddr,
    corpus: Option<&Path>,
    session_ttl: u64,
    thresholds: Thresholds,
) -> anyhow::Result<()> {
    let model = ckpt.map(|p| load_model(p, thresholds)).transpose()?;
    if model.is_none() {
        tracing::warn!("no checkpoint given; inference endpoints answer 409");
    }
    let corpus = corpus.map(Corpus::read).transpose()?;
    let config = ServiceConfig { session_ttl: Duration::from_secs(session_ttl), ..ServiceConfig::default() };
    let state = AppState::new(model, corpus, config);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(aims_service::serve(state, addr))?;
    Ok(())
}
