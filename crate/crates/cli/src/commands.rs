use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clipdesk_core::datagen::{generate_corpus, read_manifest, Split};
use clipdesk_core::eval::{evaluate_model, sweep_rows, write_report, ReportFormat, SweepConfig};
use clipdesk_core::index::build_from_manifest;
use clipdesk_core::trainer::{train, TrainingSet};
use clipdesk_core::{ClipModel, Corpus, CorpusConfig, RetrievalIndex, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::api::{self, ClassifyRequest, SearchRequest};
use crate::service::{self, AppState};
use crate::{BuildIndexArgs, ClassifyArgs, Command, EvalArgs, Format, GenDataArgs, SearchArgs, ServeArgs, TrainArgs};

pub(crate) fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::BuildIndex(a) => build_index(a),
        Command::Search(a) => search(a),
        Command::Classify(a) => classify(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: CorpusConfig = read_json(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let corpus = generate_corpus(&cfg)?;
    corpus.write(&a.out)?;
    let c = corpus.counts();
    log::info!(
        "wrote {} items to {} (train {}, test_iid {}, test_heldout {}, test_shifted {})",
        corpus.entries.len(),
        a.out.display(),
        c.train,
        c.test_iid,
        c.test_heldout,
        c.test_shifted
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_json(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let corpus = Corpus::load(&a.data)?;
    let set = TrainingSet::from_corpus(&corpus, cfg.dims.max_len);
    log::info!(
        "training on {} pairs: {} steps, batch {}, {} mode",
        set.len(),
        cfg.steps,
        cfg.batch_size,
        cfg.text_mode.as_str()
    );
    let report = train(&cfg, &set)?;
    let (head, tail) = report.head_tail_means();
    log::info!("loss {head:.4} → {tail:.4} in {} ms", report.wall_ms);
    report.model.save_checkpoint(&a.out)?;
    if let Some(p) = &a.report {
        fs::write(p, report.to_json()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn build_index(a: BuildIndexArgs) -> Result<()> {
    let splits = a
        .split
        .iter()
        .map(|s| Split::parse(s).with_context(|| format!("unknown split {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let model = ClipModel::load_checkpoint(&a.ckpt)?;
    let (_, entries) = read_manifest(&a.data)?;
    let chosen: Vec<_> = entries
        .iter()
        .filter(|e| splits.is_empty() || splits.contains(&e.split))
        .collect();
    let mut index = RetrievalIndex::new(model.dims.d_embed)?;
    let n = build_from_manifest(&model, &chosen, &a.data, &mut index)?;
    index.save(&a.out)?;
    log::info!("indexed {n} items into {}", a.out.display());
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let model = ClipModel::load_checkpoint(&a.ckpt)?;
    let index = RetrievalIndex::load(&a.index)?;
    let resp = api::search(&model, &index, &SearchRequest { query: a.query, k: a.k })?;
    print_json(&resp)
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let model = ClipModel::load_checkpoint(&a.ckpt)?;
    let index = RetrievalIndex::load(&a.index)?;
    let classes: Vec<String> = a
        .classes
        .iter()
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    let resp = api::classify_item(
        &model,
        &index,
        &ClassifyRequest {
            id: a.id,
            classes,
            templates: (!a.templates.is_empty()).then_some(a.templates),
        },
    )?;
    print_json(&resp)
}

/// Optional sections of the `eval --config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct EvalConfig {
    train: TrainConfig,
    sweep: SweepConfig,
}

fn eval(a: EvalArgs) -> Result<()> {
    let format = match a.format {
        Some(Format::Json) => ReportFormat::Json,
        Some(Format::Csv) => ReportFormat::Csv,
        None => ReportFormat::from_path(&a.out),
    };
    if a.config.is_some() && !a.sweeps {
        bail!("--config only applies together with --sweeps");
    }
    let model = ClipModel::load_checkpoint(&a.ckpt)?;
    let corpus = Corpus::load(&a.data)?;
    let mut rows = evaluate_model(&model, &corpus, a.seed)?;
    if a.sweeps {
        let cfg: EvalConfig = read_json(a.config.as_deref())?;
        rows.extend(sweep_rows(&corpus, &cfg.train, &cfg.sweep)?);
    }
    write_report(&rows, &a.out, format)?;
    log::info!("wrote {} metric rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let state = AppState::load(&a.ckpt, &a.index, &a.data)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    rt.block_on(service::serve(state, a.bind))
}
