use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use flat_core::attack::{attack_dataset, write_attack_dump};
use flat_core::checkpoint::{Checkpoint, ModelKind};
use flat_core::corpus::{
    build_vocab, encode_examples, infer_num_classes, load_embeddings, load_synonyms, read_labeled, tokenize, write_synthetic, Example,
    SynonymTable, Vocab, PAD,
};
use flat_core::interpret::{attribute_all, write_attribution_dump, AttributionVector};
use flat_core::metrics::{correlation_analysis, curve_tsv, report_json, CorrelationReport};
use flat_core::pipeline::{ablation_table, EvalConfig};
use flat_core::rng::rng_for;
use flat_core::training::{self, init_classifier, AttackSetup, RoundEvent, Splits, TrainState};

use crate::config::RunConfig;
use crate::Split;

/// Smallest padded length the encoder accepts.
fn min_len(cfg: &RunConfig) -> usize {
    cfg.model.widths.iter().copied().max().unwrap_or(1)
}

struct Data {
    vocab: Vocab,
    hash: String,
    num_classes: usize,
    train: Vec<Example>,
    dev: Vec<Example>,
    test: Vec<Example>,
}

impl Data {
    fn split(&self, s: Split) -> &[Example] {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn splits(&self) -> Splits<'_> {
        Splits { train: &self.train, dev: &self.dev }
    }
}

/// Reads the three splits and rebuilds the vocabulary from the training file.
fn load_data(cfg: &RunConfig) -> Result<Data> {
    let d = &cfg.data;
    let read = |p: PathBuf| read_labeled(&p, d.num_classes).with_context(|| format!("loading {}", p.display()));
    let (train, dev, test) = (read(d.train_path()?)?, read(d.dev_path()?)?, read(d.test_path()?)?);
    if train.is_empty() {
        bail!("training file is empty");
    }
    let lines: Vec<&str> = train.iter().map(|r| r.1.as_str()).collect();
    let vocab = build_vocab(&lines, d.min_freq)?;
    let num_classes = match d.num_classes {
        Some(c) => c,
        None => [&train, &dev, &test].iter().map(|rows| infer_num_classes(rows)).max().unwrap_or(0).max(2),
    };
    let longest = train.iter().map(|r| tokenize(&r.1).len()).max().unwrap_or(0);
    let max_len = d.max_len.unwrap_or(longest).max(min_len(cfg));
    let enc = |rows: &[(usize, String)]| encode_examples(rows, &vocab, max_len);
    let (train, dev, test) = (enc(&train), enc(&dev), enc(&test));
    let hash = vocab.hash();
    log::info!("vocabulary {} words, {} classes, max_len {}", vocab.len(), num_classes, max_len);
    Ok(Data { vocab, hash, num_classes, train, dev, test })
}

fn synonyms(cfg: &RunConfig, data: &Data) -> Result<SynonymTable> {
    let p = cfg.data.synonyms_path()?;
    load_synonyms(&p, &data.vocab).with_context(|| format!("loading synonyms {}", p.display()))
}

fn load_state(path: &Path, data: &Data) -> Result<(TrainState, ModelKind)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let state = ck.to_state(&data.hash).with_context(|| format!("checkpoint {}", path.display()))?;
    Ok((state, ck.kind))
}

fn save_state(cfg: &RunConfig, data: &Data, kind: ModelKind, state: &TrainState, name: &str) -> Result<PathBuf> {
    let path = cfg.out_dir.join(name);
    Checkpoint::from_state(kind, state, &data.hash, serde_json::to_value(cfg)?).save(&path)?;
    Ok(path)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

struct JsonLines(BufWriter<File>, PathBuf);

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(JsonLines(BufWriter::new(f), path))
    }

    fn push(&mut self, value: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut self.0, value)?;
        writeln!(self.0).with_context(|| format!("writing {}", self.1.display()))?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.0.flush().with_context(|| format!("writing {}", self.1.display()))
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let paths = write_synthetic(&cfg.synthetic, &cfg.out_dir)?;
    println!("wrote {} {} {} {}", paths.train.display(), paths.dev.display(), paths.test.display(), paths.synonyms.display());
    Ok(())
}

fn fit_base(cfg: &RunConfig, data: &Data) -> Result<TrainState> {
    let pretrained = match &cfg.data.embeddings {
        Some(p) => Some(load_embeddings(p, &data.vocab, &mut rng_for(cfg.seed, "init"))?),
        None => None,
    };
    let init = init_classifier(data.vocab.len(), data.num_classes, &cfg.model, cfg.seed, pretrained)?;
    let (state, metrics) = training::train_base(init, &data.train, &data.dev, &cfg.train)?;
    let mut lines = JsonLines::create(cfg.out_dir.join("base.metrics.jsonl"))?;
    lines.push(&metrics)?;
    lines.finish()?;
    let path = save_state(cfg, data, ModelKind::Base, &state, "base.ckpt.json")?;
    println!("base: dev accuracy {:.4}; wrote {}", metrics.dev_acc, path.display());
    Ok(state)
}

pub fn train_base(cfg: &RunConfig) -> Result<()> {
    fit_base(cfg, &load_data(cfg)?).map(drop)
}

fn base_state(cfg: &RunConfig, data: &Data, base: Option<&Path>) -> Result<TrainState> {
    match base {
        Some(p) => Ok(load_state(p, data)?.0),
        None => fit_base(cfg, data),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Flat,
    Adv,
}

pub fn train_rounds(cfg: &RunConfig, base: Option<&Path>, regime: Regime) -> Result<()> {
    let data = load_data(cfg)?;
    let syn = synonyms(cfg, &data)?;
    let base = base_state(cfg, &data, base)?;
    let (prefix, kind) = match regime {
        Regime::Flat => ("flat", ModelKind::Flat),
        Regime::Adv => ("adv", ModelKind::Adv),
    };
    let atk = AttackSetup { synonyms: &syn, config: Some(&cfg.attack), jobs: cfg.jobs };
    let mut lines = JsonLines::create(cfg.out_dir.join(format!("{prefix}.metrics.jsonl")))?;
    let mut observer = |e: RoundEvent| -> flat_core::Result<()> {
        let r = e.metrics.round;
        let name = format!("{prefix}.round{r}.ckpt.json");
        let written = if r == 0 {
            let mut plain = TrainState::plain(e.state.classifier.clone());
            plain.round = 0;
            save_state(cfg, &data, ModelKind::Base, &plain, &name)
        } else {
            save_state(cfg, &data, kind, e.state, &name).and_then(|_| {
                let dump = cfg.out_dir.join(format!("{prefix}.adv.round{r}.jsonl"));
                write_attack_dump(&dump, e.train_attacks, e.train_attack_examples, &data.vocab)?;
                Ok(dump)
            })
        };
        let push = written.and_then(|_| lines.push(e.metrics));
        push.map_err(|err| flat_core::Error::Invalid(format!("{err:#}")))
    };
    let (_, history) = match regime {
        Regime::Flat => training::train_flat(&base.classifier, &data.splits(), &atk, &cfg.train, &mut observer)?,
        Regime::Adv => training::train_traditional_adv(&base.classifier, &data.splits(), &atk, &cfg.train, &mut observer)?,
    };
    lines.finish()?;
    for m in &history {
        println!(
            "{prefix} round {}: dev {:.4} after-attack {} new pairs {}",
            m.round,
            m.dev_acc,
            m.after_attack_acc.map_or("-".into(), |a| format!("{a:.4}")),
            m.new_pairs
        );
    }
    Ok(())
}

pub fn train_groupmask(cfg: &RunConfig, base: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let (base, _) = load_state(base, &data)?;
    let (state, metrics) = training::train_group_mask_baseline(&base.classifier, &data.splits(), cfg.clusters, &cfg.train)?;
    let mut lines = JsonLines::create(cfg.out_dir.join("groupmask.metrics.jsonl"))?;
    lines.push(&metrics)?;
    lines.finish()?;
    let path = save_state(cfg, &data, ModelKind::GroupMask, &state, "groupmask.ckpt.json")?;
    println!("group mask ({} clusters): dev accuracy {:.4}; wrote {}", cfg.clusters, metrics.dev_acc, path.display());
    Ok(())
}

pub fn attack(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<()> {
    let data = load_data(cfg)?;
    let syn = synonyms(cfg, &data)?;
    let (mut state, _) = load_state(checkpoint, &data)?;
    let examples = data.split(split);
    let (results, summary) = attack_dataset(&state.frozen(), examples, &syn, &cfg.attack, cfg.jobs)?;
    write_attack_dump(&cfg.out_dir.join(format!("attack.{}.jsonl", split.name())), &results, examples, &data.vocab)?;
    write_json(&cfg.out_dir.join(format!("attack.{}.summary.json", split.name())), &summary)?;
    println!(
        "{} attack on {}: clean {:.4} after-attack {:.4} ({} of {} flipped)",
        cfg.attack.kind,
        split.name(),
        summary.clean_acc,
        summary.after_attack_acc,
        summary.successes,
        summary.total
    );
    Ok(())
}

pub fn interpret(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<()> {
    let data = load_data(cfg)?;
    let (mut state, _) = load_state(checkpoint, &data)?;
    let examples = data.split(split);
    let inputs: Vec<(&[usize], Option<usize>)> = examples.iter().map(|e| (e.ids.as_slice(), Some(e.label))).collect();
    let attrs = attribute_all(&state.frozen(), &inputs, &cfg.ig, cfg.jobs)?;
    let path = cfg.out_dir.join(format!("attributions.{}.jsonl", split.name()));
    write_attribution_dump(&path, &attrs, &data.vocab)?;
    let worst = attrs.iter().map(AttributionVector::relative_residual).fold(0.0, f64::max);
    println!("{} attributions; largest relative completeness residual {worst:.2e}; wrote {}", attrs.len(), path.display());
    Ok(())
}

/// Replaced-word ids from the successful lines of adversarial dumps.
fn substituted_from_dumps(paths: &[PathBuf], vocab: &Vocab) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for path in paths {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: serde_json::Value =
                serde_json::from_str(&line).with_context(|| format!("{}:{}: not a dump record", path.display(), n + 1))?;
            if rec["success"] != serde_json::Value::Bool(true) {
                continue;
            }
            let subs = rec["subs"].as_array().ok_or_else(|| anyhow!("{}:{}: missing subs", path.display(), n + 1))?;
            for s in subs {
                let word = s[1].as_str().ok_or_else(|| anyhow!("{}:{}: malformed substitution", path.display(), n + 1))?;
                let id = vocab.get(word).ok_or_else(|| anyhow!("{}:{}: word {word:?} is not in the vocabulary", path.display(), n + 1))?;
                ids.push(id);
            }
        }
    }
    Ok(ids)
}

fn correlation_tsv(report: &CorrelationReport, vocab: &Vocab) -> String {
    let mut s = String::from("word\tphi\ttrain_freq\tsub_freq\n");
    for w in &report.words {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", vocab.word(w.id), w.phi, w.train_freq, w.sub_freq));
    }
    s
}

pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, split: Split, adv_dumps: &[PathBuf]) -> Result<()> {
    let data = load_data(cfg)?;
    let syn = synonyms(cfg, &data)?;
    let (mut state, _) = load_state(checkpoint, &data)?;
    let examples = data.split(split);
    let ecfg = EvalConfig { attack: cfg.attack.clone(), ig: cfg.ig.clone(), ks: cfg.ks.clone() };
    let ev = flat_core::pipeline::evaluate(&state.frozen(), examples, &syn, &ecfg, cfg.jobs)?;
    let correlation = if adv_dumps.is_empty() {
        None
    } else {
        let phi = state.importance().ok_or_else(|| anyhow!("correlation analysis needs a checkpoint with an inference network"))?;
        let report = correlation_analysis(&phi, &data.train, substituted_from_dumps(adv_dumps, &data.vocab)?);
        std::fs::write(cfg.out_dir.join("correlation.tsv"), correlation_tsv(&report, &data.vocab))?;
        Some(report)
    };
    let mut report = report_json(ev.summary.after_attack_acc, ev.consistency.as_ref(), correlation.as_ref());
    report["clean_acc"] = ev.clean_acc.into();
    report["pairs"] = ev.attributions.len().into();
    write_json(&cfg.out_dir.join("report.json"), &report)?;
    if let Some(c) = &ev.consistency {
        std::fs::write(cfg.out_dir.join("curve.tsv"), curve_tsv(c))?;
    }
    write_attack_dump(&cfg.out_dir.join("eval.attack.jsonl"), &ev.results, examples, &data.vocab)?;
    let (orig, adv): (Vec<_>, Vec<_>) = ev.attributions.into_iter().map(|(a, b, _)| (a, b)).unzip();
    write_attribution_dump(&cfg.out_dir.join("eval.attributions.orig.jsonl"), &orig, &data.vocab)?;
    write_attribution_dump(&cfg.out_dir.join("eval.attributions.adv.jsonl"), &adv, &data.vocab)?;
    println!(
        "{}: clean {:.4} after-attack {:.4}; {} pairs; kendall tau {}",
        split.name(),
        ev.clean_acc,
        ev.summary.after_attack_acc,
        orig.len(),
        ev.consistency.map_or("-".into(), |c| format!("{:.4}", c.macro_kendall_tau))
    );
    Ok(())
}

pub fn ablate(cfg: &RunConfig, base: Option<&Path>) -> Result<()> {
    let data = load_data(cfg)?;
    let syn = synonyms(cfg, &data)?;
    let base = base_state(cfg, &data, base)?;
    let atk = AttackSetup { synonyms: &syn, config: Some(&cfg.attack), jobs: cfg.jobs };
    let rows = flat_core::pipeline::ablate(&base.classifier, &data.splits(), &data.test, &atk, &cfg.attack, &cfg.train)?;
    let table = ablation_table(&rows);
    std::fs::write(cfg.out_dir.join("ablation.tsv"), &table)?;
    write_json(&cfg.out_dir.join("ablation.json"), &rows)?;
    print!("{table}");
    Ok(())
}

pub fn export_importance(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let (mut state, _) = load_state(checkpoint, &data)?;
    let phi = state.importance().ok_or_else(|| anyhow!("{} has no inference network", checkpoint.display()))?;
    let mut s = String::from("word\tphi\n");
    for (id, p) in phi.ranked().into_iter().filter(|&(id, _)| id != PAD) {
        s.push_str(&format!("{}\t{}\n", data.vocab.word(id), p));
    }
    let path = cfg.out_dir.join("importance.tsv");
    std::fs::write(&path, s)?;
    println!("wrote {} ({} words)", path.display(), phi.len() - 1);
    Ok(())
}
