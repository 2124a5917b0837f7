use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use forge_core::aligner::{alignment_fscore, Aligner};
use forge_core::checkpoint::Checkpoint;
use forge_core::corpus::io::{read_alignments, read_corpus, read_texts, write_alignments, write_corpus, write_texts};
use forge_core::corpus::{
    corpus_stats, delexicalise, filter_corpus, generate_synthetic_corpus, normalize_example_dates, prepare, preprocess,
    relexicalisation_map, relexicalise, AlignmentSet, Example, FilterLimits, PreprocessConfig, SyntheticSpec,
};
use forge_core::evalsuite::{bleu, first_sentence, Smoothing};
use forge_core::generator::{DecodeStrategy, Generator};
use forge_core::mtl::{derive_labels, train_mtl};
use forge_core::rl::train_rl;
use forge_core::template::{default_rules, read_rules, realise_template};
use forge_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::manifest::{manifest_path, Manifest};
use crate::{ConfigArgs, CorpusKind, Strategy, TrainMode};

const RANK_POOL: usize = 15;

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut sets = args.sets.clone();
    if let Some(seed) = args.seed {
        sets.push(format!("seed={seed}"));
    }
    ExperimentConfig::load(args.config.as_deref(), &sets)
}

fn stamp(manifest: &mut Manifest, config: &ExperimentConfig, args: &ConfigArgs) -> Result<()> {
    manifest.seed = Some(config.seed);
    manifest.config_hash = Some(config.hash());
    manifest.config = Some(serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?);
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    Ok(())
}

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given: pass --{what} or set paths.{what}")))
}

fn to_json<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("report serialises")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn finish(mut manifest: Manifest, primary: &Path, outputs: &[&Path], metrics: serde_json::Value) -> Result<()> {
    for p in outputs {
        manifest.output(p)?;
    }
    manifest.metrics = metrics;
    manifest.save(&manifest_path(primary))
}

/// Saves a checkpoint with its preprocessing settings and tensor listing.
fn save_checkpoint(mut ck: Checkpoint, preprocess: &PreprocessConfig, out: &Path) -> Result<PathBuf> {
    ck.metadata["preprocess"] = to_json(preprocess);
    ck.save(out)?;
    let listing = sidecar(out, ".tensors.txt");
    write_text(&listing, &ck.manifest())?;
    Ok(listing)
}

fn checkpoint_preprocess(ck: &Checkpoint) -> Result<PreprocessConfig> {
    let v = ck
        .metadata
        .get("preprocess")
        .ok_or_else(|| Error::Checkpoint("no preprocessing settings in metadata".into()))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("preprocess: {e}")))
}

fn write_curve<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let serde_json::Value::Object(map) = to_json(r) else { continue };
        if i == 0 {
            out.push_str(&map.keys().cloned().collect::<Vec<_>>().join("\t"));
            out.push('\n');
        }
        let cells: Vec<String> = map
            .values()
            .map(|v| if v.is_null() { "-".into() } else { v.to_string() })
            .collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn synth(argv: &[String], seed: u64, n: usize, distractor_rate: f64, out: &Path, gold: &Path, refs: &Path) -> Result<()> {
    let mut manifest = Manifest::new("synth", argv);
    manifest.seed = Some(seed);
    let mut spec = SyntheticSpec::biographies();
    spec.distractor_rate = distractor_rate;
    let data = generate_synthetic_corpus(seed, n, &spec)?;
    let corpus: Vec<Example> = data.iter().map(|s| s.example.clone()).collect();
    write_corpus(out, &corpus)?;
    let golds: BTreeMap<String, AlignmentSet> =
        data.iter().map(|s| (s.example.entity_id().to_string(), s.gold.clone())).collect();
    write_alignments(gold, &golds)?;
    let texts: Vec<(String, Vec<String>)> =
        data.iter().map(|s| (s.example.entity_id().to_string(), s.reference.concat())).collect();
    write_texts(refs, &texts)?;
    let metrics = json!({
        "entities": data.len(),
        "sentences": data.iter().map(|s| s.example.document.sentences.len()).sum::<usize>(),
        "distractor_sentences": data.iter().map(|s| s.distractor_sentences.len()).sum::<usize>(),
        "links": golds.values().map(AlignmentSet::len).sum::<usize>(),
    });
    finish(manifest, out, &[out, gold, refs], metrics)
}

pub fn preprocess_cmd(
    argv: &[String],
    input: &Path,
    out: &Path,
    filter_config: Option<&Path>,
    kind: CorpusKind,
    args: &ConfigArgs,
) -> Result<()> {
    let config = load_config(args)?;
    let mut manifest = Manifest::new("preprocess", argv);
    stamp(&mut manifest, &config, args)?;
    manifest.input(input)?;
    let mut pc = match kind {
        CorpusKind::Aligner => config.aligner_corpus.clone(),
        CorpusKind::Generator => config.generator_corpus.clone(),
    };
    if let Some(path) = filter_config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        pc.limits = toml::from_str::<FilterLimits>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        manifest.input(path)?;
    }
    let corpus = read_corpus(input)?;
    let (kept, inv, outv) = preprocess(&corpus, &pc)?;
    write_corpus(out, &kept)?;
    let metrics = json!({
        "read": corpus.len(),
        "kept": kept.len(),
        "input_vocab": inv.len(),
        "output_vocab": outv.len(),
    });
    finish(manifest, out, &[out], metrics)
}

pub fn stats(input: &Path) -> Result<()> {
    let corpus = read_corpus(input)?;
    let s = corpus_stats(&corpus)?;
    emit(&(serde_json::to_string_pretty(&s).map_err(|e| Error::Config(e.to_string()))? + "\n"));
    Ok(())
}

pub fn align_train(argv: &[String], corpus: Option<PathBuf>, out: Option<PathBuf>, args: &ConfigArgs) -> Result<()> {
    let config = load_config(args)?;
    let corpus_path = required(corpus, &config.paths.corpus, "corpus")?;
    let out = out
        .or_else(|| config.paths.checkpoint.clone())
        .unwrap_or_else(|| PathBuf::from("aligner.ckpt"));
    let mut manifest = Manifest::new("align train", argv);
    stamp(&mut manifest, &config, args)?;
    manifest.input(&corpus_path)?;
    let (kept, _, _) = preprocess(&read_corpus(&corpus_path)?, &config.aligner_corpus)?;
    let mut aligner = Aligner::for_corpus(&kept, config.aligner.clone())?;
    let (reports, optimizer) = aligner.train(&kept, |_| {})?;
    let scored = kept.iter().map(|ex| aligner.score_document(ex)).collect::<Result<Vec<_>>>()?;
    let threshold = aligner.calibrate(&scored)?;
    let listing = save_checkpoint(aligner.to_checkpoint()?.with_optimizer(&optimizer), &config.aligner_corpus, &out)?;
    let curve = sidecar(&out, ".loss.tsv");
    write_curve(&curve, &reports)?;
    let metrics = json!({ "examples": kept.len(), "threshold": threshold, "epochs": to_json(&reports) });
    finish(manifest, &out, &[&out, &listing, &curve], metrics)
}

fn load_aligner(path: &Path) -> Result<(Aligner, PreprocessConfig)> {
    let ck = Checkpoint::load(path)?;
    Ok((Aligner::from_checkpoint(&ck)?, checkpoint_preprocess(&ck)?))
}

pub fn align_extract(argv: &[String], checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("align extract", argv);
    manifest.input(checkpoint)?;
    manifest.input(input)?;
    let (aligner, pc) = load_aligner(checkpoint)?;
    let mut links = BTreeMap::new();
    for ex in read_corpus(input)? {
        let prepared = prepare(&ex, &pc, &aligner.vocab, &aligner.vocab)?;
        links.insert(ex.entity_id().to_string(), aligner.align(&prepared)?);
    }
    write_alignments(out, &links)?;
    let metrics = json!({
        "documents": links.len(),
        "links": links.values().map(AlignmentSet::len).sum::<usize>(),
    });
    finish(manifest, out, &[out], metrics)
}

pub fn align_score(argv: &[String], checkpoint: &Path, input: &Path, gold: &Path, out: Option<&Path>) -> Result<()> {
    let mut manifest = Manifest::new("align score", argv);
    for p in [checkpoint, input, gold] {
        manifest.input(p)?;
    }
    let (aligner, pc) = load_aligner(checkpoint)?;
    let golds = read_alignments(gold)?;
    let mut prepared = Vec::new();
    let mut gold_sets = Vec::new();
    for ex in read_corpus(input)? {
        if let Some(g) = golds.get(ex.entity_id()) {
            prepared.push(prepare(&ex, &pc, &aligner.vocab, &aligner.vocab)?);
            gold_sets.push(g);
        }
    }
    if prepared.is_empty() {
        return Err(Error::Config("no document of the corpus has gold alignments".into()));
    }
    let predicted = prepared.iter().map(|ex| aligner.align(ex)).collect::<Result<Vec<_>>>()?;
    let prf = alignment_fscore(predicted.iter().zip(gold_sets.iter().copied()));
    let rank = aligner.mean_rank(&prepared, Some(&gold_sets), RANK_POOL, aligner.config.seed)?;
    let metrics = json!({
        "documents": prepared.len(),
        "precision": prf.precision,
        "recall": prf.recall,
        "f": prf.f,
        "mean_rank_at_15": rank,
    });
    let text = serde_json::to_string_pretty(&metrics).expect("json") + "\n";
    match out {
        Some(path) => {
            write_text(path, &text)?;
            finish(manifest, path, &[path], metrics)
        }
        None => {
            emit(&text);
            Ok(())
        }
    }
}

fn example_labels(corpus: &[Example], alignments: &BTreeMap<String, AlignmentSet>) -> Result<(Vec<Vec<bool>>, usize)> {
    let empty = AlignmentSet::new();
    let mut missing = 0;
    let mut labels = Vec::new();
    for ex in corpus {
        let a = alignments.get(ex.entity_id()).unwrap_or_else(|| {
            missing += 1;
            &empty
        });
        labels.push(derive_labels(&ex.document, a)?);
    }
    Ok((labels, missing))
}

pub fn gen_train(
    argv: &[String],
    mode: TrainMode,
    corpus: Option<PathBuf>,
    alignments: Option<PathBuf>,
    init: Option<PathBuf>,
    out: Option<PathBuf>,
    args: &ConfigArgs,
) -> Result<()> {
    let config = load_config(args)?;
    let corpus_path = required(corpus, &config.paths.corpus, "corpus")?;
    let out = out
        .or_else(|| config.paths.checkpoint.clone())
        .unwrap_or_else(|| PathBuf::from("generator.ckpt"));
    let mut manifest = Manifest::new("gen train", argv);
    stamp(&mut manifest, &config, args)?;
    manifest.input(&corpus_path)?;
    let raw = read_corpus(&corpus_path)?;
    let curve = sidecar(&out, ".loss.tsv");
    let (listing, metrics) = match mode {
        TrainMode::Base | TrainMode::Mtl => {
            let pc = &config.generator_corpus;
            let (kept, inv, outv) = preprocess(&raw, pc)?;
            let mut generator = Generator::new(inv, outv, config.generator.clone())?;
            let (reports, optimizer, missing) = if mode == TrainMode::Base {
                let (r, o) = generator.train(&kept, |_| {})?;
                (r, o, 0)
            } else {
                let path = required(alignments, &config.paths.alignments, "alignments")?;
                manifest.input(&path)?;
                let (labels, missing) = example_labels(&kept, &read_alignments(&path)?)?;
                let (r, o) = train_mtl(&mut generator, &kept, &labels, &config.mtl, |_| {})?;
                (r, o, missing)
            };
            write_curve(&curve, &reports)?;
            let listing = save_checkpoint(generator.to_checkpoint(None)?.with_optimizer(&optimizer), pc, &out)?;
            let metrics = json!({
                "mode": format!("{mode:?}").to_lowercase(),
                "examples": kept.len(),
                "unaligned_examples": missing,
                "epochs": to_json(&reports),
            });
            (listing, metrics)
        }
        TrainMode::Rl => {
            let init = init.ok_or_else(|| Error::Config("--mode rl needs --init-checkpoint".into()))?;
            manifest.input(&init)?;
            let ck = Checkpoint::load(&init)?;
            let (mut generator, _) = Generator::from_checkpoint(&ck)?;
            let pc = checkpoint_preprocess(&ck)?;
            let prepared = raw
                .iter()
                .map(|ex| prepare(ex, &pc, &generator.input_vocab, &generator.output_vocab))
                .collect::<Result<Vec<_>, _>>()?;
            let kept = filter_corpus(prepared, &pc.limits)?;
            let path = required(alignments, &config.paths.alignments, "alignments")?;
            manifest.input(&path)?;
            let links = read_alignments(&path)?;
            let aligned: Vec<BTreeSet<String>> = kept
                .iter()
                .map(|ex| links.get(ex.entity_id()).map(|a| a.aligned_words(&ex.document)).unwrap_or_default())
                .collect();
            let (reports, baseline) = train_rl(&mut generator, &kept, &aligned, &config.rl, |_| {})?;
            write_curve(&curve, &reports)?;
            let listing = save_checkpoint(generator.to_checkpoint(Some(&baseline))?, &pc, &out)?;
            let metrics = json!({ "mode": "rl", "examples": kept.len(), "epochs": to_json(&reports) });
            (listing, metrics)
        }
    };
    finish(manifest, &out, &[&out, &listing, &curve], metrics)
}

pub fn gen_decode(
    argv: &[String],
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    strategy: Option<Strategy>,
    seed: u64,
) -> Result<()> {
    let mut manifest = Manifest::new("gen decode", argv);
    manifest.seed = Some(seed);
    manifest.input(checkpoint)?;
    manifest.input(input)?;
    let ck = Checkpoint::load(checkpoint)?;
    let (generator, _) = Generator::from_checkpoint(&ck)?;
    let pc = checkpoint_preprocess(&ck)?;
    let strategy = match strategy {
        Some(Strategy::Greedy) => DecodeStrategy::Greedy,
        Some(Strategy::Sample) => DecodeStrategy::Sample,
        None => generator.config.decode,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut texts, mut tokens, mut unmapped) = (Vec::new(), 0, 0);
    for ex in read_corpus(input)? {
        let prepared = prepare(&ex, &pc, &generator.input_vocab, &generator.output_vocab)?;
        let generated = generator.generate_tokens(&prepared.properties, strategy, &mut rng)?;
        let normalised = normalize_example_dates(&ex);
        let source = if pc.delexicalise { delexicalise(&normalised)? } else { normalised };
        let relex = relexicalise(
            &generated,
            &relexicalisation_map(&source.properties, &source.document.delex_map),
        );
        tokens += relex.tokens.len();
        unmapped += relex.unmapped;
        texts.push((ex.entity_id().to_string(), relex.tokens));
    }
    write_texts(out, &texts)?;
    let metrics = json!({ "documents": texts.len(), "tokens": tokens, "unmapped_slots": unmapped });
    finish(manifest, out, &[out], metrics)
}

pub fn template(argv: &[String], input: &Path, out: &Path, rules: Option<&Path>) -> Result<()> {
    let mut manifest = Manifest::new("template", argv);
    manifest.input(input)?;
    let rules = match rules {
        Some(p) => {
            manifest.input(p)?;
            read_rules(p)?
        }
        None => default_rules(),
    };
    let texts: Vec<(String, Vec<String>)> = read_corpus(input)?
        .iter()
        .map(|ex| (ex.entity_id().to_string(), realise_template(&ex.properties, &rules).concat()))
        .collect();
    write_texts(out, &texts)?;
    let metrics = json!({ "documents": texts.len(), "tokens": texts.iter().map(|t| t.1.len()).sum::<usize>() });
    finish(manifest, out, &[out], metrics)
}

/// Candidates are matched to references by entity id; with
/// `first_sentence` both sides are cut to their first sentence.
pub fn eval_bleu(
    argv: &[String],
    cand: &Path,
    refs: &[PathBuf],
    first: bool,
    smoothed: bool,
    out: Option<&Path>,
) -> Result<()> {
    let mut manifest = Manifest::new("eval bleu", argv);
    manifest.input(cand)?;
    let cut = |t: Vec<String>| if first { first_sentence(&t) } else { t };
    let mut by_id: HashMap<String, Vec<Vec<String>>> = HashMap::new();
    for path in refs {
        manifest.input(path)?;
        for (id, toks) in read_texts(path)? {
            by_id.entry(id).or_default().push(cut(toks));
        }
    }
    let mut candidates = Vec::new();
    let mut references = Vec::new();
    for (id, toks) in read_texts(cand)? {
        let r = by_id
            .get(&id)
            .ok_or_else(|| Error::Data(format!("no reference for {id}")))?;
        candidates.push(cut(toks));
        references.push(r.clone());
    }
    let smoothing = if smoothed { Smoothing::AddOne } else { Smoothing::None };
    let report = bleu(&candidates, &references, smoothing)?;
    let mut text = report.to_string();
    let _ = writeln!(text, "\nsegments\t{}", candidates.len());
    match out {
        Some(path) => {
            write_text(path, &text)?;
            finish(manifest, path, &[path], to_json(&report))
        }
        None => {
            emit(&text);
            Ok(())
        }
    }
}

/// Reruns a recorded invocation from its working directory and compares
/// the new manifest with the old one.
pub fn rerun(path: &Path, run: fn(&[String]) -> u8) -> Result<()> {
    let path = std::fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
    let old = Manifest::load(&path)?;
    let changed = old.changed_inputs();
    if !changed.is_empty() {
        return Err(Error::Data(format!("inputs changed since the recorded run: {}", changed.join(", "))));
    }
    std::env::set_current_dir(&old.cwd).map_err(|e| Error::io(&old.cwd, e))?;
    let code = run(&old.argv);
    if code != 0 {
        return Err(Error::Config(format!("rerun exited with status {code}")));
    }
    let new = Manifest::load(&path)?;
    let diff = old.differences(&new);
    if diff.is_empty() {
        emit(&format!("identical\t{}\n", path.display()));
        Ok(())
    } else {
        // the rerun overwrote the manifest; keep the old one for inspection
        old.save(&sidecar(&path, ".previous"))?;
        Err(Error::Data(format!("rerun diverged in {}", diff.join(", "))))
    }
}
