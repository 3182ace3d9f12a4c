//! Subcommand implementations. Data goes to files (or stdout where noted);
//! short summaries go to `out`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use wordlattice::checkpoint::{self, shape_manifest};
use wordlattice::corpus::{corpus_files, ingest_corpus};
use wordlattice::encoder::{
    attention_summary, grad_check, AdamConfig, EncoderConfig, EncoderState, Preset, Trainer,
};
use wordlattice::instance_file::{read_instances, InstanceFormat, InstanceWriter, SCHEMA_VERSION};
use wordlattice::packing::PackReport;
use wordlattice::vocab::read_word_counts;
use wordlattice::{
    build_lattice, build_vocabulary, normalize_text, pack_document, Granularity, PackingConfig, PatternMatcher,
    Phase, PretrainInstance, Vocabulary,
};

use crate::config::Settings;
use crate::error::{input_err, CliError, CliResult};

const HISTOGRAM_BIN: usize = 16;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const CHECKPOINT_NAME: &str = "checkpoint.safetensors";
pub const METRICS_NAME: &str = "metrics.jsonl";

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| input_err(path.display(), e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| input_err(path.display(), e))
}

fn io(e: std::io::Error) -> CliError {
    CliError::Input(e.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn load_vocab(path: &Path) -> CliResult<Vocabulary> {
    let f = File::open(path).map_err(|e| input_err(path.display(), e))?;
    Vocabulary::read_from(BufReader::new(f)).map_err(|e| input_err(path.display(), e))
}

/// Contiguous, near-equal ranges; empty ranges are dropped.
pub fn shard_ranges(n: usize, shards: usize) -> Vec<Range<usize>> {
    let shards = shards.max(1);
    (0..shards)
        .map(|k| (k * n / shards)..((k + 1) * n / shards))
        .filter(|r| !r.is_empty())
        .collect()
}

fn shard_count(s: &Settings) -> CliResult<usize> {
    let n = s.get_or("shards", 1usize)?;
    if n == 0 {
        return Err(CliError::Config("--shards must be at least 1".into()));
    }
    Ok(n)
}

fn phase(s: &Settings) -> CliResult<Phase> {
    let n = s.get_or("phase", 1u8)?;
    Phase::from_number(n).ok_or_else(|| CliError::Config(format!("phase must be 1 or 2, got {n}")))
}

fn preset(s: &Settings) -> CliResult<Preset> {
    Ok(s.raw("preset").unwrap_or("toy").parse::<Preset>()?)
}

#[derive(Serialize)]
struct VocabSummary {
    entries: usize,
    special: usize,
    char: usize,
    word: usize,
    piece: usize,
    records: usize,
    rejected_records: usize,
    skipped_words: usize,
}

pub fn build_vocab(s: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let input = s.require_path("input")?;
    let output = s.require_path("output")?;
    let max_words = s.get_or("max_words", usize::MAX)?;
    let word_counts = match s.path("words") {
        Some(p) => {
            let f = File::open(&p).map_err(|e| input_err(p.display(), e))?;
            read_word_counts(BufReader::new(f)).map_err(|e| input_err(p.display(), e))?
        }
        None => Vec::new(),
    };
    let mut records: Vec<Vec<u8>> = Vec::new();
    for file in corpus_files(&input).map_err(|e| input_err(input.display(), e))? {
        let raw = read_bytes(&file)?;
        records.extend(raw.split(|&b| b == b'\n').map(|l| l.strip_suffix(b"\r").unwrap_or(l).to_vec()));
    }
    let (vocab, report) = build_vocabulary(&records, &word_counts, max_words);
    let mut w = create(&output)?;
    vocab.write_to(&mut w)?;
    w.flush().map_err(io)?;
    let summary = VocabSummary {
        entries: vocab.len(),
        special: vocab.count_by(Granularity::Special),
        char: vocab.count_by(Granularity::Character),
        word: vocab.count_by(Granularity::Word),
        piece: vocab.count_by(Granularity::WordPiece),
        records: report.records,
        rejected_records: report.rejected_records,
        skipped_words: report.skipped_words,
    };
    writeln!(out, "{}", serde_json::to_string(&summary).expect("serializable")).map_err(io)
}

/// Lattice records for `lines`, in order, plus the number of lines skipped
/// because they were empty after normalization.
pub fn lattice_records(
    lines: &[&[u8]],
    vocab: &Vocabulary,
    matcher: &PatternMatcher,
    shards: usize,
) -> CliResult<(Vec<String>, usize)> {
    let ranges = shard_ranges(lines.len(), shards);
    let results: Vec<CliResult<(Vec<String>, usize)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .iter()
            .map(|r| {
                let part = &lines[r.clone()];
                scope.spawn(move || {
                    let mut records = Vec::new();
                    let mut skipped = 0;
                    for line in part {
                        let text = normalize_text(line).text;
                        if text.is_empty() {
                            skipped += 1;
                            continue;
                        }
                        records.push(build_lattice(&text, matcher, vocab)?.to_json_line());
                    }
                    Ok((records, skipped))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("lattice worker panicked")).collect()
    });
    let mut records = Vec::new();
    let mut skipped = 0;
    for r in results {
        let (rec, sk) = r?;
        records.extend(rec);
        skipped += sk;
    }
    Ok((records, skipped))
}

pub fn lattice(s: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let vocab = load_vocab(&s.require_path("vocab")?)?;
    let input = s.require_path("input")?;
    let shards = shard_count(s)?;
    let raw = read_bytes(&input)?;
    let mut lines: Vec<&[u8]> = raw.split(|&b| b == b'\n').map(|l| l.strip_suffix(b"\r").unwrap_or(l)).collect();
    if raw.ends_with(b"\n") {
        lines.pop();
    }
    let matcher = PatternMatcher::new(&vocab);
    let (records, skipped) = lattice_records(&lines, &vocab, &matcher, shards)?;
    let mut body = String::new();
    for r in &records {
        body.push_str(r);
        body.push('\n');
    }
    match s.path("output") {
        Some(p) => {
            let mut w = create(&p)?;
            w.write_all(body.as_bytes()).map_err(io)?;
            w.flush().map_err(io)?;
            writeln!(out, "{{\"records\":{},\"skipped_lines\":{}}}", records.len(), skipped).map_err(io)?;
        }
        None => {
            out.write_all(body.as_bytes()).map_err(io)?;
            eprintln!("records: {}, skipped lines: {skipped}", records.len());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramBin {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShardEntry {
    pub file: String,
    pub instances: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceConfigEcho {
    pub phase: u8,
    pub char_budget: usize,
    pub token_cap: usize,
    pub mask_ratio: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
    pub seed: u64,
    pub shards: usize,
    pub format: InstanceFormat,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceManifest {
    pub schema_version: u8,
    pub config: InstanceConfigEcho,
    pub inputs: Vec<FileDigest>,
    pub vocab: FileDigest,
    pub documents: usize,
    pub decode_failures: usize,
    pub instances: usize,
    pub tokens: usize,
    pub content_tokens: usize,
    pub targets: usize,
    pub achieved_mask_rate: f64,
    pub split_sentences: usize,
    pub skipped_chunks: usize,
    pub token_histogram: Vec<HistogramBin>,
    pub shards: Vec<ShardEntry>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn relative_name(root: &Path, p: &Path) -> String {
    if root.is_dir() {
        p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned()
    } else {
        file_name(p)
    }
}

pub fn make_instances(s: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let vocab_path = s.require_path("vocab")?;
    let input = s.require_path("input")?;
    let output = s.require_path("output")?;
    let phase = phase(s)?;
    let seed = s.get_or("seed", 0u64)?;
    let shards = shard_count(s)?;
    let format: InstanceFormat = s.raw("format").unwrap_or("jsonl").parse()?;
    let cfg = PackingConfig::for_phase(phase, s.get_or("mask_ratio", wordlattice::msp::DEFAULT_MASK_RATIO)?);
    cfg.validate()?;

    let vocab_bytes = read_bytes(&vocab_path)?;
    let vocab = Vocabulary::read_from(&vocab_bytes[..]).map_err(|e| input_err(vocab_path.display(), e))?;
    let matcher = PatternMatcher::new(&vocab);
    let files = corpus_files(&input).map_err(|e| input_err(input.display(), e))?;
    let mut inputs = Vec::with_capacity(files.len());
    for f in &files {
        inputs.push(FileDigest {
            name: relative_name(&input, f),
            sha256: sha256_hex(&read_bytes(f)?),
        });
    }
    let corpus = ingest_corpus(&input).map_err(|e| input_err(input.display(), e))?;
    fs::create_dir_all(&output).map_err(|e| input_err(output.display(), e))?;

    let ranges = shard_ranges(corpus.documents.len(), shards);
    let docs = &corpus.documents;
    let (vocab_ref, matcher_ref, cfg_ref) = (&vocab, &matcher, &cfg);
    let results: Vec<CliResult<(Vec<PretrainInstance>, PackReport)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let part = &docs[r.clone()];
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64);
                    let mut report = PackReport::default();
                    let mut insts = Vec::new();
                    for doc in part {
                        insts.extend(pack_document(doc, vocab_ref, matcher_ref, cfg_ref, &mut rng, &mut report)?);
                    }
                    Ok((insts, report))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("instance worker panicked")).collect()
    });

    let ext = match format {
        InstanceFormat::Jsonl => "jsonl",
        InstanceFormat::Binary => "bin",
    };
    let mut shard_entries = Vec::new();
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut n_inst, mut tokens, mut content, mut targets) = (0, 0, 0, 0);
    let (mut split_sentences, mut skipped_chunks) = (0, 0);
    for (k, r) in results.into_iter().enumerate() {
        let (insts, report) = r?;
        split_sentences += report.split_sentences;
        skipped_chunks += report.skipped_chunks;
        let mut w = InstanceWriter::new(Vec::new(), format)?;
        for inst in &insts {
            assert!(inst.len() <= cfg.token_cap, "instance exceeds the token cap");
            w.write(inst)?;
            tokens += inst.len();
            content += inst.content_tokens();
            targets += inst.msp_targets.len();
            *hist.entry(inst.len() / HISTOGRAM_BIN).or_default() += 1;
        }
        n_inst += insts.len();
        let bytes = w.into_inner();
        let name = format!("shard-{k:05}.{ext}");
        fs::write(output.join(&name), &bytes).map_err(|e| input_err(output.join(&name).display(), e))?;
        shard_entries.push(ShardEntry {
            file: name,
            instances: insts.len(),
            sha256: sha256_hex(&bytes),
        });
    }

    let manifest = InstanceManifest {
        schema_version: SCHEMA_VERSION,
        config: InstanceConfigEcho {
            phase: match phase {
                Phase::One => 1,
                Phase::Two => 2,
            },
            char_budget: cfg.char_budget,
            token_cap: cfg.token_cap,
            mask_ratio: cfg.mask_ratio,
            mask_prob: cfg.policy.mask_prob,
            random_prob: cfg.policy.random_prob,
            seed,
            shards,
            format,
        },
        inputs,
        vocab: FileDigest {
            name: file_name(&vocab_path),
            sha256: sha256_hex(&vocab_bytes),
        },
        documents: corpus.documents.len(),
        decode_failures: corpus.decode_failures,
        instances: n_inst,
        tokens,
        content_tokens: content,
        targets,
        achieved_mask_rate: if content == 0 { 0.0 } else { targets as f64 / content as f64 },
        split_sentences,
        skipped_chunks,
        token_histogram: hist
            .into_iter()
            .map(|(b, count)| HistogramBin {
                lo: b * HISTOGRAM_BIN,
                hi: b * HISTOGRAM_BIN + HISTOGRAM_BIN - 1,
                count,
            })
            .collect(),
        shards: shard_entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    fs::write(output.join(MANIFEST_NAME), text).map_err(io)?;
    writeln!(
        out,
        "{{\"instances\":{},\"achieved_mask_rate\":{:.4}}}",
        manifest.instances, manifest.achieved_mask_rate
    )
    .map_err(io)
}

/// Instance files under `path` (a file, or a directory's `.jsonl`/`.bin`
/// files in name order).
pub fn load_instance_files(path: &Path) -> CliResult<Vec<PretrainInstance>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| input_err(path.display(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("jsonl" | "bin")))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let bytes = read_bytes(&f)?;
        out.extend(read_instances(&bytes[..]).map_err(|e| input_err(f.display(), e))?);
    }
    Ok(out)
}

/// Instance indices for 0-based `step`: a fresh shuffle per epoch, so any
/// step can be reproduced without replaying earlier ones.
pub fn batch_indices(n: usize, batch_size: usize, step: u64, seed: u64, cache: &mut HashMap<u64, Vec<usize>>) -> Vec<usize> {
    (0..batch_size)
        .map(|k| {
            let p = step as usize * batch_size + k;
            let epoch = (p / n) as u64;
            let perm = cache.entry(epoch).or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1 << 32 | epoch);
                let mut v: Vec<usize> = (0..n).collect();
                v.shuffle(&mut rng);
                v
            });
            perm[p % n]
        })
        .collect()
}

fn check_instances(insts: &[PretrainInstance], cfg: &EncoderConfig) -> CliResult<()> {
    for (i, inst) in insts.iter().enumerate() {
        if let Some(id) = inst.token_ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(CliError::Config(format!(
                "instance {i}: token id {id} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if let Some(p) = inst.ends.iter().find(|&&e| e >= cfg.l_max) {
            return Err(CliError::Config(format!(
                "instance {i}: position {p} exceeds the position table of {}",
                cfg.l_max
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    encoder: EncoderConfig,
    adam: AdamConfig,
    seed: u64,
    step: u64,
    batch_size: usize,
    instances: usize,
    tensors: Vec<(String, Vec<usize>)>,
    settings: &'a BTreeMap<String, String>,
}

pub fn train_toy(s: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let vocab = load_vocab(&s.require_path("vocab")?)?;
    let output = s.require_path("output")?;
    let steps = s.get_or("steps", 200u64)?;
    let seed = s.get_or("seed", 0u64)?;
    let batch_size = s.get_or("batch_size", 32usize)?;
    if batch_size == 0 {
        return Err(CliError::Config("--batch-size must be at least 1".into()));
    }
    let mut trainer = match s.path("resume") {
        Some(p) => {
            let t = checkpoint::load_trainer(&p).map_err(|e| match e {
                wordlattice::Error::Shape(_) | wordlattice::Error::Config(_) => CliError::from(e),
                other => input_err(p.display(), other),
            })?;
            if t.state.config.vocab_size != vocab.len() {
                return Err(CliError::Config(format!(
                    "checkpoint vocabulary size {} does not match vocabulary of {}",
                    t.state.config.vocab_size,
                    vocab.len()
                )));
            }
            if s.raw("preset").is_some() {
                let want = EncoderConfig::preset(preset(s)?, vocab.len());
                if want != t.state.config {
                    return Err(CliError::Config("checkpoint does not match the requested preset".into()));
                }
            }
            t
        }
        None => {
            let cfg = EncoderConfig::preset(preset(s)?, vocab.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = EncoderState::init(cfg, &mut rng)?;
            let adam = AdamConfig {
                lr: s.get_or("lr", 5e-3)?,
                warmup_steps: s.get_or("warmup", 20u64)?,
                ..AdamConfig::default()
            };
            Trainer::new(state, adam, seed)
        }
    };
    let instances = load_instance_files(&s.require_path("input")?)?;
    if instances.is_empty() {
        return Err(CliError::Input("no instances to train on".into()));
    }
    check_instances(&instances, &trainer.state.config)?;
    fs::create_dir_all(&output).map_err(|e| input_err(output.display(), e))?;

    if s.flag("grad_check")? {
        let samples = s.get_or("grad_samples", 8usize)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = grad_check(&trainer.state, &instances[0], 1e-5, samples, &mut rng)?;
        let worst = report.worst().expect("at least one tensor");
        writeln!(
            out,
            "grad-check: max relative error {:.3e} (worst tensor {}, {} tensors)",
            worst.max_rel_error,
            worst.name,
            report.groups.len()
        )
        .map_err(io)?;
    }

    let metrics_path = output.join(METRICS_NAME);
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(s.path("resume").is_some())
        .write(true)
        .truncate(s.path("resume").is_none())
        .open(&metrics_path)
        .map_err(|e| input_err(metrics_path.display(), e))?;
    let mut perms = HashMap::new();
    let mut first = None;
    let mut last = None;
    for _ in 0..steps {
        let idx = batch_indices(instances.len(), batch_size, trainer.step(), seed, &mut perms);
        let batch: Vec<PretrainInstance> = idx.iter().map(|&i| instances[i].clone()).collect();
        let m = trainer.train_step(&batch)?;
        writeln!(metrics, "{}", serde_json::to_string(&m).expect("serializable")).map_err(io)?;
        first.get_or_insert(m);
        last = Some(m);
    }
    checkpoint::save_trainer(&trainer, output.join(CHECKPOINT_NAME))?;
    let manifest = TrainManifest {
        encoder: trainer.state.config,
        adam: trainer.config,
        seed: trainer.seed,
        step: trainer.step(),
        batch_size,
        instances: instances.len(),
        tensors: shape_manifest(&trainer.state),
        settings: s.echo(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    fs::write(output.join(MANIFEST_NAME), text).map_err(io)?;
    if let (Some(a), Some(b)) = (first, last) {
        writeln!(
            out,
            "step {}: loss {:.4} -> {:.4} ({:.1}% lower)",
            b.step,
            a.loss,
            b.loss,
            100.0 * (1.0 - b.loss / a.loss)
        )
        .map_err(io)?;
    } else {
        writeln!(out, "step {}: no training steps run", trainer.step()).map_err(io)?;
    }
    Ok(())
}

pub fn attn_summary(s: &Settings, out: &mut dyn Write) -> CliResult<()> {
    let vocab = load_vocab(&s.require_path("vocab")?)?;
    let ckpt = s.require_path("checkpoint")?;
    let state = checkpoint::load_params(&ckpt).map_err(|e| match e {
        wordlattice::Error::Shape(_) | wordlattice::Error::Config(_) => CliError::from(e),
        other => input_err(ckpt.display(), other),
    })?;
    if state.config.vocab_size != vocab.len() {
        return Err(CliError::Config(format!(
            "checkpoint vocabulary size {} does not match vocabulary of {}",
            state.config.vocab_size,
            vocab.len()
        )));
    }
    let text = match s.raw("text") {
        Some(t) => t.to_string(),
        None => {
            let input = s.require_path("input")?;
            let raw = read_bytes(&input)?;
            raw.split(|&b| b == b'\n')
                .map(|l| normalize_text(l).text)
                .find(|t| !t.is_empty())
                .ok_or_else(|| CliError::Input(format!("{}: no non-empty line", input.display())))?
        }
    };
    let lat = build_lattice(&text, &PatternMatcher::new(&vocab), &vocab)?;
    let rows = attention_summary(&state, &lat)?;
    writeln!(out, "token\ts\te\tscore").map_err(io)?;
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{:.6}", r.surface, r.s, r.e, r.score).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_ranges_cover_in_order() {
        let r = shard_ranges(10, 3);
        assert_eq!(r, vec![0..3, 3..6, 6..10]);
        assert_eq!(shard_ranges(2, 5), vec![0..1, 1..2]);
        assert!(shard_ranges(0, 2).is_empty());
    }

    #[test]
    fn batches_are_reproducible_per_step() {
        let mut a = HashMap::new();
        let mut b = HashMap::new();
        let all: Vec<Vec<usize>> = (0..7).map(|t| batch_indices(10, 4, t, 3, &mut a)).collect();
        assert_eq!(batch_indices(10, 4, 5, 3, &mut b), all[5]);
        let mut epoch0: Vec<usize> = all[..2].concat();
        epoch0.extend(&all[2][..2]);
        epoch0.sort();
        assert_eq!(epoch0, (0..10).collect::<Vec<_>>());
    }
}
