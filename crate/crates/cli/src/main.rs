//! `treenmt`: data preparation, training, translation, and evaluation for
//! the tree-structured NMT decoder.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use treenmt_cli::{bleu_by_length, corpus_bleu, length_diff_histogram};
use treenmt_core::bracket::{read_bracketed, write_bracketed};
use treenmt_core::builders::build_targets;
use treenmt_core::conll::read_conll;
use treenmt_core::corpus::read_lines;
use treenmt_core::derivation::canonical_derivation;
use treenmt_core::grammar::Grammar;
use treenmt_core::tree::Tree;
use treenmt_core::vocab::Vocab;
use treenmt_core::{join_subwords, BpeModel, TreeVariant};
use treenmt_model::{
    beam_decode, checkpoint_precision, greedy_decode, Config, Model, ModelError,
    Precision, Target, Trainer,
};
use treenmt_tensor::Scalar;

#[derive(Parser)]
#[command(name = "treenmt", about = "Tree-structured decoding for NMT", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a BPE merge table from tokenized text.
    BpeLearn {
        /// Input file(s); passing several learns one joint model.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment tokenized text with a learned BPE model.
    BpeApply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build training trees for one target-structure variant.
    BuildTrees {
        #[arg(long)]
        variant: TreeVariant,
        /// Raw tokenized target sentences.
        #[arg(long)]
        tgt: PathBuf,
        /// Parsed constituency trees (con / con-null variants).
        #[arg(long)]
        trees: Option<PathBuf>,
        /// CoNLL dependency blocks (dep variant).
        #[arg(long)]
        deps: Option<PathBuf>,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the CFG from built trees and write the grammar file.
    ExtractGrammar {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the canonical derivation of each tree, one step per line.
    DumpDerivations {
        #[arg(long)]
        trees: PathBuf,
    },
    /// Train a model; logs `step<TAB>loss<TAB>dev-loss` lines.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Source sentences (pre-segmented subwords).
        #[arg(long)]
        src: PathBuf,
        /// Built trees (tree variants) or target subword text (seq2seq).
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        dev_src: Option<PathBuf>,
        #[arg(long)]
        dev_trees: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate source sentences with a trained checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the decoded trees in bracketed form.
        #[arg(long)]
        dump_trees: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Per-length-bucket BLEU and the length-difference histogram.
    AnalyzeLength {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Second system for gain columns.
        #[arg(long)]
        baseline_hyp: Option<PathBuf>,
        /// Comma-separated upper bucket edges.
        #[arg(long, default_value = "10,20,30,40")]
        buckets: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::BpeLearn { input, merges, out } => {
            let mut corpus = Vec::new();
            for path in &input {
                for line in read_lines(path)? {
                    corpus.push(tokenize(&line));
                }
            }
            let model = BpeModel::learn(&corpus, merges)?;
            model.save(&out)?;
            eprintln!("learned {} merges", model.merges().len());
        }
        Command::BpeApply { model, input, out } => {
            let model = BpeModel::load(&model)?;
            let mut buf = String::new();
            for line in read_lines(&input)? {
                buf.push_str(&model.apply(&tokenize(&line)).join(" "));
                buf.push('\n');
            }
            fs::write(&out, buf).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::BuildTrees {
            variant,
            tgt,
            trees,
            deps,
            bpe,
            out,
        } => {
            let targets: Vec<Vec<String>> =
                read_lines(&tgt)?.iter().map(|l| tokenize(l)).collect();
            let bpe = BpeModel::load(&bpe)?;
            let parses = trees.map(|p| read_bracketed(&p)).transpose()?;
            let dep_trees = deps.map(|p| read_conll(&p)).transpose()?;
            let built = build_targets(
                &targets,
                parses.as_deref(),
                dep_trees.as_deref(),
                variant,
                &bpe,
            )?;
            fs::write(&out, write_bracketed(&built))
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("built {} trees ({variant})", built.len());
        }
        Command::ExtractGrammar { trees, out } => {
            let trees = read_bracketed(&trees)?;
            let grammar = Grammar::extract(&trees)?;
            fs::write(&out, grammar.to_text())
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("extracted {} rules", grammar.len());
        }
        Command::DumpDerivations { trees } => {
            let trees = read_bracketed(&trees)?;
            let grammar = Grammar::extract(&trees)?;
            let mut text = String::new();
            for tree in &trees {
                text.push_str(&canonical_derivation(tree, &grammar)?.dump(&grammar));
                text.push('\n');
            }
            emit(&text);
        }
        Command::Train {
            config,
            src,
            trees,
            dev_src,
            dev_trees,
            out,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = Config::from_text(&text)?;
            match cfg.precision {
                Precision::F32 => run_train::<f32>(cfg, &src, &trees, dev_src, dev_trees, &out)?,
                Precision::F64 => run_train::<f64>(cfg, &src, &trees, dev_src, dev_trees, &out)?,
            }
        }
        Command::Translate {
            checkpoint,
            src,
            beam,
            out,
            dump_trees,
        } => match checkpoint_precision(&checkpoint)? {
            Precision::F32 => run_translate::<f32>(&checkpoint, &src, beam, &out, dump_trees)?,
            Precision::F64 => run_translate::<f64>(&checkpoint, &src, beam, &out, dump_trees)?,
        },
        Command::Evaluate { hyp, reference } => {
            let report = corpus_bleu(&read_lines(&hyp)?, &read_lines(&reference)?)?;
            let mut text = format!("bleu\t{:.2}\n", report.bleu);
            text.push_str(&format!("brevity_penalty\t{:.4}\n", report.brevity_penalty));
            text.push_str(&format!("length_ratio\t{:.4}\n", report.length_ratio()));
            text.push_str(&format!("hyp_len\t{}\n", report.hyp_len));
            text.push_str(&format!("ref_len\t{}\n", report.ref_len));
            for (n, p) in report.precisions.iter().enumerate() {
                text.push_str(&format!("precision{}\t{:.4}\n", n + 1, p));
            }
            emit(&text);
        }
        Command::AnalyzeLength {
            hyp,
            reference,
            baseline_hyp,
            buckets,
        } => {
            let hyps = read_lines(&hyp)?;
            let refs = read_lines(&reference)?;
            let edges: Vec<usize> = buckets
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse().context("bad bucket edge"))
                .collect::<Result<_>>()?;
            let system = bleu_by_length(&hyps, &refs, &edges)?;
            let baseline = baseline_hyp
                .map(|p| -> Result<_> { Ok(bleu_by_length(&read_lines(&p)?, &refs, &edges)?) })
                .transpose()?;

            let mut text = String::from("# BLEU by reference length\n");
            text.push_str(match &baseline {
                Some(_) => "bucket\tsentences\tbleu\tbaseline\tgain\n",
                None => "bucket\tsentences\tbleu\n",
            });
            for (i, bucket) in system.iter().enumerate() {
                let score = bucket.report.as_ref().map(|r| r.bleu).unwrap_or(0.0);
                match &baseline {
                    Some(base) => {
                        let b = base[i].report.as_ref().map(|r| r.bleu).unwrap_or(0.0);
                        text.push_str(&format!(
                            "{}\t{}\t{:.2}\t{:.2}\t{:+.2}\n",
                            bucket.range.label(),
                            bucket.sentences,
                            score,
                            b,
                            score - b
                        ));
                    }
                    None => text.push_str(&format!(
                        "{}\t{}\t{:.2}\n",
                        bucket.range.label(),
                        bucket.sentences,
                        score
                    )),
                }
            }
            text.push_str("\n# Length difference histogram (hyp - ref)\ndiff\tcount\n");
            for (diff, count) in length_diff_histogram(&hyps, &refs)? {
                text.push_str(&format!("{diff}\t{count}\n"));
            }
            emit(&text);
        }
    }
    Ok(())
}

fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

/// Write to stdout, exiting quietly when the consumer closed the pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout();
    let result = out.write_all(text.as_bytes()).and_then(|_| out.flush());
    if let Err(e) = result {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error writing to stdout: {e}");
        std::process::exit(1);
    }
}

/// Pair sources with targets, allowing the doubled tree count produced by
/// the binary-concat variant (each sentence contributes two trees).
fn pair_examples<T: Clone>(srcs: &[Vec<String>], targets: &[T]) -> Result<Vec<(Vec<String>, T)>> {
    if targets.len() == srcs.len() {
        Ok(srcs.iter().cloned().zip(targets.iter().cloned()).collect())
    } else if targets.len() == 2 * srcs.len() {
        let mut out = Vec::with_capacity(targets.len());
        for (i, src) in srcs.iter().enumerate() {
            out.push((src.clone(), targets[2 * i].clone()));
            out.push((src.clone(), targets[2 * i + 1].clone()));
        }
        Ok(out)
    } else {
        bail!(
            "{} target trees cannot align with {} source sentences",
            targets.len(),
            srcs.len()
        );
    }
}

type Dataset = Vec<(Vec<usize>, Target)>;

struct Prepared<F: Scalar> {
    model: Model<F>,
    train: Dataset,
    dev: Option<Dataset>,
}

fn prepare<F: Scalar>(
    cfg: Config,
    src_path: &Path,
    trees_path: &Path,
    dev_src: Option<PathBuf>,
    dev_trees: Option<PathBuf>,
) -> Result<Prepared<F>> {
    let srcs: Vec<Vec<String>> = read_lines(src_path)?.iter().map(|l| tokenize(l)).collect();
    let src_vocab = Vocab::build(srcs.iter().map(Vec::as_slice), cfg.src_vocab_size)?;

    if cfg.variant.is_tree() {
        let trees = read_bracketed(trees_path)?;
        let pairs = pair_examples(&srcs, &trees)?;
        let grammar = Grammar::extract(&trees)?;
        let leaves: Vec<Vec<String>> = trees.iter().map(Tree::leaves).collect();
        let tgt_vocab = Vocab::build(leaves.iter().map(Vec::as_slice), cfg.tgt_vocab_size)?;
        let model: Model<F> = Model::new(cfg, src_vocab.clone(), tgt_vocab, Some(grammar.clone()))?;
        let train = pairs
            .iter()
            .map(|(src, tree)| {
                Ok((
                    src_vocab.encode(src),
                    Target::Derivation(canonical_derivation(tree, &grammar)?),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let dev = prepare_dev_tree(&model, dev_src, dev_trees)?;
        Ok(Prepared { model, train, dev })
    } else {
        let tgt_lines: Vec<Vec<String>> =
            read_lines(trees_path)?.iter().map(|l| tokenize(l)).collect();
        if tgt_lines.len() != srcs.len() {
            bail!(
                "{} target lines for {} source lines",
                tgt_lines.len(),
                srcs.len()
            );
        }
        let tgt_vocab = Vocab::build(tgt_lines.iter().map(Vec::as_slice), cfg.tgt_vocab_size)?;
        let model: Model<F> = Model::new(cfg, src_vocab.clone(), tgt_vocab.clone(), None)?;
        let train = srcs
            .iter()
            .zip(&tgt_lines)
            .map(|(src, tgt)| {
                let mut ids = tgt_vocab.encode(tgt);
                ids.push(Vocab::EOS_ID);
                (src_vocab.encode(src), Target::Flat(ids))
            })
            .collect();
        let dev = match (dev_src, dev_trees) {
            (Some(ds), Some(dt)) => {
                let dsrcs: Vec<Vec<String>> =
                    read_lines(&ds)?.iter().map(|l| tokenize(l)).collect();
                let dtgts: Vec<Vec<String>> =
                    read_lines(&dt)?.iter().map(|l| tokenize(l)).collect();
                Some(
                    dsrcs
                        .iter()
                        .zip(&dtgts)
                        .map(|(s, t)| {
                            let mut ids = tgt_vocab.encode(t);
                            ids.push(Vocab::EOS_ID);
                            (src_vocab.encode(s), Target::Flat(ids))
                        })
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(Prepared { model, train, dev })
    }
}

fn prepare_dev_tree<F: Scalar>(
    model: &Model<F>,
    dev_src: Option<PathBuf>,
    dev_trees: Option<PathBuf>,
) -> Result<Option<Dataset>> {
    let (Some(ds), Some(dt)) = (dev_src, dev_trees) else {
        return Ok(None);
    };
    let srcs: Vec<Vec<String>> = read_lines(&ds)?.iter().map(|l| tokenize(l)).collect();
    let trees = read_bracketed(&dt)?;
    let pairs = pair_examples(&srcs, &trees)?;
    let grammar = model.grammar()?.clone();
    let mut out = Vec::new();
    let mut skipped = 0;
    for (src, tree) in &pairs {
        match canonical_derivation(tree, &grammar) {
            Ok(d) => out.push((model.src_vocab.encode(src), Target::Derivation(d))),
            Err(_) => skipped += 1, // dev tree uses an expansion unseen in training
        }
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} dev trees with out-of-grammar expansions");
    }
    Ok(Some(out))
}

fn run_train<F: Scalar>(
    cfg: Config,
    src: &Path,
    trees: &Path,
    dev_src: Option<PathBuf>,
    dev_trees: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let prepared = prepare::<F>(cfg, src, trees, dev_src, dev_trees)?;
    let mut trainer = Trainer::new(prepared.model);
    trainer.train(
        &prepared.train,
        prepared.dev.as_deref(),
        &mut |log| match log.dev_loss {
            Some(dev) => emit(&format!("{}\t{:.6}\t{:.6}\n", log.step, log.train_loss, dev)),
            None => emit(&format!("{}\t{:.6}\t-\n", log.step, log.train_loss)),
        },
    )?;
    trainer.model.save(out)?;
    eprintln!("saved checkpoint to {}", out.display());
    Ok(())
}

fn run_translate<F: Scalar>(
    checkpoint: &Path,
    src: &Path,
    beam: usize,
    out: &Path,
    dump_trees: Option<PathBuf>,
) -> Result<()> {
    let model: Model<F> = Model::load(checkpoint)?;
    if dump_trees.is_some() && !model.is_tree() {
        bail!("--dump-trees requires a tree-variant checkpoint");
    }
    let mut sentences = Vec::new();
    let mut trees = Vec::new();
    for line in read_lines(src)? {
        let ids = model.src_vocab.encode(&tokenize(&line));
        let limits = treenmt_model::DecodeLimits::from_config(&model.config, ids.len());
        let decoded = if beam <= 1 {
            greedy_decode(&model, &ids)
        } else {
            beam_decode(&model, &ids, beam, limits).map(|mut v| v.remove(0))
        };
        match decoded {
            Ok(output) => {
                sentences.push(join_subwords(&output.words).join(" "));
                if let Some(tree) = output.tree {
                    trees.push(tree);
                }
            }
            Err(ModelError::StepLimit { partial, .. })
            | Err(ModelError::DepthLimit { partial, .. }) => {
                eprintln!("warning: truncated decode, emitting partial output");
                sentences.push(join_subwords(&partial.words).join(" "));
                if model.is_tree() {
                    trees.push(partial.tree);
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut body = sentences.join("\n");
    body.push('\n');
    fs::write(out, body).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = dump_trees {
        fs::write(&path, write_bracketed(&trees))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
