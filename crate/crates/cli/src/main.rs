use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use autodidact::clock::SystemClock;
use autodidact::config::ServiceConfig;
use autodidact::demo::run_demo;
use autodidact::engine::{Backends, Engine};
use autodidact::metrics::{evaluate_pipeline, render_table, EvalConfig, EvalItem};
use autodidact::retrieval::{
    build_raft_dataset, chunk_document, clean_documents, split_dataset, ChunkConfig, Document,
    KnowledgeBase, QaPair, RaftConfig, RagPipeline, SplitRatios,
};
use autodidact::store::Store;
use clap::{Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "autodidact", version, about = "Self-directed teaching engine")]
struct Cli {
    /// JSON config file; AUTODIDACT_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP service.
    Serve,
    /// Clean and chunk a directory of .txt/.md documents into chunks.jsonl.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        semantic: bool,
    },
    /// Embed chunks and write a retrieval index directory.
    Index {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a RAFT training set from question/oracle/answer rows.
    RaftBuild {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 0.8)]
        p_oracle: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle a JSONL file into train/test/validation files next to it.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate the RAG pipeline against reference answers.
    Eval {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write per-item scores here.
        #[arg(long)]
        details: Option<PathBuf>,
        /// Print the summary table.
        #[arg(long)]
        text: bool,
    },
    /// Print a learner's frozen deck.
    ExportDeck {
        #[arg(long)]
        user: String,
        #[arg(long)]
        node: String,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Seeded end-to-end run on the mock backends; prints the report JSON.
    Demo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for l in lines {
        f.write_all(l.as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn ingest(cfg: &ServiceConfig, corpus: &Path, out: &Path, semantic: bool) -> Result<usize> {
    let mut paths: Vec<PathBuf> = fs::read_dir(corpus)
        .with_context(|| format!("reading {}", corpus.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "md")))
        .collect();
    paths.sort();
    let mut raw = Vec::new();
    for p in &paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .context("file name is not UTF-8")?;
        raw.push(Document::new(id, fs::read_to_string(p)?));
    }
    let chunk_cfg = ChunkConfig {
        chunk_size: cfg.chunk_size,
        overlap: cfg.chunk_overlap,
        semantic,
    };
    let mut chunks = Vec::new();
    for d in clean_documents(raw) {
        chunks.extend(chunk_document(&d, &chunk_cfg)?);
    }
    let mut f = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    KnowledgeBase::write_chunks(&chunks, &mut f)?;
    Ok(chunks.len())
}

#[derive(Deserialize)]
struct EvalRow {
    question: String,
    #[serde(alias = "reference")]
    answer: String,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = ServiceConfig::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Serve => {
            let backends = Backends::from_config(&cfg)?;
            let store = Store::open(&cfg.data_dir)?;
            let removed = store.recover()?;
            if removed > 0 {
                tracing::warn!(removed, "removed leftover temp files");
            }
            let engine = Engine::new(store, backends, cfg.clone(), Arc::new(SystemClock))?;
            let state = autodidact_server::AppState {
                engine: Arc::new(engine),
                auth_token: cfg.auth_token.clone(),
            };
            tokio::runtime::Runtime::new()?
                .block_on(autodidact_server::serve(state, &cfg.listen))?;
        }
        Cmd::Ingest {
            corpus,
            out,
            semantic,
        } => {
            let n = ingest(&cfg, &corpus, &out, semantic)?;
            eprintln!("wrote {n} chunks to {}", out.display());
        }
        Cmd::Index { chunks, out } => {
            let backends = Backends::from_config(&cfg)?;
            let f =
                fs::File::open(&chunks).with_context(|| format!("opening {}", chunks.display()))?;
            let chunks = KnowledgeBase::read_chunks(BufReader::new(f))?;
            let kb = KnowledgeBase::build(chunks, backends.emb.as_ref())?;
            kb.save(&out)?;
            eprintln!(
                "indexed {} chunks (dim {}) into {}",
                kb.len(),
                kb.index().dim(),
                out.display()
            );
        }
        Cmd::RaftBuild {
            qa,
            index,
            k,
            p_oracle,
            seed,
            out,
        } => {
            let pairs: Vec<QaPair> = read_jsonl(&qa)?;
            let kb = KnowledgeBase::load(&index)?;
            let rows = build_raft_dataset(&pairs, &kb, &RaftConfig { k, p_oracle, seed })?;
            write_lines(
                &out,
                rows.iter()
                    .map(|r| serde_json::to_string(r).expect("row serializes")),
            )?;
            let with_oracle = rows.iter().filter(|r| r.oracle_present).count();
            eprintln!(
                "wrote {} examples ({with_oracle} with oracle) to {}",
                rows.len(),
                out.display()
            );
        }
        Cmd::Split {
            input,
            ratios,
            seed,
            out_dir,
        } => {
            let parts: Vec<f64> = ratios
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("ratios must be three comma-separated numbers")?;
            let [train, test, validation] = parts[..] else {
                bail!("ratios must have exactly three parts, got {}", parts.len());
            };
            let ratios = SplitRatios::new(train, test, validation)?;
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let lines: Vec<String> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect();
            let split = split_dataset(lines, ratios, seed)?;
            let dir = out_dir
                .or_else(|| input.parent().map(Path::to_path_buf))
                .unwrap_or_default();
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
            for (name, part) in [
                ("train", split.train),
                ("test", split.test),
                ("validation", split.validation),
            ] {
                let path = dir.join(format!("{stem}.{name}.jsonl"));
                eprintln!("{name}: {} rows -> {}", part.len(), path.display());
                write_lines(&path, part)?;
            }
        }
        Cmd::Eval {
            qa,
            index,
            report,
            details,
            text,
        } => {
            let backends = Backends::from_config(&cfg)?;
            let rows: Vec<EvalRow> = read_jsonl(&qa)?;
            let items: Vec<EvalItem> = rows
                .into_iter()
                .map(|r| EvalItem {
                    question: r.question,
                    reference: r.answer,
                })
                .collect();
            let kb = KnowledgeBase::load(&index)?;
            let pipeline = RagPipeline {
                kb: &kb,
                gen: backends.gen.as_ref(),
                emb: backends.emb.as_ref(),
                k: cfg.retrieval_k,
                seed: cfg.seed,
            };
            let eval_cfg = EvalConfig {
                relevance_threshold: cfg.relevance_threshold,
                ..EvalConfig::default()
            };
            let detail = evaluate_pipeline(&items, &pipeline, backends.emb.as_ref(), &eval_cfg)?;
            fs::write(
                &report,
                serde_json::to_string_pretty(&detail.report)? + "\n",
            )?;
            if let Some(p) = details {
                fs::write(p, serde_json::to_string_pretty(&detail)? + "\n")?;
            }
            if text {
                print!("{}", render_table(&detail.report));
            }
        }
        Cmd::ExportDeck { user, node, format } => {
            let store = Store::open(&cfg.data_dir)?;
            let engine = Engine::new(
                store,
                Backends::mock(cfg.seed),
                cfg.clone(),
                Arc::new(SystemClock),
            )?;
            let bytes = engine.export_deck(&user, &node, &format)?;
            std::io::stdout().write_all(&bytes)?;
        }
        Cmd::Demo { seed, out } => {
            let dir = tempfile::tempdir()?;
            let json = run_demo(seed, dir.path())?.to_json();
            match out {
                Some(p) => fs::write(p, json)?,
                None => print!("{json}"),
            }
        }
    }
    Ok(())
}
