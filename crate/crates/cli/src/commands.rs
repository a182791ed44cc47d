use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use epilogue::catalog::{schema_digest, sha256_file, Catalog, Manifest, SplitFile};
use epilogue::env::{generate, scripted_agent, AgentKind, GridPickPlace};
use epilogue::model::{tree_to_json, validate_episode, Alignment, StepRecord};
use epilogue::store::{recover, DatasetMetadata, Reader, Writer, WriterOptions, VERSION};
use epilogue::transforms::{self, shift_alignment};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::histogram::{to_table, DEFAULT_BINS};
use crate::pipeline::{HistogramSpec, InputSpec, PipelineSpec, Report, ReportSpec};

#[derive(Debug, Parser)]
#[command(name = "epilogue", version, about = "Record, inspect and transform episodic RL datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a file's header, schema and episode index.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        episode: Option<u64>,
        /// Requires --episode.
        #[arg(long, requires = "episode")]
        step: Option<u64>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Check every episode's flags, shapes and fills.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Summary statistics of a step field across one or more files.
    Stats {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Step field selector such as `reward` or `observation/pos`, or
        /// `return` for per-episode returns.
        #[arg(long)]
        field: String,
        #[arg(long)]
        histogram: bool,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Rewrite a file in another step alignment.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        alignment: Alignment,
        #[arg(long)]
        uncompressed: bool,
    },
    /// Generate episodes with a scripted agent.
    Record(RecordArgs),
    /// Run a pipeline document.
    Pipeline {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Serve the collection API and session endpoint.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Manage a dataset catalog.
    Catalog {
        #[arg(long)]
        store: PathBuf,
        #[command(subcommand)]
        command: CatalogCommand,
    },
    /// Rebuild the index of a damaged file.
    Recover {
        file: PathBuf,
        /// Writes the recovered episodes as a new, intact file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long)]
    pub env: String,
    /// `planner` or `random`.
    #[arg(long)]
    pub agent: String,
    /// Exploration rate of the planner.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long)]
    pub episodes: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = epilogue::env::TIME_LIMIT)]
    pub max_steps: u32,
    #[arg(long)]
    pub uncompressed: bool,
}

#[derive(Debug, Subcommand)]
pub enum CatalogCommand {
    /// Verify and store a manifest.
    Register { manifest: PathBuf },
    /// Registered datasets and versions.
    List,
    /// Resolve a split expression such as `train[:10]`.
    Load {
        dataset: String,
        split: String,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Build a manifest for local record files.
    NewManifest {
        #[arg(long)]
        name: String,
        #[arg(long)]
        version: String,
        #[arg(long)]
        citation: String,
        /// `split=path`, repeatable.
        #[arg(long = "split", required = true, value_parser = parse_split_file)]
        splits: Vec<(String, PathBuf)>,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, default_value = "")]
        license: String,
        #[arg(long, default_value = "")]
        homepage: String,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_split_file(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (split, path) = s.split_once('=').ok_or_else(|| format!("expected split=path, got {s:?}"))?;
    Ok((split.to_string(), PathBuf::from(path)))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Inspect {
            file,
            episode,
            step,
            format,
        } => inspect(&file, episode, step, format, out),
        Command::Validate { file, format } => validate(&file, format, out),
        Command::Stats {
            files,
            field,
            histogram,
            bins,
            format,
        } => stats(files, field, histogram, bins, format, out),
        Command::Convert {
            input,
            output,
            alignment,
            uncompressed,
        } => convert(&input, &output, alignment, uncompressed, out),
        Command::Record(args) => record(&args, out),
        Command::Pipeline { spec, format } => {
            let report = PipelineSpec::load(&spec)?.run()?;
            print_report(&report, format, out)
        }
        Command::Serve { root, addr } => serve(root, addr, out),
        Command::Catalog { store, command } => catalog(&store, command, out),
        Command::Recover { file, out: dest } => recover_file(&file, dest.as_deref(), out),
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn emit_json(out: &mut dyn Write, value: &Value) -> Result<()> {
    emit(out, serde_json::to_string_pretty(value).expect("json values serialize"))
}

fn compact(value: &impl serde::Serialize) -> String {
    serde_json::to_string(value).expect("values serialize")
}

fn step_json(i: u64, j: u64, step: &StepRecord) -> Value {
    json!({
        "episode": i,
        "step": j,
        "is_first": step.is_first,
        "is_last": step.is_last,
        "is_terminal": step.is_terminal,
        "observation": tree_to_json(&step.observation),
        "action": tree_to_json(&step.action),
        "reward": tree_to_json(&step.reward),
        "discount": tree_to_json(&step.discount),
        "metadata": tree_to_json(&step.metadata),
    })
}

fn inspect(file: &Path, episode: Option<u64>, step: Option<u64>, format: Format, out: &mut dyn Write) -> Result<()> {
    let reader = Reader::open(file)?;
    let doc = match (episode, step) {
        (Some(i), Some(j)) => step_json(i, j, &reader.get_step(i, j)?),
        (Some(i), None) => {
            let ep = reader.get_episode(i)?;
            json!({
                "episode": i,
                "num_steps": ep.len(),
                "metadata": tree_to_json(&ep.metadata),
                "flags": ep.steps.iter().map(|s| [s.is_first, s.is_last, s.is_terminal]).collect::<Vec<_>>(),
            })
        }
        _ => {
            let lens: Vec<u64> = reader.index().iter().map(|e| e.num_steps).collect();
            json!({
                "file": file,
                "version": VERSION,
                "alignment": reader.alignment(),
                "metadata": reader.dataset_metadata().to_document(),
                "schema": reader.schema().to_document(),
                "episodes": reader.episode_count(),
                "total_steps": reader.total_steps(),
                "num_steps": lens,
            })
        }
    };
    if format == Format::Json {
        return emit_json(out, &doc);
    }
    match (episode, step) {
        (Some(_), Some(_)) => {
            for key in ["episode", "step", "is_first", "is_last", "is_terminal"] {
                emit(out, format!("{key}={}", doc[key]))?;
            }
            for key in ["observation", "action", "reward", "discount", "metadata"] {
                emit(out, format!("{key}: {}", compact(&doc[key])))?;
            }
        }
        (Some(i), None) => {
            emit(out, format!("episode {i}"))?;
            emit(out, format!("num_steps: {}", doc["num_steps"]))?;
            emit(out, format!("metadata: {}", compact(&doc["metadata"])))?;
            emit(out, "step\tis_first\tis_last\tis_terminal")?;
            for (j, f) in doc["flags"].as_array().into_iter().flatten().enumerate() {
                emit(out, format!("{j}\t{}\t{}\t{}", f[0], f[1], f[2]))?;
            }
        }
        _ => {
            emit(out, format!("file: {}", file.display()))?;
            emit(out, format!("format version: {VERSION}"))?;
            emit(out, format!("alignment: {}", reader.alignment()))?;
            emit(out, format!("metadata: {}", compact(&doc["metadata"])))?;
            emit(out, "schema:")?;
            emit(out, serde_json::to_string_pretty(&doc["schema"]).expect("json values serialize"))?;
            emit(out, format!("episodes: {}", doc["episodes"]))?;
            emit(out, format!("total_steps: {}", doc["total_steps"]))?;
            emit(out, format!("num_steps: {}", compact(&doc["num_steps"])))?;
        }
    }
    Ok(())
}

fn validate(file: &Path, format: Format, out: &mut dyn Write) -> Result<()> {
    let reader = Reader::open(file)?;
    let mut failures = Vec::new();
    for (i, ep) in reader.iter_episodes().enumerate() {
        let report = validate_episode(&ep?, reader.schema(), reader.alignment());
        if !report.is_ok() {
            failures.push((i, report.tags()));
        }
    }
    match format {
        Format::Json => emit_json(
            out,
            &json!({
                "episodes": reader.episode_count(),
                "invalid": failures.iter().map(|(i, tags)| json!({"episode": i, "violations": tags})).collect::<Vec<_>>(),
            }),
        )?,
        Format::Text => {
            for (i, tags) in &failures {
                emit(out, format!("episode {i}: {}", tags.join(" ")))?;
            }
            emit(out, format!("{} episodes, {} invalid", reader.episode_count(), failures.len()))?;
        }
    }
    match failures.len() {
        0 => Ok(()),
        n => Err(CliError::InvalidEpisodes { count: n as u64 }),
    }
}

fn stats(files: Vec<PathBuf>, field: String, histogram: bool, bins: usize, format: Format, out: &mut dyn Write) -> Result<()> {
    let spec = PipelineSpec {
        inputs: files
            .into_iter()
            .map(|path| InputSpec {
                name: Some(path.display().to_string()),
                path: Some(path),
                catalog: None,
            })
            .collect(),
        stages: Vec::new(),
        output: None,
        report: ReportSpec {
            stats: Some(field.clone()),
            histogram: histogram.then(|| HistogramSpec { field, bins }),
        },
    };
    print_report(&spec.run()?, format, out)
}

fn print_report(report: &Report, format: Format, out: &mut dyn Write) -> Result<()> {
    if format == Format::Json {
        return emit_json(out, &serde_json::to_value(report).expect("reports serialize"));
    }
    let with_stats = report.datasets.iter().any(|d| d.stats.is_some());
    emit(
        out,
        match with_stats {
            true => "dataset\tkind\titems\tcount\tmean\tstd\tmin\tmax",
            false => "dataset\tkind\titems",
        },
    )?;
    for d in &report.datasets {
        let mut line = format!("{}\t{}\t{}", d.name, d.kind, d.items);
        if let Some(s) = &d.stats {
            line += &format!("\t{}\t{}\t{}\t{}\t{}", s.count, s.mean, s.std, s.min, s.max);
        }
        emit(out, line)?;
    }
    if let Some(rows) = &report.histogram {
        emit(out, "")?;
        write!(out, "{}", to_table(rows)).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

fn writer_options(uncompressed: bool) -> WriterOptions {
    match uncompressed {
        true => WriterOptions::uncompressed(),
        false => WriterOptions::default(),
    }
}

fn convert(input: &Path, output: &Path, to: Alignment, uncompressed: bool, out: &mut dyn Write) -> Result<()> {
    let reader = Reader::open(input)?;
    let from = reader.alignment();
    let mut meta = reader.dataset_metadata().clone();
    meta.set_alignment(to);
    let mut writer = Writer::create(output, reader.schema(), &meta, writer_options(uncompressed))?;
    for ep in reader.iter_episodes() {
        let (ep, _) = shift_alignment(&ep?, from, to, reader.schema())?;
        for s in &ep.steps {
            writer.append_step(s)?;
        }
        writer.end_episode(&ep.metadata)?;
    }
    let summary = writer.finalize()?;
    emit(
        out,
        format!("{from} -> {to}: {} episodes, {} steps, {} bytes", summary.episodes, summary.steps, summary.bytes),
    )
}

fn record(args: &RecordArgs, out: &mut dyn Write) -> Result<()> {
    if args.env != "gridpickplace" {
        return Err(CliError::Env(epilogue::env::EnvError::InvalidArgument(format!(
            "unknown environment {:?}, expected gridpickplace",
            args.env
        ))));
    }
    let kind = match args.agent.as_str() {
        "planner" => AgentKind::PlannerEps(args.eps),
        "random" => AgentKind::UniformRandom,
        other => {
            return Err(CliError::Env(epilogue::env::EnvError::InvalidArgument(format!(
                "unknown agent {other:?}, expected planner or random"
            ))))
        }
    };
    let mut agent = scripted_agent(kind)?;
    let schema = GridPickPlace::schema();
    let mut meta = DatasetMetadata::new();
    meta.set_alignment(Alignment::Sar);
    meta.insert("env", args.env.as_str())?;
    meta.insert("agent", args.agent.as_str())?;
    if let AgentKind::PlannerEps(eps) = kind {
        meta.insert("eps", eps)?;
    }
    meta.insert("seed", args.seed)?;
    meta.insert("max_steps", args.max_steps)?;
    let mut writer = Writer::create(&args.out, &schema, &meta, writer_options(args.uncompressed))?;
    let env = GridPickPlace::default().with_time_limit(args.max_steps);
    let summary = generate(env, &mut agent, args.episodes, args.seed, &mut writer)?;
    let written = writer.finalize()?;
    emit(
        out,
        format!(
            "{} episodes, {} steps, {} transitions, {} successful, {} bytes -> {}",
            summary.episodes,
            summary.steps,
            summary.steps - summary.episodes,
            summary.terminal_episodes,
            written.bytes,
            args.out.display()
        ),
    )
}

fn serve(root: PathBuf, addr: SocketAddr, out: &mut dyn Write) -> Result<()> {
    let state = epilogue_collect::server::AppState::open(root)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io(Path::new("<runtime>"), e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::io(Path::new(&addr.to_string()), e))?;
        let local = listener.local_addr().map_err(|e| CliError::io(Path::new(&addr.to_string()), e))?;
        emit(out, format!("listening on http://{local}"))?;
        out.flush().ok();
        epilogue_collect::server::serve_on(listener, state)
            .await
            .map_err(|e| CliError::io(Path::new(&addr.to_string()), e))
    })
}

fn catalog(store: &Path, command: CatalogCommand, out: &mut dyn Write) -> Result<()> {
    let catalog = Catalog::open(store);
    match command {
        CatalogCommand::Register { manifest } => {
            let bytes = std::fs::read(&manifest).map_err(|e| CliError::io(&manifest, e))?;
            let stored = catalog.register(&Manifest::from_json(&bytes)?)?;
            emit(out, format!("registered {} {}", stored.name, stored.version))
        }
        CatalogCommand::List => {
            for (name, version) in catalog.list()? {
                emit(out, format!("{name}\t{version}"))?;
            }
            Ok(())
        }
        CatalogCommand::Load { dataset, split, format } => {
            let loaded = catalog.load(&dataset, &split)?;
            let lens = loaded
                .episodes()
                .map(|ep| ep.map(|e| e.len() as u64))
                .collect::<transforms::Result<Vec<_>>>()?;
            let doc = json!({
                "dataset": loaded.manifest().name,
                "version": loaded.manifest().version,
                "split": loaded.split().to_string(),
                "range": [loaded.range().start, loaded.range().end],
                "episodes": loaded.len(),
                "num_steps": lens,
            });
            match format {
                Format::Json => emit_json(out, &doc),
                Format::Text => {
                    emit(out, format!("{} {} {}", doc["dataset"].as_str().unwrap_or(""), doc["version"].as_str().unwrap_or(""), doc["split"].as_str().unwrap_or("")))?;
                    emit(out, format!("range: {}", compact(&doc["range"])))?;
                    emit(out, format!("episodes: {}", doc["episodes"]))?;
                    emit(out, format!("num_steps: {}", compact(&doc["num_steps"])))
                }
            }
        }
        CatalogCommand::NewManifest {
            name,
            version,
            citation,
            splits,
            description,
            license,
            homepage,
            out: dest,
        } => {
            let mut manifest = Manifest {
                name,
                version,
                description,
                citation,
                license,
                homepage,
                splits: Default::default(),
                schema_digest: String::new(),
            };
            for (split, path) in splits {
                let reader = Reader::open(&path)?;
                let digest = schema_digest(reader.schema());
                if manifest.schema_digest.is_empty() {
                    manifest.schema_digest = digest;
                } else if manifest.schema_digest != digest {
                    return Err(CliError::Usage(format!("{} has a different schema from the other files", path.display())));
                }
                let absolute = std::path::absolute(&path).map_err(|e| CliError::io(&path, e))?;
                manifest.splits.entry(split).or_default().push(SplitFile {
                    url: absolute.display().to_string(),
                    sha256: sha256_file(&path).map_err(|e| CliError::io(&path, e))?,
                    episode_count: reader.episode_count(),
                });
            }
            manifest.check_valid()?;
            let text = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
            match dest {
                Some(p) => std::fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e)),
                None => emit(out, text),
            }
        }
    }
}

fn recover_file(file: &Path, dest: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let (reader, report) = recover(file)?;
    emit(
        out,
        format!(
            "footer intact: {}\nepisodes recovered: {}\nsteps discarded: {}\nbytes discarded: {}",
            report.footer_intact, report.episodes_recovered, report.steps_discarded, report.bytes_discarded
        ),
    )?;
    if let Some(dest) = dest {
        let mut writer = Writer::create(dest, reader.schema(), reader.dataset_metadata(), WriterOptions::default())?;
        for ep in reader.iter_episodes() {
            let ep = ep?;
            for s in &ep.steps {
                writer.append_step(s)?;
            }
            writer.end_episode(&ep.metadata)?;
        }
        let summary = writer.finalize()?;
        emit(out, format!("wrote {} episodes to {}", summary.episodes, dest.display()))?;
    }
    Ok(())
}
