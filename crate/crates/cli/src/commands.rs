use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use dentagent_core::api::{check_bind_policy, serve as serve_api, ApiState};
use dentagent_core::artifacts::ArtifactStore;
use dentagent_core::clock::{IdGenerator, SystemClock};
use dentagent_core::eval::{load_benchmark, render_table, run_eval, AgentSubject, EvalOptions, Subject};
use dentagent_core::gateway::mock::{serve_scripted, MockScript};
use dentagent_core::memory::MemoryStore;
use dentagent_core::rag::{
    clean_documents, ingest_private_kb, ChunkingConfig, CleanMode, Paragraph, ParsedDocument, PrivateKbOptions,
};
use dentagent_core::registry::mock::serve_mock_tools;
use dentagent_core::registry::{parse_catalog, ExecutionContext, ToolFilter, ToolTask};
use dentagent_core::text::{detect_language, Language};
use dentagent_core::{AgentRuntime, Comprehender, Modality};

use crate::config::AppConfig;
use crate::{BuildIndexArgs, CleanArg, EvalRunArgs, IngestArgs, QueryArgs, SubjectArg};

fn runtime(
    config: &AppConfig,
    memory: MemoryStore,
    kb: Option<Arc<dentagent_core::KnowledgeBase>>,
) -> Result<AgentRuntime> {
    let registry = config.registry(kb.as_ref())?;
    Ok(AgentRuntime {
        orchestrator: config.client("chat")?,
        registry: Arc::new(registry),
        knowledge: kb,
        memory: Arc::new(memory),
        clock: Arc::new(SystemClock),
        ids: Arc::new(IdGenerator::Random),
    })
}

pub async fn serve(config: &AppConfig, bind: Option<SocketAddr>, allow_open: bool) -> Result<()> {
    let addr = bind.unwrap_or(config.service.bind);
    let token = match &config.service.auth_token_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("{var} is not set"))?),
        None => None,
    };
    check_bind_policy(&addr, token.as_deref(), allow_open || config.service.allow_open).map_err(|e| anyhow!(e))?;
    let memory = match &config.service.memory_dir {
        Some(dir) => MemoryStore::open(dir)?,
        None => MemoryStore::in_memory(),
    };
    let kb = config.knowledge_base(&[])?;
    let rt = runtime(config, memory, kb)?;
    let comprehender = Arc::new(Comprehender::new(config.client("intent")?, config.client("classify")?));
    let state = ApiState::new(rt, comprehender, config.session.clone())
        .with_auth_token(token)
        .with_max_image_bytes(config.service.max_image_bytes);
    let server = serve_api(Arc::new(state), addr).await?;
    tracing::info!("listening on {}", server.base_url());
    tokio::select! {
        _ = server.wait() => {}
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
    Ok(())
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn write_json_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub async fn ingest(config: &AppConfig, args: &IngestArgs) -> Result<()> {
    let mut docs = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: ParsedDocument = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        docs.push(doc);
    }
    let chat;
    let mode = match args.clean {
        CleanArg::DryRun => CleanMode::DryRun,
        CleanArg::Model => {
            chat = config.client("chat")?;
            CleanMode::Model { model: chat.as_ref(), strict: args.strict, translate: args.translate }
        }
    };
    let (paragraphs, report) = clean_documents(&docs, mode).await?;
    write_json_lines(&args.out, &paragraphs)?;
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    println!(
        "{} documents, {} paragraphs, {} dropped, {} translated -> {} ({} written)",
        report.documents,
        report.paragraphs,
        report.dropped,
        report.translated,
        args.out.display(),
        paragraphs.len()
    );
    Ok(())
}

pub async fn build_index(config: &AppConfig, args: &BuildIndexArgs) -> Result<()> {
    let embedder = config.client("embed")?;
    let index = if let Some(path) = &args.private {
        let options = PrivateKbOptions {
            namespace: args.namespace.clone().unwrap_or_else(|| "private".into()),
            parser_command: config.knowledge.parser_command.clone(),
            max_tokens: Some(args.max_tokens),
        };
        ingest_private_kb(path, &options, embedder.as_ref()).await?
    } else {
        let path = args.paragraphs.as_ref().expect("clap requires paragraphs or private");
        let paragraphs: Vec<Paragraph> = read_json_lines(path)?;
        let chunking = ChunkingConfig {
            max_tokens: args.max_tokens,
            namespace: args.namespace.clone().unwrap_or_else(|| "main".into()),
            ..ChunkingConfig::default()
        };
        dentagent_core::rag::build_index(&paragraphs, &chunking, embedder.as_ref()).await?
    };
    index.save(&args.out)?;
    println!("{} chunks ({}-dimensional) -> {}", index.len(), index.dimension(), args.out.display());
    Ok(())
}

fn parse_language(lang: Option<&str>, query: &str) -> Result<Option<Language>> {
    Ok(match lang {
        Some("en") => Some(Language::En),
        Some("zh") => Some(Language::Zh),
        Some(other) => bail!("unknown language {other}; use en or zh"),
        None => match detect_language(query) {
            Language::Other => None,
            l => Some(l),
        },
    })
}

pub async fn query(config: &AppConfig, args: &QueryArgs) -> Result<()> {
    let kb = config
        .knowledge_base(&args.index)?
        .ok_or_else(|| anyhow!("no index given; pass --index or configure [knowledge] indexes"))?;
    let k = args.k.unwrap_or(config.session.k_default);
    if k == 0 {
        bail!("--k must be at least 1");
    }
    let result = kb.query_knowledge(&args.text, k, parse_language(args.lang.as_deref(), &args.text)?).await?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    if result.degraded {
        println!("(reranker unavailable; cosine order)");
    }
    for item in &result.items {
        println!("{}. {} p.{}  [{:.3}]", item.rank(), item.book_title(), item.page(), item.rerank_score());
        println!("   {}", item.text());
    }
    Ok(())
}

pub async fn eval_run(config: &AppConfig, args: &EvalRunArgs) -> Result<()> {
    let items = load_benchmark(&args.benchmark)?;
    let subject = match args.subject {
        SubjectArg::BareChat => Subject::BareChat(config.client("chat")?),
        SubjectArg::Agent => {
            let mut session = config.session.clone();
            if let Some(k) = args.k {
                session.k_default = k;
            }
            session.validate().map_err(|e| anyhow!(e))?;
            let config = AppConfig { session: session.clone(), ..config.clone() };
            let kb = config.knowledge_base(&[])?;
            let rt = runtime(&config, MemoryStore::in_memory(), kb)?;
            Subject::Agent(AgentSubject {
                runtime: rt,
                config: session,
                ctx: ExecutionContext::new(Arc::new(ArtifactStore::new())),
            })
        }
    };
    let options = EvalOptions { parallelism: args.parallelism, label: args.label.clone() };
    let report = run_eval(&subject, &items, &options).await;
    if let Some(parent) = args.report_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.report_out, serde_json::to_vec_pretty(&report)?)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    if report.flagged > 0 {
        println!("{} items had no extractable answer", report.flagged);
    }
    Ok(())
}

pub fn tools_list(config: &AppConfig, modality: Option<&str>, task: Option<&str>, json: bool) -> Result<()> {
    let registry = config.registry(None)?;
    let mut filter = ToolFilter::default();
    if let Some(m) = modality {
        let set: Result<BTreeSet<Modality>> = m
            .split(',')
            .map(|s| Modality::from_label(s.trim()).ok_or_else(|| anyhow!("unknown modality {s}")))
            .collect();
        filter.modalities = Some(set?);
    }
    if let Some(t) = task {
        let task: ToolTask =
            serde_json::from_value(serde_json::Value::String(t.into())).map_err(|_| anyhow!("unknown task {t}"))?;
        filter.task = Some(task);
    }
    let tools = registry.list_tools(&filter);
    if json {
        println!("{}", serde_json::to_string_pretty(&tools)?);
        return Ok(());
    }
    for d in &tools {
        println!("{:<4} {:<36} {}", d.code.as_deref().unwrap_or("-"), d.name, d.description);
    }
    println!("{} tools", tools.len());
    Ok(())
}

pub async fn mock_gateway(script: &Path, port: u16) -> Result<()> {
    let text = std::fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
    let script: MockScript = serde_json::from_str(&text).with_context(|| format!("parsing {}", script.display()))?;
    let server = serve_scripted(script, port).await?;
    println!("{}", server.base_url());
    tokio::signal::ctrl_c().await?;
    Ok(())
}

pub async fn mock_tools(config: &AppConfig, catalog: Option<&Path>, port: u16) -> Result<()> {
    let path: Option<PathBuf> = catalog.map(Path::to_path_buf).or_else(|| config.tools.catalog.clone());
    let text = match &path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => dentagent_core::registry::SHIPPED_CATALOG.to_string(),
    };
    let descriptors: Vec<_> = parse_catalog(&text, "http://unused")?.into_iter().map(|(_, d)| d).collect();
    let server = serve_mock_tools(&descriptors, HashMap::new(), port).await?;
    println!("{}", server.base_url());
    tokio::signal::ctrl_c().await?;
    Ok(())
}
