use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pqllama::bench::{load_model, load_prompts, run_experiment, ExperimentSpec, Keys, OutputFormat, PlanCache};
use pqllama::circuit::ExecutionPlan;
use pqllama::enc_attn::{extend_greedy, splice, EncAttnConfig, FheMode, HeadScope, HybridModel};
use pqllama::model::{detokenize, select_token, tokenize, GenerationConfig, KvCache, Model, SelectionRule};
use pqllama::protocol::{serve, Client, Preloaded, RemoteBackend, TcpTransport};
use pqllama_fhe::{keygen, ClientKey, CryptoParams, ServerKey};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CLIENT_KEY: &str = "client.key";
const SERVER_KEY: &str = "server.key";

/// Toy LLaMA-style decoder with encrypted attention heads.
#[derive(Parser)]
#[command(name = "pqllama", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate client and evaluation keys.
    Keygen {
        #[command(flatten)]
        crypto: CryptoArgs,
        /// Directory receiving client.key and server.key.
        #[arg(long, default_value = "keys")]
        out: PathBuf,
    },
    /// Calibrate on a prompt file and compile per-layer plans.
    Compile {
        #[command(flatten)]
        enc: EncArgs,
        #[arg(long)]
        prompts: PathBuf,
        /// Longest sequence the plans must cover.
        #[arg(long, default_value_t = 64)]
        max_seq_len: usize,
        /// Greedy tokens appended to each prompt for calibration.
        #[arg(long, default_value_t = 8)]
        calibration_tokens: usize,
        #[arg(long, default_value = "plans")]
        out: PathBuf,
    },
    /// Generate a continuation of one prompt.
    Generate {
        #[command(flatten)]
        enc: EncArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, default_value = "simulate")]
        mode: String,
        prompt: String,
        /// Directory of compiled plans. Without it, plans are compiled on
        /// the calibration prompts.
        #[arg(long)]
        plans: Option<PathBuf>,
        /// Calibration prompt file; defaults to the prompt itself.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Key directory for execute mode; keys are generated when absent.
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Accuracy and cost sweep written as CSV or JSON.
    Bench {
        #[command(flatten)]
        enc: EncArgs,
        #[arg(long)]
        prompts: PathBuf,
        /// Comma separated modes.
        #[arg(long, value_delimiter = ',', default_value = "disable,simulate")]
        modes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        top_k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "4")]
        new_tokens: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        /// Sample from the top-k set instead of taking its argmax.
        #[arg(long)]
        sample: bool,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Zero every timing column so reruns are byte-identical.
        #[arg(long)]
        no_timings: bool,
        /// Run grid cells one at a time.
        #[arg(long)]
        strict_timing: bool,
    },
    /// Serve encrypted attention steps over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Evaluation key to preload.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Plan directory to preload.
        #[arg(long)]
        plans: Option<PathBuf>,
        /// Stop after this many connections.
        #[arg(long)]
        max_connections: Option<usize>,
        /// Leave wall time out of results.
        #[arg(long)]
        no_timings: bool,
    },
    /// Generate with attention evaluated by a remote server.
    Query {
        #[command(flatten)]
        enc: EncArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, default_value = "127.0.0.1:7878")]
        connect: String,
        #[arg(long, default_value = "keys")]
        keys: PathBuf,
        #[arg(long, default_value = "plans")]
        plans: PathBuf,
        /// The server already holds the key and plans.
        #[arg(long)]
        preloaded: bool,
        prompt: String,
    },
}

#[derive(Args, Clone)]
struct CryptoArgs {
    /// Crypto parameter profile: micro or toy.
    #[arg(long, default_value = "micro")]
    profile: String,
    /// Key generation seed; the profile's seed when absent.
    #[arg(long)]
    seed: Option<u64>,
}

impl CryptoArgs {
    fn params(&self) -> Result<CryptoParams> {
        let p = match self.profile.as_str() {
            "micro" => CryptoParams::micro(),
            "toy" => CryptoParams::toy(),
            other => bail!("unknown profile {other:?}"),
        };
        Ok(match self.seed {
            Some(s) => p.with_seed(s),
            None => p,
        })
    }
}

#[derive(Args, Clone)]
struct EncArgs {
    #[command(flatten)]
    crypto: CryptoArgs,
    /// Model weights; the seeded random toy model when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    layers: Vec<usize>,
    /// Encrypted heads: single or all.
    #[arg(long, default_value = "single")]
    scope: String,
    #[arg(long, default_value_t = pqllama::quant::DEFAULT_N_BITS)]
    n_bits: u8,
    #[arg(long, default_value_t = 3)]
    weight_bits: u8,
}

impl EncArgs {
    fn config(&self, mode: FheMode) -> Result<EncAttnConfig> {
        Ok(EncAttnConfig {
            target_layers: self.layers.iter().copied().collect(),
            head_scope: HeadScope::parse(&self.scope)?,
            mode,
            n_bits: self.n_bits,
            weight_bits: self.weight_bits,
            crypto: self.crypto.params()?,
        })
    }

    fn model(&self) -> Result<Model> {
        Ok(load_model(self.weights.as_deref())?)
    }
}

#[derive(Args, Clone)]
struct DecodeArgs {
    #[arg(long, default_value_t = 8)]
    new_tokens: usize,
    #[arg(long, default_value_t = 1)]
    top_k: usize,
    #[arg(long)]
    sample: bool,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
}

impl DecodeArgs {
    fn config(&self) -> GenerationConfig {
        GenerationConfig {
            max_new_tokens: self.new_tokens,
            top_k: self.top_k,
            selection: if self.sample { SelectionRule::Sample } else { SelectionRule::Argmax },
            sample_seed: self.sample_seed,
        }
    }
}

fn plan_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer{layer}.plan"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_plans(dir: &Path, cfg: &EncAttnConfig) -> Result<BTreeMap<usize, Arc<ExecutionPlan>>> {
    cfg.target_layers
        .iter()
        .map(|&l| {
            let p = plan_path(dir, l);
            let plan = ExecutionPlan::from_bytes(&read(&p)?, &cfg.crypto).with_context(|| format!("loading {}", p.display()))?;
            Ok((l, Arc::new(plan)))
        })
        .collect()
}

fn load_client(dir: &Path) -> Result<ClientKey> {
    Ok(ClientKey::from_bytes(&read(&dir.join(CLIENT_KEY))?)?)
}

fn load_keys(dir: &Path) -> Result<Keys> {
    let server = ServerKey::from_bytes(&read(&dir.join(SERVER_KEY))?)?;
    Ok(Keys { client: load_client(dir)?, server: Arc::new(server) })
}

/// Run `hy` on the prompt and print the continuation.
fn generate(model: &Model, hy: &mut HybridModel<'_>, prompt: &[usize], gen: &GenerationConfig) -> Result<()> {
    gen.validate(model.cfg.vocab_size)?;
    let mut cache = KvCache::new(&model.cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(gen.sample_seed);
    let mut logits = Vec::new();
    for &t in prompt {
        logits = hy.forward_step(t, &mut cache)?;
    }
    let mut out = Vec::new();
    for i in 0..gen.max_new_tokens {
        let sel = select_token(&logits, gen, &mut rng)?;
        out.push(sel.token);
        if i + 1 < gen.max_new_tokens {
            logits = hy.forward_step(sel.token, &mut cache)?;
        }
    }
    let pbs: u64 = hy.log().iter().map(|r| r.pbs).sum();
    println!("{}", detokenize(&out));
    eprintln!("tokens: {out:?}");
    eprintln!("bootstraps: {pbs}");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Keygen { crypto, out } => {
            let km = keygen(&crypto.params()?)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join(CLIENT_KEY), km.client.to_bytes())?;
            std::fs::write(out.join(SERVER_KEY), km.server.to_bytes())?;
            eprintln!("wrote {} and {} in {}", CLIENT_KEY, SERVER_KEY, out.display());
        }
        Cmd::Compile { enc, prompts, max_seq_len, calibration_tokens, out } => {
            let model = enc.model()?;
            let cfg = enc.config(FheMode::Simulate)?;
            let batch = extend_greedy(&model, &load_prompts(&prompts)?, calibration_tokens)?;
            let mut cache = PlanCache::default();
            let compiled = cache.get_or_compile(&model, &batch, &cfg, max_seq_len)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (&l, p) in &compiled.plans {
                std::fs::write(plan_path(&out, l), p.to_bytes())?;
                eprintln!("layer {l}: {} nodes, {} bootstraps at position 0", p.node_count(), p.static_pbs_count(0)?);
            }
            eprintln!("compiled in {:.3} s", compiled.compile_s);
        }
        Cmd::Generate { enc, decode, mode, prompt, plans, calibration, keys } => {
            let model = enc.model()?;
            let mode = FheMode::parse(&mode)?;
            let cfg = enc.config(mode)?;
            let tokens = tokenize(&prompt);
            let gen = decode.config();
            let plans = match (&plans, mode) {
                (_, FheMode::Disable) => BTreeMap::new(),
                (Some(dir), _) => load_plans(dir, &cfg)?,
                (None, _) => {
                    let prompts = match &calibration {
                        Some(p) => load_prompts(p)?,
                        None => vec![tokens.clone()],
                    };
                    let batch = extend_greedy(&model, &prompts, gen.max_new_tokens)?;
                    let len = (tokens.len() + gen.max_new_tokens).min(model.cfg.max_seq_len);
                    PlanCache::default().get_or_compile(&model, &batch, &cfg, len)?.plans.clone()
                }
            };
            let mut hy = match mode {
                FheMode::Disable => splice(&model, &cfg, plans, None)?,
                FheMode::Simulate => HybridModel::simulate(&model, &cfg, plans)?,
                FheMode::Execute => {
                    let k = match &keys {
                        Some(dir) => load_keys(dir)?,
                        None => Keys::generate(&cfg)?,
                    };
                    HybridModel::execute(&model, &cfg, plans, k.client, k.server)?
                }
            };
            generate(&model, &mut hy, &tokens, &gen)?;
        }
        Cmd::Bench {
            enc,
            prompts,
            modes,
            top_k,
            new_tokens,
            repetitions,
            sample_seed,
            sample,
            format,
            out,
            no_timings,
            strict_timing,
        } => {
            let model = enc.model()?;
            let mut spec = ExperimentSpec::new(load_prompts(&prompts)?, enc.config(FheMode::Simulate)?);
            spec.modes = modes.iter().map(|m| FheMode::parse(m)).collect::<pqllama::Result<_>>()?;
            spec.top_k = top_k;
            spec.max_new_tokens = new_tokens;
            spec.repetitions = repetitions;
            spec.sample_seed = sample_seed;
            spec.selection = if sample { SelectionRule::Sample } else { SelectionRule::Argmax };
            spec.format = match format.as_str() {
                "csv" => OutputFormat::Csv,
                "json" => OutputFormat::Json,
                other => bail!("unknown format {other:?}"),
            };
            spec.timings = !no_timings;
            spec.strict_timing = strict_timing;
            let report = run_experiment(&model, &spec, &mut PlanCache::default(), None)?;
            let text = match spec.format {
                OutputFormat::Csv => report.to_csv()?,
                OutputFormat::Json => report.to_json()?,
            };
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            eprintln!("{} cells, {} compilation(s)", report.cells.len(), report.compiles);
        }
        Cmd::Serve { listen, key, plans, max_connections, no_timings } => {
            let mut pre = Preloaded::default();
            if let Some(k) = key {
                let k = ServerKey::from_bytes(&read(&k)?)?;
                if let Some(dir) = plans {
                    for entry in std::fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
                        let p = entry?.path();
                        if p.extension().is_some_and(|e| e == "plan") {
                            let plan = ExecutionPlan::from_bytes(&read(&p)?, k.params())?;
                            pre.plans.insert(plan.layer, Arc::new(plan));
                        }
                    }
                }
                pre.key = Some(Arc::new(k));
            } else if plans.is_some() {
                bail!("preloading plans needs --key");
            }
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve(listener, pre, !no_timings, max_connections)?;
        }
        Cmd::Query { enc, decode, connect, keys, plans, preloaded, prompt } => {
            let model = enc.model()?;
            let cfg = enc.config(FheMode::Execute)?;
            let plans = load_plans(&plans, &cfg)?;
            let list: Vec<_> = plans.values().cloned().collect();
            let transport = TcpTransport::connect(&connect).with_context(|| format!("connecting to {connect}"))?;
            let mut client = Client::new(load_client(&keys)?, Box::new(transport));
            if preloaded {
                client.attach(&list)?;
            } else {
                client.install(&read(&keys.join(SERVER_KEY))?, &list)?;
            }
            let mut hy = splice(&model, &cfg, plans, Some(Box::new(RemoteBackend::new(client))))?;
            generate(&model, &mut hy, &tokenize(&prompt), &decode.config())?;
        }
    }
    Ok(())
}
