use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use palimpsest_core::cube_io::{load_labels, write_cube, write_mask_png};
use palimpsest_core::eval::{fisher_score, synth_palimpsest, ReportEntry, SeparabilityReport, SyntheticSpec, DEFAULT_SYNTH_SEED};
use palimpsest_core::model_io::to_json_string;
use palimpsest_core::pipeline::{read_image_channels, run_batch, run_single, Method, PipelineConfig};
use palimpsest_core::render::read_provenance;
use palimpsest_core::{Error, ErrorKind, Result};
use serde_json::{json, Map, Value};

#[derive(Parser, Debug)]
#[command(name = "palimpsest", version, about = "Multispectral palimpsest enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one method on a page and write the image and its report.
    Enhance {
        #[command(flatten)]
        run: RunArgs,
        /// pca, ppca, gplvm, isomap, l-isomap, lda, gda, nca or threshold.
        #[arg(long)]
        method: Option<String>,
    },
    /// Run several methods on a labeled page and rank them.
    Batch {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated method names, or `all8`.
        #[arg(long, default_value = "all8")]
        methods: String,
        /// Methods run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Apply the double threshold to a band (`band:i`) or a single-channel image.
    Threshold {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        source: Option<String>,
        #[command(flatten)]
        cuts: Cuts,
    },
    /// Fisher separability of an existing image against a label mask.
    Score {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// The two classes compared.
        #[arg(long, default_value = "1,2")]
        classes: String,
    },
    /// Write a synthetic page with ground-truth labels.
    Synth {
        #[arg(long, default_value = "synth")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SYNTH_SEED)]
        seed: u64,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Start the local HTTP service.
    Serve {
        #[arg(long, default_value_t = palimpsest_service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Keep several pages open, addressed by the x-session-id header.
        #[arg(long)]
        multi_session: bool,
        /// Also write finished results here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Cuts {
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    t2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

/// Flags shared by the run subcommands. Each one given overrides `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Page name used in output file names.
    #[arg(long)]
    page: Option<String>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    landmarks: Option<usize>,
    /// Training subsample cap.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated band indices.
    #[arg(long)]
    bands: Option<String>,
    /// Lower and upper stretch percentiles, e.g. `2,98`.
    #[arg(long)]
    stretch: Option<String>,
    #[arg(long)]
    invert: bool,
    #[arg(long)]
    largest_component: bool,
    #[arg(long)]
    bit_depth: Option<u8>,
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| Error::Config(format!("bad {what} list {s:?}"))))
        .collect()
}

fn set(obj: &mut Map<String, Value>, key: &str, v: Option<Value>) {
    if let Some(v) = v {
        obj.insert(key.into(), v);
    }
}

impl RunArgs {
    /// The config file (if any) with every given flag laid over it.
    fn layered(&self, extra: impl FnOnce(&mut Map<String, Value>) -> Result<()>) -> Result<PipelineConfig> {
        let mut doc = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => json!({}),
        };
        let obj = doc.as_object_mut().ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
        set(obj, "manifest", self.manifest.as_ref().map(|p| json!(p)));
        set(obj, "labels", self.labels.as_ref().map(|p| json!(p)));
        set(obj, "out_dir", self.out_dir.as_ref().map(|p| json!(p)));
        set(obj, "page", self.page.as_ref().map(|p| json!(p)));
        set(obj, "q", self.q.map(|v| json!(v)));
        set(obj, "seed", self.seed.map(|v| json!(v)));
        set(obj, "bit_depth", self.bit_depth.map(|v| json!(v)));
        if let Some(b) = &self.bands {
            obj.insert("bands".into(), json!(parse_list::<usize>("band", b)?));
        }
        if let Some(s) = &self.stretch {
            match parse_list::<f64>("stretch", s)?.as_slice() {
                [lo, hi] => obj.insert("stretch".into(), json!([lo, hi])),
                _ => return Err(Error::Config(format!("stretch takes two percentiles, got {s:?}"))),
            };
        }
        if self.invert {
            obj.insert("invert".into(), json!(true));
        }
        let params = obj.entry("params").or_insert_with(|| json!({}));
        let params = params.as_object_mut().ok_or_else(|| Error::Config("params must be a JSON object".into()))?;
        set(params, "k", self.k.map(|v| json!(v)));
        set(params, "landmarks", self.landmarks.map(|v| json!(v)));
        set(params, "cap", self.cap.map(|v| json!(v)));
        if self.largest_component {
            params.insert("largest_component".into(), json!(true));
        }
        extra(obj)?;
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s.trim() == "all8" {
        return Ok(Method::ALL8.to_vec());
    }
    parse_list::<String>("method", s)?.iter().map(|m| m.parse()).collect()
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print_json(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Enhance { run, method } => {
            let cfg = run.layered(|o| {
                set(o, "method", method.map(Value::String));
                Ok(())
            })?;
            let out = run_single(&cfg)?;
            print_json(&json!({
                "image": out.image_path,
                "report": out.report_path,
                "entry": out.report.entries[0],
            }));
            Ok(0)
        }
        Command::Batch { run, methods, jobs } => {
            let methods = parse_methods(&methods)?;
            let cfg = run.layered(|o| {
                o.entry("method").or_insert(json!("pca"));
                Ok(())
            })?;
            let out = run_batch(&cfg, &methods, jobs)?;
            print_json(&json!({
                "report": out.report_path,
                "images": out.images,
                "ranking": out.report.ranking,
                "failures": out.failures.iter().map(|(m, e)| json!({"method": m, "code": e.code(), "message": e.to_string()})).collect::<Vec<_>>(),
            }));
            Ok(out.failures.iter().map(|(_, e)| exit_code(e.kind())).max().unwrap_or(0))
        }
        Command::Threshold { run, source, cuts } => {
            let cfg = run.layered(|o| {
                o.insert("method".into(), json!("threshold"));
                set(o, "source", source.map(Value::String));
                set(o, "t1", cuts.t1.map(|v| json!(v)));
                set(o, "t2", cuts.t2.map(|v| json!(v)));
                set(o, "alpha", cuts.alpha.map(|v| json!(v)));
                Ok(())
            })?;
            let out = run_single(&cfg)?;
            print_json(&json!({ "image": out.image_path, "report": out.report_path, "entry": out.report.entries[0] }));
            Ok(0)
        }
        Command::Score { image, labels, classes } => {
            let classes = match parse_list::<u8>("class", &classes)?.as_slice() {
                [a, b] if a != b => [*a, *b],
                _ => return Err(Error::Config(format!("classes must be two distinct labels, got {classes:?}"))),
            };
            print_json(&serde_json::to_value(score_image(&image, &labels, classes)?).expect("report serializes"));
            Ok(0)
        }
        Command::Synth { out_dir, seed, width, height, noise, overlap } => {
            let mut spec = SyntheticSpec::default();
            spec.width = width.unwrap_or(spec.width);
            spec.height = height.unwrap_or(spec.height);
            spec.noise = noise.unwrap_or(spec.noise);
            spec.overlap = overlap.unwrap_or(spec.overlap);
            let (cube, mask) = synth_palimpsest(&spec, seed)?;
            let manifest = write_cube(&cube, &out_dir, 16)?;
            let labels = out_dir.join("labels.png");
            write_mask_png(&mask, &labels)?;
            print_json(&json!({ "manifest": manifest, "labels": labels, "counts": mask.counts() }));
            Ok(0)
        }
        Command::Serve { port, host, multi_session, out_dir } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| Error::Config(format!("bad listen address {host}:{port}")))?;
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Numeric(e.to_string()))?;
            let opts = palimpsest_service::ServiceOptions { multi_session, out_dir };
            runtime
                .block_on(palimpsest_service::serve(addr, opts))
                .map_err(|e| Error::InvalidInput(format!("cannot serve on {addr}: {e}")))?;
            Ok(0)
        }
    }
}

fn score_image(image: &Path, labels: &Path, classes: [u8; 2]) -> Result<SeparabilityReport> {
    let (channels, w, h) = read_image_channels(image)?;
    let mask = load_labels(labels, w, h)?;
    let r = fisher_score(&channels, mask.labels(), (classes[0], classes[1]))?;
    let bytes = std::fs::read(image).map_err(|e| Error::InvalidInput(format!("{}: {e}", image.display())))?;
    let provenance: Option<Value> = read_provenance(&bytes).ok().flatten().and_then(|t| serde_json::from_str(&t).ok());
    let method = provenance
        .as_ref()
        .and_then(|p| p["method"].as_str().map(str::to_string))
        .unwrap_or_else(|| image.file_stem().unwrap_or_default().to_string_lossy().into_owned());
    let hash = palimpsest_core::pipeline::content_hash(&bytes);
    let entry = ReportEntry {
        method,
        score: Some(r.best),
        channel: Some(r.best_channel),
        params_hash: hash,
        counts: Some(r.counts),
        image: image.file_name().map(|n| n.to_string_lossy().into_owned()),
        error: None,
    };
    let page = image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    Ok(SeparabilityReport::new(page, classes, vec![entry]))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let body = json!({ "error": { "code": e.code(), "kind": format!("{:?}", e.kind()).to_lowercase(), "message": e.to_string() } });
            eprintln!("{}", to_json_string(&body).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
