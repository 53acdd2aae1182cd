//! Load → fit on a capped training set → project every pixel → compose → export.

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{EnhanceSpec, Method, PipelineConfig, ResolvedParams, DEFAULT_UNSUPERVISED_Q};
use crate::cube_io::{flatten, load_cube, load_labels, subsample, DesignMatrix, LabelMask, SpectralCube};
use crate::dimred_sup::{
    gda_fit, gda_project, lda_fit, lda_project, nca_fit, nca_project, GdaKernel, GdaOptions, NcaOptions,
};
use crate::dimred_unsup::{
    gplvm_fit, gplvm_project, isomap_embed, isomap_project, landmark_isomap_embed, pca_fit, ppca_fit,
    project_linear, GplvmOptions, IsomapOptions, LandmarkSelection, PpcaOptions,
};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::eval::{fisher_score, EntryError, ReportEntry, SeparabilityReport};
use crate::model_io::{to_json_string, FittedModel};
use crate::render::{compose, encode_png, write_atomic, ComposeOptions, EnhancedImage, Provenance};
use crate::threshold::{apply_double_threshold, suggest_thresholds, ThresholdParams};

/// A loaded page with its (optional) labels.
#[derive(Debug, Clone)]
pub struct PageInputs {
    pub cube: SpectralCube,
    pub mask: Option<LabelMask>,
    /// Canonical manifest path as recorded in provenance.
    pub manifest: String,
    pub page: String,
    labels_sha256: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short content hash in the form used by report entries.
pub fn content_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..12].to_string()
}

/// Keep file names portable.
fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn mask_digest(mask: &LabelMask) -> String {
    let mut h = Sha256::new();
    h.update((mask.width() as u64).to_le_bytes());
    h.update((mask.height() as u64).to_le_bytes());
    h.update(mask.labels());
    hex::encode(h.finalize())
}

impl PageInputs {
    pub fn load(manifest: &Path, labels: Option<&Path>, page: Option<String>) -> Result<Self> {
        let canonical = manifest.canonicalize().map_err(|e| Error::io(manifest, e))?;
        let cube = load_cube(&canonical)?;
        let mask = labels.map(|p| load_labels(p, cube.width(), cube.height())).transpose()?;
        let page = page.unwrap_or_else(|| {
            canonical
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "page".into())
        });
        let mut inputs = PageInputs {
            cube,
            mask: None,
            manifest: canonical.display().to_string(),
            page: sanitize(&page),
            labels_sha256: None,
        };
        inputs.set_mask(mask)?;
        Ok(inputs)
    }

    pub fn set_mask(&mut self, mask: Option<LabelMask>) -> Result<()> {
        if let Some(m) = &mask {
            m.check_dims(self.cube.width(), self.cube.height())?;
        }
        self.labels_sha256 = mask.as_ref().map(mask_digest);
        self.mask = mask;
        Ok(())
    }

    pub fn labels_sha256(&self) -> Option<&str> {
        self.labels_sha256.as_deref()
    }

    fn cube_for(&self, spec: &EnhanceSpec) -> Result<Cow<'_, SpectralCube>> {
        match &spec.bands {
            Some(b) => Ok(Cow::Owned(self.cube.select_bands(b)?)),
            None => Ok(Cow::Borrowed(&self.cube)),
        }
    }
}

/// The resolved, pre-fit description of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub method: Method,
    pub q: usize,
    pub params: ResolvedParams,
    pub provenance: Provenance,
    /// Key over everything that determines the fitted model.
    pub fit_key: String,
    /// First 12 hex digits of the hash over provenance and bit depth.
    pub params_hash: String,
    pub file_name: String,
}

fn resolve_q(spec: &EnhanceSpec, bands: usize) -> Result<usize> {
    let classes = spec.train_classes.len();
    let q = match spec.method {
        Method::Pca | Method::Gplvm | Method::Isomap | Method::LIsomap => {
            let q = spec.q.unwrap_or(DEFAULT_UNSUPERVISED_Q.min(bands));
            if spec.method == Method::Pca && q > bands {
                return Err(Error::Config(format!("PCA q = {q} exceeds the {bands} bands")));
            }
            q
        }
        Method::Ppca => {
            if bands < 2 {
                return Err(Error::Config("PPCA needs at least 2 bands".into()));
            }
            let q = spec.q.unwrap_or(DEFAULT_UNSUPERVISED_Q.min(bands - 1));
            if q >= bands {
                return Err(Error::Config(format!("PPCA q = {q} must be below the {bands} bands")));
            }
            q
        }
        // Discriminant directions beyond C − 1 carry no class information.
        Method::Lda | Method::Gda => spec.q.unwrap_or(classes - 1).min(classes - 1),
        Method::Nca => {
            let q = spec.q.unwrap_or(classes - 1);
            if q > bands {
                return Err(Error::Config(format!("NCA q = {q} exceeds the {bands} bands")));
            }
            q
        }
        Method::Threshold => 1,
    };
    if q == 0 {
        return Err(Error::Config("q must be at least 1".into()));
    }
    Ok(q)
}

/// Resolve a spec against a page: defaults, q, provenance and output name.
pub fn plan(inputs: &PageInputs, spec: &EnhanceSpec) -> Result<Plan> {
    spec.validate()?;
    if spec.method == Method::Threshold {
        return Err(Error::Config("threshold is not an embedding method".into()));
    }
    if spec.method.is_supervised() && inputs.mask.is_none() {
        return Err(Error::Config(format!("{} is supervised and needs labels", spec.method)));
    }
    let bands = match &spec.bands {
        Some(b) => {
            if let Some(&bad) = b.iter().find(|&&i| i >= inputs.cube.band_count()) {
                return Err(Error::Config(format!("band {bad} out of range")));
            }
            b.len()
        }
        None => inputs.cube.band_count(),
    };
    let q = resolve_q(spec, bands)?;
    let params = spec.params.resolve(spec.method)?;
    let components = spec.components.clone().unwrap_or_else(|| (0..q.min(3)).collect());
    if let Some(&c) = components.iter().find(|&&c| c >= q) {
        return Err(Error::Config(format!("component {c} out of range for q = {q}")));
    }
    let mut fit = json!({
        "page": inputs.page,
        "manifest": inputs.manifest,
        "method": spec.method,
        "q": q,
        "params": params,
        "seed": spec.seed,
        "bands": spec.bands,
    });
    if spec.method.is_supervised() {
        fit["labels_sha256"] = json!(inputs.labels_sha256);
        fit["train_classes"] = json!(spec.train_classes);
    }
    let fit_key = sha256_hex(to_json_string(&fit)?.as_bytes());
    let provenance = Provenance {
        method: spec.method.name().into(),
        params: fit,
        components,
        stretch: Some(spec.stretch),
        invert: spec.invert,
    };
    let full = sha256_hex(to_json_string(&(&provenance, spec.bit_depth))?.as_bytes());
    let params_hash = full[..12].to_string();
    let file_name = format!("{}_{}_{}.png", inputs.page, spec.method, params_hash);
    Ok(Plan { method: spec.method, q, params, provenance, fit_key, params_hash, file_name })
}

/// Labeled training rows restricted to `classes`.
fn supervised_rows(design: &DesignMatrix, mask: &LabelMask, classes: &[u8]) -> Result<DesignMatrix> {
    let labels = design.labels_from(mask)?;
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| classes.contains(&labels[i])).collect();
    if rows.is_empty() {
        return Err(Error::MissingClass(format!("no pixels labeled with classes {classes:?}")));
    }
    Ok(design.select_rows(&rows))
}

fn capped(design: &DesignMatrix, cap: usize, seed: u64, mask: Option<&LabelMask>) -> Result<DesignMatrix> {
    subsample(design, cap, seed, mask)
}

/// Fit the planned model on the page's training rows.
pub fn fit(inputs: &PageInputs, spec: &EnhanceSpec, plan: &Plan) -> Result<FittedModel> {
    let cube = inputs.cube_for(spec)?;
    let design = flatten(&cube, None)?;
    let q = plan.q;
    let seed = spec.seed;
    Ok(match &plan.params {
        ResolvedParams::Pca {} => FittedModel::Pca(pca_fit(&design, q)?),
        ResolvedParams::Ppca { tol, max_iter } => {
            FittedModel::Ppca(ppca_fit(&design, q, PpcaOptions { tol: *tol, max_iter: *max_iter })?)
        }
        ResolvedParams::Gplvm { cap, max_iter, jitter } => {
            let train = capped(&design, *cap, seed, None)?;
            let opts = GplvmOptions { max_iter: *max_iter, jitter: *jitter, seed, cap: *cap };
            FittedModel::Gplvm(gplvm_fit(&train, q, opts)?)
        }
        ResolvedParams::Isomap { k, cap, largest_component } => {
            let train = capped(&design, *cap, seed, None)?;
            let opts = IsomapOptions { k: *k, q, cap: *cap, largest_component: *largest_component };
            FittedModel::Isomap(isomap_embed(&train, opts)?)
        }
        ResolvedParams::LIsomap { k, cap, landmarks, random_landmarks, largest_component } => {
            let train = capped(&design, *cap, seed, None)?;
            let opts = IsomapOptions { k: *k, q, cap: *cap, largest_component: *largest_component };
            let selection = if *random_landmarks { LandmarkSelection::Random(seed) } else { LandmarkSelection::MaxMin };
            let l = (*landmarks).min(train.rows());
            FittedModel::LIsomap(landmark_isomap_embed(&train, opts, l, selection)?)
        }
        ResolvedParams::Lda { shrinkage } => {
            let mask = inputs.mask.as_ref().expect("planned supervised runs have labels");
            let train = supervised_rows(&design, mask, &spec.train_classes)?;
            let labels = train.labels_from(mask)?;
            FittedModel::Lda(lda_fit(&train, &labels, q, *shrinkage)?)
        }
        ResolvedParams::Gda { cap, kernel, gamma, regularization } => {
            let mask = inputs.mask.as_ref().expect("planned supervised runs have labels");
            let train = capped(&supervised_rows(&design, mask, &spec.train_classes)?, *cap, seed, Some(mask))?;
            let labels = train.labels_from(mask)?;
            let kernel = match (kernel.as_str(), gamma) {
                ("linear", _) => Some(GdaKernel::Linear),
                (_, Some(g)) => Some(GdaKernel::Rbf { gamma: *g }),
                _ => None,
            };
            let opts = GdaOptions { kernel, regularization_rel: *regularization, cap: *cap };
            FittedModel::Gda(gda_fit(&train, &labels, q, opts)?)
        }
        ResolvedParams::Nca { cap, max_iter, step_init } => {
            let mask = inputs.mask.as_ref().expect("planned supervised runs have labels");
            let train = capped(&supervised_rows(&design, mask, &spec.train_classes)?, *cap, seed, Some(mask))?;
            let labels = train.labels_from(mask)?;
            let opts = NcaOptions { max_iter: *max_iter, step_init: *step_init, seed, cap: *cap };
            FittedModel::Nca(nca_fit(&train, &labels, q, opts)?)
        }
        ResolvedParams::Threshold {} => unreachable!("plan rejects threshold"),
    })
}

/// Out-of-sample projection with any fitted model.
pub fn project(model: &FittedModel, data: &DesignMatrix) -> Result<Embedding> {
    match model {
        FittedModel::Pca(m) | FittedModel::Ppca(m) => project_linear(m, data),
        FittedModel::Gplvm(m) => gplvm_project(m, data),
        FittedModel::Isomap(m) | FittedModel::LIsomap(m) => isomap_project(m, data),
        FittedModel::Lda(m) => lda_project(m, data),
        FittedModel::Gda(m) => gda_project(m, data),
        FittedModel::Nca(m) => nca_project(m, data),
    }
}

#[derive(Debug, Clone)]
pub struct EnhanceOutcome {
    pub plan: Plan,
    /// Raw projection of every pixel, in design-matrix row order.
    pub embedding: Embedding,
    pub image: EnhancedImage,
    pub png: Vec<u8>,
    pub entry: ReportEntry,
}

/// Project every pixel through `model`, compose the image and score it.
pub fn render(inputs: &PageInputs, spec: &EnhanceSpec, plan: &Plan, model: &FittedModel) -> Result<EnhanceOutcome> {
    let cube = inputs.cube_for(spec)?;
    let design = flatten(&cube, None)?;
    let embedding = project(model, &design)?;
    let opts = ComposeOptions {
        components: plan.provenance.components.clone(),
        stretch: spec.stretch,
        invert: spec.invert,
    };
    let image = compose(
        &embedding,
        &design.pixel_index,
        cube.width(),
        cube.height(),
        &opts,
        spec.method.name(),
        plan.provenance.params.clone(),
    )?;
    let png = encode_png(&image, spec.bit_depth)?;
    let mut entry = ReportEntry {
        method: spec.method.name().into(),
        score: None,
        channel: None,
        params_hash: plan.params_hash.clone(),
        counts: None,
        image: Some(plan.file_name.clone()),
        error: None,
    };
    if let Some(mask) = &inputs.mask {
        let labels = design.labels_from(mask)?;
        let [a, b] = spec.score_classes;
        if labels.contains(&a) && labels.contains(&b) {
            let channels: Vec<Vec<f64>> = (0..embedding.dims()).map(|c| embedding.column(c)).collect();
            let r = fisher_score(&channels, &labels, (a, b))?;
            entry.score = Some(r.best);
            entry.channel = Some(r.best_channel);
            entry.counts = Some(r.counts);
        }
    }
    Ok(EnhanceOutcome { plan: plan.clone(), embedding, image, png, entry })
}

/// Plan, fit and render in one go.
pub fn enhance(inputs: &PageInputs, spec: &EnhanceSpec) -> Result<EnhanceOutcome> {
    let plan = plan(inputs, spec)?;
    let model = fit(inputs, spec, &plan)?;
    render(inputs, spec, &plan, &model)
}

#[derive(Debug, Clone)]
pub struct SingleOutcome {
    pub image_path: PathBuf,
    pub report_path: PathBuf,
    pub report: SeparabilityReport,
}

fn write_report(report: &SeparabilityReport, path: &Path) -> Result<()> {
    write_atomic(path, to_json_string(report)?.as_bytes())
}

fn load_inputs(cfg: &PipelineConfig) -> Result<PageInputs> {
    if cfg.manifest.as_os_str().is_empty() {
        return Err(Error::Config("a manifest path is required".into()));
    }
    PageInputs::load(&cfg.manifest, cfg.labels.as_deref(), cfg.page.clone())
}

/// One method (or the threshold operation) on one page; writes the image
/// and a single-entry report next to it.
pub fn run_single(cfg: &PipelineConfig) -> Result<SingleOutcome> {
    cfg.spec.validate()?;
    if cfg.spec.method == Method::Threshold {
        return run_threshold(cfg);
    }
    if cfg.spec.method.is_supervised() && cfg.labels.is_none() {
        return Err(Error::Config(format!("{} is supervised and needs --labels", cfg.spec.method)));
    }
    let inputs = load_inputs(cfg)?;
    let outcome = enhance(&inputs, &cfg.spec)?;
    let image_path = cfg.out_dir.join(&outcome.plan.file_name);
    write_atomic(&image_path, &outcome.png)?;
    let report = SeparabilityReport::new(&inputs.page, cfg.spec.score_classes, vec![outcome.entry]);
    let report_path = image_path.with_extension("json");
    write_report(&report, &report_path)?;
    Ok(SingleOutcome { image_path, report_path, report })
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub report: SeparabilityReport,
    pub report_path: PathBuf,
    pub images: Vec<PathBuf>,
    pub failures: Vec<(Method, Error)>,
}

/// Several methods on one page with a consolidated ranking. Individual
/// failures are recorded and the batch continues.
pub fn run_batch(cfg: &PipelineConfig, methods: &[Method], jobs: usize) -> Result<BatchOutcome> {
    cfg.spec.validate()?;
    if cfg.labels.is_none() {
        return Err(Error::Config("batch runs need --labels for scoring".into()));
    }
    if methods.is_empty() || methods.contains(&Method::Threshold) {
        return Err(Error::Config("batch takes one or more embedding methods".into()));
    }
    let inputs = load_inputs(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(Method, Result<EnhanceOutcome>)> = pool.install(|| {
        use rayon::prelude::*;
        methods
            .par_iter()
            .map(|&m| {
                let spec = EnhanceSpec { method: m, ..cfg.spec.clone() };
                (m, enhance(&inputs, &spec))
            })
            .collect()
    });
    let mut entries = Vec::new();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for (m, result) in results {
        match result {
            Ok(outcome) => {
                let path = cfg.out_dir.join(&outcome.plan.file_name);
                write_atomic(&path, &outcome.png)?;
                images.push(path);
                entries.push(outcome.entry);
            }
            Err(e) => {
                let spec = EnhanceSpec { method: m, ..cfg.spec.clone() };
                entries.push(ReportEntry {
                    method: m.name().into(),
                    score: None,
                    channel: None,
                    params_hash: plan(&inputs, &spec).map(|p| p.params_hash).unwrap_or_default(),
                    counts: None,
                    image: None,
                    error: Some(EntryError { code: e.code().into(), message: e.to_string() }),
                });
                failures.push((m, e));
            }
        }
    }
    let report = SeparabilityReport::new(&inputs.page, cfg.spec.score_classes, entries);
    let report_path = cfg.out_dir.join(format!("{}_report.json", inputs.page));
    write_report(&report, &report_path)?;
    Ok(BatchOutcome { report, report_path, images, failures })
}

/// Where a threshold run takes its single-channel input from.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    Band(usize),
    Image(PathBuf),
}

impl ThresholdSource {
    /// `band:<i>` or a bare integer selects a band; anything else is an image path.
    pub fn parse(s: &str) -> ThresholdSource {
        let band = s.strip_prefix("band:").unwrap_or(s);
        match band.parse::<usize>() {
            Ok(i) => ThresholdSource::Band(i),
            Err(_) => ThresholdSource::Image(PathBuf::from(s)),
        }
    }
}

/// Decode a PNG or TIFF into `[0,1]` planes: one for grayscale, three for color.
/// Alpha is dropped.
pub fn read_image_channels(path: &Path) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let img = image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes = if img.color().has_color() {
        let rgb = img.into_rgb16().into_raw();
        (0..3).map(|c| rgb.iter().skip(c).step_by(3).map(|&v| v as f64 / 65535.0).collect()).collect()
    } else {
        vec![img.into_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()]
    };
    Ok((planes, w, h))
}

/// Decode a single-channel image into `[0,1]` values.
pub fn read_gray_image(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let (mut planes, w, h) = read_image_channels(path)?;
    if planes.len() != 1 {
        return Err(Error::InvalidInput(format!("{}: thresholding needs a single-channel image", path.display())));
    }
    Ok((planes.remove(0), w, h))
}

/// Resolve explicit thresholds, falling back to label-based suggestions.
pub fn threshold_params(spec: &EnhanceSpec, plane: &[f64], mask: Option<&LabelMask>) -> Result<ThresholdParams> {
    match (spec.t1, spec.t2) {
        (Some(t1), Some(t2)) => ThresholdParams::new(t1, t2, spec.alpha.unwrap_or(0.5)),
        _ => {
            let mask = mask.ok_or_else(|| Error::Config("give --t1 and --t2, or --labels to suggest them".into()))?;
            let suggested = suggest_thresholds(plane, mask.labels())?;
            ThresholdParams::new(
                spec.t1.unwrap_or(suggested.t1),
                spec.t2.unwrap_or(suggested.t2),
                spec.alpha.unwrap_or(suggested.alpha),
            )
        }
    }
}

fn run_threshold(cfg: &PipelineConfig) -> Result<SingleOutcome> {
    let spec = &cfg.spec;
    let source = ThresholdSource::parse(
        spec.source.as_deref().ok_or_else(|| Error::Config("threshold needs --source".into()))?,
    );
    let (plane, w, h, page, origin, mask) = match &source {
        ThresholdSource::Band(b) => {
            let inputs = load_inputs(cfg)?;
            let plane = inputs.cube.band_plane(*b)?;
            let origin = json!({"manifest": inputs.manifest, "band": b});
            (plane, inputs.cube.width(), inputs.cube.height(), inputs.page.clone(), origin, inputs.mask)
        }
        ThresholdSource::Image(path) => {
            let (plane, w, h) = read_gray_image(path)?;
            let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
            let mask = cfg.labels.as_deref().map(|p| load_labels(p, w, h)).transpose()?;
            let page = cfg.page.clone().unwrap_or_else(|| {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "page".into())
            });
            (plane, w, h, sanitize(&page), json!({"image": canonical.display().to_string()}), mask)
        }
    };
    let params = threshold_params(spec, &plane, mask.as_ref())?;
    let mut out = apply_double_threshold(&plane, params)?;
    if spec.invert {
        out.iter_mut().for_each(|v| *v = 1.0 - *v);
    }
    let provenance = Provenance {
        method: "threshold".into(),
        params: json!({"source": origin, "t1": params.t1, "t2": params.t2, "alpha": params.alpha}),
        components: vec![0],
        stretch: None,
        invert: spec.invert,
    };
    let full = sha256_hex(to_json_string(&(&provenance, spec.bit_depth))?.as_bytes());
    let image = EnhancedImage::new(w, h, vec![out], provenance)?;
    let file_name = format!("{page}_threshold_{}.png", &full[..12]);
    let image_path = cfg.out_dir.join(&file_name);
    write_atomic(&image_path, &encode_png(&image, spec.bit_depth)?)?;

    let mut entry = ReportEntry {
        method: "threshold".into(),
        score: None,
        channel: None,
        params_hash: full[..12].to_string(),
        counts: None,
        image: Some(file_name),
        error: None,
    };
    if let Some(mask) = &mask {
        let [a, b] = spec.score_classes;
        if mask.labels().contains(&a) && mask.labels().contains(&b) {
            let r = fisher_score(&image.channels, mask.labels(), (a, b))?;
            entry.score = Some(r.best);
            entry.channel = Some(r.best_channel);
            entry.counts = Some(r.counts);
        }
    }
    let report = SeparabilityReport::new(&page, spec.score_classes, vec![entry]);
    let report_path = image_path.with_extension("json");
    write_report(&report, &report_path)?;
    Ok(SingleOutcome { image_path, report_path, report })
}
