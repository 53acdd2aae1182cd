use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use palimpsest_core::model_io::FittedModel;
use palimpsest_core::pipeline::{fit, render, EnhanceOutcome, EnhanceSpec, PageInputs, Plan};
use palimpsest_core::Result;
use serde::Serialize;

use crate::error::ErrorBody;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct Job {
    pub status: JobStatus,
    pub spec: EnhanceSpec,
    pub plan: Plan,
    pub cache_hit: bool,
    pub outcome: Option<Arc<EnhanceOutcome>>,
    pub error: Option<ErrorBody>,
}

/// One loaded page. The page snapshot is replaced wholesale on label
/// updates, so readers never observe a half-updated mask.
pub struct Session {
    pub id: String,
    inputs: RwLock<Arc<PageInputs>>,
    cache: Mutex<HashMap<String, Arc<FittedModel>>>,
    jobs: Mutex<HashMap<String, Job>>,
    /// Held for the whole of a fit; queued jobs wait here in arrival order.
    pub fit_queue: tokio::sync::Mutex<()>,
    cache_hits: AtomicU64,
}

impl Session {
    pub fn new(id: String, inputs: PageInputs) -> Self {
        Session {
            id,
            inputs: RwLock::new(Arc::new(inputs)),
            cache: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            fit_queue: tokio::sync::Mutex::new(()),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn inputs(&self) -> Arc<PageInputs> {
        self.inputs.read().expect("session lock").clone()
    }

    pub fn replace_inputs(&self, inputs: PageInputs) {
        *self.inputs.write().expect("session lock") = Arc::new(inputs);
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn cached_models(&self) -> usize {
        self.cache.lock().expect("session lock").len()
    }

    pub fn insert_job(&self, id: String, job: Job) {
        self.jobs.lock().expect("session lock").insert(id, job);
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.jobs.lock().expect("session lock").get(id).cloned()
    }

    pub fn update_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.lock().expect("session lock").get_mut(id) {
            f(job);
        }
    }

    /// Fit (or reuse) the planned model and render it. Blocking.
    pub fn execute(&self, inputs: &PageInputs, spec: &EnhanceSpec, plan: &Plan) -> Result<(EnhanceOutcome, bool)> {
        let cached = self.cache.lock().expect("session lock").get(&plan.fit_key).cloned();
        let (model, hit) = match cached {
            Some(m) => {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                (m, true)
            }
            None => {
                let m = Arc::new(fit(inputs, spec, plan)?);
                self.cache.lock().expect("session lock").insert(plan.fit_key.clone(), m.clone());
                (m, false)
            }
        };
        Ok((render(inputs, spec, plan, &model)?, hit))
    }
}
