//! Background isochrome decompositions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use mlscope_core::isochrome::{decompose, stride_for_budget, ImageRaster, KMeansParams, ModelSummary};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::error::ApiError;

/// Images larger than this are subsampled before fitting.
pub const MAX_FIT_POINTS: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerImage {
    pub cluster: usize,
    pub color: [u8; 3],
    pub pixel_count: usize,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub summary: ModelSummary,
    pub layers: Vec<LayerImage>,
    pub point_cloud: String,
}

#[derive(Debug, Clone)]
pub enum JobState {
    Pending,
    Done(Arc<JobResult>),
    Failed(ApiError),
}

pub struct JobQueue {
    jobs: RwLock<HashMap<String, JobState>>,
    next_id: AtomicU64,
    permits: Arc<Semaphore>,
}

impl JobQueue {
    /// `workers` bounds the number of decompositions running at once. Zero
    /// accepts jobs but never runs them.
    pub fn new(workers: usize) -> Self {
        Self {
            jobs: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(0),
            permits: Arc::new(Semaphore::new(workers)),
        }
    }

    pub fn submit(self: &Arc<Self>, raster: ImageRaster, params: KMeansParams) -> String {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("j{n:x}");
        self.jobs.write().insert(id.clone(), JobState::Pending);
        let queue = self.clone();
        let job_id = id.clone();
        tokio::spawn(async move {
            let Ok(_permit) = queue.permits.clone().acquire_owned().await else {
                return;
            };
            let state = match tokio::task::spawn_blocking(move || run(raster, params)).await {
                Ok(Ok(r)) => JobState::Done(Arc::new(r)),
                Ok(Err(e)) => JobState::Failed(e),
                Err(e) => JobState::Failed(ApiError::new(
                    axum::http::StatusCode::INTERNAL_SERVER_ERROR,
                    "Internal",
                    e.to_string(),
                )),
            };
            queue.jobs.write().insert(job_id, state);
        });
        id
    }

    pub fn get(&self, id: &str) -> Result<JobState, ApiError> {
        self.jobs.read().get(id).cloned().ok_or_else(|| ApiError::job_not_found(id))
    }
}

fn run(raster: ImageRaster, params: KMeansParams) -> Result<JobResult, ApiError> {
    let stride = stride_for_budget(&raster, MAX_FIT_POINTS);
    let d = decompose(raster, stride, &params)?;
    let mut layers = Vec::with_capacity(d.layers.len());
    for l in &d.layers {
        layers.push(LayerImage {
            cluster: l.cluster,
            color: l.centroid_color,
            pixel_count: l.pixel_count,
            png_base64: STANDARD.encode(l.to_png(&d.raster)?),
        });
    }
    Ok(JobResult {
        summary: d.summary(params.seed),
        layers,
        point_cloud: d.point_cloud(),
    })
}
