//! Read-only HTTP service over a directory of posterior archives.
//!
//! Archives load in the background at startup; until a model is ready its
//! endpoints answer 503.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use jointrait_core::inference::{ColumnSummary, Diagnostics, PosteriorArchive};
use jointrait_core::io::{read_archive, ArchiveManifest};
use jointrait_core::predict::FieldError;
use jointrait_core::{predict, ModelSpec, PredictionRequest};
use log::{error, info};
use serde::Serialize;
use tower_http::services::ServeDir;

use crate::PredictionResponse;

pub struct LoadedModel {
    pub manifest: ArchiveManifest,
    pub archive: PosteriorArchive,
}

enum Slot {
    Loading,
    Ready(Arc<LoadedModel>),
}

/// Model id to load state. Archives never change once loaded.
#[derive(Clone, Default)]
pub struct Store {
    slots: Arc<RwLock<BTreeMap<String, Slot>>>,
}

impl Store {
    /// Archive files (`*.jma`) in `dir`, sorted by name.
    pub fn archive_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jma"))
            .collect();
        files.sort();
        Ok(files)
    }

    pub fn mark_loading(&self, id: &str) {
        self.slots.write().expect("store lock").insert(id.into(), Slot::Loading);
    }

    pub fn insert(&self, model: LoadedModel) {
        let id = model.manifest.id.clone();
        self.slots.write().expect("store lock").insert(id, Slot::Ready(Arc::new(model)));
    }

    fn remove(&self, id: &str) {
        self.slots.write().expect("store lock").remove(id);
    }

    /// Loads one archive file into its slot, dropping the slot on failure.
    pub fn load(&self, path: &Path) -> bool {
        let id = crate::commands::model_id(path);
        match read_archive(path) {
            Ok(archive) => {
                let manifest = ArchiveManifest::for_file(path, &archive);
                info!("loaded model `{id}` ({} draws)", manifest.n_draws);
                self.insert(LoadedModel { manifest, archive });
                true
            }
            Err(e) => {
                error!("skipping {}: {e}", path.display());
                self.remove(&id);
                false
            }
        }
    }

    fn lookup(&self, id: &str) -> Result<Arc<LoadedModel>, Response> {
        match self.slots.read().expect("store lock").get(id) {
            None => Err(error_response(StatusCode::NOT_FOUND, id, format!("no model `{id}`"))),
            Some(Slot::Loading) => Err(loading(id)),
            Some(Slot::Ready(m)) => Ok(m.clone()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    model_id: &'a str,
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    errors: Vec<FieldError>,
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn error_response(status: StatusCode, id: &str, error: String) -> Response {
    json_response(status, &ErrorBody { model_id: id, error, errors: vec![] })
}

fn loading(id: &str) -> Response {
    let mut r = error_response(StatusCode::SERVICE_UNAVAILABLE, id, "archive is still loading".into());
    r.headers_mut().insert(header::RETRY_AFTER, header::HeaderValue::from_static("1"));
    r
}

async fn list_models(State(store): State<Store>) -> Response {
    let slots = store.slots.read().expect("store lock");
    if let Some((id, _)) = slots.iter().find(|(_, s)| matches!(s, Slot::Loading)) {
        return loading(id);
    }
    let manifests: Vec<&ArchiveManifest> = slots
        .values()
        .filter_map(|s| match s {
            Slot::Ready(m) => Some(&m.manifest),
            Slot::Loading => None,
        })
        .collect();
    json_response(StatusCode::OK, &manifests)
}

#[derive(Serialize)]
struct ModelDetail<'a> {
    model_id: &'a str,
    /// Seed the archive was fitted with.
    seed: u64,
    manifest: &'a ArchiveManifest,
    spec: &'a ModelSpec,
    diagnostics: &'a Diagnostics,
    summary: Vec<ColumnSummary>,
}

async fn get_model(State(store): State<Store>, UrlPath(id): UrlPath<String>) -> Response {
    let model = match store.lookup(&id) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let a = &model.archive;
    json_response(
        StatusCode::OK,
        &ModelDetail {
            model_id: &id,
            seed: a.config.seed,
            manifest: &model.manifest,
            spec: &a.spec,
            diagnostics: &a.diagnostics,
            summary: a.summary(),
        },
    )
}

async fn predict_model(State(store): State<Store>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let model = match store.lookup(&id) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let request: PredictionRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            let errors = vec![FieldError { field: "body".into(), message: e.to_string() }];
            return json_response(
                StatusCode::UNPROCESSABLE_ENTITY,
                &ErrorBody { model_id: &id, error: "malformed request body".into(), errors },
            );
        }
    };
    let errors = request.check(&model.archive.spec);
    if !errors.is_empty() {
        return json_response(
            StatusCode::UNPROCESSABLE_ENTITY,
            &ErrorBody { model_id: &id, error: "request violates the model's invariants".into(), errors },
        );
    }
    let worker = model.clone();
    let result = tokio::task::spawn_blocking(move || predict(&request, &worker.archive)).await;
    match result {
        Ok(Ok(prediction)) => json_response(StatusCode::OK, &PredictionResponse { model_id: id, prediction }),
        Ok(Err(e)) => error_response(StatusCode::UNPROCESSABLE_ENTITY, &id, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, &id, e.to_string()),
    }
}

pub fn router(store: Store, ui: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/models", get(list_models))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/predict", post(predict_model))
        .with_state(store);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Registers every archive in `dir` as loading and loads them on blocking
/// threads, so the service can answer (503) while large archives are read.
pub fn spawn_store(dir: &Path) -> std::io::Result<Store> {
    let files = Store::archive_files(dir)?;
    if files.is_empty() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no .jma archives in {}", dir.display()),
        ));
    }
    let store = Store::default();
    for f in &files {
        store.mark_loading(&crate::commands::model_id(f));
    }
    for f in files {
        let s = store.clone();
        tokio::task::spawn_blocking(move || s.load(&f));
    }
    Ok(store)
}
