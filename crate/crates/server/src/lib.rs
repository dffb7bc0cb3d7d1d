//! HTTP API over a trained FA-INR model for the two-stage exploration
//! workflow: inspect expert maps and field slices, then sweep parameters
//! over a chosen expert region.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/info` | |
//! | POST | `/predict` | `{coords, params}`, `?binary=true` |
//! | GET | `/slice` | `axis, index, params=a,b, binary` |
//! | GET | `/expert-map` | `axis, index` |
//! | POST | `/sensitivity` | `{region, paramIndex, range, steps, baseParams}` |
//! | GET | `/experts/summary` | |
//!
//! All numbers are in physical units. Errors are `{code, message, field}`
//! with status 422 for requests that parse but cannot be served.

mod error;
mod session;
pub mod wire;

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::{ApiError, ErrorBody};
pub use session::{ServiceOptions, Session, SessionError};
use wire::*;

type Shared = State<Arc<Session>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs `f` on the blocking pool so model evaluation never stalls the reactor.
async fn blocking<T: Send + 'static>(
    session: Arc<Session>,
    f: impl FnOnce(&Session) -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&session))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

async fn info(State(s): Shared) -> Json<Info> {
    Json(s.info())
}

async fn predict(
    State(s): Shared,
    flag: Result<Query<BinaryFlag>, QueryRejection>,
    body: Result<Json<PredictRequest>, JsonRejection>,
) -> ApiResult<PredictResponse> {
    let Query(flag) = flag?;
    let Json(req) = body?;
    blocking(s, move |s| s.predict(&req, flag.binary)).await
}

async fn slice(State(s): Shared, q: Result<Query<SliceQuery>, QueryRejection>) -> ApiResult<SliceResponse> {
    let Query(q) = q?;
    blocking(s, move |s| s.slice(&q)).await
}

async fn expert_map(State(s): Shared, q: Result<Query<MapQuery>, QueryRejection>) -> ApiResult<ExpertMapResponse> {
    let Query(q) = q?;
    blocking(s, move |s| s.expert_map(&q)).await
}

async fn sensitivity(
    State(s): Shared,
    body: Result<Json<SensitivityRequest>, JsonRejection>,
) -> ApiResult<SensitivityResponse> {
    let Json(req) = body?;
    blocking(s, move |s| s.sensitivity(&req)).await
}

async fn summary(State(s): Shared) -> ApiResult<ExpertSummary> {
    blocking(s, |s| s.summary()).await
}

fn cors(options: &ServiceOptions) -> CorsLayer {
    let origin = if options.allowed_origins.is_empty() {
        AllowOrigin::from(Any)
    } else {
        let list: Vec<HeaderValue> = options
            .allowed_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        AllowOrigin::list(list)
    };
    CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers(Any)
}

pub fn router(session: Arc<Session>) -> Router {
    let cors = cors(session.options());
    Router::new()
        .route("/info", get(info))
        .route("/predict", post(predict))
        .route("/slice", get(slice))
        .route("/expert-map", get(expert_map))
        .route("/sensitivity", post(sensitivity))
        .route("/experts/summary", get(summary))
        .layer(DefaultBodyLimit::max(256 << 20))
        .layer(cors)
        .with_state(session)
}

/// Serves `session` on an already bound listener until the task is dropped.
pub async fn serve(listener: TcpListener, session: Session) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("explorer service listening on http://{addr}");
    }
    axum::serve(listener, router(Arc::new(session))).await
}
