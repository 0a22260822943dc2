//! Wire types. Requests are parsed from raw bytes so that malformed bodies map to 400.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use coldstart_core::recommend::{Recommendation, Strategy};
use coldstart_core::{EntityKind, Error, Event, Signal, UserId, UserProfile};
use serde::{Deserialize, Serialize};

use crate::snapshot::{Snapshot, Stamps};

pub const DEFAULT_K: i64 = 50;

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct WireEvent {
    pub day: i64,
    pub signal: String,
    pub kind: String,
    pub entity_id: u64,
}

/// Registration-day activity of one new user.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
pub struct EmbedRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<u64>,
    pub registration_day: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default)]
    pub events: Vec<WireEvent>,
    /// Channel layout the caller was built against; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_spec_version: Option<u32>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct RecommendRequest {
    #[serde(flatten)]
    pub user: EmbedRequest,
    #[serde(default = "default_k")]
    pub k: i64,
    #[serde(default = "default_strategy")]
    pub strategy: String,
}

fn default_k() -> i64 {
    DEFAULT_K
}

fn default_strategy() -> String {
    Strategy::SemiPersonalized.as_str().to_string()
}

/// Parsed user input in core types.
#[derive(Clone, Debug)]
pub struct UserInput {
    pub user: UserId,
    pub profile: UserProfile,
    pub events: Vec<Event>,
    pub channel_spec_version: Option<u32>,
}

impl EmbedRequest {
    pub fn to_input(&self) -> Result<UserInput, ApiError> {
        let user = UserId(self.user_id.unwrap_or(0));
        let events = self
            .events
            .iter()
            .map(|e| {
                Ok(Event {
                    user,
                    day: e.day,
                    signal: e.signal.parse::<Signal>()?,
                    kind: e.kind.parse::<EntityKind>()?,
                    entity: e.entity_id,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(UserInput {
            user,
            profile: UserProfile {
                country: self.country.clone(),
                age: self.age,
                registration_day: self.registration_day,
            },
            events,
            channel_spec_version: self.channel_spec_version,
        })
    }
}

impl RecommendRequest {
    /// Strategy and list length, validated.
    pub fn options(&self) -> Result<(Strategy, usize), ApiError> {
        let strategy = match self.strategy.parse::<Strategy>() {
            Ok(s @ (Strategy::SemiPersonalized | Strategy::FullPersonalized)) => s,
            _ => {
                return Err(ApiError::bad_request(format!(
                    "unknown strategy {:?}; expected \"semi\" or \"full\"",
                    self.strategy
                )))
            }
        };
        if self.k < 1 {
            return Err(ApiError::bad_request(format!("k must be >= 1, got {}", self.k)));
        }
        Ok((strategy, self.k as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub snapshot_version: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub snapshot_version: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<usize>,
    pub tracks: Vec<u64>,
    pub scores: Vec<f64>,
    pub stamps: Stamps,
}

impl RecommendResponse {
    pub fn new(rec: &Recommendation, snapshot: &Snapshot, user_id: Option<u64>) -> Self {
        RecommendResponse {
            snapshot_version: snapshot.version.clone(),
            strategy: rec.strategy,
            user_id,
            segment_id: rec.segment,
            tracks: rec.items.iter().map(|(t, _)| t.0).collect(),
            scores: rec.items.iter().map(|(_, s)| *s).collect(),
            stamps: snapshot.stamps.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReloadRequest {
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReloadResponse {
    pub old_version: Option<String>,
    pub new_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub snapshot_version: Option<String>,
    pub uptime_seconds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// An HTTP status with a message, rendered as `{"error": ...}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn unavailable() -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no snapshot loaded")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownSignal(_) | Error::UnknownEntityKind(_) | Error::InvalidConfig(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::LeakageGuard { .. } | Error::DimensionMismatch { .. } | Error::Validation(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &ErrorBody { error: self.message })
    }
}

/// JSON body with exactly the bytes `serde_json::to_vec` produces.
pub fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("serializable response");
    (status, [(axum::http::header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}
