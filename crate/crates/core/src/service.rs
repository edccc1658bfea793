//! Pose-initialization service: newline-delimited JSON over TCP, one
//! request per line, one response per line. The model is shared
//! read-only across connections; nothing about a request outlives its
//! response.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::{input_from_bytes, PreprocessConfig};
use crate::error::Result;
use crate::eval::to_world_pose;
use crate::geometry::NormalizationStats;
use crate::model::{AprModel, Modality};

pub const DEFAULT_PORT: u16 = 7431;

/// Network and reporting knobs for the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    /// Diagonal of the 6x6 pose covariance attached to every estimate:
    /// x, y, z variances in m^2, then roll, pitch, yaw in rad^2.
    pub covariance_diag: [f64; 6],
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: DEFAULT_PORT,
            covariance_diag: [0.25, 0.25, 0.25, 0.01, 0.01, 0.02],
        }
    }
}

/// One pose query. The payload is the modality's on-disk file format,
/// referenced by a server-visible path or inlined as base64; exactly
/// one of the two must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitPoseRequest {
    pub id: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_b64: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitPoseResponse {
    /// Echo of the request id; empty when the line was not valid JSON.
    pub id: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    /// Canonical unit quaternion, w x y z.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quaternion: Option<[f64; 4]>,
    /// Row-major 6x6 pose covariance (36 values), diagonal by construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_ms: Option<f64>,
}

impl InitPoseResponse {
    fn error(id: &str, message: impl Into<String>) -> InitPoseResponse {
        InitPoseResponse {
            id: id.to_string(),
            status: "error".to_string(),
            message: Some(message.into()),
            position: None,
            quaternion: None,
            covariance: None,
            inference_ms: None,
        }
    }
}

pub struct InitPoseService {
    pub model: AprModel,
    pub norm: NormalizationStats,
    pub pre: PreprocessConfig,
    pub covariance_diag: [f64; 6],
}

impl InitPoseService {
    pub fn new(
        model: AprModel,
        norm: NormalizationStats,
        pre: PreprocessConfig,
        covariance_diag: [f64; 6],
    ) -> InitPoseService {
        InitPoseService {
            model,
            norm,
            pre,
            covariance_diag,
        }
    }

    /// Answer one request line with one response line (no trailing
    /// newline). Never panics on untrusted input.
    pub fn handle_line(&self, line: &str) -> String {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                let resp = InitPoseResponse::error("", format!("parse: {e}"));
                return serde_json::to_string(&resp).expect("response serializes");
            }
        };
        if value.get("ping").and_then(|v| v.as_bool()) == Some(true) {
            return "{\"pong\":true}".to_string();
        }
        // Recover the id before the strict parse so schema errors still
        // name the request they refuse.
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .to_string();
        let resp = match serde_json::from_value::<InitPoseRequest>(value) {
            Ok(req) => self.handle_request(&req),
            Err(e) => InitPoseResponse::error(&id, format!("parse: {e}")),
        };
        serde_json::to_string(&resp).expect("response serializes")
    }

    /// Full inference path for one request: payload bytes, modality
    /// preprocessing, forward pass, denormalize, canonicalize.
    pub fn handle_request(&self, req: &InitPoseRequest) -> InitPoseResponse {
        if req.id.is_empty() {
            return InitPoseResponse::error("", "id must be non-empty");
        }
        if req.modality != self.model.config.modality {
            return InitPoseResponse::error(
                &req.id,
                format!(
                    "model serves {} but request carries {}",
                    self.model.config.modality, req.modality
                ),
            );
        }
        let bytes = match (&req.path, &req.data_b64) {
            (Some(_), Some(_)) => {
                return InitPoseResponse::error(&req.id, "exactly one of path/data_b64 allowed");
            }
            (None, None) => {
                return InitPoseResponse::error(&req.id, "one of path/data_b64 required");
            }
            (Some(path), None) => match std::fs::read(path) {
                Ok(b) => b,
                Err(e) => {
                    return InitPoseResponse::error(&req.id, format!("read {path}: {e}"));
                }
            },
            (None, Some(b64)) => match BASE64.decode(b64) {
                Ok(b) => b,
                Err(e) => {
                    return InitPoseResponse::error(&req.id, format!("base64: {e}"));
                }
            },
        };
        let start = Instant::now();
        let input = match input_from_bytes(&bytes, &self.model.config, &self.pre) {
            Ok(i) => i,
            Err(e) => return InitPoseResponse::error(&req.id, e.to_string()),
        };
        let out = self.model.predict(&input);
        let pose = match to_world_pose(&out, &self.norm) {
            Ok(p) => p,
            Err(e) => return InitPoseResponse::error(&req.id, e.to_string()),
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let q = pose.orientation;
        let mut covariance = vec![0.0; 36];
        for (i, v) in self.covariance_diag.iter().enumerate() {
            covariance[i * 6 + i] = *v;
        }
        InitPoseResponse {
            id: req.id.clone(),
            status: "ok".to_string(),
            message: None,
            position: Some(pose.position),
            quaternion: Some([q.w, q.x, q.y, q.z]),
            covariance: Some(covariance),
            inference_ms: Some(elapsed),
        }
    }
}

/// Accept loop: one thread per connection, all sharing the service
/// read-only. Returns only if the listener itself fails.
pub fn serve(listener: TcpListener, service: Arc<InitPoseService>) -> Result<()> {
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let service = Arc::clone(&service);
                std::thread::spawn(move || handle_connection(stream, &service));
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

fn handle_connection(stream: TcpStream, service: &InitPoseService) {
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut writer = stream;
    for line in BufReader::new(read_half).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = service.handle_line(&line);
        if writer
            .write_all(response.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .is_err()
        {
            break;
        }
    }
}
