//! HTTP front end for the review API.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{info, warn};
use respire_core::models::ClassifierKind;
use respire_core::review::ReviewService;

use crate::commands::best_model;
use crate::config::PipelineConfig;
use crate::error::{CliError, ExitKind, Result};

/// Largest request body accepted; verdicts are a few hundred bytes.
const MAX_BODY: u64 = 1 << 20;

pub struct ReviewServer {
    server: Arc<tiny_http::Server>,
    service: Arc<ReviewService>,
    pub model: ClassifierKind,
}

impl ReviewServer {
    /// Loads the misclassification list of `model` (or the most accurate
    /// evaluated model) and binds `host:port`. Port 0 picks a free port.
    pub fn bind(cfg: &PipelineConfig, model: Option<ClassifierKind>, port: u16, ui_dir: Option<&Path>) -> Result<Self> {
        let paths = cfg.paths();
        let model = match model {
            Some(m) => m,
            None => best_model(cfg)?,
        };
        let csv = paths.misclassified_file(model);
        if !csv.is_file() {
            return Err(CliError::msg(
                ExitKind::Data,
                format!("{} not found; run `respire evaluate` first", csv.display()),
            ));
        }
        let service = ReviewService::new(&csv, &paths.clips_dir, &paths.verdicts, ui_dir)?;
        let addr = format!("{}:{port}", cfg.review.host);
        let server = tiny_http::Server::http(&addr)
            .map_err(|e| CliError::msg(ExitKind::Port, format!("cannot listen on {addr}: {e}")))?;
        Ok(Self {
            server: Arc::new(server),
            service: Arc::new(service),
            model,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.server_addr().to_ip().expect("tcp listener")
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr())
    }

    /// Serves until the listener is unblocked, one thread per request.
    pub fn run(&self) {
        for req in self.server.incoming_requests() {
            let service = self.service.clone();
            std::thread::spawn(move || respond(&service, req));
        }
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> RunningServer {
        let server = self.server.clone();
        let url = self.url();
        let handle = std::thread::spawn(move || self.run());
        RunningServer {
            server,
            url,
            handle: Some(handle),
        }
    }
}

fn respond(service: &ReviewService, mut req: tiny_http::Request) {
    let mut body = Vec::new();
    let read = std::io::Read::read_to_end(&mut std::io::Read::take(req.as_reader(), MAX_BODY), &mut body);
    let resp = match read {
        Ok(_) => service.handle(req.method().as_str(), req.url(), &body),
        Err(e) => {
            warn!("reading request body: {e}");
            return;
        }
    };
    info!("{} {} -> {}", req.method(), req.url(), resp.status);
    let header = tiny_http::Header::from_bytes("Content-Type", resp.content_type.as_bytes()).expect("valid header");
    let out = tiny_http::Response::from_data(resp.body)
        .with_status_code(resp.status)
        .with_header(header);
    if let Err(e) = req.respond(out) {
        warn!("writing response: {e}");
    }
}

pub struct RunningServer {
    server: Arc<tiny_http::Server>,
    pub url: String,
    handle: Option<JoinHandle<()>>,
}

impl RunningServer {
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Default UI directory: the configured one, else `review-ui/dist` if present.
pub fn ui_dir(cfg: &PipelineConfig, flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| cfg.review.ui_dir.clone())
        .or_else(|| Some(PathBuf::from("review-ui/dist")).filter(|p| p.is_dir()))
}
