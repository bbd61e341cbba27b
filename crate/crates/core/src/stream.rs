//! Online augmentation server.
//!
//! A training loop asks for `(sample_id, epoch)` and receives either the
//! clean image or a hazy version synthesized on the fly. Every decision is
//! a pure function of the global seed, the sample id and the epoch, so the
//! stream is reproducible regardless of request order or concurrency, and
//! epoch 0 reproduces the offline build byte for byte.
//!
//! Wire format over TCP: every frame is a little-endian `u32` payload length
//! followed by the payload.
//!
//! * request payload: UTF-8 JSON [`StreamRequest`]
//! * response payload: UTF-8 JSON [`ResponseHeader`], then a little-endian
//!   `u32` image length, then that many PNG bytes (zero on error)
//!
//! An unknown sample id yields an error response and the connection stays
//! open; a malformed frame yields an error response and the connection is
//! closed.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::haze::HazeParams;
use crate::pipeline::{self, HazeMethod, SampleRecord, SynthesisConfig};
use crate::sampler;

/// Largest request payload the server accepts.
pub const MAX_REQUEST_BYTES: u32 = 64 * 1024;
/// Largest response payload a client accepts.
pub const MAX_RESPONSE_BYTES: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid stream configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceMode {
    Clean,
    Hazy,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRequest {
    pub sample_id: String,
    pub epoch: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_mode: Option<ForceMode>,
}

impl StreamRequest {
    pub fn new(sample_id: impl Into<String>, epoch: u64) -> Self {
        Self {
            sample_id: sample_id.into(),
            epoch,
            force_mode: None,
        }
    }

    pub fn forced(mut self, mode: ForceMode) -> Self {
        self.force_mode = Some(mode);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppliedMode {
    Clean,
    Hazy,
    Baseline,
}

/// JSON metadata preceding the image bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub status: Status,
    pub mode_applied: Option<AppliedMode>,
    pub params_applied: Option<HazeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_transmission: Option<f64>,
    pub error_detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamResponse {
    pub header: ResponseHeader,
    /// PNG bytes; empty on error.
    pub image: Vec<u8>,
}

impl StreamResponse {
    pub fn error(detail: impl Into<String>) -> Self {
        Self {
            header: ResponseHeader {
                status: Status::Error,
                mode_applied: None,
                params_applied: None,
                baseline_transmission: None,
                error_detail: Some(detail.into()),
            },
            image: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.header.status == Status::Ok
    }

    pub fn encode(&self) -> Result<Vec<u8>, StreamError> {
        let mut payload = serde_json::to_vec(&self.header)?;
        let len = u32::try_from(self.image.len()).map_err(|_| StreamError::Protocol("image too large".into()))?;
        payload.extend_from_slice(&len.to_le_bytes());
        payload.extend_from_slice(&self.image);
        Ok(payload)
    }

    pub fn decode(payload: &[u8]) -> Result<Self, StreamError> {
        let mut it = serde_json::Deserializer::from_slice(payload).into_iter::<ResponseHeader>();
        let header = it
            .next()
            .ok_or_else(|| StreamError::Protocol("missing response header".into()))??;
        let rest = &payload[it.byte_offset()..];
        if rest.len() < 4 {
            return Err(StreamError::Protocol("missing image length".into()));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let image = &rest[4..];
        if image.len() != len {
            return Err(StreamError::Protocol(format!(
                "image length field says {len}, payload carries {}",
                image.len()
            )));
        }
        Ok(Self {
            header,
            image: image.to_vec(),
        })
    }
}

pub fn write_frame(mut w: impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before the length.
pub fn read_frame(mut r: impl Read, max_len: u32) -> Result<Option<Vec<u8>>, StreamError> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(StreamError::Protocol("truncated frame length".into())),
            n => filled += n,
        }
    }
    let len = u32::from_le_bytes(len);
    if len > max_len {
        return Err(StreamError::Protocol(format!("frame of {len} bytes exceeds limit {max_len}")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)
        .map_err(|_| StreamError::Protocol("truncated frame payload".into()))?;
    Ok(Some(payload))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub synthesis: SynthesisConfig,
    /// Probability that an unforced request is served hazy.
    pub mix_probability: f64,
    /// Draw fresh haze parameters every epoch; otherwise reuse epoch 0's.
    pub resample_per_epoch: bool,
    /// Maximum concurrent syntheses.
    pub workers: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            synthesis: SynthesisConfig::default(),
            mix_probability: 0.5,
            resample_per_epoch: true,
            workers: 1,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        self.synthesis
            .validate()
            .map_err(|e| StreamError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.mix_probability) {
            return Err(StreamError::Config(format!(
                "mix probability must lie in [0, 1], got {}",
                self.mix_probability
            )));
        }
        if self.workers == 0 {
            return Err(StreamError::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Seeds and choice for one `(sample, epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub hazy: bool,
    /// Seed the haze parameters are drawn from.
    pub params_seed: u64,
}

/// Immutable dataset index plus configuration.
pub struct StreamState {
    config: StreamConfig,
    index: HashMap<String, SampleRecord>,
    permits: Semaphore,
}

impl StreamState {
    pub fn new(records: Vec<SampleRecord>, config: StreamConfig) -> Result<Self, StreamError> {
        config.validate()?;
        let index = records.into_iter().map(|r| (r.sample_id.clone(), r)).collect();
        Ok(Self {
            permits: Semaphore::new(config.workers),
            config,
            index,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn decide(&self, record: &SampleRecord, epoch: u64) -> Decision {
        let epoch_seed = sampler::derive_epoch_seed(record.image_seed, epoch);
        let coin = sampler::unit_draw(sampler::derive_purpose_seed(epoch_seed, "mix"));
        Decision {
            hazy: coin < self.config.mix_probability,
            params_seed: if self.config.resample_per_epoch {
                epoch_seed
            } else {
                record.image_seed
            },
        }
    }

    pub fn handle(&self, request: &StreamRequest) -> StreamResponse {
        let Some(record) = self.index.get(&request.sample_id) else {
            return StreamResponse::error(format!("unknown sample_id {:?}", request.sample_id));
        };
        let decision = self.decide(record, request.epoch);
        let default_method = self.config.synthesis.method();
        let method = match request.force_mode {
            Some(ForceMode::Clean) => None,
            Some(ForceMode::Hazy) => Some(default_method),
            Some(ForceMode::Baseline) => Some(HazeMethod::RandomTransmission),
            None if decision.hazy => Some(default_method),
            None => None,
        };
        let _permit = self.permits.acquire();
        let result = match method {
            None => pipeline::clean_png_bytes(&record.image_path).map(|png| StreamResponse {
                header: ResponseHeader {
                    status: Status::Ok,
                    mode_applied: Some(AppliedMode::Clean),
                    params_applied: None,
                    baseline_transmission: None,
                    error_detail: None,
                },
                image: png,
            }),
            Some(method) => pipeline::synthesize_seeded(
                &record.image_path,
                &record.depth_path,
                &self.config.synthesis,
                decision.params_seed,
                method,
            )
            .and_then(|s| {
                Ok(StreamResponse {
                    header: ResponseHeader {
                        status: Status::Ok,
                        mode_applied: Some(match method {
                            HazeMethod::DepthBased => AppliedMode::Hazy,
                            HazeMethod::RandomTransmission => AppliedMode::Baseline,
                        }),
                        params_applied: Some(s.params),
                        baseline_transmission: s.baseline_transmission,
                        error_detail: None,
                    },
                    image: codec::encode_png(&s.image)?,
                })
            }),
        };
        result.unwrap_or_else(|e| StreamResponse::error(format!("sample {}: {e}", record.sample_id)))
    }
}

/// Serves one request against the loaded state.
pub fn handle_request(request: &StreamRequest, state: &StreamState) -> StreamResponse {
    state.handle(request)
}

fn serve_connection(state: &StreamState, mut stream: TcpStream) -> Result<(), StreamError> {
    loop {
        let request = match read_frame(&mut stream, MAX_REQUEST_BYTES) {
            Ok(None) => return Ok(()),
            Ok(Some(payload)) => serde_json::from_slice::<StreamRequest>(&payload)
                .map_err(|e| StreamError::Protocol(format!("bad request: {e}"))),
            Err(e) => Err(e),
        };
        match request {
            Ok(req) => write_frame(&mut stream, &state.handle(&req).encode()?)?,
            Err(e) => {
                let _ = write_frame(&mut stream, &StreamResponse::error(e.to_string()).encode()?);
                return Err(e);
            }
        }
    }
}

pub struct Server {
    listener: TcpListener,
    state: Arc<StreamState>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, state: StreamState) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            state: Arc::new(state),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    fn accept_loop(self, stop: Option<Arc<AtomicBool>>) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let state = Arc::clone(&self.state);
            std::thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(&state, stream) {
                    log::debug!("connection {peer:?} closed: {e}");
                }
            });
        }
        Ok(())
    }

    /// Serves until the process exits.
    pub fn run(self) -> io::Result<()> {
        self.accept_loop(None)
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || self.accept_loop(Some(flag)));
        Ok(ServerHandle { addr, stop, thread })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<io::Result<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections; open connections finish on their own.
    pub fn shutdown(self) -> io::Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        self.thread
            .join()
            .map_err(|_| io::Error::other("server thread panicked"))?
    }
}

/// Blocking client for one connection.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn request(&mut self, request: &StreamRequest) -> Result<StreamResponse, StreamError> {
        write_frame(&mut self.stream, &serde_json::to_vec(request)?)?;
        self.read_response()
    }

    /// Sends an arbitrary payload as one frame.
    pub fn send_raw(&mut self, payload: &[u8]) -> Result<StreamResponse, StreamError> {
        write_frame(&mut self.stream, payload)?;
        self.read_response()
    }

    pub fn read_response(&mut self) -> Result<StreamResponse, StreamError> {
        let payload = read_frame(&mut self.stream, MAX_RESPONSE_BYTES)?
            .ok_or_else(|| StreamError::Protocol("server closed the connection".into()))?;
        StreamResponse::decode(&payload)
    }
}
