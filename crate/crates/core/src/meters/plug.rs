//! Hardware plug driver and reference mock plug.
//!
//! Wire protocol v1 (see `docs/plug-protocol.md`): the client sends
//! `GET /v1/power` over HTTP/1.1 with `Connection: close`; a healthy plug
//! answers `200` with a single JSON object `{"power_mw": <unsigned integer>}`.
//! `503` means the plug is temporarily unable to measure.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;

use super::{MeterError, SampleError, Sampler};
use crate::clock::{Clock, SystemClock};
use crate::telemetry::{MeterDescriptor, PowerSample, Reading, Scope};

pub const PLUG_PATH: &str = "/v1/power";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerBody {
    power_mw: u64,
}

fn timeout_to_unavailable(endpoint: &str, e: std::io::Error) -> MeterError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => MeterError::MeterUnavailable(format!("{endpoint}: timed out")),
        _ => MeterError::MeterUnavailable(format!("{endpoint}: {e}")),
    }
}

/// One request/response exchange, stamped with the wall clock at receipt.
pub fn plug_query(endpoint: &str, timeout_ms: u64) -> Result<PowerSample, MeterError> {
    plug_query_with_clock(endpoint, timeout_ms, &SystemClock, &"plug".into())
}

pub fn plug_query_with_clock(
    endpoint: &str,
    timeout_ms: u64,
    clock: &dyn Clock,
    source: &crate::telemetry::MeterId,
) -> Result<PowerSample, MeterError> {
    let timeout = Duration::from_millis(timeout_ms.max(1));
    let addr: SocketAddr = endpoint
        .to_socket_addrs()
        .map_err(|e| MeterError::MeterUnavailable(format!("{endpoint}: {e}")))?
        .next()
        .ok_or_else(|| MeterError::MeterUnavailable(format!("{endpoint}: no address")))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| timeout_to_unavailable(endpoint, e))?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let request = format!(
        "GET {PLUG_PATH} HTTP/1.1\r\nHost: {endpoint}\r\nAccept: application/json\r\nConnection: close\r\n\r\n"
    );
    stream
        .write_all(request.as_bytes())
        .map_err(|e| timeout_to_unavailable(endpoint, e))?;
    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .map_err(|e| timeout_to_unavailable(endpoint, e))?;
    let received = clock.now_ms();
    let raw = String::from_utf8_lossy(&raw).into_owned();
    let power_mw = parse_response(&raw)?;
    Ok(PowerSample::new(received, source.clone(), Scope::Host, power_mw as f64))
}

fn parse_response(raw: &str) -> Result<u64, MeterError> {
    let protocol = |reason: &str| MeterError::MeterProtocolError {
        reason: reason.to_owned(),
        raw: raw.to_owned(),
    };
    let (head, body) = raw
        .split_once("\r\n\r\n")
        .ok_or_else(|| protocol("response has no header terminator"))?;
    let status_line = head.lines().next().unwrap_or_default();
    let mut parts = status_line.split_whitespace();
    let version = parts.next().unwrap_or_default();
    if !version.starts_with("HTTP/1.") {
        return Err(protocol("not an HTTP/1.x response"));
    }
    let status: u16 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| protocol("missing status code"))?;
    match status {
        200 => {}
        503 => return Err(MeterError::MeterUnavailable(format!("plug busy: {}", body.trim()))),
        other => return Err(protocol(&format!("unexpected status {other}"))),
    }
    serde_json::from_str::<PowerBody>(body.trim())
        .map(|b| b.power_mw)
        .map_err(|e| protocol(&format!("bad body: {e}")))
}

/// Polls one plug per tick.
pub struct PlugClient {
    descriptor: MeterDescriptor,
    endpoint: String,
    timeout_ms: u64,
}

impl PlugClient {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            descriptor: MeterDescriptor::hardware_plug(id),
            endpoint: endpoint.into(),
            timeout_ms,
        }
    }
}

impl Sampler for PlugClient {
    fn name(&self) -> &str {
        self.descriptor.meter_id.as_str()
    }

    fn descriptors(&self) -> Vec<MeterDescriptor> {
        vec![self.descriptor.clone()]
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        let s = plug_query_with_clock(&self.endpoint, self.timeout_ms, clock, &self.descriptor.meter_id)?;
        Ok(vec![Reading::Power(s)])
    }
}

/// What the mock plug answers.
#[derive(Clone)]
pub enum MockPlugBehavior {
    Fixed(u64),
    /// One value per request, in order; answers 503 once exhausted.
    Replay(Vec<u64>),
    /// Accepts the connection and never answers.
    Hang,
    /// Answers 200 with this literal body.
    RawBody(String),
    Status(u16),
    Dynamic(Arc<dyn Fn() -> u64 + Send + Sync>),
}

/// Reference implementation of the plug side of the protocol.
pub struct MockPlug {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockPlug {
    pub fn start(bind: &str, behavior: MockPlugBehavior) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicUsize::new(0));
        let (stop2, served2) = (Arc::clone(&stop), Arc::clone(&served));
        let handle = std::thread::spawn(move || {
            let mut parked: Vec<TcpStream> = Vec::new();
            while !stop2.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let n = served2.fetch_add(1, Ordering::SeqCst);
                        if let Some(s) = serve(stream, &behavior, n) {
                            parked.push(s);
                        }
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
                    Err(_) => break,
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            served,
            handle: Some(handle),
        })
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn requests_served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread until the process is killed.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockPlug {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(2))).ok()?;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 512];
    while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
        if buf.len() > 16 * 1024 {
            break;
        }
    }
    Some(String::from_utf8_lossy(&buf).into_owned())
}

/// Returns the stream when the behaviour is to hold it open without answering.
fn serve(mut stream: TcpStream, behavior: &MockPlugBehavior, n: usize) -> Option<TcpStream> {
    let request = read_request(&mut stream)?;
    let first = request.lines().next().unwrap_or_default();
    let wanted = format!("GET {PLUG_PATH} ");
    let (status, body) = if !first.starts_with(&wanted) {
        (404, r#"{"error":"unknown path"}"#.to_owned())
    } else {
        match behavior {
            MockPlugBehavior::Fixed(p) => (200, format!(r#"{{"power_mw":{p}}}"#)),
            MockPlugBehavior::Replay(values) => match values.get(n) {
                Some(p) => (200, format!(r#"{{"power_mw":{p}}}"#)),
                None => (503, r#"{"error":"replay exhausted"}"#.to_owned()),
            },
            MockPlugBehavior::Hang => return Some(stream),
            MockPlugBehavior::RawBody(b) => (200, b.clone()),
            MockPlugBehavior::Status(s) => (*s, r#"{"error":"configured failure"}"#.to_owned()),
            MockPlugBehavior::Dynamic(f) => (200, format!(r#"{{"power_mw":{}}}"#, f())),
        }
    };
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        503 => "Service Unavailable",
        _ => "Error",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    None
}
