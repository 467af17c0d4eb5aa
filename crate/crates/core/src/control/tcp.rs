//! Broker over TCP using the length-prefixed JSON framing in [`super::codec`].
//!
//! Each subscription uses its own connection. Publishing shares one
//! connection per client, so per-publisher ordering carries over from TCP.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Sender};

use super::broker::{Broker, BrokerError, BrokerEvent, InProcessBroker, Subscription};
use super::codec::{read_frame, write_frame, Frame};
use super::ControlMessage;

const ACCEPT_POLL: Duration = Duration::from_millis(20);
const SUBSCRIBE_ACK_TIMEOUT: Duration = Duration::from_secs(5);

pub struct TcpBrokerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl TcpBrokerServer {
    pub fn bind(addr: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        let hub = InProcessBroker::new();
        let (stop2, conns2) = (Arc::clone(&stop), Arc::clone(&connections));
        let accept = std::thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        log::debug!("broker: connection from {peer}");
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_nodelay(true);
                        if let Ok(clone) = stream.try_clone() {
                            conns2.lock().expect("connections lock").push(clone);
                        }
                        let hub = Arc::clone(&hub);
                        std::thread::spawn(move || serve_connection(stream, &hub));
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
                    Err(e) => {
                        log::warn!("broker: accept failed: {e}");
                        std::thread::sleep(ACCEPT_POLL);
                    }
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            connections,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Closes every open client connection but keeps listening.
    pub fn drop_connections(&self) {
        for c in self.connections.lock().expect("connections lock").drain(..) {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.drop_connections();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpBrokerServer {
    fn drop(&mut self) {
        self.stop_all();
    }
}

fn serve_connection(stream: TcpStream, hub: &InProcessBroker) {
    let Ok(write_half) = stream.try_clone() else { return };
    let writer = Arc::new(Mutex::new(BufWriter::new(write_half)));
    let mut reader = BufReader::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                log::debug!("broker: dropping connection: {e}");
                break;
            }
        };
        match frame {
            Frame::Publish { topic, message } => hub.fan_out(&topic, &message),
            Frame::Subscribe { topics } => {
                let Ok(sub) = hub.subscribe(&topics) else { break };
                let ack = Frame::Subscribed { topics };
                if write_frame(&mut *writer.lock().expect("writer lock"), &ack).is_err() {
                    break;
                }
                let writer = Arc::clone(&writer);
                std::thread::spawn(move || loop {
                    match sub.recv_timeout(Duration::from_millis(200)) {
                        Ok(Some(BrokerEvent::Message { topic, message })) => {
                            let f = Frame::Deliver { topic, message };
                            if write_frame(&mut *writer.lock().expect("writer lock"), &f).is_err() {
                                return;
                            }
                        }
                        Ok(_) => {
                            // probe for a closed peer between deliveries
                            if writer.lock().expect("writer lock").get_ref().peer_addr().is_err() {
                                return;
                            }
                        }
                        Err(_) => return,
                    }
                });
            }
            Frame::Deliver { .. } | Frame::Subscribed { .. } => {
                log::debug!("broker: ignoring server-side frame from client");
            }
        }
    }
}

/// Client side of the TCP broker.
pub struct TcpBroker {
    addr: String,
    publisher: Mutex<Option<BufWriter<TcpStream>>>,
}

impl TcpBroker {
    pub fn connect(addr: &str) -> Result<Arc<Self>, BrokerError> {
        let b = Self {
            addr: addr.to_owned(),
            publisher: Mutex::new(None),
        };
        *b.publisher.lock().expect("publisher lock") = Some(b.open()?);
        Ok(Arc::new(b))
    }

    fn open(&self) -> Result<BufWriter<TcpStream>, BrokerError> {
        let s = TcpStream::connect(&self.addr).map_err(|e| BrokerError::Unreachable(format!("{}: {e}", self.addr)))?;
        let _ = s.set_nodelay(true);
        Ok(BufWriter::new(s))
    }
}

impl Broker for TcpBroker {
    fn publish(&self, topic: &str, message: &ControlMessage) -> Result<(), BrokerError> {
        let frame = Frame::Publish {
            topic: topic.to_owned(),
            message: message.clone(),
        };
        let mut guard = self.publisher.lock().expect("publisher lock");
        if let Some(w) = guard.as_mut() {
            if write_frame(w, &frame).is_ok() {
                return Ok(());
            }
        }
        // one reconnect attempt; the message is resent whole
        let mut w = self.open()?;
        write_frame(&mut w, &frame).map_err(|e| BrokerError::Disconnected(e.to_string()))?;
        *guard = Some(w);
        Ok(())
    }

    fn subscribe(&self, topics: &[String]) -> Result<Subscription, BrokerError> {
        let stream = subscribe_connection(&self.addr, topics)?;
        let (tx, rx) = unbounded();
        let closed = Arc::new(AtomicBool::new(false));
        let current = Arc::new(Mutex::new(stream.try_clone().ok()));
        let guard = SubGuard {
            closed: Arc::clone(&closed),
            current: Arc::clone(&current),
        };
        let (addr, topics) = (self.addr.clone(), topics.to_vec());
        std::thread::spawn(move || subscriber_loop(stream, &addr, &topics, &tx, &closed, &current));
        Ok(Subscription::with_guard(rx, Box::new(guard)))
    }
}

struct SubGuard {
    closed: Arc<AtomicBool>,
    current: Arc<Mutex<Option<TcpStream>>>,
}

impl Drop for SubGuard {
    fn drop(&mut self) {
        self.closed.store(true, Ordering::SeqCst);
        if let Some(s) = self.current.lock().expect("stream lock").take() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

fn subscribe_connection(addr: &str, topics: &[String]) -> Result<TcpStream, BrokerError> {
    let mut s = TcpStream::connect(addr).map_err(|e| BrokerError::Unreachable(format!("{addr}: {e}")))?;
    let _ = s.set_nodelay(true);
    write_frame(
        &mut s,
        &Frame::Subscribe {
            topics: topics.to_vec(),
        },
    )
    .map_err(|e| BrokerError::Disconnected(e.to_string()))?;
    s.set_read_timeout(Some(SUBSCRIBE_ACK_TIMEOUT))
        .map_err(|e| BrokerError::Disconnected(e.to_string()))?;
    match read_frame(&mut s) {
        Ok(Some(Frame::Subscribed { .. })) => {}
        Ok(other) => return Err(BrokerError::Disconnected(format!("unexpected reply {other:?}"))),
        Err(e) => return Err(BrokerError::Disconnected(e.to_string())),
    }
    s.set_read_timeout(None)
        .map_err(|e| BrokerError::Disconnected(e.to_string()))?;
    Ok(s)
}

fn subscriber_loop(
    mut stream: TcpStream,
    addr: &str,
    topics: &[String],
    tx: &Sender<BrokerEvent>,
    closed: &AtomicBool,
    current: &Mutex<Option<TcpStream>>,
) {
    loop {
        let mut reader = BufReader::new(stream);
        loop {
            match read_frame(&mut reader) {
                Ok(Some(Frame::Deliver { topic, message })) => {
                    if tx.send(BrokerEvent::Message { topic, message }).is_err() {
                        return;
                    }
                }
                Ok(Some(_)) => {}
                Ok(None) | Err(_) => break,
            }
        }
        let mut backoff = Duration::from_millis(20);
        stream = loop {
            if closed.load(Ordering::SeqCst) {
                return;
            }
            match subscribe_connection(addr, topics) {
                Ok(s) => break s,
                Err(e) => {
                    log::debug!("broker: resubscribe failed: {e}");
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_secs(1));
                }
            }
        };
        *current.lock().expect("stream lock") = stream.try_clone().ok();
        if tx.send(BrokerEvent::Reconnected).is_err() {
            return;
        }
    }
}
