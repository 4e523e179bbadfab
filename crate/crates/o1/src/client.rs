//! Client side of the O1 link.
//!
//! A reader thread decodes inbound frames: history reports go to the
//! [`ClientSession::reports`] channel in arrival order, ACK and ERROR frames
//! wake the matching [`ClientSession::send_allocation`] call. When the
//! connection drops the reader reconnects, which resubscribes to the report
//! stream from the first hour; consumers deduplicate by timestamp.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::codec::{decode, encode, read_frame, O1Message, Payload};
use crate::{O1Error, Result};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub endpoint: String,
    pub connect_timeout: Duration,
    pub ack_timeout: Duration,
    /// Reconnect attempts after a drop before the session gives up.
    pub reconnect_attempts: u32,
    /// Delay before the first reconnect attempt; doubles per attempt up to 1 s.
    pub reconnect_delay: Duration,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            connect_timeout: Duration::from_secs(2),
            ack_timeout: Duration::from_secs(2),
            reconnect_attempts: 10,
            reconnect_delay: Duration::from_millis(50),
        }
    }
}

struct Shared {
    cfg: ClientConfig,
    stream: Mutex<Option<TcpStream>>,
    replies: Mutex<HashMap<u64, O1Message>>,
    replied: Condvar,
    closed: AtomicBool,
    reconnects: AtomicUsize,
}

impl Shared {
    fn stream(&self) -> MutexGuard<'_, Option<TcpStream>> {
        self.stream.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn replies(&self) -> MutexGuard<'_, HashMap<u64, O1Message>> {
        self.replies.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct ClientSession {
    shared: Arc<Shared>,
    reports: Receiver<O1Message>,
    reader: Option<JoinHandle<()>>,
}

fn open(cfg: &ClientConfig) -> Result<TcpStream> {
    let mut last = None;
    for addr in cfg.endpoint.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, cfg.connect_timeout) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last
        .map(O1Error::Io)
        .unwrap_or_else(|| O1Error::NotConnected(cfg.endpoint.clone())))
}

impl ClientSession {
    /// Connects and starts receiving reports. Fails when the endpoint is
    /// unreachable.
    pub fn connect(cfg: ClientConfig) -> Result<Self> {
        let stream = open(&cfg)?;
        let read_half = stream.try_clone()?;
        let shared = Arc::new(Shared {
            cfg,
            stream: Mutex::new(Some(stream)),
            replies: Mutex::new(HashMap::new()),
            replied: Condvar::new(),
            closed: AtomicBool::new(false),
            reconnects: AtomicUsize::new(0),
        });
        let (tx, rx) = mpsc::channel();
        let reader = {
            let shared = Arc::clone(&shared);
            thread::spawn(move || read_loop(&shared, read_half, &tx))
        };
        Ok(Self {
            shared,
            reports: rx,
            reader: Some(reader),
        })
    }

    /// History reports in arrival order. The channel closes once the session
    /// has given up reconnecting or was closed.
    pub fn reports(&self) -> &Receiver<O1Message> {
        &self.reports
    }

    /// Successful reconnects so far.
    pub fn reconnects(&self) -> usize {
        self.shared.reconnects.load(Ordering::SeqCst)
    }

    pub fn is_connected(&self) -> bool {
        self.shared.stream().is_some()
    }

    /// Sends `msg` and waits for the ACK carrying its `msg_id`.
    pub fn send_allocation(&self, msg: &O1Message) -> Result<O1Message> {
        self.sender().send_allocation(msg)
    }

    /// A handle for sending allocations from other threads.
    pub fn sender(&self) -> AllocationSender {
        AllocationSender {
            shared: Arc::clone(&self.shared),
        }
    }

    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        if let Some(s) = self.shared.stream().take() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

impl Drop for ClientSession {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Sending half of a [`ClientSession`].
#[derive(Clone)]
pub struct AllocationSender {
    shared: Arc<Shared>,
}

impl AllocationSender {
    /// Sends `msg` and waits for the ACK carrying its `msg_id`.
    pub fn send_allocation(&self, msg: &O1Message) -> Result<O1Message> {
        let frame = encode(msg)?;
        {
            let mut guard = self.shared.stream();
            let stream = guard
                .as_mut()
                .ok_or_else(|| O1Error::NotConnected(self.shared.cfg.endpoint.clone()))?;
            if let Err(e) = stream.write_all(&frame) {
                let _ = stream.shutdown(Shutdown::Both);
                *guard = None;
                return Err(e.into());
            }
        }
        let timeout = self.shared.cfg.ack_timeout;
        let deadline = Instant::now() + timeout;
        let mut replies = self.shared.replies();
        loop {
            if let Some(reply) = replies.remove(&msg.msg_id) {
                return match reply.payload {
                    Payload::Error { code, text } => Err(O1Error::Rejected {
                        msg_id: msg.msg_id,
                        code,
                        text,
                    }),
                    _ => Ok(reply),
                };
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(O1Error::Timeout {
                    msg_id: msg.msg_id,
                    timeout,
                });
            }
            replies = self
                .shared
                .replied
                .wait_timeout(replies, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

fn read_loop(shared: &Shared, first: TcpStream, reports: &Sender<O1Message>) {
    let mut reader = BufReader::new(first);
    loop {
        while let Ok(Some(frame)) = read_frame(&mut reader) {
            let Ok(msg) = decode(&frame) else { continue };
            match &msg.payload {
                Payload::History { .. } => {
                    if reports.send(msg).is_err() {
                        return;
                    }
                }
                Payload::Ack { ack_msg_id } => {
                    shared.replies().insert(*ack_msg_id, msg);
                    shared.replied.notify_all();
                }
                Payload::Error { .. } => {
                    shared.replies().insert(msg.msg_id, msg);
                    shared.replied.notify_all();
                }
                Payload::Allocation { .. } => {}
            }
        }
        *shared.stream() = None;
        match reconnect(shared) {
            Some(s) => reader = BufReader::new(s),
            None => return,
        }
    }
}

fn reconnect(shared: &Shared) -> Option<TcpStream> {
    let mut delay = shared.cfg.reconnect_delay;
    for _ in 0..shared.cfg.reconnect_attempts {
        if shared.closed.load(Ordering::SeqCst) {
            return None;
        }
        thread::sleep(delay);
        delay = (delay * 2).min(Duration::from_secs(1));
        if let Ok(s) = open(&shared.cfg) {
            let Ok(read_half) = s.try_clone() else { continue };
            let mut guard = shared.stream();
            if shared.closed.load(Ordering::SeqCst) {
                let _ = s.shutdown(Shutdown::Both);
                return None;
            }
            *guard = Some(s);
            shared.reconnects.fetch_add(1, Ordering::SeqCst);
            return Some(read_half);
        }
    }
    None
}
