//! Simulated O-DU.
//!
//! A clock thread advances simulated time at `speedup` hours per wall-clock
//! hour. Every connection first receives the reports for all hours already
//! elapsed, then each new hour as the clock reaches it, for every tenant in
//! scenario order. Allocations are logged once per `msg_id` and acknowledged.

use std::collections::HashSet;
use std::io::{BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use prbcast_core::traffic::{generate_scenario, ScenarioConfig};
use prbcast_core::ts::{format_timestamp, parse_timestamp, TimeSeries};

use crate::codec::{decode, encode, read_frame, O1Message, Payload};
use crate::{O1Error, Result};

/// First id used for frames the server originates besides reports.
const SERVER_ID_BASE: u64 = 1 << 62;

pub const ALLOCATION_CSV_HEADER: [&str; 4] = ["tenant_id", "forecast_start", "hour_index", "prbs"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationRecord {
    pub msg_id: u64,
    pub tenant_id: String,
    pub forecast_start: DateTime<Utc>,
    pub prbs: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Hours treated as already elapsed at startup, for resuming a run.
    pub start_hour: usize,
    /// Allocations carried over from an earlier server instance.
    pub prior_allocations: Vec<AllocationRecord>,
    /// Holds back the first ACK by this long.
    pub delay_first_ack: Option<Duration>,
    /// Written on shutdown.
    pub allocation_log: Option<std::path::PathBuf>,
}

#[derive(Debug)]
struct OduState {
    /// Hours whose reports have been released.
    clock: usize,
    finished: bool,
    log: Vec<AllocationRecord>,
    seen: HashSet<u64>,
    next_id: u64,
    first_ack_pending: bool,
}

struct Shared {
    series: Vec<TimeSeries>,
    hours: usize,
    state: Mutex<OduState>,
    tick: Condvar,
    stop: AtomicBool,
    options: ServerOptions,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, OduState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn report(&self, hour: usize, tenant: usize) -> O1Message {
        let s = &self.series[tenant];
        O1Message::new(
            (hour * self.series.len() + tenant) as u64 + 1,
            s.tenant_id(),
            s.timestamp(hour),
            Payload::History {
                prb_demand: s.values()[hour],
            },
        )
    }

    fn next_id(&self) -> u64 {
        let mut st = self.lock();
        st.next_id += 1;
        st.next_id
    }
}

pub struct OduServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    connections: Arc<Mutex<Vec<(TcpStream, Vec<JoinHandle<()>>)>>>,
}

/// Binds `listen` and starts replaying `scenario`.
pub fn serve_odu(scenario: &ScenarioConfig, listen: &str, speedup: f64, options: ServerOptions) -> Result<OduServer> {
    if !(speedup.is_finite() && speedup > 0.0) {
        return Err(prbcast_core::Error::InvalidArgument(format!("speedup {speedup} must be positive")).into());
    }
    let series = generate_scenario(scenario)?;
    let hours = scenario.hours();
    let listener = TcpListener::bind(listen).map_err(|source| O1Error::Bind {
        addr: listen.to_string(),
        source,
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;

    let start_hour = options.start_hour.min(hours);
    let seen = options.prior_allocations.iter().map(|r| r.msg_id).collect();
    let shared = Arc::new(Shared {
        series,
        hours,
        state: Mutex::new(OduState {
            clock: start_hour,
            finished: start_hour == hours,
            log: options.prior_allocations.clone(),
            seen,
            next_id: SERVER_ID_BASE,
            first_ack_pending: options.delay_first_ack.is_some(),
        }),
        tick: Condvar::new(),
        stop: AtomicBool::new(false),
        options,
    });
    let connections = Arc::new(Mutex::new(Vec::new()));

    let clock = {
        let shared = Arc::clone(&shared);
        let period = Duration::from_secs_f64(3600.0 / speedup);
        thread::spawn(move || run_clock(&shared, start_hour, period))
    };
    let acceptor = {
        let shared = Arc::clone(&shared);
        let connections = Arc::clone(&connections);
        thread::spawn(move || accept_loop(listener, &shared, &connections))
    };

    Ok(OduServer {
        addr,
        shared,
        threads: vec![clock, acceptor],
        connections,
    })
}

fn run_clock(shared: &Shared, start_hour: usize, period: Duration) {
    let began = Instant::now();
    for k in 0..shared.hours - start_hour {
        // absolute schedule so rounding errors do not accumulate
        let due = began + period.mul_f64(k as f64);
        loop {
            if shared.stop.load(Ordering::SeqCst) {
                return;
            }
            let now = Instant::now();
            if now >= due {
                break;
            }
            thread::sleep((due - now).min(Duration::from_millis(20)));
        }
        let mut st = shared.lock();
        st.clock = start_hour + k + 1;
        st.finished = st.clock == shared.hours;
        drop(st);
        shared.tick.notify_all();
    }
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>, connections: &Mutex<Vec<(TcpStream, Vec<JoinHandle<()>>)>>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if let Ok(handles) = spawn_connection(stream.try_clone(), shared) {
                    connections.lock().unwrap_or_else(|e| e.into_inner()).push((stream, handles));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn spawn_connection(stream: std::io::Result<TcpStream>, shared: &Arc<Shared>) -> std::io::Result<Vec<JoinHandle<()>>> {
    let stream = stream?;
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let reports = {
        let shared = Arc::clone(shared);
        let writer = Arc::clone(&writer);
        thread::spawn(move || stream_reports(&shared, &writer))
    };
    let requests = {
        let shared = Arc::clone(shared);
        thread::spawn(move || serve_requests(&shared, stream, &writer))
    };
    Ok(vec![reports, requests])
}

fn send(writer: &Mutex<TcpStream>, msg: &O1Message) -> std::io::Result<()> {
    let frame = encode(msg).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
    w.write_all(&frame)
}

fn stream_reports(shared: &Shared, writer: &Mutex<TcpStream>) {
    let mut sent = 0;
    loop {
        let clock = {
            let mut st = shared.lock();
            while st.clock == sent && !shared.stop.load(Ordering::SeqCst) {
                st = shared
                    .tick
                    .wait_timeout(st, Duration::from_millis(50))
                    .unwrap_or_else(|e| e.into_inner())
                    .0;
            }
            if shared.stop.load(Ordering::SeqCst) {
                return;
            }
            st.clock
        };
        for hour in sent..clock {
            for tenant in 0..shared.series.len() {
                if send(writer, &shared.report(hour, tenant)).is_err() {
                    return;
                }
            }
        }
        sent = clock;
    }
}

fn serve_requests(shared: &Shared, stream: TcpStream, writer: &Mutex<TcpStream>) {
    let mut reader = BufReader::new(stream);
    while let Ok(Some(frame)) = read_frame(&mut reader) {
        let reply = match decode(&frame) {
            Ok(msg) => handle(shared, msg),
            Err(e) => {
                // echo the id when the frame carried a readable one
                let echoed = serde_json::from_slice::<serde_json::Value>(&frame)
                    .ok()
                    .and_then(|v| v.get("msg_id").and_then(|id| id.as_u64()));
                error_reply(shared, echoed, "", "malformed_frame", &e.to_string())
            }
        };
        if send(writer, &reply).is_err() {
            return;
        }
    }
}

fn error_reply(shared: &Shared, msg_id: Option<u64>, tenant: &str, code: &str, text: &str) -> O1Message {
    O1Message::new(
        msg_id.unwrap_or_else(|| shared.next_id()),
        tenant,
        Utc::now(),
        Payload::Error {
            code: code.into(),
            text: text.into(),
        },
    )
}

fn handle(shared: &Shared, msg: O1Message) -> O1Message {
    let Payload::Allocation { forecast_start, prbs } = &msg.payload else {
        let text = format!("{} is not accepted by the O-DU", msg.msg_type());
        return error_reply(shared, Some(msg.msg_id), &msg.tenant_id, "unexpected_type", &text);
    };
    if !shared.series.iter().any(|s| s.tenant_id() == msg.tenant_id) {
        let text = format!("unknown tenant {:?}", msg.tenant_id);
        return error_reply(shared, Some(msg.msg_id), &msg.tenant_id, "unknown_tenant", &text);
    }
    let delay = {
        let mut st = shared.lock();
        if st.seen.insert(msg.msg_id) {
            st.log.push(AllocationRecord {
                msg_id: msg.msg_id,
                tenant_id: msg.tenant_id.clone(),
                forecast_start: *forecast_start,
                prbs: prbs.clone(),
            });
        }
        let delay = if st.first_ack_pending { shared.options.delay_first_ack } else { None };
        st.first_ack_pending = false;
        delay
    };
    if let Some(d) = delay {
        thread::sleep(d);
    }
    O1Message::new(
        shared.next_id(),
        &msg.tenant_id,
        Utc::now(),
        Payload::Ack { ack_msg_id: msg.msg_id },
    )
}

impl OduServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Hours whose reports have been released so far.
    pub fn clock(&self) -> usize {
        self.shared.lock().clock
    }

    pub fn hours(&self) -> usize {
        self.shared.hours
    }

    pub fn is_finished(&self) -> bool {
        self.shared.lock().finished
    }

    /// Blocks until the clock reaches `hour` or `timeout` elapses.
    pub fn wait_for_clock(&self, hour: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.lock();
        while st.clock < hour.min(self.shared.hours) {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            st = self.shared.tick.wait_timeout(st, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
        true
    }

    pub fn allocations(&self) -> Vec<AllocationRecord> {
        self.shared.lock().log.clone()
    }

    /// Stops replay, closes every connection and writes the allocation log
    /// when one was configured. Returns the log.
    pub fn shutdown(mut self) -> Result<Vec<AllocationRecord>> {
        self.stop();
        let log = self.allocations();
        if let Some(path) = &self.shared.options.allocation_log {
            write_allocation_csv(path, &log)?;
        }
        Ok(log)
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.tick.notify_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let conns = std::mem::take(&mut *self.connections.lock().unwrap_or_else(|e| e.into_inner()));
        for (stream, handles) in conns {
            let _ = stream.shutdown(Shutdown::Both);
            for h in handles {
                let _ = h.join();
            }
        }
    }
}

impl Drop for OduServer {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn write_allocation_csv(path: &Path, log: &[AllocationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ALLOCATION_CSV_HEADER)?;
    for rec in log {
        let start = format_timestamp(rec.forecast_start);
        for (i, prbs) in rec.prbs.iter().enumerate() {
            w.write_record([rec.tenant_id.as_str(), &start, &i.to_string(), &prbs.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a log written by [`write_allocation_csv`]. Message ids are not part
/// of the file and come back as 0.
pub fn read_allocation_csv(path: &Path) -> Result<Vec<AllocationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<AllocationRecord> = Vec::new();
    for row in r.records() {
        let row = row?;
        let bad = |what: &str| prbcast_core::Error::Format(format!("allocation log row {row:?}: {what}"));
        let tenant = row.get(0).ok_or_else(|| bad("missing tenant_id"))?;
        let start = parse_timestamp(row.get(1).ok_or_else(|| bad("missing forecast_start"))?)?;
        let index: usize = row.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad hour_index"))?;
        let prbs: u32 = row.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad prbs"))?;
        match out.last_mut() {
            Some(rec) if index > 0 && rec.tenant_id == tenant && rec.forecast_start == start && rec.prbs.len() == index => {
                rec.prbs.push(prbs)
            }
            _ if index == 0 => out.push(AllocationRecord {
                msg_id: 0,
                tenant_id: tenant.to_string(),
                forecast_start: start,
                prbs: vec![prbs],
            }),
            _ => return Err(bad("hour_index out of sequence").into()),
        }
    }
    Ok(out)
}
