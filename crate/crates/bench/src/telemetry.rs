//! Coarse self-telemetry: resident memory sampled on a background thread
//! while a phase runs.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub const MIN_INTERVAL: Duration = Duration::from_millis(50);

/// Resident set size of this process, if the platform exposes it.
pub type MemoryProbe = fn() -> Option<u64>;

/// Reads `VmRSS` from `/proc/self/status`.
pub fn proc_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

pub fn no_probe() -> Option<u64> {
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub elapsed_s: f64,
    pub rss_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub phase: String,
    pub available: bool,
    /// First and last samples sit on the phase boundaries.
    pub samples: Vec<Sample>,
}

impl PhaseTrace {
    pub fn duration_s(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.elapsed_s)
    }

    pub fn peak_rss(&self) -> Option<u64> {
        self.samples.iter().filter_map(|s| s.rss_bytes).max()
    }

    /// `# rss=available|unavailable`, then `phase,elapsed_s,rss_bytes`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let flag = if self.available { "available" } else { "unavailable" };
        writeln!(w, "# rss={flag}")?;
        writeln!(w, "phase,elapsed_s,rss_bytes")?;
        for s in &self.samples {
            match s.rss_bytes {
                Some(b) => writeln!(w, "{},{:.6},{b}", self.phase, s.elapsed_s)?,
                None => writeln!(w, "{},{:.6},unavailable", self.phase, s.elapsed_s)?,
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

pub struct Recorder {
    phase: String,
    started: Instant,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<Vec<Sample>>>,
    probe: MemoryProbe,
}

impl Recorder {
    pub fn start(phase: &str, interval: Duration) -> Self {
        Self::with_probe(phase, interval, proc_rss)
    }

    /// Samples every `interval` (at least [`MIN_INTERVAL`]) using `probe`.
    pub fn with_probe(phase: &str, interval: Duration, probe: MemoryProbe) -> Self {
        let interval = interval.max(MIN_INTERVAL);
        let started = Instant::now();
        let stop = Arc::new(AtomicBool::new(false));
        let worker = {
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                let mut samples = vec![Sample {
                    elapsed_s: 0.0,
                    rss_bytes: probe(),
                }];
                let mut k = 1;
                loop {
                    let due = started + interval * k;
                    while Instant::now() < due {
                        if stop.load(Ordering::SeqCst) {
                            return samples;
                        }
                        thread::sleep((due - Instant::now()).min(Duration::from_millis(10)));
                    }
                    samples.push(Sample {
                        elapsed_s: started.elapsed().as_secs_f64(),
                        rss_bytes: probe(),
                    });
                    k += 1;
                }
            })
        };
        Self {
            phase: phase.to_string(),
            started,
            stop,
            worker: Some(worker),
            probe,
        }
    }

    pub fn finish(mut self) -> PhaseTrace {
        self.stop.store(true, Ordering::SeqCst);
        let mut samples = self.worker.take().and_then(|w| w.join().ok()).unwrap_or_default();
        samples.push(Sample {
            elapsed_s: self.started.elapsed().as_secs_f64(),
            rss_bytes: (self.probe)(),
        });
        PhaseTrace {
            phase: self.phase.clone(),
            available: samples.iter().any(|s| s.rss_bytes.is_some()),
            samples,
        }
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cadence_matches_interval() {
        let rec = Recorder::start("train", Duration::from_millis(100));
        thread::sleep(Duration::from_secs(10));
        let trace = rec.finish();
        let n = trace.samples.len() as f64;
        assert!((n - 100.0).abs() <= 20.0, "{n} samples");
        assert!(trace.samples.windows(2).all(|w| w[0].elapsed_s <= w[1].elapsed_s));
        assert!((trace.duration_s() - 10.0).abs() < 0.5);
    }

    #[test]
    fn rss_is_read_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(proc_rss().unwrap() > 0);
            let trace = Recorder::start("p", MIN_INTERVAL).finish();
            assert!(trace.available);
            assert!(trace.peak_rss().is_some());
        }
    }

    #[test]
    fn degraded_mode_is_flagged() {
        let rec = Recorder::with_probe("predict", Duration::from_millis(50), no_probe);
        thread::sleep(Duration::from_millis(200));
        let trace = rec.finish();
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# rss=unavailable"));
        assert_eq!(lines.next(), Some("phase,elapsed_s,rss_bytes"));
        let rows: Vec<&str> = lines.collect();
        assert!(rows.len() >= 2);
        assert!(rows.iter().all(|r| r.starts_with("predict,") && r.ends_with(",unavailable")));
        assert_eq!(trace.peak_rss(), None);
    }

    #[test]
    fn interval_has_a_floor() {
        let rec = Recorder::with_probe("x", Duration::from_millis(1), no_probe);
        thread::sleep(Duration::from_millis(520));
        let n = rec.finish().samples.len();
        assert!(n <= 14, "{n}");
    }
}
