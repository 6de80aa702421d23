//! Flow assembly: packets are grouped by 5-tuple, the first `n` packets of
//! each flow are masked, trimmed to `l` bytes, scaled to `[0, 1]` and
//! concatenated into one [`FlowSample`].

pub mod arcd;
pub mod capture;
pub mod frame;

use std::collections::BTreeMap;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use arcd::{Label, SampleSet};
pub use capture::{open_capture, parse_capture, CaptureReader, CaptureStats};
pub use frame::{anonymize_and_trim, dissect, FrameError, FrameInfo, LinkType, TcpFlags};

/// Bytes kept per packet.
pub const DEFAULT_PACKET_BYTES: usize = 100;
/// Idle time after which a flow is considered finished.
pub const DEFAULT_TIMEOUT_S: f64 = 120.0;

/// Transport-level flow identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    /// IP protocol number (6 = TCP, 17 = UDP).
    pub protocol: u8,
}

impl FlowKey {
    pub const TCP: u8 = 6;

    /// Direction-free key: endpoints ordered by `(ip, port)`. The flag is
    /// true when `self` already runs from the lower endpoint.
    pub fn canonical(&self) -> (FlowKey, bool) {
        if (self.src_ip, self.src_port) <= (self.dst_ip, self.dst_port) {
            (*self, true)
        } else {
            (self.reversed(), false)
        }
    }

    pub fn reversed(&self) -> FlowKey {
        FlowKey {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            protocol: self.protocol,
        }
    }
}

/// One IP packet read from a capture.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// Capture-clock seconds.
    pub timestamp: f64,
    pub link_bytes: Vec<u8>,
    pub link: LinkType,
    pub five_tuple: FlowKey,
    pub tcp_flags: Option<TcpFlags>,
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOrigin {
    pub key: FlowKey,
    pub first_timestamp: f64,
}

/// `n * l` scaled bytes of the first `n` packets of one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub values: Vec<f32>,
    pub origin: Option<FlowOrigin>,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    /// Unidirectional 5-tuple flows; the first FIN ends the flow.
    Flow,
    /// Both directions share one flow; it ends once each side sent a FIN.
    Session,
}

impl std::str::FromStr for FlowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(FlowMode::Flow),
            "session" => Ok(FlowMode::Session),
            other => Err(Error::Config(format!("unknown flow mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Packets per sample.
    pub n: usize,
    /// Bytes per packet.
    pub l: usize,
    pub timeout_s: f64,
    pub mode: FlowMode,
    /// Emit zero-padded samples for flows that end with fewer than `n` packets.
    pub pad_incomplete: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            n: 2,
            l: DEFAULT_PACKET_BYTES,
            timeout_s: DEFAULT_TIMEOUT_S,
            mode: FlowMode::Flow,
            pad_incomplete: false,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.l == 0 {
            return Err(Error::Config("n and l must be positive".into()));
        }
        if self.n > u16::MAX as usize || self.l > u16::MAX as usize {
            return Err(Error::Config("n and l must fit in 16 bits".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_len(&self) -> usize {
        self.n * self.l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Fin,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowState {
    Active,
    TerminatedFin,
    TerminatedTimeout,
    Emitted,
}

/// Packet accumulator for one live flow.
#[derive(Debug, Clone)]
pub struct FlowBuffer {
    pub key: FlowKey,
    /// Trimmed packet vectors, at most `n`. Cleared once the sample is out.
    pub packets: Vec<Vec<f32>>,
    pub first_seen: f64,
    pub last_seen: f64,
    emitted: bool,
    fin_forward: bool,
    fin_backward: bool,
    terminated: Option<Termination>,
}

impl FlowBuffer {
    fn new(key: FlowKey, now: f64) -> Self {
        FlowBuffer {
            key,
            packets: Vec::new(),
            first_seen: now,
            last_seen: now,
            emitted: false,
            fin_forward: false,
            fin_backward: false,
            terminated: None,
        }
    }

    pub fn state(&self) -> FlowState {
        match (self.emitted, self.terminated) {
            (true, _) => FlowState::Emitted,
            (false, Some(Termination::Fin)) => FlowState::TerminatedFin,
            (false, Some(Termination::Timeout)) => FlowState::TerminatedTimeout,
            (false, None) => FlowState::Active,
        }
    }

    fn origin(&self) -> FlowOrigin {
        FlowOrigin {
            key: self.key,
            first_timestamp: self.first_seen,
        }
    }
}

/// What happened to a flow when it was finalized.
#[derive(Debug, Clone, PartialEq)]
pub enum Disposition {
    /// Its sample was already returned by [`FlowTable::ingest`].
    EmittedEarlier,
    /// Fewer than `n` packets; dropped.
    Discarded { packets: usize },
    /// Fewer than `n` packets; zero-padded to full length.
    Padded(FlowSample),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub packets: u64,
    /// Packets whose frame could not be trimmed.
    pub dropped: u64,
    /// Packets arriving after their flow already produced a sample.
    pub ignored_after_emit: u64,
    pub samples: u64,
    pub discarded_flows: u64,
    pub padded_flows: u64,
}

/// Active flows of one capture source. Not shareable across threads while
/// mutating; run one table per source.
#[derive(Debug, Clone)]
pub struct FlowTable {
    cfg: IngestConfig,
    flows: BTreeMap<FlowKey, FlowBuffer>,
    finalized: Vec<(FlowKey, Disposition)>,
    stats: IngestStats,
}

impl FlowTable {
    pub fn new(cfg: IngestConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(FlowTable {
            cfg,
            flows: BTreeMap::new(),
            finalized: Vec::new(),
            stats: IngestStats::default(),
        })
    }

    pub fn config(&self) -> &IngestConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn active_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn get(&self, key: &FlowKey) -> Option<&FlowBuffer> {
        let key = match self.cfg.mode {
            FlowMode::Flow => *key,
            FlowMode::Session => key.canonical().0,
        };
        self.flows.get(&key)
    }

    /// Adds one packet; returns the flow's sample when this packet is its
    /// `n`-th.
    pub fn ingest(&mut self, packet: &PacketRecord) -> Option<FlowSample> {
        self.stats.packets += 1;
        let (key, forward) = match self.cfg.mode {
            FlowMode::Flow => (packet.five_tuple, true),
            FlowMode::Session => packet.five_tuple.canonical(),
        };
        let now = packet.timestamp;

        let stale = self.flows.get(&key).and_then(|buf| {
            if buf.terminated.is_some() {
                buf.terminated
            } else if now - buf.last_seen > self.cfg.timeout_s {
                Some(Termination::Timeout)
            } else {
                None
            }
        });
        if let Some(reason) = stale {
            let mut old = self.flows.remove(&key).expect("stale flow present");
            old.terminated = Some(reason);
            let disposition = self.finalize(old);
            self.finalized.push((key, disposition));
        }

        let (n, l) = (self.cfg.n, self.cfg.l);
        let buf = self.flows.entry(key).or_insert_with(|| FlowBuffer::new(key, now));
        buf.last_seen = now;

        let mut sample = None;
        if buf.emitted {
            self.stats.ignored_after_emit += 1;
        } else {
            match anonymize_and_trim(&packet.link_bytes, packet.link, l) {
                Ok(v) => buf.packets.push(v),
                Err(_) => self.stats.dropped += 1,
            }
            if buf.packets.len() == n {
                buf.emitted = true;
                let values = buf.packets.drain(..).flatten().collect();
                sample = Some(FlowSample {
                    values,
                    origin: Some(buf.origin()),
                    label: None,
                });
                self.stats.samples += 1;
            }
        }

        if packet.tcp_flags.is_some_and(|f| f.fin) {
            if forward {
                buf.fin_forward = true;
            } else {
                buf.fin_backward = true;
            }
            let closed = match self.cfg.mode {
                FlowMode::Flow => true,
                FlowMode::Session => buf.fin_forward && buf.fin_backward,
            };
            if closed {
                buf.terminated = Some(Termination::Fin);
            }
        }
        sample
    }

    /// Finalizes flows that ended (FIN) or went idle longer than the timeout
    /// as of `now`, plus any flow instances superseded during ingest. Pass
    /// `f64::INFINITY` at end of capture to finalize everything.
    pub fn flush(&mut self, now: f64) -> Vec<(FlowKey, Disposition)> {
        let timeout = self.cfg.timeout_s;
        let done: Vec<FlowKey> = self
            .flows
            .iter()
            .filter(|(_, b)| b.terminated.is_some() || now - b.last_seen > timeout)
            .map(|(k, _)| *k)
            .collect();
        let mut out = std::mem::take(&mut self.finalized);
        for key in done {
            let mut buf = self.flows.remove(&key).expect("listed flow present");
            buf.terminated.get_or_insert(Termination::Timeout);
            let disposition = self.finalize(buf);
            out.push((key, disposition));
        }
        out
    }

    fn finalize(&mut self, buf: FlowBuffer) -> Disposition {
        if buf.emitted {
            return Disposition::EmittedEarlier;
        }
        if self.cfg.pad_incomplete && !buf.packets.is_empty() {
            let mut values: Vec<f32> = buf.packets.iter().flatten().copied().collect();
            values.resize(self.cfg.sample_len(), 0.0);
            self.stats.padded_flows += 1;
            return Disposition::Padded(FlowSample {
                values,
                origin: Some(buf.origin()),
                label: None,
            });
        }
        self.stats.discarded_flows += 1;
        Disposition::Discarded {
            packets: buf.packets.len(),
        }
    }
}

/// Runs a whole packet sequence through a fresh flow table and returns the
/// samples in emission order.
pub fn preprocess<I>(packets: I, cfg: &IngestConfig) -> Result<(Vec<FlowSample>, IngestStats)>
where
    I: IntoIterator<Item = PacketRecord>,
{
    let mut table = FlowTable::new(cfg.clone())?;
    let mut samples = Vec::new();
    let mut last_sweep = f64::NEG_INFINITY;
    let collect = |dispositions: Vec<(FlowKey, Disposition)>, samples: &mut Vec<FlowSample>| {
        for (_, d) in dispositions {
            if let Disposition::Padded(s) = d {
                samples.push(s);
            }
        }
    };
    for packet in packets {
        let now = packet.timestamp;
        if let Some(s) = table.ingest(&packet) {
            samples.push(s);
        }
        if now - last_sweep >= cfg.timeout_s {
            let d = table.flush(now);
            collect(d, &mut samples);
            last_sweep = now;
        }
    }
    let d = table.flush(f64::INFINITY);
    collect(d, &mut samples);
    Ok((samples, table.stats().clone()))
}

#[cfg(test)]
mod tests {
    use super::frame::tests::tcp_frame;
    use super::*;

    fn packet(t: f64, sport: u16, flags: u8) -> PacketRecord {
        let bytes = tcp_frame(sport, 80, flags, &[]);
        let info = dissect(&bytes, LinkType::Ethernet).unwrap();
        PacketRecord {
            timestamp: t,
            link_bytes: bytes,
            link: LinkType::Ethernet,
            five_tuple: info.key,
            tcp_flags: info.tcp_flags,
        }
    }

    fn reverse(mut p: PacketRecord) -> PacketRecord {
        p.five_tuple = p.five_tuple.reversed();
        p
    }

    fn table(pad: bool) -> FlowTable {
        FlowTable::new(IngestConfig {
            pad_incomplete: pad,
            ..IngestConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn two_packets_make_one_sample() {
        let mut t = table(false);
        assert!(t.ingest(&packet(0.0, 1000, 0x02)).is_none());
        let s = t.ingest(&packet(0.1, 1000, 0x10)).unwrap();
        assert_eq!(s.values.len(), 200);
        assert_eq!(s.origin.unwrap().first_timestamp, 0.0);
        // later packets of the flow are ignored
        assert!(t.ingest(&packet(0.2, 1000, 0x10)).is_none());
        assert_eq!(t.stats().ignored_after_emit, 1);
    }

    #[test]
    fn different_ports_are_different_flows() {
        let mut t = table(false);
        assert!(t.ingest(&packet(0.0, 1000, 0x02)).is_none());
        assert!(t.ingest(&packet(0.1, 1001, 0x02)).is_none());
        assert_eq!(t.active_flows(), 2);
    }

    #[test]
    fn idle_gap_restarts_the_flow() {
        let mut t = table(false);
        assert!(t.ingest(&packet(0.0, 1000, 0x10)).is_none());
        assert!(t.ingest(&packet(200.0, 1000, 0x10)).is_none());
        let fin = t.flush(200.0);
        assert_eq!(fin.len(), 1);
        assert_eq!(fin[0].1, Disposition::Discarded { packets: 1 });
        assert_eq!(t.get(&packet(0.0, 1000, 0).five_tuple).unwrap().first_seen, 200.0);
    }

    #[test]
    fn fin_ends_the_flow() {
        let mut t = table(false);
        assert!(t.ingest(&packet(0.0, 1000, 0x11)).is_none());
        let key = packet(0.0, 1000, 0).five_tuple;
        assert_eq!(t.get(&key).unwrap().state(), FlowState::TerminatedFin);
        // the next packet opens a new flow instance
        assert!(t.ingest(&packet(0.5, 1000, 0x10)).is_none());
        assert!(t.ingest(&packet(0.6, 1000, 0x10)).is_some());
        let d = t.flush(1.0);
        assert_eq!(d[0].1, Disposition::Discarded { packets: 1 });
    }

    #[test]
    fn emitted_flow_reports_emitted_earlier() {
        let mut t = table(false);
        t.ingest(&packet(0.0, 1000, 0x02));
        t.ingest(&packet(0.1, 1000, 0x10));
        t.ingest(&packet(0.2, 1000, 0x11));
        let d = t.flush(0.3);
        assert_eq!(d, vec![(packet(0.0, 1000, 0).five_tuple, Disposition::EmittedEarlier)]);
    }

    #[test]
    fn incomplete_flow_discarded_or_padded() {
        let mut t = table(false);
        t.ingest(&packet(0.0, 1000, 0x02));
        let d = t.flush(f64::INFINITY);
        assert_eq!(d[0].1, Disposition::Discarded { packets: 1 });

        let mut t = table(true);
        let p = packet(0.0, 1000, 0x02);
        t.ingest(&p);
        let d = t.flush(f64::INFINITY);
        let Disposition::Padded(s) = &d[0].1 else { panic!("expected padding") };
        assert_eq!(s.values.len(), 200);
        assert!(s.values[100..].iter().all(|&v| v == 0.0));
        let first = anonymize_and_trim(&p.link_bytes, LinkType::Ethernet, 100).unwrap();
        assert_eq!(&s.values[..100], &first[..]);
    }

    #[test]
    fn session_mode_joins_directions_and_needs_two_fins() {
        let mut t = FlowTable::new(IngestConfig {
            mode: FlowMode::Session,
            n: 3,
            ..IngestConfig::default()
        })
        .unwrap();
        t.ingest(&packet(0.0, 1000, 0x11));
        let key = packet(0.0, 1000, 0).five_tuple;
        assert_eq!(t.get(&key).unwrap().state(), FlowState::Active);
        t.ingest(&reverse(packet(0.1, 1000, 0x11)));
        assert_eq!(t.get(&key).unwrap().state(), FlowState::TerminatedFin);
        assert_eq!(t.get(&key).unwrap().packets.len(), 2);
    }

    #[test]
    fn flow_mode_keeps_directions_apart() {
        let mut t = table(false);
        t.ingest(&packet(0.0, 1000, 0x10));
        t.ingest(&reverse(packet(0.1, 1000, 0x10)));
        assert_eq!(t.active_flows(), 2);
    }

    #[test]
    fn preprocess_end_to_end() {
        let packets = vec![
            packet(0.0, 1, 0x02),
            packet(0.0, 2, 0x02),
            packet(0.1, 1, 0x10),
            packet(300.0, 2, 0x10),
        ];
        let (samples, stats) = preprocess(packets, &IngestConfig::default()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(stats.discarded_flows, 2);
    }
}
