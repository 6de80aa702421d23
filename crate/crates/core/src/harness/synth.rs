//! Synthetic labeled traffic: real Ethernet/IPv4 frames pushed through the
//! regular flow pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::time::Duration;

use etherparse::PacketBuilder;
use pcap_file::pcap::{PcapHeader, PcapPacket, PcapWriter};
use pcap_file::{DataLink, Endianness};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    dissect, preprocess, FlowKey, FlowMode, IngestConfig, IngestStats, Label, LinkType, PacketRecord, SampleSet,
};

/// Label byte of random-payload anomalies.
pub const RANDOM_PAYLOAD_CLASS: u8 = 1;
/// Label byte of flood anomalies.
pub const FLOOD_REPEAT_CLASS: u8 = 2;

/// Built-in normal traffic families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalTemplate {
    Http,
    Dns,
    Tls,
    Smtp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalProfile {
    pub templates: Vec<NormalTemplate>,
    /// Maximum absolute per-byte jitter applied to template payload bytes.
    pub jitter: u8,
}

impl Default for NormalProfile {
    fn default() -> Self {
        NormalProfile {
            templates: vec![
                NormalTemplate::Http,
                NormalTemplate::Dns,
                NormalTemplate::Tls,
                NormalTemplate::Smtp,
            ],
            jitter: 3,
        }
    }
}

/// Mixture weights of the anomaly generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyProfile {
    pub random_payload: f64,
    pub flood_repeat: f64,
}

impl Default for AnomalyProfile {
    fn default() -> Self {
        AnomalyProfile {
            random_payload: 0.5,
            flood_repeat: 0.5,
        }
    }
}

/// Uniform packet count per flow, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketsPerFlow {
    pub min: usize,
    pub max: usize,
}

impl Default for PacketsPerFlow {
    fn default() -> Self {
        PacketsPerFlow { min: 6, max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_normal_flows: usize,
    pub n_anomaly_flows: usize,
    pub normal_profile: NormalProfile,
    pub anomaly_profile: AnomalyProfile,
    pub packets_per_flow: PacketsPerFlow,
    /// Packets per emitted sample.
    pub n: usize,
    /// Bytes per packet.
    pub l: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_normal_flows: 2400,
            n_anomaly_flows: 400,
            normal_profile: NormalProfile::default(),
            anomaly_profile: AnomalyProfile::default(),
            packets_per_flow: PacketsPerFlow::default(),
            n: 2,
            l: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_normal_flows == 0 || self.n_anomaly_flows == 0 {
            return Err(Error::Config("synthetic corpus needs normal and anomaly flows".into()));
        }
        if self.normal_profile.templates.is_empty() {
            return Err(Error::Config("no normal templates selected".into()));
        }
        let w = &self.anomaly_profile;
        if !(w.random_payload >= 0.0 && w.flood_repeat >= 0.0 && w.random_payload + w.flood_repeat > 0.0) {
            return Err(Error::Config("anomaly mixture weights must be non-negative and not all zero".into()));
        }
        let p = self.packets_per_flow;
        if p.min < self.n || p.max < p.min {
            return Err(Error::Config(format!(
                "packets per flow [{}, {}] must be ordered and at least n = {}",
                p.min, p.max, self.n
            )));
        }
        self.ingest_config().validate()
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            n: self.n,
            l: self.l,
            mode: FlowMode::Flow,
            pad_incomplete: false,
            ..IngestConfig::default()
        }
    }
}

/// One generated frame with its capture time in microseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPacket {
    pub ts_us: u64,
    pub frame: Vec<u8>,
}

/// Generated packets and the labeled samples they reduce to.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub samples: SampleSet,
    pub packets: Vec<SynthPacket>,
    pub stats: IngestStats,
}

impl SynthCorpus {
    /// Writes the packets as a little-endian microsecond pcap.
    pub fn write_pcap(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let header = PcapHeader {
            datalink: DataLink::ETHERNET,
            endianness: Endianness::Little,
            ..PcapHeader::default()
        };
        let mut w = PcapWriter::with_header(file, header)?;
        for p in &self.packets {
            let ts = Duration::from_micros(p.ts_us);
            w.write_packet(&PcapPacket::new(ts, p.frame.len() as u32, &p.frame))?;
        }
        w.into_writer().flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Transport {
    Tcp { window: u16 },
    Udp,
}

struct Template {
    transport: Transport,
    dst: Ipv4Addr,
    dport: u16,
    sport_base: u16,
    ttl: u8,
    isn: u32,
    /// Payloads of successive data packets, cycled.
    payloads: &'static [&'static [u8]],
}

const HTTP: &[&[u8]] = &[
    b"GET /index.html HTTP/1.1\r\nHost: www.example.org\r\nAccept: */*\r\n\r\n",
    b"GET /style.css HTTP/1.1\r\nHost: www.example.org\r\nReferer: /\r\n\r\n",
];
const DNS: &[&[u8]] = &[
    b"\x1a\x2b\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x03www\x07example\x03org\x00\x00\x01\x00\x01",
    b"\x1a\x2c\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x04mail\x07example\x03org\x00\x00\x0f\x00\x01",
];
const TLS: &[&[u8]] = &[
    b"\x16\x03\x01\x00\xa5\x01\x00\x00\xa1\x03\x03\x5b\x90\x9d\x9b\x72\x0b\xbc\x0c\xbc\x2b\x92\xa8\x48\x97\xcf\xbd\x39\x04\xcc\x16\x0a\x85\x03\x90\x9f\x77\x04\x33\xd4\xde\x00\x00\x20\xcc\xa8",
    b"\x17\x03\x03\x00\x45\x00\x00\x00\x00\x00\x00\x00\x01\x4e\x22\x0a\x31\x6d\x8c\x54\x2b\x9a\x03\x7e\x11\x60\x5c\x4f\x82\x19\xd7\x36\x0e\xa4\x51\x90\x2c",
];
const SMTP: &[&[u8]] = &[
    b"EHLO mail.example.org\r\n",
    b"MAIL FROM:<alice@example.org>\r\n",
    b"RCPT TO:<bob@example.net>\r\n",
];

fn normal_template(t: NormalTemplate) -> Template {
    match t {
        NormalTemplate::Http => Template {
            transport: Transport::Tcp { window: 64240 },
            dst: Ipv4Addr::new(192, 168, 10, 80),
            dport: 80,
            sport_base: 49152,
            ttl: 64,
            isn: 0x1000_0000,
            payloads: HTTP,
        },
        NormalTemplate::Dns => Template {
            transport: Transport::Udp,
            dst: Ipv4Addr::new(192, 168, 10, 53),
            dport: 53,
            sport_base: 50000,
            ttl: 64,
            isn: 0,
            payloads: DNS,
        },
        NormalTemplate::Tls => Template {
            transport: Transport::Tcp { window: 65535 },
            dst: Ipv4Addr::new(192, 168, 10, 43),
            dport: 443,
            sport_base: 51000,
            ttl: 128,
            isn: 0x5a00_0000,
            payloads: TLS,
        },
        NormalTemplate::Smtp => Template {
            transport: Transport::Tcp { window: 29200 },
            dst: Ipv4Addr::new(192, 168, 10, 25),
            dport: 25,
            sport_base: 52000,
            ttl: 64,
            isn: 0x2200_0000,
            payloads: SMTP,
        },
    }
}

#[derive(Debug, Clone, Copy)]
enum FlowKind {
    Normal(NormalTemplate),
    RandomPayload,
    FloodRepeat,
}

impl FlowKind {
    fn label(self) -> Label {
        match self {
            FlowKind::Normal(_) => Label::Normal,
            FlowKind::RandomPayload => Label::Anomaly(RANDOM_PAYLOAD_CLASS),
            FlowKind::FloodRepeat => Label::Anomaly(FLOOD_REPEAT_CLASS),
        }
    }
}

const SRC_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x01];
const DST_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0xfe];

fn jittered(rng: &mut ChaCha8Rng, bytes: &[u8], jitter: u8) -> Vec<u8> {
    let j = i16::from(jitter);
    bytes
        .iter()
        .map(|&b| (i16::from(b) + rng.gen_range(-j..=j)).clamp(0, 255) as u8)
        .collect()
}

#[derive(Clone, Copy)]
enum Flags {
    Syn,
    Data,
    Fin,
}

#[allow(clippy::too_many_arguments)]
fn frame(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    ttl: u8,
    sport: u16,
    dport: u16,
    transport: Transport,
    seq: u32,
    flags: Flags,
    payload: &[u8],
) -> Vec<u8> {
    let ip = PacketBuilder::ethernet2(SRC_MAC, DST_MAC).ipv4(src.octets(), dst.octets(), ttl);
    let mut buf = Vec::new();
    match transport {
        Transport::Udp => {
            let b = ip.udp(sport, dport);
            buf.reserve(b.size(payload.len()));
            b.write(&mut buf, payload)
        }
        Transport::Tcp { window } => {
            let b = ip.tcp(sport, dport, seq, window);
            let b = match flags {
                Flags::Syn => b.syn(),
                Flags::Data => b.ack(1).psh(),
                Flags::Fin => b.ack(1).fin(),
            };
            buf.reserve(b.size(payload.len()));
            b.write(&mut buf, payload)
        }
    }
    .expect("writing to a Vec cannot fail");
    buf
}

fn normal_flow(rng: &mut ChaCha8Rng, t: &Template, src: Ipv4Addr, count: usize, jitter: u8) -> Vec<Vec<u8>> {
    let j = u16::from(jitter);
    let sport = t.sport_base + rng.gen_range(0..=4 * j);
    let mut seq = t.isn + rng.gen_range(0..=u32::from(jitter));
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let data_index = match t.transport {
            Transport::Udp => i,
            Transport::Tcp { .. } => i.saturating_sub(1),
        };
        let (flags, payload) = match t.transport {
            Transport::Tcp { .. } if i == 0 => (Flags::Syn, Vec::new()),
            Transport::Tcp { .. } if i + 1 == count => (Flags::Fin, Vec::new()),
            _ => (
                Flags::Data,
                jittered(rng, t.payloads[data_index % t.payloads.len()], jitter),
            ),
        };
        frames.push(frame(src, t.dst, t.ttl, sport, t.dport, t.transport, seq, flags, &payload));
        seq = seq.wrapping_add(payload.len().max(1) as u32);
    }
    frames
}

fn random_payload_flow(rng: &mut ChaCha8Rng, src: Ipv4Addr, count: usize) -> Vec<Vec<u8>> {
    let transport = Transport::Tcp { window: 512 };
    let dst = Ipv4Addr::new(192, 168, 20, 7);
    let sport = rng.gen_range(1024..=65535);
    let mut seq: u32 = rng.gen();
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let (flags, payload) = if i == 0 {
            (Flags::Syn, Vec::new())
        } else if i + 1 == count {
            (Flags::Fin, Vec::new())
        } else {
            let len = rng.gen_range(16..=64);
            (Flags::Data, (0..len).map(|_| rng.gen::<u8>()).collect())
        };
        frames.push(frame(src, dst, 128, sport, 4444, transport, seq, flags, &payload));
        seq = seq.wrapping_add(payload.len().max(1) as u32);
    }
    frames
}

fn flood_flow(rng: &mut ChaCha8Rng, src: Ipv4Addr, count: usize) -> Vec<Vec<u8>> {
    let transport = Transport::Tcp { window: 1024 };
    let dst = Ipv4Addr::new(192, 168, 20, 80);
    let one = frame(src, dst, 255, rng.gen_range(1024..=65535), 8080, transport, rng.gen(), Flags::Syn, &[]);
    vec![one; count]
}

/// Distinct random hosts in 10.0.0.0/8. Address bytes are masked in the
/// samples but still enter the IP and transport checksums, so they must not
/// depend on the flow index or the corpus size.
fn source_ips(rng: &mut ChaCha8Rng, count: usize) -> Vec<Ipv4Addr> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let host: u32 = rng.gen_range(1..1 << 24);
        if seen.insert(host) {
            out.push(Ipv4Addr::from(0x0a00_0000 | host));
        }
    }
    out
}

/// Generates a labeled corpus. Normal flows follow fixed protocol templates
/// with bounded per-byte jitter; anomalies are random-payload sessions or
/// floods of one repeated SYN. The frames go through the ordinary flow
/// pipeline, so samples obey every preprocessing invariant. The output is a
/// pure function of `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let total = cfg.n_normal_flows + cfg.n_anomaly_flows;
    if total >= 1 << 23 {
        return Err(Error::Config("too many flows for the synthetic address plan".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates = &cfg.normal_profile.templates;
    let weights = WeightedIndex::new([cfg.anomaly_profile.random_payload, cfg.anomaly_profile.flood_repeat])
        .map_err(|e| Error::Config(format!("anomaly weights: {e}")))?;

    let mut kinds: Vec<FlowKind> = (0..cfg.n_normal_flows)
        .map(|i| FlowKind::Normal(templates[i % templates.len()]))
        .collect();
    for _ in 0..cfg.n_anomaly_flows {
        kinds.push(match weights.sample(&mut rng) {
            0 => FlowKind::RandomPayload,
            _ => FlowKind::FloodRepeat,
        });
    }
    kinds.shuffle(&mut rng);
    let sources = source_ips(&mut rng, kinds.len());

    let mut tagged: Vec<(u64, usize, usize, Vec<u8>)> = Vec::new();
    let mut labels = BTreeMap::new();
    for (flow, kind) in kinds.iter().enumerate() {
        let src = sources[flow];
        let count = rng.gen_range(cfg.packets_per_flow.min..=cfg.packets_per_flow.max);
        let frames = match *kind {
            FlowKind::Normal(t) => normal_flow(&mut rng, &normal_template(t), src, count, cfg.normal_profile.jitter),
            FlowKind::RandomPayload => random_payload_flow(&mut rng, src, count),
            FlowKind::FloodRepeat => flood_flow(&mut rng, src, count),
        };
        let mut ts = flow as u64 * 20_000 + rng.gen_range(0..20_000);
        for (i, f) in frames.into_iter().enumerate() {
            tagged.push((ts, flow, i, f));
            ts += rng.gen_range(100..=5_000);
        }
        labels.insert(src, kind.label());
    }
    tagged.sort_by_key(|(ts, flow, i, _)| (*ts, *flow, *i));
    let packets: Vec<SynthPacket> = tagged
        .into_iter()
        .map(|(ts_us, _, _, frame)| SynthPacket { ts_us, frame })
        .collect();

    let records = packets.iter().map(|p| {
        let info = dissect(&p.frame, LinkType::Ethernet).expect("generated frames are valid IPv4");
        PacketRecord {
            timestamp: Duration::from_micros(p.ts_us).as_secs_f64(),
            link_bytes: p.frame.clone(),
            link: LinkType::Ethernet,
            five_tuple: info.key,
            tcp_flags: info.tcp_flags,
        }
    });
    let ingest = cfg.ingest_config();
    let (flows, stats) = preprocess(records, &ingest)?;
    let mut samples = SampleSet::new(cfg.n, cfg.l);
    for s in flows {
        let label = s.origin.and_then(|o| label_of(&labels, &o.key));
        samples.push(&s.values, Some(label.ok_or_else(|| Error::Config("sample without a generated flow".into()))?))?;
    }
    Ok(SynthCorpus {
        samples,
        packets,
        stats,
    })
}

fn label_of(labels: &BTreeMap<Ipv4Addr, Label>, key: &FlowKey) -> Option<Label> {
    match key.src_ip {
        std::net::IpAddr::V4(ip) => labels.get(&ip).copied(),
        std::net::IpAddr::V6(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 5,
            n_normal_flows: 40,
            n_anomaly_flows: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn every_flow_yields_one_labeled_sample() {
        let c = synth_generate(&small()).unwrap();
        assert_eq!(c.samples.len(), 60);
        let labels = c.samples.labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|l| !l.is_anomaly()).count(), 40);
        assert!(c.samples.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_counts_are_rejected() {
        let cfg = SynthConfig {
            n_anomaly_flows: 0,
            ..small()
        };
        assert!(synth_generate(&cfg).is_err());
    }

    #[test]
    fn sources_are_distinct_private_hosts() {
        let ips = source_ips(&mut ChaCha8Rng::seed_from_u64(1), 5000);
        let unique: HashSet<_> = ips.iter().collect();
        assert_eq!(unique.len(), 5000);
        assert!(ips.iter().all(|ip| ip.octets()[0] == 10 && *ip != Ipv4Addr::new(10, 0, 0, 0)));
    }

    #[test]
    fn addresses_are_masked() {
        let c = synth_generate(&small()).unwrap();
        for i in 0..c.samples.len() {
            let s = c.samples.sample(i);
            // MACs, then IPv4 source and destination
            assert!(s[..12].iter().all(|&v| v == 0.0));
            assert!(s[26..34].iter().all(|&v| v == 0.0));
        }
    }
}
