//! pcap / pcapng reading.

use std::fs::File;
use std::io::{BufReader, Cursor, Read};
use std::path::Path;

use log::warn;
use pcap_file::pcap::PcapReader;
use pcap_file::pcapng::{Block, PcapNgReader};
use pcap_file::{DataLink, PcapError};

use super::frame::{dissect, FrameError, LinkType};
use super::PacketRecord;
use crate::error::{Error, Result};

const PCAP_MAGICS: [[u8; 4]; 4] = [
    [0xd4, 0xc3, 0xb2, 0xa1],
    [0xa1, 0xb2, 0xc3, 0xd4],
    [0x4d, 0x3c, 0xb2, 0xa1],
    [0xa1, 0xb2, 0x3c, 0x4d],
];
const PCAPNG_MAGIC: [u8; 4] = [0x0a, 0x0d, 0x0d, 0x0a];

/// Counters accumulated while reading a capture.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptureStats {
    /// Frames yielded as [`PacketRecord`]s.
    pub packets: u64,
    /// Frames without an IP packet (ARP, LLDP, ...).
    pub non_ip: u64,
    /// IP frames too short to locate their addresses.
    pub malformed: u64,
    /// Frames on interfaces with an unsupported link type.
    pub unsupported_link: u64,
    /// Set when reading stopped early at a truncated or corrupt record.
    pub truncated: bool,
}

enum Source<R: Read> {
    Pcap {
        reader: PcapReader<R>,
        link: Option<LinkType>,
    },
    PcapNg(PcapNgReader<R>),
}

/// Iterator over the IP packets of a capture, in capture order.
pub struct CaptureReader<R: Read> {
    source: Source<R>,
    stats: CaptureStats,
    done: bool,
}

fn link_type(dl: DataLink) -> Option<LinkType> {
    match dl {
        DataLink::ETHERNET => Some(LinkType::Ethernet),
        DataLink::RAW | DataLink::IPV4 | DataLink::IPV6 => Some(LinkType::RawIp),
        _ => None,
    }
}

/// Opens a pcap or pcapng stream; the format is picked from its magic bytes.
pub fn parse_capture<R: Read>(mut source: R) -> Result<CaptureReader<std::io::Chain<Cursor<[u8; 4]>, R>>> {
    let mut magic = [0u8; 4];
    source
        .read_exact(&mut magic)
        .map_err(|e| Error::Capture(format!("cannot read capture header: {e}")))?;
    let stream = Cursor::new(magic).chain(source);
    let source = if PCAP_MAGICS.contains(&magic) {
        let reader = PcapReader::new(stream)
            .map_err(|e| Error::Capture(format!("bad pcap header: {e}")))?;
        let link = link_type(reader.header().datalink);
        if link.is_none() {
            return Err(Error::Capture(format!(
                "unsupported pcap link type {:?}",
                reader.header().datalink
            )));
        }
        Source::Pcap { reader, link }
    } else if magic == PCAPNG_MAGIC {
        let reader = PcapNgReader::new(stream)
            .map_err(|e| Error::Capture(format!("bad pcapng section header: {e}")))?;
        Source::PcapNg(reader)
    } else {
        return Err(Error::Capture(format!(
            "not a pcap or pcapng file (magic {:02x?})",
            magic
        )));
    };
    Ok(CaptureReader {
        source,
        stats: CaptureStats::default(),
        done: false,
    })
}

/// Opens a capture file from disk.
pub fn open_capture(path: impl AsRef<Path>) -> Result<CaptureReader<std::io::Chain<Cursor<[u8; 4]>, BufReader<File>>>> {
    let file = File::open(path.as_ref())?;
    parse_capture(BufReader::new(file))
}

impl<R: Read> CaptureReader<R> {
    pub fn stats(&self) -> &CaptureStats {
        &self.stats
    }

    fn stop(&mut self, err: PcapError) {
        match &err {
            PcapError::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                warn!("capture ends with a truncated record; stopping")
            }
            other => warn!("corrupt capture record ({other}); stopping"),
        }
        self.stats.truncated = true;
        self.done = true;
    }

    /// Next raw frame with its timestamp and link type.
    fn next_frame(&mut self) -> Option<(f64, Vec<u8>, Option<LinkType>)> {
        loop {
            if self.done {
                return None;
            }
            let item = match &mut self.source {
                Source::Pcap { reader, link } => {
                    let link = *link;
                    match reader.next_packet() {
                        None => None,
                        Some(Ok(p)) => Some(Ok((p.timestamp.as_secs_f64(), p.data.into_owned(), link))),
                        Some(Err(e)) => Some(Err(e)),
                    }
                }
                Source::PcapNg(reader) => {
                    // (interface, timestamp, data); the block borrows the reader
                    let owned = match reader.next_block() {
                        None => None,
                        Some(Err(e)) => Some(Err(e)),
                        Some(Ok(Block::EnhancedPacket(epb))) => Some(Ok(Some((
                            epb.interface_id as usize,
                            epb.timestamp.as_secs_f64(),
                            epb.data.into_owned(),
                        )))),
                        Some(Ok(Block::SimplePacket(spb))) => Some(Ok(Some((0, 0.0, spb.data.into_owned())))),
                        Some(Ok(_)) => Some(Ok(None)),
                    };
                    match owned {
                        None => None,
                        Some(Err(e)) => Some(Err(e)),
                        Some(Ok(None)) => continue,
                        Some(Ok(Some((iface, ts, data)))) => {
                            let link = reader.interfaces().get(iface).and_then(|i| link_type(i.linktype));
                            Some(Ok((ts, data, link)))
                        }
                    }
                }
            };
            match item {
                None => {
                    self.done = true;
                    return None;
                }
                Some(Err(e)) => {
                    self.stop(e);
                    return None;
                }
                Some(Ok(frame)) => return Some(frame),
            }
        }
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = PacketRecord;

    fn next(&mut self) -> Option<PacketRecord> {
        loop {
            let (timestamp, bytes, link) = self.next_frame()?;
            let Some(link) = link else {
                self.stats.unsupported_link += 1;
                continue;
            };
            if bytes.is_empty() {
                self.stats.malformed += 1;
                continue;
            }
            match dissect(&bytes, link) {
                Ok(info) => {
                    self.stats.packets += 1;
                    return Some(PacketRecord {
                        timestamp,
                        link_bytes: bytes,
                        link,
                        five_tuple: info.key,
                        tcp_flags: info.tcp_flags,
                    });
                }
                Err(FrameError::NotIp) => self.stats.non_ip += 1,
                Err(FrameError::Truncated { .. }) => self.stats.malformed += 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::frame::tests::tcp_frame;
    use pcap_file::pcap::{PcapHeader, PcapPacket, PcapWriter};
    use std::time::Duration;

    fn write_pcap(frames: &[(f64, Vec<u8>)]) -> Vec<u8> {
        let mut w = PcapWriter::with_header(
            Vec::new(),
            PcapHeader {
                datalink: DataLink::ETHERNET,
                ..Default::default()
            },
        )
        .unwrap();
        for (t, f) in frames {
            w.write_packet(&PcapPacket::new(Duration::from_secs_f64(*t), f.len() as u32, f))
                .unwrap();
        }
        w.into_writer()
    }

    #[test]
    fn empty_capture_yields_nothing() {
        let bytes = write_pcap(&[]);
        let mut r = parse_capture(&bytes[..]).unwrap();
        assert!(r.next().is_none());
        assert_eq!(r.stats().packets, 0);
        assert!(!r.stats().truncated);
    }

    #[test]
    fn arp_frames_are_skipped_and_counted() {
        let mut arp = vec![0xffu8; 12];
        arp.extend_from_slice(&[0x08, 0x06]);
        arp.extend_from_slice(&[0u8; 28]);
        let bytes = write_pcap(&[
            (0.0, arp),
            (0.5, tcp_frame(1000, 80, 0x02, &[])),
            (1.0, tcp_frame(1000, 80, 0x10, &[])),
        ]);
        let mut r = parse_capture(&bytes[..]).unwrap();
        let packets: Vec<_> = r.by_ref().collect();
        assert_eq!(packets.len(), 2);
        assert_eq!(packets[0].timestamp, 0.5);
        assert_eq!(r.stats().non_ip, 1);
    }

    #[test]
    fn bad_magic_is_fatal() {
        let err = parse_capture(&b"NOPE and more bytes here"[..]).err().unwrap();
        assert!(matches!(err, Error::Capture(_)));
    }

    #[test]
    fn truncated_tail_stops_with_warning() {
        let mut bytes = write_pcap(&[
            (0.0, tcp_frame(1, 2, 0x10, &[])),
            (1.0, tcp_frame(1, 2, 0x10, &[])),
        ]);
        bytes.truncate(bytes.len() - 10);
        let mut r = parse_capture(&bytes[..]).unwrap();
        assert_eq!(r.by_ref().count(), 1);
        assert!(r.stats().truncated);
    }
}
