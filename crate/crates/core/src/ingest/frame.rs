//! Per-frame header dissection, address masking, and trimming.

use std::net::IpAddr;
use std::ops::Range;

use etherparse::{err::Layer, LaxNetSlice, LaxSlicedPacket, TransportSlice};
use serde::{Deserialize, Serialize};

use super::FlowKey;

/// Link layer a capture's frames start with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkType {
    Ethernet,
    /// Frames begin directly with an IPv4 or IPv6 header.
    RawIp,
}

/// Length of an Ethernet II header without VLAN tags.
pub const ETHERNET_HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame carries no IP packet")]
    NotIp,
    #[error("frame of {len} bytes is too short for its IP header")]
    Truncated { len: usize },
}

/// TCP control bits relevant to flow termination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpFlags {
    pub fin: bool,
    pub syn: bool,
    pub rst: bool,
    pub ack: bool,
}

/// Result of dissecting one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameInfo {
    pub key: FlowKey,
    pub tcp_flags: Option<TcpFlags>,
    /// Byte ranges holding MAC and IP addresses.
    pub address_ranges: Vec<Range<usize>>,
}

fn offset_in(frame: &[u8], sub: &[u8]) -> usize {
    sub.as_ptr() as usize - frame.as_ptr() as usize
}

/// Locates the flow key and address bytes of a frame.
pub fn dissect(frame: &[u8], link: LinkType) -> Result<FrameInfo, FrameError> {
    let too_short = FrameError::Truncated { len: frame.len() };
    let packet = match link {
        LinkType::Ethernet => LaxSlicedPacket::from_ethernet(frame).map_err(|_| too_short.clone())?,
        LinkType::RawIp => LaxSlicedPacket::from_ip(frame).map_err(|_| too_short.clone())?,
    };

    let mut address_ranges = Vec::with_capacity(3);
    if link == LinkType::Ethernet {
        // destination + source MAC
        address_ranges.push(0..12);
    }

    let (src_ip, dst_ip, protocol) = match &packet.net {
        Some(LaxNetSlice::Ipv4(ip)) => {
            let header = ip.header();
            let at = offset_in(frame, header.slice());
            address_ranges.push(at + 12..at + 20);
            (
                IpAddr::from(header.source()),
                IpAddr::from(header.destination()),
                ip.payload().ip_number.0,
            )
        }
        Some(LaxNetSlice::Ipv6(ip)) => {
            let header = ip.header();
            let at = offset_in(frame, header.slice());
            address_ranges.push(at + 8..at + 40);
            (
                IpAddr::from(header.source()),
                IpAddr::from(header.destination()),
                ip.payload().ip_number.0,
            )
        }
        None => {
            return Err(match &packet.stop_err {
                Some((_, Layer::IpHeader | Layer::Ipv4Header | Layer::Ipv6Header)) => too_short,
                _ => FrameError::NotIp,
            })
        }
    };

    let (src_port, dst_port, tcp_flags) = match &packet.transport {
        Some(TransportSlice::Tcp(tcp)) => (
            tcp.source_port(),
            tcp.destination_port(),
            Some(TcpFlags {
                fin: tcp.fin(),
                syn: tcp.syn(),
                rst: tcp.rst(),
                ack: tcp.ack(),
            }),
        ),
        Some(TransportSlice::Udp(udp)) => (udp.source_port(), udp.destination_port(), None),
        _ => (0, 0, None),
    };

    Ok(FrameInfo {
        key: FlowKey {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            protocol,
        },
        tcp_flags,
        address_ranges,
    })
}

/// Zeroes MAC/IP address bytes, keeps the first `len` bytes (zero-padded),
/// and scales each byte to `b / 255`.
pub fn anonymize_and_trim(frame: &[u8], link: LinkType, len: usize) -> Result<Vec<f32>, FrameError> {
    let info = dissect(frame, link)?;
    Ok(mask_and_scale(frame, &info.address_ranges, len))
}

pub(crate) fn mask_and_scale(frame: &[u8], masked: &[Range<usize>], len: usize) -> Vec<f32> {
    let mut bytes = vec![0u8; len];
    let keep = frame.len().min(len);
    bytes[..keep].copy_from_slice(&frame[..keep]);
    for r in masked {
        let end = r.end.min(len);
        if r.start < end {
            bytes[r.start..end].fill(0);
        }
    }
    bytes.into_iter().map(|b| f32::from(b) / 255.0).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Ethernet + IPv4 + TCP frame built byte by byte.
    pub(crate) fn tcp_frame(src_port: u16, dst_port: u16, flags: u8, payload: &[u8]) -> Vec<u8> {
        let mut f = Vec::new();
        f.extend_from_slice(&[0x00, 0x11, 0x22, 0x33, 0x44, 0x55]); // dst mac
        f.extend_from_slice(&[0xff, 0xff, 0xff, 0xff, 0xff, 0xff]); // src mac
        f.extend_from_slice(&[0x08, 0x00]);
        let total = (20 + 20 + payload.len()) as u16;
        f.extend_from_slice(&[0x45, 0x00]);
        f.extend_from_slice(&total.to_be_bytes());
        f.extend_from_slice(&[0x12, 0x34, 0x40, 0x00, 0x40, 0x06, 0x00, 0x00]);
        f.extend_from_slice(&[10, 0, 0, 1]);
        f.extend_from_slice(&[10, 0, 0, 2]);
        f.extend_from_slice(&src_port.to_be_bytes());
        f.extend_from_slice(&dst_port.to_be_bytes());
        f.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 0, 0x50, flags, 0xff, 0xff, 0, 0, 0, 0]);
        f.extend_from_slice(payload);
        f
    }

    #[test]
    fn sixty_byte_frame_is_zero_padded() {
        let frame = tcp_frame(1234, 80, 0x02, &[0xAA; 6]);
        assert_eq!(frame.len(), 60);
        let v = anonymize_and_trim(&frame, LinkType::Ethernet, 100).unwrap();
        assert_eq!(v.len(), 100);
        assert!(v[60..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn byte_scaling() {
        let mut payload = vec![0u8; 10];
        payload[0] = 0xFF;
        payload[1] = 0x80;
        let frame = tcp_frame(1, 2, 0x10, &payload);
        let v = anonymize_and_trim(&frame, LinkType::Ethernet, 100).unwrap();
        assert_eq!(v[54], 1.0);
        assert!((v[55] - 0.501_961).abs() < 1e-6);
        assert_eq!(v[55], 128.0f32 / 255.0);
    }

    #[test]
    fn addresses_are_zeroed() {
        let frame = tcp_frame(1, 2, 0x10, &[]);
        let v = anonymize_and_trim(&frame, LinkType::Ethernet, 100).unwrap();
        assert!(v[0..12].iter().all(|&x| x == 0.0));
        assert!(v[26..34].iter().all(|&x| x == 0.0));
        // ethertype survives
        assert_eq!(v[12], 8.0 / 255.0);
    }

    #[test]
    fn vlan_shifts_ip_offsets() {
        let plain = tcp_frame(1, 2, 0x10, &[]);
        let mut tagged = plain[..12].to_vec();
        tagged.extend_from_slice(&[0x81, 0x00, 0x00, 0x07]);
        tagged.extend_from_slice(&plain[12..]);
        let info = dissect(&tagged, LinkType::Ethernet).unwrap();
        assert_eq!(info.address_ranges, vec![0..12, 30..38]);
        assert_eq!(info.key.src_port, 1);
    }

    #[test]
    fn long_frames_are_truncated() {
        let frame = tcp_frame(1, 2, 0x10, &[7u8; 300]);
        let v = anonymize_and_trim(&frame, LinkType::Ethernet, 100).unwrap();
        assert_eq!(v.len(), 100);
        assert_eq!(v[99], 7.0 / 255.0);
    }

    #[test]
    fn arp_is_not_ip() {
        let mut f = vec![0xffu8; 12];
        f.extend_from_slice(&[0x08, 0x06]);
        f.extend_from_slice(&[0u8; 28]);
        assert_eq!(dissect(&f, LinkType::Ethernet), Err(FrameError::NotIp));
    }

    #[test]
    fn cut_ip_header_is_rejected() {
        let frame = tcp_frame(1, 2, 0x10, &[]);
        let err = anonymize_and_trim(&frame[..20], LinkType::Ethernet, 100).unwrap_err();
        assert_eq!(err, FrameError::Truncated { len: 20 });
        assert!(anonymize_and_trim(&frame[..5], LinkType::Ethernet, 100).is_err());
    }

    #[test]
    fn raw_ip_link_has_no_mac() {
        let frame = tcp_frame(5, 6, 0x01, &[]);
        let info = dissect(&frame[14..], LinkType::RawIp).unwrap();
        assert_eq!(info.address_ranges, vec![12..20]);
        assert!(info.tcp_flags.unwrap().fin);
    }
}
