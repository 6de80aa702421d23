//! ARCD sample files: a little-endian container of `count` records of
//! `n * l` f32 values with optional per-record label bytes.
//!
//! ```text
//! "ARCD" | version u16 = 1 | n u16 | l u16 | reserved u16 = 0 | count u64
//! count * n * l f32
//! label flag u8 (0 | 1) [ count label bytes if flag = 1 ]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FlowSample;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ARCD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

/// Ground-truth class of a sample. On disk: 0 = normal, `k >= 1` = anomaly class `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomaly(u8),
}

impl Label {
    pub fn from_byte(b: u8) -> Label {
        if b == 0 {
            Label::Normal
        } else {
            Label::Anomaly(b)
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomaly(k) => k.max(1),
        }
    }

    pub fn is_anomaly(self) -> bool {
        matches!(self, Label::Anomaly(_))
    }
}

/// In-memory sample file: row-major `count x (n * l)` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub n: usize,
    pub l: usize,
    pub data: Vec<f32>,
    pub labels: Option<Vec<Label>>,
}

impl SampleSet {
    pub fn new(n: usize, l: usize) -> SampleSet {
        SampleSet {
            n,
            l,
            data: Vec::new(),
            labels: None,
        }
    }

    pub fn from_samples(n: usize, l: usize, samples: &[FlowSample]) -> Result<SampleSet> {
        let mut set = SampleSet::new(n, l);
        let labelled = samples.iter().filter(|s| s.label.is_some()).count();
        if labelled != 0 && labelled != samples.len() {
            return Err(Error::SampleFile("either all samples or none must carry labels".into()));
        }
        for s in samples {
            set.push(&s.values, s.label)?;
        }
        Ok(set)
    }

    pub fn width(&self) -> usize {
        self.n * self.l
    }

    pub fn len(&self) -> usize {
        if self.width() == 0 {
            0
        } else {
            self.data.len() / self.width()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn label(&self, i: usize) -> Option<Label> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn push(&mut self, values: &[f32], label: Option<Label>) -> Result<()> {
        if values.len() != self.width() {
            return Err(Error::Length {
                expected: self.width(),
                got: values.len(),
            });
        }
        match (&mut self.labels, label) {
            (Some(ls), Some(l)) => ls.push(l),
            (None, None) => {}
            (None, Some(l)) if self.data.is_empty() => self.labels = Some(vec![l]),
            _ => return Err(Error::SampleFile("mixing labelled and unlabelled samples".into())),
        }
        self.data.extend_from_slice(values);
        Ok(())
    }

    /// Subset by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> SampleSet {
        let mut data = Vec::with_capacity(idx.len() * self.width());
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        SampleSet {
            n: self.n,
            l: self.l,
            data,
            labels: self.labels.as_ref().map(|ls| idx.iter().map(|&i| ls[i]).collect()),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = u16::try_from(self.n).map_err(|_| Error::SampleFile("n exceeds u16".into()))?;
        let l = u16::try_from(self.l).map_err(|_| Error::SampleFile("l exceeds u16".into()))?;
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&n.to_le_bytes());
        header.extend_from_slice(&l.to_le_bytes());
        header.extend_from_slice(&0u16.to_le_bytes());
        header.extend_from_slice(&(self.len() as u64).to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            body.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&body)?;
        match &self.labels {
            Some(ls) => {
                w.write_all(&[1])?;
                let bytes: Vec<u8> = ls.iter().map(|l| l.to_byte()).collect();
                w.write_all(&bytes)?;
            }
            None => w.write_all(&[0])?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<SampleSet> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|e| Error::SampleFile(format!("short header: {e}")))?;
        if &header[0..4] != MAGIC {
            return Err(Error::SampleFile("bad magic".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::SampleFile(format!("unsupported version {version}")));
        }
        let n = u16_at(6) as usize;
        let l = u16_at(8) as usize;
        if u16_at(10) != 0 {
            return Err(Error::SampleFile("reserved field is not zero".into()));
        }
        let count = u64::from_le_bytes(header[12..20].try_into().expect("8 bytes"));
        let values = (count as usize)
            .checked_mul(n * l)
            .ok_or_else(|| Error::SampleFile("record count overflows".into()))?;

        let mut body = Vec::new();
        r.by_ref()
            .take(values as u64 * 4)
            .read_to_end(&mut body)?;
        if body.len() != values * 4 {
            return Err(Error::SampleFile(format!(
                "expected {} data bytes, found {}",
                values * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();

        let mut flag = [0u8; 1];
        let labels = match r.read(&mut flag)? {
            0 => None,
            _ if flag[0] == 0 => None,
            _ if flag[0] == 1 => {
                let mut bytes = vec![0u8; count as usize];
                r.read_exact(&mut bytes)
                    .map_err(|e| Error::SampleFile(format!("short label block: {e}")))?;
                Some(bytes.into_iter().map(Label::from_byte).collect())
            }
            _ => return Err(Error::SampleFile(format!("bad label flag {}", flag[0]))),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::SampleFile("trailing bytes after records".into()));
        }
        Ok(SampleSet { n, l, data, labels })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<SampleSet> {
        SampleSet::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut s = SampleSet::new(2, 3);
        s.push(&[0.0, 1.0, 0.5, 0.25, 0.0, 1.0], None).unwrap();
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"ARCD");
        assert_eq!(&b[4..12], &[1, 0, 2, 0, 3, 0, 0, 0]);
        assert_eq!(&b[12..20], &1u64.to_le_bytes());
        assert_eq!(&b[20..24], &0f32.to_le_bytes());
        assert_eq!(&b[24..28], &1f32.to_le_bytes());
        assert_eq!(b.len(), 20 + 24 + 1);
        assert_eq!(*b.last().unwrap(), 0);
    }

    #[test]
    fn labelled_round_trip() {
        let mut s = SampleSet::new(1, 2);
        s.push(&[0.1, 0.2], Some(Label::Normal)).unwrap();
        s.push(&[0.3, 0.4], Some(Label::Anomaly(3))).unwrap();
        let b = s.to_bytes();
        assert_eq!(&b[b.len() - 3..], &[1, 0, 3]);
        assert_eq!(SampleSet::read_from(&b[..]).unwrap(), s);
    }

    #[test]
    fn missing_flag_means_unlabelled() {
        let s = SampleSet {
            n: 1,
            l: 1,
            data: vec![0.5],
            labels: None,
        };
        let b = s.to_bytes();
        assert_eq!(SampleSet::read_from(&b[..b.len() - 1]).unwrap(), s);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut s = SampleSet::new(1, 2);
        s.push(&[0.1, 0.2], None).unwrap();
        let b = s.to_bytes();
        assert!(SampleSet::read_from(&b[..25]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(SampleSet::read_from(&bad[..]).is_err());
        let mut extra = b.clone();
        extra.push(9);
        assert!(SampleSet::read_from(&extra[..]).is_err());
    }

    #[test]
    fn push_checks_width_and_label_consistency() {
        let mut s = SampleSet::new(1, 2);
        assert!(matches!(s.push(&[0.0], None), Err(Error::Length { expected: 2, got: 1 })));
        s.push(&[0.0, 0.0], None).unwrap();
        assert!(s.push(&[0.0, 0.0], Some(Label::Normal)).is_err());
    }
}
