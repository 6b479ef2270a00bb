//! `CSID` dataset files.
//!
//! Layout, little endian: magic `CSID`, u16 version, u16 flags, u32 rows,
//! u32 columns, u16 task count, one u32 sample count per task, then one record
//! per sample: `rows x columns` interleaved f32 (re, im) pairs in row-major
//! order, a u16 task label and the u64 sample seed. Records are grouped by task
//! in ascending label order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CsiError, Result};

pub const MAGIC: &[u8; 4] = b"CSID";
pub const VERSION: u16 = 1;
/// Records hold normalized angle-delay values instead of raw channels.
pub const FLAG_ANGLE_DELAY: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub flags: u16,
    pub rows: u32,
    pub cols: u32,
    pub counts: Vec<u32>,
}

impl DatasetHeader {
    pub fn n_tasks(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Interleaved values per record.
    pub fn values_per_record(&self) -> usize {
        2 * self.rows as usize * self.cols as usize
    }

    pub fn is_angle_delay(&self) -> bool {
        self.flags & FLAG_ANGLE_DELAY != 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Interleaved (re, im), row-major.
    pub values: Vec<f32>,
    pub label: u16,
    pub seed: u64,
}

pub struct DatasetWriter<W: Write> {
    out: W,
    header: DatasetHeader,
    written: Vec<u32>,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: DatasetHeader) -> Result<Self> {
        DatasetWriter::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut out: W, header: DatasetHeader) -> Result<Self> {
        if header.counts.is_empty() || header.counts.len() > u16::MAX as usize {
            return Err(CsiError::Argument("dataset needs between 1 and 65535 tasks".into()));
        }
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&header.flags.to_le_bytes())?;
        out.write_all(&header.rows.to_le_bytes())?;
        out.write_all(&header.cols.to_le_bytes())?;
        out.write_all(&(header.counts.len() as u16).to_le_bytes())?;
        for c in &header.counts {
            out.write_all(&c.to_le_bytes())?;
        }
        let written = vec![0; header.counts.len()];
        Ok(DatasetWriter { out, header, written })
    }

    pub fn write(&mut self, values: &[f32], label: u16, seed: u64) -> Result<()> {
        if values.len() != self.header.values_per_record() {
            return Err(CsiError::Argument("record length differs from the header".into()));
        }
        let k = (label as usize)
            .checked_sub(1)
            .filter(|&k| k < self.header.counts.len())
            .ok_or_else(|| CsiError::Argument(format!("label {label} outside the header's tasks")))?;
        if self.written[k] >= self.header.counts[k] || self.written[k + 1..].iter().any(|&w| w > 0) {
            return Err(CsiError::Argument("records must follow the header counts in task order".into()));
        }
        let mut buf = Vec::with_capacity(values.len() * 4 + 10);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&label.to_le_bytes());
        buf.extend_from_slice(&seed.to_le_bytes());
        self.out.write_all(&buf)?;
        self.written[k] += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.counts {
            return Err(CsiError::Integrity("dataset ended before every task was complete".into()));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| CsiError::Integrity(format!("truncated dataset: {e}")))?;
    Ok(b)
}

pub fn read_dataset_from<R: Read>(mut r: R) -> Result<Dataset> {
    if &read_exact::<_, 4>(&mut r)? != MAGIC {
        return Err(CsiError::Integrity("not a CSID dataset".into()));
    }
    let version = u16::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(CsiError::Integrity(format!("unsupported dataset version {version}")));
    }
    let flags = u16::from_le_bytes(read_exact(&mut r)?);
    let rows = u32::from_le_bytes(read_exact(&mut r)?);
    let cols = u32::from_le_bytes(read_exact(&mut r)?);
    let n_tasks = u16::from_le_bytes(read_exact(&mut r)?);
    let mut counts = Vec::with_capacity(n_tasks as usize);
    for _ in 0..n_tasks {
        counts.push(u32::from_le_bytes(read_exact(&mut r)?));
    }
    let header = DatasetHeader { flags, rows, cols, counts };
    let per = header.values_per_record();
    let mut records = Vec::with_capacity(header.total());
    let mut raw = vec![0u8; per * 4];
    for (k, &count) in header.counts.iter().enumerate() {
        for _ in 0..count {
            r.read_exact(&mut raw)
                .map_err(|e| CsiError::Integrity(format!("truncated dataset: {e}")))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let label = u16::from_le_bytes(read_exact(&mut r)?);
            let seed = u64::from_le_bytes(read_exact(&mut r)?);
            if label as usize != k + 1 {
                return Err(CsiError::Integrity(format!("record labelled {label} inside task {}", k + 1)));
            }
            records.push(Record { values, label, seed });
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(CsiError::Integrity("trailing bytes after the last record".into()));
    }
    Ok(Dataset { header, records })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_in_memory() {
        let header = DatasetHeader {
            flags: FLAG_ANGLE_DELAY,
            rows: 1,
            cols: 2,
            counts: vec![1, 2],
        };
        let mut w = DatasetWriter::new(Vec::new(), header.clone()).unwrap();
        w.write(&[0.1, 0.2, 0.3, 0.4], 1, 7).unwrap();
        w.write(&[1.0, 2.0, 3.0, 4.0], 2, 8).unwrap();
        w.write(&[5.0, 6.0, 7.0, 8.0], 2, u64::MAX).unwrap();
        let bytes = w.finish().unwrap();
        assert_eq!(&bytes[..4], b"CSID");
        let d = read_dataset_from(&bytes[..]).unwrap();
        assert_eq!(d.header, header);
        assert_eq!(d.records[2].seed, u64::MAX);
        assert_eq!(d.records[1].values, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(read_dataset_from(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn writer_enforces_counts_and_order() {
        let header = DatasetHeader {
            flags: 0,
            rows: 1,
            cols: 1,
            counts: vec![1, 1],
        };
        let mut w = DatasetWriter::new(Vec::new(), header.clone()).unwrap();
        w.write(&[0.0, 0.0], 2, 0).unwrap();
        assert!(w.write(&[0.0, 0.0], 1, 0).is_err());
        let w = DatasetWriter::new(Vec::new(), header).unwrap();
        assert!(w.finish().is_err());
    }
}
