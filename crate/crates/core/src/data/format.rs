//! Binary dataset files.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 0–3   | magic `EOPT` |
//! | 4–7   | version `u32` = 1 |
//! | 8–15  | `n_index` `u64` |
//! | 16–23 | `n_time` `u64` |
//! | 24–31 | `n_channel` `u64` (always 14) |
//! | 32    | dtype: 1 = f16, 2 = f32 |
//! | 33–39 | reserved, zero |
//! | 40–47 | epoch, `i64` days since 1970-01-01 |
//!
//! followed by `n_time` `i32` date offsets from the epoch and the
//! `[index][time][channel]` payload.

use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use half::f16;
use memmap2::Mmap;

use super::{TokenizedDataset, N_CHANNELS};
use crate::dates::Day;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"EOPT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;

/// On-disk precision of the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageType {
    F16,
    F32,
}

impl fmt::Display for StorageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageType::F16 => "f16",
            StorageType::F32 => "f32",
        })
    }
}

impl FromStr for StorageType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f16" => Ok(StorageType::F16),
            "f32" => Ok(StorageType::F32),
            other => Err(Error::Config(format!("storage must be f16 or f32, got {other:?}"))),
        }
    }
}

impl StorageType {
    pub fn code(self) -> u8 {
        match self {
            StorageType::F16 => 1,
            StorageType::F32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(StorageType::F16),
            2 => Some(StorageType::F32),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            StorageType::F16 => 2,
            StorageType::F32 => 4,
        }
    }

    /// Rounds values to what this storage type can represent.
    pub fn quantize(self, values: &mut [f32]) {
        if self == StorageType::F16 {
            values
                .iter_mut()
                .for_each(|v| *v = f16::from_f32(*v).to_f32());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub n_index: usize,
    pub n_time: usize,
    pub storage: StorageType,
    pub epoch: Day,
}

impl DatasetHeader {
    fn payload_offset(&self) -> usize {
        HEADER_LEN + 4 * self.n_time
    }
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

/// Zero-copy view over encoded dataset bytes.
#[derive(Clone, Debug)]
pub struct DatasetView<'a> {
    header: DatasetHeader,
    date_offsets: Vec<i32>,
    payload: &'a [u8],
}

impl<'a> DatasetView<'a> {
    /// Validates the header, date vector and payload length.
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(0, "bad magic, expected \"EOPT\""));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let n_index = read_u64(bytes, 8);
        let n_time = read_u64(bytes, 16);
        let n_channel = read_u64(bytes, 24);
        if n_channel != N_CHANNELS as u64 {
            return Err(Error::format(24, format!("expected 14 channels, found {n_channel}")));
        }
        let storage = StorageType::from_code(bytes[32])
            .ok_or_else(|| Error::format(32, format!("unknown dtype code {}", bytes[32])))?;
        if let Some(i) = bytes[33..40].iter().position(|&b| b != 0) {
            return Err(Error::format(33 + i as u64, "reserved byte is not zero"));
        }
        let epoch = Day(i64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")));

        let too_large = || Error::format(8, "declared sizes overflow");
        let n_index = usize::try_from(n_index).map_err(|_| too_large())?;
        let n_time = usize::try_from(n_time).map_err(|_| too_large())?;
        let dates_len = n_time.checked_mul(4).ok_or_else(too_large)?;
        let payload_len = n_index
            .checked_mul(n_time)
            .and_then(|v| v.checked_mul(N_CHANNELS * storage.width()))
            .ok_or_else(too_large)?;
        let total = HEADER_LEN
            .checked_add(dates_len)
            .and_then(|v| v.checked_add(payload_len))
            .ok_or_else(too_large)?;
        if bytes.len() < total {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated file: header declares {total} bytes, found {}", bytes.len()),
            ));
        }
        if bytes.len() > total {
            return Err(Error::format(
                total as u64,
                format!("{} trailing bytes after payload", bytes.len() - total),
            ));
        }
        let mut date_offsets = Vec::with_capacity(n_time);
        for t in 0..n_time {
            let at = HEADER_LEN + 4 * t;
            let off = i32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
            if let Some(&prev) = date_offsets.last() {
                if off <= prev {
                    return Err(Error::format(at as u64, "date offsets not strictly increasing"));
                }
            }
            date_offsets.push(off);
        }
        let header = DatasetHeader {
            n_index,
            n_time,
            storage,
            epoch,
        };
        let payload = &bytes[header.payload_offset()..total];
        Ok(Self {
            header,
            date_offsets,
            payload,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn date_offsets(&self) -> &[i32] {
        &self.date_offsets
    }

    /// Decodes one channel value.
    pub fn value(&self, index: usize, time: usize, channel: usize) -> f32 {
        let flat = (index * self.header.n_time + time) * N_CHANNELS + channel;
        self.decode_at(flat)
    }

    fn decode_at(&self, flat: usize) -> f32 {
        match self.header.storage {
            StorageType::F16 => {
                let at = flat * 2;
                f16::from_le_bytes([self.payload[at], self.payload[at + 1]]).to_f32()
            }
            StorageType::F32 => {
                let at = flat * 4;
                f32::from_le_bytes(self.payload[at..at + 4].try_into().expect("4 bytes"))
            }
        }
    }

    /// Decodes the whole payload into an owned dataset; rejects non-finite values.
    pub fn to_dataset(&self) -> Result<TokenizedDataset> {
        let n = self.header.n_index * self.header.n_time * N_CHANNELS;
        let mut data = Vec::with_capacity(n);
        for flat in 0..n {
            let v = self.decode_at(flat);
            if !v.is_finite() {
                let at = self.header.payload_offset() + flat * self.header.storage.width();
                return Err(Error::format(at as u64, "non-finite value in payload"));
            }
            data.push(v);
        }
        TokenizedDataset::from_parts(
            self.header.n_index,
            self.header.epoch,
            self.date_offsets.clone(),
            self.header.storage,
            data,
        )
    }
}

/// Read-only memory map of a dataset file.
pub struct MappedDataset {
    mmap: Mmap,
    header: DatasetHeader,
}

impl MappedDataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        // SAFETY: the mapping is read-only and the file is not modified by
        // this process while mapped.
        let mmap = unsafe { Mmap::map(&file)? };
        let header = DatasetView::parse(&mmap)?.header;
        Ok(Self { mmap, header })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn view(&self) -> DatasetView<'_> {
        DatasetView::parse(&self.mmap).expect("validated at open")
    }
}

pub fn encode_dataset(dataset: &TokenizedDataset) -> Vec<u8> {
    let storage = dataset.storage();
    let mut out = Vec::with_capacity(
        HEADER_LEN + 4 * dataset.n_time() + dataset.data().len() * storage.width(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.n_index() as u64).to_le_bytes());
    out.extend_from_slice(&(dataset.n_time() as u64).to_le_bytes());
    out.extend_from_slice(&(N_CHANNELS as u64).to_le_bytes());
    out.push(storage.code());
    out.extend_from_slice(&[0u8; 7]);
    out.extend_from_slice(&dataset.epoch().0.to_le_bytes());
    for off in dataset.date_offsets() {
        out.extend_from_slice(&off.to_le_bytes());
    }
    match storage {
        StorageType::F16 => {
            for &v in dataset.data() {
                out.extend_from_slice(&f16::from_f32(v).to_le_bytes());
            }
        }
        StorageType::F32 => {
            for &v in dataset.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TokenizedDataset> {
    DatasetView::parse(bytes)?.to_dataset()
}

pub fn write_dataset(dataset: &TokenizedDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(dataset))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<TokenizedDataset> {
    MappedDataset::open(path)?.view().to_dataset()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(storage: StorageType) -> TokenizedDataset {
        let data = (0..2 * 3 * N_CHANNELS).map(|i| (i as f32) * 0.01 - 0.2).collect();
        TokenizedDataset::from_parts(2, Day(16436), vec![0, 5, 10], storage, data).unwrap()
    }

    #[test]
    fn round_trip_both_dtypes() {
        for storage in [StorageType::F16, StorageType::F32] {
            let ds = tiny(storage);
            let bytes = encode_dataset(&ds);
            assert_eq!(bytes.len(), HEADER_LEN + 12 + 2 * 3 * 14 * storage.width());
            assert_eq!(decode_dataset(&bytes).unwrap(), ds);
        }
    }

    #[test]
    fn half_precision_rounding() {
        let mut v = [0.12345f32];
        StorageType::F16.quantize(&mut v);
        // Grid spacing in [1/16, 1/8) is 2^-14; 0.12345 sits between 2022 and
        // 2023 steps, nearer the upper one.
        let step = 2f32.powi(-14);
        assert_eq!(v[0], 2023.0 * step);
        assert!((v[0] - 0.123413).abs() < 1e-4);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = encode_dataset(&tiny(StorageType::F16));
        for cut in [0, 3, 47, 48, 55, bytes.len() - 1] {
            assert!(
                matches!(decode_dataset(&bytes[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[32] = 9;
        assert!(matches!(decode_dataset(&bad), Err(Error::Format { offset: 32, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_dataset(&long), Err(Error::Format { .. })));
    }

    #[test]
    fn oversized_declaration_is_rejected_without_allocation() {
        let mut bytes = encode_dataset(&tiny(StorageType::F32));
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format { .. })));
    }
}
