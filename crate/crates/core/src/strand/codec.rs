//! Record and strand-header encodings.
//!
//! Record layout (little-endian, no padding):
//!
//! ```text
//! 0..4    magic "FMR1"
//! 4..8    CRC-32C of bytes 8..end
//! 8..16   link offset (all ones = none)
//! 16..20  key length, unsigned
//! 20..24  value length, signed; -1 marks a tombstone
//! 24..    key bytes, then value bytes
//! ```
//!
//! Strand header (64 bytes at offset 0 of every region):
//!
//! ```text
//! 0..4    magic "FMS1"
//! 4..8    format version
//! 8..12   slot (all ones = spare)
//! 12..20  generation
//! 20..28  capacity
//! 28..64  zero
//! ```

use crate::error::{Error, Result};

pub const RECORD_MAGIC: [u8; 4] = *b"FMR1";
pub const RECORD_HEADER_LEN: usize = 24;
pub const NIL_LINK: u64 = u64::MAX;
pub const TOMBSTONE_LEN: i32 = -1;

pub const MAX_KEY_LEN: usize = u32::MAX as usize;
pub const MAX_VALUE_LEN: usize = i32::MAX as usize;

pub const STRAND_MAGIC: [u8; 4] = *b"FMS1";
pub const STRAND_FORMAT_VERSION: u32 = 1;
pub const STRAND_HEADER_LEN: u64 = 64;
pub const SPARE_SLOT: u32 = u32::MAX;

/// Fixed-width metadata that precedes every key/value pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordMeta {
    pub link: Option<u64>,
    pub key_len: u32,
    pub val_len: i32,
}

impl RecordMeta {
    pub fn is_tombstone(&self) -> bool {
        self.val_len == TOMBSTONE_LEN
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.key_len as usize + self.val_len.max(0) as usize
    }
}

/// A decoded key/value pair. `value == None` is a tombstone.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub link: Option<u64>,
    pub key: Vec<u8>,
    pub value: Option<Vec<u8>>,
}

impl Record {
    pub fn new(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        Record {
            link: None,
            key: key.into(),
            value: Some(value.into()),
        }
    }

    pub fn tombstone(key: impl Into<Vec<u8>>) -> Self {
        Record {
            link: None,
            key: key.into(),
            value: None,
        }
    }

    pub fn with_link(mut self, link: Option<u64>) -> Self {
        self.link = link;
        self
    }

    pub fn is_tombstone(&self) -> bool {
        self.value.is_none()
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            link: self.link,
            key_len: self.key.len() as u32,
            val_len: self
                .value
                .as_ref()
                .map_or(TOMBSTONE_LEN, |v| v.len() as i32),
        }
    }

    pub fn encoded_len(&self) -> usize {
        encoded_len(&self.key, self.value.as_deref())
    }
}

pub(crate) fn encoded_len(key: &[u8], value: Option<&[u8]>) -> usize {
    RECORD_HEADER_LEN + key.len() + value.map_or(0, <[u8]>::len)
}

pub(crate) fn check_sizes(key: &[u8], value: Option<&[u8]>) -> Result<()> {
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    if key.len() > MAX_KEY_LEN {
        return Err(Error::KeyTooLarge(key.len()));
    }
    if let Some(v) = value {
        if v.len() > MAX_VALUE_LEN {
            return Err(Error::ValueTooLarge(v.len()));
        }
    }
    Ok(())
}

/// Appends the encoding of one record to `out` and returns its length.
pub(crate) fn encode_parts(
    link: Option<u64>,
    key: &[u8],
    value: Option<&[u8]>,
    out: &mut Vec<u8>,
) -> Result<usize> {
    check_sizes(key, value)?;
    let start = out.len();
    let val_len = value.map_or(TOMBSTONE_LEN, |v| v.len() as i32);
    out.extend_from_slice(&RECORD_MAGIC);
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&link.unwrap_or(NIL_LINK).to_le_bytes());
    out.extend_from_slice(&(key.len() as u32).to_le_bytes());
    out.extend_from_slice(&val_len.to_le_bytes());
    out.extend_from_slice(key);
    if let Some(v) = value {
        out.extend_from_slice(v);
    }
    let crc = crc32c::crc32c(&out[start + 8..]);
    out[start + 4..start + 8].copy_from_slice(&crc.to_le_bytes());
    Ok(out.len() - start)
}

pub fn encode_record(rec: &Record) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(rec.encoded_len());
    encode_parts(rec.link, &rec.key, rec.value.as_deref(), &mut out)?;
    Ok(out)
}

/// Parses the fixed header. `Ok(None)` means fewer than 24 bytes were given.
pub(crate) fn decode_meta(bytes: &[u8], offset: u64) -> Result<Option<RecordMeta>> {
    if bytes.len() < RECORD_HEADER_LEN {
        return Ok(None);
    }
    if bytes[0..4] != RECORD_MAGIC {
        return Err(corrupt(offset, "bad magic"));
    }
    let link = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let key_len = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let val_len = i32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if key_len == 0 {
        return Err(corrupt(offset, "zero key length"));
    }
    if val_len < TOMBSTONE_LEN {
        return Err(corrupt(offset, "negative value length"));
    }
    Ok(Some(RecordMeta {
        link: (link != NIL_LINK).then_some(link),
        key_len,
        val_len,
    }))
}

/// Decodes the record at the start of `bytes`, returning it and its length.
pub(crate) fn decode_at(bytes: &[u8], offset: u64) -> Result<(Record, usize)> {
    let meta = decode_meta(bytes, offset)?.ok_or_else(|| corrupt(offset, "truncated header"))?;
    let len = meta.encoded_len();
    if bytes.len() < len {
        return Err(corrupt(offset, "truncated body"));
    }
    let stored = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if crc32c::crc32c(&bytes[8..len]) != stored {
        return Err(corrupt(offset, "checksum mismatch"));
    }
    let key_end = RECORD_HEADER_LEN + meta.key_len as usize;
    let key = bytes[RECORD_HEADER_LEN..key_end].to_vec();
    let value = (!meta.is_tombstone()).then(|| bytes[key_end..len].to_vec());
    Ok((
        Record {
            link: meta.link,
            key,
            value,
        },
        len,
    ))
}

/// Decodes one record; trailing bytes after it are ignored.
pub fn decode_record(bytes: &[u8]) -> Result<Record> {
    decode_at(bytes, 0).map(|(r, _)| r)
}

fn corrupt(offset: u64, reason: &'static str) -> Error {
    Error::CorruptRecord { offset, reason }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrandHeader {
    pub slot: u32,
    pub generation: u64,
    pub capacity: u64,
}

impl StrandHeader {
    pub fn is_spare(&self) -> bool {
        self.slot == SPARE_SLOT
    }

    pub fn encode(&self) -> [u8; STRAND_HEADER_LEN as usize] {
        let mut out = [0u8; STRAND_HEADER_LEN as usize];
        out[0..4].copy_from_slice(&STRAND_MAGIC);
        out[4..8].copy_from_slice(&STRAND_FORMAT_VERSION.to_le_bytes());
        out[8..12].copy_from_slice(&self.slot.to_le_bytes());
        out[12..20].copy_from_slice(&self.generation.to_le_bytes());
        out[20..28].copy_from_slice(&self.capacity.to_le_bytes());
        out
    }

    /// `Ok(None)` for an erased (all-zero magic) header.
    pub fn decode(bytes: &[u8]) -> Result<Option<StrandHeader>> {
        if bytes.len() < STRAND_HEADER_LEN as usize {
            return Err(Error::CorruptStore("short strand header".into()));
        }
        if bytes[0..4] == [0; 4] {
            return Ok(None);
        }
        if bytes[0..4] != STRAND_MAGIC {
            return Err(Error::CorruptStore("bad strand header magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != STRAND_FORMAT_VERSION {
            return Err(Error::CorruptStore(format!(
                "unsupported strand format version {version}"
            )));
        }
        Ok(Some(StrandHeader {
            slot: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            generation: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
            capacity: u64::from_le_bytes(bytes[20..28].try_into().unwrap()),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_byte_key_empty_value_layout() {
        let bytes = encode_record(&Record::new("a", "")).unwrap();
        assert_eq!(bytes.len(), 25);
        assert_eq!(&bytes[0..4], b"FMR1");
        assert_eq!(&bytes[8..16], &[0xFF; 8]);
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0i32.to_le_bytes());
        assert_eq!(bytes[24], b'a');
    }

    #[test]
    fn tombstone_has_no_value_bytes() {
        let bytes = encode_record(&Record::tombstone("k")).unwrap();
        assert_eq!(bytes.len(), 25);
        assert_eq!(&bytes[20..24], &(-1i32).to_le_bytes());
        let back = decode_record(&bytes).unwrap();
        assert!(back.is_tombstone());
        assert_eq!(back.meta().val_len, -1);
    }

    #[test]
    fn erased_bytes_are_corrupt() {
        assert!(matches!(
            decode_record(&[0u8; 64]),
            Err(Error::CorruptRecord {
                reason: "bad magic",
                ..
            })
        ));
    }

    #[test]
    fn empty_key_rejected() {
        assert!(matches!(
            encode_record(&Record::new("", "v")),
            Err(Error::EmptyKey)
        ));
    }

    #[test]
    fn flipped_value_byte_fails_checksum() {
        let mut bytes = encode_record(&Record::new("key", "value")).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(
            decode_record(&bytes),
            Err(Error::CorruptRecord {
                reason: "checksum mismatch",
                ..
            })
        ));
    }

    #[test]
    fn header_round_trip_and_erased() {
        let h = StrandHeader {
            slot: 7,
            generation: 3,
            capacity: 1 << 20,
        };
        assert_eq!(StrandHeader::decode(&h.encode()).unwrap(), Some(h));
        assert_eq!(StrandHeader::decode(&[0u8; 64]).unwrap(), None);
    }

    fn record() -> impl Strategy<Value = Record> {
        (
            prop::option::of(0u64..u64::MAX),
            prop::collection::vec(any::<u8>(), 1..64),
            prop::option::of(prop::collection::vec(any::<u8>(), 0..256)),
        )
            .prop_map(|(link, key, value)| Record { link, key, value })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn decode_inverts_encode(rec in record()) {
            let bytes = encode_record(&rec).unwrap();
            prop_assert_eq!(bytes.len(), rec.encoded_len());
            prop_assert_eq!(decode_record(&bytes).unwrap(), rec);
        }

        #[test]
        fn any_single_bit_flip_is_detected(rec in record(), bit in any::<prop::sample::Index>()) {
            let mut bytes = encode_record(&rec).unwrap();
            let bit = bit.index(bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(decode_record(&bytes).is_err());
        }
    }
}
