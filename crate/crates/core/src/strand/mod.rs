//! Append-only strands.
//!
//! A strand is a log of encoded records laid end to end over one [`Region`],
//! after a 64-byte header. Records never move once written; a strand is only
//! emptied as a whole by [`Strand::reset`], which trims the region and bumps
//! the generation.
//!
//! Appends go through a write buffer that drains to the region in large
//! sequential writes. Reads check a per-strand record cache, then the write
//! buffer, then the region.

mod cache;
pub mod codec;

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::storage::Region;
use cache::ReadCache;
pub use codec::{
    decode_record, encode_record, Record, RecordMeta, StrandHeader, RECORD_HEADER_LEN,
    SPARE_SLOT, STRAND_HEADER_LEN,
};
use codec::{decode_at, decode_meta, encode_parts, encoded_len};

// Bytes fetched speculatively for a point read; most records fit.
const POINT_READ_PREFETCH: u64 = 512;
const SCAN_CHUNK: usize = 1 << 20;

/// Location of a record: the slot it is mounted at and its byte offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address {
    pub slot: u32,
    pub offset: u64,
}

impl Address {
    pub fn new(slot: u32, offset: u64) -> Self {
        Address { slot, offset }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrandOptions {
    pub write_buffer_bytes: usize,
    pub read_cache_bytes: usize,
}

impl Default for StrandOptions {
    fn default() -> Self {
        StrandOptions {
            write_buffer_bytes: 32 << 20,
            read_cache_bytes: 1 << 30,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StrandStats {
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub buffer_drains: u64,
    pub trims: u64,
}

struct WriteState {
    tail: u64,
    // Bytes [buf_start, tail) not yet written to the region.
    buf: Vec<u8>,
    buf_start: u64,
}

pub struct Strand {
    region: Region,
    slot: AtomicU32,
    generation: AtomicU64,
    tail: AtomicU64,
    durable: AtomicU64,
    writer: Mutex<WriteState>,
    cache: ReadCache,
    buffer_limit: usize,
    drains: AtomicU64,
}

impl std::fmt::Debug for Strand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Strand")
            .field("region", &self.region.id())
            .field("slot", &self.slot())
            .field("generation", &self.generation())
            .field("tail", &self.tail())
            .finish()
    }
}

impl Strand {
    fn with_state(region: Region, header: StrandHeader, opts: StrandOptions) -> Strand {
        Strand {
            region,
            slot: AtomicU32::new(header.slot),
            generation: AtomicU64::new(header.generation),
            tail: AtomicU64::new(STRAND_HEADER_LEN),
            durable: AtomicU64::new(STRAND_HEADER_LEN),
            writer: Mutex::new(WriteState {
                tail: STRAND_HEADER_LEN,
                buf: Vec::new(),
                buf_start: STRAND_HEADER_LEN,
            }),
            cache: ReadCache::new(opts.read_cache_bytes),
            buffer_limit: opts.write_buffer_bytes,
            drains: AtomicU64::new(0),
        }
    }

    /// Formats `region` as an empty strand and writes its header.
    pub fn create(region: Region, slot: u32, generation: u64, opts: StrandOptions) -> Result<Strand> {
        let header = StrandHeader {
            slot,
            generation,
            capacity: region.capacity(),
        };
        let strand = Strand::with_state(region, header, opts);
        strand.region.write_seq(0, &header.encode())?;
        strand.region.flush()?;
        Ok(strand)
    }

    /// Reads the header of an existing region; `None` if the region is erased.
    pub fn read_header(region: &Region) -> Result<Option<StrandHeader>> {
        let mut buf = [0u8; STRAND_HEADER_LEN as usize];
        region.read_into(0, &mut buf)?;
        let header = StrandHeader::decode(&buf)?;
        if let Some(h) = header {
            if h.capacity != region.capacity() {
                return Err(Error::CorruptStore(format!(
                    "strand header of region {} records capacity {}, region has {}",
                    region.id(),
                    h.capacity,
                    region.capacity()
                )));
            }
        }
        Ok(header)
    }

    /// Wraps a region whose header has already been validated. The tail is
    /// unknown until [`Strand::recover`] or [`Strand::adopt_tail`] runs.
    pub fn open(region: Region, header: StrandHeader, opts: StrandOptions) -> Strand {
        Strand::with_state(region, header, opts)
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn slot(&self) -> u32 {
        self.slot.load(Ordering::Acquire)
    }

    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::Acquire)
    }

    pub fn tail(&self) -> u64 {
        self.tail.load(Ordering::Acquire)
    }

    pub fn capacity(&self) -> u64 {
        self.region.capacity()
    }

    pub fn header(&self) -> StrandHeader {
        StrandHeader {
            slot: self.slot(),
            generation: self.generation(),
            capacity: self.capacity(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tail() == STRAND_HEADER_LEN
    }

    /// Bytes of records currently held (tail minus header).
    pub fn used_bytes(&self) -> u64 {
        self.tail() - STRAND_HEADER_LEN
    }

    pub fn utilization(&self) -> f64 {
        self.tail() as f64 / self.capacity() as f64
    }

    pub fn stats(&self) -> StrandStats {
        StrandStats {
            cache_hits: self.cache.hits(),
            cache_misses: self.cache.misses(),
            buffer_drains: self.drains.load(Ordering::Relaxed),
            trims: self.region.trim_count(),
        }
    }

    pub fn cached_bytes(&self) -> usize {
        self.cache.resident_bytes()
    }

    fn set_tail(&self, w: &mut WriteState, tail: u64) {
        w.tail = tail;
        w.buf.clear();
        w.buf_start = tail;
        self.durable.store(tail, Ordering::Release);
        self.tail.store(tail, Ordering::Release);
    }

    /// Scans from the first record until the log stops decoding, feeding each
    /// record to `visit`, and makes the end of that prefix the tail.
    pub fn recover(&self, mut visit: impl FnMut(Address, Record)) -> Result<u64> {
        let mut scan = Scan::new(self, STRAND_HEADER_LEN, self.capacity());
        for (addr, rec) in scan.by_ref() {
            visit(addr, rec);
        }
        let tail = scan.position();
        if scan.hit_corruption() {
            log::debug!(
                "strand in region {} ends at {} (first undecodable bytes)",
                self.region.id(),
                tail
            );
        }
        self.set_tail(&mut self.writer.lock(), tail);
        Ok(tail)
    }

    /// Installs a tail known from a saved index. Returns false, leaving the
    /// strand untouched, if a valid record sits at `tail` (the saved state is
    /// stale).
    pub fn adopt_tail(&self, tail: u64) -> Result<bool> {
        if tail < STRAND_HEADER_LEN || tail > self.capacity() {
            return Ok(false);
        }
        let mut probe = Scan::new(self, tail, self.capacity());
        if probe.next().is_some() {
            return Ok(false);
        }
        self.set_tail(&mut self.writer.lock(), tail);
        Ok(true)
    }

    fn drain(&self, w: &mut WriteState) -> Result<()> {
        if w.buf.is_empty() {
            return Ok(());
        }
        self.region.write_seq(w.buf_start, &w.buf)?;
        w.buf_start += w.buf.len() as u64;
        w.buf.clear();
        self.durable.store(w.buf_start, Ordering::Release);
        self.drains.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn append(&self, rec: &Record) -> Result<Address> {
        self.append_parts(rec.link, &rec.key, rec.value.as_deref())
    }

    /// Appends one record; `value == None` writes a tombstone.
    pub fn append_parts(&self, link: Option<u64>, key: &[u8], value: Option<&[u8]>) -> Result<Address> {
        codec::check_sizes(key, value)?;
        let len = encoded_len(key, value);
        let mut w = self.writer.lock();
        if w.tail + len as u64 > self.capacity() {
            return Err(Error::StrandFull { slot: self.slot() });
        }
        let offset = w.tail;
        if w.buf.len() + len > self.buffer_limit {
            self.drain(&mut w)?;
        }
        if len > self.buffer_limit {
            let mut direct = Vec::with_capacity(len);
            encode_parts(link, key, value, &mut direct)?;
            self.region.write_seq(offset, &direct)?;
            w.buf_start = offset + len as u64;
            self.durable.store(w.buf_start, Ordering::Release);
        } else {
            encode_parts(link, key, value, &mut w.buf)?;
        }
        w.tail = offset + len as u64;
        self.tail.store(w.tail, Ordering::Release);
        Ok(Address::new(self.slot(), offset))
    }

    /// Reads the record at `addr`, through the cache and write buffer.
    pub fn read(&self, addr: Address) -> Result<Arc<Record>> {
        let slot = self.slot();
        if addr.slot != slot || addr.offset < STRAND_HEADER_LEN || addr.offset >= self.tail() {
            return Err(Error::BadAddress {
                slot: addr.slot,
                offset: addr.offset,
            });
        }
        let generation = self.generation();
        if let Some(rec) = self.cache.get(generation, addr.offset) {
            return Ok(rec);
        }
        let rec = Arc::new(self.read_uncached(addr.offset)?);
        self.cache.insert(generation, addr.offset, rec.clone());
        Ok(rec)
    }

    fn read_uncached(&self, offset: u64) -> Result<Record> {
        if offset >= self.durable.load(Ordering::Acquire) {
            let w = self.writer.lock();
            if offset >= w.buf_start {
                let rel = (offset - w.buf_start) as usize;
                if rel >= w.buf.len() {
                    return Err(Error::BadAddress {
                        slot: self.slot(),
                        offset,
                    });
                }
                return decode_at(&w.buf[rel..], offset).map(|(r, _)| r);
            }
        }
        let avail = self.durable.load(Ordering::Acquire) - offset;
        let mut buf = vec![0u8; avail.min(POINT_READ_PREFETCH) as usize];
        self.region.read_into(offset, &mut buf)?;
        let meta = decode_meta(&buf, offset)?.ok_or(Error::CorruptRecord {
            offset,
            reason: "truncated header",
        })?;
        let len = meta.encoded_len();
        if len as u64 > avail {
            return Err(Error::CorruptRecord {
                offset,
                reason: "record runs past the tail",
            });
        }
        if len > buf.len() {
            let have = buf.len();
            buf.resize(len, 0);
            self.region.read_into(offset + have as u64, &mut buf[have..])?;
        }
        decode_at(&buf[..len], offset).map(|(r, _)| r)
    }

    /// Every record from the start, in append order.
    pub fn scan(&self) -> Result<Scan<'_>> {
        self.scan_from(STRAND_HEADER_LEN)
    }

    /// Records from offset `from` (a record boundary) up to the current tail.
    pub fn scan_from(&self, from: u64) -> Result<Scan<'_>> {
        let end = {
            let mut w = self.writer.lock();
            self.drain(&mut w)?;
            w.tail
        };
        Ok(Scan::new(self, from.max(STRAND_HEADER_LEN), end))
    }

    /// Drains the write buffer and syncs the region.
    pub fn flush(&self) -> Result<()> {
        let mut w = self.writer.lock();
        self.drain(&mut w)?;
        self.region.flush()
    }

    /// Empties the strand: trims the whole region, bumps the generation and
    /// rewrites the header as a spare. Needs exclusive use of the strand.
    pub fn reset(&self) -> Result<()> {
        let mut w = self.writer.lock();
        self.region.trim_range(0, self.capacity())?;
        self.set_tail(&mut w, STRAND_HEADER_LEN);
        self.cache.clear();
        self.slot.store(SPARE_SLOT, Ordering::Release);
        self.generation.fetch_add(1, Ordering::AcqRel);
        self.region.write_seq(0, &self.header().encode())?;
        self.region.flush()
    }

    /// Sets the slot used in addresses handed out by later appends.
    pub(crate) fn assign_slot(&self, slot: u32) {
        self.slot.store(slot, Ordering::Release);
    }

    /// Makes all appended data durable, then records `slot` and `generation`
    /// in the on-disk header.
    pub(crate) fn mount(&self, slot: u32, generation: u64) -> Result<()> {
        let mut w = self.writer.lock();
        self.drain(&mut w)?;
        self.region.flush()?;
        self.slot.store(slot, Ordering::Release);
        self.generation.store(generation, Ordering::Release);
        self.region.write_seq(0, &self.header().encode())?;
        self.region.flush()
    }
}

/// Sequential reader over a byte range of a strand's region.
///
/// Stops at the end of the range or at the first record that fails to decode;
/// [`Scan::position`] then gives the offset just past the last good record.
pub struct Scan<'a> {
    strand: &'a Strand,
    pos: u64,
    end: u64,
    window: Vec<u8>,
    window_start: u64,
    corrupted: bool,
    done: bool,
}

impl<'a> Scan<'a> {
    fn new(strand: &'a Strand, from: u64, end: u64) -> Self {
        Scan {
            strand,
            pos: from,
            end,
            window: Vec::new(),
            window_start: from,
            corrupted: false,
            done: from >= end,
        }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn hit_corruption(&self) -> bool {
        self.corrupted
    }

    // Makes [pos, pos + need) available in the window; false past `end`.
    fn ensure(&mut self, need: usize) -> Result<bool> {
        if self.pos + need as u64 > self.end {
            return Ok(false);
        }
        let window_end = self.window_start + self.window.len() as u64;
        if self.pos >= self.window_start && self.pos + need as u64 <= window_end {
            return Ok(true);
        }
        let len = ((self.end - self.pos) as usize).min(need.max(SCAN_CHUNK));
        self.window.resize(len, 0);
        self.window_start = self.pos;
        self.strand.region.read_into(self.pos, &mut self.window)?;
        Ok(true)
    }

    fn step(&mut self) -> Result<Option<(Address, Record)>> {
        if !self.ensure(RECORD_HEADER_LEN)? {
            if self.pos < self.end {
                self.corrupted = true;
            }
            return Ok(None);
        }
        let rel = (self.pos - self.window_start) as usize;
        let meta = decode_meta(&self.window[rel..], self.pos)?.expect("header in window");
        let len = meta.encoded_len();
        if !self.ensure(len)? {
            return Err(Error::CorruptRecord {
                offset: self.pos,
                reason: "truncated body",
            });
        }
        let rel = (self.pos - self.window_start) as usize;
        let (rec, len) = decode_at(&self.window[rel..rel + len], self.pos)?;
        let addr = Address::new(self.strand.slot(), self.pos);
        self.pos += len as u64;
        Ok(Some((addr, rec)))
    }
}

impl Iterator for Scan<'_> {
    type Item = (Address, Record);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.step() {
            Ok(Some(item)) => Some(item),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                if !matches!(e, Error::CorruptRecord { .. }) {
                    log::warn!("scan of region {} aborted: {e}", self.strand.region.id());
                }
                self.corrupted = true;
                self.done = true;
                None
            }
        }
    }
}
