use crate::error::{Error, Result};
use crate::storage::MIN_REGION_CAPACITY;
use crate::strand::StrandOptions;

/// How garbage collection is started once a strand crosses the trigger.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcMode {
    /// One low-priority worker thread per spare strand.
    Background,
    /// The operation that crosses the threshold collects before returning.
    Inline,
    /// Only explicit `gc` calls, plus the full-strand backstop.
    Manual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreConfig {
    /// Strands that receive writes (N).
    pub n_active: u32,
    /// Spare strands reserved as copy targets for garbage collection (M).
    pub m_spare: u32,
    /// Bytes per strand (S).
    pub strand_size: u64,
    pub hash_seed: u64,
    pub write_buffer_bytes: usize,
    pub read_cache_bytes: usize,
    /// Strand utilization (tail / S) at which collection is scheduled.
    pub gc_trigger_fraction: f64,
    pub gc_mode: GcMode,
    pub allow_nested_transactions: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            n_active: 32,
            m_spare: 1,
            strand_size: 64 << 20,
            hash_seed: 0x9e37_79b9_7f4a_7c15,
            write_buffer_bytes: 32 << 20,
            read_cache_bytes: 1 << 30,
            gc_trigger_fraction: 0.75,
            gc_mode: GcMode::Background,
            allow_nested_transactions: false,
        }
    }
}

impl StoreConfig {
    /// Splits `device_bytes` evenly over N + M strands, rounded down to 4 KiB.
    pub fn for_capacity(device_bytes: u64, n_active: u32, m_spare: u32) -> Self {
        let per = device_bytes / (n_active as u64 + m_spare as u64).max(1);
        StoreConfig {
            n_active,
            m_spare,
            strand_size: per & !(MIN_REGION_CAPACITY - 1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_active == 0 {
            return Err(Error::InvalidConfig("n_active must be at least 1".into()));
        }
        if self.m_spare == 0 {
            return Err(Error::InvalidConfig("m_spare must be at least 1".into()));
        }
        if self.n_active.checked_add(self.m_spare).is_none() {
            return Err(Error::InvalidConfig("too many strands".into()));
        }
        if self.strand_size < MIN_REGION_CAPACITY {
            return Err(Error::InvalidConfig(format!(
                "strand_size must be at least {MIN_REGION_CAPACITY}"
            )));
        }
        if !(self.gc_trigger_fraction > 0.0 && self.gc_trigger_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "gc_trigger_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }

    pub fn strand_options(&self) -> StrandOptions {
        StrandOptions {
            write_buffer_bytes: self.write_buffer_bytes,
            read_cache_bytes: self.read_cache_bytes,
        }
    }

    pub(crate) fn trigger_bytes(&self) -> u64 {
        (self.strand_size as f64 * self.gc_trigger_fraction) as u64
    }
}
