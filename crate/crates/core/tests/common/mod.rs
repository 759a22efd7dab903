#![allow(dead_code)]

pub mod lincheck;

use std::collections::BTreeMap;

use flashmap::{StorageSpec, Store, StoreConfig};

pub type Model = BTreeMap<Vec<u8>, Vec<u8>>;

/// Bitwise CRC-32C (Castagnoli, reflected polynomial 0x82F63B78).
pub fn crc32c_bitwise(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0x82F6_3B78 } else { crc >> 1 };
        }
    }
    !crc
}

pub fn contents(store: &Store) -> Model {
    store.pairs().unwrap().into_iter().collect()
}

pub fn mem_store(config: StoreConfig) -> Store {
    Store::open(StorageSpec::InMemory, "test", config).unwrap()
}

pub fn unhex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

/// Walks forward from the smallest key and backward from the largest.
pub fn walks(store: &Store) -> (Vec<(Vec<u8>, Vec<u8>)>, Vec<(Vec<u8>, Vec<u8>)>) {
    let mut fwd = Vec::new();
    let mut cur = store.prev(None).ok();
    while let Some((k, v)) = cur {
        cur = store.next(Some(&k)).ok();
        fwd.push((k, v));
    }
    let mut back = Vec::new();
    let mut cur = store.next(None).ok();
    while let Some((k, v)) = cur {
        cur = store.prev(Some(&k)).ok();
        back.push((k, v));
    }
    (fwd, back)
}
