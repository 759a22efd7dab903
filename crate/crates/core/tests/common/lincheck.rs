//! Exhaustive linearizability checking for small concurrent histories.
//!
//! Each operation is stamped with a logical clock tick before invocation and
//! after return. A history is linearizable iff some total order respects
//! those real-time constraints and replays on a sequential ordered-map model
//! with identical results. The search is a depth-first walk over which
//! pending operation linearizes next, memoizing dead (done-set, model) states.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Barrier;

use flashmap::{Error, Store};
use rand::Rng;

use super::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Insert(u8, u8),
    Update(u8, u8),
    Replace(u8, u8),
    Delete(u8),
    Lookup(u8),
    Next(Option<u8>),
    Prev(Option<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ret {
    Done,
    Value(Vec<u8>),
    Pair(Vec<u8>, Vec<u8>),
    NotFound,
    Missing,
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct Event {
    pub thread: usize,
    pub op: Op,
    pub ret: Ret,
    pub invoked: u64,
    pub returned: u64,
}

pub fn key(k: u8) -> Vec<u8> {
    vec![b'k', b'a' + k]
}

pub fn value(v: u8) -> Vec<u8> {
    vec![b'v', v]
}

pub fn random_op(rng: &mut impl Rng, keys: u8) -> Op {
    let k = rng.gen_range(0..keys);
    let v = rng.gen_range(0..8);
    let probe = if rng.gen_bool(0.25) { None } else { Some(rng.gen_range(0..keys)) };
    match rng.gen_range(0..7) {
        0 => Op::Insert(k, v),
        1 => Op::Update(k, v),
        2 => Op::Replace(k, v),
        3 => Op::Delete(k),
        4 => Op::Lookup(k),
        5 => Op::Next(probe),
        _ => Op::Prev(probe),
    }
}

fn pair(p: Option<(&Vec<u8>, &Vec<u8>)>) -> Ret {
    match p {
        Some((k, v)) => Ret::Pair(k.clone(), v.clone()),
        None => Ret::Exhausted,
    }
}

pub fn apply_model(model: &mut Model, op: Op) -> Ret {
    match op {
        Op::Insert(k, v) | Op::Update(k, v) => {
            model.insert(key(k), value(v));
            Ret::Done
        }
        Op::Replace(k, v) => match model.get_mut(&key(k)) {
            Some(slot) => {
                *slot = value(v);
                Ret::Done
            }
            None => Ret::Missing,
        },
        Op::Delete(k) => match model.remove(&key(k)) {
            Some(_) => Ret::Done,
            None => Ret::Missing,
        },
        Op::Lookup(k) => match model.get(&key(k)) {
            Some(v) => Ret::Value(v.clone()),
            None => Ret::NotFound,
        },
        Op::Next(None) => pair(model.iter().next_back()),
        Op::Next(Some(k)) => pair(model.range(key(k)..).find(|(x, _)| **x != key(k))),
        Op::Prev(None) => pair(model.iter().next()),
        Op::Prev(Some(k)) => pair(model.range(..key(k)).next_back()),
    }
}

fn outcome<T>(r: flashmap::Result<T>, ok: impl FnOnce(T) -> Ret) -> Ret {
    match r {
        Ok(t) => ok(t),
        Err(Error::KeyNotFound) => Ret::NotFound,
        Err(Error::ReplaceMissing) | Err(Error::DeleteMissing) => Ret::Missing,
        Err(Error::Exhausted) => Ret::Exhausted,
        Err(e) => panic!("unexpected store error: {e}"),
    }
}

pub fn apply_store(store: &Store, op: Op) -> Ret {
    let done = |_| Ret::Done;
    let p = |(k, v)| Ret::Pair(k, v);
    match op {
        Op::Insert(k, v) => outcome(store.insert(&key(k), &value(v)), done),
        Op::Update(k, v) => outcome(store.update(&key(k), &value(v)), done),
        Op::Replace(k, v) => outcome(store.replace(&key(k), &value(v)), done),
        Op::Delete(k) => outcome(store.delete(&key(k)), done),
        Op::Lookup(k) => outcome(store.lookup(&key(k)), Ret::Value),
        Op::Next(k) => outcome(store.next(k.map(key).as_deref()), p),
        Op::Prev(k) => outcome(store.prev(k.map(key).as_deref()), p),
    }
}

/// Runs one program per thread against `store`, all released together.
pub fn run_history(store: &Store, programs: &[Vec<Op>]) -> Vec<Event> {
    let clock = AtomicU64::new(0);
    let barrier = Barrier::new(programs.len());
    let mut events: Vec<Event> = std::thread::scope(|s| {
        let handles: Vec<_> = programs
            .iter()
            .enumerate()
            .map(|(thread, prog)| {
                let (clock, barrier) = (&clock, &barrier);
                s.spawn(move || {
                    barrier.wait();
                    prog.iter()
                        .map(|&op| {
                            let invoked = clock.fetch_add(1, Ordering::SeqCst);
                            let ret = apply_store(store, op);
                            let returned = clock.fetch_add(1, Ordering::SeqCst);
                            Event { thread, op, ret, invoked, returned }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    events.sort_by_key(|e| e.invoked);
    events
}

pub fn is_linearizable(history: &[Event], initial: &Model) -> bool {
    assert!(history.len() <= 64, "history too long for exhaustive search");
    let mut dead = HashSet::new();
    search(history, 0, initial, &mut dead)
}

fn search(h: &[Event], done: u64, model: &Model, dead: &mut HashSet<(u64, Model)>) -> bool {
    if done.count_ones() as usize == h.len() {
        return true;
    }
    if dead.contains(&(done, model.clone())) {
        return false;
    }
    let pending = |i: usize| done & (1 << i) == 0;
    // The earliest response among pending ops bounds which ops may go next.
    let horizon = (0..h.len()).filter(|&i| pending(i)).map(|i| h[i].returned).min().unwrap();
    for i in (0..h.len()).filter(|&i| pending(i)) {
        if h[i].invoked > horizon {
            continue;
        }
        let mut next = model.clone();
        if apply_model(&mut next, h[i].op) == h[i].ret && search(h, done | (1 << i), &next, dead) {
            return true;
        }
    }
    dead.insert((done, model.clone()));
    false
}
