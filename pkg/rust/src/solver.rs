//! Lazy-intruder reduction, a port of the Python solver with the same
//! branch order, canonical form and de-duplication.

use crate::term::*;
use rustc_hash::{FxHashMap, FxHashSet};
use std::sync::Arc;

#[derive(Clone)]
pub struct Store {
    pub kn: Arc<Vec<T>>,
    pub entries: Vec<(u32, T)>,
    pub acc: Arc<Sub>,
}

impl Store {
    pub fn nbytes(&self) -> usize {
        64 + 8 * (self.kn.len() + 2 * self.entries.len() + 2 * self.acc.len())
    }
}

pub struct Fns(pub FxHashSet<Arc<str>>);

impl Fns {
    fn has(&self, f: &Arc<str>) -> bool {
        self.0.contains(f)
    }
}

type Entry = (u32, T, Arc<Vec<T>>);

/// Non-variable positions reachable by projection and decryption, preorder.
fn positions(t: &T, out: &mut Vec<(T, Vec<T>)>) {
    let mut stack: Vec<(T, Vec<T>)> = vec![(t.clone(), Vec::new())];
    while let Some((u, keys)) = stack.pop() {
        if u.tag == T_VAR {
            continue;
        }
        match &u.k {
            K::Bin(a, b) => {
                let (a, b) = (a.clone(), b.clone());
                let tag = u.tag;
                out.push((u, keys.clone()));
                if tag == T_PAIR {
                    stack.push((b, keys.clone()));
                    stack.push((a, keys));
                } else if tag == T_SYM {
                    let mut k2 = keys;
                    k2.push(a);
                    stack.push((b, k2));
                } else {
                    let mut k2 = keys;
                    k2.push(inv(a));
                    stack.push((b, k2));
                }
            }
            _ => out.push((u, keys)),
        }
    }
}

fn parts(goal: &T, fns: &Fns) -> Option<Vec<T>> {
    match &goal.k {
        K::Bin(a, b) => Some(vec![a.clone(), b.clone()]),
        K::App(f, args) if fns.has(f) => Some(args.clone()),
        K::Atom(_, k) if *k == K_AGENT => Some(Vec::new()),
        _ => None,
    }
}

pub fn analyze(kn: &[T], fns: &Fns) -> FxHashSet<T> {
    let mut have: FxHashSet<T> = FxHashSet::default();
    let mut pending: Vec<(T, T)> = Vec::new();
    let mut work: Vec<T> = kn.to_vec();
    loop {
        while let Some(t) = work.pop() {
            if t.ground {
                if have.contains(&t) {
                    continue;
                }
                have.insert(t.clone());
            }
            if let K::Bin(a, b) = &t.k {
                match t.tag {
                    T_PAIR => {
                        work.push(a.clone());
                        work.push(b.clone());
                    }
                    T_SYM => pending.push((a.clone(), b.clone())),
                    _ => pending.push((inv(a.clone()), b.clone())),
                }
            }
        }
        let mut progress = false;
        let mut rest = Vec::new();
        for (key, body) in pending.drain(..) {
            if key.ground && synth(&key, &have, fns) {
                work.push(body);
                progress = true;
            } else {
                rest.push((key, body));
            }
        }
        pending = rest;
        if !progress {
            return have;
        }
    }
}

pub fn synth(t: &T, have: &FxHashSet<T>, fns: &Fns) -> bool {
    if have.contains(t) {
        return true;
    }
    match &t.k {
        K::Atom(_, k) => *k == K_AGENT,
        K::Bin(a, b) => synth(a, have, fns) && synth(b, have, fns),
        K::App(f, args) => fns.has(f) && args.iter().all(|a| synth(a, have, fns)),
        _ => false,
    }
}

/// Memo of ground analysis per knowledge prefix (keyed by its content).
#[derive(Default)]
pub struct Analysis {
    memo: FxHashMap<(usize, u64), Vec<(Vec<T>, FxHashSet<T>)>>,
}

impl Analysis {
    pub fn get(&mut self, kn: &[T], fns: &Fns) -> &FxHashSet<T> {
        if self.memo.len() > 50_000 {
            self.memo.clear();
        }
        let mut h: u64 = kn.len() as u64;
        for t in kn {
            h = h.rotate_left(5) ^ t.hash;
        }
        let bucket = self.memo.entry((kn.len(), h)).or_default();
        let pos = bucket.iter().position(|(k, _)| k.as_slice() == kn);
        let i = match pos {
            Some(i) => i,
            None => {
                bucket.push((kn.to_vec(), analyze(kn, fns)));
                bucket.len() - 1
            }
        };
        &bucket[i].1
    }
}

pub fn derivable_ground(t: &T, kn: &[T], fns: &Fns, an: &mut Analysis) -> bool {
    let have = an.get(kn, fns);
    synth(t, have, fns)
}

fn canonical(cons: &[Entry]) -> Vec<(u32, T)> {
    let mut best: Vec<(u32, T)> = Vec::new();
    let mut index: FxHashMap<T, usize> = FxHashMap::default();
    for (lv, g, _) in cons {
        match index.get(g) {
            Some(&i) => {
                if *lv < best[i].0 {
                    best[i].0 = *lv;
                }
            }
            None => {
                index.insert(g.clone(), best.len());
                best.push((*lv, g.clone()));
            }
        }
    }
    best.sort_by(|x, y| x.0.cmp(&y.0).then_with(|| var_cmp(&x.1, &y.1)));
    best
}

fn sub_entries(theta: &Sub, cons: &[Entry]) -> Vec<Entry> {
    let mask = sub_mask(theta);
    cons.iter()
        .map(|(lv, g, anc)| {
            let anc2 = if anc.iter().all(|a| a.vmask & mask == 0) {
                anc.clone()
            } else {
                Arc::new(anc.iter().map(|a| apply_masked(theta, mask, a)).collect())
            };
            (*lv, apply_masked(theta, mask, g), anc2)
        })
        .collect()
}

type Branch = (Option<Sub>, Vec<Entry>);

fn branches(kn: &[T], cons: &[Entry], idx: usize, fns: &Fns, shortcut: bool, an: &mut Analysis) -> Vec<Branch> {
    let (level, goal, anc) = &cons[idx];
    let before = &cons[..idx];
    let after = &cons[idx + 1..];
    let joined = |mid: Vec<Entry>| -> Vec<Entry> {
        let mut v = Vec::with_capacity(before.len() + mid.len() + after.len());
        v.extend_from_slice(before);
        v.extend(mid);
        v.extend_from_slice(after);
        v
    };
    let knowledge = &kn[..*level as usize];
    if shortcut && goal.ground && derivable_ground(goal, knowledge, fns, an) {
        return vec![(None, joined(Vec::new()))];
    }
    if anc.contains(goal) {
        // needed again on the way to a key for itself
        return Vec::new();
    }
    let mut out: Vec<Branch> = Vec::new();
    let mut chain: Vec<T> = anc.as_ref().clone();
    chain.push(goal.clone());
    let chain = Arc::new(chain);
    let gtag = goal.tag;
    let gfn = goal.fn_name().cloned();
    let mut pos = Vec::new();
    for s in knowledge.iter().rev() {
        pos.clear();
        positions(s, &mut pos);
        for (u, keys) in pos.iter() {
            if u.tag != gtag {
                match &u.k {
                    K::Inv(k) if k.tag == T_VAR => {}
                    _ => continue,
                }
            } else if let Some(f) = &gfn {
                if u.fn_name() != Some(f) {
                    continue;
                }
            }
            let theta: Sub;
            if goal.ground && u.ground {
                if u != goal {
                    continue;
                }
                theta = Sub::default();
            } else {
                if !may_unify(goal, u) {
                    continue;
                }
                match unify(goal, u) {
                    None => continue,
                    Some(th) => theta = th,
                }
            }
            let keys_t: Vec<T>;
            let blocked;
            if !theta.is_empty() {
                keys_t = keys.iter().map(|k| apply(&theta, k)).collect();
                let chain_t: Vec<T> = chain.iter().map(|a| apply(&theta, a)).collect();
                blocked = keys_t.iter().any(|k| chain_t.contains(k));
            } else {
                keys_t = keys.clone();
                blocked = keys_t.iter().any(|k| chain.contains(k));
            }
            if blocked {
                continue;
            }
            if theta.is_empty() && keys_t.is_empty() {
                return vec![(None, joined(Vec::new()))];
            }
            let mid: Vec<Entry> = keys_t.into_iter().map(|k| (*level, k, chain.clone())).collect();
            let th = if theta.is_empty() { None } else { Some(theta) };
            out.push((th, joined(mid)));
        }
    }
    if let Some(ps) = parts(goal, fns) {
        if ps.is_empty() {
            return vec![(None, joined(Vec::new()))];
        }
        let mid: Vec<Entry> = ps.into_iter().map(|p| (*level, p, anc.clone())).collect();
        out.push((None, joined(mid)));
    }
    out
}

fn store_key(entries: &[(u32, T)], kn: &[T], sub: &Sub) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for (lv, g) in entries {
        h = (h.rotate_left(7) ^ (*lv as u64)).wrapping_mul(0x100_0000_01b3) ^ g.hash;
    }
    for t in kn {
        h = h.rotate_left(5) ^ t.hash;
    }
    // order-independent over the substitution
    let mut x: u64 = 0;
    for (a, b) in sub.iter() {
        x = x.wrapping_add(a.hash.wrapping_mul(31) ^ b.hash);
    }
    h ^ x
}

/// Simple stores the input reduces to, in DFS order; at most ``limit``.
pub fn solve(store: &Store, fns: &Fns, shortcut: bool, limit: usize, an: &mut Analysis) -> Vec<Store> {
    let empty: Arc<Vec<T>> = Arc::new(Vec::new());
    let start: Vec<Entry> = store.entries.iter().map(|(lv, g)| (*lv, g.clone(), empty.clone())).collect();
    let mut stack: Vec<(Arc<Vec<T>>, Vec<Entry>, Arc<Sub>)> = vec![(store.kn.clone(), start, store.acc.clone())];
    let mut seen: FxHashMap<u64, Vec<usize>> = FxHashMap::default();
    let mut results: Vec<Store> = Vec::new();
    while let Some((kn, cons, sub)) = stack.pop() {
        let idx = cons.iter().position(|c| c.1.tag != T_VAR);
        let idx = match idx {
            None => {
                let entries = canonical(&cons);
                let key = store_key(&entries, &kn, &sub);
                let bucket = seen.entry(key).or_default();
                if bucket.iter().any(|&i| {
                    let r = &results[i];
                    r.entries == entries && r.kn == kn && r.acc == sub
                }) {
                    continue;
                }
                bucket.push(results.len());
                results.push(Store { kn, entries, acc: sub });
                if results.len() >= limit {
                    return results;
                }
                continue;
            }
            Some(i) => i,
        };
        let bs = branches(&kn, &cons, idx, fns, shortcut, an);
        for (theta, new_cons) in bs.into_iter().rev() {
            match theta {
                Some(theta) => {
                    let nsub = match compose(&theta, &sub) {
                        None => continue,
                        Some(s) => s,
                    };
                    let mask = sub_mask(&theta);
                    let kn2 = if kn.iter().all(|t| t.vmask & mask == 0) {
                        kn.clone()
                    } else {
                        Arc::new(kn.iter().map(|t| apply_masked(&theta, mask, t)).collect())
                    };
                    stack.push((kn2, sub_entries(&theta, &new_cons), Arc::new(nsub)));
                }
                None => stack.push((kn.clone(), new_cons, sub.clone())),
            }
        }
    }
    results
}

pub fn add_constraint(store: &Store, goal: &T) -> Store {
    let sub = &store.acc;
    let goal = apply(sub, goal);
    let mut entries = store.entries.clone();
    entries.push((store.kn.len() as u32, goal));
    Store { kn: store.kn.clone(), entries, acc: store.acc.clone() }
}

/// Substitute ``theta`` into a store (None if the composition fails).
pub fn extend(store: &Store, theta: &Sub) -> Option<Store> {
    if theta.is_empty() {
        return Some(store.clone());
    }
    let acc = compose(theta, &store.acc)?;
    Some(Store {
        kn: Arc::new(store.kn.iter().map(|t| apply(theta, t)).collect()),
        entries: store.entries.iter().map(|(lv, g)| (*lv, apply(theta, g))).collect(),
        acc: Arc::new(acc),
    })
}
