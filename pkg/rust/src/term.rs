//! Hash-cached immutable terms, substitutions, unification and matching.
//!
//! Mirrors the pure-Python term algebra: same equality, same unifier
//! orientation, same typing restriction.

use rustc_hash::{FxHashMap, FxHasher};
use std::cmp::Ordering;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

pub const T_ATOM: u8 = 0;
pub const T_VAR: u8 = 1;
pub const T_PAIR: u8 = 2;
pub const T_SYM: u8 = 3;
pub const T_ASYM: u8 = 4;
pub const T_INV: u8 = 5;
pub const T_APPLY: u8 = 6;

// kinds: atoms are 1 agent, 2 number, 3 constant; variables 0 (untyped), 1, 2
pub const K_NONE: u8 = 0;
pub const K_AGENT: u8 = 1;

pub type T = Arc<Node>;
pub type Sub = FxHashMap<T, T>;

pub enum K {
    Atom(Arc<str>, u8),
    Var(Arc<str>, u32, u8),
    Bin(T, T),
    Inv(T),
    App(Arc<str>, Vec<T>),
}

pub struct Node {
    pub k: K,
    pub tag: u8,
    pub hash: u64,
    pub ground: bool,
    pub depth: u32,
    pub vmask: u64, // one bit per variable (by hash) occurring in the term
}

impl Hash for Node {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.hash);
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        if std::ptr::eq(self, other) {
            return true;
        }
        if self.hash != other.hash || self.tag != other.tag {
            return false;
        }
        match (&self.k, &other.k) {
            (K::Atom(a, ka), K::Atom(b, kb)) => ka == kb && a == b,
            (K::Var(a, ia, _), K::Var(b, ib, _)) => ia == ib && a == b,
            (K::Bin(a1, b1), K::Bin(a2, b2)) => a1 == a2 && b1 == b2,
            (K::Inv(a), K::Inv(b)) => a == b,
            (K::App(f, xs), K::App(g, ys)) => f == g && xs == ys,
            _ => false,
        }
    }
}

impl Eq for Node {}

fn mix(parts: &[u64]) -> u64 {
    let mut h = FxHasher::default();
    for p in parts {
        h.write_u64(*p);
    }
    h.finish()
}

fn str_hash(s: &str) -> u64 {
    let mut h = FxHasher::default();
    s.hash(&mut h);
    h.finish()
}

pub fn atom(name: Arc<str>, kind: u8) -> T {
    let hash = mix(&[T_ATOM as u64, str_hash(&name), kind as u64]);
    Arc::new(Node { k: K::Atom(name, kind), tag: T_ATOM, hash, ground: true, depth: 0, vmask: 0 })
}

pub fn var(name: Arc<str>, index: u32, kind: u8) -> T {
    let hash = mix(&[T_VAR as u64, str_hash(&name), index as u64]);
    let vmask = 1u64 << (hash >> 58);
    Arc::new(Node { k: K::Var(name, index, kind), tag: T_VAR, hash, ground: false, depth: 0, vmask })
}

pub fn bin(tag: u8, a: T, b: T) -> T {
    let hash = mix(&[tag as u64, a.hash, b.hash]);
    let ground = a.ground && b.ground;
    let depth = 1 + a.depth.max(b.depth);
    let vmask = a.vmask | b.vmask;
    Arc::new(Node { k: K::Bin(a, b), tag, hash, ground, depth, vmask })
}

pub fn inv(k: T) -> T {
    if let K::Inv(inner) = &k.k {
        return inner.clone();
    }
    let hash = mix(&[T_INV as u64, k.hash]);
    let (ground, depth, vmask) = (k.ground, 1 + k.depth, k.vmask);
    Arc::new(Node { k: K::Inv(k), tag: T_INV, hash, ground, depth, vmask })
}

pub fn app(f: Arc<str>, args: Vec<T>) -> T {
    let mut parts = vec![T_APPLY as u64, str_hash(&f)];
    parts.extend(args.iter().map(|a| a.hash));
    let hash = mix(&parts);
    let ground = args.iter().all(|a| a.ground);
    let depth = 1 + args.iter().map(|a| a.depth).max().unwrap_or(0);
    let vmask = args.iter().fold(0, |m, a| m | a.vmask);
    Arc::new(Node { k: K::App(f, args), tag: T_APPLY, hash, ground, depth, vmask })
}

pub fn pair(a: T, b: T) -> T {
    bin(T_PAIR, a, b)
}

pub fn pair_all(items: &[T]) -> T {
    let mut t = items[items.len() - 1].clone();
    for x in items[..items.len() - 1].iter().rev() {
        t = pair(x.clone(), t);
    }
    t
}

impl Node {
    pub fn kind(&self) -> u8 {
        match &self.k {
            K::Atom(_, k) | K::Var(_, _, k) => *k,
            _ => K_NONE,
        }
    }

    pub fn fn_name(&self) -> Option<&Arc<str>> {
        match &self.k {
            K::App(f, _) => Some(f),
            _ => None,
        }
    }
}

/// Children in order (pairs and encryptions have two).
pub fn kids(t: &T) -> Vec<T> {
    match &t.k {
        K::Bin(a, b) => vec![a.clone(), b.clone()],
        K::Inv(k) => vec![k.clone()],
        K::App(_, args) => args.clone(),
        _ => vec![],
    }
}

pub fn rebuild(t: &T, new: Vec<T>) -> T {
    match &t.k {
        K::Bin(_, _) => {
            let mut it = new.into_iter();
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            bin(t.tag, a, b)
        }
        K::Inv(_) => inv(new.into_iter().next().unwrap()),
        K::App(f, _) => app(f.clone(), new),
        _ => t.clone(),
    }
}

pub fn collect_vars(t: &T, out: &mut Vec<T>) {
    if t.ground {
        return;
    }
    match &t.k {
        K::Var(..) => out.push(t.clone()),
        K::Bin(a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        K::Inv(k) => collect_vars(k, out),
        K::App(_, args) => {
            for a in args {
                collect_vars(a, out);
            }
        }
        _ => {}
    }
}

/// Order of variables used when canonicalising stores: by name, then index.
pub fn var_cmp(a: &T, b: &T) -> Ordering {
    match (&a.k, &b.k) {
        (K::Var(n1, i1, _), K::Var(n2, i2, _)) => n1.cmp(n2).then(i1.cmp(i2)),
        _ => a.hash.cmp(&b.hash),
    }
}

// substitutions ------------------------------------------------------------

pub fn sub_mask(sub: &Sub) -> u64 {
    sub.keys().fold(0, |m, v| m | v.vmask)
}

pub fn apply(sub: &Sub, t: &T) -> T {
    if t.ground || sub.is_empty() {
        return t.clone();
    }
    apply_masked(sub, sub_mask(sub), t)
}

/// ``apply`` with the domain mask of ``sub`` precomputed.
pub fn apply_masked(sub: &Sub, mask: u64, t: &T) -> T {
    if t.vmask & mask == 0 {
        return t.clone();
    }
    apply_rec(sub, mask, t)
}

fn apply_rec(sub: &Sub, mask: u64, t: &T) -> T {
    if t.vmask & mask == 0 {
        return t.clone();
    }
    match &t.k {
        K::Var(..) => sub.get(t).cloned().unwrap_or_else(|| t.clone()),
        K::Bin(a, b) => {
            let a2 = apply_rec(sub, mask, a);
            let b2 = apply_rec(sub, mask, b);
            if Arc::ptr_eq(&a2, a) && Arc::ptr_eq(&b2, b) {
                t.clone()
            } else {
                bin(t.tag, a2, b2)
            }
        }
        K::Inv(k) => {
            let k2 = apply_rec(sub, mask, k);
            if Arc::ptr_eq(&k2, k) {
                t.clone()
            } else {
                inv(k2)
            }
        }
        K::App(f, args) => {
            let new: Vec<T> = args.iter().map(|a| apply_rec(sub, mask, a)).collect();
            if new.iter().zip(args).all(|(x, y)| Arc::ptr_eq(x, y)) {
                t.clone()
            } else {
                app(f.clone(), new)
            }
        }
        K::Atom(..) => t.clone(),
    }
}

/// Applying ``inner`` first, then ``outer``; None where the Python side raises.
pub fn compose(outer: &Sub, inner: &Sub) -> Option<Sub> {
    let mut out = Sub::default();
    for (v, t) in inner {
        let t2 = apply(outer, t);
        if t2 != *v {
            out.insert(v.clone(), t2);
        }
    }
    for (v, t) in outer {
        if !inner.contains_key(v) {
            out.insert(v.clone(), t.clone());
        }
    }
    let mut vs = Vec::new();
    for (v, t) in &out {
        vs.clear();
        collect_vars(t, &mut vs);
        for w in &vs {
            if w == v || out.contains_key(w) {
                return None;
            }
        }
    }
    Some(out)
}

fn walk(t: &T, bind: &Sub) -> T {
    let mut t = t.clone();
    loop {
        match &t.k {
            K::Var(..) => match bind.get(&t) {
                None => return t,
                Some(u) => t = u.clone(),
            },
            K::Inv(k) if !t.ground => {
                let k2 = walk(k, bind);
                if Arc::ptr_eq(&k2, k) {
                    return t;
                }
                return inv(k2);
            }
            _ => return t,
        }
    }
}

fn occurs(v: &T, t: &T, bind: &Sub) -> bool {
    let mut stack = vec![t.clone()];
    while let Some(u) = stack.pop() {
        if u.ground {
            continue;
        }
        if let K::Var(..) = u.k {
            if u == *v {
                return true;
            }
            if let Some(w) = bind.get(&u) {
                stack.push(w.clone());
            }
        } else {
            stack.extend(kids(&u));
        }
    }
    false
}

fn resolve(t: &T, bind: &Sub) -> T {
    if t.ground {
        return t.clone();
    }
    if let K::Var(..) = t.k {
        return match bind.get(t) {
            None => t.clone(),
            Some(u) => resolve(u, bind),
        };
    }
    let ks = kids(t);
    let new: Vec<T> = ks.iter().map(|k| resolve(k, bind)).collect();
    if new.iter().zip(&ks).all(|(x, y)| Arc::ptr_eq(x, y)) {
        return t.clone();
    }
    rebuild(t, new)
}

fn fits(v: &T, t: &T) -> bool {
    let k = v.kind();
    k == K_NONE || (t.tag == T_ATOM && t.kind() == k)
}

/// Cheap necessary condition for ``unify(s, t)`` to succeed; no allocation.
pub fn may_unify(s: &T, t: &T) -> bool {
    if Arc::ptr_eq(s, t) {
        return true;
    }
    if s.tag == T_VAR {
        return s.kind() == K_NONE || t.tag == T_VAR || (t.tag == T_ATOM && t.kind() == s.kind());
    }
    if t.tag == T_VAR {
        return t.kind() == K_NONE || (s.tag == T_ATOM && s.kind() == t.kind());
    }
    if s.ground && t.ground {
        return s == t;
    }
    if s.tag != t.tag {
        // an inverse of a variable can absorb any other term
        return matches!(&s.k, K::Inv(k) if k.tag == T_VAR) || matches!(&t.k, K::Inv(k) if k.tag == T_VAR);
    }
    match (&s.k, &t.k) {
        (K::Bin(a1, b1), K::Bin(a2, b2)) => may_unify(a1, a2) && may_unify(b1, b2),
        (K::Inv(a), K::Inv(b)) => may_unify(a, b),
        (K::App(f, xs), K::App(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| may_unify(x, y))
        }
        _ => false,
    }
}

pub fn unify(s: &T, t: &T) -> Option<Sub> {
    let mut bind = Sub::default();
    let mut order: Vec<T> = Vec::new();
    let mut stack: Vec<(T, T)> = vec![(s.clone(), t.clone())];
    while let Some((a, b)) = stack.pop() {
        if Arc::ptr_eq(&a, &b) {
            continue;
        }
        let mut a = walk(&a, &bind);
        let mut b = walk(&b, &bind);
        if a == b {
            continue;
        }
        if a.tag == T_VAR && b.tag == T_VAR {
            if a.kind() != K_NONE && b.kind() == K_NONE {
                std::mem::swap(&mut a, &mut b);
            } else if a.kind() != b.kind() && b.kind() != K_NONE {
                return None;
            }
            order.push(a.clone());
            bind.insert(a, b);
            continue;
        }
        if a.tag == T_VAR {
            if !fits(&a, &b) || occurs(&a, &b, &bind) {
                return None;
            }
            order.push(a.clone());
            bind.insert(a, b);
            continue;
        }
        if b.tag == T_VAR {
            if !fits(&b, &a) || occurs(&b, &a, &bind) {
                return None;
            }
            order.push(b.clone());
            bind.insert(b, a);
            continue;
        }
        if let K::Inv(ak) = &a.k {
            if ak.tag == T_VAR && b.tag != T_INV {
                stack.push((ak.clone(), inv(b.clone())));
                continue;
            }
        }
        if let K::Inv(bk) = &b.k {
            if bk.tag == T_VAR && a.tag != T_INV {
                stack.push((inv(a.clone()), bk.clone()));
                continue;
            }
        }
        if a.tag != b.tag || (a.ground && b.ground) {
            return None;
        }
        match (&a.k, &b.k) {
            (K::App(f, xs), K::App(g, ys)) => {
                if f != g || xs.len() != ys.len() {
                    return None;
                }
                for (x, y) in xs.iter().zip(ys) {
                    stack.push((x.clone(), y.clone()));
                }
            }
            (K::Inv(x), K::Inv(y)) => stack.push((x.clone(), y.clone())),
            (K::Bin(a1, b1), K::Bin(a2, b2)) => {
                stack.push((b1.clone(), b2.clone()));
                stack.push((a1.clone(), a2.clone()));
            }
            _ => return None,
        }
    }
    let mut out = Sub::default();
    for v in order {
        let r = resolve(&v, &bind);
        if r != v {
            out.insert(v, r);
        }
    }
    Some(out)
}

/// One-sided matching: extend ``theta`` so that ``p`` under it equals ``t``.
pub fn matches(p: &T, t: &T, theta: &mut Sub) -> bool {
    let mut stack = vec![(p.clone(), t.clone())];
    while let Some((p, t)) = stack.pop() {
        if p.tag == T_VAR {
            if let Some(bound) = theta.get(&p) {
                if *bound != t {
                    return false;
                }
            } else if p.kind() != K_NONE
                && !((t.tag == T_ATOM || t.tag == T_VAR) && t.kind() == p.kind())
            {
                return false;
            } else {
                theta.insert(p, t);
            }
            continue;
        }
        if p.ground {
            if p != t {
                return false;
            }
            continue;
        }
        if p.tag != t.tag {
            return false;
        }
        match (&p.k, &t.k) {
            (K::App(f, xs), K::App(g, ys)) => {
                if f != g || xs.len() != ys.len() {
                    return false;
                }
                for (x, y) in xs.iter().zip(ys) {
                    stack.push((x.clone(), y.clone()));
                }
            }
            (K::Inv(x), K::Inv(y)) => stack.push((x.clone(), y.clone())),
            (K::Bin(a1, b1), K::Bin(a2, b2)) => {
                stack.push((a1.clone(), a2.clone()));
                stack.push((b1.clone(), b2.clone()));
            }
            _ => return false,
        }
    }
    true
}
