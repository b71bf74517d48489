//! Symbolic states, successors and goal checks over the ported solver.

use crate::solver::*;
use crate::term::*;
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static ANALYSIS: RefCell<Analysis> = RefCell::new(Analysis::default());
}

pub enum Step {
    Recv(T),
    Send(T),
    Event(u8, u32, Vec<T>), // kind (0 running, 1 commit, 2 secret), goal index, args
}

pub struct StrandData {
    pub steps: Vec<Step>,
    pub ends: Vec<usize>,
}

pub struct Alternative {
    pub strands: Vec<StrandData>,
    pub knowledge: Vec<T>,
    pub scope: Vec<T>,
}

pub struct Check {
    pub goal: u32,
    pub secrecy: bool,
}

pub struct Engine {
    pub alts: Vec<Alternative>,
    pub fns: Fns,
    pub honest: Vec<T>,
    pub checks: Vec<Check>,
}

pub struct State {
    pub alt: Option<usize>,
    pub pos: Vec<u16>,
    pub store: Store,
    pub events: Vec<(u16, u16)>, // (strand, step)
    pub trace: Vec<(u16, u16)>,  // (strand, block start)
    pub depth: u32,
}

impl State {
    pub fn nbytes(&self) -> usize {
        96 + 16 * self.pos.len() + 8 * self.events.len() + 8 * self.trace.len() + self.store.nbytes()
    }
}

pub fn block_ends(steps: &[Step]) -> Vec<usize> {
    let n = steps.len();
    let mut ends = vec![0; n + 1];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && !matches!(steps[j], Step::Send(_)) {
            j += 1;
        }
        if j < n {
            j += 1;
            while j < n && matches!(steps[j], Step::Event(..)) {
                j += 1;
            }
        }
        ends[i] = j;
        i = j;
    }
    ends
}

impl Engine {
    pub fn root(&self) -> State {
        State {
            alt: None,
            pos: Vec::new(),
            store: Store { kn: Arc::new(Vec::new()), entries: Vec::new(), acc: Arc::new(Sub::default()) },
            events: Vec::new(),
            trace: Vec::new(),
            depth: 0,
        }
    }

    fn initial(&self, i: usize) -> State {
        let a = &self.alts[i];
        State {
            alt: Some(i),
            pos: vec![0; a.strands.len()],
            store: Store { kn: Arc::new(a.knowledge.clone()), entries: Vec::new(), acc: Arc::new(Sub::default()) },
            events: Vec::new(),
            trace: Vec::new(),
            depth: 0,
        }
    }

    pub fn successors(&self, st: &State) -> Vec<State> {
        let ai = match st.alt {
            None => return (0..self.alts.len()).map(|i| self.initial(i)).collect(),
            Some(a) => a,
        };
        ANALYSIS.with(|cell| self.expand_in(st, ai, &mut cell.borrow_mut()))
    }

    fn expand_in(&self, st: &State, ai: usize, an: &mut Analysis) -> Vec<State> {
        let alt = &self.alts[ai];
        let mut out = Vec::new();
        let sub = st.store.acc.clone();
        for (j, strand) in alt.strands.iter().enumerate() {
            let p = st.pos[j] as usize;
            if p >= strand.steps.len() {
                continue;
            }
            let end = strand.ends[p];
            let mut store = st.store.clone();
            let mut send: Option<&T> = None;
            let mut events = st.events.clone();
            for (k, step) in strand.steps[p..end].iter().enumerate() {
                match step {
                    Step::Recv(t) => {
                        let t2 = apply(&sub, t);
                        store = add_constraint(&store, &t2);
                    }
                    Step::Send(t) => send = Some(t),
                    Step::Event(..) => events.push((j as u16, (p + k) as u16)),
                }
            }
            let mut pos = st.pos.clone();
            pos[j] = end as u16;
            let reds = solve(&store, &self.fns, true, usize::MAX, an);
            let reds = most_general(reds, &alt.scope, &self.fns, an);
            let mut trace = st.trace.clone();
            trace.push((j as u16, p as u16));
            for mut red in reds {
                if let Some(s) = send {
                    let produced = apply(&red.acc, s);
                    if !red.kn.contains(&produced) {
                        let mut kn = red.kn.as_ref().clone();
                        kn.push(produced);
                        red.kn = Arc::new(kn);
                    }
                }
                out.push(State {
                    alt: Some(ai),
                    pos: pos.clone(),
                    store: red,
                    events: events.clone(),
                    trace: trace.clone(),
                    depth: st.depth + 1,
                });
            }
        }
        out
    }

    fn event<'a>(&'a self, ai: usize, e: (u16, u16)) -> (u8, u32, &'a [T]) {
        match &self.alts[ai].strands[e.0 as usize].steps[e.1 as usize] {
            Step::Event(k, g, args) => (*k, *g, args.as_slice()),
            _ => unreachable!("event reference points at a message step"),
        }
    }

    /// Goal index of the first violated check, if any.
    pub fn check(&self, st: &State) -> Option<u32> {
        if st.events.is_empty() {
            return None;
        }
        let ai = st.alt?;
        let acc = &st.store.acc;
        let events: Vec<(u8, u32, Vec<T>)> = st
            .events
            .iter()
            .map(|e| {
                let (k, g, args) = self.event(ai, *e);
                (k, g, args.iter().map(|t| apply(acc, t)).collect())
            })
            .collect();
        ANALYSIS.with(|cell| self.check_in(st, &events, &mut cell.borrow_mut()))
    }

    fn check_in(&self, st: &State, events: &[(u8, u32, Vec<T>)], an: &mut Analysis) -> Option<u32> {
        for c in &self.checks {
            let hit = if c.secrecy {
                self.secrecy(&st.store, events, c.goal, an)
            } else {
                self.authentication(&st.store, events, c.goal, an)
            };
            if hit {
                return Some(c.goal);
            }
        }
        None
    }

    fn honest_choices(&self, peers: &[T]) -> Vec<Sub> {
        let mut vars: Vec<T> = Vec::new();
        for p in peers {
            if p.tag == T_VAR {
                if !vars.contains(p) {
                    vars.push(p.clone());
                }
            } else if !(p.tag == T_ATOM && self.honest.contains(p)) {
                return Vec::new();
            }
        }
        let n = self.honest.len();
        let mut out = Vec::new();
        let total = n.pow(vars.len() as u32);
        for mut code in 0..total {
            let mut digits = vec![0; vars.len()];
            for d in (0..vars.len()).rev() {
                digits[d] = code % n;
                code /= n;
            }
            let mut s = Sub::default();
            for (v, d) in vars.iter().zip(digits) {
                s.insert(v.clone(), self.honest[d].clone());
            }
            out.push(s);
        }
        out
    }

    fn head(&self, store: &Store, an: &mut Analysis) -> bool {
        !solve(store, &self.fns, true, 1, an).is_empty()
    }

    fn secrecy(&self, store: &Store, events: &[(u8, u32, Vec<T>)], gi: u32, an: &mut Analysis) -> bool {
        for (k, g, args) in events {
            if *k != 2 || *g != gi {
                continue;
            }
            let payload = &args[0];
            for theta in self.honest_choices(&args[2..]) {
                let ext = match extend(store, &theta) {
                    None => continue,
                    Some(e) => e,
                };
                let ext = add_constraint(&ext, &apply(&theta, payload));
                if self.head(&ext, an) {
                    return true;
                }
            }
        }
        false
    }

    fn authentication(&self, store: &Store, events: &[(u8, u32, Vec<T>)], gi: u32, an: &mut Analysis) -> bool {
        let runs: Vec<T> = events
            .iter()
            .filter(|(k, g, _)| *k == 0 && *g == gi)
            .map(|(_, _, args)| pair_all(args))
            .collect();
        for (k, g, args) in events {
            if *k != 1 || *g != gi {
                continue;
            }
            let (agent, peer, msg) = (&args[0], &args[1], &args[2]);
            for theta in self.honest_choices(std::slice::from_ref(peer)) {
                let ext = match extend(store, &theta) {
                    None => continue,
                    Some(e) => e,
                };
                if !self.head(&ext, an) {
                    continue;
                }
                let want = apply(&theta, &pair_all(&[peer.clone(), agent.clone(), msg.clone()]));
                let mut matched = false;
                for r in &runs {
                    if let Some(u) = unify(&want, &apply(&theta, r)) {
                        if let Some(e2) = extend(&ext, &u) {
                            if self.head(&e2, an) {
                                matched = true;
                                break;
                            }
                        }
                    }
                }
                if !matched {
                    return true;
                }
            }
        }
        false
    }
}

// subsumption between solver results ---------------------------------------

pub fn most_general(stores: Vec<Store>, scope: &[T], fns: &Fns, an: &mut Analysis) -> Vec<Store> {
    if stores.len() < 2 {
        return stores;
    }
    let images: Vec<Vec<T>> = stores.iter().map(|s| scope.iter().map(|v| apply(&s.acc, v)).collect()).collect();
    let n = stores.len();
    let mut keep = vec![true; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || (j > i && subsumes(&stores[i], &images[i], &stores[j], &images[j], fns, an)) {
                continue;
            }
            if subsumes(&stores[j], &images[j], &stores[i], &images[i], fns, an) {
                keep[i] = false;
                break;
            }
        }
    }
    stores.into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect()
}

fn subsumes(b: &Store, b_img: &[T], a: &Store, a_img: &[T], fns: &Fns, an: &mut Analysis) -> bool {
    let mut theta = Sub::default();
    for (p, t) in b_img.iter().zip(a_img) {
        if !matches(p, t, &mut theta) {
            return false;
        }
    }
    b.entries.iter().all(|(lv, g)| implied(a, *lv, &apply(&theta, g), fns, an))
}

fn implied(a: &Store, lv: u32, t: &T, fns: &Fns, an: &mut Analysis) -> bool {
    let kn = &a.kn[..lv as usize];
    let mut stack = vec![t.clone()];
    while let Some(t) = stack.pop() {
        if kn.contains(&t) {
            continue;
        }
        if t.tag == T_VAR {
            if !a.entries.iter().any(|(l, g)| *g == t && *l <= lv) {
                return false;
            }
            continue;
        }
        if t.ground {
            if !derivable_ground(&t, kn, fns, an) {
                return false;
            }
            continue;
        }
        match &t.k {
            K::Bin(x, y) => {
                stack.push(x.clone());
                stack.push(y.clone());
            }
            K::App(f, args) if fns.0.contains(f) => stack.extend(args.iter().cloned()),
            _ => return false,
        }
    }
    true
}
