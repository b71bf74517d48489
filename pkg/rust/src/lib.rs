//! Compiled expansion kernel: successors, constraint solving and goal
//! checks over states that live on the Rust side.  Python sees opaque nodes.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod engine;
mod solver;
mod term;

use engine::{block_ends, Alternative, Check, State, Step, StrandData};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyList, PyTuple};
use rustc_hash::FxHashSet;
use solver::Fns;
use std::sync::Arc;
use term::*;

fn to_term(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let tup = obj.cast::<PyTuple>()?;
    let tag: u8 = tup.get_item(0)?.extract()?;
    Ok(match tag {
        T_ATOM => {
            let name: String = tup.get_item(1)?.extract()?;
            atom(Arc::from(name), tup.get_item(2)?.extract()?)
        }
        T_VAR => {
            let name: String = tup.get_item(1)?.extract()?;
            var(Arc::from(name), tup.get_item(2)?.extract()?, tup.get_item(3)?.extract()?)
        }
        T_PAIR | T_SYM | T_ASYM => bin(tag, to_term(&tup.get_item(1)?)?, to_term(&tup.get_item(2)?)?),
        T_INV => inv(to_term(&tup.get_item(1)?)?),
        T_APPLY => {
            let name: String = tup.get_item(1)?.extract()?;
            let args = tup.get_item(2)?;
            let mut v = Vec::new();
            for a in args.try_iter()? {
                v.push(to_term(&a?)?);
            }
            app(Arc::from(name), v)
        }
        _ => return Err(PyValueError::new_err(format!("bad term tag {tag}"))),
    })
}

fn from_term<'py>(py: Python<'py>, t: &T) -> PyResult<Bound<'py, PyAny>> {
    let out = match &t.k {
        K::Atom(n, k) => (t.tag, n.as_ref(), *k).into_pyobject(py)?.into_any(),
        K::Var(n, i, k) => (t.tag, n.as_ref(), *i, *k).into_pyobject(py)?.into_any(),
        K::Bin(a, b) => (t.tag, from_term(py, a)?, from_term(py, b)?).into_pyobject(py)?.into_any(),
        K::Inv(k) => (t.tag, from_term(py, k)?).into_pyobject(py)?.into_any(),
        K::App(f, args) => {
            let xs: Vec<Bound<'py, PyAny>> = args.iter().map(|a| from_term(py, a)).collect::<PyResult<_>>()?;
            (t.tag, f.as_ref(), PyTuple::new(py, xs)?).into_pyobject(py)?.into_any()
        }
    };
    Ok(out)
}

fn terms(obj: &Bound<'_, PyAny>) -> PyResult<Vec<T>> {
    let mut v = Vec::new();
    for x in obj.try_iter()? {
        v.push(to_term(&x?)?);
    }
    Ok(v)
}

/// Opaque search node.
#[pyclass(frozen, module = "pfmc._core")]
struct Node {
    st: Arc<State>,
}

#[pymethods]
impl Node {
    #[getter]
    fn depth(&self) -> u32 {
        self.st.depth
    }

    #[getter]
    fn is_choice(&self) -> bool {
        self.st.alt.is_none()
    }

    fn nbytes(&self) -> usize {
        self.st.nbytes()
    }
}

#[pyclass(frozen, module = "pfmc._core")]
struct Engine {
    inner: Arc<engine::Engine>,
}

#[pymethods]
impl Engine {
    /// ``alternatives``: (strands, knowledge, scope) per session assignment;
    /// a strand is a list of steps ``(0, t)`` receive, ``(1, t)`` send,
    /// ``(2, kind, goal, args)`` event.  ``checks``: (goal index, is_secrecy).
    #[new]
    fn new(
        alternatives: &Bound<'_, PyAny>,
        public_functions: Vec<String>,
        honest: &Bound<'_, PyAny>,
        checks: Vec<(u32, bool)>,
    ) -> PyResult<Self> {
        let mut alts = Vec::new();
        for alt in alternatives.try_iter()? {
            let alt = alt?;
            let alt = alt.cast::<PyTuple>()?;
            let mut strands = Vec::new();
            for s in alt.get_item(0)?.try_iter()? {
                let mut steps = Vec::new();
                for st in s?.try_iter()? {
                    let st = st?;
                    let st = st.cast::<PyTuple>()?;
                    let code: u8 = st.get_item(0)?.extract()?;
                    steps.push(match code {
                        0 => Step::Recv(to_term(&st.get_item(1)?)?),
                        1 => Step::Send(to_term(&st.get_item(1)?)?),
                        _ => Step::Event(st.get_item(1)?.extract()?, st.get_item(2)?.extract()?, terms(&st.get_item(3)?)?),
                    });
                }
                let ends = block_ends(&steps);
                strands.push(StrandData { steps, ends });
            }
            alts.push(Alternative {
                strands,
                knowledge: terms(&alt.get_item(1)?)?,
                scope: terms(&alt.get_item(2)?)?,
            });
        }
        let fns: FxHashSet<Arc<str>> = public_functions.into_iter().map(Arc::from).collect();
        let inner = engine::Engine {
            alts,
            fns: Fns(fns),
            honest: terms(honest)?,
            checks: checks.into_iter().map(|(goal, secrecy)| Check { goal, secrecy }).collect(),
        };
        Ok(Engine { inner: Arc::new(inner) })
    }

    fn root(&self) -> Node {
        Node { st: Arc::new(self.inner.root()) }
    }

    /// Children of ``node``; runs without the interpreter lock.
    fn expand(&self, py: Python<'_>, node: &Node) -> Vec<Node> {
        let eng = self.inner.clone();
        let st = node.st.clone();
        let kids = py.detach(move || eng.successors(&st));
        kids.into_iter().map(|s| Node { st: Arc::new(s) }).collect()
    }

    /// Goal index of the first violated goal check at ``node``.
    fn check(&self, py: Python<'_>, node: &Node) -> Option<u32> {
        let eng = self.inner.clone();
        let st = node.st.clone();
        py.detach(move || eng.check(&st))
    }

    /// Nodes of the subtree below ``node`` cut at ``max_depth``, and whether
    /// a violated goal was seen (sequential, entirely native).
    fn count(&self, py: Python<'_>, node: &Node, max_depth: u32) -> (u64, bool) {
        let eng = self.inner.clone();
        let st = node.st.clone();
        py.detach(move || {
            let mut n = 0u64;
            let mut attack = false;
            let mut stack = vec![st];
            while let Some(s) = stack.pop() {
                n += 1;
                if !attack && eng.check(&s).is_some() {
                    attack = true;
                }
                if s.depth >= max_depth && s.alt.is_some() {
                    continue;
                }
                for k in eng.successors(&s).into_iter().rev() {
                    stack.push(Arc::new(k));
                }
            }
            (n, attack)
        })
    }

    /// ``(alternative, positions, knowledge, entries, substitution, events,
    /// trace, depth)`` with terms in tagged-tuple form.
    fn export<'py>(&self, py: Python<'py>, node: &Node) -> PyResult<Bound<'py, PyTuple>> {
        let st = &node.st;
        let kn: Vec<Bound<'py, PyAny>> = st.store.kn.iter().map(|t| from_term(py, t)).collect::<PyResult<_>>()?;
        let entries: Vec<(u32, Bound<'py, PyAny>)> =
            st.store.entries.iter().map(|(lv, g)| Ok((*lv, from_term(py, g)?))).collect::<PyResult<_>>()?;
        let acc: Vec<(Bound<'py, PyAny>, Bound<'py, PyAny>)> = st
            .store
            .acc
            .iter()
            .map(|(v, t)| Ok((from_term(py, v)?, from_term(py, t)?)))
            .collect::<PyResult<_>>()?;
        let items: Vec<Bound<'py, PyAny>> = vec![
            st.alt.into_pyobject(py)?.into_any(),
            PyList::new(py, st.pos.iter())?.into_any(),
            PyList::new(py, kn)?.into_any(),
            PyList::new(py, entries)?.into_any(),
            PyList::new(py, acc)?.into_any(),
            PyList::new(py, st.events.iter())?.into_any(),
            PyList::new(py, st.trace.iter())?.into_any(),
            st.depth.into_pyobject(py)?.into_any(),
        ];
        PyTuple::new(py, items)
    }
}

#[pymodule]
fn _core(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Engine>()?;
    m.add_class::<Node>()?;
    Ok(())
}
