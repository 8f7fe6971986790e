//! Completion handles for non-blocking operations.

use std::cell::RefCell;
use std::future::Future;
use std::rc::Rc;

use crate::simnet::Process;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestKind {
    Ishrink,
    Iagree,
    Icollective,
}

/// Handle to an operation progressing in the background of one rank.
/// Completion is terminal; `test` and `wait` after completion return the
/// stored result without side effects.
pub struct Request<T> {
    kind: RequestKind,
    proc: Process,
    slot: Rc<RefCell<Option<T>>>,
}

impl<T: Clone + 'static> Request<T> {
    pub(crate) fn spawn(proc: &Process, kind: RequestKind, op: impl Future<Output = T> + 'static) -> Self {
        let slot = Rc::new(RefCell::new(None));
        let out = slot.clone();
        let p = proc.clone();
        proc.spawn_local(async move {
            let v = op.await;
            *out.borrow_mut() = Some(v);
            let r = p.rank();
            p.with_world(|w| w.notify(r));
        });
        Self {
            kind,
            proc: proc.clone(),
            slot,
        }
    }

    pub fn kind(&self) -> RequestKind {
        self.kind
    }

    pub fn is_complete(&self) -> bool {
        self.slot.borrow().is_some()
    }

    /// Returns the result if the operation has completed.
    pub fn test(&self) -> Option<T> {
        self.slot.borrow().clone()
    }

    /// Suspends the calling task until completion.
    pub async fn wait(&self) -> T {
        self.proc.wait_for(|_| self.slot.borrow().clone()).await
    }
}
