//! Cooperative single-threaded task executor for rank programs.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll, Wake, Waker};

use super::RankId;

pub(crate) type LocalFuture = Pin<Box<dyn Future<Output = ()>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct TaskId(pub usize);

struct Slot {
    rank: RankId,
    main: bool,
    future: Option<LocalFuture>,
}

#[derive(Default)]
struct ReadyQueue {
    order: VecDeque<usize>,
    queued: Vec<bool>,
}

struct TaskWaker {
    id: usize,
    ready: Arc<Mutex<ReadyQueue>>,
}

impl Wake for TaskWaker {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }

    fn wake_by_ref(self: &Arc<Self>) {
        let mut q = self.ready.lock().unwrap();
        if !q.queued[self.id] {
            q.queued[self.id] = true;
            q.order.push_back(self.id);
        }
    }
}

pub(crate) enum Polled {
    Pending,
    Finished { rank: RankId, main: bool },
    Skipped,
}

#[derive(Default)]
pub(crate) struct Executor {
    slots: RefCell<Vec<Slot>>,
    ready: Arc<Mutex<ReadyQueue>>,
}

impl Executor {
    pub fn spawn(&self, rank: RankId, main: bool, future: LocalFuture) -> TaskId {
        let mut slots = self.slots.borrow_mut();
        let id = slots.len();
        slots.push(Slot {
            rank,
            main,
            future: Some(future),
        });
        let mut q = self.ready.lock().unwrap();
        q.queued.push(true);
        q.order.push_back(id);
        TaskId(id)
    }

    /// Drops every remaining future. Futures may touch the world in their
    /// destructors, so they are dropped after the slot table is released.
    pub fn clear(&self) {
        let slots = std::mem::take(&mut *self.slots.borrow_mut());
        drop(slots);
    }

    pub fn next_ready(&self) -> Option<TaskId> {
        let mut q = self.ready.lock().unwrap();
        let id = q.order.pop_front()?;
        q.queued[id] = false;
        Some(TaskId(id))
    }

    /// Polls one task. `alive` decides whether the owning rank may still run.
    pub fn poll(&self, id: TaskId, alive: impl Fn(RankId) -> bool) -> Polled {
        let (rank, main, fut) = {
            let mut slots = self.slots.borrow_mut();
            let slot = &mut slots[id.0];
            if !alive(slot.rank) {
                let dead = slot.future.take();
                drop(slots);
                drop(dead);
                return Polled::Skipped;
            }
            match slot.future.take() {
                Some(f) => (slot.rank, slot.main, f),
                None => return Polled::Skipped,
            }
        };
        let mut fut = fut;
        let waker = Waker::from(Arc::new(TaskWaker {
            id: id.0,
            ready: self.ready.clone(),
        }));
        let mut cx = Context::from_waker(&waker);
        match fut.as_mut().poll(&mut cx) {
            Poll::Ready(()) => {
                drop(fut);
                Polled::Finished { rank, main }
            }
            Poll::Pending => {
                self.slots.borrow_mut()[id.0].future = Some(fut);
                Polled::Pending
            }
        }
    }

    /// Drops every task owned by `rank`. Futures are dropped after the slot
    /// table is released because their destructors may touch the world.
    pub fn kill_rank(&self, rank: RankId) -> usize {
        let doomed: Vec<LocalFuture> = {
            let mut slots = self.slots.borrow_mut();
            slots
                .iter_mut()
                .filter(|s| s.rank == rank)
                .filter_map(|s| s.future.take())
                .collect()
        };
        let n = doomed.len();
        drop(doomed);
        n
    }
}
