use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::StageTask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Device,
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedTask {
    pub task: StageTask,
    pub ready_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    ready_time: u64,
    batch_id: usize,
    seq: u64,
}

/// Both tiers are full; the producer must hold the task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backpressure(pub QueuedTask);

/// Device-tier queue with a host-tier overflow. Within a tier, tasks are
/// served by `(ready_time, batch_id)`, FIFO among equals.
#[derive(Debug, Clone)]
pub struct TwoLevelQueue {
    device: BinaryHeap<Reverse<(Key, usize)>>,
    host: BinaryHeap<Reverse<(Key, usize)>>,
    slots: Vec<Option<QueuedTask>>,
    device_capacity: usize,
    host_capacity: usize,
    seq: u64,
}

impl TwoLevelQueue {
    pub fn new(device_capacity: usize, host_capacity: usize) -> Self {
        Self {
            device: BinaryHeap::new(),
            host: BinaryHeap::new(),
            slots: Vec::new(),
            device_capacity,
            host_capacity,
            seq: 0,
        }
    }

    pub fn len(&self, tier: Tier) -> usize {
        match tier {
            Tier::Device => self.device.len(),
            Tier::Host => self.host.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.device.is_empty() && self.host.is_empty()
    }

    fn has_room(&self, tier: Tier) -> bool {
        match tier {
            Tier::Device => self.device.len() < self.device_capacity,
            Tier::Host => self.host.len() < self.host_capacity,
        }
    }

    /// Puts the task in `tier` if it has room.
    pub fn enqueue_tier(&mut self, item: QueuedTask, tier: Tier) -> Result<(), Backpressure> {
        if !self.has_room(tier) {
            return Err(Backpressure(item));
        }
        let key = Key {
            ready_time: item.ready_time,
            batch_id: item.task.batch_id,
            seq: self.seq,
        };
        self.seq += 1;
        let slot = self.slots.len();
        self.slots.push(Some(item));
        match tier {
            Tier::Device => self.device.push(Reverse((key, slot))),
            Tier::Host => self.host.push(Reverse((key, slot))),
        }
        Ok(())
    }

    /// Device tier if it has room, else host tier, else backpressure.
    pub fn enqueue(&mut self, item: QueuedTask) -> Result<Tier, Backpressure> {
        let tier = if self.has_room(Tier::Device) { Tier::Device } else { Tier::Host };
        self.enqueue_tier(item, tier).map(|()| tier)
    }

    pub fn peek(&self) -> Option<(&QueuedTask, Tier)> {
        let (heap, tier) = if self.device.is_empty() {
            (&self.host, Tier::Host)
        } else {
            (&self.device, Tier::Device)
        };
        heap.peek()
            .map(|Reverse((_, slot))| (self.slots[*slot].as_ref().expect("queued slot is live"), tier))
    }

    /// Highest-priority task, preferring the device tier.
    pub fn dequeue(&mut self) -> Option<(QueuedTask, Tier)> {
        let (heap, tier) = if self.device.is_empty() {
            (&mut self.host, Tier::Host)
        } else {
            (&mut self.device, Tier::Device)
        };
        let Reverse((_, slot)) = heap.pop()?;
        Some((self.slots[slot].take().expect("queued slot is live"), tier))
    }
}
