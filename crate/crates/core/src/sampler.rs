//! Class-balanced instance selection.
//!
//! A slot is filled by drawing a class uniformly among the classes that have
//! at least one example, then an example of that class uniformly. The slot's
//! target is that class alone; other labels of the same example act as
//! negatives for that slot.

use rand::Rng;

use crate::data::Example;

/// Inverted index from class to the ordinals of the examples carrying it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassIndex {
    members: Vec<Vec<usize>>,
    active: Vec<usize>,
}

impl ClassIndex {
    /// `num_classes` is K; labels at or above it are ignored.
    pub fn build<E: std::borrow::Borrow<Example>>(examples: &[E], num_classes: usize) -> Self {
        let mut members = vec![Vec::new(); num_classes];
        for (ord, ex) in examples.iter().enumerate() {
            for &l in &ex.borrow().labels {
                if let Some(list) = members.get_mut(l as usize) {
                    list.push(ord);
                }
            }
        }
        let active = (0..num_classes).filter(|&k| !members[k].is_empty()).collect();
        ClassIndex { members, active }
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    /// N_k.
    pub fn count(&self, class: usize) -> usize {
        self.members.get(class).map_or(0, Vec::len)
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn active_classes(&self) -> &[usize] {
        &self.active
    }

    pub fn total_labels(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Ordinals into the indexed example slice.
    pub examples: Vec<usize>,
    /// One positive class per slot.
    pub targets: Vec<usize>,
    /// Sorted unique union of `targets`.
    pub present_classes: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Position of each slot's target inside `present_classes`.
    pub fn target_positions(&self) -> Vec<usize> {
        self.targets.iter().map(|t| self.present_classes.binary_search(t).expect("target is present")).collect()
    }
}

/// Fills `batch_size` slots. Panics if the index has no active class.
pub fn next_batch<R: Rng + ?Sized>(index: &ClassIndex, batch_size: usize, rng: &mut R) -> Batch {
    assert!(!index.active.is_empty(), "class index has no active class");
    let mut examples = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let class = index.active[rng.random_range(0..index.active.len())];
        let pool = &index.members[class];
        examples.push(pool[rng.random_range(0..pool.len())]);
        targets.push(class);
    }
    let mut present_classes = targets.clone();
    present_classes.sort_unstable();
    present_classes.dedup();
    Batch { examples, targets, present_classes }
}
