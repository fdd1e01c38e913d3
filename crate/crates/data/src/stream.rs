//! Class-incremental task streams.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{DataError, Dataset, ImageSet, Result};

/// One task: a class set and the train/test samples of exactly those classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    /// 1-based position in the stream.
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    pub train: ImageSet,
    pub test: ImageSet,
}

impl TaskSpec {
    pub fn check(&self) -> Result<()> {
        for (split, set) in [("train", &self.train), ("test", &self.test)] {
            if let Some(l) = set.labels.iter().find(|l| !self.class_ids.contains(l)) {
                return Err(DataError::Contract(format!(
                    "task {} {split} sample labelled {l} outside its classes {:?}",
                    self.task_id, self.class_ids
                )));
            }
        }
        Ok(())
    }
}

/// Ordered, class-disjoint tasks covering every class of the source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub dataset: String,
    pub n_classes: usize,
    /// Class ids in the order they are dealt to tasks.
    pub class_order: Vec<usize>,
    pub tasks: Vec<TaskSpec>,
}

impl TaskStream {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Task `t` (1-based).
    pub fn task(&self, t: usize) -> Option<&TaskSpec> {
        t.checked_sub(1).and_then(|i| self.tasks.get(i))
    }

    /// Classes of tasks `1..=t`, in stream order.
    pub fn classes_upto(&self, t: usize) -> Vec<usize> {
        self.tasks
            .iter()
            .take(t)
            .flat_map(|task| task.class_ids.iter().copied())
            .collect()
    }

    /// Asserts disjointness, coverage, non-empty classes and label membership.
    pub fn check(&self) -> Result<()> {
        let mut seen = vec![false; self.n_classes];
        for (i, task) in self.tasks.iter().enumerate() {
            if task.task_id != i + 1 {
                return Err(DataError::Contract(format!("task at position {i} has id {}", task.task_id)));
            }
            if task.class_ids.is_empty() {
                return Err(DataError::Contract(format!("task {} has no classes", task.task_id)));
            }
            for &c in &task.class_ids {
                if c >= self.n_classes || seen[c] {
                    return Err(DataError::Contract(format!("class {c} repeated or out of range")));
                }
                seen[c] = true;
                if !task.train.labels.contains(&c) {
                    return Err(DataError::Contract(format!(
                        "class {c} of task {} has no training samples",
                        task.task_id
                    )));
                }
            }
            task.check()?;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DataError::Contract(format!("class {missing} is not in any task")));
        }
        Ok(())
    }
}

/// Deals the dataset's classes, shuffled by `class_order_seed`, into
/// `n_tasks` equal groups. Test sets are split the same way as train sets.
pub fn build_task_stream(dataset: &Dataset, n_tasks: usize, class_order_seed: u64) -> Result<TaskStream> {
    if n_tasks == 0 || dataset.n_classes % n_tasks != 0 {
        return Err(DataError::Config(format!(
            "{n_tasks} tasks do not evenly divide {} classes",
            dataset.n_classes
        )));
    }
    let mut class_order: Vec<usize> = (0..dataset.n_classes).collect();
    class_order.shuffle(&mut ChaCha8Rng::seed_from_u64(class_order_seed));
    let per_task = dataset.n_classes / n_tasks;
    let tasks = class_order
        .chunks(per_task)
        .enumerate()
        .map(|(i, chunk)| {
            let class_ids = chunk.to_vec();
            TaskSpec {
                task_id: i + 1,
                train: dataset.train.subset(&dataset.train.positions_of(&class_ids)),
                test: dataset.test.subset(&dataset.test.positions_of(&class_ids)),
                class_ids,
            }
        })
        .collect();
    let stream = TaskStream {
        dataset: dataset.name.clone(),
        n_classes: dataset.n_classes,
        class_order,
        tasks,
    };
    stream.check()?;
    Ok(stream)
}
