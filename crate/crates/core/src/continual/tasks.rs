use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, pairwise-disjoint class sets, one per task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskSchedule {
    tasks: Vec<Vec<usize>>,
}

impl TaskSchedule {
    pub fn new(tasks: Vec<Vec<usize>>) -> Result<Self> {
        if tasks.is_empty() || tasks.iter().any(|t| t.is_empty()) {
            return Err(Error::Schedule("every task needs at least one class".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &c in tasks.iter().flatten() {
            if !seen.insert(c) {
                return Err(Error::Schedule(format!("class {c} appears in more than one task")));
            }
        }
        Ok(Self { tasks })
    }

    /// `K` tasks of `C` consecutive classes each, starting from class 0.
    pub fn uniform(tasks: usize, classes_per_task: usize) -> Result<Self> {
        Self::from_sizes(&vec![classes_per_task; tasks])
    }

    /// Consecutive class blocks of the given sizes, e.g. `[4, 4, 3]`.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut next = 0;
        let tasks = sizes
            .iter()
            .map(|&n| {
                let t: Vec<usize> = (next..next + n).collect();
                next += n;
                t
            })
            .collect();
        Self::new(tasks)
    }

    pub fn tasks(&self) -> &[Vec<usize>] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn max_class(&self) -> usize {
        self.tasks.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Task index owning `class`, if any.
    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.contains(&class))
    }
}

impl FromStr for TaskSchedule {
    type Err = Error;

    /// Accepts `5x2`, `4+4+3`, or explicit lists such as `0,1|2,3`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Schedule(format!("`{p}` is not a class count or index in `{s}`")))
        };
        if s.contains('|') || s.contains(',') {
            let tasks =
                s.split('|').map(|t| t.split(',').map(num).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
            return Self::new(tasks);
        }
        if let Some((k, c)) = s.split_once(['x', 'X']) {
            return Self::uniform(num(k)?, num(c)?);
        }
        let sizes = s.split('+').map(num).collect::<Result<Vec<_>>>()?;
        Self::from_sizes(&sizes)
    }
}

impl TryFrom<String> for TaskSchedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskSchedule> for String {
    fn from(s: TaskSchedule) -> String {
        s.to_string()
    }
}

impl fmt::Display for TaskSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> =
            self.tasks.iter().map(|t| t.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")).collect();
        f.write_str(&parts.join("|"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_uniform_and_sized_specs() {
        let s: TaskSchedule = "5x2".parse().unwrap();
        assert_eq!(s.tasks(), &[vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
        let s: TaskSchedule = "4+4+3".parse().unwrap();
        assert_eq!(s.tasks()[2], vec![8, 9, 10]);
        let s: TaskSchedule = "3,7|1".parse().unwrap();
        assert_eq!(s.tasks(), &[vec![3, 7], vec![1]]);
        assert_eq!(s.to_string().parse::<TaskSchedule>().unwrap(), s);
        assert_eq!("10".parse::<TaskSchedule>().unwrap().len(), 1);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!("0,1|1,2".parse::<TaskSchedule>().is_err());
        assert!("5x0".parse::<TaskSchedule>().is_err());
        assert!("two".parse::<TaskSchedule>().is_err());
        assert!("".parse::<TaskSchedule>().is_err());
    }
}
