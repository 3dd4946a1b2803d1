use crate::error::{BanditError, Result};
use crate::model::InteractionRecord;
use serde::{Deserialize, Serialize};

/// Accepted observations in arrival order, indexed by arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    records: Vec<InteractionRecord>,
    by_arm: Vec<Vec<usize>>,
}

impl History {
    pub fn new(arms: usize) -> Self {
        Self { records: Vec::new(), by_arm: vec![Vec::new(); arms] }
    }

    pub fn push(&mut self, record: InteractionRecord) -> Result<()> {
        if record.arm >= self.by_arm.len() {
            return Err(BanditError::ArmOutOfRange { arm: record.arm, arms: self.by_arm.len() });
        }
        if let Some(last) = self.records.last() {
            if record.time_index <= last.time_index {
                return Err(BanditError::InvalidInput(format!(
                    "time index {} does not follow {}",
                    record.time_index, last.time_index
                )));
            }
        }
        self.by_arm[record.arm].push(self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arms(&self) -> usize {
        self.by_arm.len()
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn arm_records(&self, arm: usize) -> impl Iterator<Item = &InteractionRecord> + '_ {
        self.by_arm[arm].iter().map(move |&i| &self.records[i])
    }

    pub fn pulls(&self, arm: usize) -> usize {
        self.by_arm[arm].len()
    }

    pub fn last_time(&self) -> u64 {
        self.records.last().map_or(0, |r| r.time_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_must_increase() {
        let mut h = History::new(2);
        h.push(InteractionRecord::new(vec![1.0], 0, true, 1)).unwrap();
        h.push(InteractionRecord::new(vec![1.0], 1, false, 3)).unwrap();
        assert!(h.push(InteractionRecord::new(vec![1.0], 1, false, 3)).is_err());
        assert!(h.push(InteractionRecord::new(vec![1.0], 2, false, 4)).is_err());
        assert_eq!(h.pulls(0), 1);
        assert_eq!(h.arm_records(1).next().unwrap().time_index, 3);
    }
}
