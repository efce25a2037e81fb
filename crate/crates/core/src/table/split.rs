use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Result, Table, TableError};

/// Day-based partition: train on earlier days, validate on one later day and
/// optionally hold out a final test day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_days: BTreeSet<u16>,
    pub valid_day: u16,
    #[serde(default)]
    pub test_day: Option<u16>,
}

impl SplitPlan {
    pub fn new(train_days: impl IntoIterator<Item = u16>, valid_day: u16, test_day: Option<u16>) -> Result<Self> {
        let plan = Self {
            train_days: train_days.into_iter().collect(),
            valid_day,
            test_day,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_days.contains(&self.valid_day) {
            return Err(TableError::InvalidPlan(format!(
                "validation day {} is also a training day",
                self.valid_day
            )));
        }
        if let Some(&last) = self.train_days.last() {
            if last >= self.valid_day {
                return Err(TableError::InvalidPlan(format!(
                    "training day {last} is not before validation day {}",
                    self.valid_day
                )));
            }
        }
        if let Some(test) = self.test_day {
            if test <= self.valid_day {
                return Err(TableError::InvalidPlan(format!(
                    "test day {test} must come after validation day {}",
                    self.valid_day
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SplitTables {
    pub train: Table,
    pub valid: Table,
    /// Zero rows when the plan has no test day.
    pub test: Table,
}

/// Partitions rows by day, keeping the original row order inside each part.
/// Rows whose day the plan does not mention are left out.
pub fn split(table: &Table, plan: &SplitPlan) -> Result<SplitTables> {
    plan.validate()?;
    let days = table
        .days()
        .ok_or_else(|| TableError::Schema("table has no day column".into()))?;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (row, &day) in days.iter().enumerate() {
        if day == plan.valid_day {
            valid.push(row);
        } else if Some(day) == plan.test_day {
            test.push(row);
        } else if plan.train_days.contains(&day) {
            train.push(row);
        }
    }
    if valid.is_empty() {
        return Err(TableError::EmptyValidation(plan.valid_day));
    }
    Ok(SplitTables {
        train: table.take_rows(&train),
        valid: table.take_rows(&valid),
        test: table.take_rows(&test),
    })
}
