use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Multiply-accumulate operations and trainable parameters of some piece of
/// computation. One multiply-accumulate counts as one MAdd.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTally {
    pub madds: u64,
    pub params: u64,
}

impl CostTally {
    pub const ZERO: CostTally = CostTally {
        madds: 0,
        params: 0,
    };

    pub fn new(madds: u64, params: u64) -> Self {
        Self { madds, params }
    }
}

impl Add for CostTally {
    type Output = CostTally;

    fn add(self, rhs: CostTally) -> CostTally {
        CostTally {
            madds: self.madds + rhs.madds,
            params: self.params + rhs.params,
        }
    }
}

impl AddAssign for CostTally {
    fn add_assign(&mut self, rhs: CostTally) {
        *self = *self + rhs;
    }
}

impl Sum for CostTally {
    fn sum<I: Iterator<Item = CostTally>>(iter: I) -> Self {
        iter.fold(CostTally::ZERO, Add::add)
    }
}
