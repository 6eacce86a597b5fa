//! Stage-in cost model for the software repository cache. The first job on
//! an instance pays the cold price, later jobs on the same instance share the
//! warm cache.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{Duration, VmId};

pub const DEFAULT_COLD_STAGEIN: Duration = 300;
pub const DEFAULT_WARM_STAGEIN: Duration = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageinCost {
    pub cold_stagein: Duration,
    pub warm_stagein: Duration,
}

impl Default for StageinCost {
    fn default() -> Self {
        Self {
            cold_stagein: DEFAULT_COLD_STAGEIN,
            warm_stagein: DEFAULT_WARM_STAGEIN,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SoftwareCache {
    costs: BTreeMap<String, StageinCost>,
    warm: BTreeSet<VmId>,
}

impl SoftwareCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_cost(&mut self, vm_type: impl Into<String>, cost: StageinCost) {
        self.costs.insert(vm_type.into(), cost);
    }

    pub fn cost(&self, vm_type: &str) -> StageinCost {
        self.costs.get(vm_type).copied().unwrap_or_default()
    }

    /// Penalty for the next job started on `vm`; warms the instance cache.
    pub fn stagein_penalty(&mut self, vm: &VmId, vm_type: &str) -> Duration {
        let cost = self.cost(vm_type);
        if self.warm.insert(vm.clone()) {
            cost.cold_stagein
        } else {
            cost.warm_stagein
        }
    }

    pub fn is_warm(&self, vm: &VmId) -> bool {
        self.warm.contains(vm)
    }
}
