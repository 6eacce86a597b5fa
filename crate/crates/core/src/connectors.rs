//! Simulated IaaS endpoints. Each cloud enforces its family's boot contract
//! and keeps core, memory and scratch accounting for the instances it hosts.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cloud_scheduler::BootRequest;
use crate::image_repo::{ImageRepo, RepoError};
use crate::model::{
    validate_request, BootValidationError, CloudFamily, CloudSite, CloudStatus, Credential,
    Duration, JobId, ModelError, SimTime, VMImage, VMInstance, VmId, VmState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConnectorError {
    #[error("cloud {cloud} has no free {resource}")]
    NoCapacity {
        cloud: String,
        resource: &'static str,
    },
    #[error("cloud {0} scratch pool exhausted")]
    ScratchExhausted(String),
    #[error("cloud {0} is in maintenance")]
    MaintenanceMode(String),
    #[error("unknown cloud {0}")]
    UnknownCloud(String),
    #[error("unknown instance {0}")]
    UnknownInstance(VmId),
    #[error("boot request names image {requested} but {given} was supplied")]
    ImageMismatch { requested: String, given: String },
    #[error(transparent)]
    Validation(#[from] BootValidationError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudState {
    pub site: CloudSite,
    pub committed_cores: u32,
    pub committed_memory_mb: u64,
    pub committed_scratch_gb: u64,
    pub instances: BTreeSet<VmId>,
}

impl CloudState {
    pub fn new(site: CloudSite) -> Self {
        Self {
            site,
            committed_cores: 0,
            committed_memory_mb: 0,
            committed_scratch_gb: 0,
            instances: BTreeSet::new(),
        }
    }

    pub fn maintenance(&self) -> bool {
        self.site.status == CloudStatus::Maintenance
    }

    pub fn free_cores(&self) -> u32 {
        self.site.total_cores.saturating_sub(self.committed_cores)
    }

    pub fn free_memory_mb(&self) -> u64 {
        self.site
            .total_memory_mb
            .saturating_sub(self.committed_memory_mb)
    }

    pub fn free_scratch_gb(&self) -> u64 {
        self.site
            .scratch_pool_gb
            .saturating_sub(self.committed_scratch_gb)
    }

    pub fn scratch_overcommitted(&self) -> bool {
        self.committed_scratch_gb > self.site.scratch_pool_gb
    }
}

/// Scratch a request draws from the pool; only nimbus-like clouds attach it.
pub fn scratch_for(site: &CloudSite, blank_space_gb: u64) -> u64 {
    match site.family {
        CloudFamily::NimbusLike => blank_space_gb,
        CloudFamily::OpenstackLike => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootReceipt {
    pub vm_id: VmId,
    pub transfer_time: Duration,
    pub ready_at: SimTime,
    /// Set when this boot pushed the cloud's scratch pool past its size.
    pub scratch_overcommitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Termination {
    pub instance: VMInstance,
    pub previous: VmState,
    pub orphans: Vec<JobId>,
}

#[derive(Debug, Clone, Default)]
pub struct Connectors {
    clouds: BTreeMap<String, CloudState>,
    live: BTreeMap<VmId, VMInstance>,
    terminated: BTreeMap<VmId, VMInstance>,
    counters: BTreeMap<String, u64>,
}

impl Connectors {
    pub fn new(sites: impl IntoIterator<Item = CloudSite>) -> Result<Self, ConnectorError> {
        let mut c = Self::default();
        for site in sites {
            site.validate()?;
            c.clouds.insert(site.name.clone(), CloudState::new(site));
        }
        Ok(c)
    }

    pub fn clouds(&self) -> &BTreeMap<String, CloudState> {
        &self.clouds
    }

    pub fn cloud(&self, name: &str) -> Option<&CloudState> {
        self.clouds.get(name)
    }

    /// Instances that have not been terminated, in id order.
    pub fn instances(&self) -> &BTreeMap<VmId, VMInstance> {
        &self.live
    }

    pub fn instances_mut(&mut self) -> &mut BTreeMap<VmId, VMInstance> {
        &mut self.live
    }

    pub fn terminated(&self) -> &BTreeMap<VmId, VMInstance> {
        &self.terminated
    }

    pub fn instance(&self, vm: &VmId) -> Option<&VMInstance> {
        self.live.get(vm).or_else(|| self.terminated.get(vm))
    }

    pub fn boot(
        &mut self,
        req: &BootRequest,
        image: &VMImage,
        cred: &Credential,
        repo: &ImageRepo,
        now: SimTime,
    ) -> Result<BootReceipt, ConnectorError> {
        let state = self
            .clouds
            .get_mut(&req.target_cloud)
            .ok_or_else(|| ConnectorError::UnknownCloud(req.target_cloud.clone()))?;
        let site = &state.site;
        if state.maintenance() {
            return Err(ConnectorError::MaintenanceMode(site.name.clone()));
        }
        if image.image_id != req.image {
            return Err(ConnectorError::ImageMismatch {
                requested: req.image.clone(),
                given: image.image_id.clone(),
            });
        }
        validate_request(&req.request, site, image, cred, now)?;
        if state.committed_cores + req.request.cores > site.total_cores {
            return Err(ConnectorError::NoCapacity {
                cloud: site.name.clone(),
                resource: "cores",
            });
        }
        if state.committed_memory_mb + req.request.memory_mb > site.total_memory_mb {
            return Err(ConnectorError::NoCapacity {
                cloud: site.name.clone(),
                resource: "memory",
            });
        }
        let scratch = scratch_for(site, req.request.blank_space_gb);
        if site.scratch_safeguard && state.committed_scratch_gb + scratch > site.scratch_pool_gb {
            return Err(ConnectorError::ScratchExhausted(site.name.clone()));
        }
        let transfer_time = repo.transfer_time(&image.image_id, site, now)?;

        let counter = self.counters.entry(site.name.clone()).or_insert(0);
        *counter += 1;
        let vm_id = VmId::new(site.name.clone(), *counter);
        let credential = match site.family {
            CloudFamily::NimbusLike => cred.clone(),
            CloudFamily::OpenstackLike => Credential::group_key(req.owner.clone(), now),
        };
        let mut instance = VMInstance {
            vm_id: vm_id.clone(),
            owner: req.owner.clone(),
            image: req.image.clone(),
            cloud: site.name.clone(),
            hypervisor: site.hypervisor,
            slots: req.request.cores,
            slot_occupancy: vec![None; req.request.cores as usize],
            booted_at: now,
            lifetime_limit: site.instance_lifetime(),
            credential,
            state: VmState::Requested,
            blank_space_gb: scratch,
            memory_mb: req.request.memory_mb,
        };
        instance.transition(VmState::Booting)?;
        let ready_at = now + site.boot_fixed_delay + transfer_time;

        state.committed_cores += req.request.cores;
        state.committed_memory_mb += req.request.memory_mb;
        state.committed_scratch_gb += scratch;
        state.instances.insert(vm_id.clone());
        let scratch_overcommitted = state.scratch_overcommitted();
        self.live.insert(vm_id.clone(), instance);
        Ok(BootReceipt {
            vm_id,
            transfer_time,
            ready_at,
            scratch_overcommitted,
        })
    }

    pub fn mark_running(&mut self, vm: &VmId) -> Result<(), ConnectorError> {
        let inst = self
            .live
            .get_mut(vm)
            .ok_or_else(|| ConnectorError::UnknownInstance(vm.clone()))?;
        inst.transition(VmState::Running)?;
        Ok(())
    }

    /// The platform reports the instance broken.
    pub fn fail(&mut self, vm: &VmId) -> Result<VmState, ConnectorError> {
        let inst = self
            .live
            .get_mut(vm)
            .ok_or_else(|| ConnectorError::UnknownInstance(vm.clone()))?;
        Ok(inst.transition(VmState::Error)?)
    }

    pub fn set_state(&mut self, vm: &VmId, to: VmState) -> Result<VmState, ConnectorError> {
        let inst = self
            .live
            .get_mut(vm)
            .ok_or_else(|| ConnectorError::UnknownInstance(vm.clone()))?;
        Ok(inst.transition(to)?)
    }

    /// Shuts the instance down, releasing its resources. Jobs that were on it
    /// come back as orphans for the matchmaker to requeue.
    pub fn terminate(&mut self, vm: &VmId, _now: SimTime) -> Result<Termination, ConnectorError> {
        let mut inst = self
            .live
            .remove(vm)
            .ok_or_else(|| ConnectorError::UnknownInstance(vm.clone()))?;
        let previous = match inst.transition(VmState::Terminated) {
            Ok(prev) => prev,
            Err(e) => {
                self.live.insert(vm.clone(), inst);
                return Err(e.into());
            }
        };
        let orphans: Vec<JobId> = inst.jobs().collect();
        inst.slot_occupancy.iter_mut().for_each(|s| *s = None);
        if let Some(state) = self.clouds.get_mut(&inst.cloud) {
            state.committed_cores -= inst.slots;
            state.committed_memory_mb -= inst.memory_mb;
            state.committed_scratch_gb -= inst.blank_space_gb;
            state.instances.remove(vm);
        }
        self.terminated.insert(vm.clone(), inst.clone());
        Ok(Termination {
            instance: inst,
            previous,
            orphans,
        })
    }

    pub fn set_maintenance(&mut self, cloud: &str, on: bool) -> Result<(), ConnectorError> {
        let state = self
            .clouds
            .get_mut(cloud)
            .ok_or_else(|| ConnectorError::UnknownCloud(cloud.to_string()))?;
        state.site.status = if on {
            CloudStatus::Maintenance
        } else {
            CloudStatus::Active
        };
        Ok(())
    }

    /// Per-cloud state as JSON, the payload behind `status`.
    pub fn dump_json(&self) -> serde_json::Value {
        let clouds: serde_json::Map<_, _> = self
            .clouds
            .iter()
            .map(|(name, st)| {
                let instances: Vec<_> = st
                    .instances
                    .iter()
                    .filter_map(|id| self.live.get(id))
                    .map(|i| {
                        serde_json::json!({
                            "vm_id": i.vm_id.to_string(),
                            "owner": i.owner.as_str(),
                            "image": i.image,
                            "state": i.state,
                            "slots": i.slots,
                            "occupied": i.occupied(),
                            "booted_at": i.booted_at,
                        })
                    })
                    .collect();
                let v = serde_json::json!({
                    "family": st.site.family,
                    "hypervisor": st.site.hypervisor,
                    "status": st.site.status,
                    "total_cores": st.site.total_cores,
                    "committed_cores": st.committed_cores,
                    "committed_memory_mb": st.committed_memory_mb,
                    "committed_scratch_gb": st.committed_scratch_gb,
                    "scratch_pool_gb": st.site.scratch_pool_gb,
                    "scratch_overcommitted": st.scratch_overcommitted(),
                    "maintenance": st.maintenance(),
                    "instances": instances,
                });
                (name.clone(), v)
            })
            .collect();
        serde_json::Value::Object(clouds)
    }
}
