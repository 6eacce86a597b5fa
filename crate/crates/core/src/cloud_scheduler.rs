//! Decides when and where user VMs are booted, retired and killed.
//!
//! Every function here is pure: it reads a [`SchedulerView`] snapshot and
//! returns decisions. The simulator applies them.
//!
//! One scheduling cycle walks the users in the order of their oldest idle
//! job and gives each user at most one boot. A user whose oldest unserved
//! job cannot be placed gets a second chance with a job of a different VM
//! type. If someone is left without a boot purely for lack of capacity the
//! cycle may rebalance: one instance of the most-provisioned user is drained
//! and a boot for the starved user is queued behind it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::connectors::{scratch_for, CloudState};
use crate::image_repo::ImageRepo;
use crate::matchmaker::JobQueue;
use crate::model::{
    validate_request, CloudFamily, CloudSite, Credential, CredentialKind, Duration, Job, JobState,
    ResourceRequest, SimTime, UserId, VMImage, VMInstance, VmId, VmState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PartitionPolicy {
    #[default]
    #[serde(rename = "off")]
    Off,
    /// Each cloud's cores are split into a whole-node pool and a
    /// single-core pool.
    #[serde(rename = "separate-single-core-and-whole-node")]
    SeparateSingleCoreAndWholeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub cycle_period: Duration,
    pub proxy_expiry_margin: Duration,
    pub lifetime_margin: Duration,
    pub partition_policy: PartitionPolicy,
    pub rebalance_enabled: bool,
    /// Requests of at least this many cores count as whole-node.
    pub whole_node_cores: u32,
    /// Share of each cloud's cores reserved for whole-node requests when
    /// partitioning is on.
    pub whole_node_fraction: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            cycle_period: 60,
            proxy_expiry_margin: 900,
            lifetime_margin: 3600,
            partition_policy: PartitionPolicy::Off,
            rebalance_enabled: true,
            whole_node_cores: 8,
            whole_node_fraction: 0.5,
        }
    }
}

impl SchedulerConfig {
    /// Returns the offending field and reason on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.cycle_period == 0 {
            return Err(("cycle_period", "must be positive".into()));
        }
        // The sweep only runs once per cycle, so a margin shorter than the
        // cycle could let an instance outlive its credential or lease.
        if self.proxy_expiry_margin < self.cycle_period {
            return Err((
                "proxy_expiry_margin",
                format!("must be at least cycle_period ({})", self.cycle_period),
            ));
        }
        if self.lifetime_margin < self.cycle_period {
            return Err((
                "lifetime_margin",
                format!("must be at least cycle_period ({})", self.cycle_period),
            ));
        }
        if self.whole_node_cores == 0 {
            return Err(("whole_node_cores", "must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.whole_node_fraction) {
            return Err(("whole_node_fraction", "must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_whole_node(&self, request: &ResourceRequest) -> bool {
        request.cores >= self.whole_node_cores
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootRequest {
    pub owner: UserId,
    pub image: String,
    pub request: ResourceRequest,
    pub target_cloud: String,
    pub whole_node: bool,
}

/// A drain plus the boot that should take its place once it has freed up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rebalance {
    pub retire: VmId,
    pub deferred: BootRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CycleDecision {
    pub boots: Vec<BootRequest>,
    pub rebalance: Option<Rebalance>,
}

/// Everything a cycle looks at.
#[derive(Debug, Clone, Copy)]
pub struct SchedulerView<'a> {
    pub now: SimTime,
    pub queue: &'a JobQueue,
    pub clouds: &'a BTreeMap<String, CloudState>,
    /// Non-terminated instances.
    pub instances: &'a BTreeMap<VmId, VMInstance>,
    pub images: &'a ImageRepo,
    pub credentials: &'a BTreeMap<UserId, Credential>,
    /// Boots promised by earlier rebalances, not yet issued.
    pub deferred: &'a [BootRequest],
}

/// Free resources of one cloud as seen by the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudCapacity<'a> {
    pub site: &'a CloudSite,
    pub free_cores: u32,
    pub free_memory_mb: u64,
    pub free_scratch_gb: u64,
    pub free_whole_pool: u32,
    pub free_single_pool: u32,
}

impl<'a> CloudCapacity<'a> {
    pub fn snapshot(
        clouds: &'a BTreeMap<String, CloudState>,
        instances: &BTreeMap<VmId, VMInstance>,
        config: &SchedulerConfig,
    ) -> Vec<CloudCapacity<'a>> {
        clouds
            .values()
            .map(|st| {
                let whole_used: u32 = st
                    .instances
                    .iter()
                    .filter_map(|id| instances.get(id))
                    .filter(|i| i.slots >= config.whole_node_cores)
                    .map(|i| i.slots)
                    .sum();
                let single_used = st.committed_cores.saturating_sub(whole_used);
                let (whole_pool, single_pool) = pool_sizes(&st.site, config);
                CloudCapacity {
                    site: &st.site,
                    free_cores: st.free_cores(),
                    free_memory_mb: st.free_memory_mb(),
                    free_scratch_gb: st.free_scratch_gb(),
                    free_whole_pool: whole_pool.saturating_sub(whole_used),
                    free_single_pool: single_pool.saturating_sub(single_used),
                }
            })
            .collect()
    }

    fn pool_free(&self, whole_node: bool) -> u32 {
        if whole_node {
            self.free_whole_pool
        } else {
            self.free_single_pool
        }
    }

    pub fn fits(&self, request: &ResourceRequest, config: &SchedulerConfig) -> bool {
        let whole = config.is_whole_node(request);
        self.free_cores >= request.cores
            && self.free_memory_mb >= request.memory_mb
            && (!self.site.scratch_safeguard
                || self.free_scratch_gb >= scratch_for(self.site, request.blank_space_gb))
            && (config.partition_policy == PartitionPolicy::Off
                || self.pool_free(whole) >= request.cores)
    }

    /// Whether the request could fit on this cloud if it were empty.
    pub fn fits_when_empty(&self, request: &ResourceRequest, config: &SchedulerConfig) -> bool {
        let site = self.site;
        let (whole_pool, single_pool) = pool_sizes(site, config);
        let pool = if config.is_whole_node(request) {
            whole_pool
        } else {
            single_pool
        };
        site.total_cores >= request.cores
            && site.total_memory_mb >= request.memory_mb
            && (!site.scratch_safeguard
                || site.scratch_pool_gb >= scratch_for(site, request.blank_space_gb))
            && (config.partition_policy == PartitionPolicy::Off || pool >= request.cores)
    }

    fn commit(&mut self, request: &ResourceRequest, config: &SchedulerConfig) {
        self.free_cores -= request.cores;
        self.free_memory_mb -= request.memory_mb;
        self.free_scratch_gb = self
            .free_scratch_gb
            .saturating_sub(scratch_for(self.site, request.blank_space_gb));
        if config.is_whole_node(request) {
            self.free_whole_pool = self.free_whole_pool.saturating_sub(request.cores);
        } else {
            self.free_single_pool = self.free_single_pool.saturating_sub(request.cores);
        }
    }
}

fn pool_sizes(site: &CloudSite, config: &SchedulerConfig) -> (u32, u32) {
    let whole = (site.total_cores as f64 * config.whole_node_fraction).floor() as u32;
    (whole, site.total_cores - whole)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no cloud can host the request")]
pub struct NoCapacity;

/// Clouds that could host this job apart from current load.
fn eligible(
    job: &Job,
    cap: &CloudCapacity<'_>,
    image: &VMImage,
    cred: &Credential,
    config: &SchedulerConfig,
    now: SimTime,
) -> bool {
    let site = cap.site;
    site.is_active()
        && job.allows_cloud(&site.name)
        && validate_request(&job.request, site, image, cred, now).is_ok()
        // A proxy inside the margin would be killed by the next sweep.
        && (site.family != CloudFamily::NimbusLike
            || cred.expiry() > now.saturating_add(config.proxy_expiry_margin))
}

/// Picks the cloud for a job: highest priority, then most free cores, then
/// name.
pub fn select_cloud(
    job: &Job,
    clouds: &[CloudCapacity<'_>],
    image: &VMImage,
    cred: &Credential,
    config: &SchedulerConfig,
    now: SimTime,
) -> Result<String, NoCapacity> {
    select_index(job, clouds, image, cred, config, now).map(|i| clouds[i].site.name.clone())
}

fn select_index(
    job: &Job,
    clouds: &[CloudCapacity<'_>],
    image: &VMImage,
    cred: &Credential,
    config: &SchedulerConfig,
    now: SimTime,
) -> Result<usize, NoCapacity> {
    clouds
        .iter()
        .enumerate()
        .filter(|(_, c)| eligible(job, c, image, cred, config, now) && c.fits(&job.request, config))
        .max_by(|(_, a), (_, b)| {
            a.site
                .priority
                .cmp(&b.site.priority)
                .then(a.free_cores.cmp(&b.free_cores))
                .then(b.site.name.cmp(&a.site.name))
        })
        .map(|(i, _)| i)
        .ok_or(NoCapacity)
}

fn counts_for_demand(state: VmState) -> bool {
    matches!(
        state,
        VmState::Requested | VmState::Booting | VmState::Running
    )
}

/// Idle jobs per user that no free, booting or promised slot will absorb,
/// in FIFO order. Users appear in the order of their oldest idle job.
pub fn unmet_demand<'a>(view: &SchedulerView<'a>) -> Vec<(UserId, Vec<&'a Job>)> {
    // (image, cloud, free slots) per owner.
    let mut supply: BTreeMap<&UserId, Vec<(&str, &str, u32)>> = BTreeMap::new();
    for inst in view.instances.values() {
        if counts_for_demand(inst.state) && inst.free_slots() > 0 {
            supply.entry(&inst.owner).or_default().push((
                &inst.image,
                &inst.cloud,
                inst.free_slots() as u32,
            ));
        }
    }
    for req in view.deferred {
        supply.entry(&req.owner).or_default().push((
            &req.image,
            &req.target_cloud,
            req.request.cores,
        ));
    }

    let mut order: Vec<UserId> = Vec::new();
    let mut unmet: BTreeMap<&UserId, Vec<&Job>> = BTreeMap::new();
    for job in view.queue.idle_fifo() {
        if !unmet.contains_key(&job.owner) {
            order.push(job.owner.clone());
            unmet.insert(&job.owner, Vec::new());
        }
        let covered = supply.get_mut(&job.owner).and_then(|slots| {
            slots
                .iter_mut()
                .find(|(img, cloud, n)| *n > 0 && *img == job.vm_type && job.allows_cloud(cloud))
        });
        match covered {
            Some(entry) => entry.2 -= 1,
            None => unmet.get_mut(&job.owner).expect("inserted above").push(job),
        }
    }
    order
        .into_iter()
        .map(|u| {
            let jobs = unmet.remove(&u).unwrap_or_default();
            (u, jobs)
        })
        .collect()
}

/// The user's oldest unserved job, then the oldest unserved job of each
/// other VM type, in FIFO order.
fn fallback_candidates<'a>(jobs: &[&'a Job]) -> Vec<&'a Job> {
    let mut seen = BTreeSet::new();
    jobs.iter()
        .copied()
        .filter(|j| seen.insert(j.vm_type.as_str()))
        .collect()
}

fn boot_request(job: &Job, cloud: &str, config: &SchedulerConfig) -> BootRequest {
    BootRequest {
        owner: job.owner.clone(),
        image: job.vm_type.clone(),
        request: job.request.clone(),
        target_cloud: cloud.to_string(),
        whole_node: config.is_whole_node(&job.request),
    }
}

pub fn scheduling_cycle(view: &SchedulerView<'_>, config: &SchedulerConfig) -> CycleDecision {
    let mut caps = CloudCapacity::snapshot(view.clouds, view.instances, config);
    let mut boots = Vec::new();
    let mut starved: Vec<&Job> = Vec::new();

    for (user, jobs) in unmet_demand(view) {
        if jobs.is_empty() {
            continue;
        }
        let Some(cred) = view.credentials.get(&user) else {
            continue;
        };
        let mut blocked_on_capacity: Option<&Job> = None;
        let mut booted = false;
        for job in fallback_candidates(&jobs) {
            let Some(image) = view.images.lookup(&job.vm_type, view.now) else {
                continue;
            };
            match select_index(job, &caps, image, cred, config, view.now) {
                Ok(i) => {
                    caps[i].commit(&job.request, config);
                    boots.push(boot_request(job, &caps[i].site.name, config));
                    booted = true;
                    break;
                }
                Err(NoCapacity) => {
                    let could_fit = caps.iter().any(|c| {
                        eligible(job, c, image, cred, config, view.now)
                            && c.fits_when_empty(&job.request, config)
                    });
                    if could_fit && blocked_on_capacity.is_none() {
                        blocked_on_capacity = Some(job);
                    }
                }
            }
        }
        if !booted {
            if let Some(job) = blocked_on_capacity {
                starved.push(job);
            }
        }
    }

    let rebalance = if config.rebalance_enabled && !starved.is_empty() {
        rebalance(view, &starved, &boots, &caps, config)
    } else {
        None
    };
    CycleDecision { boots, rebalance }
}

/// Instances a user currently holds for balancing purposes: live instances
/// that are not being retired, plus promised boots.
pub fn effective_counts(
    instances: &BTreeMap<VmId, VMInstance>,
    deferred: &[BootRequest],
    boots: &[BootRequest],
) -> BTreeMap<UserId, usize> {
    let mut counts: BTreeMap<UserId, usize> = BTreeMap::new();
    for inst in instances.values().filter(|i| counts_for_demand(i.state)) {
        *counts.entry(inst.owner.clone()).or_default() += 1;
    }
    for req in deferred.iter().chain(boots) {
        *counts.entry(req.owner.clone()).or_default() += 1;
    }
    counts
}

/// Retires one instance of the user holding the most instances so that a
/// starved user can boot in its place. `starved` carries, for each starved
/// user in FIFO order, the job that could not be placed. Does nothing unless
/// the gap between the two users is at least two instances.
pub fn rebalance(
    view: &SchedulerView<'_>,
    starved: &[&Job],
    boots: &[BootRequest],
    caps: &[CloudCapacity<'_>],
    config: &SchedulerConfig,
) -> Option<Rebalance> {
    let counts = effective_counts(view.instances, view.deferred, boots);
    let count = |u: &UserId| counts.get(u).copied().unwrap_or(0);

    // Most deprived starved user; min_by_key keeps the first on ties.
    let job = *starved.iter().min_by_key(|j| count(&j.owner))?;
    let needy = &job.owner;

    // Oldest live instance per user breaks ties between equally large users.
    let mut oldest: BTreeMap<&UserId, (SimTime, &VmId)> = BTreeMap::new();
    for inst in view
        .instances
        .values()
        .filter(|i| counts_for_demand(i.state))
    {
        let key = (inst.booted_at, &inst.vm_id);
        oldest
            .entry(&inst.owner)
            .and_modify(|k| *k = (*k).min(key))
            .or_insert(key);
    }
    let (&rich, _) = oldest
        .iter()
        .min_by(|(ua, ka), (ub, kb)| count(ub).cmp(&count(ua)).then(ka.cmp(kb)))?;
    if rich == needy || count(rich) < count(needy) + 2 {
        return None;
    }

    let image = view.images.lookup(&job.vm_type, view.now)?;
    let cred = view.credentials.get(needy)?;
    let victim = view
        .instances
        .values()
        .filter(|i| &i.owner == rich && i.state == VmState::Running)
        .filter(|i| {
            caps.iter().any(|c| {
                c.site.name == i.cloud
                    && eligible(job, c, image, cred, config, view.now)
                    && c.free_cores + i.slots >= job.request.cores
                    && c.free_memory_mb + i.memory_mb >= job.request.memory_mb
            })
        })
        .max_by_key(|i| (i.booted_at, i.vm_id.clone()))?;
    Some(Rebalance {
        retire: victim.vm_id.clone(),
        deferred: boot_request(job, &victim.cloud, config),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KillReason {
    Error,
    ProxyExpiry,
    LifetimeEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepAction {
    Kill(KillReason),
    Drain,
}

/// Error instances and instances whose proxy is about to lapse are killed;
/// instances close to the end of their lease are drained, and killed
/// outright if the lease would run out before the next sweep.
pub fn lifecycle_sweep(
    instances: &BTreeMap<VmId, VMInstance>,
    now: SimTime,
    config: &SchedulerConfig,
) -> Vec<(VmId, SweepAction)> {
    let mut out = Vec::new();
    for inst in instances.values().filter(|i| i.state.is_alive()) {
        let action = if inst.state == VmState::Error {
            Some(SweepAction::Kill(KillReason::Error))
        } else if inst.credential.kind == CredentialKind::PerUserProxy
            && inst.credential.expiry() <= now.saturating_add(config.proxy_expiry_margin)
        {
            Some(SweepAction::Kill(KillReason::ProxyExpiry))
        } else {
            match inst.lifetime_end() {
                Some(end) if end <= now.saturating_add(config.cycle_period) => {
                    Some(SweepAction::Kill(KillReason::LifetimeEnd))
                }
                Some(end)
                    if end <= now.saturating_add(config.lifetime_margin)
                        && inst.state == VmState::Running =>
                {
                    Some(SweepAction::Drain)
                }
                _ => None,
            }
        };
        if let Some(a) = action {
            out.push((inst.vm_id.clone(), a));
        }
    }
    out
}

/// Running instances that sit empty while their owner has no idle or held
/// job that could use them.
pub fn idle_retirements(view: &SchedulerView<'_>) -> Vec<VmId> {
    let mut wanted: BTreeSet<(&UserId, &str)> = BTreeSet::new();
    let mut constrained: Vec<&Job> = Vec::new();
    for job in view
        .queue
        .iter()
        .filter(|j| matches!(j.state, JobState::Idle | JobState::Held))
    {
        if job.cloud_constraint.is_some() {
            constrained.push(job);
        } else {
            wanted.insert((&job.owner, job.vm_type.as_str()));
        }
    }
    view.instances
        .values()
        .filter(|i| i.state == VmState::Running && i.occupied() == 0)
        .filter(|i| {
            !wanted.contains(&(&i.owner, i.image.as_str()))
                && !constrained
                    .iter()
                    .any(|j| j.owner == i.owner && j.vm_type == i.image && j.allows_cloud(&i.cloud))
        })
        .map(|i| i.vm_id.clone())
        .collect()
}
