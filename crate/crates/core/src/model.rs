//! Domain types shared by every part of the scheduler: users, credentials,
//! images, jobs, VM instances and cloud sites.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in integer seconds from scenario start.
pub type SimTime = u64;
/// Durations are integer seconds as well.
pub type Duration = u64;
pub type JobId = u64;

/// Default proxy lifetime handed out by the credential service (12 h).
pub const DEFAULT_PROXY_LIFETIME: Duration = 43_200;
/// Default lease of an instance on a nimbus-like cloud (7 days).
pub const NIMBUS_DEFAULT_LIFETIME: Duration = 604_800;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("user id must not be empty")]
    EmptyUserId,
    #[error("invalid image {0}: {1}")]
    InvalidImage(String, &'static str),
    #[error("invalid instance id {0:?}")]
    InvalidVmId(String),
    #[error("illegal transition for {vm}: {from} -> {to}")]
    IllegalTransition {
        vm: VmId,
        from: VmState,
        to: VmState,
    },
    #[error("invalid cloud {0}: {1}")]
    InvalidCloud(String, &'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BootValidationError {
    #[error("boot request is missing required field `{0}`")]
    MissingField(&'static str),
    #[error("image {image} has no {hypervisor} variant")]
    HypervisorMismatch {
        image: String,
        hypervisor: Hypervisor,
    },
    #[error("proxy credential of {owner} expired at {expiry}")]
    ExpiredCredential { owner: UserId, expiry: SimTime },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId(String);

impl UserId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ModelError::EmptyUserId);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for UserId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<UserId> for String {
    fn from(value: UserId) -> Self {
        value.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypervisor {
    Kvm,
    Xen,
}

impl fmt::Display for Hypervisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypervisor::Kvm => "kvm",
            Hypervisor::Xen => "xen",
        })
    }
}

impl FromStr for Hypervisor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kvm" => Ok(Hypervisor::Kvm),
            "xen" => Ok(Hypervisor::Xen),
            other => Err(format!("unknown hypervisor {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CredentialKind {
    PerUserProxy,
    SharedGroupKey,
}

impl fmt::Display for CredentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CredentialKind::PerUserProxy => "per-user-proxy",
            CredentialKind::SharedGroupKey => "shared-group-key",
        })
    }
}

/// An opaque expiring token standing in for a delegated proxy or a shared
/// group access key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub owner: UserId,
    pub issued_at: SimTime,
    pub lifetime: Duration,
    pub kind: CredentialKind,
}

impl Credential {
    pub fn proxy(owner: UserId, issued_at: SimTime) -> Self {
        Self {
            owner,
            issued_at,
            lifetime: DEFAULT_PROXY_LIFETIME,
            kind: CredentialKind::PerUserProxy,
        }
    }

    pub fn group_key(owner: UserId, issued_at: SimTime) -> Self {
        Self {
            owner,
            issued_at,
            lifetime: Duration::MAX,
            kind: CredentialKind::SharedGroupKey,
        }
    }

    pub fn expiry(&self) -> SimTime {
        self.issued_at.saturating_add(self.lifetime)
    }

    pub fn is_expired(&self, now: SimTime) -> bool {
        self.expiry() <= now
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageVariant {
    pub hypervisor: Hypervisor,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VMImage {
    pub image_id: String,
    pub owner: UserId,
    pub size_gb: f64,
    pub variants: Vec<ImageVariant>,
}

impl VMImage {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |why| Err(ModelError::InvalidImage(self.image_id.clone(), why));
        if self.image_id.is_empty() {
            return err("empty image id");
        }
        if !(self.size_gb.is_finite() && self.size_gb > 0.0) {
            return err("size_gb must be positive");
        }
        if self.variants.is_empty() {
            return err("at least one variant is required");
        }
        let distinct: BTreeSet<_> = self.variants.iter().map(|v| v.hypervisor).collect();
        if distinct.len() != self.variants.len() {
            return err("variant hypervisors must be distinct");
        }
        Ok(())
    }

    pub fn variant(&self, hypervisor: Hypervisor) -> Option<&ImageVariant> {
        self.variants.iter().find(|v| v.hypervisor == hypervisor)
    }

    pub fn is_dual_hypervisor(&self) -> bool {
        self.variant(Hypervisor::Kvm).is_some() && self.variant(Hypervisor::Xen).is_some()
    }
}

/// What a job asks the cloud to boot for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRequest {
    pub cores: u32,
    pub memory_mb: u64,
    pub arch: String,
    /// Scratch ("blank space") partition, nimbus-like clouds only.
    #[serde(default)]
    pub blank_space_gb: u64,
    /// Flavor name, openstack-like clouds only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_type: Option<String>,
}

impl Default for ResourceRequest {
    fn default() -> Self {
        Self {
            cores: 1,
            memory_mb: 2048,
            arch: "x86_64".into(),
            blank_space_gb: 0,
            instance_type: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobState {
    Idle,
    Running,
    Completed,
    Held,
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The submission-side fields of a job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub owner: UserId,
    pub vm_type: String,
    #[serde(default)]
    pub request: ResourceRequest,
    #[serde(default)]
    pub submit_time: SimTime,
    pub runtime_cpu: Duration,
    #[serde(default)]
    pub io_cost: Duration,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub depends_on: BTreeSet<JobId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_constraint: Option<BTreeSet<String>>,
}

/// Where a running job sits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub vm: VmId,
    pub cloud: String,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: JobId,
    pub owner: UserId,
    pub vm_type: String,
    pub request: ResourceRequest,
    pub submit_time: SimTime,
    pub runtime_cpu: Duration,
    pub io_cost: Duration,
    pub state: JobState,
    pub depends_on: BTreeSet<JobId>,
    pub cloud_constraint: Option<BTreeSet<String>>,
    // Timing counters.
    pub attempts: u32,
    pub started_at: Option<SimTime>,
    pub first_started_at: Option<SimTime>,
    pub completed_at: Option<SimTime>,
    pub stagein_penalty: Duration,
    pub wasted_time: Duration,
    pub placement: Option<Placement>,
    pub completed_on: Option<String>,
}

impl Job {
    pub fn from_spec(job_id: JobId, spec: JobSpec, state: JobState) -> Self {
        Self {
            job_id,
            owner: spec.owner,
            vm_type: spec.vm_type,
            request: spec.request,
            submit_time: spec.submit_time,
            runtime_cpu: spec.runtime_cpu,
            io_cost: spec.io_cost,
            state,
            depends_on: spec.depends_on,
            cloud_constraint: spec.cloud_constraint,
            attempts: 0,
            started_at: None,
            first_started_at: None,
            completed_at: None,
            stagein_penalty: 0,
            wasted_time: 0,
            placement: None,
            completed_on: None,
        }
    }

    pub fn allows_cloud(&self, cloud: &str) -> bool {
        self.cloud_constraint
            .as_ref()
            .is_none_or(|allowed| allowed.contains(cloud))
    }

    /// Wallclock of the current attempt once started.
    pub fn attempt_wallclock(&self) -> Duration {
        self.runtime_cpu + self.io_cost + self.stagein_penalty
    }
}

/// Instance identifier, rendered as `{cloud}-{counter}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VmId {
    pub cloud: String,
    pub seq: u64,
}

impl VmId {
    pub fn new(cloud: impl Into<String>, seq: u64) -> Self {
        Self {
            cloud: cloud.into(),
            seq,
        }
    }
}

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.cloud, self.seq)
    }
}

impl FromStr for VmId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cloud, seq) = s
            .rsplit_once('-')
            .ok_or_else(|| ModelError::InvalidVmId(s.to_string()))?;
        let seq = seq
            .parse()
            .map_err(|_| ModelError::InvalidVmId(s.to_string()))?;
        if cloud.is_empty() {
            return Err(ModelError::InvalidVmId(s.to_string()));
        }
        Ok(Self::new(cloud, seq))
    }
}

impl TryFrom<String> for VmId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<VmId> for String {
    fn from(value: VmId) -> Self {
        value.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VmState {
    Requested,
    Booting,
    Running,
    Retiring,
    Error,
    Terminated,
}

impl VmState {
    /// The closed edge set of the instance lifecycle.
    pub fn can_transition_to(self, to: VmState) -> bool {
        use VmState::*;
        matches!(
            (self, to),
            (Requested, Booting)
                | (Booting, Running)
                | (Booting, Error)
                | (Booting, Terminated)
                | (Running, Retiring)
                | (Running, Error)
                | (Running, Terminated)
                | (Retiring, Terminated)
                | (Error, Terminated)
        )
    }

    pub fn is_alive(self) -> bool {
        self != VmState::Terminated
    }
}

impl fmt::Display for VmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VMInstance {
    pub vm_id: VmId,
    pub owner: UserId,
    pub image: String,
    pub cloud: String,
    pub hypervisor: Hypervisor,
    pub slots: u32,
    pub slot_occupancy: Vec<Option<JobId>>,
    pub booted_at: SimTime,
    pub lifetime_limit: Option<Duration>,
    pub credential: Credential,
    pub state: VmState,
    pub blank_space_gb: u64,
    pub memory_mb: u64,
}

impl VMInstance {
    pub fn occupied(&self) -> usize {
        self.slot_occupancy.iter().filter(|s| s.is_some()).count()
    }

    pub fn free_slots(&self) -> usize {
        self.slot_occupancy.len() - self.occupied()
    }

    pub fn first_free_slot(&self) -> Option<u32> {
        self.slot_occupancy
            .iter()
            .position(Option::is_none)
            .map(|i| i as u32)
    }

    pub fn jobs(&self) -> impl Iterator<Item = JobId> + '_ {
        self.slot_occupancy.iter().flatten().copied()
    }

    pub fn lifetime_end(&self) -> Option<SimTime> {
        self.lifetime_limit
            .map(|l| self.booted_at.saturating_add(l))
    }

    pub fn transition(&mut self, to: VmState) -> Result<VmState, ModelError> {
        let from = self.state;
        if !from.can_transition_to(to) {
            return Err(ModelError::IllegalTransition {
                vm: self.vm_id.clone(),
                from,
                to,
            });
        }
        self.state = to;
        Ok(from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CloudFamily {
    #[serde(rename = "nimbus-like")]
    NimbusLike,
    #[serde(rename = "openstack-like")]
    OpenstackLike,
}

impl fmt::Display for CloudFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloudFamily::NimbusLike => "nimbus-like",
            CloudFamily::OpenstackLike => "openstack-like",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum CloudStatus {
    #[default]
    Active,
    Maintenance,
}

fn default_bandwidth() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSite {
    pub name: String,
    pub family: CloudFamily,
    pub hypervisor: Hypervisor,
    pub total_cores: u32,
    pub total_memory_mb: u64,
    #[serde(default)]
    pub scratch_pool_gb: u64,
    #[serde(default = "yes")]
    pub scratch_safeguard: bool,
    #[serde(default)]
    pub status: CloudStatus,
    pub auth_mode: CredentialKind,
    #[serde(default)]
    pub boot_fixed_delay: Duration,
    #[serde(default = "default_bandwidth")]
    pub image_bandwidth_gb_per_s: f64,
    #[serde(default)]
    pub priority: i64,
    /// Shared access key configured for group authentication.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
    /// Lease override for nimbus-like instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_lifetime: Option<Duration>,
}

fn yes() -> bool {
    true
}

impl CloudSite {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |why| Err(ModelError::InvalidCloud(self.name.clone(), why));
        if self.name.is_empty() {
            return err("empty name");
        }
        if self.total_cores == 0 {
            return err("total_cores must be positive");
        }
        if self.total_memory_mb == 0 {
            return err("total_memory_mb must be positive");
        }
        if !(self.image_bandwidth_gb_per_s.is_finite() && self.image_bandwidth_gb_per_s > 0.0) {
            return err("image_bandwidth_gb_per_s must be positive");
        }
        match (self.family, self.auth_mode) {
            (CloudFamily::NimbusLike, CredentialKind::PerUserProxy)
            | (CloudFamily::OpenstackLike, CredentialKind::SharedGroupKey) => {}
            (CloudFamily::NimbusLike, _) => return err("nimbus-like clouds use per-user-proxy"),
            (CloudFamily::OpenstackLike, _) => {
                return err("openstack-like clouds use shared-group-key")
            }
        }
        if self.vm_lifetime == Some(0) {
            return err("vm_lifetime must be positive");
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.status == CloudStatus::Active
    }

    /// Lease applied to instances booted here; `None` means unlimited.
    pub fn instance_lifetime(&self) -> Option<Duration> {
        match self.family {
            CloudFamily::NimbusLike => Some(self.vm_lifetime.unwrap_or(NIMBUS_DEFAULT_LIFETIME)),
            CloudFamily::OpenstackLike => None,
        }
    }
}

/// Checks the per-family boot contract for a job on a cloud.
pub fn validate_boot_parameters(
    job: &Job,
    cloud: &CloudSite,
    image: &VMImage,
    cred: &Credential,
    now: SimTime,
) -> Result<(), BootValidationError> {
    validate_request(&job.request, cloud, image, cred, now)
}

/// Same contract, phrased over the bare resource request.
pub fn validate_request(
    request: &ResourceRequest,
    cloud: &CloudSite,
    image: &VMImage,
    cred: &Credential,
    now: SimTime,
) -> Result<(), BootValidationError> {
    use BootValidationError::*;
    match cloud.family {
        CloudFamily::NimbusLike => {
            if request.arch.is_empty() {
                return Err(MissingField("arch"));
            }
            if request.cores == 0 {
                return Err(MissingField("cores"));
            }
            if request.memory_mb == 0 {
                return Err(MissingField("memory_mb"));
            }
        }
        CloudFamily::OpenstackLike => {
            if request.instance_type.as_deref().is_none_or(str::is_empty) {
                return Err(MissingField("instance_type"));
            }
            if cloud.group_key.as_deref().is_none_or(str::is_empty) {
                return Err(MissingField("group_key"));
            }
        }
    }
    let variant = image
        .variant(cloud.hypervisor)
        .ok_or_else(|| HypervisorMismatch {
            image: image.image_id.clone(),
            hypervisor: cloud.hypervisor,
        })?;
    if cloud.family == CloudFamily::NimbusLike {
        if variant.location.is_empty() {
            return Err(MissingField("location"));
        }
        if cred.kind != CredentialKind::PerUserProxy {
            return Err(MissingField("proxy"));
        }
        if cred.is_expired(now) {
            return Err(ExpiredCredential {
                owner: cred.owner.clone(),
                expiry: cred.expiry(),
            });
        }
    }
    Ok(())
}
