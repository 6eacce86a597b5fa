//! Declarative simulation input, stored as TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_scheduler::SchedulerConfig;
use crate::image_repo::save_duration;
use crate::model::{
    CloudSite, Credential, CredentialKind, Duration, ImageVariant, JobId, JobSpec, ResourceRequest,
    SimTime, UserId, VMImage, DEFAULT_PROXY_LIFETIME,
};
use crate::software_cache::{StageinCost, DEFAULT_COLD_STAGEIN, DEFAULT_WARM_STAGEIN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Seconds between matchmaking passes.
    pub match_period: Duration,
    /// Seconds between metrics samples.
    pub sample_period: Duration,
    /// Per running job, on clouds whose scratch pool is over-committed.
    pub io_fault_rate_per_hour: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            match_period: 10,
            sample_period: 300,
            io_fault_rate_per_hour: 0.1,
        }
    }
}

fn default_cold() -> Duration {
    DEFAULT_COLD_STAGEIN
}

fn default_warm() -> Duration {
    DEFAULT_WARM_STAGEIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub image_id: String,
    pub owner: UserId,
    pub size_gb: f64,
    pub variants: Vec<ImageVariant>,
    #[serde(default = "default_cold")]
    pub cold_stagein: Duration,
    #[serde(default = "default_warm")]
    pub warm_stagein: Duration,
    /// When set, the image is saved at this time and appears after the save
    /// completes; otherwise it is in the catalog from the start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub save_at: Option<SimTime>,
}

impl ImageEntry {
    pub fn image(&self) -> VMImage {
        VMImage {
            image_id: self.image_id.clone(),
            owner: self.owner.clone(),
            size_gb: self.size_gb,
            variants: self.variants.clone(),
        }
    }

    pub fn available_at(&self) -> SimTime {
        self.save_at.map_or(0, |t| t + save_duration(self.size_gb))
    }

    pub fn stagein(&self) -> StageinCost {
        StageinCost {
            cold_stagein: self.cold_stagein,
            warm_stagein: self.warm_stagein,
        }
    }
}

fn default_kind() -> CredentialKind {
    CredentialKind::PerUserProxy
}

fn default_lifetime() -> Duration {
    DEFAULT_PROXY_LIFETIME
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialSpec {
    #[serde(default = "default_kind")]
    pub kind: CredentialKind,
    #[serde(default)]
    pub issued_at: SimTime,
    #[serde(default = "default_lifetime")]
    pub lifetime: Duration,
}

impl Default for CredentialSpec {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            issued_at: 0,
            lifetime: default_lifetime(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub name: UserId,
    #[serde(default)]
    pub credential: CredentialSpec,
    /// Renew the proxy this often; without it the proxy simply lapses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renewal_period: Option<Duration>,
}

impl UserEntry {
    pub fn credential_at(&self, issued_at: SimTime) -> Credential {
        Credential {
            owner: self.name.clone(),
            issued_at,
            lifetime: self.credential.lifetime,
            kind: self.credential.kind,
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobEntry {
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
    /// Submit this many identical copies.
    #[serde(default = "one")]
    pub count: u32,
}

/// Produces `count` jobs, one every `interarrival` seconds from `start`, with
/// runtimes drawn uniformly from `runtime_cpu ± runtime_jitter`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub owner: UserId,
    pub vm_type: String,
    #[serde(default)]
    pub request: ResourceRequest,
    pub count: u32,
    #[serde(default)]
    pub start: SimTime,
    #[serde(default)]
    pub interarrival: Duration,
    pub runtime_cpu: Duration,
    #[serde(default)]
    pub runtime_jitter: Duration,
    #[serde(default)]
    pub io_cost: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_constraint: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub jobs: Vec<JobEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<Generator>,
}

fn yes() -> bool {
    true
}

/// Scripted disturbances and admin actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Fault {
    /// The platform reports the instance broken.
    VMFail {
        time: SimTime,
        vm_id: String,
    },
    /// Administrator stops an instance.
    VMStop {
        time: SimTime,
        vm_id: String,
    },
    CloudMaintenance {
        time: SimTime,
        cloud: String,
        #[serde(default = "yes")]
        on: bool,
        #[serde(default)]
        kill_instances: bool,
    },
    CredentialRenewal {
        time: SimTime,
        user: UserId,
    },
}

impl Fault {
    pub fn time(&self) -> SimTime {
        match self {
            Fault::VMFail { time, .. }
            | Fault::VMStop { time, .. }
            | Fault::CloudMaintenance { time, .. }
            | Fault::CredentialRenewal { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub horizon: SimTime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub clouds: Vec<CloudSite>,
    #[serde(default)]
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub users: Vec<UserEntry>,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Checks every cross-reference; all problems are reported at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut diags = Vec::new();
        let mut bad = |path: String, message: String| diags.push(Diagnostic { path, message });

        if self.horizon == 0 {
            bad("horizon".into(), "must be positive".into());
        }
        if let Err((field, msg)) = self.scheduler.validate() {
            bad(format!("scheduler.{field}"), msg);
        }
        if self.engine.match_period == 0 {
            bad("engine.match_period".into(), "must be positive".into());
        }
        if self.engine.sample_period == 0 {
            bad("engine.sample_period".into(), "must be positive".into());
        }
        if !(self.engine.io_fault_rate_per_hour.is_finite()
            && self.engine.io_fault_rate_per_hour >= 0.0)
        {
            bad(
                "engine.io_fault_rate_per_hour".into(),
                "must be non-negative".into(),
            );
        }

        let mut clouds = BTreeSet::new();
        for (i, c) in self.clouds.iter().enumerate() {
            if let Err(e) = c.validate() {
                bad(format!("clouds[{i}]"), e.to_string());
            }
            // A lease no longer than the drain margin would be killed before
            // it could be drained.
            if c.vm_lifetime
                .is_some_and(|l| l <= self.scheduler.lifetime_margin)
            {
                bad(
                    format!("clouds[{i}].vm_lifetime"),
                    format!(
                        "must exceed scheduler.lifetime_margin ({})",
                        self.scheduler.lifetime_margin
                    ),
                );
            }
            if !clouds.insert(c.name.as_str()) {
                bad(
                    format!("clouds[{i}].name"),
                    format!("duplicate cloud {:?}", c.name),
                );
            }
        }

        let mut users = BTreeMap::new();
        for (i, u) in self.users.iter().enumerate() {
            if users.insert(&u.name, i).is_some() {
                bad(
                    format!("users[{i}].name"),
                    format!("duplicate user {:?}", u.name.as_str()),
                );
            }
            if u.credential.lifetime == 0 {
                bad(
                    format!("users[{i}].credential.lifetime"),
                    "must be positive".into(),
                );
            }
            if u.renewal_period == Some(0) {
                bad(
                    format!("users[{i}].renewal_period"),
                    "must be positive".into(),
                );
            }
        }

        let mut images: BTreeMap<&str, SimTime> = BTreeMap::new();
        for (i, img) in self.images.iter().enumerate() {
            if let Err(e) = img.image().validate() {
                bad(format!("images[{i}]"), e.to_string());
            }
            if images.insert(&img.image_id, img.available_at()).is_some() {
                bad(
                    format!("images[{i}].image_id"),
                    format!("duplicate image {:?}", img.image_id),
                );
            }
        }

        let check_job = |path: &str,
                         owner: &UserId,
                         vm_type: &str,
                         request: &ResourceRequest,
                         first_submit: SimTime,
                         constraint: &Option<BTreeSet<String>>,
                         diags: &mut Vec<Diagnostic>| {
            if !users.contains_key(owner) {
                diags.push(Diagnostic {
                    path: format!("{path}.owner"),
                    message: format!("unknown user {:?}", owner.as_str()),
                });
            }
            match images.get(vm_type) {
                None => diags.push(Diagnostic {
                    path: format!("{path}.vm_type"),
                    message: format!("unknown image {vm_type:?}"),
                }),
                Some(&at) if at > first_submit => diags.push(Diagnostic {
                    path: format!("{path}.submit_time"),
                    message: format!("image {vm_type:?} is only available from t={at}"),
                }),
                _ => {}
            }
            if request.cores == 0 {
                diags.push(Diagnostic {
                    path: format!("{path}.request.cores"),
                    message: "must be at least 1".into(),
                });
            }
            for c in constraint.iter().flatten() {
                if !clouds.contains(c.as_str()) {
                    diags.push(Diagnostic {
                        path: format!("{path}.cloud_constraint"),
                        message: format!("unknown cloud {c:?}"),
                    });
                }
            }
        };

        for (i, j) in self.workload.jobs.iter().enumerate() {
            let path = format!("workload.jobs[{i}]");
            check_job(
                &path,
                &j.owner,
                &j.vm_type,
                &j.request,
                j.submit_time,
                &j.cloud_constraint,
                &mut diags,
            );
            if j.count == 0 {
                diags.push(Diagnostic {
                    path: format!("{path}.count"),
                    message: "must be at least 1".into(),
                });
            }
        }
        for (i, g) in self.workload.generators.iter().enumerate() {
            let path = format!("workload.generators[{i}]");
            check_job(
                &path,
                &g.owner,
                &g.vm_type,
                &g.request,
                g.start,
                &g.cloud_constraint,
                &mut diags,
            );
            if g.runtime_jitter > g.runtime_cpu {
                diags.push(Diagnostic {
                    path: format!("{path}.runtime_jitter"),
                    message: "must not exceed runtime_cpu".into(),
                });
            }
        }

        // Dependencies name ids in arrival order, so a parent must come first.
        for (id, origin) in self.arrival_order().into_iter().enumerate() {
            let id = id as JobId + 1;
            if let Origin::Job(i) = origin {
                for &d in &self.workload.jobs[i].depends_on {
                    if d == 0 || d >= id {
                        diags.push(Diagnostic {
                            path: format!("workload.jobs[{i}].depends_on"),
                            message: format!("job {d} is not submitted before job {id}"),
                        });
                    }
                }
            }
        }

        for (i, f) in self.faults.iter().enumerate() {
            let path = format!("faults[{i}]");
            match f {
                Fault::VMFail { vm_id, .. } | Fault::VMStop { vm_id, .. } => {
                    match vm_id.parse::<crate::model::VmId>() {
                        Ok(id) if !clouds.contains(id.cloud.as_str()) => diags.push(Diagnostic {
                            path: format!("{path}.vm_id"),
                            message: format!("unknown cloud {:?}", id.cloud),
                        }),
                        Err(e) => diags.push(Diagnostic {
                            path: format!("{path}.vm_id"),
                            message: e.to_string(),
                        }),
                        _ => {}
                    }
                }
                Fault::CloudMaintenance { cloud, .. } => {
                    if !clouds.contains(cloud.as_str()) {
                        diags.push(Diagnostic {
                            path: format!("{path}.cloud"),
                            message: format!("unknown cloud {cloud:?}"),
                        });
                    }
                }
                Fault::CredentialRenewal { user, .. } => {
                    if !users.contains_key(user) {
                        diags.push(Diagnostic {
                            path: format!("{path}.user"),
                            message: format!("unknown user {:?}", user.as_str()),
                        });
                    }
                }
            }
        }

        if diags.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(diags))
        }
    }

    /// Arrival order of every job copy (explicit entries and generated),
    /// which is also the order job ids are handed out.
    fn arrival_order(&self) -> Vec<Origin> {
        let mut items: Vec<(SimTime, usize, u32, Origin)> = Vec::new();
        for (i, j) in self.workload.jobs.iter().enumerate() {
            for k in 0..j.count {
                items.push((j.submit_time, i, k, Origin::Job(i)));
            }
        }
        let base = self.workload.jobs.len();
        for (i, g) in self.workload.generators.iter().enumerate() {
            for k in 0..g.count {
                let t = g.start + k as u64 * g.interarrival;
                items.push((t, base + i, k, Origin::Generated(i, k)));
            }
        }
        items.sort_by_key(|&(t, decl, k, _)| (t, decl, k));
        items.into_iter().map(|(.., o)| o).collect()
    }

    /// Expands the workload into concrete submissions in arrival order.
    /// Runtime jitter is drawn in declaration order, generator by generator.
    pub fn expand_jobs<R: Rng>(&self, rng: &mut R) -> Vec<JobSpec> {
        let mut runtimes: Vec<Vec<Duration>> = Vec::new();
        for g in &self.workload.generators {
            let drawn = (0..g.count)
                .map(|_| {
                    if g.runtime_jitter == 0 {
                        g.runtime_cpu
                    } else {
                        let lo = g.runtime_cpu - g.runtime_jitter;
                        rng.gen_range(lo..=g.runtime_cpu + g.runtime_jitter)
                    }
                })
                .collect();
            runtimes.push(drawn);
        }
        self.arrival_order()
            .into_iter()
            .map(|o| match o {
                Origin::Job(i) => {
                    let j = &self.workload.jobs[i];
                    JobSpec {
                        owner: j.owner.clone(),
                        vm_type: j.vm_type.clone(),
                        request: j.request.clone(),
                        submit_time: j.submit_time,
                        runtime_cpu: j.runtime_cpu,
                        io_cost: j.io_cost,
                        depends_on: j.depends_on.clone(),
                        cloud_constraint: j.cloud_constraint.clone(),
                    }
                }
                Origin::Generated(i, k) => {
                    let g = &self.workload.generators[i];
                    JobSpec {
                        owner: g.owner.clone(),
                        vm_type: g.vm_type.clone(),
                        request: g.request.clone(),
                        submit_time: g.start + k as u64 * g.interarrival,
                        runtime_cpu: runtimes[i][k as usize],
                        io_cost: g.io_cost,
                        depends_on: BTreeSet::new(),
                        cloud_constraint: g.cloud_constraint.clone(),
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Job(usize),
    Generated(usize, u32),
}
