//! Simulated job queue and VM booter for running batch workloads on several
//! IaaS clouds at once.
//!
//! Users submit jobs that name the VM image they need. The [`matchmaker`]
//! places idle jobs in free slots of running instances; the
//! [`cloud_scheduler`] boots, drains and kills instances so that each user's
//! demand is met fairly across clouds. The [`simulator`] drives both from a
//! declarative [`scenario`] and writes an event log plus [`metrics`].

pub mod cloud_scheduler;
pub mod connectors;
pub mod image_repo;
pub mod log;
pub mod matchmaker;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod simulator;
pub mod software_cache;

pub use cloud_scheduler::{BootRequest, PartitionPolicy, SchedulerConfig};
pub use connectors::Connectors;
pub use image_repo::ImageRepo;
pub use matchmaker::{JobQueue, Matchmaker};
pub use metrics::{Report, Summary};
pub use model::{
    CloudFamily, CloudSite, Credential, CredentialKind, Hypervisor, Job, JobSpec, JobState, UserId,
    VMImage, VMInstance, VmId, VmState,
};
pub use scenario::{Scenario, ScenarioError};
pub use simulator::{run, Engine, EventKind, RunOutput, SimError};
