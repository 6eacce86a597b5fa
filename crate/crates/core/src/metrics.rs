//! Time series samples, per-job efficiency and the end-of-run summary.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::connectors::Connectors;
use crate::matchmaker::JobQueue;
use crate::model::{Job, JobState, SimTime};

/// CPU time over total wallclock charged to the job, counting failed
/// attempts. A job that has not consumed anything yet scores 1.
pub fn job_efficiency(job: &Job) -> f64 {
    let wall = job_wallclock(job);
    if wall == 0 {
        1.0
    } else {
        job.runtime_cpu as f64 / wall as f64
    }
}

fn job_wallclock(job: &Job) -> u64 {
    job.runtime_cpu + job.io_cost + job.stagein_penalty + job.wasted_time
}

/// Σ cpu / Σ wallclock over completed jobs.
pub fn aggregate_efficiency<'a>(jobs: impl IntoIterator<Item = &'a Job>) -> f64 {
    let (cpu, wall) = jobs
        .into_iter()
        .filter(|j| j.state == JobState::Completed)
        .fold((0u64, 0u64), |(c, w), j| {
            (c + j.runtime_cpu, w + job_wallclock(j))
        });
    if wall == 0 {
        0.0
    } else {
        cpu as f64 / wall as f64
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1] as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: SimTime,
    pub running_jobs: usize,
    pub idle_jobs: usize,
    /// Live instances per cloud.
    pub per_cloud: BTreeMap<String, usize>,
    /// Live instances per user.
    pub per_user: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsRecorder {
    samples: Vec<Sample>,
    users: Vec<String>,
}

impl MetricsRecorder {
    /// `users` fixes the per-user columns so every row has the same shape.
    pub fn new(users: impl IntoIterator<Item = String>) -> Self {
        Self {
            samples: Vec::new(),
            users: users.into_iter().collect(),
        }
    }

    pub fn sample(&mut self, time: SimTime, queue: &JobQueue, clouds: &Connectors) {
        let mut per_cloud: BTreeMap<String, usize> =
            clouds.clouds().keys().map(|c| (c.clone(), 0)).collect();
        let mut per_user: BTreeMap<String, usize> =
            self.users.iter().map(|u| (u.clone(), 0)).collect();
        for inst in clouds.instances().values() {
            *per_cloud.entry(inst.cloud.clone()).or_default() += 1;
            *per_user.entry(inst.owner.to_string()).or_default() += 1;
        }
        self.samples.push(Sample {
            time,
            running_jobs: queue.count(JobState::Running),
            idle_jobs: queue.count(JobState::Idle),
            per_cloud,
            per_user,
        });
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub horizon: SimTime,
    pub end_time: SimTime,
    pub completed: usize,
    /// Jobs left unfinished when the run stopped.
    pub failed: usize,
    pub jobs_by_state: BTreeMap<String, usize>,
    pub mean_queue_wait: f64,
    pub p95_queue_wait: f64,
    pub aggregate_efficiency: f64,
    pub per_cloud_completed: BTreeMap<String, usize>,
    pub per_cloud_share: BTreeMap<String, f64>,
    pub final_instances_per_cloud: BTreeMap<String, usize>,
    /// Connector state at the end of the run.
    pub clouds: serde_json::Value,
}

impl Summary {
    pub fn empty(seed: u64, horizon: SimTime) -> Self {
        Self {
            seed,
            horizon,
            end_time: 0,
            completed: 0,
            failed: 0,
            jobs_by_state: BTreeMap::new(),
            mean_queue_wait: 0.0,
            p95_queue_wait: 0.0,
            aggregate_efficiency: 0.0,
            per_cloud_completed: BTreeMap::new(),
            per_cloud_share: BTreeMap::new(),
            final_instances_per_cloud: BTreeMap::new(),
            clouds: serde_json::Value::Object(Default::default()),
        }
    }

    pub fn compute(
        seed: u64,
        horizon: SimTime,
        end_time: SimTime,
        queue: &JobQueue,
        clouds: &Connectors,
    ) -> Self {
        let mut s = Self::empty(seed, horizon);
        s.end_time = end_time;
        for state in [
            JobState::Idle,
            JobState::Held,
            JobState::Running,
            JobState::Completed,
        ] {
            s.jobs_by_state
                .insert(state.to_string(), queue.count(state));
        }
        s.completed = queue.count(JobState::Completed);
        s.failed = queue.len() - s.completed;

        let mut waits: Vec<u64> = queue
            .iter()
            .filter_map(|j| j.first_started_at.map(|t| t.saturating_sub(j.submit_time)))
            .collect();
        waits.sort_unstable();
        if !waits.is_empty() {
            s.mean_queue_wait = waits.iter().sum::<u64>() as f64 / waits.len() as f64;
            s.p95_queue_wait = percentile(&waits, 95.0);
        }
        s.aggregate_efficiency = aggregate_efficiency(queue.iter());

        for name in clouds.clouds().keys() {
            s.per_cloud_completed.insert(name.clone(), 0);
            s.final_instances_per_cloud.insert(name.clone(), 0);
        }
        for j in queue.iter() {
            if let Some(c) = &j.completed_on {
                *s.per_cloud_completed.entry(c.clone()).or_default() += 1;
            }
        }
        for (name, &n) in &s.per_cloud_completed {
            let share = if s.completed == 0 {
                0.0
            } else {
                n as f64 / s.completed as f64
            };
            s.per_cloud_share.insert(name.clone(), share);
        }
        for inst in clouds.instances().values() {
            *s.final_instances_per_cloud
                .entry(inst.cloud.clone())
                .or_default() += 1;
        }
        s.clouds = clouds.dump_json();
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub clouds: Vec<String>,
    pub users: Vec<String>,
    pub samples: Vec<Sample>,
    pub summary: Summary,
}

impl Report {
    /// CSV with one row per sample. Per-cloud and per-user instance counts
    /// get `cloud:` and `user:` prefixed columns.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("time,running_jobs,idle_jobs");
        for c in &self.clouds {
            write!(out, ",cloud:{c}").unwrap();
        }
        for u in &self.users {
            write!(out, ",user:{u}").unwrap();
        }
        out.push('\n');
        for s in &self.samples {
            write!(out, "{},{},{}", s.time, s.running_jobs, s.idle_jobs).unwrap();
            for c in &self.clouds {
                write!(out, ",{}", s.per_cloud.get(c).copied().unwrap_or(0)).unwrap();
            }
            for u in &self.users {
                write!(out, ",{}", s.per_user.get(u).copied().unwrap_or(0)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
