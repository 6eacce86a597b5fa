//! The batch-system side: a FIFO job queue, periodic matching of idle jobs to
//! free slots, slot draining, orphan rescheduling and DAG gating.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::connectors::{ConnectorError, Connectors, Termination};
use crate::image_repo::ImageRepo;
use crate::model::{
    Job, JobId, JobSpec, JobState, Placement, SimTime, UserId, VMInstance, VmId, VmState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("image {0} is not in the catalog")]
    UnknownImage(String),
    #[error("dependency {0} does not name a submitted job")]
    UnknownDependency(JobId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {job} is {state}, expected {expected}")]
    JobState {
        job: JobId,
        state: JobState,
        expected: JobState,
    },
    #[error("instance {vm} is {state}")]
    InvalidState { vm: VmId, state: VmState },
    #[error(transparent)]
    Connector(#[from] ConnectorError),
}

/// All submitted jobs. Idle jobs are additionally indexed by
/// `(submit_time, job_id)`, which is the FIFO order.
#[derive(Debug, Clone, Default)]
pub struct JobQueue {
    jobs: BTreeMap<JobId, Job>,
    idle: BTreeSet<(SimTime, JobId)>,
    counts: BTreeMap<&'static str, usize>,
}

fn state_key(state: JobState) -> &'static str {
    match state {
        JobState::Idle => "Idle",
        JobState::Running => "Running",
        JobState::Completed => "Completed",
        JobState::Held => "Held",
    }
}

impl JobQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, job: Job) {
        if job.state == JobState::Idle {
            self.idle.insert((job.submit_time, job.job_id));
        }
        *self.counts.entry(state_key(job.state)).or_default() += 1;
        if let Some(old) = self.jobs.insert(job.job_id, job) {
            panic!("job {} inserted twice", old.job_id);
        }
    }

    pub fn get(&self, id: JobId) -> Option<&Job> {
        self.jobs.get(&id)
    }

    pub(crate) fn get_mut(&mut self, id: JobId) -> Option<&mut Job> {
        self.jobs.get_mut(&id)
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn count(&self, state: JobState) -> usize {
        self.counts.get(state_key(state)).copied().unwrap_or(0)
    }

    /// Idle jobs in FIFO order.
    pub fn idle_fifo(&self) -> impl Iterator<Item = &Job> + '_ {
        self.idle.iter().map(|(_, id)| &self.jobs[id])
    }

    /// Every job in (submit_time, job_id) order.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Job> + '_ {
        let mut all: Vec<&Job> = self.jobs.values().collect();
        all.sort_by_key(|j| (j.submit_time, j.job_id));
        all.into_iter()
    }

    /// Jobs by id.
    pub fn iter(&self) -> impl Iterator<Item = &Job> + '_ {
        self.jobs.values()
    }

    fn set_state(&mut self, id: JobId, to: JobState) {
        let job = self.jobs.get_mut(&id).expect("job exists");
        if job.state == JobState::Idle {
            self.idle.remove(&(job.submit_time, id));
        }
        *self.counts.get_mut(state_key(job.state)).expect("counted") -= 1;
        job.state = to;
        if to == JobState::Idle {
            self.idle.insert((job.submit_time, id));
        }
        *self.counts.entry(state_key(to)).or_default() += 1;
    }

    fn set_submit_time(&mut self, id: JobId, t: SimTime) {
        let job = self.jobs.get_mut(&id).expect("job exists");
        if job.state == JobState::Idle {
            self.idle.remove(&(job.submit_time, id));
            self.idle.insert((t, id));
        }
        job.submit_time = t;
    }

    /// One JSON object per line, FIFO order.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for job in self.iter_fifo() {
            out.push_str(&serde_json::to_string(job).expect("job serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub job_id: JobId,
    pub vm_id: VmId,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DrainOutcome {
    Retiring,
    Terminated(Termination),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub vm_id: VmId,
    /// Present when this completion emptied a retiring instance.
    pub terminated: Option<Termination>,
    pub released: Vec<JobId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interruption {
    pub vm_id: VmId,
    pub wasted: u64,
    pub terminated: Option<Termination>,
}

#[derive(Debug, Clone, Default)]
pub struct Matchmaker {
    queue: JobQueue,
    next_id: JobId,
    children: BTreeMap<JobId, Vec<JobId>>,
}

impl Matchmaker {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Default::default()
        }
    }

    pub fn queue(&self) -> &JobQueue {
        &self.queue
    }

    pub fn submit(
        &mut self,
        spec: JobSpec,
        images: &ImageRepo,
        now: SimTime,
    ) -> Result<JobId, MatchError> {
        if images.lookup(&spec.vm_type, now).is_none() {
            return Err(MatchError::UnknownImage(spec.vm_type));
        }
        if let Some(&bad) = spec
            .depends_on
            .iter()
            .find(|d| !self.queue.jobs.contains_key(d))
        {
            return Err(MatchError::UnknownDependency(bad));
        }
        let held = spec
            .depends_on
            .iter()
            .any(|d| self.queue.jobs[d].state != JobState::Completed);
        let id = self.next_id;
        self.next_id += 1;
        for &parent in &spec.depends_on {
            self.children.entry(parent).or_default().push(id);
        }
        let state = if held { JobState::Held } else { JobState::Idle };
        self.queue.insert(Job::from_spec(id, spec, state));
        Ok(id)
    }

    /// Assigns idle jobs, oldest first, to the first free slot of a running
    /// instance with the same owner and image that the job's cloud constraint
    /// admits.
    pub fn match_cycle(
        &mut self,
        now: SimTime,
        instances: &mut BTreeMap<VmId, VMInstance>,
    ) -> Vec<Assignment> {
        let mut free: BTreeMap<(UserId, String), Vec<VmId>> = BTreeMap::new();
        for inst in instances.values() {
            if inst.state == VmState::Running && inst.free_slots() > 0 {
                free.entry((inst.owner.clone(), inst.image.clone()))
                    .or_default()
                    .push(inst.vm_id.clone());
            }
        }
        if free.is_empty() {
            return Vec::new();
        }
        let idle: Vec<JobId> = self.queue.idle_fifo().map(|j| j.job_id).collect();
        let mut out = Vec::new();
        for id in idle {
            let job = &self.queue.jobs[&id];
            let key = (job.owner.clone(), job.vm_type.clone());
            let Some(vms) = free.get_mut(&key) else {
                continue;
            };
            let Some(pos) = vms.iter().position(|vm| job.allows_cloud(&vm.cloud)) else {
                continue;
            };
            let inst = instances.get_mut(&vms[pos]).expect("indexed instance");
            let slot = inst
                .first_free_slot()
                .expect("indexed instance has a free slot");
            inst.slot_occupancy[slot as usize] = Some(id);
            if inst.free_slots() == 0 {
                vms.remove(pos);
            }
            let placement = Placement {
                vm: inst.vm_id.clone(),
                cloud: inst.cloud.clone(),
                slot,
            };
            self.queue.set_state(id, JobState::Running);
            let job = self.queue.get_mut(id).expect("job exists");
            job.attempts += 1;
            job.started_at = Some(now);
            job.first_started_at.get_or_insert(now);
            job.stagein_penalty = 0;
            job.placement = Some(placement.clone());
            out.push(Assignment {
                job_id: id,
                vm_id: placement.vm,
                slot,
            });
        }
        out
    }

    pub fn set_stagein(&mut self, job: JobId, penalty: u64) {
        if let Some(j) = self.queue.get_mut(job) {
            j.stagein_penalty = penalty;
        }
    }

    /// Stops new jobs from landing on the instance and lets current ones
    /// finish; an instance with nothing running is shut down straight away.
    pub fn drain(
        &mut self,
        vm: &VmId,
        clouds: &mut Connectors,
        now: SimTime,
    ) -> Result<DrainOutcome, MatchError> {
        let inst = clouds
            .instances()
            .get(vm)
            .ok_or_else(|| ConnectorError::UnknownInstance(vm.clone()))?;
        if inst.state != VmState::Running {
            return Err(MatchError::InvalidState {
                vm: vm.clone(),
                state: inst.state,
            });
        }
        let empty = inst.occupied() == 0;
        clouds.set_state(vm, VmState::Retiring)?;
        if empty {
            Ok(DrainOutcome::Terminated(clouds.terminate(vm, now)?))
        } else {
            Ok(DrainOutcome::Retiring)
        }
    }

    fn vacate(
        &mut self,
        id: JobId,
        clouds: &mut Connectors,
        now: SimTime,
    ) -> Result<(VmId, Option<Termination>), MatchError> {
        let job = self.queue.get(id).ok_or(MatchError::UnknownJob(id))?;
        if job.state != JobState::Running {
            return Err(MatchError::JobState {
                job: id,
                state: job.state,
                expected: JobState::Running,
            });
        }
        let placement = job.placement.clone().expect("running job is placed");
        let inst = clouds
            .instances_mut()
            .get_mut(&placement.vm)
            .ok_or_else(|| ConnectorError::UnknownInstance(placement.vm.clone()))?;
        inst.slot_occupancy[placement.slot as usize] = None;
        let terminated = if inst.state == VmState::Retiring && inst.occupied() == 0 {
            Some(clouds.terminate(&placement.vm, now)?)
        } else {
            None
        };
        Ok((placement.vm, terminated))
    }

    pub fn complete(
        &mut self,
        id: JobId,
        clouds: &mut Connectors,
        now: SimTime,
    ) -> Result<Completion, MatchError> {
        let (vm_id, terminated) = self.vacate(id, clouds, now)?;
        self.queue.set_state(id, JobState::Completed);
        let job = self.queue.get_mut(id).expect("job exists");
        job.completed_at = Some(now);
        job.completed_on = job.placement.take().map(|p| p.cloud);
        let released = self.release_dag_children(id, now);
        Ok(Completion {
            vm_id,
            terminated,
            released,
        })
    }

    /// A running job failed in place (the instance stays up); it goes back to
    /// the queue at its original position.
    pub fn interrupt(
        &mut self,
        id: JobId,
        clouds: &mut Connectors,
        now: SimTime,
    ) -> Result<Interruption, MatchError> {
        let (vm_id, terminated) = self.vacate(id, clouds, now)?;
        let wasted = self.requeue(id, now);
        Ok(Interruption {
            vm_id,
            wasted,
            terminated,
        })
    }

    fn requeue(&mut self, id: JobId, now: SimTime) -> u64 {
        self.queue.set_state(id, JobState::Idle);
        let job = self.queue.get_mut(id).expect("job exists");
        let wasted = job.started_at.map_or(0, |s| now.saturating_sub(s));
        job.wasted_time += wasted;
        job.started_at = None;
        job.stagein_penalty = 0;
        job.placement = None;
        wasted
    }

    /// Jobs that were running on a lost instance return to Idle at their
    /// original FIFO position; the elapsed part of the attempt is charged as
    /// wasted time.
    pub fn reschedule_orphans(&mut self, lost: &Termination, now: SimTime) -> Vec<JobId> {
        let mut out = Vec::new();
        for &id in &lost.orphans {
            if self
                .queue
                .get(id)
                .is_some_and(|j| j.state == JobState::Running)
            {
                self.requeue(id, now);
                out.push(id);
            }
        }
        out
    }

    /// Releases held children whose parents have all completed. Released jobs
    /// enter the queue as if submitted now.
    pub fn release_dag_children(&mut self, completed: JobId, now: SimTime) -> Vec<JobId> {
        let Some(children) = self.children.get(&completed).cloned() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for child in children {
            let job = &self.queue.jobs[&child];
            if job.state != JobState::Held {
                continue;
            }
            let ready = job
                .depends_on
                .iter()
                .all(|p| self.queue.jobs[p].state == JobState::Completed);
            if ready {
                self.queue.set_submit_time(child, now);
                self.queue.set_state(child, JobState::Idle);
                out.push(child);
            }
        }
        out
    }
}
