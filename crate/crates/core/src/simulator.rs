//! Discrete-event engine. Events are ordered by `(time, seq)`, where `seq`
//! is the order in which they were scheduled, so a scenario and seed always
//! produce the same run.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cloud_scheduler::{
    idle_retirements, lifecycle_sweep, scheduling_cycle, BootRequest, KillReason, SchedulerConfig,
    SchedulerView, SweepAction,
};
use crate::connectors::{ConnectorError, Connectors, Termination};
use crate::image_repo::ImageRepo;
use crate::log::{Entry, EventLog};
use crate::matchmaker::{DrainOutcome, Matchmaker};
use crate::metrics::{MetricsRecorder, Report, Summary};
use crate::model::{
    CloudFamily, Credential, CredentialKind, Duration, JobId, JobSpec, JobState, SimTime, UserId,
    VmId, VmState,
};
use crate::scenario::{EngineConfig, Fault, Scenario, ScenarioError, UserEntry};
use crate::software_cache::SoftwareCache;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Connector(#[from] ConnectorError),
    #[error("cannot schedule an event at t={time}, the clock is already at t={now}")]
    TimeInPast { time: SimTime, now: SimTime },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    JobArrival(Box<JobSpec>),
    SchedulerTick,
    MatchTick,
    VMBootComplete {
        vm: VmId,
    },
    /// `attempt` guards against completions of an attempt that was lost.
    JobComplete {
        job: JobId,
        attempt: u32,
    },
    VMFail {
        vm: VmId,
    },
    VMStop {
        vm: VmId,
    },
    CloudMaintenance {
        cloud: String,
        on: bool,
        kill: bool,
    },
    /// `periodic` renewals come from the user's renewal schedule.
    CredentialRenewal {
        user: UserId,
        periodic: bool,
    },
}

impl EventKind {
    /// Background events recur forever and do not keep a run alive.
    fn is_background(&self) -> bool {
        matches!(
            self,
            EventKind::SchedulerTick
                | EventKind::MatchTick
                | EventKind::CredentialRenewal { periodic: true, .. }
        )
    }
}

#[derive(Debug, Clone)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Quiescence,
    Horizon,
}

impl EndReason {
    fn as_str(self) -> &'static str {
        match self {
            EndReason::Quiescence => "quiescence",
            EndReason::Horizon => "horizon",
        }
    }
}

pub struct Engine {
    horizon: SimTime,
    seed: u64,
    config: EngineConfig,
    scheduler: SchedulerConfig,
    rng: ChaCha8Rng,
    events: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    pending_foreground: usize,
    now: SimTime,
    processed: u64,
    cycle: u64,
    clouds: Connectors,
    matchmaker: Matchmaker,
    images: ImageRepo,
    cache: SoftwareCache,
    users: BTreeMap<UserId, UserEntry>,
    credentials: BTreeMap<UserId, Credential>,
    /// Boots promised by rebalancing, keyed by the instance they replace.
    deferred: BTreeMap<VmId, BootRequest>,
    log: EventLog,
    metrics: MetricsRecorder,
    next_sample: SimTime,
    ended: Option<(SimTime, EndReason)>,
}

impl Engine {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let jobs = scenario.expand_jobs(&mut rng);

        let mut images = ImageRepo::new();
        let mut cache = SoftwareCache::new();
        for entry in &scenario.images {
            images
                .register(entry.image(), entry.available_at())
                .expect("validated image");
            cache.set_cost(entry.image_id.clone(), entry.stagein());
        }
        let users: BTreeMap<_, _> = scenario
            .users
            .iter()
            .map(|u| (u.name.clone(), u.clone()))
            .collect();
        let credentials = users
            .values()
            .map(|u| (u.name.clone(), u.credential_at(u.credential.issued_at)))
            .collect();
        let user_names = users.keys().map(ToString::to_string);

        let mut engine = Self {
            horizon: scenario.horizon,
            seed: scenario.seed,
            config: scenario.engine.clone(),
            scheduler: scenario.scheduler.clone(),
            rng,
            events: BinaryHeap::new(),
            next_seq: 0,
            pending_foreground: 0,
            now: 0,
            processed: 0,
            cycle: 0,
            clouds: Connectors::new(scenario.clouds.iter().cloned())?,
            matchmaker: Matchmaker::new(),
            images,
            cache,
            metrics: MetricsRecorder::new(user_names),
            users,
            credentials,
            deferred: BTreeMap::new(),
            log: EventLog::default(),
            next_sample: 0,
            ended: None,
        };

        for spec in jobs {
            engine.schedule(spec.submit_time, EventKind::JobArrival(Box::new(spec)));
        }
        for fault in &scenario.faults {
            let kind = match fault {
                Fault::VMFail { vm_id, .. } => EventKind::VMFail {
                    vm: vm_id.parse().expect("validated vm id"),
                },
                Fault::VMStop { vm_id, .. } => EventKind::VMStop {
                    vm: vm_id.parse().expect("validated vm id"),
                },
                Fault::CloudMaintenance {
                    cloud,
                    on,
                    kill_instances,
                    ..
                } => EventKind::CloudMaintenance {
                    cloud: cloud.clone(),
                    on: *on,
                    kill: *kill_instances,
                },
                Fault::CredentialRenewal { user, .. } => EventKind::CredentialRenewal {
                    user: user.clone(),
                    periodic: false,
                },
            };
            engine.schedule(fault.time(), kind);
        }
        let renewals: Vec<_> = engine
            .users
            .values()
            .filter_map(|u| {
                u.renewal_period
                    .map(|p| (u.credential.issued_at + p, u.name.clone()))
            })
            .collect();
        for (t, user) in renewals {
            engine.schedule(
                t,
                EventKind::CredentialRenewal {
                    user,
                    periodic: true,
                },
            );
        }
        engine.schedule(0, EventKind::SchedulerTick);
        engine.schedule(0, EventKind::MatchTick);
        Ok(engine)
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        if !kind.is_background() {
            self.pending_foreground += 1;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Reverse(Event { time, seq, kind }));
    }

    /// Adds an event from outside the scenario, for interactive use.
    pub fn inject(&mut self, time: SimTime, kind: EventKind) -> Result<(), SimError> {
        if time < self.now {
            return Err(SimError::TimeInPast {
                time,
                now: self.now,
            });
        }
        self.schedule(time, kind);
        Ok(())
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.events.peek().map(|Reverse(e)| e.time)
    }

    pub fn connectors(&self) -> &Connectors {
        &self.clouds
    }

    pub fn matchmaker(&self) -> &Matchmaker {
        &self.matchmaker
    }

    pub fn images(&self) -> &ImageRepo {
        &self.images
    }

    pub fn credentials(&self) -> &BTreeMap<UserId, Credential> {
        &self.credentials
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn ended(&self) -> Option<(SimTime, EndReason)> {
        self.ended
    }

    fn record(&mut self, entry: Entry) {
        let seq = self.log.len() as u64;
        self.log.push(self.now, seq, entry);
    }

    fn take_samples_before(&mut self, t: SimTime) {
        while self.next_sample <= self.horizon && self.next_sample < t {
            self.metrics
                .sample(self.next_sample, self.matchmaker.queue(), &self.clouds);
            self.next_sample += self.config.sample_period;
        }
    }

    fn finish(&mut self, at: SimTime, reason: EndReason) {
        self.now = at;
        self.take_samples_before(self.horizon + 1);
        self.record(Entry::ScenarioEnd {
            seed: self.seed,
            reason: reason.as_str(),
        });
        self.ended = Some((at, reason));
    }

    fn quiescent(&self) -> bool {
        let q = self.matchmaker.queue();
        self.pending_foreground == 0
            && q.count(JobState::Idle) == 0
            && q.count(JobState::Held) == 0
            && q.count(JobState::Running) == 0
            && self.clouds.instances().is_empty()
            && self.deferred.is_empty()
    }

    /// Processes one event. Returns false once the run has ended.
    pub fn step(&mut self) -> bool {
        if self.ended.is_some() {
            return false;
        }
        let next = match self.events.peek() {
            Some(Reverse(e)) if e.time <= self.horizon => e.time,
            _ => {
                self.finish(self.horizon, EndReason::Horizon);
                return false;
            }
        };
        self.take_samples_before(next);
        let Reverse(event) = self.events.pop().expect("peeked");
        if !event.kind.is_background() {
            self.pending_foreground -= 1;
        }
        self.now = event.time;
        self.processed += 1;
        self.dispatch(event.kind);

        let instant_done = self.peek_time().is_none_or(|t| t > self.now);
        if instant_done && self.quiescent() {
            self.finish(self.now, EndReason::Quiescence);
            return false;
        }
        true
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    /// Runs to completion and hands back the log and metrics.
    pub fn finish_run(mut self) -> RunOutput {
        self.run_to_end();
        let report = self.report();
        RunOutput {
            log: self.log,
            report,
        }
    }

    pub fn report(&self) -> Report {
        let end = self.ended.map_or(self.now, |(t, _)| t);
        Report {
            clouds: self.clouds.clouds().keys().cloned().collect(),
            users: self.users.keys().map(ToString::to_string).collect(),
            samples: self.metrics.samples().to_vec(),
            summary: Summary::compute(
                self.seed,
                self.horizon,
                end,
                self.matchmaker.queue(),
                &self.clouds,
            ),
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::JobArrival(spec) => self.on_arrival(*spec),
            EventKind::SchedulerTick => self.on_scheduler_tick(),
            EventKind::MatchTick => self.on_match_tick(),
            EventKind::VMBootComplete { vm } => self.on_boot_complete(vm),
            EventKind::JobComplete { job, attempt } => self.on_job_complete(job, attempt),
            EventKind::VMFail { vm } => self.on_vm_fail(vm),
            EventKind::VMStop { vm } => self.on_vm_stop(vm),
            EventKind::CloudMaintenance { cloud, on, kill } => self.on_maintenance(cloud, on, kill),
            EventKind::CredentialRenewal { user, periodic } => self.on_renewal(user, periodic),
        }
    }

    fn on_arrival(&mut self, spec: JobSpec) {
        let owner = spec.owner.clone();
        let vm_type = spec.vm_type.clone();
        match self.matchmaker.submit(spec, &self.images, self.now) {
            Ok(job) => {
                let state = self.matchmaker.queue().get(job).expect("submitted").state;
                self.record(Entry::JobSubmitted {
                    job,
                    owner,
                    vm_type,
                    state,
                });
            }
            Err(e) => self.record(Entry::JobRejected {
                owner,
                vm_type,
                reason: e.to_string(),
            }),
        }
    }

    fn deferred_list(&self) -> Vec<BootRequest> {
        self.deferred.values().cloned().collect()
    }

    fn on_scheduler_tick(&mut self) {
        self.cycle += 1;
        let cycle = self.cycle;
        self.record(Entry::SchedulerTick { cycle });

        for (vm, action) in lifecycle_sweep(self.clouds.instances(), self.now, &self.scheduler) {
            match action {
                SweepAction::Kill(reason) => {
                    let reason = match reason {
                        KillReason::Error => "error",
                        KillReason::ProxyExpiry => "proxy-expiry",
                        KillReason::LifetimeEnd => "lifetime-end",
                    };
                    self.record(Entry::Kill {
                        vm: vm.clone(),
                        reason,
                    });
                    self.terminate(&vm);
                }
                SweepAction::Drain => self.drain(&vm, "lifetime"),
            }
        }

        let deferred = self.deferred_list();
        let view = SchedulerView {
            now: self.now,
            queue: self.matchmaker.queue(),
            clouds: self.clouds.clouds(),
            instances: self.clouds.instances(),
            images: &self.images,
            credentials: &self.credentials,
            deferred: &deferred,
        };
        let idle = idle_retirements(&view);
        for vm in idle {
            self.drain(&vm, "idle");
        }

        let deferred = self.deferred_list();
        let view = SchedulerView {
            now: self.now,
            queue: self.matchmaker.queue(),
            clouds: self.clouds.clouds(),
            instances: self.clouds.instances(),
            images: &self.images,
            credentials: &self.credentials,
            deferred: &deferred,
        };
        let decision = scheduling_cycle(&view, &self.scheduler);
        for req in decision.boots {
            self.record(Entry::BootRequest {
                cycle,
                owner: req.owner.clone(),
                image: req.image.clone(),
                cloud: req.target_cloud.clone(),
                cores: req.request.cores,
                whole_node: req.whole_node,
            });
            self.boot(&req);
        }
        if let Some(rb) = decision.rebalance {
            let from = self.clouds.instances()[&rb.retire].owner.clone();
            self.record(Entry::Rebalance {
                cycle,
                retire: rb.retire.clone(),
                from,
                to: rb.deferred.owner.clone(),
            });
            self.deferred.insert(rb.retire.clone(), rb.deferred);
            self.drain(&rb.retire, "rebalance");
        }
        let next = self.now + self.scheduler.cycle_period;
        self.schedule(next, EventKind::SchedulerTick);
    }

    fn boot(&mut self, req: &BootRequest) {
        let fail = |reason: String| Entry::BootFailed {
            owner: req.owner.clone(),
            image: req.image.clone(),
            cloud: req.target_cloud.clone(),
            reason,
        };
        let Some(image) = self.images.lookup(&req.image, self.now).cloned() else {
            self.record(fail(format!("image {} is not available", req.image)));
            return;
        };
        let Some(cred) = self.credentials.get(&req.owner).cloned() else {
            self.record(fail(format!("no credential for {}", req.owner)));
            return;
        };
        // Deferred boots are issued between cycles, so apply the same margin
        // the scheduler uses when it picks a cloud.
        let nimbus = self
            .clouds
            .cloud(&req.target_cloud)
            .is_some_and(|c| c.site.family == CloudFamily::NimbusLike);
        if nimbus && cred.expiry() <= self.now + self.scheduler.proxy_expiry_margin {
            self.record(fail(format!(
                "proxy of {} expires at {}, inside the safety margin",
                req.owner,
                cred.expiry()
            )));
            return;
        }
        match self.clouds.boot(req, &image, &cred, &self.images, self.now) {
            Ok(receipt) => {
                let inst = &self.clouds.instances()[&receipt.vm_id];
                let created = Entry::VmCreated {
                    vm: receipt.vm_id.clone(),
                    owner: inst.owner.clone(),
                    image: inst.image.clone(),
                    hypervisor: inst.hypervisor,
                    slots: inst.slots,
                    transfer: receipt.transfer_time,
                    ready_at: receipt.ready_at,
                };
                self.record(created);
                self.record(Entry::VmState {
                    vm: receipt.vm_id.clone(),
                    from: VmState::Requested,
                    to: VmState::Booting,
                });
                if receipt.scratch_overcommitted {
                    let st = &self.clouds.clouds()[&req.target_cloud];
                    let entry = Entry::ScratchOvercommit {
                        cloud: req.target_cloud.clone(),
                        committed: st.committed_scratch_gb,
                        pool: st.site.scratch_pool_gb,
                    };
                    self.record(entry);
                }
                self.schedule(
                    receipt.ready_at,
                    EventKind::VMBootComplete { vm: receipt.vm_id },
                );
            }
            Err(e) => self.record(fail(e.to_string())),
        }
    }

    fn drain(&mut self, vm: &VmId, reason: &'static str) {
        self.record(Entry::Drain {
            vm: vm.clone(),
            reason,
        });
        match self.matchmaker.drain(vm, &mut self.clouds, self.now) {
            Ok(outcome) => {
                self.record(Entry::VmState {
                    vm: vm.clone(),
                    from: VmState::Running,
                    to: VmState::Retiring,
                });
                if let DrainOutcome::Terminated(t) = outcome {
                    self.after_termination(t);
                }
            }
            Err(e) => self.record(Entry::Ignored {
                event: "Drain",
                target: e.to_string(),
            }),
        }
    }

    fn terminate(&mut self, vm: &VmId) {
        match self.clouds.terminate(vm, self.now) {
            Ok(t) => self.after_termination(t),
            Err(e) => self.record(Entry::Ignored {
                event: "Terminate",
                target: e.to_string(),
            }),
        }
    }

    fn after_termination(&mut self, t: Termination) {
        let vm = t.instance.vm_id.clone();
        self.record(Entry::VmState {
            vm: vm.clone(),
            from: t.previous,
            to: VmState::Terminated,
        });
        let wasted: Vec<(JobId, Duration)> = t
            .orphans
            .iter()
            .filter_map(|&id| {
                let job = self.matchmaker.queue().get(id)?;
                let started = job.started_at?;
                Some((id, self.now.saturating_sub(started)))
            })
            .collect();
        self.matchmaker.reschedule_orphans(&t, self.now);
        for (job, wasted) in wasted {
            self.record(Entry::JobRescheduled {
                job,
                vm: vm.clone(),
                wasted,
            });
        }
        if let Some(req) = self.deferred.remove(&vm) {
            self.record(Entry::DeferredBoot {
                owner: req.owner.clone(),
                image: req.image.clone(),
                cloud: req.target_cloud.clone(),
            });
            self.boot(&req);
        }
    }

    fn on_match_tick(&mut self) {
        self.record(Entry::MatchTick);
        let assignments = self
            .matchmaker
            .match_cycle(self.now, self.clouds.instances_mut());
        for a in assignments {
            let job = self.matchmaker.queue().get(a.job_id).expect("assigned job");
            let vm_type = job.vm_type.clone();
            let stagein = self.cache.stagein_penalty(&a.vm_id, &vm_type);
            self.matchmaker.set_stagein(a.job_id, stagein);
            let job = self.matchmaker.queue().get(a.job_id).expect("assigned job");
            let ends = self.now + job.attempt_wallclock();
            let attempt = job.attempts;
            self.record(Entry::JobStart {
                job: a.job_id,
                vm: a.vm_id,
                slot: a.slot,
                stagein,
                ends,
            });
            self.schedule(
                ends,
                EventKind::JobComplete {
                    job: a.job_id,
                    attempt,
                },
            );
        }
        self.io_faults();
        let next = self.now + self.config.match_period;
        self.schedule(next, EventKind::MatchTick);
    }

    /// Jobs on clouds whose scratch pool is over-committed may fail on I/O.
    fn io_faults(&mut self) {
        if self.config.io_fault_rate_per_hour <= 0.0 {
            return;
        }
        let p = 1.0
            - (-self.config.io_fault_rate_per_hour * self.config.match_period as f64 / 3600.0)
                .exp();
        let exposed: Vec<JobId> = self
            .clouds
            .clouds()
            .values()
            .filter(|c| c.scratch_overcommitted())
            .flat_map(|c| c.instances.iter())
            .filter_map(|id| self.clouds.instances().get(id))
            .filter(|i| matches!(i.state, VmState::Running | VmState::Retiring))
            .flat_map(|i| i.jobs())
            .collect();
        for job in exposed {
            if self.rng.gen::<f64>() >= p {
                continue;
            }
            match self.matchmaker.interrupt(job, &mut self.clouds, self.now) {
                Ok(hit) => {
                    self.record(Entry::IOFault {
                        job,
                        vm: hit.vm_id,
                        wasted: hit.wasted,
                    });
                    if let Some(t) = hit.terminated {
                        self.after_termination(t);
                    }
                }
                Err(e) => self.record(Entry::Ignored {
                    event: "IOFault",
                    target: e.to_string(),
                }),
            }
        }
    }

    fn on_boot_complete(&mut self, vm: VmId) {
        let Some(inst) = self.clouds.instances().get(&vm) else {
            return;
        };
        if inst.state != VmState::Booting {
            return;
        }
        let (image, cloud) = (inst.image.clone(), inst.cloud.clone());
        self.clouds
            .mark_running(&vm)
            .expect("booting instance can run");
        self.images.mark_cached(&image, &cloud);
        self.record(Entry::VmState {
            vm,
            from: VmState::Booting,
            to: VmState::Running,
        });
    }

    fn on_job_complete(&mut self, id: JobId, attempt: u32) {
        let Some(job) = self.matchmaker.queue().get(id) else {
            return;
        };
        if job.state != JobState::Running || job.attempts != attempt {
            return;
        }
        // Work on a broken instance is lost when the sweep kills it.
        let vm = job
            .placement
            .as_ref()
            .expect("running job is placed")
            .vm
            .clone();
        if self.clouds.instances().get(&vm).map(|i| i.state) == Some(VmState::Error) {
            return;
        }
        match self.matchmaker.complete(id, &mut self.clouds, self.now) {
            Ok(done) => {
                self.record(Entry::JobComplete {
                    job: id,
                    vm: done.vm_id,
                });
                if let Some(t) = done.terminated {
                    self.after_termination(t);
                }
                for job in done.released {
                    self.record(Entry::JobReleased { job });
                }
            }
            Err(e) => self.record(Entry::Ignored {
                event: "JobComplete",
                target: e.to_string(),
            }),
        }
    }

    fn on_vm_fail(&mut self, vm: VmId) {
        let state = self.clouds.instances().get(&vm).map(|i| i.state);
        match state {
            Some(VmState::Booting | VmState::Running) => {
                let from = self.clouds.fail(&vm).expect("legal transition");
                self.record(Entry::VmState {
                    vm,
                    from,
                    to: VmState::Error,
                });
            }
            Some(VmState::Retiring) => {
                self.record(Entry::Kill {
                    vm: vm.clone(),
                    reason: "error",
                });
                self.terminate(&vm);
            }
            _ => self.record(Entry::Ignored {
                event: "VMFail",
                target: vm.to_string(),
            }),
        }
    }

    fn on_vm_stop(&mut self, vm: VmId) {
        if self.clouds.instances().contains_key(&vm) {
            self.record(Entry::Kill {
                vm: vm.clone(),
                reason: "admin",
            });
            self.terminate(&vm);
        } else {
            self.record(Entry::Ignored {
                event: "VMStop",
                target: vm.to_string(),
            });
        }
    }

    fn on_maintenance(&mut self, cloud: String, on: bool, kill: bool) {
        if self.clouds.set_maintenance(&cloud, on).is_err() {
            self.record(Entry::Ignored {
                event: "CloudMaintenance",
                target: cloud,
            });
            return;
        }
        self.record(Entry::CloudMaintenance {
            cloud: cloud.clone(),
            on,
        });
        if on && kill {
            let victims: Vec<VmId> = self.clouds.clouds()[&cloud]
                .instances
                .iter()
                .cloned()
                .collect();
            for vm in victims {
                self.record(Entry::Kill {
                    vm: vm.clone(),
                    reason: "maintenance",
                });
                self.terminate(&vm);
            }
        }
    }

    fn on_renewal(&mut self, user: UserId, periodic: bool) {
        let Some(entry) = self.users.get(&user) else {
            self.record(Entry::Ignored {
                event: "CredentialRenewal",
                target: user.to_string(),
            });
            return;
        };
        let cred = entry.credential_at(self.now);
        let period = entry.renewal_period;
        let expiry = cred.expiry();
        for inst in self.clouds.instances_mut().values_mut() {
            if inst.owner == user && inst.credential.kind == CredentialKind::PerUserProxy {
                inst.credential = cred.clone();
            }
        }
        self.credentials.insert(user.clone(), cred);
        self.record(Entry::CredentialRenewal {
            user: user.clone(),
            expiry,
        });
        if let (true, Some(p)) = (periodic, period) {
            self.schedule(
                self.now + p,
                EventKind::CredentialRenewal { user, periodic },
            );
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: EventLog,
    pub report: Report,
}

/// Validates and runs a scenario to the end.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    Ok(Engine::new(scenario)?.finish_run())
}
