//! Replayable event log. Each record renders as one line
//! `time seq Kind key=value ...`; two runs of the same scenario and seed
//! produce byte-identical text.

use std::fmt;

use crate::model::{Hypervisor, JobId, JobState, SimTime, UserId, VmId, VmState};

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    SchedulerTick {
        cycle: u64,
    },
    MatchTick,
    JobSubmitted {
        job: JobId,
        owner: UserId,
        vm_type: String,
        state: JobState,
    },
    JobRejected {
        owner: UserId,
        vm_type: String,
        reason: String,
    },
    BootRequest {
        cycle: u64,
        owner: UserId,
        image: String,
        cloud: String,
        cores: u32,
        whole_node: bool,
    },
    BootFailed {
        owner: UserId,
        image: String,
        cloud: String,
        reason: String,
    },
    VmCreated {
        vm: VmId,
        owner: UserId,
        image: String,
        hypervisor: Hypervisor,
        slots: u32,
        transfer: u64,
        ready_at: SimTime,
    },
    VmState {
        vm: VmId,
        from: VmState,
        to: VmState,
    },
    ScratchOvercommit {
        cloud: String,
        committed: u64,
        pool: u64,
    },
    JobStart {
        job: JobId,
        vm: VmId,
        slot: u32,
        stagein: u64,
        ends: SimTime,
    },
    JobComplete {
        job: JobId,
        vm: VmId,
    },
    JobRescheduled {
        job: JobId,
        vm: VmId,
        wasted: u64,
    },
    JobReleased {
        job: JobId,
    },
    Drain {
        vm: VmId,
        reason: &'static str,
    },
    Kill {
        vm: VmId,
        reason: &'static str,
    },
    Rebalance {
        cycle: u64,
        retire: VmId,
        from: UserId,
        to: UserId,
    },
    DeferredBoot {
        owner: UserId,
        image: String,
        cloud: String,
    },
    IOFault {
        job: JobId,
        vm: VmId,
        wasted: u64,
    },
    CloudMaintenance {
        cloud: String,
        on: bool,
    },
    CredentialRenewal {
        user: UserId,
        expiry: SimTime,
    },
    Ignored {
        event: &'static str,
        target: String,
    },
    ScenarioEnd {
        seed: u64,
        reason: &'static str,
    },
}

impl Entry {
    pub fn kind(&self) -> &'static str {
        match self {
            Entry::SchedulerTick { .. } => "SchedulerTick",
            Entry::MatchTick => "MatchTick",
            Entry::JobSubmitted { .. } => "JobSubmitted",
            Entry::JobRejected { .. } => "JobRejected",
            Entry::BootRequest { .. } => "BootRequest",
            Entry::BootFailed { .. } => "BootFailed",
            Entry::VmCreated { .. } => "VmCreated",
            Entry::VmState { .. } => "VmState",
            Entry::ScratchOvercommit { .. } => "ScratchOvercommit",
            Entry::JobStart { .. } => "JobStart",
            Entry::JobComplete { .. } => "JobComplete",
            Entry::JobRescheduled { .. } => "JobRescheduled",
            Entry::JobReleased { .. } => "JobReleased",
            Entry::Drain { .. } => "Drain",
            Entry::Kill { .. } => "Kill",
            Entry::Rebalance { .. } => "Rebalance",
            Entry::DeferredBoot { .. } => "DeferredBoot",
            Entry::IOFault { .. } => "IOFault",
            Entry::CloudMaintenance { .. } => "CloudMaintenance",
            Entry::CredentialRenewal { .. } => "CredentialRenewal",
            Entry::Ignored { .. } => "Ignored",
            Entry::ScenarioEnd { .. } => "ScenarioEnd",
        }
    }

    pub fn is_tick(&self) -> bool {
        matches!(self, Entry::SchedulerTick { .. } | Entry::MatchTick)
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())?;
        match self {
            Entry::SchedulerTick { cycle } => write!(f, " cycle={cycle}"),
            Entry::MatchTick => Ok(()),
            Entry::JobSubmitted { job, owner, vm_type, state } => {
                write!(f, " job={job} owner={owner} vm_type={vm_type} state={state}")
            }
            Entry::JobRejected { owner, vm_type, reason } => {
                write!(f, " owner={owner} vm_type={vm_type} reason={reason:?}")
            }
            Entry::BootRequest { cycle, owner, image, cloud, cores, whole_node } => write!(
                f,
                " cycle={cycle} owner={owner} image={image} cloud={cloud} cores={cores} whole_node={whole_node}"
            ),
            Entry::BootFailed { owner, image, cloud, reason } => {
                write!(f, " owner={owner} image={image} cloud={cloud} reason={reason:?}")
            }
            Entry::VmCreated { vm, owner, image, hypervisor, slots, transfer, ready_at } => write!(
                f,
                " vm={vm} owner={owner} image={image} hypervisor={hypervisor} slots={slots} transfer={transfer} ready_at={ready_at}"
            ),
            Entry::VmState { vm, from, to } => write!(f, " vm={vm} from={from} to={to}"),
            Entry::ScratchOvercommit { cloud, committed, pool } => {
                write!(f, " cloud={cloud} committed={committed} pool={pool}")
            }
            Entry::JobStart { job, vm, slot, stagein, ends } => {
                write!(f, " job={job} vm={vm} slot={slot} stagein={stagein} ends={ends}")
            }
            Entry::JobComplete { job, vm } => write!(f, " job={job} vm={vm}"),
            Entry::JobRescheduled { job, vm, wasted } => {
                write!(f, " job={job} vm={vm} wasted={wasted}")
            }
            Entry::JobReleased { job } => write!(f, " job={job}"),
            Entry::Drain { vm, reason } | Entry::Kill { vm, reason } => {
                write!(f, " vm={vm} reason={reason}")
            }
            Entry::Rebalance { cycle, retire, from, to } => {
                write!(f, " cycle={cycle} retire={retire} from={from} to={to}")
            }
            Entry::DeferredBoot { owner, image, cloud } => {
                write!(f, " owner={owner} image={image} cloud={cloud}")
            }
            Entry::IOFault { job, vm, wasted } => write!(f, " job={job} vm={vm} wasted={wasted}"),
            Entry::CloudMaintenance { cloud, on } => write!(f, " cloud={cloud} on={on}"),
            Entry::CredentialRenewal { user, expiry } => write!(f, " user={user} expiry={expiry}"),
            Entry::Ignored { event, target } => write!(f, " event={event} target={target:?}"),
            Entry::ScenarioEnd { seed, reason } => write!(f, " seed={seed} reason={reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time: SimTime,
    pub seq: u64,
    pub entry: Entry,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time, self.seq, self.entry)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn push(&mut self, time: SimTime, seq: u64, entry: Entry) {
        self.records.push(LogRecord { time, seq, entry });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Newline-terminated text form.
    pub fn to_text(&self) -> String {
        use fmt::Write;
        let mut out = String::with_capacity(self.records.len() * 48);
        for r in &self.records {
            writeln!(out, "{r}").expect("writing to a String");
        }
        out
    }
}
