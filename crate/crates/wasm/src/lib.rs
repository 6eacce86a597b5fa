//! Browser bindings for the scheduler demo page.
//!
//! Each operation has a plain Rust form returning JSON so it can be tested
//! natively, and a thin `#[wasm_bindgen]` wrapper for the page.

use std::collections::BTreeMap;

use cloudsched::{Engine, Scenario};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// The five-cloud five-day scenario used as the page's starting point.
pub const FIVE_DAY_SCENARIO: &str = include_str!("../../../scenarios/five_day.scenario");

#[derive(Serialize)]
struct SimulateOut {
    clouds: Vec<String>,
    users: Vec<String>,
    times: Vec<u64>,
    running_jobs: Vec<usize>,
    per_cloud: BTreeMap<String, Vec<usize>>,
    per_user: BTreeMap<String, Vec<usize>>,
    summary: cloudsched::Summary,
    log_lines: usize,
    log_head: Vec<String>,
}

/// Runs a TOML scenario and returns its time series and summary as JSON.
pub fn simulate_json(scenario_toml: &str, seed: Option<u64>) -> Result<String, String> {
    let mut scenario = Scenario::from_toml(scenario_toml).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let out = cloudsched::run(&scenario).map_err(|e| e.to_string())?;
    let r = out.report;
    let mut summary = r.summary;
    summary.clouds = serde_json::Value::Null;
    let series = |pick: &dyn Fn(&cloudsched::metrics::Sample, &str) -> usize, keys: &[String]| {
        keys.iter()
            .map(|k| (k.clone(), r.samples.iter().map(|s| pick(s, k)).collect()))
            .collect::<BTreeMap<_, Vec<_>>>()
    };
    let result = SimulateOut {
        per_cloud: series(&|s, k| s.per_cloud.get(k).copied().unwrap_or(0), &r.clouds),
        per_user: series(&|s, k| s.per_user.get(k).copied().unwrap_or(0), &r.users),
        times: r.samples.iter().map(|s| s.time).collect(),
        running_jobs: r.samples.iter().map(|s| s.running_jobs).collect(),
        clouds: r.clouds,
        users: r.users,
        summary,
        log_lines: out.log.len(),
        log_head: out
            .log
            .records()
            .iter()
            .take(200)
            .map(|l| l.to_string())
            .collect(),
    };
    Ok(serde_json::to_string(&result).expect("result serializes"))
}

#[derive(Serialize)]
struct CycleRow {
    cycle: u64,
    time: u64,
    instances: BTreeMap<String, usize>,
}

/// Steps a single cloud cycle by cycle while `users` compete for it, each
/// with `jobs_per_user` whole-node jobs. User `i` submits at `i * stagger`.
pub fn fairness_json(
    users: u32,
    jobs_per_user: u32,
    cloud_nodes: u32,
    stagger: u64,
    cycles: u64,
) -> Result<String, String> {
    if !(1..=8).contains(&users) || cloud_nodes == 0 || cloud_nodes > 64 || cycles > 2_000 {
        return Err("users must be 1..=8, nodes 1..=64 and cycles at most 2000".into());
    }
    let names: Vec<String> = (0..users).map(|i| format!("user{}", i + 1)).collect();
    let mut text = format!(
        r#"horizon = 864000
seed = 1

[[clouds]]
name = "cloud"
family = "openstack-like"
hypervisor = "kvm"
total_cores = {}
total_memory_mb = {}
auth_mode = "shared-group-key"
group_key = "demo"

[[images]]
image_id = "sim"
owner = "ops"
size_gb = 2.0
variants = [{{ hypervisor = "kvm", location = "https://images.test/sim.kvm" }}]
"#,
        8 * cloud_nodes,
        32_768 * cloud_nodes as u64
    );
    for (i, name) in names.iter().enumerate() {
        text += &format!(
            r#"
[[users]]
name = {name:?}

[[workload.jobs]]
owner = {name:?}
vm_type = "sim"
request = {{ cores = 8, memory_mb = 16384, arch = "x86_64", instance_type = "c8.xlarge" }}
submit_time = {}
runtime_cpu = 36000
count = {jobs_per_user}
"#,
            i as u64 * stagger
        );
    }
    let scenario = Scenario::from_toml(&text).map_err(|e| e.to_string())?;
    let mut engine = Engine::new(&scenario).map_err(|e| e.to_string())?;
    let period = scenario.scheduler.cycle_period;
    let mut rows = Vec::new();
    for cycle in 1..=cycles {
        let cutoff = (cycle - 1) * period;
        while engine.peek_time().is_some_and(|t| t <= cutoff) && engine.step() {}
        let mut instances: BTreeMap<String, usize> = names.iter().map(|n| (n.clone(), 0)).collect();
        for inst in engine.connectors().instances().values() {
            if inst.state != cloudsched::VmState::Retiring {
                *instances.entry(inst.owner.to_string()).or_default() += 1;
            }
        }
        rows.push(CycleRow {
            cycle,
            time: cutoff,
            instances,
        });
    }
    Ok(serde_json::to_string(&rows).expect("rows serialize"))
}

#[derive(Serialize)]
struct EfficiencyOut {
    analytic: f64,
    simulated: f64,
    instances: usize,
    completed: usize,
}

/// Aggregate efficiency of `jobs` identical whole-core jobs on one cloud of
/// `cores` cores, analytically and by simulation.
pub fn efficiency_json(
    jobs: u32,
    cores: u32,
    runtime: u64,
    io: u64,
    cold_stagein: u64,
) -> Result<String, String> {
    if jobs == 0 || jobs > 2_000 || cores < 8 || cores > 512 || runtime == 0 {
        return Err("need 1..=2000 jobs, 8..=512 cores and a positive runtime".into());
    }
    let scenario = Scenario::from_toml(&format!(
        r#"horizon = 3000000
seed = 1

[[clouds]]
name = "cloud"
family = "openstack-like"
hypervisor = "kvm"
total_cores = {cores}
total_memory_mb = {}
auth_mode = "shared-group-key"
group_key = "demo"

[[images]]
image_id = "sim"
owner = "ops"
size_gb = 2.0
variants = [{{ hypervisor = "kvm", location = "https://images.test/sim.kvm" }}]
cold_stagein = {cold_stagein}

[[users]]
name = "alice"

[[workload.jobs]]
owner = "alice"
vm_type = "sim"
request = {{ cores = 8, memory_mb = 16384, arch = "x86_64", instance_type = "c8.xlarge" }}
runtime_cpu = {runtime}
io_cost = {io}
count = {jobs}
"#,
        cores as u64 * 4096
    ))
    .map_err(|e| e.to_string())?;
    scenario.validate().map_err(|e| e.to_string())?;
    let out = cloudsched::run(&scenario).map_err(|e| e.to_string())?;
    let instances = out
        .log
        .records()
        .iter()
        .filter(|r| r.entry.kind() == "VmCreated")
        .count();
    // Each instance pays one cold stage-in, every other start is warm.
    let cpu = jobs as f64 * runtime as f64;
    let wall = cpu + jobs as f64 * io as f64 + instances as f64 * cold_stagein as f64;
    let result = EfficiencyOut {
        analytic: cpu / wall,
        simulated: out.report.summary.aggregate_efficiency,
        instances,
        completed: out.report.summary.completed,
    };
    Ok(serde_json::to_string(&result).expect("result serializes"))
}

#[wasm_bindgen]
pub fn five_day_scenario() -> String {
    FIVE_DAY_SCENARIO.to_string()
}

// JS numbers map cleanly onto u32, so the exported signatures avoid u64.

#[wasm_bindgen]
pub fn simulate(scenario_toml: &str, seed: Option<u32>) -> Result<String, JsError> {
    simulate_json(scenario_toml, seed.map(u64::from)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fairness(
    users: u32,
    jobs_per_user: u32,
    cloud_nodes: u32,
    stagger: u32,
    cycles: u32,
) -> Result<String, JsError> {
    fairness_json(
        users,
        jobs_per_user,
        cloud_nodes,
        stagger.into(),
        cycles.into(),
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn efficiency(
    jobs: u32,
    cores: u32,
    runtime: u32,
    io: u32,
    cold_stagein: u32,
) -> Result<String, JsError> {
    efficiency_json(jobs, cores, runtime.into(), io.into(), cold_stagein.into())
        .map_err(|e| JsError::new(&e))
}
