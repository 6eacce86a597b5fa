//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;

use cloudsched::cloud_scheduler::{
    scheduling_cycle, BootRequest, PartitionPolicy, SchedulerConfig, SchedulerView,
};
use cloudsched::connectors::{scratch_for, ConnectorError, Connectors};
use cloudsched::image_repo::ImageRepo;
use cloudsched::matchmaker::Matchmaker;
use cloudsched::model::{
    validate_request, CloudFamily, CloudSite, CloudStatus, Credential, CredentialKind, Hypervisor,
    ImageVariant, JobSpec, ResourceRequest, SimTime, UserId, VMInstance, VmId, VmState,
};
use cloudsched::scenario::{
    CredentialSpec, EngineConfig, Fault, Generator, ImageEntry, JobEntry, UserEntry, Workload,
};
use cloudsched::{Engine, Scenario};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- builders

fn uid(name: &str) -> UserId {
    UserId::new(name).unwrap()
}

fn site(name: &str, family: CloudFamily, hv: Hypervisor, cores: u32) -> CloudSite {
    CloudSite {
        name: name.into(),
        family,
        hypervisor: hv,
        total_cores: cores,
        total_memory_mb: cores as u64 * 4096,
        scratch_pool_gb: 1000,
        scratch_safeguard: true,
        status: CloudStatus::Active,
        auth_mode: match family {
            CloudFamily::NimbusLike => CredentialKind::PerUserProxy,
            CloudFamily::OpenstackLike => CredentialKind::SharedGroupKey,
        },
        boot_fixed_delay: 120,
        image_bandwidth_gb_per_s: 0.05,
        priority: 0,
        group_key: (family == CloudFamily::OpenstackLike).then(|| "grp".into()),
        vm_lifetime: None,
    }
}

fn image(id: &str, hvs: &[Hypervisor]) -> ImageEntry {
    ImageEntry {
        image_id: id.into(),
        owner: uid("ops"),
        size_gb: 2.0,
        variants: hvs
            .iter()
            .map(|&hypervisor| ImageVariant {
                hypervisor,
                location: format!("https://images.test/{id}.{hypervisor}"),
            })
            .collect(),
        cold_stagein: 300,
        warm_stagein: 0,
        save_at: None,
    }
}

fn user(name: &str, renewal: Option<u64>) -> UserEntry {
    UserEntry {
        name: uid(name),
        credential: CredentialSpec::default(),
        renewal_period: renewal,
    }
}

fn request(cores: u32) -> ResourceRequest {
    ResourceRequest {
        cores,
        memory_mb: cores as u64 * 2048,
        arch: "x86_64".into(),
        blank_space_gb: 0,
        instance_type: Some("c8.xlarge".into()),
    }
}

fn jobs(owner: &str, vm_type: &str, count: u32, submit_time: SimTime, runtime: u64) -> JobEntry {
    JobEntry {
        owner: uid(owner),
        vm_type: vm_type.into(),
        request: request(8),
        submit_time,
        runtime_cpu: runtime,
        io_cost: 0,
        depends_on: BTreeSet::new(),
        cloud_constraint: None,
        count,
    }
}

fn scenario(
    horizon: SimTime,
    clouds: Vec<CloudSite>,
    images: Vec<ImageEntry>,
    users: Vec<UserEntry>,
    jobs: Vec<JobEntry>,
) -> Scenario {
    Scenario {
        horizon,
        seed: 1,
        engine: EngineConfig::default(),
        scheduler: SchedulerConfig::default(),
        clouds,
        images,
        users,
        workload: Workload {
            jobs,
            generators: Vec::new(),
        },
        faults: Vec::new(),
    }
}

fn live_per_user(engine: &Engine, include_retiring: bool) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for inst in engine.connectors().instances().values() {
        if include_retiring || inst.state != VmState::Retiring {
            *out.entry(inst.owner.to_string()).or_insert(0) += 1;
        }
    }
    out
}

/// Splits a log line into (time, kind, fields).
fn parse_line(line: &str) -> (SimTime, &str, BTreeMap<&str, &str>) {
    let mut parts = line.split(' ');
    let time = parts.next().unwrap().parse().unwrap();
    let _seq = parts.next();
    let kind = parts.next().unwrap();
    let fields = parts.filter_map(|p| p.split_once('=')).collect();
    (time, kind, fields)
}

fn count_kind(log: &str, kind: &str) -> usize {
    log.lines().filter(|l| parse_line(l).1 == kind).count()
}

// ------------------------------------------------------------- criteria

/// Three users with 50 identical jobs each share six whole-node slots.
fn fairness() -> Check {
    let names = ["alice", "bob", "carol"];
    let mut orders = 0;
    for perm in permutations(&names) {
        let mut s = scenario(
            86_400,
            vec![
                site("east", CloudFamily::NimbusLike, Hypervisor::Xen, 24),
                site("west", CloudFamily::OpenstackLike, Hypervisor::Kvm, 24),
            ],
            vec![image("sim", &[Hypervisor::Xen, Hypervisor::Kvm])],
            names.iter().map(|n| user(n, None)).collect(),
            perm.iter().map(|u| jobs(u, "sim", 50, 0, 36_000)).collect(),
        );
        s.seed = orders;
        let mut engine = Engine::new(&s).map_err(|e| e.to_string())?;
        let sixth_cycle = 5 * s.scheduler.cycle_period;
        while engine.peek_time().is_some_and(|t| t <= sixth_cycle) {
            engine.step();
        }
        ensure(engine.cycle() == 6, || {
            format!("ran {} cycles", engine.cycle())
        })?;
        let counts = live_per_user(&engine, true);
        let expected: BTreeMap<String, usize> = names.iter().map(|n| (n.to_string(), 2)).collect();
        ensure(counts == expected, || {
            format!("order {perm:?}: counts {counts:?}")
        })?;
        orders += 1;
    }
    Ok(format!(
        "2/2/2 after 6 cycles for all {orders} submission orders"
    ))
}

fn permutations<'a>(items: &[&'a str]) -> Vec<Vec<&'a str>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// User A fills the cloud, then user B arrives with 50 jobs.
fn rebalance_convergence() -> Check {
    let s = scenario(
        200_000,
        vec![site(
            "west",
            CloudFamily::OpenstackLike,
            Hypervisor::Kvm,
            48,
        )],
        vec![image("sim", &[Hypervisor::Kvm])],
        vec![user("a", None), user("b", None)],
        vec![
            jobs("a", "sim", 100, 0, 14_400),
            jobs("b", "sim", 50, 3_600, 14_400),
        ],
    );
    let mut engine = Engine::new(&s).map_err(|e| e.to_string())?;
    while engine.peek_time().is_some_and(|t| t < 3_600) {
        engine.step();
    }
    let before = live_per_user(&engine, true);
    ensure(
        before.get("a") == Some(&6) && before.get("b").is_none(),
        || format!("before B arrives: {before:?}"),
    )?;
    ensure(
        engine
            .connectors()
            .instances()
            .values()
            .all(|i| i.state == VmState::Running),
        || "A's instances are not all running".into(),
    )?;

    while engine.peek_time().is_some_and(|t| t <= 40_000) {
        engine.step();
    }
    let counts = live_per_user(&engine, false);
    ensure(
        counts.get("a") == Some(&3) && counts.get("b") == Some(&3),
        || format!("counts at t=40000: {counts:?}"),
    )?;
    engine.run_to_end();

    let log = engine.log().to_text();
    let lines: Vec<_> = log.lines().map(parse_line).collect();
    let rebalances: Vec<&str> = lines
        .iter()
        .filter(|(_, k, _)| *k == "Rebalance")
        .map(|(_, _, f)| f["retire"])
        .collect();
    let drains: Vec<&str> = lines
        .iter()
        .filter(|(_, k, f)| *k == "Drain" && f["reason"] == "rebalance")
        .map(|(_, _, f)| f["vm"])
        .collect();
    ensure(!rebalances.is_empty() && rebalances.len() <= 6, || {
        format!("{} rebalances", rebalances.len())
    })?;
    ensure(rebalances == drains, || {
        format!("rebalances {rebalances:?} vs drains {drains:?}")
    })?;
    let killed = count_kind(&log, "JobRescheduled");
    ensure(killed == 0, || format!("{killed} jobs lost"))?;
    for vm in &rebalances {
        let retired = lines.iter().any(|(_, k, f)| {
            *k == "VmState" && f["vm"] == *vm && f["from"] == "Retiring" && f["to"] == "Terminated"
        });
        ensure(retired, || format!("{vm} never finished draining"))?;
    }
    Ok(format!(
        "3/3 reached after {} rebalances, one drain each, 0 jobs killed",
        rebalances.len()
    ))
}

fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = 8 * 86_400;
    let mut scheduler = SchedulerConfig::default();
    scheduler.proxy_expiry_margin = rng.gen_range(60..=3_600);
    scheduler.lifetime_margin = rng.gen_range(60..=7_200);
    if rng.gen_bool(0.5) {
        scheduler.partition_policy = PartitionPolicy::SeparateSingleCoreAndWholeNode;
    }

    let hvs = [Hypervisor::Xen, Hypervisor::Kvm];
    let n_clouds = rng.gen_range(3..=4);
    let clouds: Vec<CloudSite> = (0..n_clouds)
        .map(|i| {
            let family = if i == 0 || rng.gen_bool(0.6) {
                CloudFamily::NimbusLike
            } else {
                CloudFamily::OpenstackLike
            };
            let mut c = site(
                &format!("c{i}"),
                family,
                hvs[rng.gen_range(0..2)],
                8 * rng.gen_range(2..=8),
            );
            c.scratch_pool_gb = rng.gen_range(100..=1_000);
            c.scratch_safeguard = rng.gen_bool(0.7);
            c.boot_fixed_delay = rng.gen_range(30..=300);
            c.priority = rng.gen_range(0..3);
            if family == CloudFamily::NimbusLike && rng.gen_bool(0.5) {
                c.vm_lifetime = Some(rng.gen_range(scheduler.lifetime_margin + 1..=200_000));
            }
            c
        })
        .collect();
    let images = vec![
        image("both", &hvs),
        image("xen", &[Hypervisor::Xen]),
        image("kvm", &[Hypervisor::Kvm]),
    ];
    let renewals = [None, Some(21_600), Some(39_600), Some(50_000)];
    let users: Vec<UserEntry> = (0..4)
        .map(|i| user(&format!("u{i}"), *renewals.choose(&mut rng).unwrap()))
        .collect();
    let mut generators = Vec::new();
    for u in &users {
        for _ in 0..rng.gen_range(1..=2) {
            let cores = *[1, 2, 4, 8].choose(&mut rng).unwrap();
            let runtime = rng.gen_range(1_800..=72_000);
            let mut req = request(cores);
            req.blank_space_gb = rng.gen_range(0..=60);
            generators.push(Generator {
                owner: u.name.clone(),
                vm_type: images[rng.gen_range(0..3)].image_id.clone(),
                request: req,
                count: rng.gen_range(20..=120),
                start: rng.gen_range(0..=6 * 86_400),
                interarrival: rng.gen_range(30..=1_800),
                runtime_cpu: runtime,
                runtime_jitter: rng.gen_range(0..=runtime / 4),
                io_cost: rng.gen_range(0..=600),
                cloud_constraint: None,
            });
        }
    }
    let mut faults = Vec::new();
    for _ in 0..20 {
        let time = rng.gen_range(0..horizon);
        let cloud = &clouds[rng.gen_range(0..clouds.len())].name;
        let vm_id = format!("{cloud}-{}", rng.gen_range(1..=40));
        faults.push(match rng.gen_range(0..4) {
            0 => Fault::VMFail { time, vm_id },
            1 => Fault::VMStop { time, vm_id },
            2 => Fault::CloudMaintenance {
                time,
                cloud: cloud.clone(),
                on: rng.gen_bool(0.5),
                kill_instances: rng.gen_bool(0.3),
            },
            _ => Fault::CredentialRenewal {
                time,
                user: users[rng.gen_range(0..users.len())].name.clone(),
            },
        });
    }
    Scenario {
        horizon,
        seed,
        engine: EngineConfig::default(),
        scheduler,
        clouds,
        images,
        users,
        workload: Workload {
            jobs: Vec::new(),
            generators,
        },
        faults,
    }
}

const RANDOM_SEEDS: [u64; 3] = [11, 12, 13];

/// No instance outlives its proxy or its lease.
fn expiry_safety() -> Check {
    let mut events = 0;
    let mut instances = 0;
    for seed in RANDOM_SEEDS {
        let s = random_scenario(seed);
        let openstack: BTreeSet<&str> = s
            .clouds
            .iter()
            .filter(|c| c.family == CloudFamily::OpenstackLike)
            .map(|c| c.name.as_str())
            .collect();
        let mut engine = Engine::new(&s).map_err(|e| e.to_string())?;
        loop {
            let more = engine.step();
            let now = engine.now();
            for inst in engine.connectors().instances().values() {
                if inst.credential.kind == CredentialKind::PerUserProxy {
                    let expiry = inst.credential.expiry();
                    ensure(now < expiry, || {
                        format!(
                            "seed {seed}: {} alive at t={now}, proxy expired {expiry}",
                            inst.vm_id
                        )
                    })?;
                }
                if let Some(end) = inst.lifetime_end() {
                    ensure(now < end, || {
                        format!(
                            "seed {seed}: {} alive at t={now}, lease ended {end}",
                            inst.vm_id
                        )
                    })?;
                }
            }
            if !more {
                break;
            }
        }
        ensure(engine.events_processed() >= 10_000, || {
            format!("seed {seed}: only {} events", engine.events_processed())
        })?;
        events += engine.events_processed();
        instances += engine.connectors().terminated().len() + engine.connectors().instances().len();
        let log = engine.log().to_text();
        for (_, kind, f) in log.lines().map(parse_line) {
            if kind == "Kill" && matches!(f["reason"], "proxy-expiry" | "lifetime-end") {
                let vm: VmId = f["vm"].parse().unwrap();
                ensure(!openstack.contains(vm.cloud.as_str()), || {
                    format!("seed {seed}: openstack instance {vm} expiry-killed")
                })?;
            }
        }
    }
    Ok(format!(
        "0 violations over {events} events and {instances} instances ({} seeds)",
        RANDOM_SEEDS.len()
    ))
}

/// Every JobStart lands on an instance the log last showed as Running.
fn drain_semantics() -> Check {
    let mut starts = 0;
    for seed in RANDOM_SEEDS {
        let out = cloudsched::run(&random_scenario(seed)).map_err(|e| e.to_string())?;
        let text = out.log.to_text();
        let mut state: BTreeMap<&str, &str> = BTreeMap::new();
        for (t, kind, f) in text.lines().map(parse_line) {
            match kind {
                "VmState" => {
                    state.insert(f["vm"], f["to"]);
                }
                "JobStart" => {
                    let vm = f["vm"];
                    let st = state.get(vm).copied().unwrap_or("unknown");
                    ensure(st == "Running", || {
                        format!(
                            "seed {seed}: job {} started on {vm} ({st}) at t={t}",
                            f["job"]
                        )
                    })?;
                    starts += 1;
                }
                _ => {}
            }
        }
    }
    Ok(format!("{starts} assignments, all onto Running instances"))
}

/// 16 jobs of 10 h CPU in two whole-node instances.
fn efficiency_calibration() -> Check {
    let mut img = image("sim", &[Hypervisor::Kvm]);
    img.cold_stagein = 800;
    let mut job = jobs("a", "sim", 16, 0, 36_000);
    job.io_cost = 2_610;
    let s = scenario(
        200_000,
        vec![site(
            "west",
            CloudFamily::OpenstackLike,
            Hypervisor::Kvm,
            16,
        )],
        vec![img],
        vec![user("a", None)],
        vec![job],
    );
    let out = cloudsched::run(&s).map_err(|e| e.to_string())?;
    let log = out.log.to_text();
    let vms = count_kind(&log, "VmCreated");
    ensure(vms == 2, || format!("{vms} instances booted"))?;
    let summary = &out.report.summary;
    ensure(summary.completed == 16, || {
        format!("{} completed", summary.completed)
    })?;
    // One cold stage-in per instance, the other seven jobs start warm.
    let cpu = 16.0 * 36_000.0;
    let analytic = cpu / (cpu + 16.0 * 2_610.0 + 2.0 * 800.0);
    let got = summary.aggregate_efficiency;
    ensure((got - analytic).abs() < 1e-12, || {
        format!("efficiency {got} vs analytic {analytic}")
    })?;
    ensure((got - 0.930).abs() <= 0.005, || {
        format!("efficiency {got} outside 0.930 ± 0.005")
    })?;
    Ok(format!(
        "aggregate efficiency {got:.5} (analytic {analytic:.5})"
    ))
}

fn image_timing() -> Check {
    let mut repo = ImageRepo::new();
    let t = 1_000;
    let big = repo
        .save_image(
            uid("ops"),
            "big",
            9.0,
            image("big", &[Hypervisor::Xen]).variants,
            t,
        )
        .map_err(|e| e.to_string())?;
    let small = repo
        .save_image(
            uid("ops"),
            "small",
            3.8,
            image("small", &[Hypervisor::Kvm]).variants,
            t,
        )
        .map_err(|e| e.to_string())?;
    ensure(big == t + 540 && small == t + 240, || {
        format!("ready at {big} and {small}")
    })?;
    ensure(
        repo.lookup("big", t + 539).is_none() && repo.lookup("big", t + 540).is_some(),
        || "9 GB image visible at the wrong time".into(),
    )?;
    ensure(
        repo.lookup("small", t + 239).is_none() && repo.lookup("small", t + 240).is_some(),
        || "3.8 GB image visible at the wrong time".into(),
    )?;
    Ok("9 GB visible at t+540, 3.8 GB at t+240".into())
}

fn overallocation(safeguard: bool) -> Result<(usize, usize, usize), String> {
    let mut cloud = site("east", CloudFamily::NimbusLike, Hypervisor::Xen, 16);
    cloud.scratch_pool_gb = 100;
    cloud.scratch_safeguard = safeguard;
    let mut job = jobs("a", "sim", 16, 0, 72_000);
    job.request.blank_space_gb = 100;
    let mut s = scenario(
        86_400,
        vec![cloud],
        vec![image("sim", &[Hypervisor::Xen])],
        vec![user("a", Some(21_600))],
        vec![job],
    );
    s.seed = 42;
    let out = cloudsched::run(&s).map_err(|e| e.to_string())?;
    let log = out.log.to_text();
    Ok((
        count_kind(&log, "VmCreated"),
        count_kind(&log, "ScratchOvercommit"),
        count_kind(&log, "IOFault"),
    ))
}

fn overallocation_hazard() -> Check {
    let (vms, flagged, faults) = overallocation(false)?;
    ensure(vms == 2 && flagged >= 1 && faults >= 1, || {
        format!("safeguard off: {vms} instances, {flagged} over-commit flags, {faults} I/O faults")
    })?;
    let (vms_on, flagged_on, faults_on) = overallocation(true)?;
    ensure(vms_on == 1 && flagged_on == 0 && faults_on == 0, || {
        format!("safeguard on: {vms_on} instances, {flagged_on} flags, {faults_on} I/O faults")
    })?;

    // The connector itself refuses the second instance.
    let mut cloud = site("east", CloudFamily::NimbusLike, Hypervisor::Xen, 16);
    cloud.scratch_pool_gb = 100;
    let mut clouds = Connectors::new([cloud]).map_err(|e| e.to_string())?;
    let mut repo = ImageRepo::new();
    let img = image("sim", &[Hypervisor::Xen]);
    repo.register(img.image(), 0).unwrap();
    let mut req = request(8);
    req.blank_space_gb = 100;
    let boot = BootRequest {
        owner: uid("a"),
        image: "sim".into(),
        request: req,
        target_cloud: "east".into(),
        whole_node: true,
    };
    let cred = Credential::proxy(uid("a"), 0);
    clouds
        .boot(&boot, &img.image(), &cred, &repo, 0)
        .map_err(|e| e.to_string())?;
    let second = clouds.boot(&boot, &img.image(), &cred, &repo, 0);
    ensure(
        matches!(second, Err(ConnectorError::ScratchExhausted(_))),
        || format!("second boot with safeguard on: {second:?}"),
    )?;
    Ok(format!(
        "off: over-commit flagged, {faults} I/O faults in 24 h; on: second boot rejected, 0 I/O faults"
    ))
}

fn five_day_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/five_day.scenario")
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cloudsched"))
        .args(args)
        .output()
        .expect("cli runs")
}

fn determinism(dir: &Path) -> Check {
    let scenario = five_day_scenario();
    let scenario = scenario.to_str().unwrap();
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.join(n)).collect();
    for (out, seed) in outs.iter().zip(["7", "7", "8"]) {
        let r = cli(&[
            "run",
            scenario,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure(r.status.success(), || {
            format!("run failed: {}", String::from_utf8_lossy(&r.stderr))
        })?;
    }
    let logs: Vec<Vec<u8>> = outs
        .iter()
        .map(|o| std::fs::read(o.join("events.log")).unwrap())
        .collect();
    ensure(logs[0] == logs[1], || {
        "same seed produced different logs".into()
    })?;
    ensure(logs[0] != logs[2], || {
        "seed change left the log unchanged".into()
    })?;
    let log = |i: usize| outs[i].join("events.log").to_str().unwrap().to_string();
    let same = cli(&["replay", &log(0), &log(1)]);
    ensure(same.status.code() == Some(0), || {
        format!("replay of equal logs: {:?}", same.status)
    })?;
    let differ = cli(&["replay", &log(0), &log(2)]);
    ensure(differ.status.code() == Some(1), || {
        format!("replay of different logs: {:?}", differ.status)
    })?;
    Ok(format!(
        "seed 7 twice: identical {} byte logs; seed 8 differs",
        logs[0].len()
    ))
}

fn five_day_series(dir: &Path) -> Check {
    let text = std::fs::read_to_string(five_day_scenario()).unwrap();
    let s = Scenario::from_toml(&text).map_err(|e| e.to_string())?;
    ensure(s.clouds.len() == 5 && s.horizon == 5 * 86_400, || {
        "not a 5-cloud 5-day scenario".into()
    })?;
    let csv = std::fs::read_to_string(dir.join("a/samples.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let cloud_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("cloud:"))
        .collect();
    let user_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("user:"))
        .collect();
    ensure(cloud_cols.len() == 5, || {
        format!("{} cloud columns", cloud_cols.len())
    })?;
    let mut rows = 0;
    let mut peak = 0;
    for line in lines {
        let v: Vec<u64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let by_cloud: u64 = cloud_cols.iter().map(|&i| v[i]).sum();
        let by_user: u64 = user_cols.iter().map(|&i| v[i]).sum();
        ensure(by_cloud == by_user, || {
            format!("t={}: clouds sum {by_cloud}, users sum {by_user}", v[0])
        })?;
        ensure(v[1] <= 8 * by_cloud, || {
            format!("t={}: {} running on {by_cloud} instances", v[0], v[1])
        })?;
        peak = peak.max(v[1]);
        rows += 1;
    }
    let expected = s.horizon / s.engine.sample_period + 1;
    ensure(rows == expected, || {
        format!("{rows} rows, expected {expected}")
    })?;
    ensure(peak > 0, || "nothing ran".into())?;
    Ok(format!(
        "{rows} samples, columns consistent, peak {peak} running jobs"
    ))
}

// --------------------------------------------------- exhaustive cycle oracle

/// Reference implementation of one scheduling cycle, written directly from
/// the rules without the production data structures.
mod oracle {
    use super::*;

    pub struct World<'a> {
        pub now: SimTime,
        pub jobs: &'a [(u64, JobSpec)],
        pub clouds: &'a [CloudSite],
        pub instances: &'a [VMInstance],
        pub images: &'a ImageRepo,
        pub creds: &'a BTreeMap<UserId, Credential>,
        pub config: &'a SchedulerConfig,
    }

    fn supplying(state: VmState) -> bool {
        matches!(
            state,
            VmState::Requested | VmState::Booting | VmState::Running
        )
    }

    impl World<'_> {
        fn used(&self, cloud: &str, boots: &[BootRequest]) -> (u64, u64, u64, u64, u64) {
            let (mut cores, mut mem, mut scratch, mut whole, mut single) = (0, 0, 0, 0, 0);
            let big = self.config.whole_node_cores as u64;
            for i in self.instances.iter().filter(|i| i.cloud == cloud) {
                cores += i.slots as u64;
                mem += i.memory_mb;
                scratch += i.blank_space_gb;
                if i.slots as u64 >= big {
                    whole += i.slots as u64
                } else {
                    single += i.slots as u64
                }
            }
            for b in boots.iter().filter(|b| b.target_cloud == cloud) {
                let site = self.site(cloud);
                cores += b.request.cores as u64;
                mem += b.request.memory_mb;
                scratch += scratch_for(site, b.request.blank_space_gb);
                if b.request.cores as u64 >= big {
                    whole += b.request.cores as u64
                } else {
                    single += b.request.cores as u64
                }
            }
            (cores, mem, scratch, whole, single)
        }

        fn site(&self, name: &str) -> &CloudSite {
            self.clouds.iter().find(|c| c.name == name).unwrap()
        }

        fn pools(&self, c: &CloudSite) -> (u64, u64) {
            let whole = (c.total_cores as f64 * self.config.whole_node_fraction).floor() as u64;
            (whole, c.total_cores as u64 - whole)
        }

        fn eligible(&self, job: &JobSpec, c: &CloudSite) -> bool {
            let Some(img) = self.images.lookup(&job.vm_type, self.now) else {
                return false;
            };
            let cred = &self.creds[&job.owner];
            c.status == CloudStatus::Active
                && job
                    .cloud_constraint
                    .as_ref()
                    .is_none_or(|s| s.contains(&c.name))
                && validate_request(&job.request, c, img, cred, self.now).is_ok()
                && (c.family == CloudFamily::OpenstackLike
                    || cred.expiry() > self.now + self.config.proxy_expiry_margin)
        }

        fn room(&self, job: &JobSpec, c: &CloudSite, used: (u64, u64, u64, u64, u64)) -> bool {
            let r = &job.request;
            let (cores, mem, scratch, whole, single) = used;
            let need = r.cores as u64;
            let is_whole = r.cores >= self.config.whole_node_cores;
            let (wp, sp) = self.pools(c);
            let pool_ok = match self.config.partition_policy {
                PartitionPolicy::Off => true,
                _ if is_whole => wp.saturating_sub(whole) >= need,
                _ => sp.saturating_sub(single) >= need,
            };
            c.total_cores as u64 >= cores + need
                && c.total_memory_mb >= mem + r.memory_mb
                && (!c.scratch_safeguard
                    || c.scratch_pool_gb.saturating_sub(scratch)
                        >= scratch_for(c, r.blank_space_gb))
                && pool_ok
        }

        fn boot(&self, job: &JobSpec, cloud: &str) -> BootRequest {
            BootRequest {
                owner: job.owner.clone(),
                image: job.vm_type.clone(),
                request: job.request.clone(),
                target_cloud: cloud.into(),
                whole_node: job.request.cores >= self.config.whole_node_cores,
            }
        }

        pub fn cycle(&self) -> (Vec<BootRequest>, Option<(VmId, BootRequest)>) {
            // Users in order of their oldest job.
            let mut users: Vec<&UserId> = Vec::new();
            for (_, j) in self.jobs {
                if !users.contains(&&j.owner) {
                    users.push(&j.owner);
                }
            }
            let mut boots: Vec<BootRequest> = Vec::new();
            let mut starved: Vec<&JobSpec> = Vec::new();
            for u in users {
                // Free slots of the user's instances, consumed in id order.
                let mut free: Vec<(&VMInstance, usize)> = self
                    .instances
                    .iter()
                    .filter(|i| &i.owner == u && supplying(i.state))
                    .map(|i| (i, i.slot_occupancy.iter().filter(|s| s.is_none()).count()))
                    .collect();
                free.sort_by(|a, b| a.0.vm_id.cmp(&b.0.vm_id));
                let mut unmet: Vec<&JobSpec> = Vec::new();
                for (_, j) in self.jobs.iter().filter(|(_, j)| &j.owner == u) {
                    let slot = free.iter_mut().find(|(i, n)| {
                        *n > 0
                            && i.image == j.vm_type
                            && j.cloud_constraint
                                .as_ref()
                                .is_none_or(|s| s.contains(&i.cloud))
                    });
                    match slot {
                        Some((_, n)) => *n -= 1,
                        None => unmet.push(j),
                    }
                }
                let mut tried: Vec<&str> = Vec::new();
                let mut blocked: Option<&JobSpec> = None;
                let mut done = false;
                for j in unmet {
                    if tried.contains(&j.vm_type.as_str()) {
                        continue;
                    }
                    tried.push(&j.vm_type);
                    let mut best: Option<(&CloudSite, u64)> = None;
                    for c in self.clouds {
                        let used = self.used(&c.name, &boots);
                        if !self.eligible(j, c) || !self.room(j, c, used) {
                            continue;
                        }
                        let free_cores = c.total_cores as u64 - used.0;
                        let better = match best {
                            None => true,
                            Some((b, bf)) => {
                                (c.priority, free_cores) > (b.priority, bf)
                                    || ((c.priority, free_cores) == (b.priority, bf)
                                        && c.name < b.name)
                            }
                        };
                        if better {
                            best = Some((c, free_cores));
                        }
                    }
                    if let Some((c, _)) = best {
                        boots.push(self.boot(j, &c.name));
                        done = true;
                        break;
                    }
                    let empty = (0, 0, 0, 0, 0);
                    if blocked.is_none()
                        && self
                            .clouds
                            .iter()
                            .any(|c| self.eligible(j, c) && self.room(j, c, empty))
                    {
                        blocked = Some(j);
                    }
                }
                if !done {
                    if let Some(j) = blocked {
                        starved.push(j);
                    }
                }
            }

            if !self.config.rebalance_enabled || starved.is_empty() {
                return (boots, None);
            }
            let held = |u: &UserId| {
                self.instances
                    .iter()
                    .filter(|i| &i.owner == u && supplying(i.state))
                    .count()
                    + boots.iter().filter(|b| &b.owner == u).count()
            };
            let mut needy = starved[0];
            for &j in &starved[1..] {
                if held(&j.owner) < held(&needy.owner) {
                    needy = j;
                }
            }
            let mut rich: Option<(&UserId, usize, (SimTime, &VmId))> = None;
            for i in self.instances.iter().filter(|i| supplying(i.state)) {
                let n = held(&i.owner);
                let oldest = self
                    .instances
                    .iter()
                    .filter(|o| o.owner == i.owner && supplying(o.state))
                    .map(|o| (o.booted_at, &o.vm_id))
                    .min()
                    .unwrap();
                let take = match rich {
                    None => true,
                    Some((_, rn, ro)) => n > rn || (n == rn && oldest < ro),
                };
                if take {
                    rich = Some((&i.owner, n, oldest));
                }
            }
            let Some((rich, n_rich, _)) = rich else {
                return (boots, None);
            };
            if *rich == needy.owner || n_rich < held(&needy.owner) + 2 {
                return (boots, None);
            }
            let victim = self
                .instances
                .iter()
                .filter(|i| &i.owner == rich && i.state == VmState::Running)
                .filter(|i| {
                    let c = self.site(&i.cloud);
                    let (cores, mem, ..) = self.used(&c.name, &boots);
                    self.eligible(needy, c)
                        && c.total_cores as u64 - cores + i.slots as u64
                            >= needy.request.cores as u64
                        && c.total_memory_mb - mem + i.memory_mb >= needy.request.memory_mb
                })
                .max_by(|a, b| (a.booted_at, &a.vm_id).cmp(&(b.booted_at, &b.vm_id)));
            let rb = victim.map(|v| (v.vm_id.clone(), self.boot(needy, &v.cloud)));
            (boots, rb)
        }
    }
}

fn cycle_oracle() -> Check {
    use Hypervisor::*;
    let mut repo = ImageRepo::new();
    repo.register(image("v1", &[Xen, Kvm]).image(), 0).unwrap();
    repo.register(image("v2", &[Xen]).image(), 0).unwrap();
    let req_for = |vm_type: &str| {
        if vm_type == "v1" {
            request(8)
        } else {
            request(4)
        }
    };

    let mut nimbus16 = site("n16", CloudFamily::NimbusLike, Xen, 16);
    nimbus16.priority = 0;
    let mut os8 = site("os8", CloudFamily::OpenstackLike, Kvm, 8);
    os8.priority = 1;
    let setups: Vec<Vec<CloudSite>> = vec![
        vec![nimbus16.clone()],
        vec![nimbus16, os8],
        vec![
            site("nx", CloudFamily::NimbusLike, Xen, 8),
            site("nk", CloudFamily::NimbusLike, Kvm, 8),
        ],
    ];
    // (owner, image, booted_at, occupied slots, running?)
    let existing: Vec<Vec<(&str, &str, SimTime, usize, bool)>> = vec![
        vec![],
        vec![("a", "v1", 0, 6, true)],
        vec![
            ("a", "v1", 0, 8, true),
            ("a", "v2", 30, 4, true),
            ("a", "v1", 40, 8, true),
        ],
        vec![("b", "v2", 20, 0, false)],
    ];
    let kinds = [("a", "v1"), ("a", "v2"), ("b", "v1"), ("b", "v2")];
    let mut queues: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..6 {
        let mut next = Vec::new();
        for q in &frontier {
            for k in 0..kinds.len() {
                let mut q2: Vec<usize> = q.clone();
                q2.push(k);
                next.push(q2);
            }
        }
        queues.extend(next.iter().cloned());
        frontier = next;
    }

    let now = 100;
    let mut cases = 0;
    let mut with_boots = 0;
    let mut with_rebalance = 0;
    for clouds in &setups {
        for inst_spec in &existing {
            for short_proxy in [false, true] {
                for policy in [
                    PartitionPolicy::Off,
                    PartitionPolicy::SeparateSingleCoreAndWholeNode,
                ] {
                    let config = SchedulerConfig {
                        partition_policy: policy,
                        ..SchedulerConfig::default()
                    };
                    let mut creds: BTreeMap<UserId, Credential> = BTreeMap::new();
                    creds.insert(uid("a"), Credential::proxy(uid("a"), 0));
                    let mut b = Credential::proxy(uid("b"), 0);
                    if short_proxy {
                        b.lifetime = now + config.proxy_expiry_margin;
                    }
                    creds.insert(uid("b"), b);

                    let mut conn = Connectors::new(clouds.clone()).unwrap();
                    for &(owner, img, at, occupied, running) in inst_spec {
                        let image = repo.lookup(img, 0).unwrap().clone();
                        let cred = Credential::proxy(uid(owner), 0);
                        let booted = clouds.iter().find_map(|c| {
                            let req = BootRequest {
                                owner: uid(owner),
                                image: img.into(),
                                request: req_for(img),
                                target_cloud: c.name.clone(),
                                whole_node: img == "v1",
                            };
                            conn.boot(&req, &image, &cred, &repo, at).ok()
                        });
                        let Some(receipt) = booted else { continue };
                        if running {
                            conn.mark_running(&receipt.vm_id).unwrap();
                        }
                        let inst = conn.instances_mut().get_mut(&receipt.vm_id).unwrap();
                        for s in inst.slot_occupancy.iter_mut().take(occupied) {
                            *s = Some(9_999);
                        }
                    }
                    let instances: Vec<VMInstance> = conn.instances().values().cloned().collect();

                    for q in &queues {
                        let mut mm = Matchmaker::new();
                        let mut specs = Vec::new();
                        for &k in q {
                            let (owner, img) = kinds[k];
                            let spec = JobSpec {
                                owner: uid(owner),
                                vm_type: img.into(),
                                request: req_for(img),
                                submit_time: 0,
                                runtime_cpu: 3_600,
                                io_cost: 0,
                                depends_on: BTreeSet::new(),
                                cloud_constraint: None,
                            };
                            let id = mm.submit(spec.clone(), &repo, 0).unwrap();
                            specs.push((id, spec));
                        }
                        let view = SchedulerView {
                            now,
                            queue: mm.queue(),
                            clouds: conn.clouds(),
                            instances: conn.instances(),
                            images: &repo,
                            credentials: &creds,
                            deferred: &[],
                        };
                        let got = scheduling_cycle(&view, &config);
                        let got = (got.boots, got.rebalance.map(|r| (r.retire, r.deferred)));
                        let want = oracle::World {
                            now,
                            jobs: &specs,
                            clouds,
                            instances: &instances,
                            images: &repo,
                            creds: &creds,
                            config: &config,
                        }
                        .cycle();
                        ensure(got == want, || {
                            format!(
                                "clouds {:?}, instances {inst_spec:?}, short proxy {short_proxy}, {policy:?}, queue {:?}:\n got {got:?}\nwant {want:?}",
                                clouds.iter().map(|c| &c.name).collect::<Vec<_>>(),
                                q.iter().map(|&k| kinds[k]).collect::<Vec<_>>()
                            )
                        })?;
                        cases += 1;
                        with_boots += usize::from(!got.0.is_empty());
                        with_rebalance += usize::from(got.1.is_some());
                    }
                }
            }
        }
    }
    Ok(format!(
        "{cases} cases agree ({with_boots} with boots, {with_rebalance} with a rebalance)"
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("fairness", Box::new(fairness)),
        ("rebalance convergence", Box::new(rebalance_convergence)),
        ("lifetime/expiry safety", Box::new(expiry_safety)),
        ("drain semantics", Box::new(drain_semantics)),
        ("efficiency calibration", Box::new(efficiency_calibration)),
        ("image-repo timing", Box::new(image_timing)),
        ("over-allocation hazard", Box::new(overallocation_hazard)),
        ("determinism", Box::new(|| determinism(dir.path()))),
        ("five-day series", Box::new(|| five_day_series(dir.path()))),
        ("oracle equivalence", Box::new(cycle_oracle)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}
